//! Final imputation across simulations.
//!
//! Each simulation replaces known values with their shocked counterparts,
//! smart-guesses the missing rows, and replays a fixed number of iterations
//! per SOC stream (the convergence iterations found by k-folds). The two
//! streams blend at the tuned ratio into one prediction per simulation, and
//! the per-record simulation distribution yields the mean and confidence
//! interval. Known-row predictions are kept per simulation to measure model
//! uncertainty.

use crate::regressor::Hyperparams;
use crate::simulate::SimulationSet;

use super::working::{Mode, Role, WorkingSet};
use super::{
    confidence_interval, Algorithm, BlendSpec, CiEstimate, Corpus, EngineConfig, EngineError,
    IterationHook, Learner,
};

/// Confidence row for one missing record.
#[derive(Debug, Clone, PartialEq)]
pub struct CiRow {
    /// Corpus record index.
    pub row: usize,
    pub estimate: CiEstimate,
    pub n_sims: usize,
}

/// Model-uncertainty measurements on known rows for one simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnownFitStats {
    pub sim: usize,
    pub mae: f64,
    pub me: f64,
}

#[derive(Debug, Clone)]
pub struct ImputationRun {
    /// Missing records in canonical order (the matrix row axis).
    pub missing_rows: Vec<usize>,
    /// Blended final prediction per missing record and simulation.
    pub matrix: Vec<Vec<f64>>,
    /// Blended iteration-0 smart guesses, same shape as `matrix`.
    pub initial_matrix: Vec<Vec<f64>>,
    pub cis: Vec<CiRow>,
    pub known_stats: Vec<KnownFitStats>,
    /// (MAE, ME) averaged over simulations.
    pub model_uncertainty: (f64, f64),
    pub blend: BlendSpec,
    pub n_sims: usize,
}

pub fn impute(
    corpus: &Corpus,
    sims: &SimulationSet,
    learner: &dyn Learner,
    params: &Hyperparams,
    blend: &BlendSpec,
    cfg: &EngineConfig,
    hook: &mut dyn IterationHook,
) -> Result<ImputationRun, EngineError> {
    if sims.n_records() != corpus.n_records() {
        return Err(EngineError::SimulationMismatch {
            got: sims.n_records(),
            want: corpus.n_records(),
        });
    }
    let n_sims = sims.n_sims;
    if n_sims == 0 {
        return Err(EngineError::NoSimulations);
    }

    let missing_rows = corpus.missing_rows();
    let known_rows = corpus.known_rows();
    let n_missing = missing_rows.len();
    let mut matrix = vec![vec![0.0; n_sims]; n_missing];
    let mut initial_matrix = vec![vec![0.0; n_sims]; n_missing];
    let mut known_stats = Vec::with_capacity(n_sims);

    for sim in 0..n_sims {
        let ratio = blend.ratio_a;
        let mut stream_final: Vec<Vec<f64>> = Vec::with_capacity(2);
        let mut stream_initial: Vec<Vec<f64>> = Vec::with_capacity(2);
        let mut stream_known: Vec<Option<Vec<f64>>> = Vec::with_capacity(2);

        for (soc_level, rounds) in
            [(2u8, blend.convergence_iter_a), (3u8, blend.convergence_iter_b)]
        {
            let roles: Vec<Role> = corpus
                .records
                .iter()
                .map(|r| if r.value.is_some() { Role::Known } else { Role::Missing })
                .collect();
            let mut ws = WorkingSet::new(
                corpus,
                roles,
                |r| sims.value(r, sim).expect("known record has a simulated value"),
                cfg,
                !cfg.recompute_bounds_per_sim,
            );
            ws.apply_initial_guesses(corpus, Some(soc_level));
            hook.after_projection(&ws.snapshot(
                corpus,
                Algorithm::Impute,
                Some(soc_level),
                None,
                Some(sim),
                0,
            ));
            stream_initial.push(missing_rows.iter().map(|&r| ws.current[r]).collect());

            let mut known_raw: Option<Vec<f64>> = None;
            for iteration in 1..=rounds {
                known_raw =
                    Some(ws.step(corpus, learner, params, iteration, Mode::KFolds, cfg)?);
                hook.after_projection(&ws.snapshot(
                    corpus,
                    Algorithm::Impute,
                    Some(soc_level),
                    None,
                    Some(sim),
                    iteration,
                ));
            }
            stream_final.push(missing_rows.iter().map(|&r| ws.current[r]).collect());
            stream_known.push(known_raw);
        }

        for (i, row) in matrix.iter_mut().enumerate() {
            row[sim] = ratio * stream_final[0][i] + (1.0 - ratio) * stream_final[1][i];
        }
        for (i, row) in initial_matrix.iter_mut().enumerate() {
            row[sim] = ratio * stream_initial[0][i] + (1.0 - ratio) * stream_initial[1][i];
        }

        // Blend known-row predictions for the uncertainty measurement. With
        // zero-round streams the model never predicted; the reset values
        // stand in (zero error).
        let (mut mae, mut me) = (0.0, 0.0);
        if !known_rows.is_empty() {
            for (i, &r) in known_rows.iter().enumerate() {
                let actual = sims.value(r, sim).unwrap();
                let a = stream_known[0].as_ref().map_or(actual, |v| v[i]);
                let b = stream_known[1].as_ref().map_or(actual, |v| v[i]);
                let pred = ratio * a + (1.0 - ratio) * b;
                mae += (actual - pred).abs();
                me += actual - pred;
            }
            mae /= known_rows.len() as f64;
            me /= known_rows.len() as f64;
        }
        known_stats.push(KnownFitStats { sim, mae, me });
    }

    let cis: Vec<CiRow> = missing_rows
        .iter()
        .enumerate()
        .map(|(i, &row)| CiRow {
            row,
            estimate: confidence_interval(&matrix[i], cfg.ci),
            n_sims,
        })
        .collect();

    let model_uncertainty = model_uncertainty(&known_stats);

    Ok(ImputationRun {
        missing_rows,
        matrix,
        initial_matrix,
        cis,
        known_stats,
        model_uncertainty,
        blend: *blend,
        n_sims,
    })
}

/// Average the per-simulation known-row errors into one (MAE, ME) pair.
pub fn model_uncertainty(stats: &[KnownFitStats]) -> (f64, f64) {
    if stats.is_empty() {
        return (0.0, 0.0);
    }
    let n = stats.len() as f64;
    (
        stats.iter().map(|s| s.mae).sum::<f64>() / n,
        stats.iter().map(|s| s.me).sum::<f64>() / n,
    )
}
