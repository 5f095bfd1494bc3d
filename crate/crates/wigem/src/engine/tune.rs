//! Train-test hyperparameter tuning.
//!
//! Known rows split 80/10/10 into train, test, and validation. Test rows
//! are hidden and naive-guessed; each candidate parameterization iterates
//! fit/predict/project until the test RMSE improvement falls under the
//! threshold. The winner minimizes validation MAE at its convergence
//! iteration.

use crate::metrics;
use crate::regressor::Hyperparams;
use crate::seeding;

use super::working::{Mode, Role, WorkingSet};
use super::{Algorithm, Corpus, EngineConfig, EngineError, IterationHook, Learner};

/// Trace of one grid point's tuning run.
#[derive(Debug, Clone)]
pub struct GridPointReport {
    pub params: Hyperparams,
    /// Last iteration whose RMSE improvement met the threshold.
    pub convergence_iteration: usize,
    /// Test RMSE per iteration, starting at the initial guess.
    pub rmse_by_iter: Vec<f64>,
    /// MAE of (bound-clamped) predictions on the validation rows at the
    /// convergence iteration; infinite when the run converged at iteration 0.
    pub validation_mae: f64,
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub chosen: Hyperparams,
    pub chosen_index: usize,
    pub reports: Vec<GridPointReport>,
}

pub fn train_test_tune(
    corpus: &Corpus,
    learner: &dyn Learner,
    grid: &[Hyperparams],
    split_seed: u64,
    cfg: &EngineConfig,
    hook: &mut dyn IterationHook,
) -> Result<TuneOutcome, EngineError> {
    if grid.is_empty() {
        return Err(EngineError::EmptyGrid);
    }
    let known = corpus.known_rows();
    if known.is_empty() {
        return Err(EngineError::NoKnownData);
    }

    // Fixed split shared by every grid point.
    let mut shuffled = known;
    let mut rng = seeding::stream_rng(split_seed, &[b"train-test-split"]);
    rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
    let tenth = shuffled.len() / 10;
    let test: Vec<usize> = shuffled[..tenth].to_vec();
    let validation: Vec<usize> = shuffled[tenth..2 * tenth].to_vec();

    let mut reports = Vec::with_capacity(grid.len());
    for params in grid {
        reports.push(run_grid_point(corpus, learner, params, &test, &validation, cfg, hook)?);
    }

    let chosen_index = reports
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.validation_mae.total_cmp(&b.validation_mae))
        .map(|(i, _)| i)
        .unwrap();
    Ok(TuneOutcome { chosen: reports[chosen_index].params.clone(), chosen_index, reports })
}

fn run_grid_point(
    corpus: &Corpus,
    learner: &dyn Learner,
    params: &Hyperparams,
    test: &[usize],
    validation: &[usize],
    cfg: &EngineConfig,
    hook: &mut dyn IterationHook,
) -> Result<GridPointReport, EngineError> {
    let mut roles = vec![Role::Known; corpus.n_records()];
    for (r, record) in corpus.records.iter().enumerate() {
        if record.value.is_none() {
            roles[r] = Role::Missing;
        }
    }
    for &r in test {
        roles[r] = Role::Mock;
    }

    let mut ws = WorkingSet::new(corpus, roles, |r| corpus.records[r].value.unwrap(), cfg, false);
    ws.apply_initial_guesses(corpus, None);
    hook.after_projection(&ws.snapshot(corpus, Algorithm::TrainTest, None, None, None, 0));

    let mock_rmse = |ws: &WorkingSet| {
        let (preds, actuals): (Vec<f64>, Vec<f64>) =
            ws.mock_entries().map(|(_, p, a)| (p, a)).unzip();
        metrics::rmse(&preds, &actuals)
    };

    let mut rmse_by_iter = vec![mock_rmse(&ws)];
    // Known-row predictions of the last two iterations; index 0 ends up
    // holding the convergence iteration's.
    let mut recent_known_raw: Vec<Vec<f64>> = Vec::new();

    loop {
        let iteration = rmse_by_iter.len();
        if iteration > cfg.max_iters {
            return Err(EngineError::NonConvergence {
                params: format!("{params:?}"),
                max_iters: cfg.max_iters,
            });
        }
        let known_raw = ws.step(corpus, learner, params, iteration, Mode::TrainTest, cfg)?;
        hook.after_projection(&ws.snapshot(corpus, Algorithm::TrainTest, None, None, None, iteration));
        if recent_known_raw.len() == 2 {
            recent_known_raw.remove(0);
        }
        recent_known_raw.push(known_raw);

        let rmse = mock_rmse(&ws);
        let improvement = rmse_by_iter.last().unwrap() - rmse;
        rmse_by_iter.push(rmse);
        if improvement < cfg.convergence_threshold {
            break;
        }
    }

    // The loop always overshoots by one iteration, so convergence is the
    // previous one and its known-row predictions sit first in the window.
    let convergence_iteration = rmse_by_iter.len() - 2;
    let validation_mae = if convergence_iteration == 0 {
        // The model never beat the initial guess; no fit represents this
        // grid point.
        f64::INFINITY
    } else {
        // Raw predictions align to Known-role rows (test rows are mocked
        // out), not to every value-bearing row.
        let converged_raw = &recent_known_raw[0];
        let known_role_rows: Vec<usize> = ws
            .roles
            .iter()
            .enumerate()
            .filter(|(_, role)| **role == Role::Known)
            .map(|(r, _)| r)
            .collect();
        let preds: Vec<f64> = validation
            .iter()
            .map(|&r| converged_raw[known_role_rows.binary_search(&r).unwrap()])
            .collect();
        let actuals: Vec<f64> =
            validation.iter().map(|&r| corpus.records[r].value.unwrap()).collect();
        metrics::mae(&preds, &actuals)
    };

    Ok(GridPointReport {
        params: params.clone(),
        convergence_iteration,
        rmse_by_iter,
        validation_mae,
    })
}
