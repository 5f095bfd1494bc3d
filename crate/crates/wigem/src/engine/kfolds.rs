//! K-folds convergence tuning.
//!
//! Known rows split into k fixed folds; each fold's working set hides that
//! fold, smart-guesses every hidden and missing value, and iterates
//! independently. The pooled mock-row RMSE across folds drives the stopping
//! rule, and the iteration it last improved at becomes the convergence
//! iteration handed to the final imputation.

use crate::metrics;
use crate::regressor::Hyperparams;
use crate::seeding;

use super::working::{Mode, Role, WorkingSet};
use super::{Algorithm, Corpus, EngineConfig, EngineError, IterationHook, Learner};

/// Result of one SOC stream's k-folds run.
#[derive(Debug, Clone)]
pub struct KfoldsOutcome {
    pub soc_level: u8,
    /// Last iteration whose pooled RMSE improvement met the threshold.
    pub convergence_iteration: usize,
    /// Pooled mock RMSE per iteration, starting at the smart guess.
    pub rmse_by_iter: Vec<f64>,
    /// Known rows in canonical order (the pooling axis).
    pub rows: Vec<usize>,
    /// Actual values aligned to `rows`.
    pub actuals: Vec<f64>,
    /// Pooled mock predictions per iteration, aligned to `rows`; index 0 is
    /// the initial smart guess.
    pub pooled_by_iter: Vec<Vec<f64>>,
    /// Pooled initial smart guesses aligned to `rows`.
    pub iteration0: Vec<f64>,
    /// Pooled predictions at the convergence iteration aligned to `rows`.
    pub converged: Vec<f64>,
}

pub fn kfolds_converge(
    corpus: &Corpus,
    learner: &dyn Learner,
    params: &Hyperparams,
    soc_level: u8,
    k: usize,
    fold_seed: u64,
    cfg: &EngineConfig,
    hook: &mut dyn IterationHook,
) -> Result<KfoldsOutcome, EngineError> {
    if !(soc_level == 2 || soc_level == 3) {
        return Err(EngineError::BadSocLevel(soc_level));
    }
    if k < 2 {
        return Err(EngineError::BadFoldCount(k));
    }
    let rows = corpus.known_rows();
    if rows.len() < k {
        return Err(EngineError::NoKnownData);
    }

    // Fixed fold assignment, identical across SOC streams.
    let mut shuffled = rows.clone();
    let mut rng = seeding::stream_rng(fold_seed, &[b"kfolds-split"]);
    rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
    let mut fold_of_row = vec![0usize; corpus.n_records()];
    for f in 0..k {
        let lo = f * shuffled.len() / k;
        let hi = (f + 1) * shuffled.len() / k;
        for &r in &shuffled[lo..hi] {
            fold_of_row[r] = f;
        }
    }
    // Pool index per known row.
    let pool_index = {
        let mut idx = vec![usize::MAX; corpus.n_records()];
        for (i, &r) in rows.iter().enumerate() {
            idx[r] = i;
        }
        idx
    };
    let actuals: Vec<f64> = rows.iter().map(|&r| corpus.records[r].value.unwrap()).collect();

    // One persistent working set per fold.
    let mut sets = Vec::with_capacity(k);
    let mut pooled = vec![0.0f64; rows.len()];
    for fold in 0..k {
        let roles: Vec<Role> = (0..corpus.n_records())
            .map(|r| match corpus.records[r].value {
                None => Role::Missing,
                Some(_) if fold_of_row[r] == fold => Role::Mock,
                Some(_) => Role::Known,
            })
            .collect();
        let mut ws =
            WorkingSet::new(corpus, roles, |r| corpus.records[r].value.unwrap(), cfg, false);
        ws.apply_initial_guesses(corpus, Some(soc_level));
        hook.after_projection(&ws.snapshot(
            corpus,
            Algorithm::KFolds,
            Some(soc_level),
            Some(fold),
            None,
            0,
        ));
        for (r, p, _) in ws.mock_entries() {
            pooled[pool_index[r]] = p;
        }
        sets.push(ws);
    }
    let mut pooled_by_iter = vec![pooled.clone()];
    let mut rmse_by_iter = vec![metrics::rmse(&pooled, &actuals)];

    loop {
        let iteration = rmse_by_iter.len();
        if iteration > cfg.max_iters {
            return Err(EngineError::NonConvergence {
                params: format!("{params:?} (soc{soc_level} k-folds)"),
                max_iters: cfg.max_iters,
            });
        }
        for (fold, ws) in sets.iter_mut().enumerate() {
            ws.step(corpus, learner, params, iteration, Mode::KFolds, cfg)?;
            hook.after_projection(&ws.snapshot(
                corpus,
                Algorithm::KFolds,
                Some(soc_level),
                Some(fold),
                None,
                iteration,
            ));
            for (r, p, _) in ws.mock_entries() {
                pooled[pool_index[r]] = p;
            }
        }
        let rmse = metrics::rmse(&pooled, &actuals);
        let improvement = rmse_by_iter.last().unwrap() - rmse;
        pooled_by_iter.push(pooled.clone());
        rmse_by_iter.push(rmse);
        if improvement < cfg.convergence_threshold {
            break;
        }
    }

    // The loop overshoots by one iteration; convergence is the last one
    // whose improvement met the threshold.
    let convergence_iteration = rmse_by_iter.len() - 2;
    Ok(KfoldsOutcome {
        soc_level,
        convergence_iteration,
        rmse_by_iter,
        rows,
        actuals,
        iteration0: pooled_by_iter[0].clone(),
        converged: pooled_by_iter[convergence_iteration].clone(),
        pooled_by_iter,
    })
}
