//! Shared iteration machinery: one working set per (fold | simulation x
//! stream) context, carrying roles, live values, guess kinds, and bounds.

use std::collections::BTreeMap;

use crate::guess::{self, GuessKind};
use crate::regressor::{Hyperparams, WeightedDataset};

use super::{
    schedule_weight, Algorithm, Corpus, EngineConfig, EngineError, IterationSnapshot, Learner,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Role {
    /// Value fixed to its (possibly simulated) actual; weight 1.
    Known,
    /// Known value hidden for tuning; predicted and scored against `base`.
    Mock,
    /// Structurally missing; predicted, never scored.
    Missing,
}

/// Which schedule family applies to naive guesses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Mode {
    TrainTest,
    KFolds,
}

pub(crate) struct WorkingSet {
    pub roles: Vec<Role>,
    /// Actual values for Known and Mock rows (simulated under Alg 3); NaN
    /// for Missing rows.
    pub base: Vec<f64>,
    /// Live dataset values fed to each fit.
    pub current: Vec<f64>,
    /// Guess kind per non-Known row; drives the weight schedules.
    pub kinds: Vec<Option<GuessKind>>,
    /// Per-row prediction bounds.
    pub bounds: Vec<(f64, f64)>,
    /// Per-group residual mass available to adjustable rows.
    pub residuals: Vec<f64>,
}

impl WorkingSet {
    /// Build a working set. `base_of` supplies the actual value for each
    /// known record (identity for tuning, the simulated value under Alg 3).
    pub fn new(
        corpus: &Corpus,
        roles: Vec<Role>,
        mut base_of: impl FnMut(usize) -> f64,
        cfg: &EngineConfig,
        bounds_residual_from_original: bool,
    ) -> Self {
        let n = corpus.n_records();
        debug_assert_eq!(roles.len(), n);
        let mut base = vec![f64::NAN; n];
        let mut current = vec![0.0; n];
        for r in 0..n {
            if roles[r] != Role::Missing {
                base[r] = base_of(r);
            }
            if roles[r] == Role::Known {
                current[r] = base[r];
            }
        }

        // Residual mass per group, from the values fixed in this context.
        let mut residuals = vec![0.0; corpus.groups.len()];
        for (g, span) in corpus.groups.iter().enumerate() {
            let known_sum: f64 = span
                .rows()
                .filter(|&r| roles[r] == Role::Known)
                .map(|r| base[r])
                .sum();
            residuals[g] = (1.0 - known_sum).clamp(0.0, 1.0);
        }

        let mut bounds = vec![(0.0, 1.0); n];
        for (g, span) in corpus.groups.iter().enumerate() {
            let bound_residual = if bounds_residual_from_original {
                let known_sum: f64 = span
                    .rows()
                    .filter(|&r| roles[r] == Role::Known)
                    .filter_map(|r| corpus.records[r].value)
                    .sum();
                (1.0 - known_sum).clamp(0.0, 1.0)
            } else {
                residuals[g]
            };
            for r in span.rows() {
                bounds[r] = match roles[r] {
                    Role::Known => match corpus.records[r].std_error {
                        // No reported error means no information, not zero
                        // uncertainty.
                        None => (0.0, 1.0),
                        Some(se) => {
                            let half = cfg.known_sigma_mult * se;
                            ((base[r] - half).max(0.0), (base[r] + half).min(1.0))
                        }
                    },
                    Role::Mock | Role::Missing => (0.0, bound_residual),
                };
            }
        }

        WorkingSet { roles, base, current, kinds: vec![None; n], bounds, residuals }
    }

    /// Value view where only Known rows are visible.
    fn known_view(&self, rows: std::ops::Range<usize>) -> Vec<Option<f64>> {
        rows.map(|r| (self.roles[r] == Role::Known).then(|| self.base[r])).collect()
    }

    /// Iteration 0: fill every non-Known row with an initial guess. Naive
    /// when `soc_level` is `None`, otherwise the donor-based smart guess at
    /// the given SOC granularity.
    pub fn apply_initial_guesses(&mut self, corpus: &Corpus, soc_level: Option<u8>) {
        match soc_level {
            None => {
                for span in corpus.groups.iter() {
                    let view = self.known_view(span.rows());
                    for a in guess::naive_guess(&view) {
                        let row = span.start + a.slot;
                        self.current[row] = a.value;
                        self.kinds[row] = Some(a.kind);
                    }
                }
            }
            Some(level) => {
                // Donor pools keyed by (SOC prefix, additive group), built
                // from the same masked view the guesses see.
                let mut pools: BTreeMap<(&str, u32), Vec<Vec<Option<f64>>>> = BTreeMap::new();
                for (g, span) in corpus.groups.iter().enumerate() {
                    let prefix = corpus.soc_prefix_of(g, level);
                    pools
                        .entry((prefix, span.additive_group))
                        .or_default()
                        .push(self.known_view(span.rows()));
                }
                let bests: BTreeMap<(&str, u32), Option<Vec<Option<f64>>>> = pools
                    .iter()
                    .map(|(key, views)| {
                        let slices: Vec<&[Option<f64>]> =
                            views.iter().map(|v| v.as_slice()).collect();
                        (*key, guess::best_distribution(&slices).ok())
                    })
                    .collect();

                for (g, span) in corpus.groups.iter().enumerate() {
                    let prefix = corpus.soc_prefix_of(g, level);
                    let view = self.known_view(span.rows());
                    let assignments = match &bests[&(prefix, span.additive_group)] {
                        Some(best) => guess::smart_guess(&view, best),
                        None => guess::naive_guess(&view),
                    };
                    for a in assignments {
                        let row = span.start + a.slot;
                        self.current[row] = a.value;
                        self.kinds[row] = Some(a.kind);
                    }
                }
            }
        }
    }

    fn weight_of(&self, row: usize, fit_iteration: usize, mode: Mode, cfg: &EngineConfig) -> f64 {
        match self.roles[row] {
            Role::Known => 1.0,
            Role::Mock | Role::Missing => {
                let schedule = match (self.kinds[row].expect("guessed row has a kind"), mode) {
                    (GuessKind::Naive, Mode::TrainTest) => &cfg.schedules.naive_train_test,
                    (GuessKind::Naive, Mode::KFolds) => &cfg.schedules.naive_kfolds,
                    (GuessKind::Smart | GuessKind::KnownCopied, _) => &cfg.schedules.smart,
                };
                // The first fit (iteration 1) uses the schedule's start.
                schedule_weight(schedule, fit_iteration - 1)
            }
        }
    }

    /// One fit/predict/clamp/restore/project iteration. Returns the clamped
    /// raw predictions for Known rows (for validation MAE and model
    /// uncertainty).
    pub fn step(
        &mut self,
        corpus: &Corpus,
        learner: &dyn Learner,
        params: &Hyperparams,
        fit_iteration: usize,
        mode: Mode,
        cfg: &EngineConfig,
    ) -> Result<Vec<f64>, EngineError> {
        let n = corpus.n_records();
        let weights: Vec<f64> =
            (0..n).map(|r| self.weight_of(r, fit_iteration, mode, cfg)).collect();

        let dataset = WeightedDataset {
            frame: &corpus.frame,
            targets: &self.current,
            weights: &weights,
            bounds: &self.bounds,
        };
        let model = learner.fit(&dataset, params)?;
        let mut raw = model.predict(&corpus.frame)?;
        for (r, v) in raw.iter_mut().enumerate() {
            *v = v.clamp(self.bounds[r].0, self.bounds[r].1);
        }

        let mut known_raw = Vec::new();
        for r in 0..n {
            match self.roles[r] {
                Role::Known => known_raw.push(raw[r]),
                Role::Mock | Role::Missing => self.current[r] = raw[r],
            }
        }
        self.project_groups(corpus);
        Ok(known_raw)
    }

    /// Project every group's adjustable rows onto the residual mass.
    pub fn project_groups(&mut self, corpus: &Corpus) {
        let mut scratch = Vec::new();
        for (g, span) in corpus.groups.iter().enumerate() {
            scratch.clear();
            let adjustable: Vec<usize> =
                span.rows().filter(|&r| self.roles[r] != Role::Known).collect();
            if adjustable.is_empty() {
                continue;
            }
            scratch.extend(adjustable.iter().map(|&r| self.current[r]));
            super::project(self.residuals[g], &mut scratch);
            for (&r, &v) in adjustable.iter().zip(&scratch) {
                self.current[r] = v;
            }
        }
    }

    /// Mock-row (row, prediction, actual) triples in canonical order.
    pub fn mock_entries(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, role)| **role == Role::Mock)
            .map(|(r, _)| (r, self.current[r], self.base[r]))
    }

    pub fn snapshot<'a>(
        &'a self,
        corpus: &'a Corpus,
        algorithm: Algorithm,
        soc_level: Option<u8>,
        fold: Option<usize>,
        sim: Option<usize>,
        iteration: usize,
    ) -> IterationSnapshot<'a> {
        IterationSnapshot {
            algorithm,
            soc_level,
            fold,
            sim,
            iteration,
            corpus,
            values: &self.current,
        }
    }
}
