//! The iterative imputation core: constraint projection, weight schedules,
//! train-test tuning, k-folds convergence, stream blending, and the final
//! per-simulation imputation with confidence intervals.
//!
//! All three algorithms share one loop shape: restore known values, refit a
//! weighted learner on the full working set, predict everything, clamp to
//! per-row bounds, and project each occupational group back onto the
//! sum-to-one simplex. Tuning loops stop when the RMSE improvement on mock
//! missing rows drops below a threshold; the final imputation replays a
//! fixed number of iterations per simulation.

mod impute;
mod kfolds;
mod tune;
mod working;

pub use impute::{impute, CiRow, ImputationRun, KnownFitStats};
pub use kfolds::{kfolds_converge, KfoldsOutcome};
pub use tune::{train_test_tune, GridPointReport, TuneOutcome};

use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;
use thiserror::Error;

use crate::features::{soc_prefixes, FeatureEncoder, MappingError, MappingTable};
use crate::ingest::{self, IngestError, SurveyRecord};
use crate::metrics;
use crate::regressor::{self, FeatureFrame, Hyperparams, RegressorError, WeightedDataset};

const Z_975: f64 = 1.959963984540054;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Regressor(#[from] RegressorError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("hyperparameters {params} did not converge within {max_iters} iterations")]
    NonConvergence { params: String, max_iters: usize },
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("corpus has no known values to tune on")]
    NoKnownData,
    #[error("fold count {0} must be at least 2")]
    BadFoldCount(usize),
    #[error("simulation set covers {got} records but the corpus has {want}")]
    SimulationMismatch { got: usize, want: usize },
    #[error("simulation count must be at least 1")]
    NoSimulations,
    #[error("SOC level must be 2 or 3, got {0}")]
    BadSocLevel(u8),
}

/// Linear weight ramp: `min(cap, start + step * iteration)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSchedule {
    pub start: f64,
    pub step: f64,
    pub cap: f64,
}

impl WeightSchedule {
    pub fn constant(w: f64) -> Self {
        WeightSchedule { start: w, step: 0.0, cap: w }
    }

    /// Mock-missing naive guesses during train-test tuning.
    pub fn naive_train_test() -> Self {
        WeightSchedule { start: 0.25, step: 0.05, cap: 0.75 }
    }

    /// Naive guesses during k-folds and final imputation stay inert.
    pub fn naive_kfolds() -> Self {
        WeightSchedule::constant(0.0)
    }

    /// Donor-derived guesses during k-folds and final imputation.
    pub fn smart() -> Self {
        WeightSchedule { start: 0.5, step: 0.05, cap: 0.75 }
    }
}

/// Weight applied at a given iteration of a schedule.
pub fn schedule_weight(schedule: &WeightSchedule, iteration: usize) -> f64 {
    (schedule.start + schedule.step * iteration as f64).min(schedule.cap)
}

/// The schedules in force for the three guess classes. Known values always
/// carry weight 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedules {
    pub naive_train_test: WeightSchedule,
    pub naive_kfolds: WeightSchedule,
    pub smart: WeightSchedule,
}

impl Default for Schedules {
    fn default() -> Self {
        Schedules {
            naive_train_test: WeightSchedule::naive_train_test(),
            naive_kfolds: WeightSchedule::naive_kfolds(),
            smart: WeightSchedule::smart(),
        }
    }
}

/// How a confidence interval is derived from the simulation distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CiMethod {
    /// mean +/- z_0.975 * sd of the simulated predictions.
    #[default]
    Normal,
    /// mean +/- t_{0.975, n-1} * sd.
    #[serde(rename = "t")]
    StudentT,
    /// Empirical 2.5% / 97.5% quantiles (linear interpolation).
    Percentile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Stop when the mock-missing RMSE improves by less than this.
    pub convergence_threshold: f64,
    pub max_iters: usize,
    /// Half-width multiplier for known-row prediction bounds (value +/- m * sigma_e).
    pub known_sigma_mult: f64,
    /// Whether missing-row bounds are recomputed from each simulation's
    /// shocked known sums (they derive from known mass either way).
    pub recompute_bounds_per_sim: bool,
    pub schedules: Schedules,
    pub ci: CiMethod,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            convergence_threshold: 0.001,
            max_iters: 50,
            known_sigma_mult: 1.0,
            recompute_bounds_per_sim: true,
            schedules: Schedules::default(),
            ci: CiMethod::Normal,
        }
    }
}

/// Pluggable fit/predict backend. The engine only ever fits a dataset and
/// predicts the same frame, so backends stay trivially swappable.
pub trait Learner {
    fn fit(
        &self,
        data: &WeightedDataset<'_>,
        params: &Hyperparams,
    ) -> Result<Box<dyn FittedModel>, EngineError>;
}

pub trait FittedModel {
    fn predict(&self, frame: &FeatureFrame) -> Result<Vec<f64>, EngineError>;
}

/// The built-in boosted-tree backend.
#[derive(Debug, Clone, Copy, Default)]
pub struct GbdtLearner;

impl Learner for GbdtLearner {
    fn fit(
        &self,
        data: &WeightedDataset<'_>,
        params: &Hyperparams,
    ) -> Result<Box<dyn FittedModel>, EngineError> {
        Ok(Box::new(regressor::fit(data, params)?))
    }
}

impl FittedModel for regressor::Model {
    fn predict(&self, frame: &FeatureFrame) -> Result<Vec<f64>, EngineError> {
        Ok(regressor::Model::predict(self, frame)?)
    }
}

/// One occupational group's slice of the record table.
#[derive(Debug, Clone)]
pub struct GroupSpan {
    pub occupation: String,
    pub additive_group: u32,
    pub soc2: String,
    pub soc3: String,
    pub start: usize,
    pub len: usize,
}

impl GroupSpan {
    pub fn rows(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// A completed corpus in canonical order with its encoded feature frame.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub records: Vec<SurveyRecord>,
    pub groups: Vec<GroupSpan>,
    /// Group index per record.
    pub group_of: Vec<usize>,
    pub frame: FeatureFrame,
    pub encoder: FeatureEncoder,
}

impl Corpus {
    pub fn build(records: &[SurveyRecord], table: &MappingTable) -> Result<Self, EngineError> {
        ingest::validate_records(records)?;
        let grouped = ingest::group_records(records, table)?;

        let mut flat = Vec::with_capacity(records.len());
        let mut groups = Vec::with_capacity(grouped.len());
        let mut group_of = Vec::with_capacity(records.len());
        for g in grouped {
            let known_sum: f64 = g.members.iter().filter_map(|m| m.value).sum();
            if known_sum > 1.0 + ingest::SUM_TOLERANCE {
                return Err(IngestError::SumOverflow {
                    occupation: g.key.occupation.clone(),
                    group: g.key.additive_group,
                    sum: known_sum,
                }
                .into());
            }
            let (soc2, soc3) = soc_prefixes(&g.members[0].soc_code)?;
            let span = GroupSpan {
                occupation: g.key.occupation.clone(),
                additive_group: g.key.additive_group,
                soc2: soc2.to_owned(),
                soc3: soc3.to_owned(),
                start: flat.len(),
                len: g.members.len(),
            };
            for m in g.members {
                group_of.push(groups.len());
                flat.push(m);
            }
            groups.push(span);
        }

        let encoder = FeatureEncoder::fit(&flat, table)?;
        let frame = encoder.frame(&flat, table)?;
        Ok(Corpus { records: flat, groups, group_of, frame, encoder })
    }

    pub fn n_records(&self) -> usize {
        self.records.len()
    }

    /// Rows with an observed (or filled) estimate, in canonical order.
    pub fn known_rows(&self) -> Vec<usize> {
        (0..self.records.len()).filter(|&r| self.records[r].value.is_some()).collect()
    }

    /// Rows whose estimate is structurally missing, in canonical order.
    pub fn missing_rows(&self) -> Vec<usize> {
        (0..self.records.len()).filter(|&r| self.records[r].value.is_none()).collect()
    }

    pub fn soc_prefix_of(&self, group: usize, soc_level: u8) -> &str {
        match soc_level {
            2 => &self.groups[group].soc2,
            _ => &self.groups[group].soc3,
        }
    }
}

/// Clamp raw predictions to [0, 1] and rescale them so the group's missing
/// mass is exactly absorbed: predictions scale by `residual / sum`, or
/// spread equally when they sum to zero.
pub fn project(residual: f64, predictions: &mut [f64]) {
    if predictions.is_empty() {
        return;
    }
    for p in predictions.iter_mut() {
        *p = p.clamp(0.0, 1.0);
    }
    let sum: f64 = predictions.iter().sum();
    if sum > 0.0 {
        let factor = residual / sum;
        for p in predictions.iter_mut() {
            *p *= factor;
        }
    } else if residual > 0.0 {
        let share = residual / predictions.len() as f64;
        for p in predictions.iter_mut() {
            *p = share;
        }
    }
}

/// Convex blend of two prediction streams at the RMSE-minimizing ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendOutcome {
    /// Weight on stream `a`; the blend is `ratio_a * a + (1 - ratio_a) * b`.
    pub ratio_a: f64,
    pub rmse_blended: f64,
    pub rmse_a: f64,
    pub rmse_b: f64,
}

/// Grid-search the blend ratio over {0.00, 0.01, ..., 1.00}. Ties prefer
/// the ratio closest to an even split.
pub fn blend(preds_a: &[f64], preds_b: &[f64], actuals: &[f64]) -> BlendOutcome {
    assert_eq!(preds_a.len(), preds_b.len());
    assert_eq!(preds_a.len(), actuals.len());
    let mut best_ratio = 0.0;
    let mut best_rmse = f64::INFINITY;
    let mut blended = vec![0.0; actuals.len()];
    for step in 0..=100u32 {
        let ratio = step as f64 / 100.0;
        for (i, b) in blended.iter_mut().enumerate() {
            *b = ratio * preds_a[i] + (1.0 - ratio) * preds_b[i];
        }
        let rmse = metrics::rmse(&blended, actuals);
        let better = rmse < best_rmse
            || (rmse == best_rmse && (ratio - 0.5).abs() < (best_ratio - 0.5f64).abs());
        if better {
            best_rmse = rmse;
            best_ratio = ratio;
        }
    }
    BlendOutcome {
        ratio_a: best_ratio,
        rmse_blended: best_rmse,
        rmse_a: metrics::rmse(preds_a, actuals),
        rmse_b: metrics::rmse(preds_b, actuals),
    }
}

/// Handoff from the k-folds stage to the final imputation: the blend ratio
/// and both streams' convergence iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlendSpec {
    pub ratio_a: f64,
    pub convergence_iter_a: usize,
    pub convergence_iter_b: usize,
}

/// Mean and 95% interval over a record's simulated predictions. `None`
/// bounds mark a degenerate distribution (identical predictions).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiEstimate {
    pub mean: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl CiEstimate {
    pub fn degenerate(&self) -> bool {
        self.lower.is_none()
    }
}

pub fn confidence_interval(samples: &[f64], method: CiMethod) -> CiEstimate {
    assert!(!samples.is_empty());
    let n = samples.len();
    // Identical predictions across simulations have no spread to build an
    // interval from; report the value with degenerate bounds.
    if n == 1 || samples.windows(2).all(|w| w[0] == w[1]) {
        return CiEstimate { mean: samples[0], lower: None, upper: None };
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let sd = (samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n as f64 - 1.0))
        .sqrt();
    if sd == 0.0 {
        return CiEstimate { mean, lower: None, upper: None };
    }
    let (lower, upper) = match method {
        CiMethod::Normal => (mean - Z_975 * sd, mean + Z_975 * sd),
        CiMethod::StudentT => {
            let t = statrs::distribution::StudentsT::new(0.0, 1.0, (n - 1) as f64)
                .expect("valid t distribution")
                .inverse_cdf(0.975);
            (mean - t * sd, mean + t * sd)
        }
        CiMethod::Percentile => {
            let mut sorted = samples.to_vec();
            sorted.sort_by(f64::total_cmp);
            (quantile(&sorted, 0.025), quantile(&sorted, 0.975))
        }
    };
    CiEstimate { mean, lower: Some(lower.clamp(0.0, 1.0)), upper: Some(upper.clamp(0.0, 1.0)) }
}

/// Linear-interpolation quantile of an ascending slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Where in the pipeline an iteration snapshot was taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    TrainTest,
    KFolds,
    Impute,
}

/// Post-projection snapshot of a working set, handed to observers after
/// every iteration (including the initial guess at iteration 0).
pub struct IterationSnapshot<'a> {
    pub algorithm: Algorithm,
    pub soc_level: Option<u8>,
    pub fold: Option<usize>,
    pub sim: Option<usize>,
    pub iteration: usize,
    pub corpus: &'a Corpus,
    /// Current dataset values for every record (knowns restored).
    pub values: &'a [f64],
}

/// Observer invoked after every projection. Used by the acceptance suite to
/// verify invariants and by the pipeline to dump per-iteration predictions.
pub trait IterationHook {
    fn after_projection(&mut self, snapshot: &IterationSnapshot<'_>);
}

/// The default do-nothing observer.
pub struct NoopHook;

impl IterationHook for NoopHook {
    fn after_projection(&mut self, _snapshot: &IterationSnapshot<'_>) {}
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn projection_scales_to_residual() {
        let mut preds = [0.2, 0.3];
        project(0.2, &mut preds);
        assert!((preds[0] - 0.08).abs() < 1e-12);
        assert!((preds[1] - 0.12).abs() < 1e-12);
    }

    #[test]
    fn projection_is_identity_when_already_consistent() {
        let mut preds = [0.15, 0.25];
        let before = preds;
        project(0.4, &mut preds);
        assert_eq!(preds[0].to_bits(), before[0].to_bits());
        assert_eq!(preds[1].to_bits(), before[1].to_bits());
    }

    #[test]
    fn projection_clamps_negatives_before_scaling() {
        let mut preds = [-0.05, 0.3];
        project(0.2, &mut preds);
        assert_eq!(preds[0], 0.0);
        assert!((preds[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn projection_spreads_residual_over_zero_predictions() {
        let mut preds = [0.0, 0.0, 0.0, 0.0];
        project(0.6, &mut preds);
        for p in preds {
            assert!((p - 0.15).abs() < 1e-12);
        }
    }

    #[test]
    fn schedule_examples() {
        assert!((schedule_weight(&WeightSchedule::naive_train_test(), 3) - 0.40).abs() < 1e-12);
        assert_eq!(schedule_weight(&WeightSchedule::smart(), 10), 0.75);
        assert_eq!(schedule_weight(&WeightSchedule::constant(1.0), 17), 1.0);
        assert_eq!(schedule_weight(&WeightSchedule::naive_kfolds(), 5), 0.0);
    }

    #[test]
    fn blend_prefers_a_perfect_stream() {
        let actuals = [0.2, 0.5, 0.8];
        let noisy = [0.3, 0.4, 0.9];
        let out = blend(&actuals, &noisy, &actuals);
        assert_eq!(out.ratio_a, 1.0);
        assert_eq!(out.rmse_blended, 0.0);
    }

    #[test]
    fn blend_ties_prefer_even_split() {
        // Symmetric streams: every ratio gives the same RMSE.
        let actuals = [0.5, 0.5];
        let a = [0.4, 0.6];
        let b = [0.6, 0.4];
        let out = blend(&a, &b, &actuals);
        assert_eq!(out.ratio_a, 0.5);
    }

    #[test]
    fn ci_normal_matches_hand_computation() {
        let samples = [0.35, 0.4, 0.45, 0.5];
        let est = confidence_interval(&samples, CiMethod::Normal);
        let mean = 0.425;
        let sd = (samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / 3.0).sqrt();
        assert!((est.mean - mean).abs() < 1e-12);
        assert!((est.lower.unwrap() - (mean - Z_975 * sd)).abs() < 1e-12);
        assert!((est.upper.unwrap() - (mean + Z_975 * sd)).abs() < 1e-12);
        // Symmetric when the bounds stay inside [0, 1].
        assert!(
            ((est.upper.unwrap() - est.mean) - (est.mean - est.lower.unwrap())).abs() < 1e-12
        );

        // Truncation pins a bound that would leave the unit interval.
        let wide = [0.02, 0.2, 0.38, 0.4];
        let est = confidence_interval(&wide, CiMethod::Normal);
        assert_eq!(est.lower.unwrap(), 0.0);
    }

    #[test]
    fn ci_student_t_is_wider_than_normal() {
        let samples = [0.40, 0.42, 0.44, 0.41, 0.43];
        let n = confidence_interval(&samples, CiMethod::Normal);
        let t = confidence_interval(&samples, CiMethod::StudentT);
        assert!(t.upper.unwrap() > n.upper.unwrap());
        assert!(t.lower.unwrap() < n.lower.unwrap());
    }

    #[test]
    fn ci_degenerate_cases() {
        let identical = [0.3; 10];
        let est = confidence_interval(&identical, CiMethod::Normal);
        assert_eq!(est.mean, 0.3);
        assert!(est.degenerate());

        let zeros = [0.0; 10];
        let est = confidence_interval(&zeros, CiMethod::Normal);
        assert_eq!(est.mean, 0.0);
        assert!(est.degenerate());

        let single = [0.42];
        let est = confidence_interval(&single, CiMethod::Percentile);
        assert_eq!(est.mean, 0.42);
        assert!(est.degenerate());
    }

    #[test]
    fn ci_percentile_uses_empirical_quantiles() {
        let samples: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let est = confidence_interval(&samples, CiMethod::Percentile);
        assert!((est.mean - 0.55).abs() < 1e-12);
        // R type-7 interpolation on 10 points.
        assert!((est.lower.unwrap() - 0.1225).abs() < 1e-12);
        assert!((est.upper.unwrap() - 0.9775).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn projection_lands_on_the_simplex(
            mut preds in proptest::collection::vec(-0.5f64..1.5, 1..8),
            residual in 0.0f64..1.0,
        ) {
            project(residual, &mut preds);
            let sum: f64 = preds.iter().sum();
            prop_assert!((sum - residual).abs() < 1e-9);
            for p in &preds {
                prop_assert!((0.0..=1.0).contains(p));
            }
        }

        #[test]
        fn blend_never_loses_to_either_endpoint(
            triples in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 2..20)
        ) {
            let (a, rest): (Vec<f64>, Vec<(f64, f64)>) =
                triples.into_iter().map(|(x, y, z)| (x, (y, z))).unzip();
            let (b, actuals): (Vec<f64>, Vec<f64>) = rest.into_iter().unzip();
            let out = blend(&a, &b, &actuals);
            prop_assert!(out.rmse_blended <= out.rmse_a);
            prop_assert!(out.rmse_blended <= out.rmse_b);
        }
    }
}
