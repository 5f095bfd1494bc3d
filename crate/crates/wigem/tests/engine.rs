//! Engine integration tests on a small synthetic corpus: grid selection,
//! non-convergence handling, imputation shapes, and the pluggable backend.

use wigem::engine::{
    self, BlendSpec, Corpus, EngineConfig, FittedModel, GbdtLearner, Learner, NoopHook,
};
use wigem::features::MappingTable;
use wigem::ingest;
use wigem::regressor::{FeatureFrame, Hyperparams, WeightedDataset};
use wigem::synth::{self, SynthSpec};

fn small_corpus() -> (Corpus, MappingTable, Vec<ingest::SurveyRecord>) {
    let spec = SynthSpec {
        occupations: 12,
        requirements: 4,
        missing_rate: 0.35,
        ..SynthSpec::default()
    };
    let out = synth::generate(&spec);
    let table = MappingTable::from_entries(out.mapping).unwrap();
    let completed = ingest::complete_corpus(&out.known_records, &table).unwrap();
    let corpus = Corpus::build(&completed, &table).unwrap();
    (corpus, table, completed)
}

fn quick_params() -> Hyperparams {
    Hyperparams::new(15, 4, 0.4)
}

#[test]
fn tune_returns_the_single_grid_point() {
    let (corpus, _, _) = small_corpus();
    let grid = vec![quick_params()];
    let outcome = engine::train_test_tune(
        &corpus,
        &GbdtLearner,
        &grid,
        11,
        &EngineConfig::default(),
        &mut NoopHook,
    )
    .unwrap();
    assert_eq!(outcome.chosen, grid[0]);
    assert_eq!(outcome.reports.len(), 1);
    assert!(outcome.reports[0].rmse_by_iter.len() >= 2);
}

#[test]
fn tune_prefers_the_non_degenerate_grid_point() {
    let (corpus, _, _) = small_corpus();
    let degenerate = Hyperparams::new(1, 1, 1.0);
    let grid = vec![degenerate, quick_params()];
    let outcome = engine::train_test_tune(
        &corpus,
        &GbdtLearner,
        &grid,
        11,
        &EngineConfig::default(),
        &mut NoopHook,
    )
    .unwrap();
    assert_eq!(outcome.chosen_index, 1);
    let (d, g) = (&outcome.reports[0], &outcome.reports[1]);
    assert!(g.validation_mae < d.validation_mae, "{} vs {}", g.validation_mae, d.validation_mae);
}

#[test]
fn tune_errors_when_a_grid_point_never_converges() {
    let (corpus, _, _) = small_corpus();
    // A threshold no improvement can dip under forces the iteration cap.
    let cfg = EngineConfig {
        convergence_threshold: -10.0,
        max_iters: 3,
        ..EngineConfig::default()
    };
    let err = engine::train_test_tune(
        &corpus,
        &GbdtLearner,
        &[quick_params()],
        11,
        &cfg,
        &mut NoopHook,
    )
    .unwrap_err();
    let message = err.to_string();
    assert!(message.contains("did not converge"), "{message}");
    assert!(message.contains("nrounds: 15"), "error must name the grid point: {message}");
}

#[test]
fn empty_grid_is_rejected() {
    let (corpus, _, _) = small_corpus();
    assert!(matches!(
        engine::train_test_tune(
            &corpus,
            &GbdtLearner,
            &[],
            11,
            &EngineConfig::default(),
            &mut NoopHook
        ),
        Err(engine::EngineError::EmptyGrid)
    ));
}

#[test]
fn kfolds_streams_share_folds_and_respect_levels() {
    let (corpus, _, _) = small_corpus();
    let cfg = EngineConfig::default();
    let a = engine::kfolds_converge(
        &corpus, &GbdtLearner, &quick_params(), 2, 5, 13, &cfg, &mut NoopHook,
    )
    .unwrap();
    let b = engine::kfolds_converge(
        &corpus, &GbdtLearner, &quick_params(), 3, 5, 13, &cfg, &mut NoopHook,
    )
    .unwrap();
    // Same pooling axis in both streams.
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.actuals, b.actuals);
    assert!(matches!(
        engine::kfolds_converge(
            &corpus, &GbdtLearner, &quick_params(), 4, 5, 13, &cfg, &mut NoopHook
        ),
        Err(engine::EngineError::BadSocLevel(4))
    ));
    assert!(matches!(
        engine::kfolds_converge(
            &corpus, &GbdtLearner, &quick_params(), 2, 1, 13, &cfg, &mut NoopHook
        ),
        Err(engine::EngineError::BadFoldCount(1))
    ));
}

fn run_impute(corpus: &Corpus, completed: &[ingest::SurveyRecord], table: &MappingTable, n_sims: usize) -> engine::ImputationRun {
    let groups = ingest::group_records(completed, table).unwrap();
    let sims = wigem::simulate::simulate_groups(&groups, n_sims, 5);
    let spec = BlendSpec { ratio_a: 0.6, convergence_iter_a: 2, convergence_iter_b: 2 };
    engine::impute(
        corpus,
        &sims,
        &GbdtLearner,
        &quick_params(),
        &spec,
        &EngineConfig::default(),
        &mut NoopHook,
    )
    .unwrap()
}

#[test]
fn impute_yields_one_prediction_per_simulation() {
    let (corpus, table, completed) = small_corpus();
    let run = run_impute(&corpus, &completed, &table, 10);
    assert_eq!(run.n_sims, 10);
    assert_eq!(run.missing_rows.len(), corpus.missing_rows().len());
    for row in &run.matrix {
        assert_eq!(row.len(), 10);
    }
    assert_eq!(run.cis.len(), run.missing_rows.len());
    assert_eq!(run.known_stats.len(), 10);
}

#[test]
fn single_simulation_gives_degenerate_intervals() {
    let (corpus, table, completed) = small_corpus();
    let run = run_impute(&corpus, &completed, &table, 1);
    assert_eq!(run.n_sims, 1);
    for (i, ci) in run.cis.iter().enumerate() {
        assert!(ci.estimate.degenerate());
        assert_eq!(ci.estimate.mean, run.matrix[i][0]);
    }
}

#[test]
fn simulation_record_count_must_match() {
    let (corpus, table, completed) = small_corpus();
    let groups = ingest::group_records(&completed[..10], &table).unwrap();
    let sims = wigem::simulate::simulate_groups(&groups, 3, 5);
    let spec = BlendSpec { ratio_a: 0.5, convergence_iter_a: 1, convergence_iter_b: 1 };
    let err = engine::impute(
        &corpus,
        &sims,
        &GbdtLearner,
        &quick_params(),
        &spec,
        &EngineConfig::default(),
        &mut NoopHook,
    )
    .unwrap_err();
    assert!(matches!(err, engine::EngineError::SimulationMismatch { .. }));
}

/// Backend stub that reproduces its training targets exactly.
struct PerfectLearner;

struct Echo(Vec<f64>);

impl Learner for PerfectLearner {
    fn fit(
        &self,
        data: &WeightedDataset<'_>,
        _params: &Hyperparams,
    ) -> Result<Box<dyn FittedModel>, engine::EngineError> {
        Ok(Box::new(Echo(data.targets.to_vec())))
    }
}

impl FittedModel for Echo {
    fn predict(&self, _frame: &FeatureFrame) -> Result<Vec<f64>, engine::EngineError> {
        Ok(self.0.clone())
    }
}

#[test]
fn perfect_backend_measures_zero_model_uncertainty() {
    let (corpus, table, completed) = small_corpus();
    let groups = ingest::group_records(&completed, &table).unwrap();
    let sims = wigem::simulate::simulate_groups(&groups, 4, 5);
    let spec = BlendSpec { ratio_a: 0.5, convergence_iter_a: 2, convergence_iter_b: 2 };
    let run = engine::impute(
        &corpus,
        &sims,
        &PerfectLearner,
        &quick_params(),
        &spec,
        &EngineConfig::default(),
        &mut NoopHook,
    )
    .unwrap();
    let (mae, me) = run.model_uncertainty;
    assert!(mae.abs() < 1e-12, "mae {mae}");
    assert!(me.abs() < 1e-12, "me {me}");
}

#[test]
fn desk_scale_model_uncertainty_stays_small() {
    let (corpus, table, completed) = small_corpus();
    let run = run_impute(&corpus, &completed, &table, 4);
    assert!(run.model_uncertainty.0 < 0.05, "MAE {}", run.model_uncertainty.0);
}
