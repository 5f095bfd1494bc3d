//! The six pipeline stages: synth, ingest, tune, kfolds, impute, analyze.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::applications::{self, PoolingMap};
use crate::engine::{
    self, Algorithm, BlendSpec, Corpus, GbdtLearner, IterationHook, IterationSnapshot, NoopHook,
};
use crate::features::MappingTable;
use crate::ingest;
use crate::metrics;
use crate::regressor::Hyperparams;
use crate::seeding;
use crate::simulate;
use crate::synth;

use super::config::RunConfig;
use super::format::format_sig;
use super::manifest::{digest_bytes, digest_file, Manifest, StageEntry};
use super::PipelineError;

pub const RECORDS_FILE: &str = "records.csv";
pub const ENCODER_FILE: &str = "encoder.json";
pub const RAW_EXTRACT_FILE: &str = "synth/raw_extract.csv";
pub const SYNTH_MAPPING_FILE: &str = "synth/mapping.toml";
pub const TRUTH_FILE: &str = "synth/truth.csv";
pub const HYPERPARAMS_FILE: &str = "tune/hyperparams.json";
pub const TUNE_TRACE_FILE: &str = "tune/trace.csv";
pub const TUNE_SELECTION_FILE: &str = "tune/selection.csv";
pub const BLEND_FILE: &str = "kfolds/blend.json";
pub const SIMS_FILE: &str = "impute/sims.csv";
pub const IMPUTED_FILE: &str = "impute/imputed.csv";
pub const METRICS_FILE: &str = "impute/metrics.toml";
pub const CONFIG_SNAPSHOT_FILE: &str = "config_snapshot.toml";

/// Writes one stage's artifacts and collects their digests.
struct StageWriter<'a> {
    run_dir: &'a Path,
    entry: StageEntry,
}

impl<'a> StageWriter<'a> {
    fn new(run_dir: &'a Path, cfg: &RunConfig) -> Self {
        StageWriter {
            run_dir,
            entry: StageEntry {
                config_digest: digest_bytes(cfg.snapshot_toml().as_bytes()),
                ..StageEntry::default()
            },
        }
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = self.run_dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        self.entry.outputs.insert(rel.to_owned(), digest_bytes(bytes));
        Ok(())
    }

    fn note_input(&mut self, key: &str, path: &Path) -> Result<(), PipelineError> {
        self.entry.inputs.insert(key.to_owned(), digest_file(path)?);
        Ok(())
    }

    fn finish(mut self, stage: &str, cfg: &RunConfig) -> Result<(), PipelineError> {
        self.write(CONFIG_SNAPSHOT_FILE, cfg.snapshot_toml().as_bytes())?;
        let mut manifest = Manifest::load(self.run_dir)?;
        manifest.stages.insert(stage.to_owned(), self.entry);
        manifest.save(self.run_dir)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthSummary {
    pub occupations: usize,
    pub requirements: usize,
    pub known_records: usize,
    pub truth_rows: usize,
}

pub fn run_synth(cfg: &RunConfig) -> Result<SynthSummary, PipelineError> {
    let out = synth::generate(&cfg.synth);
    let mut writer = StageWriter::new(&cfg.out_dir, cfg);

    let mut raw = Vec::new();
    synth::write_raw_extract(&mut raw, &out)?;
    writer.write(RAW_EXTRACT_FILE, &raw)?;
    writer.write(SYNTH_MAPPING_FILE, synth::mapping_toml(&out.mapping).as_bytes())?;
    let mut truth = Vec::new();
    synth::write_truth(&mut truth, &out.truth)?;
    writer.write(TRUTH_FILE, &truth)?;
    writer.finish("synth", cfg)?;

    Ok(SynthSummary {
        occupations: cfg.synth.occupations,
        requirements: cfg.synth.requirements,
        known_records: out.known_records.len(),
        truth_rows: out.truth.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    pub census: ingest::Census,
    pub skipped_rows: usize,
}

pub fn run_ingest(cfg: &RunConfig, lenient: bool) -> Result<IngestSummary, PipelineError> {
    let raw_path = cfg.raw_extract_path();
    let mapping_path = cfg.mapping_path();
    for (path, what) in [(&raw_path, "input extract"), (&mapping_path, "mapping config")] {
        if !path.exists() {
            return Err(PipelineError::Config(format!(
                "{what} not found at {}",
                path.display()
            )));
        }
    }
    // When the synth stage supplies the inputs, hold them to its manifest.
    let manifest = Manifest::load(&cfg.out_dir)?;
    if cfg.input.is_none() {
        manifest.verify_artifact(&cfg.out_dir, RAW_EXTRACT_FILE, "synth")?;
    }
    if cfg.mapping.is_none() {
        manifest.verify_artifact(&cfg.out_dir, SYNTH_MAPPING_FILE, "synth")?;
    }

    let table = MappingTable::load(&mapping_path)?;
    let raw = std::fs::File::open(&raw_path)?;
    let (parsed, skipped) = if lenient {
        let outcome = ingest::parse_survey_lenient(raw, &cfg.ingest.schema)?;
        (outcome.records, outcome.issues.len())
    } else {
        (ingest::parse_survey(raw, &cfg.ingest.schema)?, 0)
    };
    let completed = ingest::complete_corpus(&parsed, &table)?;
    let groups = ingest::group_records(&completed, &table)?;
    let census = ingest::census(&groups);

    let corpus = Corpus::build(&completed, &table)?;
    let mut writer = StageWriter::new(&cfg.out_dir, cfg);
    writer.note_input("raw_extract", &raw_path)?;
    writer.note_input("mapping", &mapping_path)?;
    let mut records = Vec::new();
    ingest::write_records(&mut records, &completed)?;
    writer.write(RECORDS_FILE, &records)?;
    writer.write(ENCODER_FILE, corpus.encoder.to_json().as_bytes())?;
    writer.finish("ingest", cfg)?;

    Ok(IngestSummary { census, skipped_rows: skipped })
}

/// Load the completed corpus, checking the ingest artifacts first.
fn load_corpus(cfg: &RunConfig) -> Result<(Corpus, MappingTable), PipelineError> {
    let manifest = Manifest::load(&cfg.out_dir)?;
    manifest.verify_artifact(&cfg.out_dir, RECORDS_FILE, "ingest")?;
    manifest.verify_artifact(&cfg.out_dir, ENCODER_FILE, "ingest")?;

    let table = MappingTable::load(&cfg.mapping_path())?;
    let records =
        ingest::read_records(std::fs::File::open(cfg.out_dir.join(RECORDS_FILE))?, &table)?;
    let corpus = Corpus::build(&records, &table)?;

    let persisted = std::fs::read_to_string(cfg.out_dir.join(ENCODER_FILE))?;
    let persisted = crate::features::FeatureEncoder::from_json(&persisted)?;
    if persisted != corpus.encoder {
        return Err(PipelineError::Config(
            "persisted encoder does not match the corpus; re-run the ingest stage".to_owned(),
        ));
    }
    Ok((corpus, table))
}

#[derive(Debug, Clone, Serialize)]
pub struct TuneSummary {
    pub chosen: Hyperparams,
    pub validation_mae: f64,
    pub convergence_iteration: usize,
}

pub fn run_tune(cfg: &RunConfig) -> Result<TuneSummary, PipelineError> {
    let (corpus, _table) = load_corpus(cfg)?;
    let split_seed = seeding::stream_seed(cfg.seed, &[b"stage", b"tune"]);
    let outcome = engine::train_test_tune(
        &corpus,
        &GbdtLearner,
        &cfg.grid,
        split_seed,
        &cfg.engine_config(),
        &mut NoopHook,
    )?;

    let mut writer = StageWriter::new(&cfg.out_dir, cfg);
    writer.note_input("records", &cfg.out_dir.join(RECORDS_FILE))?;
    writer.write(
        HYPERPARAMS_FILE,
        serde_json::to_string_pretty(&outcome.chosen)?.as_bytes(),
    )?;

    let mut trace = String::from("grid_index,nrounds,max_depth,eta,iteration,rmse\n");
    for (gi, report) in outcome.reports.iter().enumerate() {
        for (iter, rmse) in report.rmse_by_iter.iter().enumerate() {
            trace.push_str(&format!(
                "{gi},{},{},{},{iter},{}\n",
                report.params.nrounds,
                report.params.max_depth,
                format_sig(report.params.eta),
                format_sig(*rmse)
            ));
        }
    }
    writer.write(TUNE_TRACE_FILE, trace.as_bytes())?;

    let mut selection =
        String::from("grid_index,nrounds,max_depth,eta,convergence_iteration,validation_mae,chosen\n");
    for (gi, report) in outcome.reports.iter().enumerate() {
        selection.push_str(&format!(
            "{gi},{},{},{},{},{},{}\n",
            report.params.nrounds,
            report.params.max_depth,
            format_sig(report.params.eta),
            report.convergence_iteration,
            if report.validation_mae.is_finite() {
                format_sig(report.validation_mae)
            } else {
                "inf".to_owned()
            },
            gi == outcome.chosen_index
        ));
    }
    writer.write(TUNE_SELECTION_FILE, selection.as_bytes())?;
    writer.finish("tune", cfg)?;

    let report = &outcome.reports[outcome.chosen_index];
    Ok(TuneSummary {
        chosen: outcome.chosen,
        validation_mae: report.validation_mae,
        convergence_iteration: report.convergence_iteration,
    })
}

/// Blend handoff written by the kfolds stage.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BlendArtifact {
    pub ratio_soc2: f64,
    pub convergence_iteration_soc2: usize,
    pub convergence_iteration_soc3: usize,
    pub rmse_soc2: Option<f64>,
    pub rmse_soc3: Option<f64>,
    pub rmse_blended: Option<f64>,
}

impl BlendArtifact {
    pub fn spec(&self) -> BlendSpec {
        BlendSpec {
            ratio_a: self.ratio_soc2,
            convergence_iter_a: self.convergence_iteration_soc2,
            convergence_iter_b: self.convergence_iteration_soc3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KfoldsSummary {
    pub blend: BlendArtifact,
}

pub fn run_kfolds(cfg: &RunConfig) -> Result<KfoldsSummary, PipelineError> {
    let (corpus, _table) = load_corpus(cfg)?;
    let manifest = Manifest::load(&cfg.out_dir)?;
    manifest.verify_artifact(&cfg.out_dir, HYPERPARAMS_FILE, "tune")?;
    let params: Hyperparams = serde_json::from_str(&std::fs::read_to_string(
        cfg.out_dir.join(HYPERPARAMS_FILE),
    )?)?;

    let fold_seed = seeding::stream_seed(cfg.seed, &[b"stage", b"kfolds"]);
    let ecfg = cfg.engine_config();
    let levels = cfg.soc.levels();
    let mut outcomes = BTreeMap::new();
    for &level in &levels {
        let outcome = engine::kfolds_converge(
            &corpus,
            &GbdtLearner,
            &params,
            level,
            cfg.k,
            fold_seed,
            &ecfg,
            &mut NoopHook,
        )?;
        outcomes.insert(level, outcome);
    }

    let blend = match (outcomes.get(&2), outcomes.get(&3)) {
        (Some(a), Some(b)) => {
            let out = engine::blend(&a.converged, &b.converged, &a.actuals);
            BlendArtifact {
                ratio_soc2: out.ratio_a,
                convergence_iteration_soc2: a.convergence_iteration,
                convergence_iteration_soc3: b.convergence_iteration,
                rmse_soc2: Some(out.rmse_a),
                rmse_soc3: Some(out.rmse_b),
                rmse_blended: Some(out.rmse_blended),
            }
        }
        (Some(a), None) => BlendArtifact {
            ratio_soc2: 1.0,
            convergence_iteration_soc2: a.convergence_iteration,
            convergence_iteration_soc3: 0,
            rmse_soc2: Some(metrics::rmse(&a.converged, &a.actuals)),
            rmse_soc3: None,
            rmse_blended: None,
        },
        (None, Some(b)) => BlendArtifact {
            ratio_soc2: 0.0,
            convergence_iteration_soc2: 0,
            convergence_iteration_soc3: b.convergence_iteration,
            rmse_soc2: None,
            rmse_soc3: Some(metrics::rmse(&b.converged, &b.actuals)),
            rmse_blended: None,
        },
        (None, None) => unreachable!("soc selection always yields a stream"),
    };

    let mut writer = StageWriter::new(&cfg.out_dir, cfg);
    writer.note_input("records", &cfg.out_dir.join(RECORDS_FILE))?;
    writer.note_input("hyperparams", &cfg.out_dir.join(HYPERPARAMS_FILE))?;
    writer.write(BLEND_FILE, serde_json::to_string_pretty(&blend)?.as_bytes())?;

    for (level, outcome) in &outcomes {
        let mut trace = String::from("iteration,rmse\n");
        for (iter, rmse) in outcome.rmse_by_iter.iter().enumerate() {
            trace.push_str(&format!("{iter},{}\n", format_sig(*rmse)));
        }
        writer.write(&format!("kfolds/trace_soc{level}.csv"), trace.as_bytes())?;

        let mut preds = String::from("occupation,additive_group,level,actual,prediction\n");
        for ((row, actual), pred) in
            outcome.rows.iter().zip(&outcome.actuals).zip(&outcome.converged)
        {
            let r = &corpus.records[*row];
            preds.push_str(&format!(
                "{},{},{},{},{}\n",
                csv_field(&r.occupation),
                r.additive_group,
                csv_field(&r.level),
                format_sig(*actual),
                format_sig(*pred)
            ));
        }
        writer.write(&format!("kfolds/converged_soc{level}.csv"), preds.as_bytes())?;

        let mut dump = String::from("iteration,occupation,additive_group,level,prediction\n");
        for (iter, pooled) in outcome.pooled_by_iter.iter().enumerate() {
            for (row, pred) in outcome.rows.iter().zip(pooled) {
                let r = &corpus.records[*row];
                dump.push_str(&format!(
                    "{iter},{},{},{},{}\n",
                    csv_field(&r.occupation),
                    r.additive_group,
                    csv_field(&r.level),
                    format_sig(*pred)
                ));
            }
        }
        writer.write(&format!("kfolds/predictions_soc{level}.csv"), dump.as_bytes())?;
    }

    if let (Some(a), Some(b)) = (outcomes.get(&2), outcomes.get(&3)) {
        let ratio = blend.ratio_soc2;
        let iters = a.pooled_by_iter.len().min(b.pooled_by_iter.len());
        let mut trace = String::from("iteration,rmse_soc2,rmse_soc3,rmse_blended\n");
        // Error sign convention: actual - prediction.
        let mut errors = String::from("iteration,rmse,mae,me,sd_e,r2\n");
        for iter in 0..iters {
            let blended: Vec<f64> = a.pooled_by_iter[iter]
                .iter()
                .zip(&b.pooled_by_iter[iter])
                .map(|(x, y)| ratio * x + (1.0 - ratio) * y)
                .collect();
            trace.push_str(&format!(
                "{iter},{},{},{}\n",
                format_sig(a.rmse_by_iter[iter]),
                format_sig(b.rmse_by_iter[iter]),
                format_sig(metrics::rmse(&blended, &a.actuals))
            ));
            let report = metrics::error_report(&blended, &a.actuals)
                .expect("pooled predictions align with actuals");
            errors.push_str(&format!(
                "{iter},{},{},{},{},{}\n",
                format_sig(report.rmse),
                format_sig(report.mae),
                format_sig(report.me),
                format_sig(report.sd_e),
                report.r2.map(format_sig).unwrap_or_default()
            ));
        }
        writer.write("kfolds/trace_blend.csv", trace.as_bytes())?;
        writer.write("kfolds/errors_blend.csv", errors.as_bytes())?;
    }
    writer.finish("kfolds", cfg)?;

    Ok(KfoldsSummary { blend })
}

/// Per-simulation model uncertainty, written to the metrics report.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MetricsReport {
    error_sign: String,
    r2_definition: String,
    ci_method: String,
    blend_ratio_soc2: f64,
    convergence_iteration_soc2: usize,
    convergence_iteration_soc3: usize,
    model_uncertainty_mae: f64,
    model_uncertainty_me: f64,
    sims_clamped_drivers: usize,
    sims_inside_limit_drivers: usize,
    sims_shrunk_groups: usize,
    degenerate_cis: usize,
    per_sim: Vec<SimError>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SimError {
    sim: usize,
    mae: f64,
    me: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImputeSummary {
    pub missing_records: usize,
    pub degenerate_cis: usize,
    pub model_uncertainty: (f64, f64),
}

/// Dumps per-iteration missing-row predictions during final imputation.
struct ImputeDumpHook<'a> {
    files: &'a mut BTreeMap<String, String>,
}

impl IterationHook for ImputeDumpHook<'_> {
    fn after_projection(&mut self, snapshot: &IterationSnapshot<'_>) {
        if snapshot.algorithm != Algorithm::Impute {
            return;
        }
        let (Some(sim), Some(level)) = (snapshot.sim, snapshot.soc_level) else {
            return;
        };
        let name = format!(
            "impute/iterations/sim{sim:02}_soc{level}_iter{:02}.csv",
            snapshot.iteration
        );
        let mut body = String::from("occupation,additive_group,level,prediction\n");
        for (row, record) in snapshot.corpus.records.iter().enumerate() {
            if record.value.is_none() {
                body.push_str(&format!(
                    "{},{},{},{}\n",
                    csv_field(&record.occupation),
                    record.additive_group,
                    csv_field(&record.level),
                    format_sig(snapshot.values[row])
                ));
            }
        }
        self.files.insert(name, body);
    }
}

pub fn run_impute(cfg: &RunConfig) -> Result<ImputeSummary, PipelineError> {
    let (corpus, table) = load_corpus(cfg)?;
    let manifest = Manifest::load(&cfg.out_dir)?;
    manifest.verify_artifact(&cfg.out_dir, HYPERPARAMS_FILE, "tune")?;
    manifest.verify_artifact(&cfg.out_dir, BLEND_FILE, "kfolds")?;
    let params: Hyperparams = serde_json::from_str(&std::fs::read_to_string(
        cfg.out_dir.join(HYPERPARAMS_FILE),
    )?)?;
    let blend: BlendArtifact =
        serde_json::from_str(&std::fs::read_to_string(cfg.out_dir.join(BLEND_FILE))?)?;

    let groups = ingest::group_records(&corpus.records, &table)?;
    let sim_seed = seeding::stream_seed(cfg.seed, &[b"stage", b"simulate"]);
    let sims = simulate::simulate_groups(&groups, cfg.n_sims, sim_seed);

    let mut dumps: BTreeMap<String, String> = BTreeMap::new();
    let mut hook = ImputeDumpHook { files: &mut dumps };
    let run = engine::impute(
        &corpus,
        &sims,
        &GbdtLearner,
        &params,
        &blend.spec(),
        &cfg.engine_config(),
        &mut hook,
    )?;

    let mut writer = StageWriter::new(&cfg.out_dir, cfg);
    writer.note_input("records", &cfg.out_dir.join(RECORDS_FILE))?;
    writer.note_input("hyperparams", &cfg.out_dir.join(HYPERPARAMS_FILE))?;
    writer.note_input("blend", &cfg.out_dir.join(BLEND_FILE))?;

    let mut sims_csv = String::from("occupation,additive_group,level,sim,value\n");
    for (row, record) in corpus.records.iter().enumerate() {
        if record.value.is_none() {
            continue;
        }
        for sim in 0..cfg.n_sims {
            sims_csv.push_str(&format!(
                "{},{},{},{sim},{}\n",
                csv_field(&record.occupation),
                record.additive_group,
                csv_field(&record.level),
                format_sig(sims.value(row, sim).unwrap())
            ));
        }
    }
    writer.write(SIMS_FILE, sims_csv.as_bytes())?;

    let mut imputed =
        String::from("occupation,additive_group,level,mean,lower,upper,degenerate,n_sims\n");
    for ci in &run.cis {
        let r = &corpus.records[ci.row];
        imputed.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            csv_field(&r.occupation),
            r.additive_group,
            csv_field(&r.level),
            format_sig(ci.estimate.mean),
            ci.estimate.lower.map(format_sig).unwrap_or_default(),
            ci.estimate.upper.map(format_sig).unwrap_or_default(),
            ci.estimate.degenerate(),
            ci.n_sims
        ));
    }
    writer.write(IMPUTED_FILE, imputed.as_bytes())?;

    let degenerate_cis = run.cis.iter().filter(|c| c.estimate.degenerate()).count();
    let report = MetricsReport {
        error_sign: "actual_minus_prediction".to_owned(),
        r2_definition: "1 - ss_res / ss_tot".to_owned(),
        ci_method: format!("{:?}", cfg.ci).to_lowercase(),
        blend_ratio_soc2: blend.ratio_soc2,
        convergence_iteration_soc2: blend.convergence_iteration_soc2,
        convergence_iteration_soc3: blend.convergence_iteration_soc3,
        model_uncertainty_mae: run.model_uncertainty.0,
        model_uncertainty_me: run.model_uncertainty.1,
        sims_clamped_drivers: sims.clamped_drivers,
        sims_inside_limit_drivers: sims.inside_limit_drivers,
        sims_shrunk_groups: sims.shrunk_groups,
        degenerate_cis,
        per_sim: run
            .known_stats
            .iter()
            .map(|s| SimError { sim: s.sim, mae: s.mae, me: s.me })
            .collect(),
    };
    writer.write(
        METRICS_FILE,
        toml::to_string_pretty(&report)
            .expect("metrics serialize")
            .as_bytes(),
    )?;

    for (name, body) in &dumps {
        writer.write(name, body.as_bytes())?;
    }
    writer.finish("impute", cfg)?;

    Ok(ImputeSummary {
        missing_records: run.missing_rows.len(),
        degenerate_cis,
        model_uncertainty: run.model_uncertainty,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeSummary {
    pub occupations: usize,
    pub overlap_pairs: usize,
    pub degenerate_requirements: usize,
}

pub fn run_analyze(cfg: &RunConfig) -> Result<AnalyzeSummary, PipelineError> {
    let (corpus, table) = load_corpus(cfg)?;
    let manifest = Manifest::load(&cfg.out_dir)?;
    manifest.verify_artifact(&cfg.out_dir, IMPUTED_FILE, "impute")?;

    // Join imputed means back onto the corpus rows.
    let mut means_by_key: BTreeMap<(String, u32, String), f64> = BTreeMap::new();
    let mut rdr = csv::Reader::from_reader(std::fs::File::open(cfg.out_dir.join(IMPUTED_FILE))?);
    for row in rdr.records() {
        let row = row?;
        means_by_key.insert(
            (row[0].to_owned(), row[1].parse().unwrap_or(0), row[2].to_owned()),
            row[3].parse().unwrap_or(0.0),
        );
    }
    let mut imputed_means: BTreeMap<usize, f64> = BTreeMap::new();
    for (i, r) in corpus.records.iter().enumerate() {
        if r.value.is_none() {
            let key = (r.occupation.clone(), r.additive_group, r.level.clone());
            match means_by_key.get(&key) {
                Some(&m) => {
                    imputed_means.insert(i, m);
                }
                None => {
                    return Err(PipelineError::Config(format!(
                        "imputed table lacks ('{}', {}, '{}'); re-run the impute stage",
                        key.0, key.1, key.2
                    )))
                }
            }
        }
    }

    let distributions = applications::build_distributions(&corpus.records, &imputed_means)?;
    for d in &distributions {
        d.validate()?;
    }
    let soc2_by_occupation: BTreeMap<&str, &str> = corpus
        .groups
        .iter()
        .map(|g| (g.occupation.as_str(), g.soc2.as_str()))
        .collect();
    let vectors = applications::ele_vectors(&distributions, &table, |occ| {
        soc2_by_occupation.get(occ).map(|s| (*s).to_owned()).unwrap_or_default()
    })?;

    let mut writer = StageWriter::new(&cfg.out_dir, cfg);
    writer.note_input("records", &cfg.out_dir.join(RECORDS_FILE))?;
    writer.note_input("imputed", &cfg.out_dir.join(IMPUTED_FILE))?;

    // Effort per (occupation, requirement).
    let mut ele_csv = String::from("occupation,soc2,additive_group,ele\n");
    for v in &vectors {
        for (group, effort) in &v.by_group {
            ele_csv.push_str(&format!(
                "{},{},{group},{}\n",
                csv_field(&v.occupation),
                v.soc2,
                format_sig(*effort)
            ));
        }
    }
    writer.write("analyze/ele.csv", ele_csv.as_bytes())?;

    // Standardized effort per requirement, with optional pooled labels.
    let pooling = PoolingMap(cfg.analyze.pooling.clone());
    let groups_in_scope: Vec<u32> =
        vectors.first().map(|v| v.by_group.keys().copied().collect()).unwrap_or_default();
    let mut degenerate_requirements = 0usize;
    let mut std_csv =
        String::from("additive_group,pool_label,occupation,soc2,ele,z_score,degenerate\n");
    for &group in &groups_in_scope {
        let efforts: Vec<f64> =
            vectors.iter().map(|v| v.by_group.get(&group).copied().unwrap_or(0.0)).collect();
        let standardized = applications::standardize_ele(&efforts);
        if standardized.degenerate {
            degenerate_requirements += 1;
        }
        for (v, (effort, z)) in
            vectors.iter().zip(efforts.iter().zip(&standardized.z_scores))
        {
            std_csv.push_str(&format!(
                "{group},{},{},{},{},{},{}\n",
                csv_field(&pooling.label(group)),
                csv_field(&v.occupation),
                v.soc2,
                format_sig(*effort),
                format_sig(*z),
                standardized.degenerate
            ));
        }
    }
    writer.write("analyze/ele_standardized.csv", std_csv.as_bytes())?;

    // Occupation correlation matrix in long form, sorted by SOC2.
    let matrix = applications::occupation_correlation(&vectors);
    let mut corr_csv =
        String::from("occupation_a,soc2_a,occupation_b,soc2_b,correlation,defined\n");
    for i in 0..matrix.n() {
        for j in 0..matrix.n() {
            let value = matrix.at(i, j);
            corr_csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                csv_field(&matrix.occupations[i]),
                matrix.soc2[i],
                csv_field(&matrix.occupations[j]),
                matrix.soc2[j],
                if value.is_nan() { String::new() } else { format_sig(value) },
                !value.is_nan()
            ));
        }
    }
    writer.write("analyze/correlation.csv", corr_csv.as_bytes())?;

    // Pairwise overlap per requirement plus the weighted aggregate.
    let mut by_occupation: BTreeMap<&str, Vec<&applications::PopulationDistribution>> =
        BTreeMap::new();
    for d in &distributions {
        by_occupation.entry(d.occupation.as_str()).or_default().push(d);
    }
    let occupations: Vec<&str> = by_occupation.keys().copied().collect();
    let weight_of =
        |group: u32| cfg.analyze.requirement_weights.get(&group).copied().unwrap_or(1.0);

    let mut overlap_csv = String::from("occupation_a,occupation_b,additive_group,overlap\n");
    let mut summary_csv = String::from("occupation_a,occupation_b,mean_overlap\n");
    let mut pairs = 0usize;
    for (ai, &a) in occupations.iter().enumerate() {
        for &b in &occupations[ai + 1..] {
            pairs += 1;
            let mut weighted_sum = 0.0;
            let mut weight_total = 0.0;
            for (da, db) in by_occupation[a].iter().zip(by_occupation[b].iter()) {
                let o = applications::overlap(da, db)?;
                overlap_csv.push_str(&format!(
                    "{},{},{},{}\n",
                    csv_field(a),
                    csv_field(b),
                    da.additive_group,
                    format_sig(o)
                ));
                let w = weight_of(da.additive_group);
                weighted_sum += w * o;
                weight_total += w;
            }
            summary_csv.push_str(&format!(
                "{},{},{}\n",
                csv_field(a),
                csv_field(b),
                format_sig(if weight_total > 0.0 { weighted_sum / weight_total } else { 0.0 })
            ));
        }
    }
    writer.write("analyze/overlap.csv", overlap_csv.as_bytes())?;
    writer.write("analyze/overlap_summary.csv", summary_csv.as_bytes())?;
    writer.finish("analyze", cfg)?;

    Ok(AnalyzeSummary {
        occupations: occupations.len(),
        overlap_pairs: pairs,
        degenerate_requirements,
    })
}

/// Quote a CSV field when it holds separators or quotes.
fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
