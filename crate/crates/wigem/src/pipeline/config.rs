//! Run configuration: one TOML file drives every stage. Defaults match the
//! method's reported constants (10 simulations, 10 folds, 0.001 convergence
//! threshold, the published weight schedules, both SOC streams).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{CiMethod, EngineConfig, Schedules};
use crate::ingest::ExtractSchema;
use crate::regressor::Hyperparams;
use crate::synth::SynthSpec;

/// Which SOC streams to run and blend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SocSelection {
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "3")]
    Three,
    #[default]
    Both,
}

impl SocSelection {
    pub fn levels(self) -> Vec<u8> {
        match self {
            SocSelection::Two => vec![2],
            SocSelection::Three => vec![3],
            SocSelection::Both => vec![2, 3],
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "2" => Some(SocSelection::Two),
            "3" => Some(SocSelection::Three),
            "both" => Some(SocSelection::Both),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(default)]
pub struct IngestOptions {
    pub schema: ExtractSchema,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(default)]
pub struct AnalyzeOptions {
    /// Pool labels for additive groups in standardized-ELE output (e.g. the
    /// four lifting/carrying groups under one label).
    pub pooling: BTreeMap<u32, String>,
    /// Per-requirement weights for the aggregate overlap summary; missing
    /// groups weigh 1.
    pub requirement_weights: BTreeMap<u32, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    /// Raw extract path; `None` uses the synth stage's output.
    pub input: Option<PathBuf>,
    /// Mapping config path; `None` uses the synth stage's output.
    pub mapping: Option<PathBuf>,
    pub seed: u64,
    pub n_sims: usize,
    pub k: usize,
    pub soc: SocSelection,
    pub ci: CiMethod,
    pub convergence_threshold: f64,
    pub max_iters: usize,
    pub known_sigma_mult: f64,
    pub recompute_bounds_per_sim: bool,
    pub schedules: Schedules,
    /// Hyperparameter grid searched by the tune stage.
    pub grid: Vec<Hyperparams>,
    pub ingest: IngestOptions,
    pub synth: SynthSpec,
    pub analyze: AnalyzeOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: PathBuf::from("runs/default"),
            input: None,
            mapping: None,
            seed: 7,
            n_sims: 10,
            k: 10,
            soc: SocSelection::Both,
            ci: CiMethod::Normal,
            convergence_threshold: 0.001,
            max_iters: 50,
            known_sigma_mult: 1.0,
            recompute_bounds_per_sim: true,
            schedules: Schedules::default(),
            grid: default_grid(),
            ingest: IngestOptions::default(),
            synth: SynthSpec::default(),
            analyze: AnalyzeOptions::default(),
        }
    }
}

/// The default search grid: nrounds {100, 200} x max_depth {6, 14} x
/// eta {0.3, 0.6}.
pub fn default_grid() -> Vec<Hyperparams> {
    let mut grid = Vec::new();
    for nrounds in [100usize, 200] {
        for max_depth in [6usize, 14] {
            for eta in [0.3, 0.6] {
                grid.push(Hyperparams::new(nrounds, max_depth, eta));
            }
        }
    }
    grid
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, super::PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            super::PipelineError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        toml::from_str(&text)
            .map_err(|e| super::PipelineError::Config(format!("invalid config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Config snapshot with the run location normalized away, so identical
    /// configurations produce identical snapshots wherever they run.
    pub fn snapshot_toml(&self) -> String {
        let mut snapshot = self.clone();
        snapshot.out_dir = PathBuf::from(".");
        snapshot.to_toml()
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            convergence_threshold: self.convergence_threshold,
            max_iters: self.max_iters,
            known_sigma_mult: self.known_sigma_mult,
            recompute_bounds_per_sim: self.recompute_bounds_per_sim,
            schedules: self.schedules,
            ci: self.ci,
        }
    }

    pub fn raw_extract_path(&self) -> PathBuf {
        self.input
            .clone()
            .unwrap_or_else(|| self.out_dir.join("synth/raw_extract.csv"))
    }

    pub fn mapping_path(&self) -> PathBuf {
        self.mapping
            .clone()
            .unwrap_or_else(|| self.out_dir.join("synth/mapping.toml"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reported_constants() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.n_sims, 10);
        assert_eq!(cfg.k, 10);
        assert_eq!(cfg.convergence_threshold, 0.001);
        assert_eq!(cfg.max_iters, 50);
        assert_eq!(cfg.schedules.naive_train_test.start, 0.25);
        assert_eq!(cfg.schedules.naive_train_test.step, 0.05);
        assert_eq!(cfg.schedules.naive_train_test.cap, 0.75);
        assert_eq!(cfg.schedules.naive_kfolds.start, 0.0);
        assert_eq!(cfg.schedules.smart.start, 0.5);
        assert_eq!(cfg.grid.len(), 8);
        assert_eq!(cfg.soc.levels(), vec![2, 3]);
    }

    #[test]
    fn config_roundtrips_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        let reparsed: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, reparsed);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 99\nn_sims = 3\n").unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.n_sims, 3);
        assert_eq!(cfg.k, 10);
    }
}
