//! Staged, resumable pipeline over a run directory.
//!
//! Stages write their artifacts plus a manifest entry with content digests;
//! every stage validates the digests of whatever it consumes and refuses to
//! run on edited or missing upstream artifacts. All artifacts are pure
//! functions of (inputs, config, seed), so re-running a stage reproduces
//! byte-identical files.

pub mod config;
pub mod format;
pub mod manifest;
pub mod stages;

pub use config::{RunConfig, SocSelection};
pub use manifest::Manifest;
pub use stages::{
    run_analyze, run_impute, run_ingest, run_kfolds, run_synth, run_tune, AnalyzeSummary,
    ImputeSummary, IngestSummary, KfoldsSummary, SynthSummary, TuneSummary,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("artifact '{path}' is missing; run the '{stage}' stage first")]
    MissingArtifact { path: String, stage: String },
    #[error("artifact '{path}' does not match what the '{stage}' stage recorded; re-run '{stage}'")]
    StaleArtifact { path: String, stage: String },
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
    #[error(transparent)]
    Mapping(#[from] crate::features::MappingError),
    #[error(transparent)]
    Analytics(#[from] crate::applications::AnalyticsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    /// Whether the error is a usage problem (bad config, missing files)
    /// rather than a runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            PipelineError::Config(_)
                | PipelineError::MissingArtifact { .. }
                | PipelineError::StaleArtifact { .. }
        )
    }
}
