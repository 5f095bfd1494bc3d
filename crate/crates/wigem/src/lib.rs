//! Weighted iterative imputation for bounded survey population distributions.
//!
//! The pipeline ingests percentage-distribution survey extracts, completes
//! occupational groups structurally, simulates data uncertainty with
//! beta-distributed shocks, initializes missing values with donor-based
//! guesses, and imputes them through an iteratively reweighted boosted-tree
//! fit under sum-to-one constraints. Post-imputation analytics cover
//! requirement overlap, expected level of effort, and occupation
//! correlation.
//!
//! The crate is organized along the pipeline stages:
//!
//! - [`ingest`]: extract parsing, group keying, structural completion
//! - [`features`]: requirement mapping and predictor encoding
//! - [`simulate`]: beta-shock simulation of known estimates
//! - [`guess`]: naive and donor-based ("smart") initialization
//! - [`regressor`]: weighted gradient-boosted regression trees
//! - [`engine`]: iterative tuning, k-folds convergence, blending, imputation
//! - [`metrics`]: shared error statistics
//! - [`applications`]: overlap, expected level of effort, correlation
//! - [`pipeline`]: staged, manifest-checked run directories
//! - [`synth`]: seeded synthetic survey generator for evaluation

pub mod applications;
pub mod engine;
pub mod features;
pub mod guess;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod regressor;
pub mod seeding;
pub mod simulate;
pub mod synth;
