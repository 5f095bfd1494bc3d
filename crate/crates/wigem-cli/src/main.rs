//! Command-line pipeline runner.
//!
//! Stages run against a persistent run directory; each validates a manifest
//! of upstream artifact digests before it starts. Flag values override
//! environment variables (WIGEM_*), which override the config file.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use wigem::engine::CiMethod;
use wigem::pipeline::{self, RunConfig, SocSelection};

#[derive(Parser)]
#[command(
    name = "wigem",
    about = "Weighted iterative imputation for bounded survey distributions",
    version
)]
struct Cli {
    /// Run configuration file (TOML).
    #[arg(long, global = true, env = "WIGEM_CONFIG")]
    config: Option<PathBuf>,

    /// Master seed driving every random stream.
    #[arg(long, global = true, env = "WIGEM_SEED")]
    seed: Option<u64>,

    /// Number of simulated datasets for the impute stage.
    #[arg(long = "sims", global = true, env = "WIGEM_SIMS")]
    sims: Option<usize>,

    /// SOC streams to run: 2, 3, or both.
    #[arg(long, global = true, env = "WIGEM_SOC")]
    soc: Option<String>,

    /// Run directory for artifacts.
    #[arg(long, global = true, env = "WIGEM_OUT")]
    out: Option<PathBuf>,

    /// Confidence interval method: normal, t, or percentile.
    #[arg(long, global = true, env = "WIGEM_CI")]
    ci: Option<String>,

    /// Skip malformed rows during ingest instead of failing.
    #[arg(long, global = true)]
    lenient: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic survey with retained ground truth.
    Synth {
        /// Number of occupations.
        #[arg(long)]
        occupations: Option<usize>,
        /// Number of requirements (additive groups).
        #[arg(long)]
        requirements: Option<usize>,
        /// Probability that an estimate is hidden.
        #[arg(long)]
        missing: Option<f64>,
        /// Standard error attached to known estimates.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Parse and structurally complete a raw extract.
    Ingest,
    /// Search the hyperparameter grid with the train-test loop.
    Tune,
    /// Find convergence iterations and the blend ratio by k-folds.
    Kfolds,
    /// Impute missing values across simulations and emit confidence intervals.
    Impute,
    /// Compute overlap, effort, and correlation tables.
    Analyze,
}

fn build_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| anyhow::anyhow!("{e}"))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(sims) = cli.sims {
        cfg.n_sims = sims;
    }
    if let Some(soc) = &cli.soc {
        cfg.soc = SocSelection::parse(soc)
            .with_context(|| format!("invalid --soc value '{soc}' (expected 2, 3, or both)"))?;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(ci) = &cli.ci {
        cfg.ci = match ci.as_str() {
            "normal" => CiMethod::Normal,
            "t" => CiMethod::StudentT,
            "percentile" => CiMethod::Percentile,
            other => anyhow::bail!("invalid --ci value '{other}' (expected normal, t, or percentile)"),
        };
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), pipeline::PipelineError> {
    let mut cfg = match build_config(cli) {
        Ok(cfg) => cfg,
        Err(e) => return Err(pipeline::PipelineError::Config(e.to_string())),
    };

    match &cli.command {
        Command::Synth { occupations, requirements, missing, sigma } => {
            if let Some(n) = occupations {
                cfg.synth.occupations = *n;
            }
            if let Some(n) = requirements {
                cfg.synth.requirements = *n;
            }
            if let Some(rate) = missing {
                cfg.synth.missing_rate = *rate;
            }
            if let Some(s) = sigma {
                cfg.synth.sigma_e = *s;
            }
            let summary = pipeline::run_synth(&cfg)?;
            println!(
                "synth: {} occupations x {} requirements, {} known records, {} truth rows -> {}",
                summary.occupations,
                summary.requirements,
                summary.known_records,
                summary.truth_rows,
                cfg.out_dir.display()
            );
        }
        Command::Ingest => {
            let summary = pipeline::run_ingest(&cfg, cli.lenient)?;
            let c = &summary.census;
            println!(
                "ingest: {} occupations, {} requirements, {} groups, {} known / {} missing estimates",
                c.occupations, c.additive_groups, c.groups, c.known_estimates, c.missing_estimates
            );
            if summary.skipped_rows > 0 {
                eprintln!("warning: skipped {} malformed rows", summary.skipped_rows);
            }
        }
        Command::Tune => {
            let summary = pipeline::run_tune(&cfg)?;
            println!(
                "tune: chose nrounds={} max_depth={} eta={} (validation MAE {:.6}, converged at iteration {})",
                summary.chosen.nrounds,
                summary.chosen.max_depth,
                summary.chosen.eta,
                summary.validation_mae,
                summary.convergence_iteration
            );
        }
        Command::Kfolds => {
            let summary = pipeline::run_kfolds(&cfg)?;
            let b = &summary.blend;
            println!(
                "kfolds: blend {:.0}:{:.0} (soc2:soc3), convergence at iterations {} / {}",
                b.ratio_soc2 * 100.0,
                (1.0 - b.ratio_soc2) * 100.0,
                b.convergence_iteration_soc2,
                b.convergence_iteration_soc3
            );
            if let (Some(a), Some(bb), Some(bl)) = (b.rmse_soc2, b.rmse_soc3, b.rmse_blended) {
                println!("kfolds: rmse soc2 {a:.6}, soc3 {bb:.6}, blended {bl:.6}");
            }
        }
        Command::Impute => {
            let summary = pipeline::run_impute(&cfg)?;
            println!(
                "impute: {} missing records, {} degenerate intervals, model uncertainty MAE {:.6} ME {:.6}",
                summary.missing_records,
                summary.degenerate_cis,
                summary.model_uncertainty.0,
                summary.model_uncertainty.1
            );
        }
        Command::Analyze => {
            let summary = pipeline::run_analyze(&cfg)?;
            println!(
                "analyze: {} occupations, {} overlap pairs, {} low-variability requirements",
                summary.occupations, summary.overlap_pairs, summary.degenerate_requirements
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
