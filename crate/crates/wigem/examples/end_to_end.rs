//! Full pipeline walkthrough on a synthetic corpus.
//!
//! Run with:
//!   cargo run --release --example end_to_end
//!
//! Generates a 50-occupation survey, ingests it, tunes, runs k-folds,
//! imputes with confidence intervals, and evaluates the imputations against
//! the retained ground truth.

use std::collections::BTreeMap;
use std::time::Instant;

use wigem::pipeline::{self, RunConfig};
use wigem::regressor::Hyperparams;

fn main() {
    let dir = std::env::temp_dir().join(format!("wigem-demo-{}", std::process::id()));
    let mut cfg = RunConfig {
        out_dir: dir.clone(),
        grid: vec![Hyperparams::new(60, 6, 0.3), Hyperparams::new(40, 4, 0.3)],
        ..RunConfig::default()
    };
    cfg.synth.occupations = 50;
    cfg.synth.requirements = 10;

    let t = Instant::now();
    let synth = pipeline::run_synth(&cfg).expect("synth");
    println!(
        "synth    {:>7.2?}  {} known records / {} truth rows",
        t.elapsed(),
        synth.known_records,
        synth.truth_rows
    );

    let t = Instant::now();
    let ingest = pipeline::run_ingest(&cfg, false).expect("ingest");
    println!(
        "ingest   {:>7.2?}  {} groups, {} known / {} missing",
        t.elapsed(),
        ingest.census.groups,
        ingest.census.known_estimates,
        ingest.census.missing_estimates
    );

    let t = Instant::now();
    let tune = pipeline::run_tune(&cfg).expect("tune");
    println!(
        "tune     {:>7.2?}  chose nrounds={} depth={} eta={} (val MAE {:.5}, C={})",
        t.elapsed(),
        tune.chosen.nrounds,
        tune.chosen.max_depth,
        tune.chosen.eta,
        tune.validation_mae,
        tune.convergence_iteration
    );

    let t = Instant::now();
    let kfolds = pipeline::run_kfolds(&cfg).expect("kfolds");
    println!(
        "kfolds   {:>7.2?}  blend {:.2}, C2={} C3={}, rmse soc2 {:.5} soc3 {:.5} blended {:.5}",
        t.elapsed(),
        kfolds.blend.ratio_soc2,
        kfolds.blend.convergence_iteration_soc2,
        kfolds.blend.convergence_iteration_soc3,
        kfolds.blend.rmse_soc2.unwrap_or(f64::NAN),
        kfolds.blend.rmse_soc3.unwrap_or(f64::NAN),
        kfolds.blend.rmse_blended.unwrap_or(f64::NAN),
    );

    let t = Instant::now();
    let impute = pipeline::run_impute(&cfg).expect("impute");
    println!(
        "impute   {:>7.2?}  {} missing, {} degenerate CIs, uncertainty MAE {:.5} ME {:.5}",
        t.elapsed(),
        impute.missing_records,
        impute.degenerate_cis,
        impute.model_uncertainty.0,
        impute.model_uncertainty.1
    );

    let t = Instant::now();
    let analyze = pipeline::run_analyze(&cfg).expect("analyze");
    println!(
        "analyze  {:>7.2?}  {} occupations, {} overlap pairs",
        t.elapsed(),
        analyze.occupations,
        analyze.overlap_pairs
    );

    // Score the imputations against the hidden truth.
    let truth = wigem::synth::read_truth(
        std::fs::File::open(dir.join("synth/truth.csv")).expect("truth file"),
    )
    .expect("truth parses");
    let truth_by_key: BTreeMap<(String, u32, String), f64> = truth
        .into_iter()
        .map(|t| ((t.occupation, t.additive_group, t.level), t.value))
        .collect();

    let mut rdr =
        csv::Reader::from_reader(std::fs::File::open(dir.join("impute/imputed.csv")).unwrap());
    let mut imputed = Vec::new();
    let mut actual = Vec::new();
    for row in rdr.records() {
        let row = row.unwrap();
        let key = (row[0].to_owned(), row[1].parse().unwrap(), row[2].to_owned());
        if let Some(&t) = truth_by_key.get(&key) {
            imputed.push(row[3].parse::<f64>().unwrap());
            actual.push(t);
        }
    }
    let rmse = wigem::metrics::rmse(&imputed, &actual);
    println!("truth    RMSE of mean imputations vs hidden truth: {rmse:.5}  ({} records)", imputed.len());

    // Compare against the iteration-0 smart guesses (blended, averaged over
    // simulations) to show what the iteration bought.
    let ratio = kfolds.blend.ratio_soc2;
    let mut guess_sum: BTreeMap<(String, u32, String), f64> = BTreeMap::new();
    for sim in 0..cfg.n_sims {
        for (level, weight) in [(2u8, ratio), (3u8, 1.0 - ratio)] {
            let path = dir.join(format!("impute/iterations/sim{sim:02}_soc{level}_iter00.csv"));
            let mut rdr = csv::Reader::from_reader(std::fs::File::open(path).unwrap());
            for row in rdr.records() {
                let row = row.unwrap();
                let key = (row[0].to_owned(), row[1].parse().unwrap(), row[2].to_owned());
                *guess_sum.entry(key).or_default() +=
                    weight * row[3].parse::<f64>().unwrap() / cfg.n_sims as f64;
            }
        }
    }
    let mut guesses = Vec::new();
    let mut guess_actual = Vec::new();
    for (key, &g) in &guess_sum {
        if let Some(&t) = truth_by_key.get(key) {
            guesses.push(g);
            guess_actual.push(t);
        }
    }
    let guess_rmse = wigem::metrics::rmse(&guesses, &guess_actual);
    println!(
        "truth    RMSE of initial smart guesses vs hidden truth: {guess_rmse:.5}  (reduction {:.1}%)",
        (1.0 - rmse / guess_rmse) * 100.0
    );

    for level in [2, 3] {
        let path = dir.join(format!("kfolds/trace_soc{level}.csv"));
        let text = std::fs::read_to_string(path).unwrap();
        let rmses: Vec<&str> =
            text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
        println!("kfolds   soc{level} rmse by iteration: {}", rmses.join(" "));
    }
    println!("\nartifacts in {}", dir.display());
}
