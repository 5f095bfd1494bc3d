//! Seeded synthetic survey generator.
//!
//! Produces a corpus with the structure the pipeline exploits: occupations
//! nested in SOC families that share latent requirement profiles, per-level
//! frequency/intensity ladders, bounded sum-to-one groups, and MCAR
//! missingness with the ground truth retained for evaluation.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::features::{MappingEntry, ReqCategory};
use crate::ingest::{Origin, SurveyRecord};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub occupations: usize,
    pub requirements: usize,
    /// Probability that any one estimate is hidden.
    pub missing_rate: f64,
    /// Standard error attached to every known estimate.
    pub sigma_e: f64,
    pub seed: u64,
    /// Floor applied to true values before renormalization; keeps shock
    /// feasibility boxes comfortably wide.
    pub min_value: f64,
    pub min_levels: usize,
    pub max_levels: usize,
    /// Scale of the per-occupation tilt along the level ladder, shared
    /// across requirements.
    pub tilt_scale: f64,
    /// Multiplicative log-normal noise at the 3-digit SOC subfamily layer.
    pub subfamily_noise: f64,
    /// Idiosyncratic multiplicative log-normal noise per occupation.
    pub occupation_noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            occupations: 50,
            requirements: 10,
            missing_rate: 0.4,
            // Small enough that every group's feasible shock box is several
            // sigma wide, so standardized batches never need a scale fallback.
            sigma_e: 0.01,
            seed: 7,
            min_value: 0.02,
            min_levels: 3,
            max_levels: 6,
            tilt_scale: 1.0,
            subfamily_noise: 0.15,
            occupation_noise: 0.15,
        }
    }
}

/// Ground truth for one estimate, kept for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRow {
    pub occupation: String,
    pub additive_group: u32,
    pub level: String,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub mapping: Vec<MappingEntry>,
    /// Observed records only; hidden estimates have no row at all, the way
    /// a raw extract omits unlisted observations.
    pub known_records: Vec<SurveyRecord>,
    pub truth: Vec<TruthRow>,
}

const SOC2_POOL: [&str; 22] = [
    "11", "13", "15", "17", "19", "21", "23", "25", "27", "29", "31", "33", "35", "37", "39",
    "41", "43", "45", "47", "49", "51", "53",
];

const LEVEL_LADDER: [&str; 6] =
    ["NOT PRESENT", "SELDOM", "OCCASIONALLY", "FREQUENTLY", "CONSTANTLY", "SUSTAINED"];

fn occupation_name(i: usize) -> String {
    format!("Occupation {i:03}")
}

fn soc_code(i: usize) -> String {
    // Six occupations per 2-digit family, two 3-digit subfamilies of three.
    let family = i / 6;
    let soc2 = SOC2_POOL[family % SOC2_POOL.len()];
    let sub = (i % 6) / 3 + 1;
    format!("{soc2}{sub}{i:03}")
}

pub fn generate(spec: &SynthSpec) -> SynthOutput {
    assert!(spec.occupations > 0 && spec.requirements > 0);
    assert!((0.0..1.0).contains(&spec.missing_rate));
    assert!(spec.min_levels >= 2 && spec.max_levels >= spec.min_levels);
    assert!(spec.max_levels <= LEVEL_LADDER.len());

    let categories = [ReqCategory::Edu, ReqCategory::Env, ReqCategory::Phy];
    let mut mapping = Vec::new();
    let mut level_counts = Vec::with_capacity(spec.requirements);
    for g in 1..=spec.requirements as u32 {
        let mut rng = seeding::stream_rng(spec.seed, &[b"levels", &g.to_le_bytes()]);
        let n_levels = rng.random_range(spec.min_levels..=spec.max_levels);
        level_counts.push(n_levels);
        for (i, level) in LEVEL_LADDER.iter().take(n_levels).enumerate() {
            let spread = (n_levels - 1).max(1) as f64;
            mapping.push(MappingEntry {
                element: format!("Requirement {g:02}"),
                level: (*level).to_owned(),
                additive_group: g,
                requirement: format!("Requirement {g:02}"),
                frequency: 2.0 + 98.0 * i as f64 / spread,
                intensity: 100.0 * (i + 1) as f64 / n_levels as f64,
                category: categories[(g as usize - 1) % categories.len()],
            });
        }
    }

    let mut known_records = Vec::new();
    let mut truth = Vec::new();
    for occ_idx in 0..spec.occupations {
        let occupation = occupation_name(occ_idx);
        let soc = soc_code(occ_idx);
        let (soc2, soc3) = (&soc[..2], &soc[..3]);

        for g in 1..=spec.requirements as u32 {
            let n_levels = level_counts[g as usize - 1];
            let weights = true_distribution(spec, soc2, soc3, occ_idx, g, n_levels);

            for (slot, &value) in weights.iter().enumerate() {
                let level = LEVEL_LADDER[slot].to_owned();
                truth.push(TruthRow {
                    occupation: occupation.clone(),
                    additive_group: g,
                    level: level.clone(),
                    value,
                });
                let mut mask_rng = seeding::stream_rng(
                    spec.seed,
                    &[
                        b"mask",
                        occupation.as_bytes(),
                        &g.to_le_bytes(),
                        &(slot as u64).to_le_bytes(),
                    ],
                );
                if mask_rng.random::<f64>() >= spec.missing_rate {
                    known_records.push(SurveyRecord {
                        occupation: occupation.clone(),
                        soc_code: soc.clone(),
                        element: format!("Requirement {g:02}"),
                        level,
                        additive_group: g,
                        value: Some(value),
                        std_error: Some(spec.sigma_e),
                        origin: Origin::Observed,
                    });
                }
            }
        }
    }

    SynthOutput { mapping, known_records, truth }
}

/// Latent profile: a family-level Dirichlet base, warped multiplicatively at
/// the subfamily and occupation layers, tilted along the level ladder by a
/// per-occupation trait, floored and renormalized.
///
/// The tilt is shared across every requirement of an occupation, so a model
/// that sees the occupation's known values elsewhere can recover structure
/// that no single-requirement donor carries.
fn true_distribution(
    spec: &SynthSpec,
    soc2: &str,
    soc3: &str,
    occ_idx: usize,
    group: u32,
    n_levels: usize,
) -> Vec<f64> {
    let gid = group.to_le_bytes();
    let mut base_rng = seeding::stream_rng(spec.seed, &[b"profile", soc2.as_bytes(), &gid]);
    let gamma = Gamma::new(1.2, 1.0).unwrap();
    let mut weights: Vec<f64> = (0..n_levels).map(|_| gamma.sample(&mut base_rng)).collect();

    let mut sub_rng = seeding::stream_rng(spec.seed, &[b"subprofile", soc3.as_bytes(), &gid]);
    for w in &mut weights {
        let z: f64 = StandardNormal.sample(&mut sub_rng);
        *w *= (spec.subfamily_noise * z).exp();
    }

    let mut tilt_rng =
        seeding::stream_rng(spec.seed, &[b"tilt", &(occ_idx as u64).to_le_bytes()]);
    let tilt: f64 = {
        let z: f64 = StandardNormal.sample(&mut tilt_rng);
        spec.tilt_scale * z
    };
    let spread = (n_levels - 1).max(1) as f64;
    for (l, w) in weights.iter_mut().enumerate() {
        let position = 2.0 * l as f64 / spread - 1.0;
        *w *= (tilt * position).exp();
    }

    let mut occ_rng = seeding::stream_rng(
        spec.seed,
        &[b"occprofile", &(occ_idx as u64).to_le_bytes(), &gid],
    );
    for w in &mut weights {
        let z: f64 = StandardNormal.sample(&mut occ_rng);
        *w *= (spec.occupation_noise * z).exp();
    }

    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w = (*w / total).max(spec.min_value);
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    weights
}

#[derive(Serialize)]
struct MappingFileOut<'a> {
    entry: &'a [MappingEntry],
}

/// Serialize the generated mapping as a loadable config.
pub fn mapping_toml(mapping: &[MappingEntry]) -> String {
    toml::to_string(&MappingFileOut { entry: mapping }).expect("mapping serializes")
}

/// Write the observed records as a raw extract in the long layout, with a
/// summary occupation and non-percent rows mixed in the way real extracts
/// carry them.
pub fn write_raw_extract<W: std::io::Write>(
    writer: W,
    output: &SynthOutput,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "occupation_text",
        "upper_soc_code",
        "data_element_text",
        "data_type_text",
        "additive_group",
        "estimate_type_text",
        "estimate_type",
        "unit_of_measure",
        "value",
    ])?;
    // Shortest round-trip formatting: the parser divides by 100 and group
    // sums must come back within the 1e-9 tolerance.
    for r in &output.known_records {
        let value = r.value.expect("synthetic known records carry values");
        let base = [
            r.occupation.as_str(),
            r.soc_code.as_str(),
            r.element.as_str(),
            r.level.as_str(),
        ];
        let group = r.additive_group.to_string();
        w.write_record(
            base.iter()
                .copied()
                .chain([group.as_str(), "Estimate", "Percent", "Percentage"])
                .chain([(value * 100.0).to_string().as_str()]),
        )?;
        let se = r.std_error.expect("synthetic known records carry errors");
        w.write_record(
            base.iter()
                .copied()
                .chain([group.as_str(), "Standard Error", "Percent", "Percentage"])
                .chain([(se * 100.0).to_string().as_str()]),
        )?;
    }
    // Summary and non-percent rows the parser must drop.
    w.write_record([
        "All Workers",
        "000000",
        "Requirement 01",
        LEVEL_LADDER[0],
        "1",
        "Estimate",
        "Percent",
        "Percentage",
        "50",
    ])?;
    w.write_record([
        "Occupation 000",
        &soc_code(0),
        "Hours worked",
        "DAILY",
        "99",
        "Estimate",
        "Mean",
        "Hours",
        "8",
    ])?;
    w.flush()?;
    Ok(())
}

pub const TRUTH_HEADER: [&str; 4] = ["occupation", "additive_group", "level", "value"];

pub fn write_truth<W: std::io::Write>(writer: W, truth: &[TruthRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRUTH_HEADER)?;
    for t in truth {
        w.write_record([
            t.occupation.as_str(),
            &t.additive_group.to_string(),
            t.level.as_str(),
            &t.value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth<R: std::io::Read>(reader: R) -> Result<Vec<TruthRow>, csv::Error> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<(String, u32, String, f64)>() {
        let (occupation, additive_group, level, value) = row?;
        out.push(TruthRow { occupation, additive_group, level, value });
    }
    Ok(out)
}
