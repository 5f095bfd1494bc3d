//! Post-imputation analytics: requirement overlap between occupations,
//! expected level of effort (ELE), standardized ELE, and the occupation
//! correlation matrix.
//!
//! All of these read completed population distributions: the known value
//! where one was observed, the mean imputation where it was not.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::features::MappingTable;
use crate::ingest::SurveyRecord;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("distributions cover different requirements ({0} vs {1})")]
    RequirementMismatch(u32, u32),
    #[error("distributions have mismatched level sets")]
    LevelMismatch,
    #[error("group ('{occupation}', {group}) has no value for level '{level}'")]
    IncompleteDistribution { occupation: String, group: u32, level: String },
    #[error("group ('{occupation}', {group}) weights sum to {sum}, not 1")]
    NotADistribution { occupation: String, group: u32, sum: f64 },
    #[error(transparent)]
    Mapping(#[from] crate::features::MappingError),
}

const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

/// One occupation's complete level distribution for one requirement.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationDistribution {
    pub occupation: String,
    pub additive_group: u32,
    /// Levels in canonical catalog order.
    pub levels: Vec<String>,
    /// Population weights, summing to 1.
    pub weights: Vec<f64>,
}

impl PopulationDistribution {
    pub fn validate(&self) -> Result<(), AnalyticsError> {
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(AnalyticsError::NotADistribution {
                occupation: self.occupation.clone(),
                group: self.additive_group,
                sum,
            });
        }
        Ok(())
    }
}

/// Assemble complete distributions from records plus imputed means keyed by
/// record index (aligned to `records`).
pub fn build_distributions(
    records: &[SurveyRecord],
    imputed_means: &BTreeMap<usize, f64>,
) -> Result<Vec<PopulationDistribution>, AnalyticsError> {
    let mut out: Vec<PopulationDistribution> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let value = match r.value {
            Some(v) => v,
            None => match imputed_means.get(&i) {
                Some(&v) => v,
                None => {
                    return Err(AnalyticsError::IncompleteDistribution {
                        occupation: r.occupation.clone(),
                        group: r.additive_group,
                        level: r.level.clone(),
                    })
                }
            },
        };
        match out.last_mut() {
            Some(d) if d.occupation == r.occupation && d.additive_group == r.additive_group => {
                d.levels.push(r.level.clone());
                d.weights.push(value);
            }
            _ => out.push(PopulationDistribution {
                occupation: r.occupation.clone(),
                additive_group: r.additive_group,
                levels: vec![r.level.clone()],
                weights: vec![value],
            }),
        }
    }
    Ok(out)
}

/// Overlap of two occupations on one requirement: the inner product of
/// their level distributions.
pub fn overlap(
    a: &PopulationDistribution,
    b: &PopulationDistribution,
) -> Result<f64, AnalyticsError> {
    if a.additive_group != b.additive_group {
        return Err(AnalyticsError::RequirementMismatch(a.additive_group, b.additive_group));
    }
    if a.levels != b.levels {
        return Err(AnalyticsError::LevelMismatch);
    }
    Ok(a.weights.iter().zip(&b.weights).map(|(x, y)| x * y).sum())
}

/// Expected level of effort for one distribution: the population-weighted
/// sum of frequency times intensity over its levels.
pub fn ele(dist: &PopulationDistribution, table: &MappingTable) -> Result<f64, AnalyticsError> {
    let mut total = 0.0;
    for (level, weight) in dist.levels.iter().zip(&dist.weights) {
        let entry = table.lookup_group(dist.additive_group, level)?;
        total += weight * entry.frequency * entry.intensity;
    }
    Ok(total)
}

/// Per-requirement effort profile of one occupation.
#[derive(Debug, Clone, PartialEq)]
pub struct EleVector {
    pub occupation: String,
    pub soc2: String,
    /// Effort per additive group, in ascending group order.
    pub by_group: BTreeMap<u32, f64>,
}

/// Effort vectors for every occupation, built from complete distributions.
pub fn ele_vectors(
    distributions: &[PopulationDistribution],
    table: &MappingTable,
    soc2_of: impl Fn(&str) -> String,
) -> Result<Vec<EleVector>, AnalyticsError> {
    let mut by_occupation: BTreeMap<&str, BTreeMap<u32, f64>> = BTreeMap::new();
    for d in distributions {
        let e = ele(d, table)?;
        by_occupation.entry(&d.occupation).or_default().insert(d.additive_group, e);
    }
    Ok(by_occupation
        .into_iter()
        .map(|(occupation, by_group)| EleVector {
            occupation: occupation.to_owned(),
            soc2: soc2_of(occupation),
            by_group,
        })
        .collect())
}

/// Z-scores of one requirement's effort values across occupations.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedEle {
    pub z_scores: Vec<f64>,
    /// Set when the efforts have zero variance; the z-scores are then all 0.
    pub degenerate: bool,
}

pub fn standardize_ele(values: &[f64]) -> StandardizedEle {
    let n = values.len();
    if n < 2 {
        return StandardizedEle { z_scores: vec![0.0; n], degenerate: true };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd =
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    if sd == 0.0 {
        return StandardizedEle { z_scores: vec![0.0; n], degenerate: true };
    }
    StandardizedEle {
        z_scores: values.iter().map(|v| (v - mean) / sd).collect(),
        degenerate: false,
    }
}

/// Pearson correlation matrix between occupations' effort vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    /// Occupations sorted by (SOC2, name); the matrix axes.
    pub occupations: Vec<String>,
    pub soc2: Vec<String>,
    /// Row-major entries; NaN where an occupation was degenerate.
    pub entries: Vec<f64>,
    /// Occupations whose effort vector has zero variance.
    pub degenerate: Vec<bool>,
}

impl CorrelationMatrix {
    pub fn n(&self) -> usize {
        self.occupations.len()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.occupations.len() + j]
    }
}

pub fn occupation_correlation(vectors: &[EleVector]) -> CorrelationMatrix {
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    order.sort_by(|&a, &b| {
        (&vectors[a].soc2, &vectors[a].occupation).cmp(&(&vectors[b].soc2, &vectors[b].occupation))
    });

    // All vectors share the requirement index by construction; align on the
    // first vector's group set.
    let groups: Vec<u32> = vectors.first().map(|v| v.by_group.keys().copied().collect()).unwrap_or_default();
    let rows: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| groups.iter().map(|g| vectors[i].by_group.get(g).copied().unwrap_or(0.0)).collect())
        .collect();

    let n = rows.len();
    let means: Vec<f64> = rows.iter().map(|r| r.iter().sum::<f64>() / groups.len().max(1) as f64).collect();
    let sds: Vec<f64> = rows
        .iter()
        .zip(&means)
        .map(|(r, m)| r.iter().map(|v| (v - m) * (v - m)).sum::<f64>().sqrt())
        .collect();
    let degenerate: Vec<bool> = sds.iter().map(|&s| s == 0.0).collect();

    let mut entries = vec![f64::NAN; n * n];
    for i in 0..n {
        for j in i..n {
            let value = if degenerate[i] || degenerate[j] {
                f64::NAN
            } else if i == j {
                1.0
            } else {
                let cov: f64 = rows[i]
                    .iter()
                    .zip(&rows[j])
                    .map(|(a, b)| (a - means[i]) * (b - means[j]))
                    .sum();
                cov / (sds[i] * sds[j])
            };
            entries[i * n + j] = value;
            entries[j * n + i] = value;
        }
    }

    CorrelationMatrix {
        occupations: order.iter().map(|&i| vectors[i].occupation.clone()).collect(),
        soc2: order.iter().map(|&i| vectors[i].soc2.clone()).collect(),
        entries,
        degenerate,
    }
}

/// Label map for pooling additive groups in standardized-ELE outputs (for
/// requirements split across several groups).
#[derive(Debug, Clone, Default)]
pub struct PoolingMap(pub BTreeMap<u32, String>);

impl PoolingMap {
    pub fn label(&self, group: u32) -> String {
        self.0.get(&group).cloned().unwrap_or_else(|| group.to_string())
    }
}
