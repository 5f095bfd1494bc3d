//! Initial predictions for missing values.
//!
//! The naive path spreads a group's residual mass equally over its missing
//! members. The smart path transfers structure from the best-known
//! distribution among occupations sharing a SOC prefix: levels the donor
//! knows but the job does not receive a scaled share of the donor's mass,
//! and levels unknown to both split whatever remains. Either way the group
//! ends up summing to one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// How a guessed value was produced. The weighting schedules key off this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GuessKind {
    /// Equal spread of residual mass (including remainder spreads inside the
    /// smart procedure and its fallbacks).
    Naive,
    /// Donor-transferred share.
    Smart,
    /// Donor's known value copied into a job with no information.
    KnownCopied,
}

/// A guessed value for one missing slot of a group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuessAssignment {
    /// Index of the level within the group's canonical level order.
    pub slot: usize,
    pub value: f64,
    pub kind: GuessKind,
}

fn known_sum(values: &[Option<f64>]) -> f64 {
    values.iter().flatten().sum()
}

fn residual(values: &[Option<f64>]) -> f64 {
    (1.0 - known_sum(values)).clamp(0.0, 1.0)
}

/// Spread the group's residual equally over its missing slots.
pub fn naive_guess(values: &[Option<f64>]) -> Vec<GuessAssignment> {
    let missing: Vec<usize> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_none())
        .map(|(i, _)| i)
        .collect();
    if missing.is_empty() {
        return Vec::new();
    }
    let share = residual(values) / missing.len() as f64;
    missing
        .into_iter()
        .map(|slot| GuessAssignment { slot, value: share, kind: GuessKind::Naive })
        .collect()
}

/// Signalled when no occupation in a SOC pool knows anything about a
/// requirement; the caller falls back to the naive guess.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoDonor;

/// Pick the distribution with the most known values out of `candidates`
/// (each one level-aligned). Ties are averaged element-wise over the donors
/// that know each level, then rescaled to sum to one over the union
/// support.
pub fn best_distribution(candidates: &[&[Option<f64>]]) -> Result<Vec<Option<f64>>, NoDonor> {
    let best_count = candidates
        .iter()
        .map(|c| c.iter().filter(|v| v.is_some()).count())
        .max()
        .unwrap_or(0);
    if best_count == 0 {
        return Err(NoDonor);
    }
    let tied: Vec<&&[Option<f64>]> = candidates
        .iter()
        .filter(|c| c.iter().filter(|v| v.is_some()).count() == best_count)
        .collect();
    if tied.len() == 1 {
        return Ok(tied[0].to_vec());
    }

    let n_levels = tied[0].len();
    let mut averaged: Vec<Option<f64>> = vec![None; n_levels];
    for slot in 0..n_levels {
        let known: Vec<f64> = tied.iter().filter_map(|c| c[slot]).collect();
        if !known.is_empty() {
            averaged[slot] = Some(known.iter().sum::<f64>() / known.len() as f64);
        }
    }
    let total = known_sum(&averaged);
    if total > 0.0 {
        for v in averaged.iter_mut().flatten() {
            *v /= total;
        }
    }
    Ok(averaged)
}

/// Transfer the donor's structure onto one job. `job` and `donor` are
/// aligned on the group's canonical level order.
pub fn smart_guess(job: &[Option<f64>], donor: &[Option<f64>]) -> Vec<GuessAssignment> {
    assert_eq!(job.len(), donor.len(), "job and donor must share the level set");

    let job_has_info = job.iter().any(|v| v.is_some());
    if !job_has_info {
        // Copy the donor's knowns, then spread what is left naively.
        let mut out = Vec::new();
        let mut copied_sum = 0.0;
        let mut open_slots = Vec::new();
        for (slot, v) in donor.iter().enumerate() {
            match v {
                Some(v) => {
                    let v = v.clamp(0.0, 1.0);
                    copied_sum += v;
                    out.push(GuessAssignment { slot, value: v, kind: GuessKind::KnownCopied });
                }
                None => open_slots.push(slot),
            }
        }
        let remainder = (1.0 - copied_sum).max(0.0);
        if open_slots.is_empty() {
            // Donor covered every level; rescale the copies onto the simplex.
            if copied_sum > 0.0 {
                for a in &mut out {
                    a.value /= copied_sum;
                }
            }
        } else {
            let share = remainder / open_slots.len() as f64;
            for slot in open_slots {
                out.push(GuessAssignment { slot, value: share, kind: GuessKind::Naive });
            }
        }
        out.sort_by_key(|a| a.slot);
        return out;
    }

    // Level classes against the donor.
    let mut known_both = 0.0; // job values on levels the donor also knows
    let mut donor_known_both = 0.0; // donor values on those same levels
    let mut overlap = false;
    let mut donor_only_sum = 0.0; // donor values on levels the job lacks
    let mut donor_only_slots = Vec::new();
    let mut missing_both_slots = Vec::new();
    for (slot, (j, d)) in job.iter().zip(donor).enumerate() {
        match (j, d) {
            (Some(j), Some(d)) => {
                known_both += j;
                donor_known_both += d;
                overlap = true;
            }
            (Some(_), None) => {}
            (None, Some(d)) => {
                donor_only_sum += d;
                donor_only_slots.push(slot);
            }
            (None, None) => missing_both_slots.push(slot),
        }
    }

    let group_residual = residual(job);
    let denominator = 1.0 - donor_known_both;
    if !overlap || denominator <= f64::EPSILON {
        return naive_guess(job);
    }

    // Scaled transfer of the donor-only mass, bounded by the residual.
    let scale = (1.0 - known_both) / denominator;
    let mut transfer = (scale * donor_only_sum).clamp(0.0, group_residual);
    if missing_both_slots.is_empty() {
        // Nothing else can absorb the remainder, so the donor-known levels
        // take the whole residual.
        transfer = group_residual;
    }

    let mut out = Vec::new();
    if !donor_only_slots.is_empty() {
        let share = transfer / donor_only_slots.len() as f64;
        for slot in donor_only_slots {
            out.push(GuessAssignment { slot, value: share, kind: GuessKind::Smart });
        }
    }
    if !missing_both_slots.is_empty() {
        let leftover = (group_residual - transfer).max(0.0);
        let share = leftover / missing_both_slots.len() as f64;
        for slot in missing_both_slots {
            out.push(GuessAssignment { slot, value: share, kind: GuessKind::Naive });
        }
    }
    out.sort_by_key(|a| a.slot);
    out
}

/// Donor pools: occupations keyed by SOC prefix, per additive group.
///
/// `distributions` maps (prefix, additive group) to the level-aligned value
/// views of every member occupation, in occupation order.
pub struct DonorPools<'a> {
    pools: BTreeMap<(&'a str, u32), Vec<(&'a str, Vec<Option<f64>>)>>,
}

impl<'a> DonorPools<'a> {
    pub fn new() -> Self {
        DonorPools { pools: BTreeMap::new() }
    }

    pub fn insert(
        &mut self,
        prefix: &'a str,
        additive_group: u32,
        occupation: &'a str,
        values: Vec<Option<f64>>,
    ) {
        self.pools
            .entry((prefix, additive_group))
            .or_default()
            .push((occupation, values));
    }

    /// Best distribution in the pool holding (`prefix`, `group`).
    pub fn best(&self, prefix: &str, group: u32) -> Result<Vec<Option<f64>>, NoDonor> {
        let pool = self.pools.get(&(prefix, group)).ok_or(NoDonor)?;
        let views: Vec<&[Option<f64>]> = pool.iter().map(|(_, v)| v.as_slice()).collect();
        best_distribution(&views)
    }
}

impl<'a> Default for DonorPools<'a> {
    fn default() -> Self {
        Self::new()
    }
}
