//! Beta-shock simulation of known estimates.
//!
//! Each occupational group's largest known value (the driver) receives
//! beta-distributed shocks moment-matched to its reported standard error;
//! the other known members absorb the shock proportionally so the group's
//! known mass is unchanged in every simulation. The small sample of shocks
//! is standardized in place, so the driver's simulated values reproduce its
//! mean and clamped standard error exactly.
//!
//! Shock batches whose standardized draws would leave [0, 1] (or force an
//! offset member negative) are redrawn from the next deterministic
//! substream, so the exactness guarantees survive the bounds.

use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use thiserror::Error;

use crate::ingest::OccupationalGroup;
use crate::seeding;

/// Batches tried per sigma level before the shock scale is halved.
const BATCH_ATTEMPTS: u32 = 1024;
/// Sigma halvings tried before the group is left unshocked.
const MAX_SHRINKS: u32 = 16;

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("moments mu={mu}, sigma={sigma} admit no beta distribution; clamp sigma first")]
    InfeasibleMoments { mu: f64, sigma: f64 },
}

/// Clamp a reported standard error to the feasible shock scale for mean
/// `mu`: anything above `mu * (1 - mu)` is pulled to 95% of that bound.
pub fn clamp_sigma(mu: f64, sigma_e: f64) -> f64 {
    let bound = mu * (1.0 - mu);
    if sigma_e <= bound {
        sigma_e
    } else {
        0.95 * bound
    }
}

/// Moment-matched beta shape parameters for mean `mu` and sd `sigma`.
pub fn beta_params(mu: f64, sigma: f64) -> Result<(f64, f64), SimulateError> {
    let infeasible = || SimulateError::InfeasibleMoments { mu, sigma };
    if !(mu > 0.0 && mu < 1.0) || !sigma.is_finite() {
        return Err(infeasible());
    }
    let var = sigma * sigma;
    if !(var > 0.0 && var < mu * (1.0 - mu)) {
        return Err(infeasible());
    }
    let nu = mu * (1.0 - mu) / var - 1.0;
    Ok((mu * nu, (1.0 - mu) * nu))
}

/// Shocked values for one group's known members.
#[derive(Debug, Clone)]
pub struct GroupShock {
    /// Index of the shocked member within the known-value slice.
    pub driver: usize,
    /// `per_sim[s][i]` is known member `i`'s value in simulation `s`.
    pub per_sim: Vec<Vec<f64>>,
    /// Shock scale actually reproduced (clamped, possibly shrunk).
    pub sigma: f64,
    /// Whether the reported sigma exceeded the feasibility bound.
    pub clamped: bool,
    /// Whether retries were exhausted and the scale halved.
    pub shrunk: bool,
}

/// Simulate one group's known values. Returns `None` when no shock applies
/// (no knowns, a zero driver, zero sigma, or fewer than two sims).
pub fn simulate_group(
    values: &[f64],
    sigma_e: f64,
    n_sims: usize,
    mut rng_for: impl FnMut(usize, u32) -> ChaCha8Rng,
) -> Option<GroupShock> {
    if values.is_empty() || n_sims < 2 {
        return None;
    }
    let mut driver = 0usize;
    for (i, &v) in values.iter().enumerate() {
        if v > values[driver] {
            driver = i;
        }
    }
    let center = values[driver];
    if center <= 0.0 {
        return None;
    }
    let clamped = sigma_e > center * (1.0 - center);
    let mut sigma = clamp_sigma(center, sigma_e);
    if sigma <= 0.0 {
        return None;
    }

    let total: f64 = values.iter().sum();
    let others_sum = total - center;
    // Feasible shock interval: the driver must stay in [0, 1] and the offset
    // members must stay non-negative.
    let eps_lo = -center;
    let eps_hi = if others_sum > 0.0 { others_sum } else { 1.0 - center };

    let mut shrunk = false;
    for shrink in 0..MAX_SHRINKS {
        let Ok((alpha, beta)) = beta_params(center, sigma) else {
            return None;
        };
        let dist = rand_distr::Beta::new(alpha, beta).ok()?;
        for batch in 0..BATCH_ATTEMPTS {
            let attempt = shrink * BATCH_ATTEMPTS + batch;
            let draws: Vec<f64> = (0..n_sims)
                .map(|sim| dist.sample(&mut rng_for(sim, attempt)))
                .collect();
            let mean = draws.iter().sum::<f64>() / n_sims as f64;
            let sd = (draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
                / (n_sims as f64 - 1.0))
                .sqrt();
            if sd == 0.0 {
                continue;
            }
            let shocks: Vec<f64> = draws.iter().map(|d| (d - mean) / sd * sigma).collect();
            if shocks.iter().any(|&e| e < eps_lo || e > eps_hi) {
                continue;
            }
            let per_sim = shocks
                .iter()
                .map(|&e| {
                    values
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| {
                            if i == driver {
                                center + e
                            } else if others_sum > 0.0 {
                                v * (others_sum - e) / others_sum
                            } else {
                                v
                            }
                        })
                        .collect()
                })
                .collect();
            return Some(GroupShock { driver, per_sim, sigma, clamped, shrunk });
        }
        sigma *= 0.5;
        shrunk = true;
    }
    None
}

/// Simulated values for every known record of a corpus, record-major.
#[derive(Debug, Clone)]
pub struct SimulationSet {
    pub n_sims: usize,
    pub seed: u64,
    n_records: usize,
    values: Vec<f64>,
    /// Drivers whose reported sigma exceeded the feasibility bound.
    pub clamped_drivers: usize,
    /// Drivers whose reported sigma was inside the bound.
    pub inside_limit_drivers: usize,
    /// Groups that exhausted redraws and fell back to a smaller scale.
    pub shrunk_groups: usize,
}

impl SimulationSet {
    /// Simulated value of `record` in `sim`; `None` for missing records.
    pub fn value(&self, record: usize, sim: usize) -> Option<f64> {
        let v = self.values[record * self.n_sims + sim];
        if v.is_nan() {
            None
        } else {
            Some(v)
        }
    }

    pub fn n_records(&self) -> usize {
        self.n_records
    }
}

/// Simulate every group of a completed corpus. Record indices follow the
/// flattened group order.
pub fn simulate_groups(groups: &[OccupationalGroup], n_sims: usize, seed: u64) -> SimulationSet {
    let n_records: usize = groups.iter().map(|g| g.members.len()).sum();
    let mut values = vec![f64::NAN; n_records * n_sims.max(1)];
    let mut clamped_drivers = 0usize;
    let mut inside_limit_drivers = 0usize;
    let mut shrunk_groups = 0usize;

    let mut offset = 0usize;
    for group in groups {
        let known: Vec<(usize, f64)> = group
            .members
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.value.map(|v| (i, v)))
            .collect();
        // Every known record starts at its point value in every sim; shocked
        // groups overwrite below.
        if n_sims > 0 {
            for &(i, v) in &known {
                for sim in 0..n_sims {
                    values[(offset + i) * n_sims + sim] = v;
                }
            }
        }
        if !known.is_empty() {
            let driver_value = known.iter().map(|&(_, v)| v).fold(f64::MIN, f64::max);
            if driver_value > 0.0 {
                let sigma_e = known
                    .iter()
                    .find(|&&(_, v)| v == driver_value)
                    .and_then(|&(i, _)| group.members[i].std_error)
                    .unwrap_or(0.0);
                if sigma_e > driver_value * (1.0 - driver_value) {
                    clamped_drivers += 1;
                } else {
                    inside_limit_drivers += 1;
                }

                let known_values: Vec<f64> = known.iter().map(|&(_, v)| v).collect();
                let occupation = group.key.occupation.as_bytes();
                let group_id = group.key.additive_group.to_le_bytes();
                let shock = simulate_group(&known_values, sigma_e, n_sims, |sim, attempt| {
                    seeding::stream_rng(
                        seed,
                        &[
                            b"simulate",
                            occupation,
                            &group_id,
                            &(sim as u64).to_le_bytes(),
                            &attempt.to_le_bytes(),
                        ],
                    )
                });
                if let Some(shock) = shock {
                    if shock.shrunk {
                        shrunk_groups += 1;
                    }
                    for (sim, row) in shock.per_sim.iter().enumerate() {
                        for (ki, &v) in row.iter().enumerate() {
                            values[(offset + known[ki].0) * n_sims + sim] = v;
                        }
                    }
                }
            }
        }
        offset += group.members.len();
    }

    SimulationSet {
        n_sims,
        seed,
        n_records,
        values,
        clamped_drivers,
        inside_limit_drivers,
        shrunk_groups,
    }
}

/// Convenience sampler used by tests: one standardized batch's raw draws.
pub fn sample_beta(alpha: f64, beta: f64, rng: &mut ChaCha8Rng) -> f64 {
    rand_distr::Beta::new(alpha, beta)
        .expect("valid beta parameters")
        .sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{MappingEntry, MappingTable, ReqCategory};
    use crate::ingest::{group_records, Origin, SurveyRecord};
    use proptest::prelude::*;

    #[test]
    fn clamp_examples() {
        assert!((clamp_sigma(0.5, 0.3) - 0.2375).abs() < 1e-15);
        assert_eq!(clamp_sigma(0.5, 0.1), 0.1);
        assert_eq!(clamp_sigma(1.0, 0.1), 0.0);
    }

    #[test]
    fn beta_param_examples() {
        let (a, b) = beta_params(0.5, 0.05f64.sqrt()).unwrap();
        assert!((a - 2.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12);

        let (a, b) = beta_params(0.2, 0.2).unwrap();
        assert!((a - 0.6).abs() < 1e-12, "alpha {a}");
        assert!((b - 2.4).abs() < 1e-12, "beta {b}");

        // sigma -> 0 sends both shapes to infinity (point mass at mu).
        let (a, b) = beta_params(0.5, 1e-9).unwrap();
        assert!(a > 1e15 && b > 1e15);

        assert!(beta_params(0.5, 0.5).is_err());
        assert!(beta_params(0.0, 0.1).is_err());
    }

    fn rng_for(tag: u64) -> impl FnMut(usize, u32) -> ChaCha8Rng {
        move |sim, attempt| {
            seeding::stream_rng(
                tag,
                &[b"test", &(sim as u64).to_le_bytes(), &attempt.to_le_bytes()],
            )
        }
    }

    #[test]
    fn driver_moments_are_exact() {
        let values = [0.55, 0.25, 0.2];
        let shock = simulate_group(&values, 0.02, 10, rng_for(1)).unwrap();
        assert_eq!(shock.driver, 0);
        let drivers: Vec<f64> = shock.per_sim.iter().map(|s| s[0]).collect();
        let mean = drivers.iter().sum::<f64>() / 10.0;
        let sd = (drivers.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / 9.0).sqrt();
        assert!((mean - 0.55).abs() < 1e-9, "mean {mean}");
        assert!((sd - 0.02).abs() < 1e-9, "sd {sd}");
        assert!(!shock.clamped && !shock.shrunk);
    }

    #[test]
    fn group_sums_preserved_per_sim() {
        let values = [0.55, 0.25, 0.2];
        let shock = simulate_group(&values, 0.02, 10, rng_for(2)).unwrap();
        for sim in &shock.per_sim {
            let sum: f64 = sim.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "sum {sum}");
            assert!(sim.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn offset_members_move_against_the_driver() {
        // The documented scenario: shocking 0.95 upward forces the small
        // members down, proportionally to their size.
        let values = [0.95, 0.02, 0.03];
        let shock = simulate_group(&values, 0.01, 10, rng_for(3)).unwrap();
        for sim in &shock.per_sim {
            let eps = sim[0] - 0.95;
            assert!((sim[1] - 0.02 * (0.05 - eps) / 0.05).abs() < 1e-12);
            assert!((sim[2] - 0.03 * (0.05 - eps) / 0.05).abs() < 1e-12);
            if eps > 0.0 {
                assert!(sim[1] < 0.02 && sim[2] < 0.03);
            }
        }
        // Exact negative correlation between driver and any offset member.
        let d: Vec<f64> = shock.per_sim.iter().map(|s| s[0]).collect();
        let o: Vec<f64> = shock.per_sim.iter().map(|s| s[1]).collect();
        let dm = d.iter().sum::<f64>() / d.len() as f64;
        let om = o.iter().sum::<f64>() / o.len() as f64;
        let cov: f64 = d.iter().zip(&o).map(|(a, b)| (a - dm) * (b - om)).sum();
        let dv: f64 = d.iter().map(|a| (a - dm) * (a - dm)).sum();
        let ov: f64 = o.iter().map(|b| (b - om) * (b - om)).sum();
        let corr = cov / (dv * ov).sqrt();
        assert!((corr + 1.0).abs() < 1e-9, "corr {corr}");
    }

    #[test]
    fn zero_sigma_returns_original_values() {
        assert!(simulate_group(&[0.6, 0.4], 0.0, 10, rng_for(4)).is_none());
    }

    #[test]
    fn degenerate_groups_are_left_alone() {
        assert!(simulate_group(&[], 0.1, 10, rng_for(5)).is_none());
        assert!(simulate_group(&[0.0, 0.0], 0.1, 10, rng_for(6)).is_none());
        // A full-mass driver has no feasible shock scale.
        assert!(simulate_group(&[1.0], 0.1, 10, rng_for(7)).is_none());
        // A single sim cannot be standardized.
        assert!(simulate_group(&[0.5, 0.5], 0.1, 1, rng_for(8)).is_none());
    }

    #[test]
    fn single_known_member_is_still_shocked() {
        let shock = simulate_group(&[0.4], 0.05, 10, rng_for(9)).unwrap();
        let drivers: Vec<f64> = shock.per_sim.iter().map(|s| s[0]).collect();
        let mean = drivers.iter().sum::<f64>() / 10.0;
        assert!((mean - 0.4).abs() < 1e-9);
        assert!(drivers.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn ties_pick_the_first_member() {
        let shock = simulate_group(&[0.5, 0.5], 0.05, 10, rng_for(10)).unwrap();
        assert_eq!(shock.driver, 0);
    }

    fn toy_groups() -> Vec<OccupationalGroup> {
        let entries = (0..3)
            .map(|i| MappingEntry {
                element: "E".to_owned(),
                level: format!("L{i}"),
                additive_group: 1,
                requirement: "R".to_owned(),
                frequency: 10.0,
                intensity: 5.0,
                category: ReqCategory::Phy,
            })
            .collect();
        let table = MappingTable::from_entries(entries).unwrap();
        let rec = |level: usize, value: Option<f64>| SurveyRecord {
            occupation: "Bakers".to_owned(),
            soc_code: "513".to_owned(),
            element: "E".to_owned(),
            level: format!("L{level}"),
            additive_group: 1,
            value,
            std_error: value.map(|_| 0.02),
            origin: Origin::Observed,
        };
        group_records(
            &[rec(0, Some(0.6)), rec(1, Some(0.3)), rec(2, None)],
            &table,
        )
        .unwrap()
    }

    #[test]
    fn simulation_set_is_deterministic() {
        let groups = toy_groups();
        let a = simulate_groups(&groups, 10, 7);
        let b = simulate_groups(&groups, 10, 7);
        for r in 0..a.n_records() {
            for s in 0..10 {
                match (a.value(r, s), b.value(r, s)) {
                    (Some(x), Some(y)) => assert_eq!(x.to_bits(), y.to_bits()),
                    (None, None) => {}
                    _ => panic!("presence mismatch"),
                }
            }
        }
        let c = simulate_groups(&groups, 10, 8);
        let differs = (0..a.n_records())
            .any(|r| (0..10).any(|s| a.value(r, s) != c.value(r, s)));
        assert!(differs, "different seeds must differ");
    }

    #[test]
    fn missing_records_have_no_simulated_values() {
        let groups = toy_groups();
        let sims = simulate_groups(&groups, 10, 7);
        assert_eq!(sims.value(2, 0), None);
        assert!(sims.value(0, 0).is_some());
        assert_eq!(sims.clamped_drivers + sims.inside_limit_drivers, 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn shocked_groups_stay_bounded_and_sum_preserved(
            raw in proptest::collection::vec(0.02f64..1.0, 2..6),
            sigma_e in 0.001f64..0.2,
            seed in 0u64..1000,
        ) {
            // Normalize to a known mass <= 1 with members >= ~2%.
            let total: f64 = raw.iter().sum();
            let scale = 0.9 / total.max(0.9);
            let values: Vec<f64> = raw.iter().map(|v| v * scale).collect();
            if let Some(shock) = simulate_group(&values, sigma_e, 10, rng_for(seed)) {
                let original: f64 = values.iter().sum();
                for sim in &shock.per_sim {
                    for v in sim {
                        prop_assert!((0.0..=1.0).contains(v));
                    }
                    let sum: f64 = sim.iter().sum();
                    prop_assert!((sum - original).abs() < 1e-9);
                }
            }
        }
    }
}
