//! Closed-form performance expressions: the PLR floor caused by empty
//! batteries, average AoI, age-violation probability and throughput.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{activation_prob, SystemConfig};

/// `C(x, l) / C(M, l)`: probability that the last of `l` distinct uniformly
/// chosen slots has index at most `x`. Degree 0 has no last replica and is
/// treated as always "before" any slot.
pub fn last_replica_cdf(degree: u32, frame_length: u32, x: i64) -> Result<f64> {
    if degree > frame_length {
        return Err(Error::OutOfRange(format!(
            "degree {degree} exceeds frame length {frame_length}"
        )));
    }
    if degree == 0 || x >= frame_length as i64 {
        return Ok(1.0);
    }
    if x < degree as i64 {
        return Ok(0.0);
    }
    Ok(falling_ratio(x as f64, frame_length as f64, degree))
}

/// `x (x-1) ... (x-l+1) / (M (M-1) ... (M-l+1))`, the factorial ratio of the
/// bound written as a product so it never overflows.
fn falling_ratio(x: f64, m: f64, degree: u32) -> f64 {
    (0..degree).map(|i| (x - i as f64) / (m - i as f64)).product()
}

/// Slot of the first harvested unit, conditioned on at least one harvest in
/// the frame.
pub fn first_energy_pmf(harvest_prob: f64, frame_length: u32, y: u32) -> Result<f64> {
    if !(harvest_prob > 0.0 && harvest_prob <= 1.0) {
        return Err(Error::OutOfRange(format!(
            "harvest probability {harvest_prob} must be in (0, 1]"
        )));
    }
    if y == 0 || y > frame_length {
        return Err(Error::OutOfRange(format!("slot {y} outside [1, {frame_length}]")));
    }
    let stay = 1.0 - harvest_prob;
    let some_harvest = activation_prob(harvest_prob, frame_length);
    Ok(stay.powi(y as i32 - 1) * harvest_prob / some_harvest)
}

/// Lower bound on the packet loss ratio from frames in which every intended
/// replica of a device that starts with an empty battery is dropped.
///
/// `row_empty` is the degree distribution used at battery level 0 and
/// `phi_empty` the steady-state probability of starting a frame empty.
pub fn plr_lower_bound(config: &SystemConfig, row_empty: &[f64], phi_empty: f64) -> Result<f64> {
    config.validate()?;
    if config.battery.is_unlimited() {
        return Ok(0.0);
    }
    if !(0.0..=1.0).contains(&phi_empty) {
        return Err(Error::OutOfRange(format!("phi_0 = {phi_empty}")));
    }
    let m = config.frame_length;
    let eta = config.harvest_prob;
    let stay = 1.0 - eta;
    let mut inner = 0.0;
    for y in 1..=m {
        let first_harvest = eta * stay.powi(y as i32 - 1);
        if first_harvest == 0.0 {
            break;
        }
        let dropped: f64 = row_empty
            .iter()
            .enumerate()
            .map(|(l, p)| {
                let l = l as u32;
                // All replicas sit before slot y; impossible when y <= l.
                if l == 0 {
                    *p
                } else if y <= l {
                    0.0
                } else {
                    p * falling_ratio(y as f64 - 1.0, m as f64, l)
                }
            })
            .sum();
        inner += first_harvest * dropped;
    }
    Ok(phi_empty * (inner + stay.powi(m as i32)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AoiInputs {
    pub update_prob: f64,
    pub frame_length: u32,
    /// Packet loss ratio P_e.
    pub loss: f64,
}

impl AoiInputs {
    pub fn new(update_prob: f64, frame_length: u32, loss: f64) -> Self {
        Self {
            update_prob,
            frame_length,
            loss,
        }
    }

    pub fn from_config(config: &SystemConfig, loss: f64) -> Self {
        Self::new(config.update_prob, config.frame_length, loss)
    }

    pub fn sigma(&self) -> f64 {
        activation_prob(self.update_prob, self.frame_length)
    }

    /// Probability that the AoI is reset at the end of a frame.
    pub fn xi(&self) -> f64 {
        self.sigma() * (1.0 - self.loss)
    }
}

/// Time-average AoI, `1/alpha + M (3/2 + 1/xi - 1/sigma)`; infinite when the
/// AoI is never reset.
pub fn average_aoi(inputs: &AoiInputs) -> f64 {
    let xi = inputs.xi();
    if inputs.update_prob <= 0.0 || xi <= 0.0 {
        return f64::INFINITY;
    }
    let m = inputs.frame_length as f64;
    1.0 / inputs.update_prob + m * (1.5 + 1.0 / xi - 1.0 / inputs.sigma())
}

/// Steady-state probability that the end-of-frame AoI plus one frame exceeds
/// `theta` slots.
pub fn aoi_violation_prob(theta: u64, inputs: &AoiInputs) -> f64 {
    let m = inputs.frame_length as u64;
    if theta <= 2 * m {
        return 1.0;
    }
    let sigma = inputs.sigma();
    if sigma <= 0.0 {
        return 1.0;
    }
    let xi = inputs.xi();
    let frames = (theta / m - 2) as i32;
    let rem = (theta % m) as i32;
    let tail = activation_prob(inputs.update_prob, rem as u32 + 1);
    (1.0 - xi).powi(frames) * (1.0 - tail * xi / sigma)
}

/// Decoded packets per slot.
pub fn throughput(load: f64, loss: f64) -> f64 {
    load * (1.0 - loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Capacity;
    use proptest::prelude::*;
    use rand::{seq::index::sample, Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn reference(alpha_u: f64, eta_m: f64) -> SystemConfig {
        SystemConfig::reference().with_alpha_u(alpha_u).with_eta_m(eta_m)
    }

    #[test]
    fn cdf_examples() {
        for x in 1..=7 {
            assert!((last_replica_cdf(1, 7, x).unwrap() - x as f64 / 7.0).abs() < 1e-15);
        }
        for l in 1..=5 {
            assert_eq!(last_replica_cdf(l, 5, 5).unwrap(), 1.0);
        }
        // Enumerated: among the C(5,2)=10 pairs only {1,2} has max <= 2.
        let count = (1..=5)
            .flat_map(|a| (a + 1..=5).map(move |b| (a, b)))
            .filter(|&(_, b)| b <= 2)
            .count();
        assert_eq!(count, 1);
        assert!((last_replica_cdf(2, 5, 2).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(last_replica_cdf(3, 5, 2).unwrap(), 0.0);
        assert!(last_replica_cdf(6, 5, 2).is_err());
    }

    #[test]
    fn pmf_examples() {
        assert_eq!(first_energy_pmf(0.3, 1, 1).unwrap(), 1.0);
        assert_eq!(first_energy_pmf(1.0, 10, 1).unwrap(), 1.0);
        assert_eq!(first_energy_pmf(1.0, 10, 2).unwrap(), 0.0);
        // Enumerated outcomes with at least one harvest: HH, HT, TH.
        assert!((first_energy_pmf(0.5, 2, 1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((first_energy_pmf(0.5, 2, 2).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(first_energy_pmf(0.0, 10, 1).is_err());
        assert!(first_energy_pmf(0.5, 10, 11).is_err());
    }

    #[test]
    fn bound_edges() {
        let cfg = reference(1.0, 2.0);
        let row = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        assert_eq!(plr_lower_bound(&cfg, &row, 0.0).unwrap(), 0.0);
        let mut always = cfg.clone();
        always.harvest_prob = 1.0;
        let row = [0.3, 0.0, 0.7, 0.0, 0.0, 0.0];
        assert!((plr_lower_bound(&always, &row, 0.4).unwrap() - 0.4 * 0.3).abs() < 1e-15);
        let mut unlimited = cfg;
        unlimited.battery = Capacity::Unlimited;
        assert_eq!(plr_lower_bound(&unlimited, &row, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn bound_with_degree_zero_at_empty_battery_is_phi0() {
        // Lambda_0(x) = 1: every frame that starts empty discards its packet.
        let cfg = reference(1.0, 2.0);
        let b = plr_lower_bound(&cfg, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0.0143481).unwrap();
        assert!((b - 0.0143481).abs() < 1e-15);
    }

    #[test]
    fn bound_assembly_identity() {
        let cfg = reference(1.0, 2.0);
        let rows: [[f64; 6]; 3] = [
            [0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            [0.1, 0.2, 0.3, 0.2, 0.1, 0.1],
            [0.0, 0.5, 0.0, 0.0, 0.0, 0.5],
        ];
        let eta = cfg.harvest_prob;
        let m = cfg.frame_length;
        let some = 1.0 - (1.0 - eta).powi(m as i32);
        for row in rows {
            let phi0 = 0.37;
            let direct = plr_lower_bound(&cfg, &row, phi0).unwrap();
            let mut assembled = 0.0;
            for (l, p) in row.iter().enumerate() {
                for y in 1..=m {
                    assembled +=
                        p * first_energy_pmf(eta, m, y).unwrap() * last_replica_cdf(l as u32, m, y as i64 - 1).unwrap();
                }
            }
            let assembled = phi0 * (some * assembled + (1.0 - eta).powi(m as i32));
            assert!((direct - assembled).abs() < 1e-12, "{direct} vs {assembled}");
        }
    }

    #[test]
    fn all_dropped_probability_matches_simulation() {
        // Oracle: empty battery, degree 3, harvest-then-transmit per slot;
        // count frames in which no replica goes out.
        let m = 100u32;
        let eta = 0.02;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(21);
        let trials = 400_000;
        let mut all_dropped = 0;
        for _ in 0..trials {
            let mut slots: Vec<usize> = sample(&mut rng, m as usize, 3).into_vec();
            slots.sort_unstable();
            let mut battery = 0;
            let mut sent = 0;
            let mut next = 0;
            for s in 0..m as usize {
                if rng.random::<f64>() < eta {
                    battery += 1;
                }
                if next < 3 && slots[next] == s {
                    next += 1;
                    if battery > 0 {
                        battery -= 1;
                        sent += 1;
                    }
                }
            }
            if sent == 0 {
                all_dropped += 1;
            }
        }
        let freq = all_dropped as f64 / trials as f64;
        let cfg = reference(1.0, 2.0);
        let bound = plr_lower_bound(&cfg, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0], 1.0).unwrap();
        let se = (bound * (1.0 - bound) / trials as f64).sqrt();
        assert!((freq - bound).abs() < 4.0 * se, "{freq} vs {bound}");
    }

    #[test]
    fn aoi_collapses_with_certain_updates() {
        let inputs = AoiInputs::new(1.0, 100, 0.0);
        assert!((average_aoi(&inputs) - 151.0).abs() < 1e-9);
        assert_eq!(average_aoi(&AoiInputs::new(0.001, 100, 1.0)), f64::INFINITY);
    }

    #[test]
    fn aoi_reference_point() {
        let inputs = AoiInputs::new(0.0007, 100, 0.082893);
        assert!((average_aoi(&inputs) / 1000.0 - 1.7122).abs() < 1e-4);
        let avp = aoi_violation_prob(10_000, &inputs);
        assert!((avp - 1.8817e-3).abs() / 1.8817e-3 < 0.01, "{avp}");
        let load = 1000.0 * inputs.sigma() / 100.0;
        assert!((throughput(load, 0.082893) - 0.6202).abs() < 1e-3);
    }

    #[test]
    fn avp_threshold_branch() {
        let inputs = AoiInputs::new(0.001, 100, 0.2);
        assert_eq!(aoi_violation_prob(200, &inputs), 1.0);
        assert_eq!(aoi_violation_prob(1, &inputs), 1.0);
        assert!(aoi_violation_prob(201, &inputs) < 1.0);
    }

    /// Single device, Bernoulli(alpha) arrivals, every frame packet delivered
    /// at the end of the next frame. Continuous-time average of the age.
    fn simulate_single_device_aoi(alpha: f64, m: u64, slots: u64, seed: u64) -> f64 {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut last_gen: i64 = -((1.0 / alpha) as i64);
        let mut pending: Option<i64> = None;
        let mut latest_in_frame: Option<i64> = None;
        let mut area = 0.0;
        for tau in 0..slots as i64 {
            if rng.random::<f64>() < alpha {
                latest_in_frame = Some(tau);
            }
            area += (tau - last_gen) as f64 + 0.5;
            if (tau as u64 + 1).is_multiple_of(m) {
                if let Some(g) = pending.take() {
                    last_gen = g;
                }
                pending = latest_in_frame.take();
            }
        }
        area / slots as f64
    }

    #[test]
    fn aoi_matches_single_device_simulation() {
        for (alpha, slots) in [(0.01, 20_000_000), (0.001, 100_000_000)] {
            let emp = simulate_single_device_aoi(alpha, 100, slots, 17);
            let analytic = average_aoi(&AoiInputs::new(alpha, 100, 0.0));
            assert!((emp - analytic).abs() / analytic < 0.005, "{emp} vs {analytic}");
        }
    }

    proptest! {
        #[test]
        fn cdf_monotone(l in 1u32..8, m in 8u32..300) {
            let mut prev = 0.0;
            for x in 0..=m as i64 {
                let c = last_replica_cdf(l, m, x).unwrap();
                prop_assert!(c >= prev - 1e-15);
                prev = c;
            }
            prop_assert_eq!(prev, 1.0);
        }

        #[test]
        fn pmf_normalized(eta in 1e-4f64..1.0, m in 1u32..500) {
            let s: f64 = (1..=m).map(|y| first_energy_pmf(eta, m, y).unwrap()).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn avp_is_probability(theta in 0u64..50_000, alpha in 1e-5f64..0.1, loss in 0.0f64..1.0) {
            let p = aoi_violation_prob(theta, &AoiInputs::new(alpha, 100, loss));
            prop_assert!((0.0..=1.0 + 1e-12).contains(&p));
        }
    }
}
