//! Scenario parameters, degree distributions and the traffic quantities
//! derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row sums of a degree distribution must be within this distance of one.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Battery capacity in energy units.
///
/// `Unlimited` bypasses harvesting and battery accounting entirely: the
/// device always has energy and never harvests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Capacity {
    Finite(u32),
    Unlimited,
}

impl Capacity {
    pub fn finite(self) -> Option<u32> {
        match self {
            Capacity::Finite(e) => Some(e),
            Capacity::Unlimited => None,
        }
    }

    pub fn is_unlimited(self) -> bool {
        matches!(self, Capacity::Unlimited)
    }

    /// Number of degree-distribution rows a scenario with this capacity uses.
    pub fn num_levels(self) -> usize {
        match self {
            Capacity::Finite(e) => e as usize + 1,
            Capacity::Unlimited => 1,
        }
    }
}

impl std::fmt::Display for Capacity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Capacity::Finite(e) => write!(f, "{e}"),
            Capacity::Unlimited => f.write_str("unlimited"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub num_devices: u32,
    /// Slots per frame.
    pub frame_length: u32,
    /// Per-device, per-slot probability of a new update.
    pub update_prob: f64,
    pub battery: Capacity,
    /// Per-device, per-slot probability of harvesting one energy unit.
    pub harvest_prob: f64,
    pub max_degree: u32,
}

impl SystemConfig {
    pub fn new(
        num_devices: u32,
        frame_length: u32,
        update_prob: f64,
        battery: Capacity,
        harvest_prob: f64,
        max_degree: u32,
    ) -> Result<Self> {
        let config = Self {
            num_devices,
            frame_length,
            update_prob,
            battery,
            harvest_prob,
            max_degree,
        };
        config.validate()?;
        Ok(config)
    }

    /// The setting used throughout the evaluation: U=1000, M=100, E=2,
    /// eta*M=2, max degree 5, alpha*U=1.
    pub fn reference() -> Self {
        Self {
            num_devices: 1000,
            frame_length: 100,
            update_prob: 1e-3,
            battery: Capacity::Finite(2),
            harvest_prob: 0.02,
            max_degree: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_devices == 0 {
            return Err(Error::InvalidConfig("num_devices must be positive".into()));
        }
        if self.frame_length == 0 {
            return Err(Error::InvalidConfig("frame_length must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.update_prob) {
            return Err(Error::InvalidConfig(format!(
                "update_prob {} outside [0, 1]",
                self.update_prob
            )));
        }
        if !(0.0..=1.0).contains(&self.harvest_prob) {
            return Err(Error::InvalidConfig(format!(
                "harvest_prob {} outside [0, 1]",
                self.harvest_prob
            )));
        }
        if self.max_degree >= self.frame_length {
            return Err(Error::InvalidConfig(format!(
                "max_degree {} must be smaller than frame_length {}",
                self.max_degree, self.frame_length
            )));
        }
        Ok(())
    }

    /// Probability that a device has at least one new update in a frame.
    pub fn activation_prob(&self) -> f64 {
        activation_prob(self.update_prob, self.frame_length)
    }

    /// Average number of active devices per slot.
    pub fn channel_load(&self) -> f64 {
        self.num_devices as f64 * self.activation_prob() / self.frame_length as f64
    }

    /// Total update rate alpha*U.
    pub fn alpha_u(&self) -> f64 {
        self.update_prob * self.num_devices as f64
    }

    /// Expected energy harvested per frame, eta*M.
    pub fn eta_m(&self) -> f64 {
        self.harvest_prob * self.frame_length as f64
    }

    pub fn with_alpha_u(mut self, alpha_u: f64) -> Self {
        self.update_prob = alpha_u / self.num_devices as f64;
        self
    }

    pub fn with_eta_m(mut self, eta_m: f64) -> Self {
        self.harvest_prob = eta_m / self.frame_length as f64;
        self
    }
}

/// `1 - (1 - alpha)^M`, evaluated without cancellation for small alpha.
pub fn activation_prob(update_prob: f64, frame_length: u32) -> f64 {
    if update_prob >= 1.0 {
        return if frame_length > 0 { 1.0 } else { 0.0 };
    }
    -(frame_length as f64 * (-update_prob).ln_1p()).exp_m1()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adaptivity {
    Adaptive,
    Nonadaptive,
}

/// Conditional degree distribution: row `b` holds the probabilities of
/// intending `l = 0..=max_degree` replicas given initial battery level `b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeDistribution {
    rows: Vec<Vec<f64>>,
    adaptivity: Adaptivity,
}

impl DegreeDistribution {
    pub fn new(rows: Vec<Vec<f64>>, adaptivity: Adaptivity) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::InvalidDistribution("no rows".into()));
        };
        let width = first.len();
        if width == 0 {
            return Err(Error::InvalidDistribution("empty row".into()));
        }
        for (b, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::InvalidDistribution(format!(
                    "row {b} has {} entries, expected {width}",
                    row.len()
                )));
            }
            if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::InvalidDistribution(format!(
                    "row {b} has entry {p} outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::InvalidDistribution(format!("row {b} sums to {sum}")));
            }
        }
        if adaptivity == Adaptivity::Nonadaptive && rows.iter().any(|r| r != first) {
            return Err(Error::InvalidDistribution(
                "nonadaptive distribution with differing rows".into(),
            ));
        }
        Ok(Self { rows, adaptivity })
    }

    /// The same row for every battery level.
    pub fn nonadaptive(row: Vec<f64>, num_levels: usize) -> Result<Self> {
        Self::new(vec![row; num_levels.max(1)], Adaptivity::Nonadaptive)
    }

    pub fn adaptive(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows, Adaptivity::Adaptive)
    }

    /// Lambda(x) = x^degree for every battery level.
    pub fn regular(degree: u32, max_degree: u32, num_levels: usize) -> Result<Self> {
        if degree > max_degree {
            return Err(Error::InvalidDistribution(format!(
                "degree {degree} above max degree {max_degree}"
            )));
        }
        Self::nonadaptive(point_mass(degree as usize, max_degree as usize), num_levels)
    }

    /// Lambda_b(x) = x^min(b, max_degree): spend the whole initial battery.
    pub fn full_battery(capacity: u32, max_degree: u32) -> Self {
        let rows = (0..=capacity as usize)
            .map(|b| point_mass(b.min(max_degree as usize), max_degree as usize))
            .collect();
        Self {
            rows,
            adaptivity: Adaptivity::Adaptive,
        }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, battery: usize) -> &[f64] {
        &self.rows[battery.min(self.rows.len() - 1)]
    }

    pub fn num_levels(&self) -> usize {
        self.rows.len()
    }

    pub fn max_degree(&self) -> usize {
        self.rows[0].len() - 1
    }

    pub fn adaptivity(&self) -> Adaptivity {
        self.adaptivity
    }

    /// Row-major flattening, as stored in scenario files.
    pub fn to_row_major(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }

    /// True iff no row puts mass on a degree above its battery level.
    pub fn satisfies_avoid_mask(&self) -> bool {
        self.first_mask_violation().is_none()
    }

    pub fn check_avoid_mask(&self) -> Result<()> {
        match self.first_mask_violation() {
            None => Ok(()),
            Some((battery, degree)) => Err(Error::AvoidMaskViolated { battery, degree }),
        }
    }

    fn first_mask_violation(&self) -> Option<(usize, usize)> {
        self.rows.iter().enumerate().find_map(|(b, row)| {
            row.iter()
                .enumerate()
                .skip(b + 1)
                .find(|(_, p)| **p != 0.0)
                .map(|(l, _)| (b, l))
        })
    }

    /// Checks that the table shape matches a scenario.
    pub fn check_shape(&self, config: &SystemConfig) -> Result<()> {
        if self.max_degree() != config.max_degree as usize {
            return Err(Error::InvalidDistribution(format!(
                "table has max degree {}, config says {}",
                self.max_degree(),
                config.max_degree
            )));
        }
        let levels = config.battery.num_levels();
        let ok = match config.battery {
            Capacity::Finite(_) => self.num_levels() == levels,
            // Unlimited energy: a single row, or any nonadaptive table.
            Capacity::Unlimited => self.num_levels() == 1 || self.adaptivity == Adaptivity::Nonadaptive,
        };
        if !ok {
            return Err(Error::InvalidDistribution(format!(
                "table has {} rows, battery capacity {} needs {levels}",
                self.num_levels(),
                config.battery
            )));
        }
        Ok(())
    }
}

/// `validate_avoid_mask` as a free function over a capacity.
pub fn validate_avoid_mask(dist: &DegreeDistribution, capacity: u32) -> bool {
    dist.num_levels() == capacity as usize + 1 && dist.satisfies_avoid_mask()
}

pub(crate) fn point_mass(index: usize, max_degree: usize) -> Vec<f64> {
    let mut row = vec![0.0; max_degree + 1];
    row[index] = 1.0;
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn cfg(alpha: f64, m: u32) -> SystemConfig {
        SystemConfig {
            num_devices: 1000,
            frame_length: m,
            update_prob: alpha,
            battery: Capacity::Finite(2),
            harvest_prob: 0.02,
            max_degree: 5.min(m - 1),
        }
    }

    #[test]
    fn activation_prob_edges() {
        assert_eq!(cfg(0.0, 100).activation_prob(), 0.0);
        assert_eq!(cfg(1.0, 100).activation_prob(), 1.0);
    }

    #[test]
    fn activation_prob_matches_monte_carlo() {
        // Oracle: fraction of simulated frames with at least one Bernoulli(alpha) arrival.
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(7);
        let frames = 1_000_000;
        let hits = (0..frames)
            .filter(|_| (0..100).any(|_| rng.random::<f64>() < 0.0012))
            .count();
        let empirical = hits as f64 / frames as f64;
        // Frozen from the oracle above (0.11314 to 5 digits).
        assert!((empirical - 0.11314).abs() < 1.5e-3, "{empirical}");
        assert!((cfg(0.0012, 100).activation_prob() - 0.11314).abs() < 1e-5);
    }

    #[test]
    fn channel_load_reference_points() {
        assert_eq!(cfg(0.0, 100).channel_load(), 0.0);
        assert!((cfg(0.0012, 100).channel_load() - 1.13).abs() < 5e-3);
        assert!((cfg(0.0004, 100).channel_load() - 0.39).abs() < 5e-3);
    }

    #[test]
    fn avoid_mask_examples() {
        let full = DegreeDistribution::full_battery(2, 5);
        assert!(validate_avoid_mask(&full, 2));

        let uniform = DegreeDistribution::nonadaptive(vec![0.5, 0.5], 1).unwrap();
        assert!(!validate_avoid_mask(&uniform, 0));

        let zeros = DegreeDistribution::regular(0, 4, 3).unwrap();
        assert!(validate_avoid_mask(&zeros, 2));
        assert_eq!(
            uniform.check_avoid_mask(),
            Err(Error::AvoidMaskViolated { battery: 0, degree: 1 })
        );
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(DegreeDistribution::adaptive(vec![vec![0.5, 0.4]]).is_err());
        assert!(DegreeDistribution::adaptive(vec![vec![1.5, -0.5]]).is_err());
        assert!(DegreeDistribution::adaptive(vec![vec![1.0], vec![0.5, 0.5]]).is_err());
        assert!(DegreeDistribution::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], Adaptivity::Nonadaptive).is_err());
    }

    #[test]
    fn config_rejects_degree_at_frame_length() {
        let err = SystemConfig::new(10, 5, 0.1, Capacity::Finite(1), 0.1, 5).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
        assert!(SystemConfig::new(10, 5, 1.2, Capacity::Finite(1), 0.1, 2).is_err());
    }

    proptest! {
        #[test]
        fn activation_prob_monotone(a in 0.0..1.0f64, da in 0.0..0.1f64, m in 1u32..400, dm in 0u32..50) {
            let a2 = (a + da).min(1.0);
            prop_assert!(activation_prob(a2, m) >= activation_prob(a, m) - 1e-15);
            prop_assert!(activation_prob(a, m + dm) >= activation_prob(a, m) - 1e-15);
        }

        #[test]
        fn load_identity(a in 0.0..1.0f64, m in 2u32..400, u in 1u32..5000) {
            let c = SystemConfig { num_devices: u, frame_length: m, update_prob: a,
                battery: Capacity::Unlimited, harvest_prob: 0.0, max_degree: 1 };
            prop_assert_eq!(c.channel_load(), u as f64 * c.activation_prob() / m as f64);
        }
    }
}
