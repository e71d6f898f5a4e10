//! Markov chain of the frame-initial battery level under AVOID.
//!
//! Under AVOID a device never intends more replicas than its initial
//! battery holds, so the energy spent in a frame equals the drawn degree and
//! the next initial level only depends on that spend and the number of units
//! harvested during the frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DegreeDistribution, SystemConfig};

/// Row-sum tolerance of the transition matrix.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Required `||phi P - phi||_1` of a returned steady state.
pub const STEADY_STATE_TOL: f64 = 1e-10;

/// `rows[b][l]`: probability of spending `l` units in a frame that starts at battery `b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpendDistribution {
    pub rows: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryChain {
    pub transition: Vec<Vec<f64>>,
    pub steady_state: Vec<f64>,
}

impl BatteryChain {
    /// Builds the chain for an AVOID scenario and solves for its steady state.
    pub fn avoid(config: &SystemConfig, dist: &DegreeDistribution) -> Result<Self> {
        let spend = spend_distribution(dist, config.activation_prob())?;
        let transition = transition_matrix(config, &spend)?;
        let steady_state = steady_state(&transition)?;
        Ok(Self {
            transition,
            steady_state,
        })
    }
}

pub fn spend_distribution(dist: &DegreeDistribution, sigma: f64) -> Result<SpendDistribution> {
    dist.check_avoid_mask()?;
    if !(0.0..=1.0).contains(&sigma) {
        return Err(Error::OutOfRange(format!("activation probability {sigma}")));
    }
    let rows = dist
        .rows()
        .iter()
        .map(|row| {
            let mut spend: Vec<f64> = row.iter().map(|p| sigma * p).collect();
            spend[0] = 1.0 - sigma + sigma * row[0];
            spend
        })
        .collect();
    Ok(SpendDistribution { rows })
}

/// Binomial probability of `k` successes in `n` trials, zero outside `[0, n]`.
pub fn binomial_pmf(k: i64, n: u32, p: f64) -> f64 {
    if k < 0 || k > n as i64 {
        return 0.0;
    }
    let k = k as u32;
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let k_small = k.min(n - k);
    let ln_choose: f64 = (1..=k_small).map(|i| ((n - k_small + i) as f64 / i as f64).ln()).sum();
    (ln_choose + k as f64 * p.ln() + (n - k) as f64 * (-p).ln_1p()).exp()
}

/// Transition matrix of the initial battery level.
///
/// For `b2 < E` the device must harvest exactly `b2 - b1 + l` units; the
/// `b2 = E` column takes the remaining mass of the row.
pub fn transition_matrix(config: &SystemConfig, spend: &SpendDistribution) -> Result<Vec<Vec<f64>>> {
    let capacity = config.battery.finite().ok_or(Error::UnlimitedBattery)?;
    if config.max_degree >= config.frame_length {
        return Err(Error::InvalidConfig("chain needs max_degree < frame_length".into()));
    }
    let levels = capacity as usize + 1;
    if spend.rows.len() != levels {
        return Err(Error::InvalidDistribution(format!(
            "spend distribution has {} rows, expected {levels}",
            spend.rows.len()
        )));
    }
    let m = config.frame_length;
    let eta = config.harvest_prob;
    let matrix = spend
        .rows
        .iter()
        .enumerate()
        .map(|(b1, xi)| {
            let mut row = vec![0.0; levels];
            for (b2, entry) in row.iter_mut().enumerate().take(levels - 1) {
                *entry = xi
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(l, p)| p * binomial_pmf(b2 as i64 - b1 as i64 + l as i64, m, eta))
                    .sum();
            }
            let below: f64 = row[..levels - 1].iter().sum();
            row[levels - 1] = (1.0 - below).max(0.0);
            row
        })
        .collect();
    Ok(matrix)
}

/// Stationary distribution by a dense solve of the balance equations, with
/// the normalization constraint replacing one redundant equation.
pub fn steady_state(transition: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_stochastic(transition)?;
    check_single_closed_class(transition)?;
    let n = transition.len();
    // (P^T - I) phi = 0, last equation replaced by sum(phi) = 1.
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| transition[j][i] - if i == j { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    a[n - 1] = vec![1.0; n];
    let mut rhs = vec![0.0; n];
    rhs[n - 1] = 1.0;
    let mut phi = solve_dense(a, rhs).ok_or_else(|| Error::NotErgodic("singular balance equations".into()))?;
    for p in phi.iter_mut() {
        *p = p.max(0.0);
    }
    let total: f64 = phi.iter().sum();
    phi.iter_mut().for_each(|p| *p /= total);
    let residual = stationarity_residual(transition, &phi);
    if residual >= STEADY_STATE_TOL {
        return Err(Error::NotErgodic(format!(
            "steady-state residual {residual:e} too large"
        )));
    }
    Ok(phi)
}

/// Stationary distribution by power iteration on the lazy chain `(P + I) / 2`.
pub fn steady_state_power(transition: &[Vec<f64>], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    check_stochastic(transition)?;
    check_single_closed_class(transition)?;
    let n = transition.len();
    let mut phi = vec![1.0 / n as f64; n];
    for _ in 0..max_iter {
        let stepped = vec_mat(&phi, transition);
        let next: Vec<f64> = phi.iter().zip(&stepped).map(|(a, b)| 0.5 * (a + b)).collect();
        let change: f64 = next.iter().zip(&phi).map(|(a, b)| (a - b).abs()).sum();
        phi = next;
        if change < tol && stationarity_residual(transition, &phi) < tol {
            return Ok(phi);
        }
    }
    Err(Error::NoConvergence(max_iter))
}

/// `sum_b phi_b * Lambda_{l,b}`.
pub fn average_degree_distribution(phi: &[f64], dist: &DegreeDistribution) -> Result<Vec<f64>> {
    if phi.len() != dist.num_levels() {
        return Err(Error::InvalidDistribution(format!(
            "{} battery probabilities for {} rows",
            phi.len(),
            dist.num_levels()
        )));
    }
    let mut avg = vec![0.0; dist.max_degree() + 1];
    for (weight, row) in phi.iter().zip(dist.rows()) {
        for (acc, p) in avg.iter_mut().zip(row) {
            *acc += weight * p;
        }
    }
    Ok(avg)
}

/// `||phi P - phi||_1`.
pub fn stationarity_residual(transition: &[Vec<f64>], phi: &[f64]) -> f64 {
    vec_mat(phi, transition)
        .iter()
        .zip(phi)
        .map(|(a, b)| (a - b).abs())
        .sum()
}

fn vec_mat(v: &[f64], m: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; m.len()];
    for (vi, row) in v.iter().zip(m) {
        for (o, p) in out.iter_mut().zip(row) {
            *o += vi * p;
        }
    }
    out
}

fn check_stochastic(transition: &[Vec<f64>]) -> Result<()> {
    let n = transition.len();
    if n == 0 {
        return Err(Error::OutOfRange("empty transition matrix".into()));
    }
    for (i, row) in transition.iter().enumerate() {
        if row.len() != n {
            return Err(Error::OutOfRange(format!("row {i} is not of length {n}")));
        }
        let sum: f64 = row.iter().sum();
        if row.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::OutOfRange(format!("row {i} is not a distribution")));
        }
    }
    Ok(())
}

/// The stationary vector is unique iff the chain has exactly one closed
/// communicating class.
fn check_single_closed_class(transition: &[Vec<f64>]) -> Result<()> {
    let n = transition.len();
    let mut reach = vec![vec![false; n]; n];
    for (i, row) in reach.iter_mut().enumerate() {
        let mut stack = vec![i];
        row[i] = true;
        while let Some(s) = stack.pop() {
            for (t, p) in transition[s].iter().enumerate() {
                if *p > 0.0 && !row[t] {
                    row[t] = true;
                    stack.push(t);
                }
            }
        }
    }
    let closed: Vec<usize> = (0..n)
        .filter(|&i| (0..n).all(|j| !reach[i][j] || reach[j][i]))
        .collect();
    // Members of one closed class reach each other.
    let classes = closed
        .iter()
        .enumerate()
        .filter(|(k, &i)| closed[..*k].iter().all(|&j| !reach[j][i]))
        .count();
    if classes == 1 {
        Ok(())
    } else {
        Err(Error::NotErgodic(format!(
            "{classes} closed classes, stationary distribution not unique"
        )))
    }
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            let (upper, lower) = a.split_at_mut(row);
            for (target, pivot_value) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *target -= factor * pivot_value;
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}
