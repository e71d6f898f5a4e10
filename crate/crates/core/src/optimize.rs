//! Degree-distribution search with Nelder-Mead over softmax logits.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::analysis::{aoi_violation_prob, average_aoi, throughput, AoiInputs};
use crate::error::{Error, Result};
use crate::metrics::estimate_plr;
use crate::model::{Adaptivity, DegreeDistribution, SystemConfig};
use crate::rng::{child_seed, SimRng};
use crate::sim::{run_simulation, Scheme, SimulationSettings};

/// Quantity to minimize. Throughput is maximized through its negative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Average age per device, divided by the number of devices.
    AverageAoi,
    /// Probability that the end-of-frame age exceeds the threshold.
    Avp(u64),
    NegativeThroughput,
}

impl Objective {
    /// Objective value for a packet loss ratio measured under `config`.
    pub fn from_loss(self, config: &SystemConfig, loss: f64) -> f64 {
        let inputs = AoiInputs::from_config(config, loss);
        match self {
            Objective::AverageAoi => average_aoi(&inputs) / config.num_devices as f64,
            Objective::Avp(theta) => aoi_violation_prob(theta, &inputs),
            Objective::NegativeThroughput => -throughput(config.channel_load(), loss),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parametrization {
    /// One row per battery level.
    Adaptive,
    /// One row shared by all battery levels.
    Nonadaptive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    pub max_evals: usize,
    /// Stop once every vertex is this close (max-norm) to the best one.
    pub diameter_tol: f64,
    /// Stop once the vertex values differ by less than this.
    pub spread_tol: f64,
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            max_evals: 2000,
            diameter_tol: 1e-4,
            spread_tol: 1e-5,
            initial_step: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimplexState {
    /// `dim + 1` vertices, sorted by value.
    pub vertices: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub iterations: usize,
}

impl SimplexState {
    fn sort(&mut self) {
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        order.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b]));
        self.vertices = order.iter().map(|&i| self.vertices[i].clone()).collect();
        self.values = order.iter().map(|&i| self.values[i]).collect();
    }

    fn diameter(&self) -> f64 {
        let best = &self.vertices[0];
        self.vertices[1..]
            .iter()
            .flat_map(|v| v.iter().zip(best).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Derivative-free minimization. Non-finite objective values count as
/// `+inf`. Returns the best point seen.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], options: &NelderMeadOptions) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let evaluations = std::cell::Cell::new(0usize);
    let mut eval = |x: &[f64]| {
        evaluations.set(evaluations.get() + 1);
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let n = x0.len();
    let mut vertices = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += options.initial_step;
        vertices.push(v);
    }
    let values = vertices.iter().map(|v| eval(v)).collect();
    let mut s = SimplexState {
        vertices,
        values,
        iterations: 0,
    };
    s.sort();
    while n > 0 && s.iterations < options.max_iter {
        let spread = s.values[n] - s.values[0];
        if s.values[0] == f64::INFINITY || s.diameter() < options.diameter_tol || spread < options.spread_tol {
            break;
        }
        s.iterations += 1;
        let centroid: Vec<f64> = (0..n)
            .map(|j| s.vertices[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let along =
            |t: f64, worst: &[f64]| -> Vec<f64> { centroid.iter().zip(worst).map(|(c, w)| c + t * (c - w)).collect() };
        let worst = s.vertices[n].clone();
        let xr = along(REFLECT, &worst);
        let fr = eval(&xr);
        if fr < s.values[0] {
            let xe = along(REFLECT * EXPAND, &worst);
            let fe = eval(&xe);
            if fe < fr {
                s.vertices[n] = xe;
                s.values[n] = fe;
            } else {
                s.vertices[n] = xr;
                s.values[n] = fr;
            }
        } else if fr < s.values[n - 1] {
            s.vertices[n] = xr;
            s.values[n] = fr;
        } else {
            let (xc, fc, accept) = if fr < s.values[n] {
                let xc = along(REFLECT * CONTRACT, &worst);
                let fc = eval(&xc);
                (xc, fc, fc <= fr)
            } else {
                let xc = along(-CONTRACT, &worst);
                let fc = eval(&xc);
                (xc, fc, fc < s.values[n])
            };
            if accept {
                s.vertices[n] = xc;
                s.values[n] = fc;
            } else {
                let best = s.vertices[0].clone();
                for i in 1..=n {
                    let v: Vec<f64> = best
                        .iter()
                        .zip(&s.vertices[i])
                        .map(|(b, x)| b + SHRINK * (x - b))
                        .collect();
                    s.values[i] = eval(&v);
                    s.vertices[i] = v;
                }
            }
        }
        s.sort();
        if evaluations.get() >= options.max_evals {
            break;
        }
    }
    NelderMeadResult {
        x: s.vertices[0].clone(),
        value: s.values[0],
        iterations: s.iterations,
        evaluations: evaluations.get(),
    }
}

/// Softmax of each logit row. Row `b` covers degrees `0..row.len()`; higher
/// degrees get probability zero, which is how masked entries are expressed.
pub fn logits_to_distribution(
    logits: &[Vec<f64>],
    max_degree: usize,
    adaptivity: Adaptivity,
) -> Result<DegreeDistribution> {
    let rows = logits
        .iter()
        .map(|row| {
            if row.is_empty() || row.len() > max_degree + 1 {
                return Err(Error::InvalidDistribution(format!(
                    "logit row of length {} for max degree {max_degree}",
                    row.len()
                )));
            }
            let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut probs = vec![0.0; max_degree + 1];
            for (p, l) in probs.iter_mut().zip(row) {
                *p = (l - top).exp();
            }
            let sum: f64 = probs.iter().sum();
            probs.iter_mut().for_each(|p| *p /= sum);
            Ok(probs)
        })
        .collect::<Result<Vec<_>>>()?;
    DegreeDistribution::new(rows, adaptivity)
}

/// Maps a flat parameter vector to logit rows. The first logit of every row
/// is pinned to zero, which removes the softmax's shift invariance.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitLayout {
    row_lengths: Vec<usize>,
    max_degree: usize,
    adaptivity: Adaptivity,
    num_levels: usize,
}

impl LogitLayout {
    pub fn new(config: &SystemConfig, scheme: Scheme, parametrization: Parametrization) -> Result<Self> {
        let max_degree = config.max_degree as usize;
        let num_levels = config.battery.num_levels();
        let (row_lengths, adaptivity) = match (scheme, parametrization) {
            // The mask ties row b to degrees 0..=b, so every row is free.
            (Scheme::Avoid, _) => {
                if config.battery.is_unlimited() {
                    return Err(Error::UnlimitedBattery);
                }
                (
                    (0..num_levels).map(|b| b.min(max_degree) + 1).collect(),
                    Adaptivity::Adaptive,
                )
            }
            (_, Parametrization::Adaptive) => (vec![max_degree + 1; num_levels], Adaptivity::Adaptive),
            (_, Parametrization::Nonadaptive) => (vec![max_degree + 1], Adaptivity::Nonadaptive),
        };
        Ok(Self {
            row_lengths,
            max_degree,
            adaptivity,
            num_levels,
        })
    }

    pub fn dim(&self) -> usize {
        self.row_lengths.iter().map(|l| l - 1).sum()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut it = x.iter();
        self.row_lengths
            .iter()
            .map(|&len| std::iter::once(0.0).chain(it.by_ref().take(len - 1).copied()).collect())
            .collect()
    }

    pub fn distribution(&self, x: &[f64]) -> Result<DegreeDistribution> {
        let logits = self.logits(x);
        match self.adaptivity {
            Adaptivity::Adaptive => logits_to_distribution(&logits, self.max_degree, Adaptivity::Adaptive),
            Adaptivity::Nonadaptive => {
                let row = logits_to_distribution(&logits, self.max_degree, Adaptivity::Nonadaptive)?;
                DegreeDistribution::nonadaptive(row.row(0).to_vec(), self.num_levels)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationProblem {
    pub objective: Objective,
    pub scheme: Scheme,
    pub parametrization: Parametrization,
    /// Measured frames per objective evaluation.
    pub frames_per_call: u64,
    pub warmup: u64,
    pub restarts: usize,
    pub seed: u64,
    /// Frames of the final re-evaluation with a fresh seed; zero skips it.
    pub final_frames: u64,
    pub nelder_mead: NelderMeadOptions,
}

impl OptimizationProblem {
    pub fn new(objective: Objective, scheme: Scheme, parametrization: Parametrization, seed: u64) -> Self {
        Self {
            objective,
            scheme,
            parametrization,
            frames_per_call: 20_000,
            warmup: SimulationSettings::DEFAULT_WARMUP,
            restarts: 10,
            seed,
            final_frames: 100_000,
            nelder_mead: NelderMeadOptions::default(),
        }
    }

    /// Seed shared by every search evaluation.
    fn search_seed(&self) -> u64 {
        child_seed(self.seed, u64::MAX)
    }

    fn final_seed(&self) -> u64 {
        child_seed(self.seed, u64::MAX - 1)
    }
}

/// Simulates `dist` and maps the measured loss to the objective. Returns
/// `+inf` when no packet was generated.
pub fn evaluate(
    config: &SystemConfig,
    dist: &DegreeDistribution,
    problem: &OptimizationProblem,
    frames: u64,
    seed: u64,
) -> Result<f64> {
    let mut settings = SimulationSettings::new(problem.scheme, frames, seed);
    settings.warmup = problem.warmup;
    let report = run_simulation(config, dist, &settings)?;
    match estimate_plr(&report) {
        Ok(loss) => Ok(problem.objective.from_loss(config, loss)),
        Err(Error::NoSamples) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Serializes non-finite objective values as `"inf"`, `"-inf"` or `"nan"`
/// instead of JSON `null`, so an unbounded age stays visible.
pub mod extended_float {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Label(String),
    }

    pub fn to_repr_string(x: f64) -> Option<&'static str> {
        if x.is_nan() {
            Some("nan")
        } else if x == f64::INFINITY {
            Some("inf")
        } else if x == f64::NEG_INFINITY {
            Some("-inf")
        } else {
            None
        }
    }

    fn from_label<E: serde::de::Error>(label: &str) -> Result<f64, E> {
        match label {
            "nan" => Ok(f64::NAN),
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            other => Err(E::custom(format!(
                "expected a number, \"inf\", \"-inf\" or \"nan\", got {other:?}"
            ))),
        }
    }

    pub fn serialize<S: Serializer>(x: &f64, serializer: S) -> Result<S::Ok, S::Error> {
        match to_repr_string(*x) {
            Some(label) => serializer.serialize_str(label),
            None => serializer.serialize_f64(*x),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<f64, D::Error> {
        match Repr::deserialize(deserializer)? {
            Repr::Number(x) => Ok(x),
            Repr::Label(label) => from_label(&label),
        }
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(x: &Option<f64>, serializer: S) -> Result<S::Ok, S::Error> {
            match x {
                Some(x) => super::serialize(x, serializer),
                None => serializer.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Option<f64>, D::Error> {
            match Option::<Repr>::deserialize(deserializer)? {
                None => Ok(None),
                Some(Repr::Number(x)) => Ok(Some(x)),
                Some(Repr::Label(label)) => from_label(&label).map(Some),
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    #[serde(with = "extended_float")]
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationOutcome {
    pub distribution: DegreeDistribution,
    /// Objective of `distribution` on the search seed.
    #[serde(with = "extended_float")]
    pub value: f64,
    /// Objective of `distribution` re-evaluated on a fresh seed.
    #[serde(with = "extended_float::option")]
    pub final_value: Option<f64>,
    #[serde(with = "extended_float")]
    pub baseline_value: f64,
    pub restarts: Vec<RestartSummary>,
}

/// The fixed starting point every search must beat: three replicas (capped
/// by the max degree), or under AVOID the whole battery.
pub fn baseline_distribution(
    config: &SystemConfig,
    scheme: Scheme,
    layout: &LogitLayout,
) -> Result<DegreeDistribution> {
    match (scheme, config.battery.finite()) {
        (Scheme::Avoid, Some(e)) => Ok(DegreeDistribution::full_battery(e, config.max_degree)),
        _ => {
            let degree = config.max_degree.min(3);
            let dist = DegreeDistribution::regular(degree, config.max_degree, layout.num_levels)?;
            Ok(dist)
        }
    }
}

/// Runs the restarts, each from standard-normal logits, plus the baseline,
/// all on common random numbers; returns the best distribution found.
pub fn optimize_degree_distribution(
    config: &SystemConfig,
    problem: &OptimizationProblem,
) -> Result<OptimizationOutcome> {
    config.validate()?;
    let layout = LogitLayout::new(config, problem.scheme, problem.parametrization)?;
    let search_seed = problem.search_seed();
    let objective = |x: &[f64]| -> f64 {
        layout
            .distribution(x)
            .and_then(|d| evaluate(config, &d, problem, problem.frames_per_call, search_seed))
            .unwrap_or(f64::INFINITY)
    };
    // Surface configuration errors once instead of hiding them as +inf.
    let baseline = baseline_distribution(config, problem.scheme, &layout)?;
    let baseline_value = evaluate(config, &baseline, problem, problem.frames_per_call, search_seed)?;

    let run_restart = |r: usize| {
        let mut rng = SimRng::seed_from_u64(child_seed(problem.seed, r as u64));
        let x0: Vec<f64> = (0..layout.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
        nelder_mead(objective, &x0, &problem.nelder_mead)
    };
    #[cfg(feature = "parallel")]
    let results: Vec<NelderMeadResult> = {
        use rayon::prelude::*;
        (0..problem.restarts).into_par_iter().map(run_restart).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<NelderMeadResult> = (0..problem.restarts).map(run_restart).collect();

    let mut best = (baseline, baseline_value);
    for r in &results {
        if r.value < best.1 {
            best = (layout.distribution(&r.x)?, r.value);
        }
    }
    let final_value = if problem.final_frames > 0 {
        Some(evaluate(
            config,
            &best.0,
            problem,
            problem.final_frames,
            problem.final_seed(),
        )?)
    } else {
        None
    };
    Ok(OptimizationOutcome {
        distribution: best.0,
        value: best.1,
        final_value,
        baseline_value,
        restarts: results
            .iter()
            .map(|r| RestartSummary {
                value: r.value,
                iterations: r.iterations,
                evaluations: r.evaluations,
            })
            .collect(),
    })
}
