use std::fs;
use std::io::Write;
use std::path::Path;

use irsa_core::analysis::{aoi_violation_prob, average_aoi, plr_lower_bound, throughput, AoiInputs};
use irsa_core::config::Scenario;
use irsa_core::energy_chain::{average_degree_distribution, BatteryChain};
use irsa_core::metrics::{
    average_aoi_normalized, empirical_avp, empirical_battery_distribution, estimate_plr, estimate_throughput,
    SimulationReport,
};
use irsa_core::optimize::{
    extended_float, optimize_degree_distribution, Objective, OptimizationOutcome, OptimizationProblem, Parametrization,
};
use irsa_core::sim::{run_simulation, BatteryModel, SimulationSettings};
use irsa_core::{Capacity, DegreeDistribution, Scheme, SystemConfig};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::args::{AnalyzeArgs, ObjectiveArg, OptArgs, OptimizeArgs, RunArgs, SchemeArg, SimArgs, SweepArgs};
use crate::format::sig6;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<irsa_core::Error> for CliError {
    fn from(e: irsa_core::Error) -> Self {
        use irsa_core::Error as E;
        match e {
            E::InvalidConfig(_)
            | E::InvalidDistribution(_)
            | E::AvoidMaskViolated { .. }
            | E::UnlimitedBattery
            | E::ConfigFile { .. } => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// A JSON number, or a label for values JSON cannot represent.
fn number(x: f64) -> serde_json::Value {
    match extended_float::to_repr_string(x) {
        Some(label) => json!(label),
        None => json!(x),
    }
}

fn scheme_of(arg: SchemeArg) -> Scheme {
    match arg {
        SchemeArg::Avoid => Scheme::Avoid,
        SchemeArg::Identify => Scheme::Identify,
        SchemeArg::Unlimited => Scheme::Unlimited,
    }
}

fn objective_of(arg: ObjectiveArg, theta: u64) -> Objective {
    match arg {
        ObjectiveArg::Aoi => Objective::AverageAoi,
        ObjectiveArg::Avp => Objective::Avp(theta),
        ObjectiveArg::Throughput => Objective::NegativeThroughput,
    }
}

fn write_output(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => {
            fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Runtime(e.to_string()))
        }
    }
}

fn wants_json(out: Option<&Path>) -> bool {
    out.and_then(Path::extension)
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Runtime(e.to_string()))
}

/// One output line of `simulate` and `sweep`.
#[derive(Clone, Debug, Serialize)]
pub struct Row {
    #[serde(rename = "alphaU")]
    pub alpha_u: f64,
    #[serde(rename = "G")]
    pub load: f64,
    pub scheme: String,
    pub plr: f64,
    pub throughput: f64,
    pub avg_aoi_norm: f64,
    pub avp_theta: f64,
    pub plr_lower_bound: f64,
    pub seed: u64,
    pub frames: u64,
}

const HEADER: [&str; 10] = [
    "alphaU",
    "G",
    "scheme",
    "plr",
    "throughput",
    "avg_aoi_norm",
    "avp_theta",
    "plr_lower_bound",
    "seed",
    "frames",
];

impl Row {
    fn csv_fields(&self) -> Vec<String> {
        vec![
            sig6(self.alpha_u),
            sig6(self.load),
            self.scheme.clone(),
            sig6(self.plr),
            sig6(self.throughput),
            sig6(self.avg_aoi_norm),
            sig6(self.avp_theta),
            sig6(self.plr_lower_bound),
            self.seed.to_string(),
            self.frames.to_string(),
        ]
    }
}

fn settings(scheme: Scheme, sim: &SimArgs) -> SimulationSettings {
    let mut s = SimulationSettings::new(scheme, sim.frames, sim.seed);
    s.warmup = sim.warmup;
    if sim.strict_battery {
        s.battery_model = BatteryModel::Strict;
    }
    s
}

/// Loss lower bound for a scheme: closed-form battery distribution under
/// AVOID, the measured one under IDENTIFY, zero with unlimited energy.
fn lower_bound(
    config: &SystemConfig,
    dist: &DegreeDistribution,
    scheme: Scheme,
    report: &SimulationReport,
) -> CliResult<f64> {
    match scheme {
        Scheme::Unlimited => Ok(0.0),
        Scheme::Avoid => {
            let chain = BatteryChain::avoid(config, dist)?;
            Ok(plr_lower_bound(config, dist.row(0), chain.steady_state[0])?)
        }
        Scheme::Identify => {
            let phi = empirical_battery_distribution(report)?;
            Ok(plr_lower_bound(config, dist.row(0), phi[0])?)
        }
    }
}

struct PointResult {
    row: Row,
    report: SimulationReport,
    optimization: Option<OptimizationOutcome>,
    objective: Option<f64>,
}

fn simulate_point(
    config: &SystemConfig,
    dist: &DegreeDistribution,
    scheme: Scheme,
    sim: &SimArgs,
    theta: u64,
) -> CliResult<(Row, SimulationReport)> {
    let report = run_simulation(config, dist, &settings(scheme, sim))?;
    let plr = estimate_plr(&report)?;
    let row = Row {
        alpha_u: config.alpha_u(),
        load: config.channel_load(),
        scheme: scheme.to_string(),
        plr,
        throughput: estimate_throughput(&report)?,
        avg_aoi_norm: average_aoi_normalized(&report)?,
        avp_theta: empirical_avp(&report, theta)?,
        plr_lower_bound: lower_bound(config, dist, scheme, &report)?,
        seed: sim.seed,
        frames: sim.frames,
    };
    Ok((row, report))
}

fn optimization_problem(scheme: Scheme, sim: &SimArgs, opt: &OptArgs, objective: Objective) -> OptimizationProblem {
    let parametrization = if opt.adaptive {
        Parametrization::Adaptive
    } else {
        Parametrization::Nonadaptive
    };
    let mut problem = OptimizationProblem::new(objective, scheme, parametrization, sim.seed);
    problem.frames_per_call = opt.eval_frames;
    problem.warmup = sim.warmup;
    problem.restarts = opt.restarts;
    // The final re-evaluation is the simulation of the reported row.
    problem.final_frames = 0;
    problem.nelder_mead.max_evals = opt.max_evals;
    problem
}

fn optimize_point(
    config: &SystemConfig,
    scheme: Scheme,
    sim: &SimArgs,
    opt: &OptArgs,
    objective: Objective,
    theta: u64,
) -> CliResult<PointResult> {
    let problem = optimization_problem(scheme, sim, opt, objective);
    let outcome = optimize_degree_distribution(config, &problem)?;
    if sim.frames == 0 {
        return Err(CliError::Config(
            "optimization needs --frames > 0 for the final evaluation".into(),
        ));
    }
    let (row, report) = simulate_point(config, &outcome.distribution, scheme, sim, theta)?;
    let value = objective.from_loss(config, row.plr);
    Ok(PointResult {
        row,
        report,
        optimization: Some(outcome),
        objective: Some(value),
    })
}

fn load_scenario(path: &Path) -> CliResult<Scenario> {
    Ok(Scenario::from_file(path)?)
}

pub fn analyze(args: &AnalyzeArgs) -> CliResult<()> {
    let scenario = load_scenario(&args.common.config)?;
    let scheme = scheme_of(args.common.scheme);
    let mut config = scenario.config.clone();
    if scheme == Scheme::Unlimited {
        config.battery = Capacity::Unlimited;
    }
    let dist = scenario.degrees.build(&config)?;
    let mut doc = json!({
        "scheme": scheme.to_string(),
        "config": config,
        "alphaU": config.alpha_u(),
        "sigma": config.activation_prob(),
        "G": config.channel_load(),
        "degree_distribution": dist.rows(),
    });
    let phi = match scheme {
        Scheme::Unlimited => None,
        Scheme::Avoid => {
            let chain = BatteryChain::avoid(&config, &dist)?;
            doc["transition_matrix"] = json!(chain.transition);
            doc["phi_source"] = json!("battery chain");
            Some(chain.steady_state)
        }
        Scheme::Identify => {
            let Some(path) = &args.phi_report else {
                return Err(CliError::Config(
                    "IDENTIFY has no closed-form battery distribution; pass --phi-report with the JSON output of a simulate run"
                        .into(),
                ));
            };
            let phi = phi_from_report(path)?;
            if phi.len() != config.battery.num_levels() {
                return Err(CliError::Config(format!(
                    "{} holds {} battery levels, scenario has {}",
                    path.display(),
                    phi.len(),
                    config.battery.num_levels()
                )));
            }
            doc["phi_source"] = json!(path.display().to_string());
            Some(phi)
        }
    };
    match &phi {
        Some(phi) => {
            doc["phi"] = json!(phi);
            doc["average_degree_distribution"] = json!(average_degree_distribution(phi, &dist)?);
            doc["plr_lower_bound"] = json!(plr_lower_bound(&config, dist.row(0), phi[0])?);
        }
        None => doc["plr_lower_bound"] = json!(0.0),
    }
    if let Some(loss) = args.loss {
        if !(0.0..=1.0).contains(&loss) {
            return Err(CliError::Config(format!("--loss {loss} outside [0, 1]")));
        }
        let inputs = AoiInputs::from_config(&config, loss);
        let aoi = average_aoi(&inputs);
        doc["aoi"] = json!({
            "loss": loss,
            "average_aoi": aoi,
            "avg_aoi_norm": aoi / config.num_devices as f64,
            "theta": args.common.theta,
            "avp": aoi_violation_prob(args.common.theta, &inputs),
            "throughput": throughput(config.channel_load(), loss),
        });
    }
    write_output(args.common.out.as_deref(), &to_json(&doc)?)
}

fn phi_from_report(path: &Path) -> CliResult<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let report = doc
        .get("points")
        .and_then(|p| p.get(0))
        .and_then(|p| p.get("report"))
        .ok_or_else(|| CliError::Config(format!("{}: no simulation report found", path.display())))?;
    let report: SimulationReport =
        serde_json::from_value(report.clone()).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(empirical_battery_distribution(&report)?)
}

pub fn simulate(args: &RunArgs) -> CliResult<()> {
    let scenario = load_scenario(&args.common.config)?;
    let scheme = scheme_of(args.common.scheme);
    let dist = scenario.distribution()?;
    let points = if args.sim.frames == 0 {
        Vec::new()
    } else {
        let (row, report) = simulate_point(&scenario.config, &dist, scheme, &args.sim, args.common.theta)?;
        vec![PointResult {
            row,
            report,
            optimization: None,
            objective: None,
        }]
    };
    emit(args.common.out.as_deref(), &points, None, args.common.theta)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepVar {
    AlphaU,
    Capacity,
    EtaM,
    FrameLength,
}

impl SweepVar {
    fn name(self) -> &'static str {
        match self {
            SweepVar::AlphaU => "alphaU",
            SweepVar::Capacity => "E",
            SweepVar::EtaM => "etaM",
            SweepVar::FrameLength => "M",
        }
    }

    /// The scenario at grid value `x`. Per-slot probabilities other than
    /// the swept one are kept.
    fn apply(self, scenario: &Scenario, x: f64) -> CliResult<Scenario> {
        let mut s = scenario.clone();
        let c = &mut s.config;
        let integer = |x: f64| -> CliResult<u32> {
            if x >= 0.0 && x.fract() == 0.0 && x <= u32::MAX as f64 {
                Ok(x as u32)
            } else {
                Err(CliError::Config(format!(
                    "{} needs integer grid values, got {x}",
                    self.name()
                )))
            }
        };
        match self {
            SweepVar::AlphaU => c.update_prob = x / c.num_devices as f64,
            SweepVar::Capacity => c.battery = Capacity::Finite(integer(x)?),
            SweepVar::EtaM => c.harvest_prob = x / c.frame_length as f64,
            SweepVar::FrameLength => c.frame_length = integer(x)?,
        }
        c.validate()?;
        s.distribution()?;
        Ok(s)
    }
}

pub fn parse_sweep(text: &str) -> CliResult<(SweepVar, Vec<f64>)> {
    let (var, grid) = text
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--sweep expects <var>=<v1,v2,...>, got {text:?}")))?;
    let var = match var.trim() {
        "alphaU" => SweepVar::AlphaU,
        "E" => SweepVar::Capacity,
        "etaM" => SweepVar::EtaM,
        "M" => SweepVar::FrameLength,
        other => {
            return Err(CliError::Config(format!(
                "unknown sweep variable {other:?}; use alphaU, E, etaM or M"
            )))
        }
    };
    let grid = grid
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| CliError::Config(format!("bad grid value {v:?}")))
        })
        .collect::<CliResult<Vec<f64>>>()?;
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(CliError::Config("sweep grid must be sorted in increasing order".into()));
    }
    Ok((var, grid))
}

fn thread_pool(jobs: Option<usize>) -> CliResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(CliError::Config("--jobs must be positive".into()));
        }
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn sweep(args: &SweepArgs) -> CliResult<()> {
    let scenario = load_scenario(&args.common.config)?;
    let scheme = scheme_of(args.common.scheme);
    let (var, grid) = parse_sweep(&args.sweep)?;
    let objective = args.opt.objective.map(|o| objective_of(o, args.common.theta));
    let theta = args.common.theta;
    let run = |x: &f64| -> CliResult<PointResult> {
        let s = var.apply(&scenario, *x)?;
        match objective {
            Some(objective) => optimize_point(&s.config, scheme, &args.sim, &args.opt, objective, theta),
            None => {
                let dist = s.distribution()?;
                let (row, report) = simulate_point(&s.config, &dist, scheme, &args.sim, theta)?;
                Ok(PointResult {
                    row,
                    report,
                    optimization: None,
                    objective: None,
                })
            }
        }
    };
    if args.sim.frames == 0 {
        return emit(args.common.out.as_deref(), &[], Some((var, &[])), theta);
    }
    let pool = thread_pool(args.sim.jobs)?;
    let results: Vec<CliResult<PointResult>> = pool.install(|| grid.par_iter().map(run).collect());
    let mut done = Vec::new();
    let mut values = Vec::new();
    let mut failures = Vec::new();
    for (x, r) in grid.iter().zip(results) {
        match r {
            Ok(p) => {
                done.push(p);
                values.push(*x);
            }
            Err(e) => failures.push((*x, e)),
        }
    }
    emit(args.common.out.as_deref(), &done, Some((var, &values)), theta)?;
    match failures.into_iter().next() {
        None => Ok(()),
        Some((x, e)) => {
            let message = format!("grid point {}={x} failed: {e}", var.name());
            Err(match e {
                CliError::Config(_) => CliError::Config(message),
                CliError::Runtime(_) => CliError::Runtime(message),
            })
        }
    }
}

pub fn optimize(args: &OptimizeArgs) -> CliResult<()> {
    let scenario = load_scenario(&args.common.config)?;
    let scheme = scheme_of(args.common.scheme);
    let objective = objective_of(args.opt.objective.unwrap_or(ObjectiveArg::Aoi), args.common.theta);
    let pool = thread_pool(args.sim.jobs)?;
    let point = pool.install(|| {
        optimize_point(
            &scenario.config,
            scheme,
            &args.sim,
            &args.opt,
            objective,
            args.common.theta,
        )
    })?;
    let outcome = point.optimization.as_ref().expect("optimization outcome");
    let doc = json!({
        "scheme": scheme.to_string(),
        "objective": objective,
        "config": scenario.config,
        "degree_distribution": outcome.distribution.rows(),
        "adaptivity": outcome.distribution.adaptivity(),
        "search_value": number(outcome.value),
        "baseline_value": number(outcome.baseline_value),
        "final_value": point.objective.map(number),
        "restarts": outcome.restarts,
        "row": point.row,
        "report": point.report,
    });
    write_output(args.common.out.as_deref(), &to_json(&doc)?)
}

/// Writes the points as CSV, or as a JSON document when the output file
/// ends in `.json`.
fn emit(out: Option<&Path>, points: &[PointResult], sweep: Option<(SweepVar, &[f64])>, theta: u64) -> CliResult<()> {
    let extra = sweep.map(|(v, _)| v).filter(|v| *v != SweepVar::AlphaU);
    let optimized = points.iter().any(|p| p.objective.is_some());
    if wants_json(out) {
        let items: Vec<serde_json::Value> = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut v = json!({ "row": p.row, "report": p.report });
                if let Some((var, values)) = sweep {
                    v[var.name()] = json!(values[i]);
                }
                if let Some(o) = &p.optimization {
                    v["optimization"] = json!(o);
                    v["objective"] = json!(p.objective.map(number));
                }
                v
            })
            .collect();
        return write_output(out, &to_json(&json!({ "theta": theta, "points": items }))?);
    }
    let mut header: Vec<String> = HEADER.iter().map(|s| s.to_string()).collect();
    if let Some(v) = extra {
        header.push(v.name().into());
    }
    if optimized {
        header.push("objective".into());
    }
    let mut text = header.join(",") + "\n";
    for (i, p) in points.iter().enumerate() {
        let mut fields = p.row.csv_fields();
        if extra.is_some() {
            fields.push(sig6(sweep.expect("sweep").1[i]));
        }
        if optimized {
            fields.push(p.objective.map_or_else(|| "nan".into(), sig6));
        }
        text += &(fields.join(",") + "\n");
    }
    write_output(out, &text)
}
