use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "irsa",
    version,
    about = "IRSA with energy-harvesting devices: analysis, simulation, sweeps and degree optimization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Battery chain, loss lower bound and closed-form age metrics.
    Analyze(AnalyzeArgs),
    /// Monte-Carlo simulation of one scenario.
    Simulate(RunArgs),
    /// One simulation (or optimization) per grid point of a swept parameter.
    Sweep(SweepArgs),
    /// Degree-distribution optimization.
    Optimize(OptimizeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Avoid,
    Identify,
    Unlimited,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Aoi,
    Avp,
    Throughput,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum, default_value = "identify")]
    pub scheme: SchemeArg,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Age threshold in slots for the violation probability.
    #[arg(long, default_value_t = 10_000)]
    pub theta: u64,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Packet loss ratio at which to evaluate the age expressions.
    #[arg(long)]
    pub loss: Option<f64>,
    /// JSON output of a previous `simulate` run, used as the source of the
    /// battery distribution when it has no closed form.
    #[arg(long)]
    pub phi_report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Measured frames.
    #[arg(long, default_value_t = 100_000)]
    pub frames: u64,
    #[arg(long, default_value_t = 100)]
    pub warmup: u64,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Battery accounting: committed replicas exempt from the capacity
    /// (default) or a strict cap on every harvest.
    #[arg(long)]
    pub strict_battery: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Args)]
pub struct OptArgs {
    /// Optimize the degree distribution at every grid point for this
    /// objective.
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveArg>,
    /// Separate rows per battery level (IDENTIFY only).
    #[arg(long)]
    pub adaptive: bool,
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    /// Frames per objective evaluation during the search.
    #[arg(long, default_value_t = 20_000)]
    pub eval_frames: u64,
    /// Cap on objective evaluations per restart.
    #[arg(long, default_value_t = 2000)]
    pub max_evals: usize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub sim: SimArgs,
    /// `<var>=<v1,v2,...>` with var one of alphaU, E, etaM, M.
    #[arg(long)]
    pub sweep: String,
    #[command(flatten)]
    pub opt: OptArgs,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub sim: SimArgs,
    #[command(flatten)]
    pub opt: OptArgs,
}
