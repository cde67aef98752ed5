//! The `eh-policy` experiment driver.
//!
//! [`run`] merges an optional TOML config file into the argument vector,
//! executes one subcommand and writes its JSON result to the supplied
//! writer; [`exit_code`] maps a failure onto the process exit status.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eh_core::Builtin;

mod commands;
pub mod config;
pub mod criteria;

#[derive(Debug, Parser)]
#[command(name = "eh-policy", version, about = "Online power control for energy-harvesting transmitters")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Base seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Leave out the timestamp so repeated runs print identical bytes.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Write plot-ready CSV rows to this path.
    #[arg(long, global = true, value_name = "PATH")]
    pub emit_csv: Option<PathBuf>,
    /// TOML file of flag values; flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo estimate of a policy's long-run average reward.
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
    /// Exact optimal schedule for Bernoulli-full arrivals.
    #[command(args_override_self = true)]
    BernoulliOpt(BernoulliOptArgs),
    /// Best fixed fraction for the given arrivals.
    #[command(args_override_self = true)]
    OptimizeFraction(OptimizeFractionArgs),
    /// Multiplicative and additive gap report for the fraction q.
    #[command(args_override_self = true)]
    Gap(GapArgs),
    /// Deficit u(μ) - FFP value over a range of means.
    #[command(args_override_self = true)]
    Sweep(SweepArgs),
    /// Class (A) or (B) of a utility.
    #[command(args_override_self = true)]
    Classify(ClassifyArgs),
    /// Relative value iteration on a discretized battery.
    #[command(args_override_self = true)]
    Dp(DpArgs),
    /// Side-by-side values of every available policy.
    #[command(args_override_self = true)]
    Compare(CompareArgs),
    /// Runs the acceptance battery; exits 1 if any criterion fails.
    #[command(args_override_self = true)]
    Reproduce(ReproduceArgs),
}

impl Command {
    pub const NAMES: [&'static str; 9] = [
        "simulate",
        "bernoulli-opt",
        "optimize-fraction",
        "gap",
        "sweep",
        "classify",
        "dp",
        "compare",
        "reproduce",
    ];
}

#[derive(Debug, Clone, Args)]
pub struct ProblemArgs {
    /// Utility name with optional parameters, e.g. `exp_sat:beta=2`.
    #[arg(long)]
    pub utility: Builtin,
    /// Arrival law, e.g. `bernoulli:p=0.25` or `uniform:lo=0,hi=10`.
    #[arg(long)]
    pub arrivals: String,
    /// Battery capacity B.
    #[arg(long)]
    pub battery: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    /// Slots per trial.
    #[arg(long, default_value_t = 100_000)]
    pub horizon: usize,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Leading slots excluded from each trial's average.
    #[arg(long, default_value_t = 0)]
    pub warmup: usize,
    /// Starting battery level (default: full).
    #[arg(long)]
    pub initial_battery: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// `ffp`, `ffp:theta=Q`, `bernoulli-opt` or `dp`.
    #[arg(long, default_value = "ffp")]
    pub policy: String,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BernoulliOptArgs {
    #[arg(long)]
    pub utility: Builtin,
    /// Refill probability.
    #[arg(long)]
    pub p: f64,
    #[arg(long)]
    pub battery: f64,
    /// Minimum number of schedule entries to print.
    #[arg(long, default_value_t = 30)]
    pub terms: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvaluatorKind {
    Renewal,
    #[value(name = "mc")]
    MonteCarlo,
}

#[derive(Debug, Clone, Args)]
pub struct OptimizeFractionArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Defaults to `renewal` for Bernoulli arrivals and `mc` otherwise.
    #[arg(long, value_enum)]
    pub evaluator: Option<EvaluatorKind>,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Clone, Args)]
pub struct GapArgs {
    #[arg(long)]
    pub utility: Builtin,
    /// Fraction q = μ/B.
    #[arg(long, default_value_t = 0.5)]
    pub q: f64,
    /// Mean arrival μ; the battery is μ/q.
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    /// Also report the worst-case gap over q.
    #[arg(long)]
    pub optimize_q: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub utility: Builtin,
    #[arg(long, default_value_t = 0.5)]
    pub q: f64,
    /// `lo:hi:log[:n]`, `lo:hi:lin:n` or a comma-separated list.
    #[arg(long, default_value = "1e1:1e6:log")]
    pub mu: String,
}

#[derive(Debug, Clone, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub utility: Builtin,
}

#[derive(Debug, Clone, Args)]
pub struct DpOptions {
    /// Battery grid points.
    #[arg(long, default_value_t = 401)]
    pub grid: usize,
    /// Power levels tried per state.
    #[arg(long, default_value_t = 201)]
    pub actions: usize,
    /// Span tolerance of relative value iteration.
    #[arg(long, default_value_t = 1e-9)]
    pub vi_tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iters: usize,
}

#[derive(Debug, Clone, Args)]
pub struct DpArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub dp: DpOptions,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    #[command(flatten)]
    pub dp: DpOptions,
}

#[derive(Debug, Clone, Args)]
pub struct ReproduceArgs {
    /// Run only these criteria (repeatable); all by default.
    #[arg(long = "criterion", value_name = "ID")]
    pub criteria: Vec<u8>,
}

/// How a successful run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// `reproduce` finished but at least one criterion failed.
    CriteriaFailed,
}

/// Parses `argv` (program name first) and runs the subcommand, writing JSON
/// to `out`.
pub fn run<I, T>(argv: I, out: &mut dyn Write) -> anyhow::Result<Outcome>
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    let argv = config::merge(argv.into_iter().map(Into::into).collect())?;
    let cli = Cli::try_parse_from(argv)?;
    commands::dispatch(&cli, out)
}

/// Runs `argv` in-process and parses its JSON output.
pub fn run_json(argv: &[&str]) -> anyhow::Result<serde_json::Value> {
    let mut buf = Vec::new();
    run(argv.iter().copied(), &mut buf)?;
    Ok(serde_json::from_slice(&buf)?)
}

/// Exit status for a failed run: clap's own code for usage errors, 2 for
/// bad input, 3 for numerical failures, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<clap::Error>() {
        return e.exit_code() as u8;
    }
    match err.downcast_ref::<eh_core::Error>() {
        Some(e) if e.is_config() => 2,
        Some(_) => 3,
        None => 1,
    }
}
