//! `gt-market`: simulate price paths, analyze them, and run Monte Carlo suites.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use gt_market::bounds::BoundFamily;
use gt_market::strategies::MixMode;
use gt_market::suite::SuitePreset;

#[derive(Debug, Parser)]
#[command(name = "gt-market", version, about = "Game-theoretic bounds for a market index and a stock")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Output file; `-` or absent writes to stdout.
    #[arg(long, short, global = true, value_name = "PATH")]
    pub output: Option<PathBuf>,

    /// Output format. Each subcommand accepts the formats it can produce.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Progress messages on stderr; repeat for more.
    #[arg(long, short, global = true, action = ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a GBM index path (and optionally a stock) as CSV `t,index[,stock]`.
    Simulate(SimulateArgs),
    /// Read a `t,index[,stock]` CSV and report curves, identities, TPD and bounds as JSON.
    Analyze(AnalyzeArgs),
    /// Run a Monte Carlo suite or a JSON experiment config; writes JSON.
    Coverage(CoverageArgs),
    /// Emit the Gaussian-quantile vs LIL-mixture table `q,X,eta,ratio`.
    Quantiles(QuantilesArgs),
    /// Run every experiment of one JSON config and bundle the results into one JSON document.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DriftArg {
    /// Log drift −σ²/2 per unit time; the index is a martingale.
    Martingale,
    /// Log drift +σ²/2 per unit time; 1/I is a martingale.
    IndexNumeraire,
    /// Log drift given by --mu.
    Custom,
}

#[derive(Debug, Args)]
pub struct GeneratorArgs {
    /// Index volatility σ, per square root of one time unit.
    #[arg(long, default_value_t = 0.2, value_name = "SIGMA")]
    pub vol: f64,
    /// Drift of the index log-price.
    #[arg(long, value_enum, default_value_t = DriftArg::Martingale)]
    pub drift: DriftArg,
    /// Log drift per time unit, used with --drift custom.
    #[arg(long, value_name = "MU")]
    pub mu: Option<f64>,
    /// Length of the path, in time units.
    #[arg(long, default_value_t = 1.0, value_name = "TIME")]
    pub horizon: f64,
    /// Grid spacing, in time units.
    #[arg(long, default_value_t = 1e-4, value_name = "TIME")]
    pub dt: f64,
    /// Stock volatility ν relative to the index, per square root of one time unit; omit for an index-only path.
    #[arg(long, value_name = "NU")]
    pub stock_vol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub generator: GeneratorArgs,
    /// Random seed (unsigned 64-bit integer).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Price CSV with header `t,index` or `t,index,stock`; times in any unit, prices positive.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Coarsest partition level n (threshold 2^-n, dimensionless).
    #[arg(long, default_value_t = 2)]
    pub n_min: u32,
    /// Finest partition level; chosen from the grid resolution when omitted.
    #[arg(long)]
    pub n_max: Option<u32>,
    /// Upper limit for the automatic choice of the finest level.
    #[arg(long, default_value_t = 20)]
    pub level_cap: u32,
    /// Accept levels finer than the grid resolution supports.
    #[arg(long)]
    pub no_resolution_check: bool,
    /// Bound family to evaluate; repeat for several.
    #[arg(long, value_parser = parse_serde::<BoundFamily>, value_name = "FAMILY",
          help = "Bound family to evaluate; repeat for several. One of ep_clt_two_sided, ep_clt_lower, \
                  ep_clt_upper, ep_mixing, ep_optimized, capm_mixing, capm_optimized")]
    pub family: Vec<BoundFamily>,
    /// Failure probability δ of each bound, in (0, 1] (CLT families also accept values above 1).
    #[arg(long, value_name = "PROB")]
    pub delta: Option<f64>,
    /// Intrinsic-time budget T, in units of accumulated log-variance (dimensionless).
    #[arg(long = "T", value_name = "BUDGET")]
    pub budget: Option<f64>,
    /// Strategy fraction ε for the mixing families (dimensionless, nonzero).
    #[arg(long, value_name = "EPS")]
    pub epsilon: Option<f64>,
    /// Time at which to evaluate the theoretical performance deficit ½Δ, in input time units; defaults to the last row.
    #[arg(long, value_name = "TIME")]
    pub tpd_at: Option<f64>,
    /// Write the functional curves of every level as CSV.
    #[arg(long, value_name = "PATH")]
    pub emit_curves: Option<PathBuf>,
    /// Write a capital process as CSV `t,capital,relative,theoretical_exponent`.
    #[arg(long, value_name = "PATH")]
    pub emit_capital: Option<PathBuf>,
    /// Strategy for --emit-capital: cash_mix or stock_mix.
    #[arg(long, value_parser = parse_serde::<MixMode>, default_value = "cash_mix", value_name = "MODE")]
    pub mix: MixMode,
    /// Strategy fraction ε for --emit-capital (dimensionless).
    #[arg(long, default_value_t = 0.5, value_name = "EPS")]
    pub mix_epsilon: f64,
    /// Partition level for --emit-capital; defaults to the finest level.
    #[arg(long)]
    pub mix_level: Option<u32>,
    /// Write the partition ladders (crossing times and prices) as JSON.
    #[arg(long, value_name = "PATH")]
    pub dump_ladder: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OverrideArgs {
    /// Master seed (unsigned 64-bit integer); overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; overrides GT_MARKET_THREADS. Results do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Number of simulated paths; overrides the config file.
    #[arg(long)]
    pub paths: Option<usize>,
    /// Pass threshold in standard errors; overrides the config file.
    #[arg(long, value_name = "K")]
    pub se_multiplier: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CoverageArgs {
    /// Built-in suite.
    #[arg(long, value_enum, conflicts_with = "config")]
    pub suite: Option<SuiteArg>,
    /// JSON experiment config (generator, n_paths, levels, bounds, anytime, strategies, master_seed).
    #[arg(long, value_name = "PATH", required_unless_present = "suite")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: OverrideArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    /// Every acceptance criterion at full scale (minutes).
    Acceptance,
    /// The same checks on a handful of paths (seconds).
    Smoke,
}

impl From<SuiteArg> for SuitePreset {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Acceptance => SuitePreset::Acceptance,
            SuiteArg::Smoke => SuitePreset::Smoke,
        }
    }
}

#[derive(Debug, Args)]
pub struct QuantilesArgs {
    /// Smallest tail probability q.
    #[arg(long, default_value_t = 1e-5, value_name = "PROB")]
    pub qmin: f64,
    /// Largest tail probability q, at most 0.5.
    #[arg(long, default_value_t = 0.5, value_name = "PROB")]
    pub qmax: f64,
    /// Number of log-spaced rows, at least 2.
    #[arg(long, default_value_t = 200)]
    pub points: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// JSON experiment config, as for `coverage --config`.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    #[command(flatten)]
    pub overrides: OverrideArgs,
}

fn parse_serde<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gt-market: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
