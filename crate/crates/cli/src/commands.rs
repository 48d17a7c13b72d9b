use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use gt_market::bounds::{
    capm_interval, ep_interval, quantile_table, tpd, write_quantile_csv, BoundError, BoundReport, BoundSpec, TpdReport,
};
use gt_market::functionals::{
    check_identities, compute_curves, compute_pair_curves, write_curves_csv, FunctionalCurves, IdentityReport,
};
use gt_market::montecarlo::{
    content_hash, run_coverage, run_identity_checks, run_supermartingale_test, CoverageReport, ExperimentConfig,
    ExperimentError, GeneratorConfig, IdentityConfig, SupermartingaleReport,
};
use gt_market::partitions::{auto_levels, Asset, LevelRange, PartitionLadder, ResolutionPolicy};
use gt_market::paths::{load_csv_file, write_csv, DriftMode};
use gt_market::strategies::{
    mix_with_cash, mix_with_stock, theoretical_exponent_at, write_capital_csv, ExponentMode, MixMode,
};
use gt_market::suite::{run_suite, SuiteConfig};

use crate::output::{csv_bytes, json_bytes, CliError, Outputs};
use crate::{
    AnalyzeArgs, Cli, Command, CoverageArgs, DriftArg, Format, GeneratorArgs, OverrideArgs, QuantilesArgs, ReportArgs,
    SimulateArgs,
};

const DEFAULT_SUITE_SEED: u64 = 42;

struct Progress {
    level: u8,
    start: Instant,
}

impl Progress {
    fn note(&self, msg: &str) {
        if self.level > 0 {
            eprintln!("[{:>8.2?}] {msg}", self.start.elapsed());
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let progress = Progress { level: cli.verbose, start: Instant::now() };
    let mut out = Outputs::default();
    let output = cli.output.as_deref();
    match &cli.command {
        Command::Simulate(a) => simulate(a, format(cli, &[Format::Csv, Format::Json])?, output, &mut out)?,
        Command::Analyze(a) => {
            format(cli, &[Format::Json])?;
            analyze(a, output, &mut out, &progress)?
        }
        Command::Coverage(a) => {
            format(cli, &[Format::Json])?;
            coverage(a, output, &mut out, &progress)?
        }
        Command::Quantiles(a) => quantiles(a, format(cli, &[Format::Csv, Format::Json])?, output, &mut out)?,
        Command::Report(a) => {
            format(cli, &[Format::Json])?;
            report(a, output, &mut out, &progress)?
        }
    }
    out.commit()?;
    progress.note("done");
    Ok(())
}

/// The requested format, or the first allowed one.
fn format(cli: &Cli, allowed: &[Format]) -> Result<Format, CliError> {
    match cli.format {
        None => Ok(allowed[0]),
        Some(f) if allowed.contains(&f) => Ok(f),
        Some(f) => Err(CliError::input(format!("--format {f:?} is not available for this subcommand").to_lowercase())),
    }
}

fn experiment_error(e: ExperimentError) -> CliError {
    match e {
        ExperimentError::InvalidConfig(_) | ExperimentError::LilRegionEmpty(_) => CliError::input(e),
        ExperimentError::Path { .. } | ExperimentError::ThreadPool(_) => CliError::internal(e),
    }
}

fn generator(a: &GeneratorArgs) -> Result<GeneratorConfig, CliError> {
    let drift_mode = match (a.drift, a.mu) {
        (DriftArg::Custom, Some(mu)) => DriftMode::Custom(mu),
        (DriftArg::Custom, None) => return Err(CliError::input("--drift custom requires --mu")),
        (_, Some(_)) => return Err(CliError::input("--mu is only used with --drift custom")),
        (DriftArg::Martingale, None) => DriftMode::Martingale,
        (DriftArg::IndexNumeraire, None) => DriftMode::IndexNumeraire,
    };
    let g = GeneratorConfig { vol: a.vol, drift_mode, horizon: a.horizon, dt: a.dt, stock_vol: a.stock_vol };
    g.validate().map_err(|e| CliError::input(format!("generator flags: {e}")))?;
    Ok(g)
}

#[derive(Serialize)]
struct PathColumns<'a> {
    t: &'a [f64],
    index: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    stock: Option<&'a [f64]>,
}

fn simulate(a: &SimulateArgs, fmt: Format, output: Option<&Path>, out: &mut Outputs) -> Result<(), CliError> {
    let g = generator(&a.generator)?;
    let pair = g.generate(a.seed).map_err(CliError::input)?;
    let bytes = match fmt {
        Format::Csv => csv_bytes(|buf| write_csv(&pair, buf))?,
        Format::Json => json_bytes(&PathColumns {
            t: pair.times(),
            index: pair.index_values(),
            stock: pair.stock_values(),
        })?,
    };
    out.stage(output, bytes);
    Ok(())
}

#[derive(Serialize)]
struct AnalysisReport {
    input: String,
    rows: usize,
    time_offset: f64,
    levels: LevelRange,
    #[serde(skip_serializing_if = "Option::is_none")]
    resolution_warning: Option<String>,
    sparse_levels: Vec<u32>,
    identities: IdentityReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    tpd: Option<TpdReport>,
    bounds: Vec<BoundReport>,
}

#[derive(Serialize)]
struct LadderDump<'a> {
    index: &'a PartitionLadder,
    #[serde(skip_serializing_if = "Option::is_none")]
    pair: Option<&'a PartitionLadder>,
}

fn bound_specs(a: &AnalyzeArgs) -> Result<Vec<BoundSpec>, CliError> {
    if a.family.is_empty() {
        return Ok(Vec::new());
    }
    let delta = a.delta.ok_or_else(|| CliError::input("--delta is required with --family"))?;
    let budget = a.budget.ok_or_else(|| CliError::input("--T is required with --family"))?;
    a.family
        .iter()
        .map(|&f| BoundSpec::new(f, delta, a.epsilon, budget).map_err(|e| CliError::input(format!("--family {f}: {e}"))))
        .collect()
}

fn analyze(a: &AnalyzeArgs, output: Option<&Path>, out: &mut Outputs, progress: &Progress) -> Result<(), CliError> {
    let specs = bound_specs(a)?;
    if !a.mix_epsilon.is_finite() {
        return Err(CliError::input("--mix-epsilon must be finite"));
    }
    if let Some(n_max) = a.n_max {
        LevelRange::new(a.n_min, n_max).map_err(|e| CliError::input(format!("--n-min/--n-max: {e}")))?;
    }

    let loaded = load_csv_file(&a.input).map_err(|e| CliError::input(format!("--input {}: {e}", a.input.display())))?;
    let pair = loaded.pair;
    progress.note(&format!("read {} rows", pair.len()));
    if specs.iter().any(|s| s.family.is_capm()) && !pair.has_stock() {
        return Err(CliError::input("--family capm_*: the input has no stock column"));
    }
    if a.mix == MixMode::StockMix && a.emit_capital.is_some() && !pair.has_stock() {
        return Err(CliError::input("--mix stock_mix: the input has no stock column"));
    }

    let policy = if a.no_resolution_check { ResolutionPolicy::unchecked() } else { ResolutionPolicy::default() };
    let index = pair.index_path();
    let mut series = vec![pair.index_values()];
    series.extend(pair.stock_values());
    let range = match a.n_max {
        Some(n_max) => LevelRange::new(a.n_min, n_max).map_err(CliError::internal)?,
        None => auto_levels(&series, a.n_min, a.level_cap, &policy)
            .map_err(|e| CliError::input(format!("--n-min {}: {e}; the grid is too coarse", a.n_min)))?,
    };
    let ladder_error = |e: &dyn std::fmt::Display| {
        CliError::input(format!("--n-max {}: {e} (use a coarser level or --no-resolution-check)", range.n_max))
    };
    let single_ladder = PartitionLadder::single(&index, Asset::Index, range, &policy).map_err(|e| ladder_error(&e))?;
    let pair_ladder = if pair.has_stock() {
        Some(PartitionLadder::pair(&pair, range, &policy).map_err(|e| ladder_error(&e))?)
    } else {
        None
    };
    let single = compute_curves(&index, &single_ladder).map_err(CliError::internal)?;
    let paired = match &pair_ladder {
        Some(l) => Some(compute_pair_curves(&pair, l).map_err(CliError::internal)?),
        None => None,
    };
    progress.note(&format!("levels {}..={}", range.n_min, range.n_max));

    let tpd_report = match &paired {
        Some(pc) => {
            let t = a.tpd_at.map_or(*pair.times().last().expect("nonempty"), |t| t - loaded.time_offset);
            Some(tpd(pc, t).map_err(|e| CliError::input(format!("--tpd-at: {e}")))?)
        }
        None if a.tpd_at.is_some() => return Err(CliError::input("--tpd-at: the input has no stock column")),
        None => None,
    };

    let mut bounds = Vec::with_capacity(specs.len());
    for spec in &specs {
        let r = if spec.family.is_capm() {
            capm_interval(spec, paired.as_ref().expect("checked above"))
        } else {
            ep_interval(spec, &single)
        };
        bounds.push(match r {
            Ok(r) => r,
            Err(BoundError::TauUndefined(_)) => BoundReport {
                spec: *spec,
                tau: None,
                statistic: None,
                half_width: spec.half_width().map_err(CliError::internal)?,
                hit: false,
                convention_applied: false,
            },
            Err(e) => return Err(CliError::internal(format!("{}: {e}", spec.family))),
        });
    }

    if let Some(path) = &a.emit_curves {
        let curves: &FunctionalCurves = paired.as_ref().unwrap_or(&single);
        out.stage(Some(path), csv_bytes(|buf| write_curves_csv(curves, buf))?);
    }
    if let Some(path) = &a.emit_capital {
        let level = a.mix_level.unwrap_or(range.n_max);
        let missing = || CliError::input(format!("--mix-level {level}: outside levels {}..={}", range.n_min, range.n_max));
        let (process, exponent) = match a.mix {
            MixMode::CashMix => {
                let l = single_ladder.level(level).ok_or_else(missing)?;
                (
                    mix_with_cash(&index, l, a.mix_epsilon),
                    theoretical_exponent_at(&single, level, ExponentMode::EquityPremium, a.mix_epsilon),
                )
            }
            MixMode::StockMix => {
                let l = pair_ladder.as_ref().and_then(|p| p.level(level)).ok_or_else(missing)?;
                (
                    mix_with_stock(&pair, l, a.mix_epsilon),
                    theoretical_exponent_at(paired.as_ref().expect("checked above"), level, ExponentMode::Capm, a.mix_epsilon),
                )
            }
        };
        let process = process.map_err(|e| CliError::input(format!("--mix: {e}")))?;
        let exponent = exponent.map_err(|e| CliError::input(format!("--mix: {e}")))?;
        out.stage(Some(path), csv_bytes(|buf| write_capital_csv(&process, &exponent, buf))?);
    }
    if let Some(path) = &a.dump_ladder {
        out.stage(Some(path), json_bytes(&LadderDump { index: &single_ladder, pair: pair_ladder.as_ref() })?);
    }

    let report = AnalysisReport {
        input: a.input.display().to_string(),
        rows: pair.len(),
        time_offset: loaded.time_offset,
        levels: range,
        resolution_warning: single_ladder
            .resolution_warning
            .clone()
            .or_else(|| pair_ladder.as_ref().and_then(|l| l.resolution_warning.clone())),
        sparse_levels: single_ladder.sparse_levels.clone(),
        identities: check_identities(&single, paired.as_ref()),
        tpd: tpd_report,
        bounds,
    };
    out.stage(output, json_bytes(&report)?);
    Ok(())
}

fn load_config(path: &Path, overrides: &OverrideArgs) -> Result<ExperimentConfig, CliError> {
    let fail = |e: &dyn std::fmt::Display| CliError::input(format!("--config {}: {e}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| fail(&e))?;
    let mut config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| fail(&e))?;
    if let Some(seed) = overrides.seed {
        config.master_seed = seed;
    }
    if let Some(n) = overrides.paths {
        config.n_paths = n;
    }
    if let Some(k) = overrides.se_multiplier {
        config.se_multiplier = k;
    }
    if overrides.workers.is_some() {
        config.workers = overrides.workers;
    }
    config.validate().map_err(|e| fail(&e))?;
    if config.bounds.is_empty() && config.anytime.is_empty() && config.strategies.is_empty() {
        return Err(fail(&"no bounds, anytime checks or strategies to run"));
    }
    Ok(config)
}

fn check_workers(overrides: &OverrideArgs) -> Result<(), CliError> {
    match overrides.workers {
        Some(0) => Err(CliError::input("--workers must be at least 1")),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct ExperimentOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    coverage: Option<CoverageReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    supermartingale: Option<SupermartingaleReport>,
}

fn run_experiment(config: &ExperimentConfig, progress: &Progress) -> Result<ExperimentOutput, CliError> {
    let coverage = if config.bounds.is_empty() && config.anytime.is_empty() {
        None
    } else {
        progress.note(&format!("coverage over {} paths", config.n_paths));
        Some(run_coverage(config).map_err(experiment_error)?)
    };
    let supermartingale = if config.strategies.is_empty() {
        None
    } else {
        progress.note(&format!("strategies over {} paths", config.n_paths));
        Some(run_supermartingale_test(config).map_err(experiment_error)?)
    };
    Ok(ExperimentOutput { coverage, supermartingale })
}

fn coverage(a: &CoverageArgs, output: Option<&Path>, out: &mut Outputs, progress: &Progress) -> Result<(), CliError> {
    check_workers(&a.overrides)?;
    let bytes = if let Some(suite) = a.suite {
        if a.overrides.paths.is_some() {
            return Err(CliError::input("--paths cannot be combined with --suite"));
        }
        let mut config = SuiteConfig::new(suite.into(), a.overrides.seed.unwrap_or(DEFAULT_SUITE_SEED));
        if let Some(k) = a.overrides.se_multiplier {
            if !(k > 0.0) || !k.is_finite() {
                return Err(CliError::input("--se-multiplier must be positive"));
            }
            config.se_multiplier = k;
        }
        config.workers = a.overrides.workers;
        progress.note(&format!("running the {suite:?} suite"));
        let report = run_suite(&config).map_err(experiment_error)?;
        for c in &report.criteria {
            progress.note(&format!("criterion {} {}: {}", c.id, if c.pass { "PASS" } else { "FAIL" }, c.summary));
        }
        json_bytes(&report)?
    } else {
        let path = a.config.as_deref().expect("clap requires --config without --suite");
        let config = load_config(path, &a.overrides)?;
        json_bytes(&run_experiment(&config, progress)?)?
    };
    out.stage(output, bytes);
    Ok(())
}

fn quantiles(a: &QuantilesArgs, fmt: Format, output: Option<&Path>, out: &mut Outputs) -> Result<(), CliError> {
    let rows = quantile_table(a.qmin, a.qmax, a.points)
        .map_err(|e| CliError::input(format!("--qmin/--qmax/--points: {e}")))?;
    let bytes = match fmt {
        Format::Csv => csv_bytes(|buf| write_quantile_csv(&rows, buf))?,
        Format::Json => json_bytes(&rows)?,
    };
    out.stage(output, bytes);
    Ok(())
}

#[derive(Serialize)]
struct IdentitySummary {
    n_paths: usize,
    max_mu_gap: f64,
    max_delta_gap: Option<f64>,
    max_consistency_sigma: Option<f64>,
    max_consistency_mu: Option<f64>,
}

impl IdentitySummary {
    fn of(reports: &[IdentityReport]) -> Self {
        let max = |it: &mut dyn Iterator<Item = f64>| it.fold(None, |m: Option<f64>, g| Some(m.map_or(g, |m| m.max(g))));
        Self {
            n_paths: reports.len(),
            max_mu_gap: reports.iter().map(|r| r.mu_identity_gap).fold(0.0, f64::max),
            max_delta_gap: max(&mut reports.iter().filter_map(|r| r.delta_identity_gap)),
            max_consistency_sigma: max(&mut reports.iter().filter_map(|r| r.partition_consistency_gap.map(|g| g.sigma_i))),
            max_consistency_mu: max(&mut reports.iter().filter_map(|r| r.partition_consistency_gap.map(|g| g.mu_i))),
        }
    }
}

#[derive(Serialize)]
struct Bundle {
    config: ExperimentConfig,
    config_hash: String,
    identities: IdentitySummary,
    #[serde(flatten)]
    experiments: ExperimentOutput,
}

fn report(a: &ReportArgs, output: Option<&Path>, out: &mut Outputs, progress: &Progress) -> Result<(), CliError> {
    check_workers(&a.overrides)?;
    let config = load_config(&a.config, &a.overrides)?;
    progress.note(&format!("identity checks over {} paths", config.n_paths));
    let identities = run_identity_checks(&IdentityConfig {
        generator: config.generator,
        n_paths: config.n_paths,
        levels: config.levels,
        master_seed: config.master_seed,
        workers: config.workers,
    })
    .map_err(experiment_error)?;
    let experiments = run_experiment(&config, progress)?;
    let bundle = Bundle {
        config_hash: content_hash(&config),
        identities: IdentitySummary::of(&identities),
        config,
        experiments,
    };
    out.stage(output, json_bytes(&bundle)?);
    Ok(())
}
