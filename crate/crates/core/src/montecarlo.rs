//! Seeded Monte Carlo harness.
//!
//! Every path draws its randomness from a seed that depends only on the master
//! seed and the path index, and results are gathered in index order, so the
//! output does not depend on the number of workers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bounds::{anytime_check, capm_interval, ep_interval, lil_ratio_window, BoundError, BoundFamily, BoundSpec};
use crate::functionals::{
    check_identities, compute_curves, compute_pair_curves, intrinsic_time, Clock, FunctionalCurves, IdentityReport,
};
use crate::partitions::{auto_levels, Asset, LevelRange, PartitionLadder, ResolutionPolicy};
use crate::paths::{generate_index, generate_pair, DriftMode, GbmParams, PathPair};
use crate::strategies::{
    lil_mixture, max_log_gap, mix_with_cash, mix_with_stock, theoretical_exponent_at, ExponentMode, MixMode,
    MixtureParams,
};

pub const THREADS_ENV: &str = "GT_MARKET_THREADS";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("path {index}: {message}")]
    Path { index: usize, message: String },
    #[error("LIL region empty: {0}")]
    LilRegionEmpty(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ExperimentError> {
    Err(ExperimentError::InvalidConfig(msg.into()))
}

trait AtPath<T> {
    fn at(self, index: usize) -> Result<T, ExperimentError>;
}

impl<T, E: std::fmt::Display> AtPath<T> for Result<T, E> {
    fn at(self, index: usize) -> Result<T, ExperimentError> {
        self.map_err(|e| ExperimentError::Path { index, message: e.to_string() })
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of path `index` under `master`.
pub fn path_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ index)
}

/// Sha-256 over `blob {len}\0{json}`, hex encoded.
pub fn content_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", json.len()).as_bytes());
    h.update(&json);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Worker count: explicit setting, then `GT_MARKET_THREADS`, then the machine's parallelism.
pub fn resolve_workers(explicit: Option<usize>) -> usize {
    explicit
        .filter(|&w| w > 0)
        .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()).filter(|&w| w > 0))
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Maps `f` over `0..n` on a pool of `workers` threads, keeping index order.
/// The first error by index wins.
pub fn par_map<T, F>(n: usize, workers: Option<usize>, f: F) -> Result<Vec<T>, ExperimentError>
where
    T: Send,
    F: Fn(usize) -> Result<T, ExperimentError> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolve_workers(workers))
        .build()
        .map_err(|e| ExperimentError::ThreadPool(e.to_string()))?;
    let results: Vec<Result<T, ExperimentError>> = pool.install(|| (0..n).into_par_iter().map(f).collect());
    results.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub vol: f64,
    pub drift_mode: DriftMode,
    pub horizon: f64,
    pub dt: f64,
    /// Extra volatility of the stock against the index; no stock when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stock_vol: Option<f64>,
}

impl GeneratorConfig {
    pub fn params(&self, seed: u64) -> GbmParams {
        GbmParams { vol: self.vol, drift_mode: self.drift_mode, horizon: self.horizon, dt: self.dt, seed }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.params(0).validate().map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
        if let Some(nu) = self.stock_vol {
            if !(nu >= 0.0) || !nu.is_finite() {
                return invalid(format!("stock_vol must be nonnegative, got {nu}"));
            }
        }
        Ok(())
    }

    pub fn generate(&self, seed: u64) -> Result<PathPair, crate::paths::PathError> {
        let params = self.params(seed);
        match self.stock_vol {
            Some(nu) => generate_pair(&params, nu),
            None => {
                let p = generate_index(&params)?;
                PathPair::new(p.times().to_vec(), p.values().to_vec(), None)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LevelSpec {
    /// `n_min` up to the finest level passing the resolution check, capped.
    Auto { n_min: u32, cap: u32 },
    Fixed { n_min: u32, n_max: u32 },
}

impl Default for LevelSpec {
    fn default() -> Self {
        LevelSpec::Auto { n_min: 2, cap: 10 }
    }
}

impl LevelSpec {
    pub fn resolve(&self, values: &[&[f64]], policy: &ResolutionPolicy) -> Result<LevelRange, crate::partitions::PartitionError> {
        match *self {
            LevelSpec::Auto { n_min, cap } => auto_levels(values, n_min, cap, policy),
            LevelSpec::Fixed { n_min, n_max } => LevelRange::new(n_min, n_max),
        }
    }
}

fn policy(enforce: bool) -> ResolutionPolicy {
    if enforce {
        ResolutionPolicy::default()
    } else {
        ResolutionPolicy::unchecked()
    }
}

fn default_true() -> bool {
    true
}

fn default_se_multiplier() -> f64 {
    3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub mode: MixMode,
    pub epsilon: f64,
    /// Ladder level; the finest resolved level when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnytimeSpec {
    pub mode: ExponentMode,
    pub epsilon: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    pub n_paths: usize,
    #[serde(default)]
    pub levels: LevelSpec,
    #[serde(default = "default_true")]
    pub enforce_resolution: bool,
    #[serde(default)]
    pub bounds: Vec<BoundSpec>,
    #[serde(default)]
    pub anytime: Vec<AnytimeSpec>,
    #[serde(default)]
    pub strategies: Vec<StrategySpec>,
    pub master_seed: u64,
    #[serde(default = "default_se_multiplier")]
    pub se_multiplier: f64,
    /// Never serialized: results must not depend on it.
    #[serde(default, skip_serializing)]
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(generator: GeneratorConfig, n_paths: usize, master_seed: u64) -> Self {
        Self {
            generator,
            n_paths,
            levels: LevelSpec::default(),
            enforce_resolution: true,
            bounds: Vec::new(),
            anytime: Vec::new(),
            strategies: Vec::new(),
            master_seed,
            se_multiplier: 3.0,
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.generator.validate()?;
        if self.n_paths == 0 {
            return invalid("n_paths must be at least 1");
        }
        if !(self.se_multiplier >= 0.0) {
            return invalid(format!("se_multiplier must be nonnegative, got {}", self.se_multiplier));
        }
        for b in &self.bounds {
            b.validate().map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
            if b.family.is_clt() && self.generator.drift_mode != DriftMode::IndexNumeraire {
                return invalid(format!("{:?} is an equality check and needs index_numeraire generation", b.family));
            }
            if b.family.is_capm() && self.generator.stock_vol.is_none() {
                return invalid(format!("{:?} needs stock_vol", b.family));
            }
        }
        for a in &self.anytime {
            if !(a.epsilon > 0.0) || !(a.delta > 0.0 && a.delta <= 1.0) {
                return invalid(format!("anytime check needs epsilon > 0 and delta in (0, 1], got {a:?}"));
            }
            if a.mode == ExponentMode::Capm && self.generator.stock_vol.is_none() {
                return invalid("CAPM anytime check needs stock_vol");
            }
        }
        for s in &self.strategies {
            if !s.epsilon.is_finite() {
                return invalid(format!("strategy epsilon must be finite, got {}", s.epsilon));
            }
            if s.mode == MixMode::StockMix && self.generator.stock_vol.is_none() {
                return invalid("stock_mix needs stock_vol");
            }
        }
        Ok(())
    }

    fn needs_single(&self) -> bool {
        self.bounds.iter().any(|b| !b.family.is_capm()) || self.anytime.iter().any(|a| a.mode == ExponentMode::EquityPremium)
    }

    fn needs_pair(&self) -> bool {
        self.bounds.iter().any(|b| b.family.is_capm()) || self.anytime.iter().any(|a| a.mode == ExponentMode::Capm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonMode {
    EqualityTwoSided,
    AtLeast,
}

impl ComparisonMode {
    pub fn for_family(family: BoundFamily) -> Self {
        if family.is_clt() {
            ComparisonMode::EqualityTwoSided
        } else {
            ComparisonMode::AtLeast
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub label: String,
    pub n_paths: usize,
    pub hits: usize,
    pub frequency: f64,
    pub standard_error: f64,
    pub target: f64,
    pub comparison: ComparisonMode,
    pub pass: bool,
    /// Paths on which τ_T was undefined (counted as misses for ep families).
    pub undefined_tau: usize,
    /// Paths counted as hits by the τ_T = ∞ convention.
    pub convention_applied: usize,
}

impl CoverageResult {
    pub fn from_counts(
        label: impl Into<String>,
        n_paths: usize,
        hits: usize,
        target: f64,
        comparison: ComparisonMode,
        se_multiplier: f64,
    ) -> Self {
        let n = n_paths as f64;
        let frequency = hits as f64 / n;
        let standard_error = (frequency * (1.0 - frequency) / n).sqrt();
        let tol = se_multiplier * standard_error;
        let pass = match comparison {
            ComparisonMode::EqualityTwoSided => (frequency - target).abs() <= tol,
            ComparisonMode::AtLeast => frequency >= target - tol,
        };
        Self {
            label: label.into(),
            n_paths,
            hits,
            frequency,
            standard_error,
            target,
            comparison,
            pass,
            undefined_tau: 0,
            convention_applied: 0,
        }
    }
}

pub fn bound_label(spec: &BoundSpec) -> String {
    let mut s = format!("{} delta={} T={}", spec.family, spec.delta, spec.budget);
    if let Some(e) = spec.epsilon {
        s.push_str(&format!(" epsilon={e}"));
    }
    s
}

fn anytime_label(a: &AnytimeSpec) -> String {
    let mode = serde_json::to_value(a.mode).expect("mode serializes");
    format!("anytime {} epsilon={} delta={}", mode.as_str().unwrap_or_default(), a.epsilon, a.delta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub results: Vec<CoverageResult>,
}

#[derive(Debug, Clone, Copy)]
enum Outcome {
    Hit,
    Miss,
    Undefined,
    Convention,
}

/// Curves on the single-index ladder and on the pair ladder, as needed.
pub struct PathCurves {
    pub pair: PathPair,
    pub single: Option<FunctionalCurves>,
    pub paired: Option<FunctionalCurves>,
}

/// Generates path `index` and computes the requested curves.
pub fn path_curves(
    generator: &GeneratorConfig,
    levels: &LevelSpec,
    policy: &ResolutionPolicy,
    seed: u64,
    single: bool,
    paired: bool,
) -> Result<PathCurves, String> {
    let pair = generator.generate(seed).map_err(|e| e.to_string())?;
    let single = if single {
        let path = pair.index_path();
        let range = levels.resolve(&[path.values()], policy).map_err(|e| e.to_string())?;
        let ladder = PartitionLadder::single(&path, Asset::Index, range, policy).map_err(|e| e.to_string())?;
        Some(compute_curves(&path, &ladder).map_err(|e| e.to_string())?)
    } else {
        None
    };
    let paired = if paired {
        let stock = pair.stock_values().ok_or("pair curves need a stock")?;
        let range = levels.resolve(&[pair.index_values(), stock], policy).map_err(|e| e.to_string())?;
        let ladder = PartitionLadder::pair(&pair, range, policy).map_err(|e| e.to_string())?;
        Some(compute_pair_curves(&pair, &ladder).map_err(|e| e.to_string())?)
    } else {
        None
    };
    Ok(PathCurves { pair, single, paired })
}

/// Hit frequencies of every bound and anytime check in `config`.
pub fn run_coverage(config: &ExperimentConfig) -> Result<CoverageReport, ExperimentError> {
    config.validate()?;
    let pol = policy(config.enforce_resolution);
    let outcomes = par_map(config.n_paths, config.workers, |i| {
        let seed = path_seed(config.master_seed, i as u64);
        let pc = path_curves(&config.generator, &config.levels, &pol, seed, config.needs_single(), config.needs_pair())
            .at(i)?;
        let mut out = Vec::with_capacity(config.bounds.len() + config.anytime.len());
        for spec in &config.bounds {
            let report = if spec.family.is_capm() {
                capm_interval(spec, pc.paired.as_ref().expect("pair curves"))
            } else {
                ep_interval(spec, pc.single.as_ref().expect("single curves"))
            };
            out.push(match report {
                Ok(r) if r.convention_applied => Outcome::Convention,
                Ok(r) if r.hit => Outcome::Hit,
                Ok(_) => Outcome::Miss,
                Err(BoundError::TauUndefined(_)) => Outcome::Undefined,
                Err(e) => return Err(e).at(i),
            });
        }
        for a in &config.anytime {
            let curves = match a.mode {
                ExponentMode::EquityPremium => pc.single.as_ref(),
                ExponentMode::Capm => pc.paired.as_ref(),
            }
            .expect("curves present");
            let held = anytime_check(curves, a.mode, a.epsilon, a.delta).at(i)?.held;
            out.push(if held { Outcome::Hit } else { Outcome::Miss });
        }
        Ok(out)
    })?;

    let n = config.n_paths;
    let tally = |col: usize| {
        let mut hits = 0;
        let mut undefined = 0;
        let mut convention = 0;
        for row in &outcomes {
            match row[col] {
                Outcome::Hit => hits += 1,
                Outcome::Miss => {}
                Outcome::Undefined => undefined += 1,
                Outcome::Convention => {
                    hits += 1;
                    convention += 1
                }
            }
        }
        (hits, undefined, convention)
    };
    let mut results = Vec::new();
    for (c, spec) in config.bounds.iter().enumerate() {
        let (hits, undefined, convention) = tally(c);
        let target = 1.0 - spec.delta;
        let mut r = CoverageResult::from_counts(
            bound_label(spec),
            n,
            hits,
            target,
            ComparisonMode::for_family(spec.family),
            config.se_multiplier,
        );
        r.undefined_tau = undefined;
        r.convention_applied = convention;
        results.push(r);
    }
    for (c, a) in config.anytime.iter().enumerate() {
        let (hits, _, _) = tally(config.bounds.len() + c);
        results.push(CoverageResult::from_counts(
            anytime_label(a),
            n,
            hits,
            1.0 - a.delta,
            ComparisonMode::AtLeast,
            config.se_multiplier,
        ));
    }
    Ok(CoverageReport { config: config.clone(), config_hash: content_hash(config), results })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupermartingaleResult {
    pub mode: MixMode,
    pub epsilon: f64,
    pub n_paths: usize,
    pub mean: f64,
    pub standard_error: f64,
    /// `mean <= 1 + k·SE`.
    pub pass: bool,
    /// Paths on which the strategy was stopped.
    pub stopped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupermartingaleReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub results: Vec<SupermartingaleResult>,
}

/// Sample mean and its standard error.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Terminal relative capital of every strategy in `config` on every path.
pub fn run_supermartingale_test(config: &ExperimentConfig) -> Result<SupermartingaleReport, ExperimentError> {
    config.validate()?;
    if matches!(config.generator.drift_mode, DriftMode::Custom(_)) {
        return invalid("supermartingale test needs martingale or index_numeraire generation");
    }
    if config.strategies.is_empty() {
        return invalid("no strategies to test");
    }
    let pol = policy(config.enforce_resolution);
    let per_path = par_map(config.n_paths, config.workers, |i| {
        let seed = path_seed(config.master_seed, i as u64);
        let pair = config.generator.generate(seed).at(i)?;
        let index = pair.index_path();
        let mut single_ladders: Vec<(u32, PartitionLadder)> = Vec::new();
        let mut pair_ladders: Vec<(u32, PartitionLadder)> = Vec::new();
        let mut out = Vec::with_capacity(config.strategies.len());
        for s in &config.strategies {
            let cp = match s.mode {
                MixMode::CashMix => {
                    let n = match s.level {
                        Some(n) => n,
                        None => config.levels.resolve(&[index.values()], &pol).at(i)?.n_max,
                    };
                    if !single_ladders.iter().any(|(l, _)| *l == n) {
                        let range = LevelRange::single(n).at(i)?;
                        single_ladders.push((n, PartitionLadder::single(&index, Asset::Index, range, &pol).at(i)?));
                    }
                    let ladder = &single_ladders.iter().find(|(l, _)| *l == n).expect("built").1;
                    mix_with_cash(&index, ladder.finest(), s.epsilon).at(i)?
                }
                MixMode::StockMix => {
                    let stock = pair.stock_values().expect("validated");
                    let n = match s.level {
                        Some(n) => n,
                        None => config.levels.resolve(&[pair.index_values(), stock], &pol).at(i)?.n_max,
                    };
                    if !pair_ladders.iter().any(|(l, _)| *l == n) {
                        let range = LevelRange::single(n).at(i)?;
                        pair_ladders.push((n, PartitionLadder::pair(&pair, range, &pol).at(i)?));
                    }
                    let ladder = &pair_ladders.iter().find(|(l, _)| *l == n).expect("built").1;
                    mix_with_stock(&pair, ladder.finest(), s.epsilon).at(i)?
                }
            };
            out.push((cp.terminal_relative(), cp.stopped_at.is_some()));
        }
        Ok(out)
    })?;

    let results = config
        .strategies
        .iter()
        .enumerate()
        .map(|(c, s)| {
            let values: Vec<f64> = per_path.iter().map(|row| row[c].0).collect();
            let stopped = per_path.iter().filter(|row| row[c].1).count();
            let (mean, standard_error) = mean_and_se(&values);
            SupermartingaleResult {
                mode: s.mode,
                epsilon: s.epsilon,
                n_paths: config.n_paths,
                mean,
                standard_error,
                pass: mean <= 1.0 + config.se_multiplier * standard_error,
                stopped,
            }
        })
        .collect();
    Ok(SupermartingaleReport { config: config.clone(), config_hash: content_hash(config), results })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityConfig {
    pub generator: GeneratorConfig,
    pub n_paths: usize,
    pub levels: LevelSpec,
    pub master_seed: u64,
    #[serde(default, skip_serializing)]
    pub workers: Option<usize>,
}

/// Identity gaps per path: the `M = ln I + Σ/2` gap on the single-index ladder and, with a
/// stock, the Δ expansion and partition-consistency gaps against the pair ladder.
pub fn run_identity_checks(config: &IdentityConfig) -> Result<Vec<IdentityReport>, ExperimentError> {
    config.generator.validate()?;
    if config.n_paths == 0 {
        return invalid("n_paths must be at least 1");
    }
    let pol = ResolutionPolicy::default();
    let paired = config.generator.stock_vol.is_some();
    par_map(config.n_paths, config.workers, |i| {
        let seed = path_seed(config.master_seed, i as u64);
        let pc = path_curves(&config.generator, &config.levels, &pol, seed, true, paired).at(i)?;
        Ok(check_identities(pc.single.as_ref().expect("single"), pc.paired.as_ref()))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentGapConfig {
    pub generator: GeneratorConfig,
    pub n_paths: usize,
    /// Levels at which the strategies trade.
    pub levels: Vec<u32>,
    /// Level whose functionals stand in for the limit.
    pub limit_level: u32,
    pub epsilon: f64,
    pub mode: MixMode,
    pub master_seed: u64,
    #[serde(default, skip_serializing)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentGapReport {
    pub config: ExponentGapConfig,
    /// `gaps[p][i]`: max gap on path `p` when trading at `levels[i]`.
    pub gaps: Vec<Vec<f64>>,
    /// Mean gap per level.
    pub mean_gaps: Vec<f64>,
    /// `mean_gaps[i + 1] / mean_gaps[i]`.
    pub ratios: Vec<f64>,
}

/// Max over grid times of `|ln relative capital − exponent|`, where the capital
/// trades at each of `levels` and the exponent is taken at `limit_level`.
pub fn run_exponent_gap(config: &ExponentGapConfig) -> Result<ExponentGapReport, ExperimentError> {
    config.generator.validate()?;
    if config.levels.is_empty() || config.levels.iter().any(|&n| n == 0 || n > config.limit_level) {
        return invalid("levels must be nonempty and lie in 1..=limit_level");
    }
    if config.mode == MixMode::StockMix && config.generator.stock_vol.is_none() {
        return invalid("stock_mix needs stock_vol");
    }
    let lo = *config.levels.iter().min().expect("nonempty");
    let range = LevelRange::new(lo, config.limit_level).map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
    let pol = ResolutionPolicy::unchecked();
    let gaps = par_map(config.n_paths, config.workers, |i| {
        let pair = config.generator.generate(path_seed(config.master_seed, i as u64)).at(i)?;
        let (ladder, curves, index) = match config.mode {
            MixMode::CashMix => {
                let index = pair.index_path();
                let ladder = PartitionLadder::single(&index, Asset::Index, range, &pol).at(i)?;
                let curves = compute_curves(&index, &ladder).at(i)?;
                (ladder, curves, Some(index))
            }
            MixMode::StockMix => {
                let ladder = PartitionLadder::pair(&pair, range, &pol).at(i)?;
                let curves = compute_pair_curves(&pair, &ladder).at(i)?;
                (ladder, curves, None)
            }
        };
        let exponent = theoretical_exponent_at(&curves, config.limit_level, config.mode.into(), config.epsilon)
            .at(i)?;
        config
            .levels
            .iter()
            .map(|&n| {
                let level = ladder.level(n).expect("level in range");
                let cp = match &index {
                    Some(p) => mix_with_cash(p, level, config.epsilon),
                    None => mix_with_stock(&pair, level, config.epsilon),
                }
                .at(i)?;
                Ok(max_log_gap(&cp, &exponent))
            })
            .collect()
    })?;
    let mean_gaps: Vec<f64> =
        (0..config.levels.len()).map(|c| gaps.iter().map(|g: &Vec<f64>| g[c]).sum::<f64>() / gaps.len() as f64).collect();
    let ratios = mean_gaps.windows(2).map(|w| w[1] / w[0]).collect();
    Ok(ExponentGapReport { config: config.clone(), gaps, mean_gaps, ratios })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LilConfig {
    pub generator: GeneratorConfig,
    pub n_paths: usize,
    pub mode: ExponentMode,
    /// Intrinsic budget: ratios are taken while the clock is at most this.
    pub budget: f64,
    /// Single ladder level; fine enough that every grid step is a crossing.
    pub level: u32,
    pub mixture: MixtureParams,
    /// Mixture boundedness threshold, as a multiple of the initial value.
    pub mixture_factor: f64,
    pub master_seed: u64,
    #[serde(default, skip_serializing)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioQuantiles {
    pub p50: f64,
    pub p90: f64,
    pub p95: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LilResult {
    pub config: LilConfig,
    pub config_hash: String,
    /// False when the clock cannot grow (CAPM with a stock equal to the index).
    pub applicable: bool,
    /// Max absolute LIL ratio per path; absent where the clock never exceeded e.
    pub max_ratios: Vec<Option<f64>>,
    pub quantiles: Option<RatioQuantiles>,
    /// Max absolute ratio per path once the clock exceeds e^e.
    pub max_ratios_late: Vec<Option<f64>>,
    pub quantiles_late: Option<RatioQuantiles>,
    /// Paths whose clock did not reach the budget.
    pub short_paths: usize,
    /// `max_t mixture_t / mixture_0` per path, over the same window.
    pub mixture_max_ratios: Vec<f64>,
    pub paths_below_factor: usize,
    pub tail_weight_bound: f64,
}

impl RatioQuantiles {
    fn of(values: &[Option<f64>]) -> Option<Self> {
        let mut v: Vec<f64> = values.iter().flatten().copied().collect();
        v.sort_by(f64::total_cmp);
        (!v.is_empty()).then(|| RatioQuantiles {
            p50: quantile_sorted(&v, 0.5),
            p90: quantile_sorted(&v, 0.9),
            p95: quantile_sorted(&v, 0.95),
            max: v[v.len() - 1],
        })
    }
}

/// `e^e`, where `ln ln` of the clock reaches 1.
pub const E_TO_E: f64 = 15.154_262_241_479_262;

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-path maxima of the LIL ratio and of the LIL mixture.
pub fn run_lil_experiment(config: &LilConfig) -> Result<LilResult, ExperimentError> {
    config.generator.validate()?;
    config.mixture.validate().map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
    if config.n_paths == 0 {
        return invalid("n_paths must be at least 1");
    }
    let e = std::f64::consts::E;
    if !(config.budget > e) {
        return Err(ExperimentError::LilRegionEmpty(format!("budget {} does not exceed e", config.budget)));
    }
    let clock_vol = match config.mode {
        ExponentMode::EquityPremium => config.generator.vol,
        ExponentMode::Capm => config.generator.stock_vol.ok_or_else(|| {
            ExperimentError::InvalidConfig("CAPM LIL experiment needs stock_vol".into())
        })?,
    };
    let empty = || LilResult {
        config: config.clone(),
        config_hash: content_hash(config),
        applicable: false,
        max_ratios: Vec::new(),
        quantiles: None,
        max_ratios_late: Vec::new(),
        quantiles_late: None,
        short_paths: 0,
        mixture_max_ratios: Vec::new(),
        paths_below_factor: 0,
        tail_weight_bound: config.mixture.tail_weight_bound(),
    };
    if config.mode == ExponentMode::Capm && clock_vol == 0.0 {
        return Ok(empty());
    }
    if clock_vol * clock_vol * config.generator.horizon <= e {
        return Err(ExperimentError::LilRegionEmpty(format!(
            "expected clock {} at the horizon does not exceed e",
            clock_vol * clock_vol * config.generator.horizon
        )));
    }
    let range = LevelRange::single(config.level).map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
    let pol = ResolutionPolicy::unchecked();
    let per_path = par_map(config.n_paths, config.workers, |i| {
        let pair = config.generator.generate(path_seed(config.master_seed, i as u64)).at(i)?;
        let curves = match config.mode {
            ExponentMode::EquityPremium => {
                let index = pair.index_path();
                let ladder = PartitionLadder::single(&index, Asset::Index, range, &pol).at(i)?;
                compute_curves(&index, &ladder).at(i)?
            }
            ExponentMode::Capm => {
                let ladder = PartitionLadder::pair(&pair, range, &pol).at(i)?;
                compute_pair_curves(&pair, &ladder).at(i)?
            }
        };
        drop(pair);
        let clock = match config.mode {
            ExponentMode::EquityPremium => Clock::SigmaIndex,
            ExponentMode::Capm => Clock::Delta,
        };
        let reached = intrinsic_time(&curves, clock, config.budget).at(i)?;
        let end = reached.map_or(curves.len(), |g| g.grid_index + 1);
        let window = |floor| match lil_ratio_window(&curves, config.mode, floor, config.budget) {
            Ok(r) => Ok(Some(r.max_abs)),
            Err(BoundError::LilRegionEmpty) => Ok(None),
            Err(e) => Err(e),
        };
        let ratio = window(0.0).at(i)?;
        let late = window(E_TO_E).at(i)?;
        let mix = lil_mixture(&curves, config.mode, config.mixture).at(i)?;
        let max_log = mix.log_values[..end].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok((ratio, reached.is_none(), (max_log - mix.initial.ln()).exp(), late))
    })?;

    let max_ratios: Vec<Option<f64>> = per_path.iter().map(|p| p.0).collect();
    let max_ratios_late: Vec<Option<f64>> = per_path.iter().map(|p| p.3).collect();
    let quantiles = RatioQuantiles::of(&max_ratios);
    let quantiles_late = RatioQuantiles::of(&max_ratios_late);
    let mixture_max_ratios: Vec<f64> = per_path.iter().map(|p| p.2).collect();
    let paths_below_factor = mixture_max_ratios.iter().filter(|&&r| r < config.mixture_factor).count();
    Ok(LilResult {
        applicable: true,
        max_ratios,
        quantiles,
        max_ratios_late,
        quantiles_late,
        short_paths: per_path.iter().filter(|p| p.1).count(),
        mixture_max_ratios,
        paths_below_factor,
        ..empty()
    })
}
