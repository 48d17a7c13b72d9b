//! Built-in experiment suites.
//!
//! `acceptance` runs every acceptance criterion at full scale; `smoke` runs
//! the same checks on a handful of paths for quick plumbing tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bounds::{mixing_half_width, optimal_epsilon, quantile_table, BoundFamily, BoundSpec};
use crate::functionals::{compute_pair_curves, finite_level_delta_gap};
use crate::montecarlo::{
    content_hash, path_seed, run_coverage, run_exponent_gap, run_identity_checks, run_lil_experiment,
    run_supermartingale_test, AnytimeSpec, CoverageResult, ExperimentConfig, ExperimentError, ExponentGapConfig,
    GeneratorConfig, IdentityConfig, LevelSpec, LilConfig, LilResult, StrategySpec,
};
use crate::partitions::{LevelRange, PartitionLadder, ResolutionPolicy};
use crate::paths::{generate_pair, DriftMode, GbmParams};
use crate::strategies::{ExponentMode, MixMode, MixtureParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuitePreset {
    Acceptance,
    Smoke,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub preset: SuitePreset,
    pub master_seed: u64,
    pub se_multiplier: f64,
    #[serde(default, skip_serializing)]
    pub workers: Option<usize>,
}

impl SuiteConfig {
    pub fn new(preset: SuitePreset, master_seed: u64) -> Self {
        Self { preset, master_seed, se_multiplier: 3.0, workers: None }
    }
}

/// Sizes of every experiment in a suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteSettings {
    pub expansion_paths: usize,
    pub identity_paths: usize,
    pub identity_required: usize,
    pub supermartingale_paths: usize,
    pub gap_paths: usize,
    pub gap_dt: f64,
    pub coverage_paths: usize,
    pub optimal_epsilon_cases: usize,
    pub lil_paths: usize,
    pub lil_required: usize,
    pub lil_budget: f64,
    pub lil_dt: f64,
}

impl SuiteSettings {
    pub fn for_preset(preset: SuitePreset) -> Self {
        match preset {
            SuitePreset::Acceptance => Self {
                expansion_paths: 20,
                identity_paths: 100,
                identity_required: 95,
                supermartingale_paths: 10_000,
                gap_paths: 20,
                gap_dt: 1e-5,
                coverage_paths: 10_000,
                optimal_epsilon_cases: 100,
                lil_paths: 100,
                lil_required: 99,
                lil_budget: 1e3,
                lil_dt: 2e-3,
            },
            SuitePreset::Smoke => Self {
                expansion_paths: 4,
                identity_paths: 10,
                identity_required: 9,
                supermartingale_paths: 200,
                gap_paths: 4,
                gap_dt: 1e-4,
                coverage_paths: 200,
                optimal_epsilon_cases: 20,
                lil_paths: 4,
                lil_required: 3,
                lil_budget: 30.0,
                lil_dt: 1e-2,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub id: u32,
    pub title: String,
    pub pass: bool,
    pub summary: String,
    pub details: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub config: SuiteConfig,
    pub settings: SuiteSettings,
    pub config_hash: String,
    pub criteria: Vec<CriterionReport>,
    pub passed: usize,
    pub all_passed: bool,
}

#[derive(Serialize)]
struct HashedConfig<'a> {
    config: &'a SuiteConfig,
    settings: &'a SuiteSettings,
}

/// Independent master seed for each criterion.
fn criterion_seed(master: u64, id: u32) -> u64 {
    path_seed(master ^ 0x6a09_e667_f3bc_c908, id as u64)
}

fn gbm(vol: f64, drift_mode: DriftMode, horizon: f64, dt: f64, stock_vol: Option<f64>) -> GeneratorConfig {
    GeneratorConfig { vol, drift_mode, horizon, dt, stock_vol }
}

fn report(id: u32, title: &str, pass: bool, summary: String, details: Value) -> CriterionReport {
    CriterionReport { id, title: title.into(), pass, summary, details }
}

fn delta_expansion(cfg: &SuiteConfig, s: &SuiteSettings) -> Result<CriterionReport, ExperimentError> {
    const TOL: f64 = 1e-12;
    let seed = criterion_seed(cfg.master_seed, 1);
    let stock_vols = [0.0, 0.1, 0.3, 1.0];
    let range = LevelRange::new(1, 12).expect("valid range");
    let mut worst = 0.0f64;
    for i in 0..s.expansion_paths {
        let params = GbmParams { vol: 0.2, drift_mode: DriftMode::Martingale, horizon: 1.0, dt: 1e-4, seed: path_seed(seed, i as u64) };
        let err = |e: String| ExperimentError::Path { index: i, message: e };
        let pair = generate_pair(&params, stock_vols[i % stock_vols.len()]).map_err(|e| err(e.to_string()))?;
        let ladder = PartitionLadder::pair(&pair, range, &ResolutionPolicy::unchecked()).map_err(|e| err(e.to_string()))?;
        let curves = compute_pair_curves(&pair, &ladder).map_err(|e| err(e.to_string()))?;
        worst = worst.max(finite_level_delta_gap(&curves).map_err(|e| err(e.to_string()))?);
    }
    Ok(report(
        1,
        "finite-level Δ expansion",
        worst <= TOL,
        format!("max gap {worst:.3e} over {} paths, levels 1..=12 (tolerance {TOL:e})", s.expansion_paths),
        json!({ "paths": s.expansion_paths, "levels": [1, 12], "stock_vols": stock_vols, "max_gap": worst, "tolerance": TOL }),
    ))
}

fn identities(cfg: &SuiteConfig, s: &SuiteSettings) -> Result<(CriterionReport, CriterionReport), ExperimentError> {
    const MU_TOL: f64 = 0.01;
    const CONSISTENCY_TOL: f64 = 0.02;
    let ic = IdentityConfig {
        generator: gbm(0.2, DriftMode::Martingale, 1.0, 1e-4, Some(0.1)),
        n_paths: s.identity_paths,
        levels: LevelSpec::Fixed { n_min: 2, n_max: 6 },
        master_seed: criterion_seed(cfg.master_seed, 2),
        workers: cfg.workers,
    };
    let reports = run_identity_checks(&ic)?;
    let mu: Vec<f64> = reports.iter().map(|r| r.mu_identity_gap).collect();
    let mu_ok = mu.iter().filter(|&&g| g <= MU_TOL).count();
    let cons: Vec<(f64, f64)> = reports
        .iter()
        .map(|r| r.partition_consistency_gap.map_or((f64::NAN, f64::NAN), |g| (g.sigma_i, g.mu_i)))
        .collect();
    let cons_ok = cons.iter().filter(|(a, b)| *a <= CONSISTENCY_TOL && *b <= CONSISTENCY_TOL).count();
    let worst_expansion = reports.iter().filter_map(|r| r.delta_identity_gap).fold(0.0, f64::max);
    let max_of = |v: &mut dyn Iterator<Item = f64>| v.fold(0.0, f64::max);
    let c2 = report(
        2,
        "log-drift identity",
        mu_ok >= s.identity_required,
        format!(
            "{mu_ok}/{} paths with max gap <= {MU_TOL} (need {}); worst {:.4}",
            s.identity_paths,
            s.identity_required,
            max_of(&mut mu.iter().copied())
        ),
        json!({ "generator": ic.generator, "n_max": 6, "tolerance": MU_TOL, "within": mu_ok, "required": s.identity_required, "gaps": mu }),
    );
    let c3 = report(
        3,
        "partition consistency",
        cons_ok >= s.identity_required,
        format!(
            "{cons_ok}/{} paths with Σ^I and M^I gaps <= {CONSISTENCY_TOL} (need {}); worst Σ {:.4}, M {:.4}",
            s.identity_paths,
            s.identity_required,
            max_of(&mut cons.iter().map(|c| c.0)),
            max_of(&mut cons.iter().map(|c| c.1))
        ),
        json!({
            "generator": ic.generator,
            "n_max": 6,
            "tolerance": CONSISTENCY_TOL,
            "within": cons_ok,
            "required": s.identity_required,
            "sigma_gaps": cons.iter().map(|c| c.0).collect::<Vec<_>>(),
            "mu_gaps": cons.iter().map(|c| c.1).collect::<Vec<_>>(),
            "max_delta_gap_at_limit": worst_expansion,
        }),
    );
    Ok((c2, c3))
}

fn supermartingale(cfg: &SuiteConfig, s: &SuiteSettings) -> Result<CriterionReport, ExperimentError> {
    let strategies: Vec<StrategySpec> = [MixMode::CashMix, MixMode::StockMix]
        .into_iter()
        .flat_map(|mode| [-0.5, -0.25, 0.25, 0.5].map(|epsilon| StrategySpec { mode, epsilon, level: None }))
        .collect();
    let run = |drift| {
        let mut ec = ExperimentConfig::new(
            gbm(0.2, drift, 1.0, 1e-4, Some(0.3)),
            s.supermartingale_paths,
            criterion_seed(cfg.master_seed, 4),
        );
        ec.strategies = strategies.clone();
        ec.se_multiplier = cfg.se_multiplier;
        ec.workers = cfg.workers;
        run_supermartingale_test(&ec)
    };
    let main = run(DriftMode::Martingale)?;
    let companion = run(DriftMode::IndexNumeraire)?;
    let failing: Vec<String> = main
        .results
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{:?} ε={} mean {:.4} (SE {:.4})", r.mode, r.epsilon, r.mean, r.standard_error))
        .collect();
    let pass = failing.is_empty();
    let companion_pass = companion.results.iter().all(|r| r.pass);
    let summary = if pass {
        format!("all 8 means <= 1 + {}·SE over {} martingale-mode paths", cfg.se_multiplier, s.supermartingale_paths)
    } else {
        format!(
            "{} of 8 exceed 1 + {}·SE: {}; index-numeraire companion {}",
            failing.len(),
            cfg.se_multiplier,
            failing.join(", "),
            if companion_pass { "passes" } else { "also fails" }
        )
    };
    Ok(report(
        4,
        "supermartingale means",
        pass,
        summary,
        json!({ "martingale": main.results, "index_numeraire_companion": companion.results, "companion_pass": companion_pass }),
    ))
}

fn exponent_gap(cfg: &SuiteConfig, s: &SuiteSettings) -> Result<CriterionReport, ExperimentError> {
    let levels = vec![3, 4, 5, 6, 7];
    let mut details = serde_json::Map::new();
    let mut pass = true;
    let mut parts = Vec::new();
    for mode in [MixMode::CashMix, MixMode::StockMix] {
        let gc = ExponentGapConfig {
            generator: gbm(0.2, DriftMode::Martingale, 1.0, s.gap_dt, Some(0.3)),
            n_paths: s.gap_paths,
            levels: levels.clone(),
            limit_level: 10,
            epsilon: 0.5,
            mode,
            master_seed: criterion_seed(cfg.master_seed, 5),
            workers: cfg.workers,
        };
        let r = run_exponent_gap(&gc)?;
        let ok = r.ratios.iter().all(|q| (0.35..=0.65).contains(q));
        pass &= ok;
        parts.push(format!(
            "{}: ratios {}",
            if mode == MixMode::CashMix { "cash" } else { "stock" },
            r.ratios.iter().map(|q| format!("{q:.3}")).collect::<Vec<_>>().join(" ")
        ));
        details.insert(
            format!("{mode:?}").to_lowercase(),
            json!({ "levels": levels, "limit_level": 10, "mean_gaps": r.mean_gaps, "ratios": r.ratios, "pass": ok }),
        );
    }
    Ok(report(
        5,
        "realized vs theoretical exponent",
        pass,
        format!("gap ratio per level in [0.35, 0.65] over {} paths; {}", s.gap_paths, parts.join("; ")),
        Value::Object(details),
    ))
}

fn coverage(cfg: &SuiteConfig, s: &SuiteSettings) -> Result<(CriterionReport, CriterionReport), ExperimentError> {
    let spec = |family, epsilon, budget| BoundSpec::new(family, 0.1, epsilon, budget).expect("valid spec");
    let mut ec = ExperimentConfig::new(
        gbm(0.2, DriftMode::IndexNumeraire, 1.0, 1e-4, Some(0.3)),
        s.coverage_paths,
        criterion_seed(cfg.master_seed, 6),
    );
    ec.bounds = vec![
        spec(BoundFamily::EpCltTwoSided, None, 0.02),
        spec(BoundFamily::EpCltLower, None, 0.02),
        spec(BoundFamily::EpCltUpper, None, 0.02),
        spec(BoundFamily::EpMixing, Some(10.0), 0.02),
        spec(BoundFamily::EpOptimized, None, 0.02),
        spec(BoundFamily::CapmMixing, Some(10.0), 0.01),
        spec(BoundFamily::CapmOptimized, None, 0.01),
    ];
    ec.anytime = vec![
        AnytimeSpec { mode: ExponentMode::EquityPremium, epsilon: 1.0, delta: 0.1 },
        AnytimeSpec { mode: ExponentMode::Capm, epsilon: 1.0, delta: 0.1 },
    ];
    ec.se_multiplier = cfg.se_multiplier;
    ec.workers = cfg.workers;
    let r = run_coverage(&ec)?;
    let line = |c: &CoverageResult| format!("{} {:.4}±{:.4}", c.label, c.frequency, c.standard_error);

    let clt = &r.results[..3];
    let c6 = report(
        6,
        "equity-premium CLT coverage",
        clt.iter().all(|c| c.pass),
        format!("within {}·SE of 0.9: {}", cfg.se_multiplier, clt.iter().map(line).collect::<Vec<_>>().join("; ")),
        json!({ "generator": ec.generator, "results": clt }),
    );

    let rest = &r.results[3..];
    let clt_two_sided = r.results[0].frequency;
    let optimized = r.results[4].frequency;
    let conservative = optimized > clt_two_sided;
    let c7 = report(
        7,
        "mixing and optimized bounds",
        rest.iter().all(|c| c.pass) && conservative,
        format!(
            "at least 0.9 − {}·SE: {}; optimized {:.4} > CLT {:.4}: {}",
            cfg.se_multiplier,
            rest.iter().map(line).collect::<Vec<_>>().join("; "),
            optimized,
            clt_two_sided,
            conservative
        ),
        json!({ "generator": ec.generator, "results": rest, "optimized_exceeds_clt": conservative }),
    );
    Ok((c6, c7))
}

fn quantiles() -> Result<CriterionReport, ExperimentError> {
    let rows = quantile_table(1e-5, 0.5, 200).map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
    let dominated = rows.iter().all(|r| r.x <= r.eta);
    let ratio_min_q = rows[0].ratio;
    let at_min_q = (ratio_min_q - 0.8888).abs() <= 1e-3;
    let monotone = rows.windows(2).all(|w| w[0].ratio >= w[1].ratio);
    Ok(report(
        8,
        "quantile table",
        dominated && at_min_q && monotone,
        format!("X <= η on all 200 rows: {dominated}; ratio(1e-5) = {ratio_min_q:.5}; ratio rises as q falls: {monotone}"),
        json!({ "rows": rows.len(), "x_le_eta": dominated, "ratio_at_1e-5": ratio_min_q, "monotone": monotone }),
    ))
}

fn optimal_eps(cfg: &SuiteConfig, s: &SuiteSettings) -> Result<CriterionReport, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(criterion_seed(cfg.master_seed, 9));
    let grid: Vec<f64> = (0..1000).map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / 999.0)).collect();
    let mut beaten = 0;
    let mut worst_identity = 0.0f64;
    let mut min_margin = f64::INFINITY;
    for _ in 0..s.optimal_epsilon_cases {
        let delta = 1.0 - rng.random::<f64>() * 0.999;
        let budget = 10f64.powf(rng.random_range(-3.0..3.0));
        let o = optimal_epsilon(delta, budget).map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
        let at_star = mixing_half_width(delta, o.epsilon, budget);
        worst_identity = worst_identity.max((at_star - o.bound).abs() / o.bound);
        let best_grid = grid.iter().map(|&e| mixing_half_width(delta, e, budget)).fold(f64::INFINITY, f64::min);
        if at_star > best_grid * (1.0 + 1e-12) {
            beaten += 1;
        }
        min_margin = min_margin.min((best_grid - at_star) / at_star);
    }
    Ok(report(
        9,
        "optimal epsilon",
        beaten == 0 && worst_identity <= 1e-12,
        format!(
            "closed form beaten on {beaten}/{} cases by a 1000-point grid; min relative margin {min_margin:.3e}; identity error {worst_identity:.1e}",
            s.optimal_epsilon_cases
        ),
        json!({ "cases": s.optimal_epsilon_cases, "grid": [1e-3, 1e3, 1000], "beaten": beaten, "min_margin": min_margin, "identity_error": worst_identity }),
    ))
}

fn lil(cfg: &SuiteConfig, s: &SuiteSettings) -> Result<CriterionReport, ExperimentError> {
    let horizon = 1.05 * s.lil_budget;
    let run = |mode, generator| {
        run_lil_experiment(&LilConfig {
            generator,
            n_paths: s.lil_paths,
            mode,
            budget: s.lil_budget,
            level: 40,
            mixture: MixtureParams::default(),
            mixture_factor: 100.0,
            master_seed: criterion_seed(cfg.master_seed, 10),
            workers: cfg.workers,
        })
    };
    let ep = run(ExponentMode::EquityPremium, gbm(1.0, DriftMode::IndexNumeraire, horizon, s.lil_dt, None))?;
    let capm = run(ExponentMode::Capm, gbm(1.0, DriftMode::IndexNumeraire, horizon, s.lil_dt, Some(1.0)))?;
    let check = |r: &LilResult| {
        let p95 = r.quantiles.map_or(f64::NAN, |q| q.p95);
        (p95, p95 <= 1.3, r.paths_below_factor >= s.lil_required)
    };
    let (ep95, ep_ratio, ep_mix) = check(&ep);
    let (capm95, capm_ratio, capm_mix) = check(&capm);
    let late = |r: &LilResult| r.quantiles_late.map_or(f64::NAN, |q| q.p95);
    Ok(report(
        10,
        "LIL overshoot",
        ep_ratio && ep_mix && capm_ratio && capm_mix,
        format!(
            "p95 max ratio ep {ep95:.3}, capm {capm95:.3} (need <= 1.3; beyond e^e: {:.3}, {:.3}); mixture below 100x initial on {}/{} and {}/{} paths (need {})",
            late(&ep),
            late(&capm),
            ep.paths_below_factor,
            s.lil_paths,
            capm.paths_below_factor,
            s.lil_paths,
            s.lil_required
        ),
        json!({
            "budget": s.lil_budget,
            "equity_premium": { "ratio_pass": ep_ratio, "mixture_pass": ep_mix, "result": ep },
            "capm": { "ratio_pass": capm_ratio, "mixture_pass": capm_mix, "result": capm },
        }),
    ))
}

/// Runs criteria 1 through 10. Reproducibility (criterion 11) compares
/// serialized reports across runs and is checked by the caller.
pub fn run_suite(config: &SuiteConfig) -> Result<SuiteReport, ExperimentError> {
    let settings = SuiteSettings::for_preset(config.preset);
    let s = &settings;
    let mut criteria = vec![delta_expansion(config, s)?];
    let (c2, c3) = identities(config, s)?;
    criteria.extend([c2, c3, supermartingale(config, s)?, exponent_gap(config, s)?]);
    let (c6, c7) = coverage(config, s)?;
    criteria.extend([c6, c7, quantiles()?, optimal_eps(config, s)?, lil(config, s)?]);
    let passed = criteria.iter().filter(|c| c.pass).count();
    Ok(SuiteReport {
        config: *config,
        settings,
        config_hash: content_hash(&HashedConfig { config, settings: s }),
        all_passed: passed == criteria.len(),
        passed,
        criteria,
    })
}
