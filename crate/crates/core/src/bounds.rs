//! Confidence statements for the equity premium and the CAPM, evaluated on a
//! single path, plus the Gaussian quantile utilities they rest on.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functionals::{intrinsic_time, Clock, FunctionalCurves, FunctionalError, GridTime};
use crate::strategies::{statistic_and_clock, ExponentMode, StrategyError};

#[derive(Debug, Error, PartialEq)]
pub enum BoundError {
    #[error("probability must be positive, got {0}")]
    NonPositiveProbability(f64),
    #[error("delta must lie in (0, 1] for {family}, got {delta}")]
    DeltaOutOfRange { family: BoundFamily, delta: f64 },
    #[error("delta must lie in (0, 1], got {0}")]
    InvalidDelta(f64),
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("{0} needs an epsilon")]
    EpsilonRequired(BoundFamily),
    #[error("{0} takes no epsilon")]
    UnexpectedEpsilon(BoundFamily),
    #[error("intrinsic-time budget T must be positive, got {0}")]
    InvalidBudget(f64),
    #[error("{family} cannot be evaluated by {operation}")]
    WrongFamily { family: BoundFamily, operation: &'static str },
    #[error("intrinsic time undefined: Σ^I never reaches T = {0} on this path")]
    TauUndefined(f64),
    #[error("pair curves required")]
    MissingPairCurves,
    #[error("invalid quantile range: {0}")]
    InvalidRange(String),
    #[error("LIL region empty: the clock never exceeds e")]
    LilRegionEmpty,
    #[error("time {t} is outside the grid [0, {end}]")]
    TimeOutOfRange { t: f64, end: f64 },
    #[error(transparent)]
    Functional(#[from] FunctionalError),
}

impl From<StrategyError> for BoundError {
    fn from(e: StrategyError) -> Self {
        match e {
            StrategyError::MissingPairCurves | StrategyError::MissingStock => BoundError::MissingPairCurves,
            other => BoundError::InvalidRange(other.to_string()),
        }
    }
}

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Acklam's rational approximation of the lower quantile `Φ^{-1}(p)`.
fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    }
}

/// Upper `p`-quantile `z_p` of the standard Gaussian: `P(ξ ≥ z_p) = p`.
/// Returns `−∞` for `p ≥ 1`.
pub fn gaussian_quantile(p: f64) -> Result<f64, BoundError> {
    if p.is_nan() || p <= 0.0 {
        return Err(BoundError::NonPositiveProbability(p));
    }
    if p >= 1.0 {
        return Ok(f64::NEG_INFINITY);
    }
    // Work in the smaller tail so the Newton step sees an accurate CDF.
    let (lower, sign) = if p < 0.5 { (p, -1.0) } else { (1.0 - p, 1.0) };
    let mut x = acklam(lower);
    let err = standard_normal_cdf(x) - lower;
    x -= err * SQRT_2PI * (0.5 * x * x).exp();
    Ok(sign * x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundFamily {
    EpCltTwoSided,
    EpCltLower,
    EpCltUpper,
    EpMixing,
    EpOptimized,
    CapmMixing,
    CapmOptimized,
}

impl BoundFamily {
    pub const ALL: [BoundFamily; 7] = [
        BoundFamily::EpCltTwoSided,
        BoundFamily::EpCltLower,
        BoundFamily::EpCltUpper,
        BoundFamily::EpMixing,
        BoundFamily::EpOptimized,
        BoundFamily::CapmMixing,
        BoundFamily::CapmOptimized,
    ];

    pub fn is_clt(self) -> bool {
        matches!(self, BoundFamily::EpCltTwoSided | BoundFamily::EpCltLower | BoundFamily::EpCltUpper)
    }

    pub fn is_capm(self) -> bool {
        matches!(self, BoundFamily::CapmMixing | BoundFamily::CapmOptimized)
    }

    pub fn needs_epsilon(self) -> bool {
        matches!(self, BoundFamily::EpMixing | BoundFamily::CapmMixing)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BoundFamily::EpCltTwoSided => "ep_clt_two_sided",
            BoundFamily::EpCltLower => "ep_clt_lower",
            BoundFamily::EpCltUpper => "ep_clt_upper",
            BoundFamily::EpMixing => "ep_mixing",
            BoundFamily::EpOptimized => "ep_optimized",
            BoundFamily::CapmMixing => "capm_mixing",
            BoundFamily::CapmOptimized => "capm_optimized",
        }
    }
}

impl std::fmt::Display for BoundFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSpec {
    pub family: BoundFamily,
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(rename = "T")]
    pub budget: f64,
}

impl BoundSpec {
    pub fn new(family: BoundFamily, delta: f64, epsilon: Option<f64>, budget: f64) -> Result<Self, BoundError> {
        let spec = Self { family, delta, epsilon, budget };
        spec.validate()?;
        Ok(spec)
    }

    /// δ ≥ 1 is accepted for the CLT families, where it makes the event trivial.
    pub fn validate(&self) -> Result<(), BoundError> {
        let family = self.family;
        if !(self.delta > 0.0) || !self.delta.is_finite() || (!family.is_clt() && self.delta > 1.0) {
            return Err(BoundError::DeltaOutOfRange { family, delta: self.delta });
        }
        if !(self.budget > 0.0) || !self.budget.is_finite() {
            return Err(BoundError::InvalidBudget(self.budget));
        }
        match (family.needs_epsilon(), self.epsilon) {
            (true, None) => return Err(BoundError::EpsilonRequired(family)),
            (false, Some(_)) => return Err(BoundError::UnexpectedEpsilon(family)),
            (true, Some(e)) if !(e > 0.0) || !e.is_finite() => return Err(BoundError::InvalidEpsilon(e)),
            _ => {}
        }
        Ok(())
    }

    pub fn half_width(&self) -> Result<f64, BoundError> {
        self.validate()?;
        let t = self.budget;
        Ok(match self.family {
            BoundFamily::EpCltTwoSided => gaussian_quantile(self.delta / 2.0)? * t.sqrt(),
            BoundFamily::EpCltLower | BoundFamily::EpCltUpper => gaussian_quantile(self.delta)? * t.sqrt(),
            BoundFamily::EpMixing | BoundFamily::CapmMixing => {
                mixing_half_width(self.delta, self.epsilon.expect("validated"), t)
            }
            BoundFamily::EpOptimized | BoundFamily::CapmOptimized => optimized_half_width(self.delta, t),
        })
    }

    /// Whether `statistic` lies inside the event of this family.
    pub fn covers(&self, statistic: f64, half_width: f64) -> bool {
        match self.family {
            BoundFamily::EpCltLower => statistic > -half_width,
            BoundFamily::EpCltUpper => statistic < half_width,
            _ => statistic.abs() < half_width,
        }
    }
}

/// `(1/ε) ln(2/δ) + (ε/2) T`.
pub fn mixing_half_width(delta: f64, epsilon: f64, budget: f64) -> f64 {
    (2.0 / delta).ln() / epsilon + 0.5 * epsilon * budget
}

/// `√(2 T ln(2/δ))`.
pub fn optimized_half_width(delta: f64, budget: f64) -> f64 {
    (2.0 * budget * (2.0 / delta).ln()).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub spec: BoundSpec,
    pub tau: Option<GridTime>,
    pub statistic: Option<f64>,
    pub half_width: f64,
    pub hit: bool,
    /// τ undefined: the CAPM event is taken to have happened.
    pub convention_applied: bool,
}

impl BoundReport {
    pub fn recompute_hit(&self) -> bool {
        if self.convention_applied {
            return true;
        }
        self.statistic.is_some_and(|s| self.spec.covers(s, self.half_width))
    }
}

/// Equity-premium interval at the intrinsic time `τ_T` of `Σ^I`.
pub fn ep_interval(spec: &BoundSpec, curves: &FunctionalCurves) -> Result<BoundReport, BoundError> {
    if spec.family.is_capm() {
        return Err(BoundError::WrongFamily { family: spec.family, operation: "ep_interval" });
    }
    let half_width = spec.half_width()?;
    let tau = intrinsic_time(curves, Clock::SigmaIndex, spec.budget)?.ok_or(BoundError::TauUndefined(spec.budget))?;
    let j = tau.grid_index;
    let statistic = match spec.family {
        BoundFamily::EpMixing => curves.limit().mu_i[j] - spec.budget,
        _ => curves.log_index[j] - 0.5 * spec.budget,
    };
    Ok(BoundReport {
        spec: *spec,
        tau: Some(tau),
        statistic: Some(statistic),
        half_width,
        hit: spec.covers(statistic, half_width),
        convention_applied: false,
    })
}

/// CAPM interval at the intrinsic time `τ_T` of `Δ^{S,I}`. When `Δ` never
/// reaches `T` the event counts as having happened.
pub fn capm_interval(spec: &BoundSpec, curves: &FunctionalCurves) -> Result<BoundReport, BoundError> {
    if !spec.family.is_capm() {
        return Err(BoundError::WrongFamily { family: spec.family, operation: "capm_interval" });
    }
    let half_width = spec.half_width()?;
    let lim = curves.limit();
    let pc = lim.pair.as_ref().ok_or(BoundError::MissingPairCurves)?;
    let Some(tau) = intrinsic_time(curves, Clock::Delta, spec.budget)? else {
        return Ok(BoundReport {
            spec: *spec,
            tau: None,
            statistic: None,
            half_width,
            hit: true,
            convention_applied: true,
        });
    };
    let j = tau.grid_index;
    let statistic = pc.mu_s[j] - lim.mu_i[j] + lim.sigma_i[j] - pc.sigma_cross[j];
    Ok(BoundReport {
        spec: *spec,
        tau: Some(tau),
        statistic: Some(statistic),
        half_width,
        hit: spec.covers(statistic, half_width),
        convention_applied: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalEpsilon {
    pub epsilon: f64,
    pub bound: f64,
}

/// Minimizer of `(1/ε) ln(2/δ) + (ε/2) T` and the minimum value.
pub fn optimal_epsilon(delta: f64, budget: f64) -> Result<OptimalEpsilon, BoundError> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(BoundError::InvalidDelta(delta));
    }
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(BoundError::InvalidBudget(budget));
    }
    let l = (2.0 / delta).ln();
    Ok(OptimalEpsilon { epsilon: (2.0 * l / budget).sqrt(), bound: (2.0 * budget * l).sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnytimeCheck {
    pub held: bool,
    pub first_violation: Option<GridTime>,
}

/// Checks `|stat_t| < (1/ε) ln(2/δ) + (ε/2) clock_t` at every grid time, where
/// `(stat, clock)` is `(M^I − Σ^I, Σ^I)` or the CAPM analogue with `Δ^{S,I}`.
pub fn anytime_check(
    curves: &FunctionalCurves,
    mode: ExponentMode,
    epsilon: f64,
    delta: f64,
) -> Result<AnytimeCheck, BoundError> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(BoundError::InvalidEpsilon(epsilon));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(BoundError::InvalidDelta(delta));
    }
    let (stat, clock) = statistic_and_clock(curves.limit(), mode)?;
    let base = (2.0 / delta).ln() / epsilon;
    let first = stat.iter().zip(clock).position(|(s, c)| s.abs() >= base + 0.5 * epsilon * c);
    Ok(AnytimeCheck {
        held: first.is_none(),
        first_violation: first.map(|j| GridTime { grid_index: j, time: curves.times[j] }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpdReport {
    pub time: f64,
    pub grid_index: usize,
    /// `Δ^{S,I}_t / 2`.
    pub tpd: f64,
    /// `ln S_t − ln I_t + Δ^{S,I}_t / 2`, both prices normalized to start at 1.
    pub residual: f64,
}

/// Theoretical performance deficit of the stock at time `t` (last grid time ≤ t).
pub fn tpd(curves: &FunctionalCurves, t: f64) -> Result<TpdReport, BoundError> {
    let lim = curves.limit();
    let pc = lim.pair.as_ref().ok_or(BoundError::MissingPairCurves)?;
    let log_stock = curves.log_stock.as_ref().ok_or(BoundError::MissingPairCurves)?;
    let end = *curves.times.last().expect("nonempty grid");
    if !(t >= 0.0 && t <= end) {
        return Err(BoundError::TimeOutOfRange { t, end });
    }
    let j = curves.grid_index_at(t).expect("t within grid");
    let half = 0.5 * pc.delta[j];
    Ok(TpdReport {
        time: curves.times[j],
        grid_index: j,
        tpd: half,
        residual: log_stock[j] - curves.log_index[j] + half,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub q: f64,
    #[serde(rename = "X")]
    pub x: f64,
    pub eta: f64,
    pub ratio: f64,
}

/// `η(q) = √(2 ln(1/q))`.
pub fn eta(q: f64) -> f64 {
    (2.0 * (1.0 / q).ln()).sqrt()
}

/// Rows `(q, z_q, η(q), z_q/η(q))` on a log-spaced grid from `q_min` to `q_max`.
pub fn quantile_table(q_min: f64, q_max: f64, points: usize) -> Result<Vec<QuantileRow>, BoundError> {
    if !(q_min > 0.0 && q_min < q_max && q_max <= 0.5) {
        return Err(BoundError::InvalidRange(format!("need 0 < q_min < q_max <= 0.5, got q_min = {q_min}, q_max = {q_max}")));
    }
    if points < 2 {
        return Err(BoundError::InvalidRange(format!("need at least 2 points, got {points}")));
    }
    let (lo, hi) = (q_min.ln(), q_max.ln());
    (0..points)
        .map(|i| {
            let q = match i {
                0 => q_min,
                i if i == points - 1 => q_max,
                i => (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp(),
            };
            let x = gaussian_quantile(q)?;
            let e = eta(q);
            Ok(QuantileRow { q, x, eta: e, ratio: x / e })
        })
        .collect()
}

pub fn write_quantile_csv<W: std::io::Write>(rows: &[QuantileRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["q", "X", "eta", "ratio"])?;
    for r in rows {
        w.write_record([r.q.to_string(), r.x.to_string(), r.eta.to_string(), r.ratio.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LilRatio {
    pub mode: ExponentMode,
    /// Signed ratio per grid time; `None` where the clock is at most e.
    pub values: Vec<Option<f64>>,
    /// Largest absolute ratio over the defined region.
    pub max_abs: f64,
    pub max_at: GridTime,
}

/// LIL ratios `stat_t / √(2 c_t ln ln c_t)` with `(stat, c)` equal to
/// `(ln I − Σ^I/2, Σ^I)` or `(M^S − M^I + Σ^I − Σ^{S,I}, Δ^{S,I})`.
pub fn lil_ratio(curves: &FunctionalCurves, mode: ExponentMode) -> Result<LilRatio, BoundError> {
    lil_ratio_window(curves, mode, 0.0, f64::INFINITY)
}

/// As [`lil_ratio`], restricted to grid times where the clock lies in
/// `(max(e, clock_floor), clock_cap]`.
pub fn lil_ratio_window(
    curves: &FunctionalCurves,
    mode: ExponentMode,
    clock_floor: f64,
    clock_cap: f64,
) -> Result<LilRatio, BoundError> {
    let lim = curves.limit();
    let (stat, clock): (Vec<f64>, &[f64]) = match mode {
        ExponentMode::EquityPremium => {
            let s = curves.log_index.iter().zip(&lim.sigma_i).map(|(l, s)| l - 0.5 * s).collect();
            (s, &lim.sigma_i)
        }
        ExponentMode::Capm => statistic_and_clock(lim, mode)?,
    };
    let floor = clock_floor.max(std::f64::consts::E);
    let values: Vec<Option<f64>> = stat
        .iter()
        .zip(clock)
        .map(|(&s, &c)| (c > floor && c <= clock_cap).then(|| s / (2.0 * c * c.ln().ln()).sqrt()))
        .collect();
    let (j, max_abs) = values
        .iter()
        .enumerate()
        .filter_map(|(j, v)| v.map(|v| (j, v.abs())))
        .fold(None, |best: Option<(usize, f64)>, (j, v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((j, v)),
        })
        .ok_or(BoundError::LilRegionEmpty)?;
    Ok(LilRatio { mode, values, max_abs, max_at: GridTime { grid_index: j, time: curves.times[j] } })
}
