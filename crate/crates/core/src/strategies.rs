//! Mixing strategies and the exponential processes they approximate.
//!
//! Both strategy families rebalance only at ladder crossings. Between
//! crossings the holdings are constant and capital is marked to market, so at
//! crossing `K` the capital equals the product of per-step factors exactly:
//!
//! * cash mix: `Π (1 + (1 + ε) m_k)` (index blended with zero-return cash),
//! * stock mix: `Π (1 + (1 − ε) m_k + ε s_k)` (index blended with the stock).
//!
//! A strategy is stopped, with capital frozen at 0, the first time its
//! marked-to-market factor is nonpositive.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functionals::{FunctionalCurves, LevelCurves};
use crate::partitions::PartitionLevel;
use crate::paths::{PathPair, PricePath};

#[derive(Debug, Error, PartialEq)]
pub enum StrategyError {
    #[error("ladder level does not match the path: {0}")]
    LevelMismatch(String),
    #[error("stock mixing needs a stock column")]
    MissingStock,
    #[error("CAPM exponent needs pair curves")]
    MissingPairCurves,
    #[error("level {0} not present in curves")]
    MissingLevel(u32),
    #[error("invalid mixture parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixMode {
    CashMix,
    StockMix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapitalProcess {
    pub times: Vec<f64>,
    pub capital: Vec<f64>,
    /// Capital in units of the index: `capital_t / (I_t / I_0)`.
    pub relative: Vec<f64>,
    pub stopped_at: Option<f64>,
    pub epsilon: f64,
    pub mode: MixMode,
    pub level: u32,
}

impl CapitalProcess {
    pub fn terminal_relative(&self) -> f64 {
        *self.relative.last().expect("nonempty grid")
    }
}

fn check_level(times: &[f64], level: &PartitionLevel) -> Result<(), StrategyError> {
    let last = level.crossings.last().expect("origin crossing");
    if last.grid_index >= times.len() || times[last.grid_index] != last.time {
        return Err(StrategyError::LevelMismatch(format!(
            "crossing at grid index {} (t = {}) is not on a grid of {} points",
            last.grid_index,
            last.time,
            times.len()
        )));
    }
    Ok(())
}

/// Runs a two-asset mix with per-step factor `1 + a·x + b·y`, where `x` and `y`
/// are the relative moves of the index and of `other` since the last crossing.
fn run_mix(
    times: &[f64],
    index: &[f64],
    other: Option<&[f64]>,
    level: &PartitionLevel,
    a: f64,
    b: f64,
) -> (Vec<f64>, Vec<f64>, Option<f64>) {
    let len = times.len();
    let mut capital = Vec::with_capacity(len);
    let mut next = level.crossings.iter().skip(1).map(|c| c.grid_index).peekable();
    let mut anchor = 0;
    let mut anchor_capital = 1.0;
    let mut stopped_at = None;
    capital.push(1.0);
    for j in 1..len {
        let at_crossing = next.peek() == Some(&j);
        if at_crossing {
            next.next();
        }
        if stopped_at.is_some() {
            capital.push(0.0);
            continue;
        }
        let x = (index[j] - index[anchor]) / index[anchor];
        let y = other.map_or(0.0, |o| (o[j] - o[anchor]) / o[anchor]);
        let factor = 1.0 + a * x + b * y;
        if factor <= 0.0 {
            stopped_at = Some(times[j]);
            capital.push(0.0);
            continue;
        }
        let value = anchor_capital * factor;
        capital.push(value);
        if at_crossing {
            anchor = j;
            anchor_capital = value;
        }
    }
    let i0 = index[0];
    let relative = capital.iter().zip(index).map(|(c, i)| c / (i / i0)).collect();
    (capital, relative, stopped_at)
}

/// Blend of the index and cash: holds `(1 + ε)` times the capital in the index.
pub fn mix_with_cash(path: &PricePath, level: &PartitionLevel, epsilon: f64) -> Result<CapitalProcess, StrategyError> {
    check_level(path.times(), level)?;
    let (capital, relative, stopped_at) = run_mix(path.times(), path.values(), None, level, 1.0 + epsilon, 0.0);
    Ok(CapitalProcess {
        times: path.times().to_vec(),
        capital,
        relative,
        stopped_at,
        epsilon,
        mode: MixMode::CashMix,
        level: level.level,
    })
}

/// Blend of the index and the stock: fraction `1 − ε` in the index, `ε` in the stock.
pub fn mix_with_stock(pair: &PathPair, level: &PartitionLevel, epsilon: f64) -> Result<CapitalProcess, StrategyError> {
    let stock = pair.stock_values().ok_or(StrategyError::MissingStock)?;
    check_level(pair.times(), level)?;
    let (capital, relative, stopped_at) =
        run_mix(pair.times(), pair.index_values(), Some(stock), level, 1.0 - epsilon, epsilon);
    Ok(CapitalProcess {
        times: pair.times().to_vec(),
        capital,
        relative,
        stopped_at,
        epsilon,
        mode: MixMode::StockMix,
        level: level.level,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExponentMode {
    /// `ε (M^I − Σ^I) − ε²/2 Σ^I`
    EquityPremium,
    /// `ε (M^S − M^I + Σ^I − Σ^{S,I}) − ε²/2 Δ^{S,I}`
    Capm,
}

impl From<MixMode> for ExponentMode {
    fn from(m: MixMode) -> Self {
        match m {
            MixMode::CashMix => ExponentMode::EquityPremium,
            MixMode::StockMix => ExponentMode::Capm,
        }
    }
}

/// The centred statistic and its variance clock for a mode, per grid time:
/// `(M^I − Σ^I, Σ^I)` or `(M^S − M^I + Σ^I − Σ^{S,I}, Δ^{S,I})`.
pub fn statistic_and_clock(level: &LevelCurves, mode: ExponentMode) -> Result<(Vec<f64>, &[f64]), StrategyError> {
    match mode {
        ExponentMode::EquityPremium => {
            let stat = level.mu_i.iter().zip(&level.sigma_i).map(|(m, s)| m - s).collect();
            Ok((stat, &level.sigma_i))
        }
        ExponentMode::Capm => {
            let pc = level.pair.as_ref().ok_or(StrategyError::MissingPairCurves)?;
            let stat = (0..level.mu_i.len())
                .map(|j| pc.mu_s[j] - level.mu_i[j] + level.sigma_i[j] - pc.sigma_cross[j])
                .collect();
            Ok((stat, &pc.delta))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalExponent {
    pub values: Vec<f64>,
    pub mode: ExponentMode,
    pub epsilon: f64,
    pub level: u32,
}

/// Exponent of the test process at the limit level of `curves`.
pub fn theoretical_exponent(
    curves: &FunctionalCurves,
    mode: ExponentMode,
    epsilon: f64,
) -> Result<TheoreticalExponent, StrategyError> {
    theoretical_exponent_at(curves, curves.limit_level, mode, epsilon)
}

pub fn theoretical_exponent_at(
    curves: &FunctionalCurves,
    level: u32,
    mode: ExponentMode,
    epsilon: f64,
) -> Result<TheoreticalExponent, StrategyError> {
    let lc = curves.level(level).ok_or(StrategyError::MissingLevel(level))?;
    let (stat, clock) = statistic_and_clock(lc, mode)?;
    let half_sq = 0.5 * epsilon * epsilon;
    let values = stat.iter().zip(clock).map(|(a, b)| epsilon * a - half_sq * b).collect();
    Ok(TheoreticalExponent { values, mode, epsilon, level })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Plus,
    Minus,
    /// Equal-weight average of the plus and minus mixtures.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub kappa: f64,
    pub weight_exponent: f64,
    pub k_max: u32,
    pub direction: Direction,
}

impl Default for MixtureParams {
    fn default() -> Self {
        Self { kappa: 0.1, weight_exponent: 1.1, k_max: 60, direction: Direction::Both }
    }
}

impl MixtureParams {
    pub fn validate(&self) -> Result<(), StrategyError> {
        let bad = |name, reason: String| Err(StrategyError::InvalidParameter { name, reason });
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return bad("kappa", format!("must be positive, got {}", self.kappa));
        }
        if !(self.weight_exponent > 1.0) || !self.weight_exponent.is_finite() {
            return bad("weight_exponent", format!("must exceed 1, got {}", self.weight_exponent));
        }
        if self.k_max < 1 {
            return bad("k_max", "must be at least 1".into());
        }
        Ok(())
    }

    /// `Σ_{k ≤ k_max} k^{−p}`.
    pub fn weight_sum(&self) -> f64 {
        (1..=self.k_max).map(|k| (k as f64).powf(-self.weight_exponent)).sum()
    }

    /// Upper bound on the dropped weights `Σ_{k > k_max} k^{−p} ≤ k_max^{1−p} / (p − 1)`.
    pub fn tail_weight_bound(&self) -> f64 {
        (self.k_max as f64).powf(1.0 - self.weight_exponent) / (self.weight_exponent - 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LilMixture {
    pub params: MixtureParams,
    pub mode: ExponentMode,
    /// Log of the mixture value per grid time.
    pub log_values: Vec<f64>,
    /// Value at time 0, `Σ_k w_k`.
    pub initial: f64,
    pub tail_weight_bound: f64,
}

impl LilMixture {
    pub fn value(&self, j: usize) -> f64 {
        self.log_values[j].exp()
    }

    /// `max_t mixture_t / mixture_0`.
    pub fn max_ratio_to_initial(&self) -> f64 {
        let max_log = self.log_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (max_log - self.initial.ln()).exp()
    }
}

/// Weighted mixture over `ε_k = (1 + κ)^{−k}` of the exponential test
/// processes, with weights `w_k = k^{−p}`, evaluated at the limit level.
pub fn lil_mixture(
    curves: &FunctionalCurves,
    mode: ExponentMode,
    params: MixtureParams,
) -> Result<LilMixture, StrategyError> {
    params.validate()?;
    let (stat, clock) = statistic_and_clock(curves.limit(), mode)?;
    let k_max = params.k_max as usize;
    let eps: Vec<f64> = (1..=k_max).map(|k| (1.0 + params.kappa).powi(-(k as i32))).collect();
    let half_sq: Vec<f64> = eps.iter().map(|e| 0.5 * e * e).collect();
    let log_w: Vec<f64> = (1..=k_max).map(|k| -params.weight_exponent * (k as f64).ln()).collect();

    let signs: &[f64] = match params.direction {
        Direction::Plus => &[1.0],
        Direction::Minus => &[-1.0],
        Direction::Both => &[1.0, -1.0],
    };
    let log_norm = -(signs.len() as f64).ln();

    let mut terms = vec![0.0; k_max * signs.len()];
    let log_values = stat
        .iter()
        .zip(clock)
        .map(|(&a, &b)| {
            let mut max = f64::NEG_INFINITY;
            for (si, sign) in signs.iter().enumerate() {
                let sa = sign * a;
                for k in 0..k_max {
                    let v = log_w[k] + eps[k] * sa - half_sq[k] * b;
                    terms[si * k_max + k] = v;
                    max = max.max(v);
                }
            }
            // terms below e^-40 of the largest cannot change the sum
            let sum: f64 = terms.iter().filter(|&&v| v > max - 40.0).map(|v| (v - max).exp()).sum();
            log_norm + max + sum.ln()
        })
        .collect();

    Ok(LilMixture {
        params,
        mode,
        log_values,
        initial: params.weight_sum(),
        tail_weight_bound: params.tail_weight_bound(),
    })
}

/// Maximum over grid times of `|ln relative_t − exponent_t|`, skipping times
/// after the strategy stopped.
pub fn max_log_gap(process: &CapitalProcess, exponent: &TheoreticalExponent) -> f64 {
    process
        .relative
        .iter()
        .zip(&exponent.values)
        .zip(&process.times)
        .filter(|(_, t)| process.stopped_at.is_none_or(|s| **t < s))
        .map(|((r, e), _)| (r.ln() - e).abs())
        .fold(0.0, f64::max)
}

/// `CSV t,capital,relative,theoretical_exponent`.
pub fn write_capital_csv<W: std::io::Write>(
    process: &CapitalProcess,
    exponent: &TheoreticalExponent,
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "capital", "relative", "theoretical_exponent"])?;
    for j in 0..process.times.len() {
        w.write_record([
            process.times[j].to_string(),
            process.capital[j].to_string(),
            process.relative[j].to_string(),
            exponent.values[j].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{compute_curves, compute_pair_curves};
    use crate::partitions::{Asset, LevelRange, PartitionLadder, ResolutionPolicy};
    use crate::paths::{generate_pair, DriftMode, GbmParams};

    fn gbm_pair(seed: u64) -> PathPair {
        let p = GbmParams { vol: 0.2, drift_mode: DriftMode::Martingale, horizon: 1.0, dt: 1e-4, seed };
        generate_pair(&p, 0.3).unwrap()
    }

    fn pair_ladder(pair: &PathPair) -> PartitionLadder {
        PartitionLadder::pair(pair, LevelRange::new(4, 5).unwrap(), &ResolutionPolicy::default()).unwrap()
    }

    fn index_ladder(path: &PricePath) -> PartitionLadder {
        PartitionLadder::single(path, Asset::Index, LevelRange::new(4, 6).unwrap(), &ResolutionPolicy::default()).unwrap()
    }

    #[test]
    fn cash_mix_with_zero_epsilon_tracks_index() {
        let path = gbm_pair(1).index_path();
        let ladder = index_ladder(&path);
        let cp = mix_with_cash(&path, ladder.finest(), 0.0).unwrap();
        for (c, i) in cp.capital.iter().zip(path.values()) {
            assert!((c - i).abs() < 1e-12);
        }
        assert!(cp.relative.iter().all(|r| (r - 1.0).abs() < 1e-12));
        assert_eq!(cp.capital[0], 1.0);
        assert_eq!(cp.relative[0], 1.0);
    }

    #[test]
    fn cash_mix_with_minus_one_is_cash() {
        let path = gbm_pair(2).index_path();
        let ladder = index_ladder(&path);
        let cp = mix_with_cash(&path, ladder.finest(), -1.0).unwrap();
        assert!(cp.capital.iter().all(|&c| c == 1.0));
        for (r, i) in cp.relative.iter().zip(path.values()) {
            assert!((r - 1.0 / i).abs() < 1e-15);
        }
    }

    #[test]
    fn stock_mix_extremes() {
        let pair = gbm_pair(3);
        let ladder = pair_ladder(&pair);
        let cp = mix_with_stock(&pair, ladder.finest(), 0.0).unwrap();
        assert!(cp.relative.iter().all(|r| (r - 1.0).abs() < 1e-12));
        let cp = mix_with_stock(&pair, ladder.finest(), 1.0).unwrap();
        let s = pair.stock_values().unwrap();
        for j in 0..s.len() {
            assert!((cp.capital[j] - s[j] / s[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn stops_when_capital_hits_zero() {
        // threshold 0.5 at level 1; ε = 3 means factor 1 + 4x, which is 0 at x = −0.25
        let path = PricePath::new(vec![0.0, 1.0, 2.0, 3.0], vec![1.0, 0.9, 0.7, 1.2]).unwrap();
        let ladder = PartitionLadder::single(&path, Asset::Index, LevelRange::single(1).unwrap(), &ResolutionPolicy::unchecked()).unwrap();
        let cp = mix_with_cash(&path, ladder.finest(), 3.0).unwrap();
        assert_eq!(cp.stopped_at, Some(2.0));
        assert_eq!(&cp.capital[2..], &[0.0, 0.0]);
        assert_eq!(&cp.relative[2..], &[0.0, 0.0]);
        assert!(cp.capital.iter().all(|&c| c >= 0.0));
    }

    #[test]
    fn convex_mixes_never_stop() {
        let pair = gbm_pair(4);
        let ladder = pair_ladder(&pair);
        let path = pair.index_path();
        let il = index_ladder(&path);
        for eps in [-1.0, -0.5, 0.0] {
            assert!(mix_with_cash(&path, il.finest(), eps).unwrap().stopped_at.is_none());
        }
        for eps in [0.0, 0.5, 1.0] {
            assert!(mix_with_stock(&pair, ladder.finest(), eps).unwrap().stopped_at.is_none());
        }
    }

    #[test]
    fn product_form_at_crossings() {
        let path = gbm_pair(5).index_path();
        let ladder = index_ladder(&path);
        let level = ladder.finest();
        let eps = 0.5;
        let cp = mix_with_cash(&path, level, eps).unwrap();
        let mut product = 1.0;
        for w in level.crossings.windows(2) {
            let m = (w[1].value - w[0].value) / w[0].value;
            product *= 1.0 + (1.0 + eps) * m;
            assert!((cp.capital[w[1].grid_index] - product).abs() < 1e-12 * product.max(1.0));
        }
    }

    #[test]
    fn exponent_trivial_cases() {
        let pair = gbm_pair(6);
        let curves = compute_pair_curves(&pair, &pair_ladder(&pair)).unwrap();
        let e = theoretical_exponent(&curves, ExponentMode::Capm, 0.0).unwrap();
        assert!(e.values.iter().all(|&v| v == 0.0));
        let flat = PricePath::new(vec![0.0, 1.0, 2.0], vec![1.0; 3]).unwrap();
        let ladder = PartitionLadder::single(&flat, Asset::Index, LevelRange::new(1, 2).unwrap(), &ResolutionPolicy::default()).unwrap();
        let fc = compute_curves(&flat, &ladder).unwrap();
        let e = theoretical_exponent(&fc, ExponentMode::EquityPremium, 0.7).unwrap();
        assert!(e.values.iter().all(|&v| v == 0.0));
        assert_eq!(
            theoretical_exponent(&fc, ExponentMode::Capm, 0.5).unwrap_err(),
            StrategyError::MissingPairCurves
        );
    }

    #[test]
    fn mixture_initial_value() {
        let flat = PricePath::new(vec![0.0, 1.0, 2.0], vec![1.0; 3]).unwrap();
        let ladder = PartitionLadder::single(&flat, Asset::Index, LevelRange::new(1, 2).unwrap(), &ResolutionPolicy::default()).unwrap();
        let fc = compute_curves(&flat, &ladder).unwrap();
        let params = MixtureParams { kappa: 0.1, weight_exponent: 2.0, k_max: 3, direction: Direction::Both };
        let mix = lil_mixture(&fc, ExponentMode::EquityPremium, params).unwrap();
        let expected = 1.0 + 0.25 + 1.0 / 9.0;
        assert!((mix.initial - expected).abs() < 1e-15);
        assert!((mix.initial - 1.3611).abs() < 1e-4);
        for j in 0..3 {
            assert!((mix.value(j) - expected).abs() < 1e-12);
        }
        assert!((mix.max_ratio_to_initial() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixture_matches_direct_sum() {
        let pair = gbm_pair(7);
        let curves = compute_pair_curves(&pair, &pair_ladder(&pair)).unwrap();
        let params = MixtureParams { kappa: 0.3, weight_exponent: 1.5, k_max: 8, direction: Direction::Both };
        let mix = lil_mixture(&curves, ExponentMode::Capm, params).unwrap();
        for j in [0, 100, 5000, curves.len() - 1] {
            let mut direct = 0.0;
            for k in 1..=8 {
                let eps = 1.3f64.powi(-k);
                let w = (k as f64).powf(-1.5);
                let plus = theoretical_exponent(&curves, ExponentMode::Capm, eps).unwrap().values[j];
                let minus = theoretical_exponent(&curves, ExponentMode::Capm, -eps).unwrap().values[j];
                direct += 0.5 * w * (plus.exp() + minus.exp());
            }
            assert!((mix.value(j) - direct).abs() < 1e-12 * direct);
        }
    }

    #[test]
    fn mixture_parameter_validation() {
        let flat = PricePath::new(vec![0.0, 1.0], vec![1.0; 2]).unwrap();
        let ladder = PartitionLadder::single(&flat, Asset::Index, LevelRange::new(1, 1).unwrap(), &ResolutionPolicy::default()).unwrap();
        let fc = compute_curves(&flat, &ladder).unwrap();
        for params in [
            MixtureParams { kappa: 0.0, ..MixtureParams::default() },
            MixtureParams { weight_exponent: 1.0, ..MixtureParams::default() },
            MixtureParams { k_max: 0, ..MixtureParams::default() },
        ] {
            assert!(lil_mixture(&fc, ExponentMode::EquityPremium, params).is_err());
        }
    }

    #[test]
    fn tail_bound_dominates_dropped_weights() {
        let p = MixtureParams::default();
        let dropped: f64 = (61..200_000).map(|k| (k as f64).powf(-1.1)).sum();
        assert!(dropped < p.tail_weight_bound());
    }
}
