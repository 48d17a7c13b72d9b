//! Pathwise functionals along crossing ladders.
//!
//! For a ladder level `n`, with `m_k` and `s_k` the relative increments of the
//! index and the stock between consecutive crossings, the curves are
//!
//! | curve         | sum over crossings     |
//! |---------------|------------------------|
//! | `sigma_i`     | `m_k²`                 |
//! | `mu_i`        | `m_k`                  |
//! | `sigma_s`     | `s_k²`                 |
//! | `mu_s`        | `s_k`                  |
//! | `sigma_cross` | `s_k m_k`              |
//! | `delta`       | `(s_k − m_k)²`         |
//!
//! Each curve is evaluated at every grid time `t` with the crossings truncated
//! at `t`, so the last term is the partial increment since the most recent
//! crossing. Between crossings the squared curves can therefore dip by at most
//! that partial term; at crossing times they are nondecreasing.
//!
//! The finest level of the ladder stands in for the limit `n → ∞`; the gap to
//! the next coarser level is reported as a convergence diagnostic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::partitions::{LadderMode, PartitionLadder, PartitionLevel};
use crate::paths::{PathPair, PricePath};

#[derive(Debug, Error, PartialEq)]
pub enum FunctionalError {
    #[error("ladder does not match the path: {0}")]
    LadderMismatch(String),
    #[error("pair curves need a pair ladder, got {0:?}")]
    NotPairLadder(LadderMode),
    #[error("pair has no stock column")]
    MissingStock,
    #[error("intrinsic-time budget must be positive, got {0}")]
    NonPositiveBudget(f64),
    #[error("curves carry no pair functionals")]
    MissingPairCurves,
    #[error("level {0} not present in curves")]
    MissingLevel(u32),
}

/// How `sigma_i` (and `sigma_s`) square the increments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaEstimator {
    /// Squared relative increments.
    #[default]
    Relative,
    /// Squared log increments.
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCurves {
    pub sigma_s: Vec<f64>,
    pub mu_s: Vec<f64>,
    pub sigma_cross: Vec<f64>,
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCurves {
    pub level: u32,
    pub sigma_i: Vec<f64>,
    pub mu_i: Vec<f64>,
    pub pair: Option<PairCurves>,
}

/// `max_t |F^{n_max}_t − F^{n_max−1}_t|` per functional; absent with a single level.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub sigma_i: Option<f64>,
    pub mu_i: Option<f64>,
    pub sigma_s: Option<f64>,
    pub mu_s: Option<f64>,
    pub sigma_cross: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalCurves {
    pub times: Vec<f64>,
    /// `ln(I_t / I_0)`.
    pub log_index: Vec<f64>,
    /// `ln(S_t / S_0)`, for pair curves.
    pub log_stock: Option<Vec<f64>>,
    pub levels: Vec<LevelCurves>,
    pub limit_level: u32,
    pub estimator: SigmaEstimator,
    pub convergence: Convergence,
}

impl FunctionalCurves {
    pub fn level(&self, n: u32) -> Option<&LevelCurves> {
        self.levels.iter().find(|l| l.level == n)
    }

    pub fn limit(&self) -> &LevelCurves {
        self.level(self.limit_level).expect("limit level present")
    }

    pub fn has_pair(&self) -> bool {
        self.limit().pair.is_some()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Index of the last grid time `<= t`.
    pub fn grid_index_at(&self, t: f64) -> Option<usize> {
        if self.times.is_empty() || t < self.times[0] {
            return None;
        }
        Some(self.times.partition_point(|&s| s <= t) - 1)
    }
}

fn check_ladder(times: &[f64], ladder: &PartitionLadder) -> Result<(), FunctionalError> {
    if ladder.grid_len != times.len() {
        return Err(FunctionalError::LadderMismatch(format!(
            "ladder grid has {} points, path has {}",
            ladder.grid_len,
            times.len()
        )));
    }
    for level in &ladder.levels {
        for c in &level.crossings {
            if times.get(c.grid_index) != Some(&c.time) {
                return Err(FunctionalError::LadderMismatch(format!(
                    "level {} crossing at grid index {} has time {}",
                    level.level, c.grid_index, c.time
                )));
            }
        }
    }
    Ok(())
}

fn log_relative(values: &[f64]) -> Vec<f64> {
    let first = values[0];
    values.iter().map(|v| (v / first).ln()).collect()
}

#[inline]
fn square(estimator: SigmaEstimator, x: f64, from: f64, to: f64) -> f64 {
    match estimator {
        SigmaEstimator::Relative => x * x,
        SigmaEstimator::Log => {
            let l = (to / from).ln();
            l * l
        }
    }
}

fn single_level(values: &[f64], level: &PartitionLevel, estimator: SigmaEstimator) -> LevelCurves {
    let len = values.len();
    let mut sigma = Vec::with_capacity(len);
    let mut mu = Vec::with_capacity(len);
    let mut next = level.crossings.iter().skip(1).map(|c| c.grid_index).peekable();
    let (mut acc_sigma, mut acc_mu) = (0.0, 0.0);
    let mut anchor = 0;
    for j in 0..len {
        let base = values[anchor];
        let m = (values[j] - base) / base;
        let sq = square(estimator, m, base, values[j]);
        if next.peek() == Some(&j) {
            next.next();
            acc_sigma += sq;
            acc_mu += m;
            anchor = j;
            sigma.push(acc_sigma);
            mu.push(acc_mu);
        } else {
            sigma.push(acc_sigma + sq);
            mu.push(acc_mu + m);
        }
    }
    LevelCurves { level: level.level, sigma_i: sigma, mu_i: mu, pair: None }
}

fn pair_level(index: &[f64], stock: &[f64], level: &PartitionLevel, estimator: SigmaEstimator) -> LevelCurves {
    let len = index.len();
    let mut out = LevelCurves {
        level: level.level,
        sigma_i: Vec::with_capacity(len),
        mu_i: Vec::with_capacity(len),
        pair: Some(PairCurves {
            sigma_s: Vec::with_capacity(len),
            mu_s: Vec::with_capacity(len),
            sigma_cross: Vec::with_capacity(len),
            delta: Vec::with_capacity(len),
        }),
    };
    let p = out.pair.as_mut().unwrap();
    let mut next = level.crossings.iter().skip(1).map(|c| c.grid_index).peekable();
    let mut acc = [0.0_f64; 6];
    let mut anchor = 0;
    for j in 0..len {
        let (bi, bs) = (index[anchor], stock[anchor]);
        let m = (index[j] - bi) / bi;
        let s = (stock[j] - bs) / bs;
        let terms = [
            square(estimator, m, bi, index[j]),
            m,
            square(estimator, s, bs, stock[j]),
            s,
            s * m,
            (s - m) * (s - m),
        ];
        let row = if next.peek() == Some(&j) {
            next.next();
            for (a, t) in acc.iter_mut().zip(terms) {
                *a += t;
            }
            anchor = j;
            acc
        } else {
            let mut row = acc;
            for (r, t) in row.iter_mut().zip(terms) {
                *r += t;
            }
            row
        };
        out.sigma_i.push(row[0]);
        out.mu_i.push(row[1]);
        p.sigma_s.push(row[2]);
        p.mu_s.push(row[3]);
        p.sigma_cross.push(row[4]);
        p.delta.push(row[5]);
    }
    out
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn convergence(levels: &[LevelCurves]) -> Convergence {
    let [.., coarse, fine] = levels else {
        return Convergence::default();
    };
    let pairs = fine.pair.as_ref().zip(coarse.pair.as_ref());
    Convergence {
        sigma_i: Some(max_gap(&fine.sigma_i, &coarse.sigma_i)),
        mu_i: Some(max_gap(&fine.mu_i, &coarse.mu_i)),
        sigma_s: pairs.map(|(f, c)| max_gap(&f.sigma_s, &c.sigma_s)),
        mu_s: pairs.map(|(f, c)| max_gap(&f.mu_s, &c.mu_s)),
        sigma_cross: pairs.map(|(f, c)| max_gap(&f.sigma_cross, &c.sigma_cross)),
        delta: pairs.map(|(f, c)| max_gap(&f.delta, &c.delta)),
    }
}

/// Σ and M of a single path along every level of `ladder`.
///
/// The ladder may be a single-asset ladder of this path or the shared ladder
/// of a pair whose index is this path.
pub fn compute_curves(path: &PricePath, ladder: &PartitionLadder) -> Result<FunctionalCurves, FunctionalError> {
    compute_curves_with(path, ladder, SigmaEstimator::Relative)
}

pub fn compute_curves_with(
    path: &PricePath,
    ladder: &PartitionLadder,
    estimator: SigmaEstimator,
) -> Result<FunctionalCurves, FunctionalError> {
    check_ladder(path.times(), ladder)?;
    let levels: Vec<LevelCurves> =
        ladder.levels.iter().map(|l| single_level(path.values(), l, estimator)).collect();
    Ok(FunctionalCurves {
        times: path.times().to_vec(),
        log_index: log_relative(path.values()),
        log_stock: None,
        convergence: convergence(&levels),
        limit_level: ladder.range.n_max,
        levels,
        estimator,
    })
}

/// All six functionals of a pair along its shared ladder.
pub fn compute_pair_curves(pair: &PathPair, ladder: &PartitionLadder) -> Result<FunctionalCurves, FunctionalError> {
    compute_pair_curves_with(pair, ladder, SigmaEstimator::Relative)
}

pub fn compute_pair_curves_with(
    pair: &PathPair,
    ladder: &PartitionLadder,
    estimator: SigmaEstimator,
) -> Result<FunctionalCurves, FunctionalError> {
    if ladder.mode != LadderMode::Pair {
        return Err(FunctionalError::NotPairLadder(ladder.mode));
    }
    let stock = pair.stock_values().ok_or(FunctionalError::MissingStock)?;
    check_ladder(pair.times(), ladder)?;
    let levels: Vec<LevelCurves> = ladder
        .levels
        .iter()
        .map(|l| pair_level(pair.index_values(), stock, l, estimator))
        .collect();
    Ok(FunctionalCurves {
        times: pair.times().to_vec(),
        log_index: log_relative(pair.index_values()),
        log_stock: Some(log_relative(stock)),
        convergence: convergence(&levels),
        limit_level: ladder.range.n_max,
        levels,
        estimator,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    /// Relative quadratic variation of the index.
    SigmaIndex,
    /// Relative quadratic variation of the stock against the index.
    Delta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridTime {
    pub grid_index: usize,
    pub time: f64,
}

/// First grid time at which the chosen clock (at the limit level) reaches
/// `budget`; `None` when it never does.
pub fn intrinsic_time(curves: &FunctionalCurves, clock: Clock, budget: f64) -> Result<Option<GridTime>, FunctionalError> {
    if !(budget > 0.0) {
        return Err(FunctionalError::NonPositiveBudget(budget));
    }
    let limit = curves.limit();
    let series = match clock {
        Clock::SigmaIndex => &limit.sigma_i,
        Clock::Delta => &limit.pair.as_ref().ok_or(FunctionalError::MissingPairCurves)?.delta,
    };
    Ok(series
        .iter()
        .position(|&v| v >= budget)
        .map(|grid_index| GridTime { grid_index, time: curves.times[grid_index] }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyGap {
    pub sigma_i: f64,
    pub mu_i: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    /// `max_t |M^I_t − ln I_t − Σ^I_t / 2|` at the limit level.
    pub mu_identity_gap: f64,
    /// `max_t |Δ_t − Σ^S_t − Σ^I_t + 2 Σ^{S,I}_t|` at the limit level of the pair curves.
    pub delta_identity_gap: Option<f64>,
    /// Index functionals on the single-index ladder against the pair ladder.
    pub partition_consistency_gap: Option<ConsistencyGap>,
}

/// Gap statistics for the limit identities. `single` should come from a
/// single-index ladder; `pair` (optional) from the pair ladder of the same index.
pub fn check_identities(single: &FunctionalCurves, pair: Option<&FunctionalCurves>) -> IdentityReport {
    let lim = single.limit();
    let mu_identity_gap = lim
        .mu_i
        .iter()
        .zip(&lim.sigma_i)
        .zip(&single.log_index)
        .map(|((m, s), l)| (m - l - 0.5 * s).abs())
        .fold(0.0, f64::max);
    let delta_identity_gap = pair.and_then(|p| {
        let l = p.limit();
        l.pair.as_ref().map(|pc| delta_expansion_gap(l, pc))
    });
    let partition_consistency_gap = pair.filter(|p| p.len() == single.len()).map(|p| {
        let pl = p.limit();
        ConsistencyGap { sigma_i: max_gap(&lim.sigma_i, &pl.sigma_i), mu_i: max_gap(&lim.mu_i, &pl.mu_i) }
    });
    IdentityReport { mu_identity_gap, delta_identity_gap, partition_consistency_gap }
}

fn delta_expansion_gap(level: &LevelCurves, pc: &PairCurves) -> f64 {
    (0..level.sigma_i.len())
        .map(|j| (pc.delta[j] - pc.sigma_s[j] - level.sigma_i[j] + 2.0 * pc.sigma_cross[j]).abs())
        .fold(0.0, f64::max)
}

/// Largest `|Δ − Σ^S − Σ^I + 2Σ^{S,I}|` over every level and grid time.
pub fn finite_level_delta_gap(curves: &FunctionalCurves) -> Result<f64, FunctionalError> {
    curves
        .levels
        .iter()
        .map(|l| l.pair.as_ref().map(|pc| delta_expansion_gap(l, pc)).ok_or(FunctionalError::MissingPairCurves))
        .try_fold(0.0f64, |acc, g| g.map(|g| acc.max(g)))
}

/// Long-format CSV: `t,n,sigma_I,mu_I[,sigma_S,mu_S,sigma_cross,delta]`.
pub fn write_curves_csv<W: std::io::Write>(curves: &FunctionalCurves, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let pair = curves.has_pair();
    let mut header = vec!["t", "n", "sigma_I", "mu_I"];
    if pair {
        header.extend(["sigma_S", "mu_S", "sigma_cross", "delta"]);
    }
    w.write_record(&header)?;
    for l in &curves.levels {
        for (j, t) in curves.times.iter().enumerate() {
            let mut rec = vec![t.to_string(), l.level.to_string(), l.sigma_i[j].to_string(), l.mu_i[j].to_string()];
            if let Some(pc) = &l.pair {
                rec.extend([
                    pc.sigma_s[j].to_string(),
                    pc.mu_s[j].to_string(),
                    pc.sigma_cross[j].to_string(),
                    pc.delta[j].to_string(),
                ]);
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partitions::{Asset, LevelRange, ResolutionPolicy};

    fn unchecked_single(path: &PricePath, n_min: u32, n_max: u32) -> PartitionLadder {
        PartitionLadder::single(path, Asset::Index, LevelRange::new(n_min, n_max).unwrap(), &ResolutionPolicy::unchecked())
            .unwrap()
    }

    fn unchecked_pair(pair: &PathPair, n_min: u32, n_max: u32) -> PartitionLadder {
        PartitionLadder::pair(pair, LevelRange::new(n_min, n_max).unwrap(), &ResolutionPolicy::unchecked()).unwrap()
    }

    #[test]
    fn constant_path_has_zero_curves() {
        let p = PricePath::new(vec![0.0, 1.0, 2.0], vec![3.0, 3.0, 3.0]).unwrap();
        let c = compute_curves(&p, &unchecked_single(&p, 1, 3)).unwrap();
        for l in &c.levels {
            assert!(l.sigma_i.iter().chain(&l.mu_i).all(|&v| v == 0.0));
        }
        let r = check_identities(&c, None);
        assert_eq!(r.mu_identity_gap, 0.0);
    }

    #[test]
    fn hand_computed_three_crossings() {
        let p = PricePath::new(vec![0.0, 1.0, 2.0, 3.0], vec![1.0, 1.3, 1.05, 1.5]).unwrap();
        let c = compute_curves(&p, &unchecked_single(&p, 2, 2)).unwrap();
        let l = c.level(2).unwrap();
        let sigma = 0.09 + (0.25f64 / 1.3).powi(2) + (0.45f64 / 1.05).powi(2);
        let mu = 0.3 - 0.25 / 1.3 + 0.45 / 1.05;
        assert!((l.sigma_i[3] - sigma).abs() < 1e-12);
        assert!((l.mu_i[3] - mu).abs() < 1e-12);
        assert!((l.sigma_i[3] - 0.31066).abs() < 1e-5);
        assert!((l.mu_i[3] - 0.53626).abs() < 1e-5);
    }

    #[test]
    fn truncation_uses_partial_increment() {
        // level 1 threshold 0.5: no crossing, so every value is the partial term
        let p = PricePath::new(vec![0.0, 1.0, 2.0], vec![1.0, 1.2, 1.1]).unwrap();
        let c = compute_curves(&p, &unchecked_single(&p, 1, 1)).unwrap();
        let l = c.level(1).unwrap();
        assert!((l.mu_i[1] - 0.2).abs() < 1e-15);
        assert!((l.mu_i[2] - 0.1).abs() < 1e-15);
        assert!((l.sigma_i[2] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn identical_assets_have_zero_delta() {
        let times: Vec<f64> = (0..300).map(|k| k as f64).collect();
        let v: Vec<f64> = times.iter().map(|t| 1.0 + 0.25 * (t * 0.07).sin()).collect();
        let pair = PathPair::new(times, v.clone(), Some(v)).unwrap();
        let c = compute_pair_curves(&pair, &unchecked_pair(&pair, 2, 5)).unwrap();
        for l in &c.levels {
            let pc = l.pair.as_ref().unwrap();
            assert!(pc.delta.iter().all(|&d| d == 0.0));
            assert_eq!(pc.sigma_cross, l.sigma_i);
            assert_eq!(pc.sigma_s, l.sigma_i);
        }
    }

    #[test]
    fn flat_index_gives_zero_covariation() {
        let times: Vec<f64> = (0..300).map(|k| k as f64).collect();
        let s: Vec<f64> = times.iter().map(|t| 1.0 + 0.25 * (t * 0.07).sin()).collect();
        let pair = PathPair::new(times, vec![1.0; 300], Some(s)).unwrap();
        let c = compute_pair_curves(&pair, &unchecked_pair(&pair, 2, 5)).unwrap();
        for l in &c.levels {
            let pc = l.pair.as_ref().unwrap();
            assert!(pc.sigma_cross.iter().all(|&x| x == 0.0));
            assert_eq!(pc.delta, pc.sigma_s);
        }
    }

    #[test]
    fn single_ladder_rejected_for_pair_curves() {
        let pair = PathPair::new(vec![0.0, 1.0], vec![1.0, 1.1], Some(vec![1.0, 1.2])).unwrap();
        let ladder = unchecked_single(&pair.index_path(), 1, 1);
        assert_eq!(
            compute_pair_curves(&pair, &ladder).unwrap_err(),
            FunctionalError::NotPairLadder(LadderMode::SingleIndex)
        );
    }

    #[test]
    fn mismatched_ladder_rejected() {
        let a = PricePath::new(vec![0.0, 1.0, 2.0], vec![1.0, 1.1, 1.2]).unwrap();
        let b = PricePath::new(vec![0.0, 1.0], vec![1.0, 1.1]).unwrap();
        let ladder = unchecked_single(&a, 1, 1);
        assert!(matches!(compute_curves(&b, &ladder), Err(FunctionalError::LadderMismatch(_))));
    }

    fn linear_sigma_curves() -> FunctionalCurves {
        let times: Vec<f64> = (0..=1000).map(|k| k as f64 * 1e-3).collect();
        let sigma: Vec<f64> = times.iter().map(|t| 0.04 * t).collect();
        FunctionalCurves {
            log_index: vec![0.0; times.len()],
            log_stock: None,
            levels: vec![LevelCurves { level: 1, sigma_i: sigma.clone(), mu_i: sigma, pair: None }],
            times,
            limit_level: 1,
            estimator: SigmaEstimator::Relative,
            convergence: Convergence::default(),
        }
    }

    #[test]
    fn intrinsic_time_inverts_linear_clock() {
        let c = linear_sigma_curves();
        let tau = intrinsic_time(&c, Clock::SigmaIndex, 0.02).unwrap().unwrap();
        assert!((tau.time - 0.5).abs() <= 1e-3 + 1e-12);
        assert_eq!(intrinsic_time(&c, Clock::SigmaIndex, 0.05).unwrap(), None);
        assert_eq!(intrinsic_time(&c, Clock::SigmaIndex, 0.0), Err(FunctionalError::NonPositiveBudget(0.0)));
        assert_eq!(intrinsic_time(&c, Clock::Delta, 0.01), Err(FunctionalError::MissingPairCurves));
    }

    #[test]
    fn delta_expansion_exact_at_each_level() {
        let times: Vec<f64> = (0..2000).map(|k| k as f64).collect();
        let i: Vec<f64> = times.iter().map(|t| 1.0 + 0.3 * (t * 0.011).sin()).collect();
        let s: Vec<f64> = times.iter().map(|t| 1.0 + 0.2 * (t * 0.023).cos() - 0.2 + 0.1 * (t * 0.005).sin()).collect();
        let pair = PathPair::new(times, i, Some(s)).unwrap();
        let c = compute_pair_curves(&pair, &unchecked_pair(&pair, 1, 6)).unwrap();
        assert!(finite_level_delta_gap(&c).unwrap() < 1e-12);
    }

    #[test]
    fn curves_csv_layout() {
        let p = PricePath::new(vec![0.0, 1.0], vec![1.0, 1.1]).unwrap();
        let c = compute_curves(&p, &unchecked_single(&p, 1, 2)).unwrap();
        let mut buf = Vec::new();
        write_curves_csv(&c, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,n,sigma_I,mu_I");
        assert_eq!(lines.len(), 1 + 2 * 2);
    }
}
