//! Dyadic crossing-time ladders.
//!
//! For level `n` the ladder records `T_0 = 0` and each later time at which the
//! asset (or, for a pair, either asset) has moved by at least `2^-n` since the
//! previous crossing. Detection is on the sampling grid: the crossing is the
//! first grid point where the move reaches the threshold, with no
//! interpolation, so every recorded move overshoots `2^-n` by at most one grid
//! jump.
//!
//! Thresholds are applied to each asset rescaled to start at 1, which makes
//! the ladder independent of the price unit. For the index this is the usual
//! `I(0) = 1` convention.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::paths::{PathPair, PricePath};

#[derive(Debug, Error, PartialEq)]
pub enum PartitionError {
    #[error("invalid level range [{n_min}, {n_max}]: need 1 <= n_min <= n_max <= 62")]
    InvalidLevels { n_min: u32, n_max: u32 },
    #[error(
        "grid too coarse for level {level}: {asset} step quantile {step_quantile:.3e} exceeds {limit:.3e}"
    )]
    Resolution { asset: Asset, level: u32, step_quantile: f64, limit: f64 },
    #[error("pair ladder needs a stock column")]
    MissingStock,
    #[error("path needs at least two grid points")]
    TooShort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Asset {
    Index,
    Stock,
}

impl std::fmt::Display for Asset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Asset::Index => f.write_str("index"),
            Asset::Stock => f.write_str("stock"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LadderMode {
    SingleIndex,
    SingleStock,
    Pair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelRange {
    pub n_min: u32,
    pub n_max: u32,
}

impl LevelRange {
    pub fn new(n_min: u32, n_max: u32) -> Result<Self, PartitionError> {
        if n_min == 0 || n_min > n_max || n_max > 62 {
            return Err(PartitionError::InvalidLevels { n_min, n_max });
        }
        Ok(Self { n_min, n_max })
    }

    pub fn single(n: u32) -> Result<Self, PartitionError> {
        Self::new(n, n)
    }
}

/// When a grid is considered fine enough for a level.
///
/// A ladder up to `n_max` is accepted when the `step_quantile` quantile of the
/// absolute per-step moves (of the rescaled path) is at most
/// `max_step_fraction * 2^-n_max`. Levels with fewer than `min_crossings`
/// crossings are accepted but listed as sparse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionPolicy {
    pub step_quantile: f64,
    pub max_step_fraction: f64,
    pub min_crossings: usize,
    /// When false, a failed check is only recorded, not raised.
    pub enforce: bool,
}

impl Default for ResolutionPolicy {
    fn default() -> Self {
        Self { step_quantile: 0.999, max_step_fraction: 1.0, min_crossings: 30, enforce: true }
    }
}

impl ResolutionPolicy {
    /// Skips the grid check entirely. Used where the sampling grid itself is the
    /// finest partition of interest, and in hand-built examples.
    pub fn unchecked() -> Self {
        Self { enforce: false, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub grid_index: usize,
    pub time: f64,
    /// Price of the ladder's primary asset (the index, or the stock for a stock-only ladder).
    pub value: f64,
    /// Stock price, for pair ladders only.
    pub stock_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionLevel {
    pub level: u32,
    pub threshold: f64,
    /// `crossings[k]` is `T^n_k`; entry 0 is time 0.
    pub crossings: Vec<Crossing>,
    /// The path ended strictly between two crossings.
    pub truncated: bool,
}

impl PartitionLevel {
    /// Number of completed crossings (excluding the origin).
    pub fn count(&self) -> usize {
        self.crossings.len() - 1
    }

    pub fn grid_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.crossings.iter().map(|c| c.grid_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionLadder {
    pub mode: LadderMode,
    pub range: LevelRange,
    pub grid_len: usize,
    pub levels: Vec<PartitionLevel>,
    /// Step quantile of the rescaled index (or single asset) path.
    pub primary_step_quantile: f64,
    pub stock_step_quantile: Option<f64>,
    /// Levels with fewer crossings than the policy's minimum.
    pub sparse_levels: Vec<u32>,
    /// Set when the grid check failed but the policy did not enforce it.
    pub resolution_warning: Option<String>,
}

impl PartitionLadder {
    pub fn level(&self, n: u32) -> Option<&PartitionLevel> {
        self.levels.iter().find(|l| l.level == n)
    }

    pub fn finest(&self) -> &PartitionLevel {
        self.levels.last().expect("ladder has at least one level")
    }

    /// Builds the ladder of a single asset.
    pub fn single(
        path: &PricePath,
        asset: Asset,
        range: LevelRange,
        policy: &ResolutionPolicy,
    ) -> Result<Self, PartitionError> {
        if path.len() < 2 {
            return Err(PartitionError::TooShort);
        }
        let scaled = rescaled(path.values());
        let q = step_quantile(&scaled, policy.step_quantile);
        let warning = check(asset, q, range.n_max, policy)?;
        let levels: Vec<PartitionLevel> = (range.n_min..=range.n_max)
            .map(|n| build_level(path.times(), path.values(), &scaled, None, n))
            .collect();
        let mode = match asset {
            Asset::Index => LadderMode::SingleIndex,
            Asset::Stock => LadderMode::SingleStock,
        };
        Ok(Self::assemble(mode, range, path.len(), levels, q, None, warning, policy))
    }

    /// Builds the shared ladder of a pair: a crossing occurs when either asset
    /// has moved by the threshold.
    pub fn pair(pair: &PathPair, range: LevelRange, policy: &ResolutionPolicy) -> Result<Self, PartitionError> {
        let stock = pair.stock_values().ok_or(PartitionError::MissingStock)?;
        if pair.len() < 2 {
            return Err(PartitionError::TooShort);
        }
        let index_scaled = rescaled(pair.index_values());
        let stock_scaled = rescaled(stock);
        let qi = step_quantile(&index_scaled, policy.step_quantile);
        let qs = step_quantile(&stock_scaled, policy.step_quantile);
        let warning = match check(Asset::Index, qi, range.n_max, policy)? {
            Some(w) => Some(w),
            None => check(Asset::Stock, qs, range.n_max, policy)?,
        };
        let levels: Vec<PartitionLevel> = (range.n_min..=range.n_max)
            .map(|n| {
                build_level(
                    pair.times(),
                    pair.index_values(),
                    &index_scaled,
                    Some((stock, stock_scaled.as_slice())),
                    n,
                )
            })
            .collect();
        Ok(Self::assemble(LadderMode::Pair, range, pair.len(), levels, qi, Some(qs), warning, policy))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        mode: LadderMode,
        range: LevelRange,
        grid_len: usize,
        levels: Vec<PartitionLevel>,
        primary_step_quantile: f64,
        stock_step_quantile: Option<f64>,
        resolution_warning: Option<String>,
        policy: &ResolutionPolicy,
    ) -> Self {
        let sparse_levels = levels
            .iter()
            .filter(|l| l.count() < policy.min_crossings)
            .map(|l| l.level)
            .collect();
        Self {
            mode,
            range,
            grid_len,
            levels,
            primary_step_quantile,
            stock_step_quantile,
            sparse_levels,
            resolution_warning,
        }
    }
}

/// Single-index ladder with the default resolution policy.
pub fn build_single(path: &PricePath, n_min: u32, n_max: u32) -> Result<PartitionLadder, PartitionError> {
    PartitionLadder::single(path, Asset::Index, LevelRange::new(n_min, n_max)?, &ResolutionPolicy::default())
}

/// Pair ladder with the default resolution policy.
pub fn build_pair(pair: &PathPair, n_min: u32, n_max: u32) -> Result<PartitionLadder, PartitionError> {
    PartitionLadder::pair(pair, LevelRange::new(n_min, n_max)?, &ResolutionPolicy::default())
}

/// Default level range for a path: `n_min` up to the finest level passing the
/// grid check, capped at `cap`.
pub fn auto_levels(
    values: &[&[f64]],
    n_min: u32,
    cap: u32,
    policy: &ResolutionPolicy,
) -> Result<LevelRange, PartitionError> {
    let mut worst = 0.0_f64;
    let mut worst_asset = Asset::Index;
    for (i, v) in values.iter().enumerate() {
        let q = step_quantile(&rescaled(v), policy.step_quantile);
        if q > worst {
            worst = q;
            worst_asset = if i == 0 { Asset::Index } else { Asset::Stock };
        }
    }
    let n_max = if worst == 0.0 {
        cap
    } else {
        let n = (policy.max_step_fraction / worst).log2().floor();
        if n < 1.0 { 0 } else { (n as u32).min(cap) }
    };
    if n_max < n_min {
        return Err(PartitionError::Resolution {
            asset: worst_asset,
            level: n_min,
            step_quantile: worst,
            limit: policy.max_step_fraction * threshold(n_min),
        });
    }
    LevelRange::new(n_min, n_max)
}

pub fn threshold(level: u32) -> f64 {
    (-(level as f64)).exp2()
}

fn rescaled(values: &[f64]) -> Vec<f64> {
    let first = values[0];
    if first == 1.0 {
        values.to_vec()
    } else {
        values.iter().map(|v| v / first).collect()
    }
}

/// Nearest-rank quantile of absolute per-step moves.
fn step_quantile(scaled: &[f64], q: f64) -> f64 {
    let mut steps: Vec<f64> = scaled.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    if steps.is_empty() {
        return 0.0;
    }
    let rank = ((q * steps.len() as f64).ceil() as usize).clamp(1, steps.len());
    let (_, value, _) = steps.select_nth_unstable_by(rank - 1, f64::total_cmp);
    *value
}

fn check(asset: Asset, quantile: f64, n_max: u32, policy: &ResolutionPolicy) -> Result<Option<String>, PartitionError> {
    let limit = policy.max_step_fraction * threshold(n_max);
    if quantile <= limit {
        return Ok(None);
    }
    let err = PartitionError::Resolution { asset, level: n_max, step_quantile: quantile, limit };
    if policy.enforce {
        Err(err)
    } else {
        Ok(Some(err.to_string()))
    }
}

fn build_level(
    times: &[f64],
    raw: &[f64],
    scaled: &[f64],
    stock: Option<(&[f64], &[f64])>,
    level: u32,
) -> PartitionLevel {
    let h = threshold(level);
    let mut crossings = vec![Crossing {
        grid_index: 0,
        time: times[0],
        value: raw[0],
        stock_value: stock.map(|(s, _)| s[0]),
    }];
    let mut anchor = 0;
    for j in 1..times.len() {
        let mut moved = (scaled[j] - scaled[anchor]).abs();
        if let Some((_, ss)) = stock {
            moved = moved.max((ss[j] - ss[anchor]).abs());
        }
        if moved >= h {
            crossings.push(Crossing {
                grid_index: j,
                time: times[j],
                value: raw[j],
                stock_value: stock.map(|(s, _)| s[j]),
            });
            anchor = j;
        }
    }
    PartitionLevel { level, threshold: h, crossings, truncated: anchor + 1 < times.len() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(times: &[f64], values: &[f64]) -> PricePath {
        PricePath::new(times.to_vec(), values.to_vec()).unwrap()
    }

    fn times_of(level: &PartitionLevel) -> Vec<f64> {
        level.crossings.iter().map(|c| c.time).collect()
    }

    #[test]
    fn constant_path_has_no_crossings() {
        let p = path(&[0.0, 1.0, 2.0], &[1.0, 1.0, 1.0]);
        let ladder = build_single(&p, 1, 4).unwrap();
        assert_eq!(ladder.levels.len(), 4);
        for l in &ladder.levels {
            assert_eq!(l.crossings.len(), 1);
            assert!(l.truncated);
        }
    }

    #[test]
    fn hand_enumerated_single() {
        let p = path(&[0.0, 1.0, 2.0, 3.0], &[1.0, 1.3, 1.05, 1.5]);
        let ladder =
            PartitionLadder::single(&p, Asset::Index, LevelRange::single(2).unwrap(), &ResolutionPolicy::unchecked())
                .unwrap();
        let l = ladder.level(2).unwrap();
        assert_eq!(times_of(l), vec![0.0, 1.0, 2.0, 3.0]);
        let values: Vec<f64> = l.crossings.iter().map(|c| c.value).collect();
        assert_eq!(values, vec![1.0, 1.3, 1.05, 1.5]);
        assert!(!l.truncated);
        assert!(ladder.resolution_warning.is_some());
    }

    #[test]
    fn hand_enumerated_single_is_rejected_by_default_policy() {
        let p = path(&[0.0, 1.0, 2.0, 3.0], &[1.0, 1.3, 1.05, 1.5]);
        assert!(matches!(build_single(&p, 2, 2), Err(PartitionError::Resolution { level: 2, .. })));
    }

    #[test]
    fn hand_enumerated_pair() {
        let pair = PathPair::new(vec![0.0, 1.0, 2.0], vec![1.0, 1.1, 1.4], Some(vec![1.0, 1.3, 1.35])).unwrap();
        let ladder = PartitionLadder::pair(&pair, LevelRange::single(2).unwrap(), &ResolutionPolicy::unchecked()).unwrap();
        assert_eq!(times_of(ladder.level(2).unwrap()), vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn linear_path_crossings() {
        let dt = 1e-3;
        let times: Vec<f64> = (0..=1000).map(|k| k as f64 * dt).collect();
        let values: Vec<f64> = times.iter().map(|t| 1.0 + t).collect();
        let p = path(&times, &values);
        let ladder = build_single(&p, 3, 3).unwrap();
        let l = ladder.level(3).unwrap();
        for w in l.crossings.windows(2) {
            let inc = (w[1].value - w[0].value).abs();
            assert!((0.125..=0.126 + 1e-12).contains(&inc), "{inc}");
            assert!(((w[1].time - w[0].time) - 0.125).abs() <= 1.5e-3);
        }
    }

    #[test]
    fn pair_with_identical_assets_matches_single() {
        let times: Vec<f64> = (0..200).map(|k| k as f64).collect();
        let values: Vec<f64> = times.iter().map(|t| 1.0 + 0.3 * (t * 0.1).sin()).collect();
        let single = PartitionLadder::single(&path(&times, &values), Asset::Index, LevelRange::new(1, 5).unwrap(), &ResolutionPolicy::unchecked()).unwrap();
        let pair = PathPair::new(times.clone(), values.clone(), Some(values.clone())).unwrap();
        let paired = PartitionLadder::pair(&pair, LevelRange::new(1, 5).unwrap(), &ResolutionPolicy::unchecked()).unwrap();
        for (a, b) in single.levels.iter().zip(&paired.levels) {
            assert_eq!(times_of(a), times_of(b));
        }
    }

    #[test]
    fn pair_driven_by_stock_when_index_flat() {
        let times: Vec<f64> = (0..100).map(|k| k as f64).collect();
        let index = vec![1.0; 100];
        let stock: Vec<f64> = times.iter().map(|t| 1.0 + 0.01 * t).collect();
        let pair = PathPair::new(times.clone(), index, Some(stock.clone())).unwrap();
        let ladder = PartitionLadder::pair(&pair, LevelRange::single(3).unwrap(), &ResolutionPolicy::unchecked()).unwrap();
        let stock_only = PartitionLadder::single(&path(&times, &stock), Asset::Stock, LevelRange::single(3).unwrap(), &ResolutionPolicy::unchecked()).unwrap();
        assert_eq!(times_of(ladder.level(3).unwrap()), times_of(stock_only.level(3).unwrap()));
        assert!(ladder.level(3).unwrap().count() > 0);
    }

    #[test]
    fn pair_without_stock_is_rejected() {
        let pair = PathPair::new(vec![0.0, 1.0], vec![1.0, 1.1], None).unwrap();
        assert_eq!(build_pair(&pair, 1, 2).unwrap_err(), PartitionError::MissingStock);
    }

    #[test]
    fn invalid_ranges() {
        assert!(LevelRange::new(0, 3).is_err());
        assert!(LevelRange::new(4, 3).is_err());
        assert!(LevelRange::new(1, 63).is_err());
    }

    #[test]
    fn ladder_is_scale_free() {
        let times: Vec<f64> = (0..500).map(|k| k as f64).collect();
        let values: Vec<f64> = times.iter().map(|t| 1.0 + 0.2 * (t * 0.05).sin()).collect();
        let p = path(&times, &values);
        let scaled = p.scaled(64.0).unwrap();
        let policy = ResolutionPolicy::unchecked();
        let range = LevelRange::new(1, 6).unwrap();
        let a = PartitionLadder::single(&p, Asset::Index, range, &policy).unwrap();
        let b = PartitionLadder::single(&scaled, Asset::Index, range, &policy).unwrap();
        for (x, y) in a.levels.iter().zip(&b.levels) {
            assert_eq!(times_of(x), times_of(y));
        }
    }

    #[test]
    fn auto_levels_picks_finest_passing_level() {
        let times: Vec<f64> = (0..1000).map(|k| k as f64).collect();
        // constant per-step move of 0.003: 2^-8 = 0.0039 passes, 2^-9 fails
        let values: Vec<f64> = times.iter().map(|t| 1.0 + 0.003 * t).collect();
        let r = auto_levels(&[&values], 2, 10, &ResolutionPolicy::default()).unwrap();
        assert_eq!(r, LevelRange::new(2, 8).unwrap());
        let r = auto_levels(&[&values], 2, 6, &ResolutionPolicy::default()).unwrap();
        assert_eq!(r.n_max, 6);
        let coarse: Vec<f64> = times.iter().map(|t| 1.0 + 0.6 * t).collect();
        assert!(auto_levels(&[&coarse], 2, 10, &ResolutionPolicy::default()).is_err());
    }
}
