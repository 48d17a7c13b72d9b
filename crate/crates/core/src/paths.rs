//! Positive price paths for the index `I` and the security `S`.
//!
//! Paths live on a strictly increasing time grid starting at 0. The index is
//! normalized so that `I(0) = 1`; the stock keeps its own scale unless the
//! caller normalizes it. Generators use exact log-normal stepping so
//! positivity never depends on the step size.

use std::io::Read;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PathError {
    #[error("path is empty")]
    Empty,
    #[error("times and values differ in length ({times} vs {values})")]
    LengthMismatch { times: usize, values: usize },
    #[error("first time must be 0, got {0}")]
    NonZeroStart(f64),
    #[error("time at position {position} is not strictly increasing ({previous} then {current})")]
    NonMonotoneTime { position: usize, previous: f64, current: f64 },
    #[error("value at position {position} is not a positive finite number: {value}")]
    NonPositiveValue { position: usize, value: f64 },
    #[error("invalid generator parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("cannot read CSV input: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV header must be `t,index[,stock]`, got `{0}`")]
    Header(String),
    #[error("row {row}: cannot parse {column} value `{text}`")]
    Parse { row: usize, column: &'static str, text: String },
    #[error("row {row}: expected {expected} fields, got {got}")]
    FieldCount { row: usize, expected: usize, got: usize },
    #[error("row {row}: {column} price must be positive, got {value}")]
    NonPositivePrice { row: usize, column: &'static str, value: f64 },
    #[error("row {row}: time {current} does not increase on previous time {previous}")]
    NonMonotoneTime { row: usize, previous: f64, current: f64 },
    #[error("CSV contains no data rows")]
    Empty,
    #[error("malformed CSV: {0}")]
    Malformed(String),
}

fn validate_grid(times: &[f64], values: &[f64]) -> Result<(), PathError> {
    if times.is_empty() {
        return Err(PathError::Empty);
    }
    if times.len() != values.len() {
        return Err(PathError::LengthMismatch { times: times.len(), values: values.len() });
    }
    if times[0] != 0.0 {
        return Err(PathError::NonZeroStart(times[0]));
    }
    for (position, w) in times.windows(2).enumerate() {
        if !(w[1] > w[0]) || !w[1].is_finite() {
            return Err(PathError::NonMonotoneTime { position: position + 1, previous: w[0], current: w[1] });
        }
    }
    for (position, &value) in values.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(PathError::NonPositiveValue { position, value });
        }
    }
    Ok(())
}

/// A positive price trajectory sampled on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricePath {
    times: Vec<f64>,
    values: Vec<f64>,
    normalization_factor: f64,
}

impl PricePath {
    /// Builds a path as given (no rescaling, factor 1).
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self, PathError> {
        validate_grid(&times, &values)?;
        Ok(Self { times, values, normalization_factor: 1.0 })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Product of all rescales applied so far; `values * factor` recovers the raw prices.
    pub fn normalization_factor(&self) -> f64 {
        self.normalization_factor
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Divides every value by the first one so the path starts at exactly 1.
    pub fn normalize(&self) -> PricePath {
        let first = self.values[0];
        let values = self.values.iter().map(|v| v / first).collect();
        PricePath {
            times: self.times.clone(),
            values,
            normalization_factor: self.normalization_factor * first,
        }
    }

    /// Multiplies the path by a positive constant. Mostly useful for checking scale invariance.
    pub fn scaled(&self, factor: f64) -> Result<PricePath, PathError> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(PathError::InvalidParameter { name: "factor", reason: format!("must be positive, got {factor}") });
        }
        Ok(PricePath {
            times: self.times.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
            normalization_factor: self.normalization_factor / factor,
        })
    }
}

/// An index path and an optional stock path on a shared grid.
///
/// The index is always normalized to 1 at time 0. The stock column may be
/// absent when the data came from a single-column CSV; operations needing
/// both assets reject such pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPair {
    times: Vec<f64>,
    index: Vec<f64>,
    stock: Option<Vec<f64>>,
    index_factor: f64,
}

impl PathPair {
    /// Builds a pair, normalizing the index to start at 1.
    pub fn new(times: Vec<f64>, index: Vec<f64>, stock: Option<Vec<f64>>) -> Result<Self, PathError> {
        validate_grid(&times, &index)?;
        if let Some(stock) = &stock {
            validate_grid(&times, stock)?;
        }
        let index_factor = index[0];
        let index = index.into_iter().map(|v| v / index_factor).collect();
        Ok(Self { times, index, stock, index_factor })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn index_values(&self) -> &[f64] {
        &self.index
    }

    pub fn stock_values(&self) -> Option<&[f64]> {
        self.stock.as_deref()
    }

    pub fn has_stock(&self) -> bool {
        self.stock.is_some()
    }

    /// Scale divided out of the raw index column.
    pub fn index_factor(&self) -> f64 {
        self.index_factor
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn index_path(&self) -> PricePath {
        PricePath {
            times: self.times.clone(),
            values: self.index.clone(),
            normalization_factor: self.index_factor,
        }
    }

    pub fn stock_path(&self) -> Option<PricePath> {
        self.stock.as_ref().map(|s| PricePath {
            times: self.times.clone(),
            values: s.clone(),
            normalization_factor: 1.0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "mu")]
pub enum DriftMode {
    /// Log drift `-σ²/2`: `I` is a martingale.
    Martingale,
    /// Log drift `+σ²/2`: `1/I` is a martingale (the index is the numéraire).
    IndexNumeraire,
    /// Any fixed log drift.
    Custom(f64),
}

impl DriftMode {
    pub fn log_drift(self, vol: f64) -> f64 {
        match self {
            DriftMode::Martingale => -0.5 * vol * vol,
            DriftMode::IndexNumeraire => 0.5 * vol * vol,
            DriftMode::Custom(mu) => mu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub vol: f64,
    pub drift_mode: DriftMode,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
}

impl GbmParams {
    pub fn validate(&self) -> Result<(), PathError> {
        let bad = |name, reason: String| Err(PathError::InvalidParameter { name, reason });
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad("dt", format!("must be positive, got {}", self.dt));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return bad("horizon", format!("must be positive, got {}", self.horizon));
        }
        if self.dt >= self.horizon {
            return bad("dt", format!("must be smaller than horizon {}, got {}", self.horizon, self.dt));
        }
        if !(self.vol >= 0.0) || !self.vol.is_finite() {
            return bad("vol", format!("must be nonnegative, got {}", self.vol));
        }
        if let DriftMode::Custom(mu) = self.drift_mode {
            if !mu.is_finite() {
                return bad("drift_mode", format!("custom drift must be finite, got {mu}"));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..=self.steps()).map(|k| k as f64 * self.dt).collect()
    }
}

const INDEX_STREAM: u64 = 0;
const STOCK_STREAM: u64 = 1;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Cumulative log of an exact GBM with the given per-step log drift and vol.
fn log_walk(steps: usize, dt: f64, vol: f64, log_drift: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let scale = vol * dt.sqrt();
    let drift = log_drift * dt;
    let mut out = Vec::with_capacity(steps + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for _ in 0..steps {
        let xi: f64 = StandardNormal.sample(rng);
        acc += scale * xi + drift;
        out.push(acc);
    }
    out
}

/// Exact-simulation geometric Brownian motion started at 1.
pub fn generate_index(params: &GbmParams) -> Result<PricePath, PathError> {
    params.validate()?;
    let mut rng = rng_for(params.seed, INDEX_STREAM);
    let logs = log_walk(params.steps(), params.dt, params.vol, params.drift_mode.log_drift(params.vol), &mut rng);
    let values = logs.into_iter().map(f64::exp).collect();
    PricePath::new(params.grid(), values)
}

/// Index from `index_params` and a stock `S = I · exp(ν B − ν² t / 2)` with an
/// independent Brownian driver `B`, so `S / I` is a martingale.
///
/// Grid, horizon and seed are taken from `index_params`; the stock driver uses
/// its own random stream.
pub fn generate_pair(index_params: &GbmParams, stock_vol: f64) -> Result<PathPair, PathError> {
    index_params.validate()?;
    if !(stock_vol >= 0.0) || !stock_vol.is_finite() {
        return Err(PathError::InvalidParameter { name: "stock_vol", reason: format!("must be nonnegative, got {stock_vol}") });
    }
    let steps = index_params.steps();
    let mut index_rng = rng_for(index_params.seed, INDEX_STREAM);
    let index_logs = log_walk(
        steps,
        index_params.dt,
        index_params.vol,
        index_params.drift_mode.log_drift(index_params.vol),
        &mut index_rng,
    );
    let index: Vec<f64> = index_logs.iter().map(|x| x.exp()).collect();
    let stock = if stock_vol == 0.0 {
        index.clone()
    } else {
        let mut stock_rng = rng_for(index_params.seed, STOCK_STREAM);
        let spread = log_walk(steps, index_params.dt, stock_vol, -0.5 * stock_vol * stock_vol, &mut stock_rng);
        index_logs.iter().zip(&spread).map(|(a, b)| (a + b).exp()).collect()
    };
    PathPair::new(index_params.grid(), index, Some(stock))
}

/// Result of reading a price CSV.
#[derive(Debug, Clone)]
pub struct LoadedCsv {
    pub pair: PathPair,
    /// Value subtracted from the raw time column so the grid starts at 0.
    pub time_offset: f64,
}

fn parse_field(row: usize, column: &'static str, text: &str) -> Result<f64, CsvError> {
    text.trim()
        .parse::<f64>()
        .map_err(|_| CsvError::Parse { row, column, text: text.to_string() })
}

/// Reads `t,index[,stock]` CSV data. Lines starting with `#` are skipped.
///
/// Row numbers in errors are 1-based line numbers of the input, header included.
pub fn load_csv<R: Read>(source: R) -> Result<LoadedCsv, CsvError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let mut records = reader.records();
    let header = loop {
        match records.next() {
            None => return Err(CsvError::Empty),
            Some(rec) => {
                let rec = rec.map_err(|e| CsvError::Malformed(e.to_string()))?;
                if rec.iter().all(|f| f.is_empty()) {
                    continue;
                }
                break rec;
            }
        }
    };
    let names: Vec<String> = header.iter().map(|f| f.to_ascii_lowercase()).collect();
    let with_stock = match names.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["t", "index"] => false,
        ["t", "index", "stock"] => true,
        _ => return Err(CsvError::Header(header.iter().collect::<Vec<_>>().join(","))),
    };
    let expected = if with_stock { 3 } else { 2 };

    let mut times = Vec::new();
    let mut index = Vec::new();
    let mut stock = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| CsvError::Malformed(e.to_string()))?;
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if rec.len() != expected {
            return Err(CsvError::FieldCount { row, expected, got: rec.len() });
        }
        let t = parse_field(row, "t", &rec[0])?;
        let i = parse_field(row, "index", &rec[1])?;
        if !(i > 0.0) || !i.is_finite() {
            return Err(CsvError::NonPositivePrice { row, column: "index", value: i });
        }
        if let Some(&previous) = times.last() {
            if !(t > previous) {
                return Err(CsvError::NonMonotoneTime { row, previous, current: t });
            }
        }
        if with_stock {
            let s = parse_field(row, "stock", &rec[2])?;
            if !(s > 0.0) || !s.is_finite() {
                return Err(CsvError::NonPositivePrice { row, column: "stock", value: s });
            }
            stock.push(s);
        }
        times.push(t);
        index.push(i);
    }
    if times.is_empty() {
        return Err(CsvError::Empty);
    }
    let time_offset = times[0];
    let times: Vec<f64> = times.iter().map(|t| t - time_offset).collect();
    let pair = PathPair::new(times, index, with_stock.then_some(stock))
        .map_err(|e| CsvError::Malformed(e.to_string()))?;
    Ok(LoadedCsv { pair, time_offset })
}

pub fn load_csv_file(path: &Path) -> Result<LoadedCsv, CsvError> {
    load_csv(std::fs::File::open(path)?)
}

/// Writes a pair as `t,index[,stock]` CSV with the index normalized.
pub fn write_csv<W: std::io::Write>(pair: &PathPair, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    if pair.has_stock() {
        w.write_record(["t", "index", "stock"])?;
    } else {
        w.write_record(["t", "index"])?;
    }
    for k in 0..pair.len() {
        let mut rec = vec![pair.times[k].to_string(), pair.index[k].to_string()];
        if let Some(s) = &pair.stock {
            rec.push(s[k].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(vol: f64, drift_mode: DriftMode, seed: u64) -> GbmParams {
        GbmParams { vol, drift_mode, horizon: 1.0, dt: 1e-3, seed }
    }

    #[test]
    fn zero_vol_is_deterministic_exponential() {
        let p = generate_index(&params(0.0, DriftMode::Martingale, 1)).unwrap();
        assert!(p.values().iter().all(|&v| v == 1.0));
        let p = generate_index(&params(0.0, DriftMode::Custom(0.3), 1)).unwrap();
        for (t, v) in p.times().iter().zip(p.values()) {
            assert!((v - (0.3 * t).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_gives_identical_path() {
        let a = generate_index(&params(0.2, DriftMode::Martingale, 7)).unwrap();
        let b = generate_index(&params(0.2, DriftMode::Martingale, 7)).unwrap();
        let c = generate_index(&params(0.2, DriftMode::Martingale, 8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = params(0.2, DriftMode::Martingale, 1);
        p.dt = 0.0;
        assert!(matches!(generate_index(&p), Err(PathError::InvalidParameter { name: "dt", .. })));
        p.dt = 2.0;
        assert!(generate_index(&p).is_err());
        let mut p = params(0.2, DriftMode::Martingale, 1);
        p.horizon = -1.0;
        assert!(matches!(generate_index(&p), Err(PathError::InvalidParameter { name: "horizon", .. })));
        let p = params(-0.1, DriftMode::Martingale, 1);
        assert!(generate_index(&p).is_err());
    }

    #[test]
    fn pair_with_zero_stock_vol_copies_index() {
        let pair = generate_pair(&params(0.2, DriftMode::Martingale, 3), 0.0).unwrap();
        assert_eq!(pair.index_values(), pair.stock_values().unwrap());
    }

    #[test]
    fn pair_with_flat_index() {
        let pair = generate_pair(&params(0.0, DriftMode::Martingale, 3), 0.3).unwrap();
        assert!(pair.index_values().iter().all(|&v| v == 1.0));
        let s = pair.stock_values().unwrap();
        assert_eq!(s[0], 1.0);
        assert!(s.iter().all(|&v| v > 0.0));
        assert!(s.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn csv_example_normalizes_index() {
        let loaded = load_csv("t,index,stock\n0,100,50\n1,110,55\n".as_bytes()).unwrap();
        let pair = loaded.pair;
        assert_eq!(pair.times(), &[0.0, 1.0]);
        assert_eq!(pair.index_values(), &[1.0, 1.1]);
        assert_eq!(pair.stock_values().unwrap(), &[50.0, 55.0]);
        assert_eq!(pair.index_factor(), 100.0);
    }

    #[test]
    fn csv_without_stock_and_with_comments() {
        let loaded = load_csv("# comment\nt,index\n# another\n0,2\n0.5,3\n".as_bytes()).unwrap();
        assert!(!loaded.pair.has_stock());
        assert_eq!(loaded.pair.index_values(), &[1.0, 1.5]);
    }

    #[test]
    fn csv_rebases_time() {
        let loaded = load_csv("t,index\n10,1\n10.5,1.1\n".as_bytes()).unwrap();
        assert_eq!(loaded.time_offset, 10.0);
        assert_eq!(loaded.pair.times(), &[0.0, 0.5]);
    }

    #[test]
    fn csv_errors_name_the_row() {
        let err = load_csv("t,index,stock\n0,1,1\n1,0,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, CsvError::NonPositivePrice { row: 3, column: "index", .. }), "{err}");
        let err = load_csv("t,index,stock\n0,1,1\n1,1,-2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, CsvError::NonPositivePrice { row: 3, column: "stock", .. }), "{err}");
        let err = load_csv("t,index\n0,1\n1,1\n1,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, CsvError::NonMonotoneTime { row: 4, .. }), "{err}");
        let err = load_csv("t,index\n0,1\nx,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, CsvError::Parse { row: 3, column: "t", .. }), "{err}");
        let err = load_csv("time,price\n0,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, CsvError::Header(_)));
        assert!(matches!(load_csv("t,index\n".as_bytes()), Err(CsvError::Empty)));
    }

    #[test]
    fn normalize_examples() {
        let p = PricePath::new(vec![0.0, 1.0], vec![1.0, 1.5]).unwrap().normalize();
        assert_eq!(p.values(), &[1.0, 1.5]);
        assert_eq!(p.normalization_factor(), 1.0);
        let p = PricePath::new(vec![0.0, 1.0], vec![4.0, 8.0]).unwrap().normalize();
        assert_eq!(p.values(), &[1.0, 2.0]);
        assert_eq!(p.normalization_factor(), 4.0);
    }

    #[test]
    fn path_validation() {
        assert_eq!(PricePath::new(vec![], vec![]), Err(PathError::Empty));
        assert!(matches!(PricePath::new(vec![0.0, 1.0], vec![1.0, 0.0]), Err(PathError::NonPositiveValue { position: 1, .. })));
        assert!(matches!(PricePath::new(vec![0.0, 0.0], vec![1.0, 1.0]), Err(PathError::NonMonotoneTime { position: 1, .. })));
        assert!(matches!(PricePath::new(vec![1.0], vec![1.0]), Err(PathError::NonZeroStart(_))));
    }

    #[test]
    fn csv_round_trip() {
        let pair = generate_pair(&params(0.2, DriftMode::Martingale, 5), 0.3).unwrap();
        let mut buf = Vec::new();
        write_csv(&pair, &mut buf).unwrap();
        let back = load_csv(buf.as_slice()).unwrap().pair;
        assert_eq!(back, pair);
    }
}
