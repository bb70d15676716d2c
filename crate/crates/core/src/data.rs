//! Trajectories, datasets, the Sines generator, CSV ingestion, min-max
//! normalization and autocorrelation summary statistics.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{seeded_rng, Error, Result};

/// Values closer than this to 0 or 1 are pulled inside the open unit
/// interval before any squashed-Gaussian density is evaluated.
pub const BOUNDARY_EPS: f64 = 1e-6;

/// A `T x D` sequence of feature vectors, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    horizon: usize,
    dim: usize,
    values: Vec<f64>,
}

impl Trajectory {
    pub fn new(horizon: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if horizon == 0 || dim == 0 {
            return Err(Error::Invalid("trajectory needs T >= 1 and D >= 1".into()));
        }
        if values.len() != horizon * dim {
            return Err(Error::Shape(format!(
                "{} values for a {horizon} x {dim} trajectory",
                values.len()
            )));
        }
        Ok(Self { horizon, dim, values })
    }

    pub fn from_steps<S: AsRef<[f64]>>(steps: &[S]) -> Result<Self> {
        let dim = steps.first().map_or(0, |s| s.as_ref().len());
        let mut values = Vec::with_capacity(steps.len() * dim);
        for s in steps {
            if s.as_ref().len() != dim {
                return Err(Error::Shape("ragged trajectory steps".into()));
            }
            values.extend_from_slice(s.as_ref());
        }
        Self::new(steps.len(), dim, values)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Feature vector at zero-based step `t`.
    pub fn step(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn get(&self, t: usize, feature: usize) -> f64 {
        self.values[t * self.dim + feature]
    }

    pub fn steps(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.dim)
    }

    /// The first `len` steps.
    pub fn prefix(&self, len: usize) -> &[f64] {
        &self.values[..len * self.dim]
    }

    /// Copy with every value pulled into `[eps, 1 - eps]`.
    pub fn clipped(&self, eps: f64) -> Self {
        Self {
            horizon: self.horizon,
            dim: self.dim,
            values: self.values.iter().map(|v| v.clamp(eps, 1.0 - eps)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// A named collection of trajectories sharing `(T, D)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, trajectories: Vec<Trajectory>) -> Result<Self> {
        if let Some(first) = trajectories.first() {
            let shape = (first.horizon, first.dim);
            if let Some(bad) = trajectories.iter().find(|t| (t.horizon, t.dim) != shape) {
                return Err(Error::Shape(format!(
                    "dataset mixes {shape:?} with {:?}",
                    (bad.horizon, bad.dim)
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            trajectories,
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn into_trajectories(self) -> Vec<Trajectory> {
        self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.horizon)
    }

    pub fn dim(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.dim)
    }

    /// Shuffled split; the first part holds `round(fraction * n)` trajectories.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Invalid(format!("split fraction {fraction}")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut rng = seeded_rng(seed);
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
        let cut = (fraction * self.len() as f64).round() as usize;
        let pick = |ids: &[usize]| ids.iter().map(|&i| self.trajectories[i].clone()).collect();
        Ok((
            Dataset::new(self.name.clone(), pick(&idx[..cut]))?,
            Dataset::new(self.name.clone(), pick(&idx[cut..]))?,
        ))
    }

    pub fn map(&self, f: impl Fn(&Trajectory) -> Result<Trajectory>) -> Result<Dataset> {
        let trajectories = self.trajectories.iter().map(f).collect::<Result<_>>()?;
        Dataset::new(self.name.clone(), trajectories)
    }

    /// Per-feature mean over all steps of all trajectories.
    pub fn feature_means(&self) -> Vec<f64> {
        let d = self.dim();
        let mut sums = vec![0.0; d];
        let mut count = 0usize;
        for t in &self.trajectories {
            for s in t.steps() {
                for (acc, v) in sums.iter_mut().zip(s) {
                    *acc += v;
                }
                count += 1;
            }
        }
        sums.iter().map(|s| s / count.max(1) as f64).collect()
    }
}

/// Frequency/phase draw for one multivariate sinusoid.
#[derive(Debug, Clone, PartialEq)]
pub struct SineParams {
    pub freq: Vec<f64>,
    pub phase: Vec<f64>,
}

impl SineParams {
    /// `(sin(f t + phi) + 1) / 2` at zero-based step `t`.
    pub fn value(&self, t: usize, feature: usize) -> f64 {
        ((self.freq[feature] * t as f64 + self.phase[feature]).sin() + 1.0) / 2.0
    }

    pub fn trajectory(&self, horizon: usize) -> Trajectory {
        let d = self.freq.len();
        let values = (0..horizon)
            .flat_map(|t| (0..d).map(move |i| (t, i)))
            .map(|(t, i)| self.value(t, i))
            .collect();
        Trajectory::new(horizon, d, values).expect("sine shape")
    }
}

/// Generator for the multivariate Sines dataset. Each trajectory draws one
/// frequency and phase per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinesConfig {
    pub n: usize,
    pub horizon: usize,
    pub dim: usize,
    pub freq_range: (f64, f64),
    pub phase_range: (f64, f64),
}

impl Default for SinesConfig {
    fn default() -> Self {
        Self {
            n: 10_000,
            horizon: 24,
            dim: 5,
            freq_range: (0.0, 0.1),
            phase_range: (0.0, 0.1),
        }
    }
}

impl SinesConfig {
    pub fn sample_params(&self, rng: &mut impl Rng) -> SineParams {
        let draw = |rng: &mut dyn rand::RngCore, (lo, hi): (f64, f64)| {
            if hi > lo {
                rng.gen_range(lo..hi)
            } else {
                lo
            }
        };
        let mut freq = Vec::with_capacity(self.dim);
        let mut phase = Vec::with_capacity(self.dim);
        for _ in 0..self.dim {
            freq.push(draw(rng, self.freq_range));
            phase.push(draw(rng, self.phase_range));
        }
        SineParams { freq, phase }
    }
}

pub fn generate_sines(cfg: &SinesConfig, seed: u64) -> Result<Dataset> {
    if cfg.n == 0 || cfg.horizon == 0 || cfg.dim == 0 {
        return Err(Error::Invalid("sines needs n, T, D >= 1".into()));
    }
    let mut rng = seeded_rng(seed);
    let trajectories = (0..cfg.n)
        .map(|_| cfg.sample_params(&mut rng).trajectory(cfg.horizon))
        .collect();
    Dataset::new("sines", trajectories)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvOptions {
    pub horizon: usize,
    /// Step between window starts; `None` means non-overlapping windows.
    pub stride: Option<usize>,
}

impl CsvOptions {
    pub fn windows(horizon: usize) -> Self {
        Self { horizon, stride: None }
    }
}

/// Reads `series_id,t,<f1>,...,<fD>` rows sorted by `(series_id, t)` and
/// slices each series into windows of length `T`.
pub fn load_csv(path: &Path, opts: CsvOptions) -> Result<Dataset> {
    let csv_err = |message: String| Error::Csv {
        path: path.to_path_buf(),
        message,
    };
    let horizon = opts.horizon;
    if horizon == 0 {
        return Err(Error::Invalid("window length must be >= 1".into()));
    }
    let stride = opts.stride.unwrap_or(horizon);
    if stride == 0 {
        return Err(Error::Invalid("window stride must be >= 1".into()));
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(e.to_string()))?;
    let headers = reader.headers().map_err(|e| csv_err(e.to_string()))?.clone();
    let id_col = headers
        .iter()
        .position(|h| h == "series_id")
        .ok_or_else(|| csv_err("missing column `series_id`".into()))?;
    let t_col = headers
        .iter()
        .position(|h| h == "t")
        .ok_or_else(|| csv_err("missing column `t`".into()))?;
    let feature_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != id_col && i != t_col)
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    if feature_cols.is_empty() {
        return Err(csv_err("no feature columns".into()));
    }
    let dim = feature_cols.len();

    let mut series: Vec<(String, Vec<f64>)> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut last_t: Option<f64> = None;
    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 2; // 1-based, after the header line
        let record = record.map_err(|e| csv_err(format!("row {row}: {e}")))?;
        let id = record.get(id_col).unwrap_or("").to_string();
        let t_raw = record.get(t_col).unwrap_or("");
        let t: f64 = t_raw
            .trim()
            .parse()
            .map_err(|_| csv_err(format!("row {row}, column `t`: non-numeric value {t_raw:?}")))?;
        let new_series = series.last().is_none_or(|(cur, _)| cur != &id);
        if new_series {
            if !seen.insert(id.clone()) {
                return Err(csv_err(format!("row {row}: series {id:?} is not contiguous; rows must be sorted")));
            }
            series.push((id.clone(), Vec::new()));
        } else if last_t.is_some_and(|prev| t <= prev) {
            return Err(csv_err(format!("row {row}: t must increase within series {id:?}")));
        }
        last_t = Some(t);
        let values = &mut series.last_mut().expect("series").1;
        for (col, name) in &feature_cols {
            let raw = record.get(*col).unwrap_or("").trim();
            if raw.is_empty() {
                return Err(csv_err(format!("row {row}, column `{name}`: missing value")));
            }
            let v: f64 = raw
                .parse()
                .map_err(|_| csv_err(format!("row {row}, column `{name}`: non-numeric value {raw:?}")))?;
            if !v.is_finite() {
                return Err(csv_err(format!("row {row}, column `{name}`: non-finite value")));
            }
            values.push(v);
        }
    }

    let mut trajectories = Vec::new();
    for (id, values) in &series {
        let len = values.len() / dim;
        if len < horizon {
            return Err(csv_err(format!("series {id:?} has {len} rows, fewer than T = {horizon}")));
        }
        let mut start = 0;
        while start + horizon <= len {
            let window = values[start * dim..(start + horizon) * dim].to_vec();
            trajectories.push(Trajectory::new(horizon, dim, window)?);
            start += stride;
        }
    }
    let name = path
        .file_stem()
        .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, trajectories)
}

/// Writes one series per trajectory with features named `f1..fD`.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let wrap = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut header = vec!["series_id".to_string(), "t".to_string()];
    header.extend((1..=ds.dim()).map(|i| format!("f{i}")));
    w.write_record(&header).map_err(wrap)?;
    let mut record = Vec::with_capacity(header.len());
    for (id, traj) in ds.trajectories().iter().enumerate() {
        for (t, step) in traj.steps().enumerate() {
            record.clear();
            record.push(id.to_string());
            record.push(t.to_string());
            record.extend(step.iter().map(|v| v.to_string()));
            w.write_record(&record).map_err(wrap)?;
        }
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// Per-feature min-max scaling onto `[0, 1]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    pub fn fit(ds: &Dataset) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::Invalid("cannot fit a normalizer on an empty dataset".into()));
        }
        let d = ds.dim();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for t in ds.trajectories() {
            for s in t.steps() {
                for i in 0..d {
                    min[i] = min[i].min(s[i]);
                    max[i] = max[i].max(s[i]);
                }
            }
        }
        Ok(Self { min, max })
    }

    pub fn is_fitted(&self) -> bool {
        !self.min.is_empty()
    }

    fn check(&self, traj: &Trajectory) -> Result<()> {
        if !self.is_fitted() {
            return Err(Error::UnfittedNormalizer);
        }
        if traj.dim() != self.min.len() {
            return Err(Error::Shape(format!(
                "normalizer fitted on D = {}, trajectory has D = {}",
                self.min.len(),
                traj.dim()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, traj: &Trajectory) -> Result<Trajectory> {
        self.check(traj)?;
        let d = traj.dim();
        let values = traj
            .values()
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let (lo, hi) = (self.min[k % d], self.max[k % d]);
                if hi > lo {
                    (v - lo) / (hi - lo)
                } else {
                    0.5
                }
            })
            .collect();
        Trajectory::new(traj.horizon(), d, values)
    }

    pub fn invert(&self, traj: &Trajectory) -> Result<Trajectory> {
        self.check(traj)?;
        let d = traj.dim();
        let values = traj
            .values()
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let (lo, hi) = (self.min[k % d], self.max[k % d]);
                if hi > lo {
                    lo + v * (hi - lo)
                } else {
                    lo
                }
            })
            .collect();
        Trajectory::new(traj.horizon(), d, values)
    }

    pub fn apply_dataset(&self, ds: &Dataset) -> Result<Dataset> {
        ds.map(|t| self.apply(t))
    }

    pub fn invert_dataset(&self, ds: &Dataset) -> Result<Dataset> {
        ds.map(|t| self.invert(t))
    }
}

/// How lagged autocorrelation is estimated for [`dataset_stats`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AutocorrEstimator {
    /// Standard sample autocorrelation of each series (deviations from the
    /// series mean, normalized by the series variance), averaged over series
    /// and features; the magnitude of that average is reported.
    #[default]
    SeriesAcf,
    /// Pearson correlation of `(x_t, x_{t+k})` across the sample dimension
    /// for every `(feature, t)`, with the magnitudes averaged.
    PooledPearson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub dim: usize,
    pub horizon: usize,
    pub lag1: f64,
    pub lag3: f64,
    pub lag5: f64,
    /// Zero-variance terms left out of the averages.
    pub skipped: usize,
}

impl DatasetStats {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dimension = {}", self.dim);
        let _ = writeln!(s, "length = {}", self.horizon);
        let _ = writeln!(s, "autocorr_lag1 = {:.6}", self.lag1);
        let _ = writeln!(s, "autocorr_lag3 = {:.6}", self.lag3);
        let _ = writeln!(s, "autocorr_lag5 = {:.6}", self.lag5);
        let _ = writeln!(s, "skipped_terms = {}", self.skipped);
        s
    }
}

pub fn dataset_stats(ds: &Dataset, estimator: AutocorrEstimator) -> Result<DatasetStats> {
    let horizon = ds.horizon();
    if horizon <= 5 {
        return Err(Error::Invalid(format!("lag-5 statistics need T > 5, got {horizon}")));
    }
    let mut skipped = 0;
    let mut lags = [0.0; 3];
    for (slot, k) in lags.iter_mut().zip([1usize, 3, 5]) {
        let (value, skip) = match estimator {
            AutocorrEstimator::SeriesAcf => series_acf(ds, k),
            AutocorrEstimator::PooledPearson => pooled_pearson(ds, k),
        };
        *slot = value;
        skipped += skip;
    }
    Ok(DatasetStats {
        dim: ds.dim(),
        horizon,
        lag1: lags[0],
        lag3: lags[1],
        lag5: lags[2],
        skipped,
    })
}

fn series_acf(ds: &Dataset, k: usize) -> (f64, usize) {
    let (t_len, d) = (ds.horizon(), ds.dim());
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut skipped = 0;
    let mut x = vec![0.0; t_len];
    for traj in ds.trajectories() {
        for i in 0..d {
            for (t, slot) in x.iter_mut().enumerate() {
                *slot = traj.get(t, i);
            }
            let mean = x.iter().sum::<f64>() / t_len as f64;
            let denom: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
            if denom < 1e-12 {
                skipped += 1;
                continue;
            }
            let num: f64 = (0..t_len - k).map(|t| (x[t] - mean) * (x[t + k] - mean)).sum();
            sum += num / denom;
            count += 1;
        }
    }
    ((sum / count.max(1) as f64).abs(), skipped)
}

fn pooled_pearson(ds: &Dataset, k: usize) -> (f64, usize) {
    let (t_len, d) = (ds.horizon(), ds.dim());
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut skipped = 0;
    let mut a = Vec::with_capacity(ds.len());
    let mut b = Vec::with_capacity(ds.len());
    for i in 0..d {
        for t in 0..t_len - k {
            a.clear();
            b.clear();
            for traj in ds.trajectories() {
                a.push(traj.get(t, i));
                b.push(traj.get(t + k, i));
            }
            match pearson(&a, &b) {
                Some(r) => {
                    sum += r.abs();
                    count += 1;
                }
                None => skipped += 1,
            }
        }
    }
    (sum / count.max(1) as f64, skipped)
}

/// Pearson correlation; `None` when either side has (near-)zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    let denom = (saa * sbb).sqrt();
    if denom < 1e-12 {
        None
    } else {
        Some(sab / denom)
    }
}
