//! Multivariate time series container.

use crate::error::{Error, Result};
use crate::linalg::uniform_open;
use crate::rng::RngSeed;
use chrono::NaiveDateTime;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Physical unit of the sampling interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    Seconds,
    Hours,
}

impl std::fmt::Display for TimeUnit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TimeUnit::Seconds => write!(f, "s"),
            TimeUnit::Hours => write!(f, "h"),
        }
    }
}

/// Uniformly sampled multivariate series: N samples of dimension d, stored as
/// an N x d matrix (one row per time step), a fixed sampling interval, and an
/// optional wall-clock anchor for the first sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    dt: f64,
    unit: TimeUnit,
    start: Option<NaiveDateTime>,
    values: DMatrix<f64>,
}

impl TimeSeries {
    /// `values` is N x d. N may be zero (an empty forecast), d may not.
    pub fn new(dt: f64, unit: TimeUnit, values: DMatrix<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: format!("sampling interval must be positive and finite, got {dt}"),
            });
        }
        if values.ncols() == 0 {
            return Err(Error::InvalidParameter {
                name: "values",
                reason: "series must have at least one channel".into(),
            });
        }
        Ok(TimeSeries {
            dt,
            unit,
            start: None,
            values,
        })
    }

    pub fn with_start(mut self, start: NaiveDateTime) -> Self {
        self.start = Some(start);
        self
    }

    pub fn set_start(&mut self, start: Option<NaiveDateTime>) {
        self.start = start;
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn unit(&self) -> TimeUnit {
        self.unit
    }

    pub fn start_time(&self) -> Option<NaiveDateTime> {
        self.start
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Sample `k` as a freshly allocated vector.
    pub fn row(&self, k: usize) -> Vec<f64> {
        (0..self.dim()).map(|j| self.values[(k, j)]).collect()
    }

    pub fn copy_row_into(&self, k: usize, buf: &mut [f64]) {
        for j in 0..self.dim() {
            buf[j] = self.values[(k, j)];
        }
    }

    /// Channel `j` as a vector.
    pub fn channel(&self, j: usize) -> Vec<f64> {
        (0..self.len()).map(|k| self.values[(k, j)]).collect()
    }

    /// Wall-clock time of sample `k`, if the series is anchored.
    pub fn time_of(&self, k: usize) -> Option<NaiveDateTime> {
        self.start.map(|s| s + self.step_duration(k as i64))
    }

    fn step_duration(&self, steps: i64) -> chrono::Duration {
        let seconds = match self.unit {
            TimeUnit::Seconds => self.dt,
            TimeUnit::Hours => self.dt * 3600.0,
        };
        chrono::Duration::nanoseconds((seconds * steps as f64 * 1e9).round() as i64)
    }

    /// Contiguous slice of samples [start, end).
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<TimeSeries> {
        if range.end > self.len() || range.start > range.end {
            return Err(Error::InvalidParameter {
                name: "range",
                reason: format!(
                    "slice {}..{} out of bounds for {} samples",
                    range.start,
                    range.end,
                    self.len()
                ),
            });
        }
        let n = range.end - range.start;
        let values = DMatrix::from_fn(n, self.dim(), |i, j| self.values[(range.start + i, j)]);
        let mut out = TimeSeries::new(self.dt, self.unit, values)?;
        out.start = self.time_of(range.start);
        Ok(out)
    }

    /// Per-channel standard deviation (population form).
    pub fn channel_std(&self) -> Vec<f64> {
        let n = self.len();
        if n == 0 {
            return vec![0.0; self.dim()];
        }
        (0..self.dim())
            .map(|j| {
                let mean = (0..n).map(|k| self.values[(k, j)]).sum::<f64>() / n as f64;
                let var = (0..n)
                    .map(|k| {
                        let d = self.values[(k, j)] - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / n as f64;
                var.sqrt()
            })
            .collect()
    }

    /// Largest absolute value over all samples and channels.
    pub fn amplitude(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }
}

/// Split into a training prefix of `train_n` samples and a test block of
/// `test_n` samples immediately after it.
pub fn split(series: &TimeSeries, train_n: usize, test_n: usize) -> Result<(TimeSeries, TimeSeries)> {
    if train_n + test_n > series.len() {
        return Err(Error::SeriesTooShort {
            needed: train_n + test_n,
            actual: series.len(),
        });
    }
    if train_n == 0 {
        return Err(Error::InvalidParameter {
            name: "train_n",
            reason: "training split must be non-empty".into(),
        });
    }
    let train = series.slice(0..train_n)?;
    let test = series.slice(train_n..train_n + test_n)?;
    Ok((train, test))
}

/// Add iid Gaussian noise N(0, sigma^2) to every entry. `sigma = 0` returns
/// an unchanged copy without consuming randomness.
pub fn add_noise(series: &TimeSeries, sigma: f64, seed: RngSeed) -> Result<TimeSeries> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "sigma",
            reason: format!("noise level must be finite and non-negative, got {sigma}"),
        });
    }
    if sigma == 0.0 {
        return Ok(series.clone());
    }
    add_noise_scaled(series, &vec![sigma; series.dim()], seed)
}

/// Add Gaussian noise with a separate standard deviation per channel. Draws
/// are row-major (sample by sample, channel by channel) so the noise field is
/// a pure function of the seed and the series shape.
pub fn add_noise_scaled(series: &TimeSeries, sigmas: &[f64], seed: RngSeed) -> Result<TimeSeries> {
    if sigmas.len() != series.dim() {
        return Err(Error::ShapeMismatch {
            context: "noise levels vs channels",
            expected: format!("{}", series.dim()),
            actual: format!("{}", sigmas.len()),
        });
    }
    for &s in sigmas {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "sigma",
                reason: format!("noise level must be finite and non-negative, got {s}"),
            });
        }
    }
    let mut rng = seed.rng();
    let mut out = series.clone();
    let normal = rand_distr::StandardNormal;
    for k in 0..out.len() {
        for j in 0..out.dim() {
            let z: f64 = rand::Rng::sample(&mut rng, normal);
            out.values[(k, j)] += sigmas[j] * z;
        }
    }
    Ok(out)
}

/// Per-channel affine map `x -> (x - shift) / scale` fitted on training data
/// and inverted on model output. Models train and run on normalized values;
/// metrics are computed in original units, which the affine map leaves
/// intact for scale-invariant scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    /// Fit channel means and standard deviations. A constant channel gets
    /// scale 1 so the map stays invertible.
    pub fn fit(series: &TimeSeries) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::SeriesTooShort {
                needed: 1,
                actual: 0,
            });
        }
        let mut shift = vec![0.0; series.dim()];
        for j in 0..series.dim() {
            let mut sum = 0.0;
            for k in 0..series.len() {
                sum += series.values[(k, j)];
            }
            shift[j] = sum / series.len() as f64;
        }
        let scale = series
            .channel_std()
            .into_iter()
            .map(|sd| if sd > 0.0 { sd } else { 1.0 })
            .collect();
        Ok(Normalizer { shift, scale })
    }

    fn check_dim(&self, series: &TimeSeries) -> Result<()> {
        if series.dim() != self.shift.len() {
            return Err(Error::ShapeMismatch {
                context: "normalizer vs series channels",
                expected: format!("{}", self.shift.len()),
                actual: format!("{}", series.dim()),
            });
        }
        Ok(())
    }

    pub fn apply(&self, series: &TimeSeries) -> Result<TimeSeries> {
        self.check_dim(series)?;
        let mut out = series.clone();
        for k in 0..out.len() {
            for j in 0..out.dim() {
                out.values[(k, j)] = (out.values[(k, j)] - self.shift[j]) / self.scale[j];
            }
        }
        Ok(out)
    }

    pub fn invert(&self, series: &TimeSeries) -> Result<TimeSeries> {
        self.check_dim(series)?;
        let mut out = series.clone();
        for k in 0..out.len() {
            for j in 0..out.dim() {
                out.values[(k, j)] = out.values[(k, j)] * self.scale[j] + self.shift[j];
            }
        }
        Ok(out)
    }

    /// Normalize one sample row in place.
    pub fn apply_row(&self, row: &mut [f64]) -> Result<()> {
        if row.len() != self.shift.len() {
            return Err(Error::ShapeMismatch {
                context: "normalizer vs row length",
                expected: format!("{}", self.shift.len()),
                actual: format!("{}", row.len()),
            });
        }
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - self.shift[j]) / self.scale[j];
        }
        Ok(())
    }
}

/// Deterministic uniform noise helper used by a few tests; draws in (lo, hi).
pub fn uniform_series(n: usize, d: usize, lo: f64, hi: f64, dt: f64, seed: RngSeed) -> Result<TimeSeries> {
    let mut rng = seed.rng();
    let mut values = DMatrix::zeros(n, d);
    for k in 0..n {
        for j in 0..d {
            values[(k, j)] = uniform_open(&mut rng, lo, hi);
        }
    }
    TimeSeries::new(dt, TimeUnit::Seconds, values)
}
