//! Forecast quality metrics and Monte Carlo aggregation.

use crate::error::{Error, Result};
use crate::rng::RngSeed;
use crate::series::TimeSeries;
use serde::{Deserialize, Serialize};

fn check_compatible(truth: &TimeSeries, pred: &TimeSeries) -> Result<()> {
    if truth.len() != pred.len() || truth.dim() != pred.dim() {
        return Err(Error::ShapeMismatch {
            context: "metric operands",
            expected: format!("{}x{}", truth.len(), truth.dim()),
            actual: format!("{}x{}", pred.len(), pred.dim()),
        });
    }
    if truth.is_empty() {
        return Err(Error::InvalidParameter {
            name: "series",
            reason: "metrics need at least one sample".into(),
        });
    }
    Ok(())
}

/// Normalized root mean square error over the full horizon:
/// `sqrt( sum_k ||x_k - xhat_k||^2 / sum_k ||x_k||^2 )`.
///
/// The denominator is the raw (uncentered) signal energy, so a forecast that
/// is identically zero scores exactly 1. Errors if the truth is identically
/// zero.
pub fn nrmse(truth: &TimeSeries, pred: &TimeSeries) -> Result<f64> {
    check_compatible(truth, pred)?;
    let t = truth.values();
    let p = pred.values();
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..t.nrows() {
        for j in 0..t.ncols() {
            let x = t[(k, j)];
            let d = x - p[(k, j)];
            num += d * d;
            den += x * x;
        }
    }
    if den == 0.0 {
        return Err(Error::ZeroDenominator { context: "nrmse" });
    }
    Ok((num / den).sqrt())
}

/// Pearson correlation between truth and forecast, treating each sample as a
/// d-dimensional vector: centered inner product over the product of centered
/// norms. Errors if either side has zero variance.
pub fn pearson(truth: &TimeSeries, pred: &TimeSeries) -> Result<f64> {
    check_compatible(truth, pred)?;
    let t = truth.values();
    let p = pred.values();
    let n = t.nrows();
    let d = t.ncols();
    let mut mean_t = vec![0.0; d];
    let mut mean_p = vec![0.0; d];
    for k in 0..n {
        for j in 0..d {
            mean_t[j] += t[(k, j)];
            mean_p[j] += p[(k, j)];
        }
    }
    for j in 0..d {
        mean_t[j] /= n as f64;
        mean_p[j] /= n as f64;
    }
    let mut num = 0.0;
    let mut den_t = 0.0;
    let mut den_p = 0.0;
    for k in 0..n {
        for j in 0..d {
            let a = t[(k, j)] - mean_t[j];
            let b = p[(k, j)] - mean_p[j];
            num += a * b;
            den_t += a * a;
            den_p += b * b;
        }
    }
    if den_t == 0.0 || den_p == 0.0 {
        return Err(Error::ZeroDenominator { context: "pearson" });
    }
    let r = num / (den_t.sqrt() * den_p.sqrt());
    Ok(r.clamp(-1.0, 1.0))
}

/// Which model produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Esn,
    FeatEsn,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::Esn => write!(f, "esn"),
            Variant::FeatEsn => write!(f, "feat_esn"),
        }
    }
}

/// One Monte Carlo trial outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub variant: Variant,
    pub block_size: usize,
    pub trial: usize,
    pub seed: RngSeed,
    pub horizon: usize,
    /// Closed-loop NRMSE over the horizon; +inf when the rollout diverged.
    pub nrmse: f64,
    /// Pearson correlation; 0.0 when undefined (constant or non-finite
    /// forecast).
    pub pearson: f64,
}

/// Order-statistic summary of one metric across trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub median: f64,
    pub iqr: f64,
    pub mean: f64,
    pub std: f64,
}

/// Aggregated results for one (variant, block size) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub variant: Variant,
    pub block_size: usize,
    pub n_trials: usize,
    pub nrmse: StatSummary,
    pub pearson: StatSummary,
}

/// Linear-interpolation quantile on a sorted slice (the common "type 7" rule:
/// position q (n-1), interpolated between neighbors).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    assert!((0.0..=1.0).contains(&q));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn summarize(values: &[f64]) -> StatSummary {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = quantile_sorted(&sorted, 0.5);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        var.sqrt()
    };
    StatSummary {
        median,
        iqr,
        mean,
        std,
    }
}

/// Group results by (variant, block size) and summarize each metric. Groups
/// are returned in a fixed order (variant first, then block size), so the
/// output is deterministic regardless of input order.
pub fn aggregate(results: &[TrialResult]) -> Vec<GroupSummary> {
    let mut keys: Vec<(Variant, usize)> = results
        .iter()
        .map(|r| (r.variant, r.block_size))
        .collect();
    keys.sort();
    keys.dedup();
    keys.iter()
        .map(|&(variant, block_size)| {
            let group: Vec<&TrialResult> = results
                .iter()
                .filter(|r| r.variant == variant && r.block_size == block_size)
                .collect();
            let nrmse_vals: Vec<f64> = group.iter().map(|r| r.nrmse).collect();
            let pearson_vals: Vec<f64> = group.iter().map(|r| r.pearson).collect();
            GroupSummary {
                variant,
                block_size,
                n_trials: group.len(),
                nrmse: summarize(&nrmse_vals),
                pearson: summarize(&pearson_vals),
            }
        })
        .collect()
}

/// Median of a slice without assuming it is sorted.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&sorted, 0.5)
}
