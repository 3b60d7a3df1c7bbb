//! Delay-coordinate embedding for scalar series.

use crate::error::{Error, Result};
use crate::series::TimeSeries;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Takens-style embedding: dimension `m`, delay `lag` in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub m: usize,
    #[serde(default = "default_lag")]
    pub lag: usize,
}

fn default_lag() -> usize {
    1
}

impl EmbeddingSpec {
    pub fn new(m: usize) -> Self {
        EmbeddingSpec { m, lag: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidParameter {
                name: "m",
                reason: "embedding dimension must be at least 1".into(),
            });
        }
        if self.lag == 0 {
            return Err(Error::InvalidParameter {
                name: "lag",
                reason: "embedding lag must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// Samples consumed before the first complete window.
    pub fn warmup(&self) -> usize {
        (self.m - 1) * self.lag
    }
}

/// Embed a scalar series into m-dimensional delay vectors, newest entry
/// first: output row k is
/// `[x(t_k), x(t_k - lag), ..., x(t_k - (m-1) lag)]`
/// where `t_k` runs over the samples with a full history available. The
/// result has `N - (m-1) lag` rows and its start time is shifted accordingly.
pub fn delay_embed(series: &TimeSeries, spec: &EmbeddingSpec) -> Result<TimeSeries> {
    spec.validate()?;
    if series.dim() != 1 {
        return Err(Error::ShapeMismatch {
            context: "delay embedding input",
            expected: "1 channel".into(),
            actual: format!("{} channels", series.dim()),
        });
    }
    let warm = spec.warmup();
    if series.len() <= warm {
        return Err(Error::SeriesTooShort {
            needed: warm + 1,
            actual: series.len(),
        });
    }
    let n_out = series.len() - warm;
    let x = series.channel(0);
    let values = DMatrix::from_fn(n_out, spec.m, |k, i| x[k + warm - i * spec.lag]);
    let mut out = TimeSeries::new(series.dt(), series.unit(), values)?;
    out.set_start(series.time_of(warm));
    Ok(out)
}

/// Advance a delay window by one closed-loop step: drop the oldest entry,
/// shift the rest, and place `prediction` at the front.
pub fn shift_window(window: &[f64], prediction: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(window.len());
    out.push(prediction);
    out.extend_from_slice(&window[..window.len() - 1]);
    out
}
