//! Classic leaky-integrator echo state network.

use crate::error::{Error, Result};
use crate::linalg::{
    erdos_renyi, mat_vec_add, normalize_spectral, ridge_solve, spectral_radius, uniform_open,
    SparseMatrix,
};
use crate::rng::RngSeed;
use crate::series::{TimeSeries, TimeUnit};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// How many fresh graphs to draw when a sparse reservoir comes out with zero
/// spectral radius (likely at small sizes and low connection probability).
pub(crate) const GRAPH_REDRAW_LIMIT: usize = 64;

/// Smallest spectral radius accepted before rescaling; anything below is
/// treated as numerically zero and redrawn.
pub(crate) const MIN_RAW_RADIUS: f64 = 1e-9;

/// Draw a sparse reservoir and rescale it to spectral radius `rho`.
///
/// Sub-seeds `base.derive(0), base.derive(1), ...` are tried in order until a
/// draw has nonzero spectral radius. At the sizes used in experiments the
/// first draw almost always works; tiny reservoirs may need a few redraws
/// because an Erdos-Renyi graph with b*b*p << 1 is usually empty or
/// nilpotent. If every attempt fails the last raw draw is returned unscaled
/// (spectral radius zero) with a warning, so degenerate configurations such
/// as a single-neuron reservoir still construct.
pub(crate) fn build_reservoir(n: usize, p: f64, rho: f64, base: RngSeed) -> Result<SparseMatrix> {
    let mut last = None;
    for attempt in 0..GRAPH_REDRAW_LIMIT {
        let w = erdos_renyi(n, p, base.derive(attempt as u64))?;
        let est = spectral_radius(&w)?;
        if est.radius > MIN_RAW_RADIUS {
            return normalize_spectral(&w, rho);
        }
        last = Some(w);
    }
    log::warn!(
        "reservoir graph stayed at zero spectral radius after {GRAPH_REDRAW_LIMIT} draws \
         (n = {n}, p = {p}); using the unscaled draw"
    );
    Ok(last.expect("redraw loop runs at least once"))
}

/// Hyperparameters for [`EsnModel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsnHyperparams {
    /// Reservoir size.
    pub n: usize,
    /// Leak rate in (0, 1].
    pub alpha: f64,
    /// Ridge regularization.
    pub beta: f64,
    /// Reservoir connection probability.
    pub p: f64,
    /// Target spectral radius.
    pub rho: f64,
    /// Scale applied to the input weights.
    pub input_scale: f64,
    pub seed: RngSeed,
}

impl Default for EsnHyperparams {
    fn default() -> Self {
        EsnHyperparams {
            n: 100,
            alpha: 0.3,
            beta: 1e-6,
            p: 0.01,
            rho: 0.9,
            input_scale: 1.0,
            seed: RngSeed::new(0),
        }
    }
}

impl EsnHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter {
                name: "n",
                reason: "reservoir size must be at least 1".into(),
            });
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: format!("leak rate must lie in (0, 1], got {}", self.alpha),
            });
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "beta",
                reason: format!("regularization must be positive and finite, got {}", self.beta),
            });
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::InvalidParameter {
                name: "p",
                reason: format!("connection probability must lie in (0, 1), got {}", self.p),
            });
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "rho",
                reason: format!("spectral radius must be positive and finite, got {}", self.rho),
            });
        }
        if self.rho >= 1.0 {
            log::warn!(
                "spectral radius {} >= 1: the echo state property is not guaranteed",
                self.rho
            );
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "input_scale",
                reason: format!(
                    "input scale must be positive and finite, got {}",
                    self.input_scale
                ),
            });
        }
        Ok(())
    }
}

/// Echo state network with tanh activation and a linear ridge readout.
///
/// State update: `r <- (1 - alpha) r + alpha tanh(W r + W_in u + d)`, output
/// `y = W_out r`. The reservoir `W` is a sparse random graph rescaled to the
/// requested spectral radius, `W_in` and the bias `d` are dense uniform
/// (-0.5, 0.5) draws (the input weights additionally scaled by
/// `input_scale`). All randomness derives from the seed in the
/// hyperparameters: stream 0 for `W_in` (row-major), stream 1 for the
/// reservoir graph, stream 2 for the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsnModel {
    input_dim: usize,
    output_dim: usize,
    w_in: DMatrix<f64>,
    w: SparseMatrix,
    bias: Vec<f64>,
    state: Vec<f64>,
    w_out: Option<DMatrix<f64>>,
    train_nrmse: Option<f64>,
    sample_step: Option<(f64, TimeUnit)>,
    hyper: EsnHyperparams,
}

impl EsnModel {
    pub fn new(input_dim: usize, output_dim: usize, hyper: EsnHyperparams) -> Result<Self> {
        hyper.validate()?;
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidParameter {
                name: "dimensions",
                reason: "input and output dimensions must be at least 1".into(),
            });
        }
        let n = hyper.n;
        let mut w_in = DMatrix::zeros(n, input_dim);
        {
            let mut rng = hyper.seed.derive(0).rng();
            for i in 0..n {
                for j in 0..input_dim {
                    w_in[(i, j)] = hyper.input_scale * uniform_open(&mut rng, -0.5, 0.5);
                }
            }
        }
        let w = build_reservoir(n, hyper.p, hyper.rho, hyper.seed.derive(1))?;
        let bias = {
            let mut rng = hyper.seed.derive(2).rng();
            (0..n).map(|_| uniform_open(&mut rng, -0.5, 0.5)).collect()
        };
        Ok(EsnModel {
            input_dim,
            output_dim,
            w_in,
            w,
            bias,
            state: vec![0.0; n],
            w_out: None,
            train_nrmse: None,
            sample_step: None,
            hyper,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn state_dim(&self) -> usize {
        self.hyper.n
    }

    pub fn hyperparams(&self) -> &EsnHyperparams {
        &self.hyper
    }

    pub fn reservoir(&self) -> &SparseMatrix {
        &self.w
    }

    pub fn input_weights(&self) -> &DMatrix<f64> {
        &self.w_in
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn set_state(&mut self, state: &[f64]) -> Result<()> {
        if state.len() != self.state.len() {
            return Err(Error::ShapeMismatch {
                context: "reservoir state",
                expected: format!("{}", self.state.len()),
                actual: format!("{}", state.len()),
            });
        }
        self.state.copy_from_slice(state);
        Ok(())
    }

    pub fn reset_state(&mut self) {
        self.state.fill(0.0);
    }

    pub fn readout_weights(&self) -> Option<&DMatrix<f64>> {
        self.w_out.as_ref()
    }

    pub fn is_trained(&self) -> bool {
        self.w_out.is_some()
    }

    /// One-step training NRMSE recorded by the last `train` call.
    pub fn train_nrmse(&self) -> Option<f64> {
        self.train_nrmse
    }

    /// Advance the reservoir by one input sample and return the new state.
    ///
    /// Accumulation order is fixed: reservoir recurrence first, then input
    /// weights (column by column), then bias, then the leaky tanh blend.
    pub fn step(&mut self, input: &[f64]) -> Result<&[f64]> {
        if input.len() != self.input_dim {
            return Err(Error::ShapeMismatch {
                context: "esn input",
                expected: format!("{}", self.input_dim),
                actual: format!("{}", input.len()),
            });
        }
        if !input.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "esn input" });
        }
        let n = self.state.len();
        let mut pre = vec![0.0; n];
        self.w.mul_vec(&self.state, &mut pre);
        mat_vec_add(&self.w_in, input, &mut pre);
        let alpha = self.hyper.alpha;
        for i in 0..n {
            pre[i] += self.bias[i];
            self.state[i] = (1.0 - alpha) * self.state[i] + alpha * pre[i].tanh();
        }
        Ok(&self.state)
    }

    /// Current readout `W_out r`.
    pub fn readout(&self) -> Result<Vec<f64>> {
        let w_out = self.w_out.as_ref().ok_or(Error::NotTrained)?;
        let mut y = vec![0.0; self.output_dim];
        crate::linalg::mat_vec(w_out, &self.state, &mut y);
        Ok(y)
    }

    /// Teacher-forced training.
    ///
    /// Runs the reservoir over `inputs` from a zero state, collects the state
    /// reached after each input from sample `washout` onward, pairs it with
    /// the corresponding row of `targets`, and solves the ridge system for
    /// `W_out`. Returns the one-step NRMSE on the collected training pairs.
    pub fn train(
        &mut self,
        inputs: &TimeSeries,
        targets: &TimeSeries,
        washout: usize,
    ) -> Result<f64> {
        let (r, y) = self.collect_states(inputs, targets, washout)?;
        let w_out = ridge_solve(&y, &r, self.hyper.beta)?;
        let err = training_nrmse(&w_out, &r, &y);
        self.w_out = Some(w_out);
        self.train_nrmse = Some(err);
        self.sample_step = Some((inputs.dt(), inputs.unit()));
        Ok(err)
    }

    fn collect_states(
        &mut self,
        inputs: &TimeSeries,
        targets: &TimeSeries,
        washout: usize,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        check_training_shapes(
            inputs,
            targets,
            washout,
            self.input_dim,
            self.output_dim,
        )?;
        let n = self.state.len();
        let total = inputs.len();
        let kept = total - washout;
        let mut r = DMatrix::zeros(n, kept);
        let mut y = DMatrix::zeros(self.output_dim, kept);
        let mut u = vec![0.0; self.input_dim];
        self.reset_state();
        for k in 0..total {
            inputs.copy_row_into(k, &mut u);
            self.step(&u)?;
            if k >= washout {
                let col = k - washout;
                for i in 0..n {
                    r[(i, col)] = self.state[i];
                }
                for j in 0..self.output_dim {
                    y[(j, col)] = targets.values()[(k, j)];
                }
            }
        }
        Ok((r, y))
    }

    /// Closed-loop forecast: absorb `u0`, then emit `steps` readouts, feeding
    /// each back as the next input. Requires `output_dim == input_dim`.
    pub fn predict(&mut self, steps: usize, u0: &[f64]) -> Result<TimeSeries> {
        if self.output_dim != self.input_dim {
            return Err(Error::ShapeMismatch {
                context: "closed-loop feedback",
                expected: format!("output dim {}", self.input_dim),
                actual: format!("{}", self.output_dim),
            });
        }
        if self.w_out.is_none() {
            return Err(Error::NotTrained);
        }
        self.step(u0)?;
        self.free_run(steps)
    }

    /// Emit `steps` readouts starting from the current state, feeding each
    /// back through the reservoir. The first emitted sample is the readout of
    /// the state as it stands, so a model that has just absorbed sample `t`
    /// emits estimates of samples `t+1, t+2, ...`.
    pub fn free_run(&mut self, steps: usize) -> Result<TimeSeries> {
        if self.output_dim != self.input_dim {
            return Err(Error::ShapeMismatch {
                context: "closed-loop feedback",
                expected: format!("output dim {}", self.input_dim),
                actual: format!("{}", self.output_dim),
            });
        }
        let (dt, unit) = self.sample_step.unwrap_or((1.0, TimeUnit::Seconds));
        let mut values = DMatrix::zeros(steps, self.output_dim);
        for k in 0..steps {
            let y = self.readout()?;
            for j in 0..self.output_dim {
                values[(k, j)] = y[j];
            }
            if !y.iter().all(|v| v.is_finite()) {
                // stop feeding back garbage; report what was produced
                for kk in k + 1..steps {
                    for j in 0..self.output_dim {
                        values[(kk, j)] = f64::NAN;
                    }
                }
                return TimeSeries::new(dt, unit, values);
            }
            self.step(&y)?;
        }
        TimeSeries::new(dt, unit, values)
    }

    /// Closed-loop forecast through a delay-embedding adapter. `window` is
    /// the most recent embedded input the model absorbed (newest entry
    /// first); each scalar readout is emitted and shifted into the window for
    /// the next step. Requires `output_dim == 1`.
    pub fn free_run_embedded(&mut self, window: &[f64], steps: usize) -> Result<TimeSeries> {
        free_run_embedded_impl(
            window,
            steps,
            self.input_dim,
            self.output_dim,
            self.sample_step,
            |m: &mut Self| m.readout(),
            |m: &mut Self, u: &[f64]| m.step(u).map(|_| ()),
            self,
        )
    }
}

pub(crate) fn check_training_shapes(
    inputs: &TimeSeries,
    targets: &TimeSeries,
    washout: usize,
    input_dim: usize,
    output_dim: usize,
) -> Result<()> {
    if inputs.dim() != input_dim {
        return Err(Error::ShapeMismatch {
            context: "training inputs",
            expected: format!("{input_dim} channels"),
            actual: format!("{} channels", inputs.dim()),
        });
    }
    if targets.dim() != output_dim {
        return Err(Error::ShapeMismatch {
            context: "training targets",
            expected: format!("{output_dim} channels"),
            actual: format!("{} channels", targets.dim()),
        });
    }
    if inputs.len() != targets.len() {
        return Err(Error::ShapeMismatch {
            context: "training lengths",
            expected: format!("{}", inputs.len()),
            actual: format!("{}", targets.len()),
        });
    }
    if inputs.len() <= washout {
        return Err(Error::SeriesTooShort {
            needed: washout + 1,
            actual: inputs.len(),
        });
    }
    Ok(())
}

/// NRMSE of `w_out * r` against `y`, defined as 0 when both numerator and
/// denominator vanish (zero targets fit exactly).
pub(crate) fn training_nrmse(w_out: &DMatrix<f64>, r: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    // mul_nt(A, B) = A B^T, so this is W_out R: one prediction per column
    let pred = crate::linalg::mul_nt(w_out, &r.transpose());
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..y.ncols() {
        for i in 0..y.nrows() {
            let d = y[(i, j)] - pred[(i, j)];
            num += d * d;
            den += y[(i, j)] * y[(i, j)];
        }
    }
    if den == 0.0 {
        if num == 0.0 {
            return 0.0;
        }
        return f64::INFINITY;
    }
    (num / den).sqrt()
}

/// Shared closed-loop embedded rollout. Kept generic over the two model types
/// through closures so the window bookkeeping is written once.
#[allow(clippy::too_many_arguments)]
pub(crate) fn free_run_embedded_impl<M>(
    window: &[f64],
    steps: usize,
    input_dim: usize,
    output_dim: usize,
    sample_step: Option<(f64, TimeUnit)>,
    mut readout: impl FnMut(&mut M) -> Result<Vec<f64>>,
    mut step: impl FnMut(&mut M, &[f64]) -> Result<()>,
    model: &mut M,
) -> Result<TimeSeries> {
    if output_dim != 1 {
        return Err(Error::ShapeMismatch {
            context: "embedded feedback output",
            expected: "1 channel".into(),
            actual: format!("{output_dim}"),
        });
    }
    if window.len() != input_dim {
        return Err(Error::ShapeMismatch {
            context: "embedded feedback window",
            expected: format!("{input_dim}"),
            actual: format!("{}", window.len()),
        });
    }
    let (dt, unit) = sample_step.unwrap_or((1.0, TimeUnit::Seconds));
    let mut values = DMatrix::zeros(steps, 1);
    let mut w = window.to_vec();
    for k in 0..steps {
        let y = readout(model)?[0];
        values[(k, 0)] = y;
        if !y.is_finite() {
            for kk in k + 1..steps {
                values[(kk, 0)] = f64::NAN;
            }
            return TimeSeries::new(dt, unit, values);
        }
        w = crate::embed::shift_window(&w, y);
        step(model, &w)?;
    }
    TimeSeries::new(dt, unit, values)
}
