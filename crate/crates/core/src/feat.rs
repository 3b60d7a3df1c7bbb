//! Feature-based ESN: parallel linear sub-reservoirs with a nonlinear
//! readout.
//!
//! Each row of a binary feature matrix selects a subset of input channels;
//! the selected channels are summed and fed into a private copy of one small
//! reservoir. The reservoir bank is linear (no activation), so the only
//! nonlinearity is in the readout, which sees `[1, r, psi(r)]`. Because
//! sub-reservoirs do not interact, the trained readout weights split into
//! per-feature blocks whose Frobenius norms measure how much each feature
//! contributes to the forecast; low-contribution sub-reservoirs can be pruned
//! and the readout retrained on the survivors.

use crate::error::{Error, Result};
use crate::esn::{
    build_reservoir, check_training_shapes, free_run_embedded_impl, training_nrmse,
};
use crate::linalg::{kronecker, mat_vec, mat_vec_add, ridge_solve, uniform_open, SparseMatrix};
use crate::rng::RngSeed;
use crate::series::{TimeSeries, TimeUnit};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Nonlinear half of the readout basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutKind {
    /// psi(r) = r^2, elementwise.
    Square,
    /// psi(r) = tanh(r), elementwise.
    Tanh,
}

impl ReadoutKind {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ReadoutKind::Square => x * x,
            ReadoutKind::Tanh => x.tanh(),
        }
    }
}

impl std::fmt::Display for ReadoutKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReadoutKind::Square => write!(f, "square"),
            ReadoutKind::Tanh => write!(f, "tanh"),
        }
    }
}

/// Binary feature selection matrix: one row per feature, one column per input
/// channel, entries in {0, 1}. Row `i` defines the channel subset feeding
/// sub-reservoir `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    matrix: DMatrix<f64>,
    labels: Vec<Vec<usize>>,
}

/// Enumerate k-subsets of {0..m-1} in lexicographic order.
fn combinations(m: usize, k: usize, out: &mut Vec<Vec<usize>>) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        // advance the rightmost index that can still move
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + m - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

impl FeatureMatrix {
    fn from_labels(m: usize, labels: Vec<Vec<usize>>) -> Self {
        let n_f = labels.len();
        let mut matrix = DMatrix::zeros(n_f, m);
        for (i, subset) in labels.iter().enumerate() {
            for &j in subset {
                matrix[(i, j)] = 1.0;
            }
        }
        FeatureMatrix { matrix, labels }
    }

    /// Every non-empty subset of the `m` input channels, ordered by subset
    /// size and lexicographically within each size. `2^m - 1` features, so
    /// `m` is capped at 20.
    pub fn full(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter {
                name: "m",
                reason: "need at least one input channel".into(),
            });
        }
        if m > 20 {
            return Err(Error::InvalidParameter {
                name: "m",
                reason: format!("full subset enumeration capped at m = 20, got {m}"),
            });
        }
        let mut labels = Vec::with_capacity((1usize << m) - 1);
        for k in 1..=m {
            combinations(m, k, &mut labels);
        }
        Ok(Self::from_labels(m, labels))
    }

    /// Prefix features: row `i` selects channels `0..=i`. With a delay
    /// embedding as input this gives feature `i` access to the `i+1` most
    /// recent samples. `m` features.
    pub fn prefix(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter {
                name: "m",
                reason: "need at least one input channel".into(),
            });
        }
        let labels = (0..m).map(|i| (0..=i).collect()).collect();
        Ok(Self::from_labels(m, labels))
    }

    /// Explicit subsets. Each subset must be non-empty, sorted, duplicate
    /// free, and within range; the list itself must not repeat a subset.
    pub fn from_subsets(m: usize, subsets: &[Vec<usize>]) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter {
                name: "m",
                reason: "need at least one input channel".into(),
            });
        }
        if subsets.is_empty() {
            return Err(Error::InvalidParameter {
                name: "subsets",
                reason: "need at least one feature".into(),
            });
        }
        for subset in subsets {
            if subset.is_empty() {
                return Err(Error::InvalidParameter {
                    name: "subsets",
                    reason: "empty feature subset".into(),
                });
            }
            for w in subset.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::InvalidParameter {
                        name: "subsets",
                        reason: format!("subset {subset:?} is not strictly increasing"),
                    });
                }
            }
            if *subset.last().unwrap() >= m {
                return Err(Error::InvalidParameter {
                    name: "subsets",
                    reason: format!("subset {subset:?} references channel >= {m}"),
                });
            }
        }
        let mut sorted: Vec<&Vec<usize>> = subsets.iter().collect();
        sorted.sort();
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                return Err(Error::InvalidParameter {
                    name: "subsets",
                    reason: format!("duplicate feature subset {:?}", w[0]),
                });
            }
        }
        Ok(Self::from_labels(m, subsets.to_vec()))
    }

    /// Number of features (rows).
    pub fn n_features(&self) -> usize {
        self.labels.len()
    }

    /// Number of input channels (columns).
    pub fn input_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// 0-based channel subset for feature `i`.
    pub fn label(&self, i: usize) -> &[usize] {
        &self.labels[i]
    }

    pub fn labels(&self) -> &[Vec<usize>] {
        &self.labels
    }

    /// Human-readable name for feature `i`, e.g. "u1+u3" (channels are
    /// displayed 1-based).
    pub fn label_string(&self, i: usize) -> String {
        self.labels[i]
            .iter()
            .map(|j| format!("u{}", j + 1))
            .collect::<Vec<_>>()
            .join("+")
    }

    pub fn contains(&self, feature: usize, channel: usize) -> bool {
        self.matrix[(feature, channel)] != 0.0
    }
}

/// Hyperparameters for [`FeatEsnModel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatEsnHyperparams {
    /// Sub-reservoir size b; total state dimension is `n_features * b`.
    pub block_size: usize,
    /// Leak rate in (0, 1].
    pub alpha: f64,
    /// Ridge regularization.
    pub beta: f64,
    /// Connection probability of the shared sub-reservoir graph.
    pub p: f64,
    /// Target spectral radius of the sub-reservoir (and hence of the full
    /// block-diagonal reservoir).
    pub rho: f64,
    /// Readout nonlinearity.
    pub readout: ReadoutKind,
    /// Draw one input weight vector shared by all sub-reservoirs (the
    /// Kronecker construction). When false each feature gets its own draw.
    pub shared_block: bool,
    pub seed: RngSeed,
}

impl Default for FeatEsnHyperparams {
    fn default() -> Self {
        FeatEsnHyperparams {
            block_size: 5,
            alpha: 0.3,
            beta: 1e-6,
            p: 0.01,
            rho: 0.9,
            readout: ReadoutKind::Square,
            shared_block: true,
            seed: RngSeed::new(0),
        }
    }
}

impl FeatEsnHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 {
            return Err(Error::InvalidParameter {
                name: "block_size",
                reason: "sub-reservoir size must be at least 1".into(),
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
                "spectral radius {} >= 1: linear sub-reservoirs will not be contractive",
                self.rho
            );
        }
        Ok(())
    }
}

/// Per-feature readout weight norms. `linear` covers the columns acting on
/// the feature's raw state, `nonlinear` the columns acting on psi of that
/// state; both are Frobenius norms across all output channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureContribution {
    pub feature: usize,
    pub label: Vec<usize>,
    pub linear: f64,
    pub nonlinear: f64,
}

impl FeatureContribution {
    /// Combined norm of both segments.
    pub fn total(&self) -> f64 {
        (self.linear * self.linear + self.nonlinear * self.nonlinear).sqrt()
    }
}

/// Feature-based ESN.
///
/// State layout: feature `i` owns the contiguous slice `[i b, (i+1) b)`. The
/// full reservoir is block diagonal (`n_features` copies of one b x b
/// graph), the input map stacks one scaled weight vector per feature row, and
/// the update is linear:
/// `r <- (1 - alpha) r + alpha (W r + W_in u + d)`.
/// The readout acts on `[1, r, psi(r)]`.
///
/// Randomness: stream 0 of the seed draws the input block vector(s), stream 1
/// the sub-reservoir graph, stream 2 the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatEsnModel {
    features: FeatureMatrix,
    output_dim: usize,
    w_in: DMatrix<f64>,
    /// One sub-reservoir block.
    w_r: SparseMatrix,
    /// Block-diagonal replication of `w_r`, the matrix actually applied.
    w: SparseMatrix,
    bias: Vec<f64>,
    state: Vec<f64>,
    w_out: Option<DMatrix<f64>>,
    train_nrmse: Option<f64>,
    sample_step: Option<(f64, TimeUnit)>,
    hyper: FeatEsnHyperparams,
}

impl FeatEsnModel {
    pub fn new(features: FeatureMatrix, output_dim: usize, hyper: FeatEsnHyperparams) -> Result<Self> {
        hyper.validate()?;
        if output_dim == 0 {
            return Err(Error::InvalidParameter {
                name: "output_dim",
                reason: "output dimension must be at least 1".into(),
            });
        }
        let n_f = features.n_features();
        let b = hyper.block_size;
        let m = features.input_dim();
        let w_in = {
            let mut rng = hyper.seed.derive(0).rng();
            if hyper.shared_block {
                let w_b = DMatrix::from_fn(b, 1, |_, _| uniform_open(&mut rng, -0.5, 0.5));
                kronecker(features.matrix(), &w_b)
            } else {
                let mut w_in = DMatrix::zeros(n_f * b, m);
                for i in 0..n_f {
                    let block: Vec<f64> =
                        (0..b).map(|_| uniform_open(&mut rng, -0.5, 0.5)).collect();
                    for (k, &v) in block.iter().enumerate() {
                        for j in 0..m {
                            if features.contains(i, j) {
                                w_in[(i * b + k, j)] = v;
                            }
                        }
                    }
                }
                w_in
            }
        };
        let w_r = build_reservoir(b, hyper.p, hyper.rho, hyper.seed.derive(1))?;
        let bias = {
            let mut rng = hyper.seed.derive(2).rng();
            (0..n_f * b)
                .map(|_| uniform_open(&mut rng, -0.5, 0.5))
                .collect()
        };
        Self::assemble(features, output_dim, w_in, w_r, bias, hyper)
    }

    /// Build a model from explicit weight components. Shapes are validated;
    /// the block-diagonal reservoir is assembled from `w_r`. Intended for
    /// tests and controlled experiments that need handcrafted weights.
    pub fn from_parts(
        features: FeatureMatrix,
        output_dim: usize,
        w_in: DMatrix<f64>,
        w_r: SparseMatrix,
        bias: Vec<f64>,
        hyper: FeatEsnHyperparams,
    ) -> Result<Self> {
        hyper.validate()?;
        if output_dim == 0 {
            return Err(Error::InvalidParameter {
                name: "output_dim",
                reason: "output dimension must be at least 1".into(),
            });
        }
        let n = features.n_features() * hyper.block_size;
        if w_r.rows() != hyper.block_size || w_r.cols() != hyper.block_size {
            return Err(Error::ShapeMismatch {
                context: "sub-reservoir block",
                expected: format!("{0}x{0}", hyper.block_size),
                actual: format!("{}x{}", w_r.rows(), w_r.cols()),
            });
        }
        if w_in.nrows() != n || w_in.ncols() != features.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "input weights",
                expected: format!("{n}x{}", features.input_dim()),
                actual: format!("{}x{}", w_in.nrows(), w_in.ncols()),
            });
        }
        if bias.len() != n {
            return Err(Error::ShapeMismatch {
                context: "bias",
                expected: format!("{n}"),
                actual: format!("{}", bias.len()),
            });
        }
        Self::assemble(features, output_dim, w_in, w_r, bias, hyper)
    }

    fn assemble(
        features: FeatureMatrix,
        output_dim: usize,
        w_in: DMatrix<f64>,
        w_r: SparseMatrix,
        bias: Vec<f64>,
        hyper: FeatEsnHyperparams,
    ) -> Result<Self> {
        let n_f = features.n_features();
        let n = n_f * hyper.block_size;
        let w = w_r.block_diag(n_f)?;
        Ok(FeatEsnModel {
            features,
            output_dim,
            w_in,
            w_r,
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
        self.features.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn n_features(&self) -> usize {
        self.features.n_features()
    }

    pub fn block_size(&self) -> usize {
        self.hyper.block_size
    }

    /// Total state dimension `n_features * block_size`.
    pub fn state_dim(&self) -> usize {
        self.state.len()
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn hyperparams(&self) -> &FeatEsnHyperparams {
        &self.hyper
    }

    /// The single b x b sub-reservoir block.
    pub fn block_reservoir(&self) -> &SparseMatrix {
        &self.w_r
    }

    /// The assembled block-diagonal reservoir.
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

    pub fn train_nrmse(&self) -> Option<f64> {
        self.train_nrmse
    }

    /// Advance the linear reservoir bank by one input sample.
    ///
    /// Accumulation order is fixed: block-diagonal recurrence first, then
    /// input weights column by column, then bias, then the leaky blend.
    pub fn step(&mut self, input: &[f64]) -> Result<&[f64]> {
        if input.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "feat-esn input",
                expected: format!("{}", self.input_dim()),
                actual: format!("{}", input.len()),
            });
        }
        if !input.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "feat-esn input",
            });
        }
        let n = self.state.len();
        let mut pre = vec![0.0; n];
        self.w.mul_vec(&self.state, &mut pre);
        mat_vec_add(&self.w_in, input, &mut pre);
        let alpha = self.hyper.alpha;
        for i in 0..n {
            pre[i] += self.bias[i];
            self.state[i] = (1.0 - alpha) * self.state[i] + alpha * pre[i];
        }
        Ok(&self.state)
    }

    /// Readout basis for the current state: `[1, r, psi(r)]`, length
    /// `1 + 2 n`.
    pub fn readout_vector(&self) -> Vec<f64> {
        let n = self.state.len();
        let mut v = Vec::with_capacity(1 + 2 * n);
        v.push(1.0);
        v.extend_from_slice(&self.state);
        for i in 0..n {
            v.push(self.hyper.readout.apply(self.state[i]));
        }
        v
    }

    /// Current forecast `W_out [1, r, psi(r)]`.
    pub fn readout(&self) -> Result<Vec<f64>> {
        let w_out = self.w_out.as_ref().ok_or(Error::NotTrained)?;
        let basis = self.readout_vector();
        let mut y = vec![0.0; self.output_dim];
        mat_vec(w_out, &basis, &mut y);
        Ok(y)
    }

    /// Teacher-forced training; see [`crate::esn::EsnModel::train`] for the
    /// pairing convention. The collected design matrix holds the readout
    /// basis `[1, r, psi(r)]` per kept sample.
    pub fn train(
        &mut self,
        inputs: &TimeSeries,
        targets: &TimeSeries,
        washout: usize,
    ) -> Result<f64> {
        check_training_shapes(inputs, targets, washout, self.input_dim(), self.output_dim)?;
        let n = self.state.len();
        let width = 1 + 2 * n;
        let total = inputs.len();
        let kept = total - washout;
        let mut r = DMatrix::zeros(width, kept);
        let mut y = DMatrix::zeros(self.output_dim, kept);
        let mut u = vec![0.0; self.input_dim()];
        self.reset_state();
        for k in 0..total {
            inputs.copy_row_into(k, &mut u);
            self.step(&u)?;
            if !self.state.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "feat-esn state during training",
                });
            }
            if k >= washout {
                let col = k - washout;
                let basis = self.readout_vector();
                for (i, &v) in basis.iter().enumerate() {
                    r[(i, col)] = v;
                }
                for j in 0..self.output_dim {
                    y[(j, col)] = targets.values()[(k, j)];
                }
            }
        }
        let w_out = ridge_solve(&y, &r, self.hyper.beta)?;
        let err = training_nrmse(&w_out, &r, &y);
        self.w_out = Some(w_out);
        self.train_nrmse = Some(err);
        self.sample_step = Some((inputs.dt(), inputs.unit()));
        Ok(err)
    }

    /// Closed-loop forecast: absorb `u0`, then emit `steps` readouts with
    /// feedback. Requires `output_dim == input_dim`.
    pub fn predict(&mut self, steps: usize, u0: &[f64]) -> Result<TimeSeries> {
        if self.output_dim != self.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "closed-loop feedback",
                expected: format!("output dim {}", self.input_dim()),
                actual: format!("{}", self.output_dim),
            });
        }
        if self.w_out.is_none() {
            return Err(Error::NotTrained);
        }
        self.step(u0)?;
        self.free_run(steps)
    }

    /// Emit `steps` readouts with direct feedback, starting from the current
    /// state (the first sample is the readout of the state as it stands).
    pub fn free_run(&mut self, steps: usize) -> Result<TimeSeries> {
        if self.output_dim != self.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "closed-loop feedback",
                expected: format!("output dim {}", self.input_dim()),
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

    /// Closed-loop forecast through a delay-embedding adapter; see
    /// [`crate::esn::EsnModel::free_run_embedded`].
    pub fn free_run_embedded(&mut self, window: &[f64], steps: usize) -> Result<TimeSeries> {
        let input_dim = self.input_dim();
        free_run_embedded_impl(
            window,
            steps,
            input_dim,
            self.output_dim,
            self.sample_step,
            |m: &mut Self| m.readout(),
            |m: &mut Self, u: &[f64]| m.step(u).map(|_| ()),
            self,
        )
    }

    /// Readout weight norms per feature, in feature order.
    ///
    /// Column 0 of `W_out` (the constant term) belongs to no feature and is
    /// excluded. Columns `[1 + i b, 1 + (i+1) b)` form the linear segment of
    /// feature `i`, columns `[1 + n + i b, 1 + n + (i+1) b)` the nonlinear
    /// segment.
    pub fn feature_contributions(&self) -> Result<Vec<FeatureContribution>> {
        let w_out = self.w_out.as_ref().ok_or(Error::NotTrained)?;
        let n = self.state.len();
        let b = self.hyper.block_size;
        let frob = |cols: std::ops::Range<usize>| -> f64 {
            let mut sum = 0.0;
            for c in cols {
                for row in 0..w_out.nrows() {
                    let v = w_out[(row, c)];
                    sum += v * v;
                }
            }
            sum.sqrt()
        };
        Ok((0..self.features.n_features())
            .map(|i| FeatureContribution {
                feature: i,
                label: self.features.label(i).to_vec(),
                linear: frob(1 + i * b..1 + (i + 1) * b),
                nonlinear: frob(1 + n + i * b..1 + n + (i + 1) * b),
            })
            .collect())
    }

    /// Midpoint of the widest gap between consecutive sorted contribution
    /// norms; a reasonable default cut line between "useful" and "idle"
    /// sub-reservoirs. Returns 0 when there is only one feature.
    pub fn suggest_prune_threshold(&self) -> Result<f64> {
        let mut totals: Vec<f64> = self
            .feature_contributions()?
            .iter()
            .map(|c| c.total())
            .collect();
        totals.sort_by(|a, b| a.total_cmp(b));
        if totals.len() < 2 {
            return Ok(0.0);
        }
        let mut best = (0.0, 0.0);
        for w in totals.windows(2) {
            let gap = w[1] - w[0];
            if gap > best.0 {
                best = (gap, 0.5 * (w[0] + w[1]));
            }
        }
        Ok(best.1)
    }

    /// Drop every feature whose combined contribution norm is below
    /// `threshold` and return the reduced model.
    ///
    /// Without retraining data the surviving columns of `W_out` are kept
    /// as-is (the reduced readout is the truncation of the original); the
    /// stored training error is cleared because it no longer describes the
    /// truncated readout. With `retrain` the readout is refit from scratch on
    /// the given data. Dropping every feature is an error. A threshold of 0
    /// keeps everything and returns an unchanged clone.
    pub fn prune(
        &self,
        threshold: f64,
        retrain: Option<(&TimeSeries, &TimeSeries, usize)>,
    ) -> Result<FeatEsnModel> {
        if !(threshold >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "threshold",
                reason: format!("threshold must be non-negative, got {threshold}"),
            });
        }
        let contributions = self.feature_contributions()?;
        let kept: Vec<usize> = contributions
            .iter()
            .filter(|c| c.total() >= threshold)
            .map(|c| c.feature)
            .collect();
        if kept.is_empty() {
            return Err(Error::EmptyModel);
        }
        if kept.len() == self.features.n_features() {
            let mut clone = self.clone();
            if let Some((inputs, targets, washout)) = retrain {
                clone.train(inputs, targets, washout)?;
            }
            return Ok(clone);
        }
        let b = self.hyper.block_size;
        let n = self.state.len();
        let m = self.features.input_dim();
        let labels: Vec<Vec<usize>> = kept
            .iter()
            .map(|&i| self.features.label(i).to_vec())
            .collect();
        let features = FeatureMatrix::from_subsets(m, &labels)?;
        let n_new = kept.len() * b;
        let mut w_in = DMatrix::zeros(n_new, m);
        let mut bias = Vec::with_capacity(n_new);
        for (new_i, &old_i) in kept.iter().enumerate() {
            for k in 0..b {
                for j in 0..m {
                    w_in[(new_i * b + k, j)] = self.w_in[(old_i * b + k, j)];
                }
                bias.push(self.bias[old_i * b + k]);
            }
        }
        let mut model = Self::assemble(
            features,
            self.output_dim,
            w_in,
            self.w_r.clone(),
            bias,
            self.hyper,
        )?;
        model.sample_step = self.sample_step;
        if let Some((inputs, targets, washout)) = retrain {
            model.train(inputs, targets, washout)?;
        } else if let Some(w_out) = &self.w_out {
            // truncate the readout to the surviving columns
            let mut reduced = DMatrix::zeros(self.output_dim, 1 + 2 * n_new);
            for row in 0..self.output_dim {
                reduced[(row, 0)] = w_out[(row, 0)];
                for (new_i, &old_i) in kept.iter().enumerate() {
                    for k in 0..b {
                        reduced[(row, 1 + new_i * b + k)] = w_out[(row, 1 + old_i * b + k)];
                        reduced[(row, 1 + n_new + new_i * b + k)] =
                            w_out[(row, 1 + n + old_i * b + k)];
                    }
                }
            }
            model.w_out = Some(reduced);
            model.train_nrmse = None;
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spectral_radius;
    use crate::series::uniform_series;

    fn small_hyper(seed: u64) -> FeatEsnHyperparams {
        FeatEsnHyperparams {
            block_size: 4,
            p: 0.3,
            seed: RngSeed::new(seed),
            ..FeatEsnHyperparams::default()
        }
    }

    #[test]
    fn full_feature_matrix_m3() {
        let f = FeatureMatrix::full(3).unwrap();
        assert_eq!(f.n_features(), 7);
        let expected: Vec<Vec<usize>> = vec![
            vec![0],
            vec![1],
            vec![2],
            vec![0, 1],
            vec![0, 2],
            vec![1, 2],
            vec![0, 1, 2],
        ];
        assert_eq!(f.labels(), expected.as_slice());
        // matrix rows mirror the labels
        for (i, subset) in expected.iter().enumerate() {
            for j in 0..3 {
                let want = if subset.contains(&j) { 1.0 } else { 0.0 };
                assert_eq!(f.matrix()[(i, j)], want);
            }
        }
        assert_eq!(f.label_string(3), "u1+u2");
        assert_eq!(f.label_string(6), "u1+u2+u3");
    }

    #[test]
    fn full_feature_matrix_counts() {
        for m in 1..=6 {
            let f = FeatureMatrix::full(m).unwrap();
            assert_eq!(f.n_features(), (1 << m) - 1);
        }
        assert!(FeatureMatrix::full(0).is_err());
        assert!(FeatureMatrix::full(21).is_err());
    }

    #[test]
    fn prefix_feature_matrix() {
        let f = FeatureMatrix::prefix(4).unwrap();
        assert_eq!(f.n_features(), 4);
        for i in 0..4 {
            for j in 0..4 {
                let want = if j <= i { 1.0 } else { 0.0 };
                assert_eq!(f.matrix()[(i, j)], want);
            }
        }
        assert_eq!(f.label_string(0), "u1");
        assert_eq!(f.label_string(2), "u1+u2+u3");
    }

    #[test]
    fn from_subsets_validation() {
        assert!(FeatureMatrix::from_subsets(3, &[vec![0, 2]]).is_ok());
        assert!(FeatureMatrix::from_subsets(3, &[]).is_err());
        assert!(FeatureMatrix::from_subsets(3, &[vec![]]).is_err());
        assert!(FeatureMatrix::from_subsets(3, &[vec![2, 0]]).is_err());
        assert!(FeatureMatrix::from_subsets(3, &[vec![0, 0]]).is_err());
        assert!(FeatureMatrix::from_subsets(3, &[vec![3]]).is_err());
        assert!(FeatureMatrix::from_subsets(3, &[vec![1], vec![1]]).is_err());
    }

    #[test]
    fn kronecker_input_map_zero_support() {
        // rows of W_in must vanish exactly where the feature matrix is zero
        let f = FeatureMatrix::full(3).unwrap();
        let model = FeatEsnModel::new(f, 3, small_hyper(1)).unwrap();
        let b = model.block_size();
        let feats = model.features().clone();
        for i in 0..feats.n_features() {
            for j in 0..3 {
                for k in 0..b {
                    let v = model.input_weights()[(i * b + k, j)];
                    if feats.contains(i, j) {
                        assert!(v != 0.0 && v.abs() < 0.5);
                    } else {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn shared_block_rows_repeat() {
        let f = FeatureMatrix::full(2).unwrap();
        let model = FeatEsnModel::new(f, 2, small_hyper(2)).unwrap();
        let b = model.block_size();
        let w_in = model.input_weights();
        // feature 0 selects channel 0, feature 1 selects channel 1: the
        // nonzero column of each block carries the same shared vector
        for k in 0..b {
            assert_eq!(w_in[(k, 0)], w_in[(b + k, 1)]);
        }
        // and the joint feature repeats it across both columns
        for k in 0..b {
            assert_eq!(w_in[(2 * b + k, 0)], w_in[(k, 0)]);
            assert_eq!(w_in[(2 * b + k, 1)], w_in[(k, 0)]);
        }
    }

    #[test]
    fn per_feature_blocks_differ_when_not_shared() {
        let f = FeatureMatrix::full(2).unwrap();
        let hyper = FeatEsnHyperparams {
            shared_block: false,
            ..small_hyper(3)
        };
        let model = FeatEsnModel::new(f, 2, hyper).unwrap();
        let b = model.block_size();
        let w_in = model.input_weights();
        let first: Vec<f64> = (0..b).map(|k| w_in[(k, 0)]).collect();
        let second: Vec<f64> = (0..b).map(|k| w_in[(b + k, 1)]).collect();
        assert_ne!(first, second);
    }

    #[test]
    fn reservoir_is_exact_block_replication() {
        let f = FeatureMatrix::full(3).unwrap();
        let model = FeatEsnModel::new(f, 3, small_hyper(4)).unwrap();
        let b = model.block_size();
        let w_r = model.block_reservoir();
        let w = model.reservoir();
        assert_eq!(w.rows(), 7 * b);
        let block_trips: Vec<_> = w_r.triplets().collect();
        for blk in 0..7 {
            for &(r, c, v) in &block_trips {
                assert_eq!(w.get(blk * b + r, blk * b + c), v);
            }
        }
        assert_eq!(w.nnz(), 7 * w_r.nnz());
        // spectral radius of the replicated matrix equals the block's
        let est = spectral_radius(w).unwrap();
        assert!((est.radius - 0.9).abs() < 1e-7);
    }

    #[test]
    fn construction_is_deterministic() {
        let f = FeatureMatrix::full(3).unwrap();
        let a = FeatEsnModel::new(f.clone(), 3, small_hyper(5)).unwrap();
        let b = FeatEsnModel::new(f.clone(), 3, small_hyper(5)).unwrap();
        assert_eq!(a, b);
        let c = FeatEsnModel::new(f, 3, small_hyper(6)).unwrap();
        assert_ne!(a.input_weights(), c.input_weights());
    }

    #[test]
    fn step_matches_scalar_oracle() {
        let f = FeatureMatrix::full(2).unwrap();
        let mut model = FeatEsnModel::new(f, 2, small_hyper(7)).unwrap();
        let n = model.state_dim();
        let w_dense = model.reservoir().to_dense();
        let w_in = model.input_weights().clone();
        let bias = model.bias().to_vec();
        let alpha = model.hyperparams().alpha;
        let mut r_oracle = vec![0.0; n];
        for u in [[0.4, -0.6], [1.0, 0.2], [-0.3, 0.8]] {
            model.step(&u).unwrap();
            let mut next = vec![0.0; n];
            for i in 0..n {
                let mut pre = 0.0;
                for j in 0..n {
                    pre += w_dense[(i, j)] * r_oracle[j];
                }
                for (j, uv) in u.iter().enumerate() {
                    pre += w_in[(i, j)] * uv;
                }
                pre += bias[i];
                next[i] = (1.0 - alpha) * r_oracle[i] + alpha * pre;
            }
            r_oracle = next;
            for i in 0..n {
                assert!((model.state()[i] - r_oracle[i]).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn readout_vector_layout() {
        let f = FeatureMatrix::full(1).unwrap();
        let mut model = FeatEsnModel::new(f, 1, small_hyper(8)).unwrap();
        model.step(&[0.7]).unwrap();
        let v = model.readout_vector();
        let n = model.state_dim();
        assert_eq!(v.len(), 1 + 2 * n);
        assert_eq!(v[0], 1.0);
        for i in 0..n {
            assert_eq!(v[1 + i], model.state()[i]);
            assert_eq!(v[1 + n + i], model.state()[i] * model.state()[i]);
        }
    }

    #[test]
    fn tanh_readout_applied() {
        let f = FeatureMatrix::full(1).unwrap();
        let hyper = FeatEsnHyperparams {
            readout: ReadoutKind::Tanh,
            ..small_hyper(9)
        };
        let mut model = FeatEsnModel::new(f, 1, hyper).unwrap();
        model.step(&[0.5]).unwrap();
        let v = model.readout_vector();
        let n = model.state_dim();
        for i in 0..n {
            assert_eq!(v[1 + n + i], model.state()[i].tanh());
        }
    }

    #[test]
    fn train_and_predict_smoke() {
        let f = FeatureMatrix::full(1).unwrap();
        let n = 300;
        let values = nalgebra::DMatrix::from_fn(n, 1, |k, _| (0.2 * k as f64).sin());
        let s = TimeSeries::new(1.0, TimeUnit::Seconds, values).unwrap();
        let inputs = s.slice(0..n - 1).unwrap();
        let targets = s.slice(1..n).unwrap();
        let mut model = FeatEsnModel::new(
            f,
            1,
            FeatEsnHyperparams {
                block_size: 20,
                p: 0.1,
                seed: RngSeed::new(10),
                ..FeatEsnHyperparams::default()
            },
        )
        .unwrap();
        let err = model.train(&inputs, &targets, 20).unwrap();
        assert!(err < 1e-2, "training nrmse {err}");
        let pred = model.predict(10, &[s.values()[(n - 1, 0)]]).unwrap();
        assert_eq!(pred.len(), 10);
        assert!(pred.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn predict_zero_steps_empty() {
        let f = FeatureMatrix::full(1).unwrap();
        let mut model = FeatEsnModel::new(f, 1, small_hyper(11)).unwrap();
        let xs = uniform_series(50, 1, -1.0, 1.0, 1.0, RngSeed::new(1)).unwrap();
        model.train(&xs, &xs, 0).unwrap();
        let out = model.predict(0, &[0.1]).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn untrained_errors() {
        let f = FeatureMatrix::full(1).unwrap();
        let mut model = FeatEsnModel::new(f, 1, small_hyper(12)).unwrap();
        assert!(matches!(model.readout(), Err(Error::NotTrained)));
        assert!(matches!(model.predict(3, &[0.0]), Err(Error::NotTrained)));
        assert!(matches!(
            model.feature_contributions(),
            Err(Error::NotTrained)
        ));
    }

    #[test]
    fn contributions_cover_all_readout_columns_except_bias() {
        let f = FeatureMatrix::full(2).unwrap();
        let mut model = FeatEsnModel::new(f, 2, small_hyper(13)).unwrap();
        let xs = uniform_series(200, 2, -1.0, 1.0, 1.0, RngSeed::new(2)).unwrap();
        let ys = uniform_series(200, 2, -1.0, 1.0, 1.0, RngSeed::new(3)).unwrap();
        model.train(&xs, &ys, 10).unwrap();
        let contributions = model.feature_contributions().unwrap();
        assert_eq!(contributions.len(), 3);
        let w_out = model.readout_weights().unwrap();
        let total_sq: f64 = contributions
            .iter()
            .map(|c| c.linear * c.linear + c.nonlinear * c.nonlinear)
            .sum();
        let mut full_sq = 0.0;
        for c in 1..w_out.ncols() {
            for r in 0..w_out.nrows() {
                full_sq += w_out[(r, c)] * w_out[(r, c)];
            }
        }
        assert!((total_sq - full_sq).abs() <= 1e-12 * full_sq.max(1.0));
    }

    #[test]
    fn prune_zero_threshold_keeps_everything() {
        let f = FeatureMatrix::full(2).unwrap();
        let mut model = FeatEsnModel::new(f, 2, small_hyper(14)).unwrap();
        let xs = uniform_series(150, 2, -1.0, 1.0, 1.0, RngSeed::new(4)).unwrap();
        model.train(&xs, &xs, 5).unwrap();
        let same = model.prune(0.0, None).unwrap();
        assert_eq!(model, same);
    }

    #[test]
    fn prune_infinite_threshold_errors() {
        let f = FeatureMatrix::full(2).unwrap();
        let mut model = FeatEsnModel::new(f, 2, small_hyper(15)).unwrap();
        let xs = uniform_series(150, 2, -1.0, 1.0, 1.0, RngSeed::new(5)).unwrap();
        model.train(&xs, &xs, 5).unwrap();
        assert!(matches!(
            model.prune(f64::INFINITY, None),
            Err(Error::EmptyModel)
        ));
        assert!(model.prune(-1.0, None).is_err());
    }

    #[test]
    fn prune_truncation_preserves_surviving_dynamics() {
        // prune with a threshold that removes at least one feature, then
        // check the reduced model's states equal the surviving slices of the
        // original model's states under the same drive
        let f = FeatureMatrix::full(2).unwrap();
        let mut model = FeatEsnModel::new(f, 2, small_hyper(16)).unwrap();
        let xs = uniform_series(200, 2, -1.0, 1.0, 1.0, RngSeed::new(6)).unwrap();
        let ys = uniform_series(200, 2, -1.0, 1.0, 1.0, RngSeed::new(7)).unwrap();
        model.train(&xs, &ys, 10).unwrap();
        let contributions = model.feature_contributions().unwrap();
        let mut totals: Vec<f64> = contributions.iter().map(|c| c.total()).collect();
        totals.sort_by(|a, b| a.total_cmp(b));
        // cut above the weakest feature
        let threshold = (totals[0] + totals[1]) / 2.0;
        let mut pruned = model.prune(threshold, None).unwrap();
        assert!(pruned.n_features() < model.n_features());
        assert!(pruned.is_trained());
        assert!(pruned.train_nrmse().is_none());
        let kept: Vec<usize> = contributions
            .iter()
            .filter(|c| c.total() >= threshold)
            .map(|c| c.feature)
            .collect();
        let b = model.block_size();
        let mut original = model.clone();
        original.reset_state();
        pruned.reset_state();
        let drive = uniform_series(30, 2, -1.0, 1.0, 1.0, RngSeed::new(8)).unwrap();
        let mut u = vec![0.0; 2];
        for k in 0..drive.len() {
            drive.copy_row_into(k, &mut u);
            original.step(&u).unwrap();
            pruned.step(&u).unwrap();
            for (new_i, &old_i) in kept.iter().enumerate() {
                for j in 0..b {
                    assert_eq!(
                        pruned.state()[new_i * b + j],
                        original.state()[old_i * b + j]
                    );
                }
            }
        }
    }

    #[test]
    fn prune_with_retrain_refits() {
        let f = FeatureMatrix::full(2).unwrap();
        let mut model = FeatEsnModel::new(f, 2, small_hyper(17)).unwrap();
        let xs = uniform_series(200, 2, -1.0, 1.0, 1.0, RngSeed::new(9)).unwrap();
        let ys = uniform_series(200, 2, -1.0, 1.0, 1.0, RngSeed::new(10)).unwrap();
        model.train(&xs, &ys, 10).unwrap();
        let threshold = model.suggest_prune_threshold().unwrap();
        let pruned = model.prune(threshold, Some((&xs, &ys, 10))).unwrap();
        assert!(pruned.is_trained());
        assert!(pruned.train_nrmse().is_some());
    }

    #[test]
    fn serde_roundtrip() {
        let f = FeatureMatrix::full(2).unwrap();
        let mut model = FeatEsnModel::new(f, 2, small_hyper(18)).unwrap();
        let xs = uniform_series(100, 2, -1.0, 1.0, 1.0, RngSeed::new(11)).unwrap();
        model.train(&xs, &xs, 5).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: FeatEsnModel = serde_json::from_str(&json).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn from_parts_validates_shapes() {
        let f = FeatureMatrix::full(2).unwrap();
        let hyper = small_hyper(19);
        let b = hyper.block_size;
        let good = FeatEsnModel::new(f.clone(), 2, hyper).unwrap();
        let rebuilt = FeatEsnModel::from_parts(
            f.clone(),
            2,
            good.input_weights().clone(),
            good.block_reservoir().clone(),
            good.bias().to_vec(),
            hyper,
        )
        .unwrap();
        assert_eq!(good.reservoir(), rebuilt.reservoir());
        let bad_w_r = SparseMatrix::zeros(b + 1, b + 1).unwrap();
        assert!(FeatEsnModel::from_parts(
            f.clone(),
            2,
            good.input_weights().clone(),
            bad_w_r,
            good.bias().to_vec(),
            hyper
        )
        .is_err());
        assert!(FeatEsnModel::from_parts(
            f,
            2,
            good.input_weights().clone(),
            good.block_reservoir().clone(),
            vec![0.0; 3],
            hyper
        )
        .is_err());
    }
}
