//! Feature-based echo state networks for time series prediction.
//!
//! This crate implements two reservoir computing models and the machinery to
//! compare them on chaotic benchmarks and hourly traffic volumes:
//!
//! * [`EsnModel`]: a classic leaky echo state network. A sparse random
//!   reservoir with tanh activation is driven by the input; only the linear
//!   readout is trained, by ridge regression.
//! * [`FeatEsnModel`]: a feature-based variant. A binary feature matrix
//!   assigns each sub-reservoir a subset of the input channels, the combined
//!   reservoir is block diagonal and *linear*, and the nonlinearity moves
//!   into the readout basis `[1, r, psi(r)]`. Because each block only ever
//!   sees its own feature, the trained readout decomposes into per-feature
//!   contributions that can be ranked and pruned.
//!
//! Data enters as a [`TimeSeries`] (uniform sampling, optional wall-clock
//! anchor). Generators for the Lorenz and Rossler systems and a synthetic
//! hourly traffic profile live in [`dynamics`] and [`io`]; scalar series can
//! be lifted into delay coordinates with [`embed`]. The [`harness`] module
//! ties everything together: an [`ExperimentManifest`] describes a full
//! Monte Carlo comparison, [`run_ablation`] executes it (in parallel, with
//! per-trial fault isolation), and the resulting [`ExperimentReport`]
//! serializes to JSON/CSV or renders as a text table.
//!
//! Reproducibility is a design constraint throughout: every random draw
//! derives from a named stream of a master [`RngSeed`], floating point
//! accumulation orders are fixed, and rerunning any experiment with the same
//! manifest produces byte-identical artifacts, independent of thread count.
//!
//! ```
//! use featesn::{ExperimentManifest, RngSeed, run_ablation};
//!
//! let manifest = ExperimentManifest {
//!     train_len: Some(200),
//!     test_len: Some(20),
//!     horizon: Some(10),
//!     trials: 2,
//!     block_sizes: vec![2],
//!     seed: RngSeed::new(1),
//!     ..ExperimentManifest::lorenz()
//! };
//! let report = run_ablation(&manifest).unwrap();
//! assert_eq!(report.summary.len(), 2); // both variants at b = 2
//! ```

pub mod dynamics;
pub mod embed;
pub mod error;
pub mod esn;
pub mod feat;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod series;

pub use error::{Error, Result};
pub use esn::{EsnHyperparams, EsnModel};
pub use feat::{
    FeatEsnHyperparams, FeatEsnModel, FeatureContribution, FeatureMatrix, ReadoutKind,
};
pub use harness::{
    load_bundle, predict_bundle, prepare_data, render_summary_table, run_ablation, save_bundle,
    train_bundle, write_report_files, ExperimentKind, ExperimentManifest, ExperimentReport,
    FeatureSpec, ModelBundle, ModelDoc, TrialRecord,
};
pub use metrics::{aggregate, nrmse, pearson, GroupSummary, TrialResult, Variant};
pub use rng::RngSeed;
pub use series::{TimeSeries, TimeUnit};
