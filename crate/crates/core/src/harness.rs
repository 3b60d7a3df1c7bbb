//! Experiment manifests and the Monte Carlo comparison harness.
//!
//! A manifest describes one experiment: which system supplies the data, how
//! it is split and corrupted, which feature matrix and hyperparameters the
//! models use, how many Monte Carlo trials to run, and where outputs go.
//! [`run_ablation`] executes the full grid (every block size x trial x both
//! model variants), aggregates the scores, and packs everything into an
//! [`ExperimentReport`] that serializes to JSON and renders as a text table
//! or CSV files.
//!
//! Seeding: trial `t` of block size index `bi` uses counter
//! `c = bi * trials + t`, data (noise) seed `master.derive(2c)` and model
//! seed `master.derive(2c + 1)`. Both variants share the trial's seeds, so
//! they see identical noise and comparable draws. No two trials share a
//! stream, and reruns of the same manifest are bit-identical.

use crate::dynamics::{generate_lorenz, generate_rossler, LorenzParams, RosslerParams};
use crate::embed::{delay_embed, EmbeddingSpec};
use crate::error::{Error, Result};
use crate::esn::{EsnHyperparams, EsnModel};
use crate::feat::{
    FeatEsnHyperparams, FeatEsnModel, FeatureContribution, FeatureMatrix, ReadoutKind,
};
use crate::io::{
    generate_synthetic_traffic, load_traffic_csv, read_series_with_meta, SeriesMeta,
    SyntheticTrafficParams,
};
use crate::metrics::{aggregate, GroupSummary, TrialResult, Variant};
use crate::rng::RngSeed;
use crate::series::{add_noise_scaled, split, Normalizer, TimeSeries, TimeUnit};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Data source for an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Lorenz,
    Rossler,
    Traffic,
    /// User-supplied CSV (with metadata sidecar).
    Custom,
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExperimentKind::Lorenz => write!(f, "lorenz"),
            ExperimentKind::Rossler => write!(f, "rossler"),
            ExperimentKind::Traffic => write!(f, "traffic"),
            ExperimentKind::Custom => write!(f, "custom"),
        }
    }
}

/// How to build the feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureSpec {
    /// All non-empty channel subsets.
    Full { m: usize },
    /// Nested prefixes of the delay window.
    Prefix { m: usize },
    /// Explicit subsets (0-based channel indices).
    Subsets { m: usize, subsets: Vec<Vec<usize>> },
}

impl FeatureSpec {
    pub fn build(&self) -> Result<FeatureMatrix> {
        match self {
            FeatureSpec::Full { m } => FeatureMatrix::full(*m),
            FeatureSpec::Prefix { m } => FeatureMatrix::prefix(*m),
            FeatureSpec::Subsets { m, subsets } => FeatureMatrix::from_subsets(*m, subsets),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            FeatureSpec::Full { m } | FeatureSpec::Prefix { m } | FeatureSpec::Subsets { m, .. } => {
                *m
            }
        }
    }
}

fn default_block_sizes() -> Vec<usize> {
    vec![5]
}

fn default_beta() -> f64 {
    1e-6
}

fn default_rho() -> f64 {
    0.9
}

fn default_p() -> f64 {
    0.01
}

fn default_input_scale() -> f64 {
    1.0
}

fn default_trials() -> usize {
    50
}

fn default_seed() -> RngSeed {
    RngSeed::new(42)
}

fn default_true() -> bool {
    true
}

/// Experiment description. Most fields are optional; unset values resolve to
/// per-system defaults through the accessor methods, so a manifest only needs
/// to state what differs from the standard setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub experiment: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Which variant `train`/`predict` operate on; ablation always runs both.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureSpec>,
    /// Delay embedding applied to scalar data before the models see it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingSpec>,
    /// Sub-reservoir sizes to sweep in ablation; `train` uses the first.
    #[serde(default = "default_block_sizes")]
    pub block_sizes: Vec<usize>,
    #[serde(default = "default_p")]
    pub connection_probability: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_len: Option<usize>,
    /// Closed-loop forecast length; defaults to the test length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout: Option<ReadoutKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Input weight scale of the classic ESN baseline.
    #[serde(default = "default_input_scale")]
    pub input_scale: f64,
    #[serde(default)]
    pub washout: usize,
    /// Measurement noise sigma added to training data. Unset: 1% of each
    /// channel's standard deviation for the chaotic systems, none otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_v: Option<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_seed")]
    pub seed: RngSeed,
    #[serde(default = "default_true")]
    pub shared_block: bool,
    /// Standardize each channel (fit on the training split) before the
    /// models see it; forecasts are mapped back to original units. Keeps the
    /// readout solve well conditioned whatever the data's scale.
    #[serde(default = "default_true")]
    pub normalize: bool,
    /// Integration steps discarded before sampling chaotic trajectories.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discard: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<[f64; 3]>,
    /// Use the damped-x Rossler variant.
    #[serde(default)]
    pub damped_x: bool,
    /// Input data file (CSV). Required for `custom`, optional elsewhere
    /// (generated data is used when absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Output directory for commands that write files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Synthetic traffic generator settings (when no data file is given).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traffic: Option<SyntheticTrafficParams>,
    /// Count column to read from a traffic CSV.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traffic_column: Option<String>,
}

impl Default for ExperimentManifest {
    fn default() -> Self {
        Self::lorenz()
    }
}

impl ExperimentManifest {
    fn bare(kind: ExperimentKind) -> Self {
        ExperimentManifest {
            experiment: kind,
            name: None,
            variant: None,
            dt: None,
            features: None,
            embedding: None,
            block_sizes: default_block_sizes(),
            connection_probability: default_p(),
            train_len: None,
            test_len: None,
            horizon: None,
            readout: None,
            alpha: None,
            beta: default_beta(),
            rho: default_rho(),
            input_scale: default_input_scale(),
            washout: 0,
            sigma_v: None,
            trials: default_trials(),
            seed: default_seed(),
            shared_block: true,
            normalize: true,
            discard: None,
            initial: None,
            damped_x: false,
            data: None,
            out: None,
            traffic: None,
            traffic_column: None,
        }
    }

    /// Standard Lorenz comparison: 3 channels, all 7 subsets, b = 5.
    pub fn lorenz() -> Self {
        Self::bare(ExperimentKind::Lorenz)
    }

    /// Standard Rossler comparison.
    pub fn rossler() -> Self {
        Self::bare(ExperimentKind::Rossler)
    }

    /// Standard traffic comparison: delay embedding of 100 hours, prefix
    /// features, b = 10, tanh readout.
    pub fn traffic() -> Self {
        ExperimentManifest {
            block_sizes: vec![10],
            ..Self::bare(ExperimentKind::Traffic)
        }
    }

    pub fn resolved_dt(&self) -> f64 {
        self.dt.unwrap_or(match self.experiment {
            ExperimentKind::Lorenz => 0.02,
            ExperimentKind::Rossler => 0.1,
            ExperimentKind::Traffic | ExperimentKind::Custom => 1.0,
        })
    }

    pub fn time_unit(&self) -> TimeUnit {
        match self.experiment {
            ExperimentKind::Lorenz | ExperimentKind::Rossler => TimeUnit::Seconds,
            ExperimentKind::Traffic => TimeUnit::Hours,
            ExperimentKind::Custom => TimeUnit::Seconds,
        }
    }

    pub fn resolved_train_len(&self) -> usize {
        self.train_len.unwrap_or(match self.experiment {
            ExperimentKind::Lorenz => 5000,
            ExperimentKind::Rossler | ExperimentKind::Traffic => 1000,
            ExperimentKind::Custom => 1000,
        })
    }

    pub fn resolved_test_len(&self) -> usize {
        self.test_len.unwrap_or(match self.experiment {
            ExperimentKind::Lorenz => 500,
            ExperimentKind::Rossler => 300,
            ExperimentKind::Traffic => 70,
            ExperimentKind::Custom => 100,
        })
    }

    pub fn resolved_horizon(&self) -> usize {
        self.horizon.unwrap_or_else(|| self.resolved_test_len())
    }

    pub fn resolved_alpha(&self) -> f64 {
        self.alpha.unwrap_or(match self.experiment {
            ExperimentKind::Traffic => 0.7,
            _ => 0.3,
        })
    }

    pub fn resolved_readout(&self) -> ReadoutKind {
        self.readout.unwrap_or(match self.experiment {
            ExperimentKind::Traffic => ReadoutKind::Tanh,
            _ => ReadoutKind::Square,
        })
    }

    pub fn resolved_features(&self) -> FeatureSpec {
        self.features.clone().unwrap_or(match self.experiment {
            ExperimentKind::Lorenz | ExperimentKind::Rossler => FeatureSpec::Full { m: 3 },
            ExperimentKind::Traffic => FeatureSpec::Prefix { m: 100 },
            ExperimentKind::Custom => FeatureSpec::Full { m: 1 },
        })
    }

    pub fn resolved_embedding(&self) -> Option<EmbeddingSpec> {
        if self.embedding.is_some() {
            return self.embedding;
        }
        match self.experiment {
            ExperimentKind::Traffic => Some(EmbeddingSpec {
                m: self.resolved_features().input_dim(),
                lag: 1,
            }),
            _ => None,
        }
    }

    pub fn resolved_discard(&self) -> usize {
        self.discard.unwrap_or(1000)
    }

    pub fn resolved_initial(&self) -> [f64; 3] {
        self.initial.unwrap_or([1.0, 1.0, 1.0])
    }

    pub fn resolved_variant(&self) -> Variant {
        self.variant.unwrap_or(Variant::FeatEsn)
    }

    pub fn feature_matrix(&self) -> Result<FeatureMatrix> {
        self.resolved_features().build()
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Manifest("trials must be at least 1".into()));
        }
        if self.block_sizes.is_empty() {
            return Err(Error::Manifest("block_sizes must not be empty".into()));
        }
        if self.block_sizes.iter().any(|&b| b == 0) {
            return Err(Error::Manifest("block sizes must be at least 1".into()));
        }
        if self.resolved_train_len() < 2 {
            return Err(Error::Manifest("train_len must be at least 2".into()));
        }
        if self.resolved_horizon() > self.resolved_test_len() {
            return Err(Error::Manifest(format!(
                "horizon {} exceeds test_len {}",
                self.resolved_horizon(),
                self.resolved_test_len()
            )));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::Manifest(format!("dt must be positive, got {dt}")));
            }
        }
        if let Some(sigma) = self.sigma_v {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::Manifest(format!(
                    "sigma_v must be finite and non-negative, got {sigma}"
                )));
            }
        }
        let features = self.resolved_features();
        features.build()?;
        if let Some(embedding) = self.resolved_embedding() {
            embedding.validate()?;
            if embedding.m != features.input_dim() {
                return Err(Error::Manifest(format!(
                    "embedding dimension {} does not match feature input dimension {}",
                    embedding.m,
                    features.input_dim()
                )));
            }
        }
        if self.experiment == ExperimentKind::Custom && self.data.is_none() {
            return Err(Error::Manifest(
                "custom experiments require a data file".into(),
            ));
        }
        // hyperparameter ranges are checked by the model constructors; do it
        // here as well so a bad manifest fails before any work happens
        let feat_hyper = self.feat_hyper(self.block_sizes[0], RngSeed::new(0));
        feat_hyper.validate()?;
        Ok(())
    }

    pub(crate) fn feat_hyper(&self, block_size: usize, seed: RngSeed) -> FeatEsnHyperparams {
        FeatEsnHyperparams {
            block_size,
            alpha: self.resolved_alpha(),
            beta: self.beta,
            p: self.connection_probability,
            rho: self.rho,
            readout: self.resolved_readout(),
            shared_block: self.shared_block,
            seed,
        }
    }

    pub(crate) fn esn_hyper(&self, n: usize, seed: RngSeed) -> EsnHyperparams {
        EsnHyperparams {
            n,
            alpha: self.resolved_alpha(),
            beta: self.beta,
            p: self.connection_probability,
            rho: self.rho,
            input_scale: self.input_scale,
            seed,
        }
    }

    /// Load a manifest from a JSON file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: ExperimentManifest =
            serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Source data resolved for an experiment: the clean series plus naming and
/// provenance for writers.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub series: TimeSeries,
    pub columns: Vec<String>,
    pub meta: SeriesMeta,
}

/// Generate (or load) the data an experiment runs on. Generated data covers
/// exactly `train_len + test_len` samples.
pub fn prepare_data(manifest: &ExperimentManifest) -> Result<PreparedData> {
    manifest.validate()?;
    let needed = manifest.resolved_train_len() + manifest.resolved_test_len();
    match manifest.experiment {
        ExperimentKind::Lorenz | ExperimentKind::Rossler => {
            if let Some(path) = &manifest.data {
                let (series, meta) = read_series_with_meta(path)?;
                check_length(&series, needed)?;
                let columns = meta.columns.clone();
                Ok(PreparedData {
                    series,
                    columns,
                    meta,
                })
            } else {
                generate_chaotic(manifest, needed)
            }
        }
        ExperimentKind::Traffic => {
            if let Some(path) = &manifest.data {
                let column = manifest.traffic_column.as_deref().unwrap_or("count");
                let load = load_traffic_csv(path, column)?;
                for w in &load.warnings {
                    log::warn!("{}: {w}", path.display());
                }
                check_length(&load.series, needed)?;
                let meta = SeriesMeta {
                    dt: 1.0,
                    unit: TimeUnit::Hours,
                    start_time: load.series.start_time(),
                    columns: vec![column.to_string()],
                    seed: None,
                    system: Some("traffic".into()),
                    params: None,
                    gaps_filled: Some(load.gaps_filled),
                };
                Ok(PreparedData {
                    series: load.series,
                    columns: vec![column.to_string()],
                    meta,
                })
            } else {
                let params = manifest.traffic.unwrap_or(SyntheticTrafficParams {
                    n_hours: needed,
                    seed: manifest.seed.derive(1_000_000),
                    ..SyntheticTrafficParams::default()
                });
                if params.n_hours < needed {
                    return Err(Error::Manifest(format!(
                        "synthetic traffic covers {} hours, need {needed}",
                        params.n_hours
                    )));
                }
                let series = generate_synthetic_traffic(&params)?;
                let meta = SeriesMeta {
                    dt: 1.0,
                    unit: TimeUnit::Hours,
                    start_time: series.start_time(),
                    columns: vec!["count".into()],
                    seed: Some(params.seed.value()),
                    system: Some("traffic-synthetic".into()),
                    params: Some(serde_json::to_value(params)?),
                    gaps_filled: None,
                };
                Ok(PreparedData {
                    series,
                    columns: vec!["count".into()],
                    meta,
                })
            }
        }
        ExperimentKind::Custom => {
            let path = manifest
                .data
                .as_ref()
                .expect("validate() requires data for custom");
            let (series, meta) = read_series_with_meta(path)?;
            check_length(&series, needed)?;
            let columns = meta.columns.clone();
            Ok(PreparedData {
                series,
                columns,
                meta,
            })
        }
    }
}

fn check_length(series: &TimeSeries, needed: usize) -> Result<()> {
    if series.len() < needed {
        return Err(Error::SeriesTooShort {
            needed,
            actual: series.len(),
        });
    }
    Ok(())
}

fn generate_chaotic(manifest: &ExperimentManifest, n: usize) -> Result<PreparedData> {
    let columns = vec!["x".into(), "y".into(), "z".into()];
    let (series, system, params) = match manifest.experiment {
        ExperimentKind::Lorenz => {
            let p = LorenzParams {
                initial: manifest.resolved_initial(),
                dt: manifest.resolved_dt(),
                n_samples: n,
                discard: manifest.resolved_discard(),
                ..LorenzParams::default()
            };
            (generate_lorenz(&p)?, "lorenz", serde_json::to_value(p)?)
        }
        ExperimentKind::Rossler => {
            let p = RosslerParams {
                initial: manifest.resolved_initial(),
                dt: manifest.resolved_dt(),
                n_samples: n,
                discard: manifest.resolved_discard(),
                damped_x: manifest.damped_x,
                ..RosslerParams::default()
            };
            (generate_rossler(&p)?, "rossler", serde_json::to_value(p)?)
        }
        _ => unreachable!("generate_chaotic called for non-chaotic kind"),
    };
    let meta = SeriesMeta {
        dt: manifest.resolved_dt(),
        unit: TimeUnit::Seconds,
        start_time: None,
        columns: columns.clone(),
        seed: None,
        system: Some(system.into()),
        params: Some(params),
        gaps_filled: None,
    };
    Ok(PreparedData {
        series,
        columns,
        meta,
    })
}

/// Everything one trial needs, shared by both model variants.
struct TrialSetup {
    /// Model-space training inputs (normalized when enabled).
    inputs: TimeSeries,
    targets: TimeSeries,
    /// Last input absorbed before forecasting (embedded window or data row),
    /// in model space.
    prime: Vec<f64>,
    /// Clean continuation in original units; forecasts are mapped back
    /// before scoring against it.
    truth: TimeSeries,
    embedded: bool,
    input_dim: usize,
    output_dim: usize,
    noise_sigmas: Vec<f64>,
    normalizer: Option<Normalizer>,
}

impl TrialSetup {
    /// Map a model-space forecast back to original units.
    fn denormalize(&self, prediction: TimeSeries) -> Result<TimeSeries> {
        match &self.normalizer {
            Some(n) => n.invert(&prediction),
            None => Ok(prediction),
        }
    }
}

/// Per-channel noise levels for this manifest against the given training
/// split: explicit sigma everywhere, or 1% of each channel's standard
/// deviation for chaotic systems when unset.
fn noise_sigmas(manifest: &ExperimentManifest, train: &TimeSeries) -> Vec<f64> {
    match (manifest.sigma_v, manifest.experiment) {
        (Some(s), _) => vec![s; train.dim()],
        (None, ExperimentKind::Lorenz | ExperimentKind::Rossler) => {
            train.channel_std().iter().map(|sd| 0.01 * sd).collect()
        }
        (None, _) => vec![0.0; train.dim()],
    }
}

fn build_trial_setup(
    manifest: &ExperimentManifest,
    data: &PreparedData,
    data_seed: RngSeed,
) -> Result<TrialSetup> {
    let train_len = manifest.resolved_train_len();
    let test_len = manifest.resolved_test_len();
    let horizon = manifest.resolved_horizon();
    let (train_clean, test_clean) = split(&data.series, train_len, test_len)?;
    let sigmas = noise_sigmas(manifest, &train_clean);
    // measurement noise acts in original units, before any rescaling
    let observed = if sigmas.iter().all(|&s| s == 0.0) {
        train_clean
    } else {
        add_noise_scaled(&train_clean, &sigmas, data_seed)?
    };
    let (train, normalizer) = if manifest.normalize {
        let norm = Normalizer::fit(&observed)?;
        (norm.apply(&observed)?, Some(norm))
    } else {
        (observed, None)
    };
    let truth = test_clean.slice(0..horizon)?;
    match manifest.resolved_embedding() {
        None => {
            let l = train.len();
            let inputs = train.slice(0..l - 1)?;
            let targets = train.slice(1..l)?;
            let prime = train.row(l - 1);
            let dim = train.dim();
            Ok(TrialSetup {
                inputs,
                targets,
                prime,
                truth,
                embedded: false,
                input_dim: dim,
                output_dim: dim,
                noise_sigmas: sigmas,
                normalizer,
            })
        }
        Some(spec) => {
            if train.dim() != 1 {
                return Err(Error::Manifest(
                    "delay embedding requires scalar data".into(),
                ));
            }
            let embedded = delay_embed(&train, &spec)?;
            let rows = embedded.len();
            if rows < 2 {
                return Err(Error::SeriesTooShort {
                    needed: spec.warmup() + 2,
                    actual: train.len(),
                });
            }
            // row k of the embedding ends at scalar sample k + warmup; its
            // one-step target is the next scalar. The last row's target is
            // the first test sample, so it is held out for priming.
            let inputs = embedded.slice(0..rows - 1)?;
            let targets = train.slice(spec.warmup() + 1..train.len())?;
            let prime = embedded.row(rows - 1);
            Ok(TrialSetup {
                inputs,
                targets,
                prime,
                truth,
                embedded: true,
                input_dim: spec.m,
                output_dim: 1,
                noise_sigmas: sigmas,
                normalizer,
            })
        }
    }
}

/// Outcome of running one variant in one trial.
struct VariantRun {
    train_nrmse: f64,
    nrmse: f64,
    pearson: f64,
    prediction: TimeSeries,
    contributions: Option<Vec<FeatureContribution>>,
}

fn evaluate_forecast(truth: &TimeSeries, prediction: &TimeSeries) -> (f64, f64) {
    let nrmse = match crate::metrics::nrmse(truth, prediction) {
        Ok(v) if v.is_finite() => v,
        _ => f64::INFINITY,
    };
    let pearson = match crate::metrics::pearson(truth, prediction) {
        Ok(v) if v.is_finite() => v,
        _ => 0.0,
    };
    (nrmse, pearson)
}

fn run_feat_variant(
    manifest: &ExperimentManifest,
    setup: &TrialSetup,
    block_size: usize,
    model_seed: RngSeed,
    want_contributions: bool,
) -> Result<VariantRun> {
    let features = manifest.feature_matrix()?;
    let hyper = manifest.feat_hyper(block_size, model_seed);
    let mut model = FeatEsnModel::new(features, setup.output_dim, hyper)?;
    let train_nrmse = model.train(&setup.inputs, &setup.targets, manifest.washout)?;
    model.step(&setup.prime)?;
    let horizon = setup.truth.len();
    let prediction = if setup.embedded {
        model.free_run_embedded(&setup.prime, horizon)?
    } else {
        model.free_run(horizon)?
    };
    let prediction = setup.denormalize(prediction)?;
    let (nrmse, pearson) = evaluate_forecast(&setup.truth, &prediction);
    let contributions = if want_contributions {
        Some(model.feature_contributions()?)
    } else {
        None
    };
    Ok(VariantRun {
        train_nrmse,
        nrmse,
        pearson,
        prediction,
        contributions,
    })
}

fn run_esn_variant(
    manifest: &ExperimentManifest,
    setup: &TrialSetup,
    block_size: usize,
    model_seed: RngSeed,
) -> Result<VariantRun> {
    let n_features = manifest.feature_matrix()?.n_features();
    // size parity: the baseline gets the same total state dimension
    let n = n_features * block_size;
    let hyper = manifest.esn_hyper(n, model_seed);
    let mut model = EsnModel::new(setup.input_dim, setup.output_dim, hyper)?;
    let train_nrmse = model.train(&setup.inputs, &setup.targets, manifest.washout)?;
    model.step(&setup.prime)?;
    let horizon = setup.truth.len();
    let prediction = if setup.embedded {
        model.free_run_embedded(&setup.prime, horizon)?
    } else {
        model.free_run(horizon)?
    };
    let prediction = setup.denormalize(prediction)?;
    let (nrmse, pearson) = evaluate_forecast(&setup.truth, &prediction);
    Ok(VariantRun {
        train_nrmse,
        nrmse,
        pearson,
        prediction,
        contributions: None,
    })
}

/// Flat per-trial record; failed runs carry the error text instead of
/// metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub block_size: usize,
    pub variant: Variant,
    pub data_seed: RngSeed,
    pub model_seed: RngSeed,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_nrmse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nrmse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pearson: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }

    pub fn to_result(&self, horizon: usize) -> Option<TrialResult> {
        match (self.nrmse, self.pearson) {
            (Some(nrmse), Some(pearson)) => Some(TrialResult {
                variant: self.variant,
                block_size: self.block_size,
                trial: self.trial,
                seed: self.model_seed,
                horizon,
                nrmse,
                pearson,
            }),
            _ => None,
        }
    }
}

/// Per-feature contribution row stored in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionRecord {
    pub feature: usize,
    pub label: String,
    pub linear: f64,
    pub nonlinear: f64,
    pub total: f64,
}

/// One representative forecast kept for plotting: truth and both variants'
/// predictions over the horizon, from the first trial of the first block
/// size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleForecast {
    pub block_size: usize,
    pub trial: usize,
    pub truth: Vec<Vec<f64>>,
    pub feat_esn: Vec<Vec<f64>>,
    pub esn: Vec<Vec<f64>>,
}

/// Full experiment output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    /// Wall-clock timestamp, filled in by callers that want one; everything
    /// else in the report is a pure function of the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<String>,
    pub manifest: ExperimentManifest,
    pub horizon: usize,
    pub noise_sigmas: Vec<f64>,
    pub records: Vec<TrialRecord>,
    pub summary: Vec<GroupSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contributions: Option<Vec<ContributionRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<SampleForecast>,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

fn series_rows(series: &TimeSeries) -> Vec<Vec<f64>> {
    (0..series.len()).map(|k| series.row(k)).collect()
}

fn error_text(e: &Error) -> String {
    format!("{e}")
}

fn panic_text(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        format!("panic: {s}")
    } else if let Some(s) = payload.downcast_ref::<String>() {
        format!("panic: {s}")
    } else {
        "panic: unknown payload".into()
    }
}

/// Extras captured from the designated showcase trial.
struct TrialArtifacts {
    contributions: Option<Vec<FeatureContribution>>,
    sample: Option<SampleForecast>,
}

/// Run the full comparison grid described by the manifest.
///
/// For every block size and trial, both variants are trained on identically
/// corrupted data and evaluated closed loop on the clean continuation. A
/// failing trial (error or panic) is recorded and skipped in aggregation;
/// everything else continues. The result is deterministic for a fixed
/// manifest, including under parallel execution.
pub fn run_ablation(manifest: &ExperimentManifest) -> Result<ExperimentReport> {
    manifest.validate()?;
    let data = prepare_data(manifest)?;
    let horizon = manifest.resolved_horizon();
    let trials = manifest.trials;
    let grid: Vec<(usize, usize)> = (0..manifest.block_sizes.len())
        .flat_map(|bi| (0..trials).map(move |t| (bi, t)))
        .collect();
    let outcomes: Vec<(TrialRecord, TrialRecord, Option<TrialArtifacts>)> = grid
        .par_iter()
        .map(|&(bi, t)| run_trial(manifest, &data, bi, t))
        .collect();
    let mut records = Vec::with_capacity(2 * outcomes.len());
    let mut contributions = None;
    let mut sample = None;
    let mut noise = None;
    for (feat_record, esn_record, artifacts) in outcomes {
        records.push(feat_record);
        records.push(esn_record);
        if let Some(a) = artifacts {
            if let Some(c) = a.contributions {
                contributions = Some(
                    c.iter()
                        .map(|fc| ContributionRecord {
                            feature: fc.feature,
                            label: fc
                                .label
                                .iter()
                                .map(|j| format!("u{}", j + 1))
                                .collect::<Vec<_>>()
                                .join("+"),
                            linear: fc.linear,
                            nonlinear: fc.nonlinear,
                            total: fc.total(),
                        })
                        .collect(),
                );
            }
            sample = a.sample;
        }
    }
    // noise levels are a function of the clean split, not the trial
    if noise.is_none() {
        let (train_clean, _) = split(
            &data.series,
            manifest.resolved_train_len(),
            manifest.resolved_test_len(),
        )?;
        noise = Some(noise_sigmas(manifest, &train_clean));
    }
    let results: Vec<TrialResult> = records
        .iter()
        .filter_map(|r| r.to_result(horizon))
        .collect();
    let summary = aggregate(&results);
    let failed = records.iter().filter(|r| !r.succeeded()).count();
    if failed > 0 {
        log::warn!("{failed} of {} runs failed; see report records", records.len());
    }
    Ok(ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        generated_at: None,
        manifest: manifest.clone(),
        horizon,
        noise_sigmas: noise.unwrap_or_default(),
        records,
        summary,
        contributions,
        sample,
    })
}

fn run_trial(
    manifest: &ExperimentManifest,
    data: &PreparedData,
    bi: usize,
    t: usize,
) -> (TrialRecord, TrialRecord, Option<TrialArtifacts>) {
    let block_size = manifest.block_sizes[bi];
    let trials = manifest.trials;
    let counter = (bi * trials + t) as u64;
    let data_seed = manifest.seed.derive(2 * counter);
    let model_seed = manifest.seed.derive(2 * counter + 1);
    let keep_artifacts = bi == 0 && t == 0;
    let base = |variant: Variant| TrialRecord {
        trial: t,
        block_size,
        variant,
        data_seed,
        model_seed,
        train_nrmse: None,
        nrmse: None,
        pearson: None,
        error: None,
    };
    let mut feat_record = base(Variant::FeatEsn);
    let mut esn_record = base(Variant::Esn);
    let setup = match build_trial_setup(manifest, data, data_seed) {
        Ok(s) => s,
        Err(e) => {
            let text = error_text(&e);
            feat_record.error = Some(text.clone());
            esn_record.error = Some(text);
            return (feat_record, esn_record, None);
        }
    };
    let feat_outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
        run_feat_variant(manifest, &setup, block_size, model_seed, keep_artifacts)
    }));
    let esn_outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
        run_esn_variant(manifest, &setup, block_size, model_seed)
    }));
    let mut feat_pred = None;
    let mut contributions = None;
    match feat_outcome {
        Ok(Ok(run)) => {
            feat_record.train_nrmse = Some(run.train_nrmse);
            feat_record.nrmse = Some(run.nrmse);
            feat_record.pearson = Some(run.pearson);
            if keep_artifacts {
                contributions = run.contributions;
                feat_pred = Some(run.prediction);
            }
        }
        Ok(Err(e)) => feat_record.error = Some(error_text(&e)),
        Err(p) => feat_record.error = Some(panic_text(p)),
    }
    let mut esn_pred = None;
    match esn_outcome {
        Ok(Ok(run)) => {
            esn_record.train_nrmse = Some(run.train_nrmse);
            esn_record.nrmse = Some(run.nrmse);
            esn_record.pearson = Some(run.pearson);
            if keep_artifacts {
                esn_pred = Some(run.prediction);
            }
        }
        Ok(Err(e)) => esn_record.error = Some(error_text(&e)),
        Err(p) => esn_record.error = Some(panic_text(p)),
    }
    let artifacts = if keep_artifacts {
        let sample = match (&feat_pred, &esn_pred) {
            (Some(f), Some(e)) => Some(SampleForecast {
                block_size,
                trial: t,
                truth: series_rows(&setup.truth),
                feat_esn: series_rows(f),
                esn: series_rows(e),
            }),
            _ => None,
        };
        Some(TrialArtifacts {
            contributions,
            sample,
        })
    } else {
        None
    };
    (feat_record, esn_record, artifacts)
}

/// Fixed-width text table of the aggregated scores.
pub fn render_summary_table(report: &ExperimentReport) -> String {
    let m = &report.manifest;
    let n_features = m
        .feature_matrix()
        .map(|f| f.n_features())
        .unwrap_or(0);
    let mut out = String::new();
    out.push_str(&format!(
        "experiment: {}   trials: {}   horizon: {}   seed: {}\n",
        m.experiment, m.trials, report.horizon, m.seed
    ));
    let sigmas: Vec<String> = report
        .noise_sigmas
        .iter()
        .map(|s| format!("{s:.6}"))
        .collect();
    out.push_str(&format!("train noise sigma: [{}]\n\n", sigmas.join(", ")));
    out.push_str(&format!(
        "{:<10} {:>4} {:>6} {:>7} {:>7} {:>12} {:>12} {:>12} {:>12}\n",
        "variant", "b", "n", "trials", "failed", "nrmse_med", "nrmse_iqr", "pearson_med", "pearson_iqr"
    ));
    for group in &report.summary {
        let failed = report
            .records
            .iter()
            .filter(|r| {
                r.variant == group.variant && r.block_size == group.block_size && !r.succeeded()
            })
            .count();
        out.push_str(&format!(
            "{:<10} {:>4} {:>6} {:>7} {:>7} {:>12.6} {:>12.6} {:>12.6} {:>12.6}\n",
            group.variant.to_string(),
            group.block_size,
            n_features * group.block_size,
            group.n_trials,
            failed,
            group.nrmse.median,
            group.nrmse.iqr,
            group.pearson.median,
            group.pearson.iqr
        ));
    }
    if let Some(contributions) = &report.contributions {
        out.push_str(&format!(
            "\nfeature contributions (b = {}, trial 0), strongest first:\n",
            report.manifest.block_sizes[0]
        ));
        out.push_str(&format!(
            "{:<4} {:<24} {:>12} {:>12} {:>12}\n",
            "#", "feature", "linear", "nonlinear", "total"
        ));
        let mut ranked: Vec<&ContributionRecord> = contributions.iter().collect();
        ranked.sort_by(|a, b| b.total.total_cmp(&a.total).then(a.feature.cmp(&b.feature)));
        for c in ranked {
            out.push_str(&format!(
                "{:<4} {:<24} {:>12.6} {:>12.6} {:>12.6}\n",
                c.feature, c.label, c.linear, c.nonlinear, c.total
            ));
        }
    }
    out
}

/// Long-format metrics CSV (one row per record and metric), convenient for
/// plotting tools.
pub fn write_long_metrics_csv(report: &ExperimentReport, path: &Path) -> Result<()> {
    let mut rows = vec![vec![
        "variant".to_string(),
        "block_size".into(),
        "trial".into(),
        "metric".into(),
        "value".into(),
    ]];
    for r in &report.records {
        for (metric, value) in [
            ("train_nrmse", r.train_nrmse),
            ("nrmse", r.nrmse),
            ("pearson", r.pearson),
        ] {
            if let Some(v) = value {
                rows.push(vec![
                    r.variant.to_string(),
                    r.block_size.to_string(),
                    r.trial.to_string(),
                    metric.to_string(),
                    format!("{v}"),
                ]);
            }
        }
    }
    write_csv(path, &rows)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn write_csv(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(Error::from)?;
    for row in rows {
        writer.write_record(row)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Write the report and its tabular views into a directory. Returns the
/// paths written: report.json, table.txt, trials.csv, summary.csv, and when
/// present contributions.csv and sample.csv.
pub fn write_report_files(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let json_path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;
    written.push(json_path);

    let table_path = dir.join("table.txt");
    std::fs::write(&table_path, render_summary_table(report))
        .map_err(|e| Error::io(&table_path, e))?;
    written.push(table_path);

    let trials_path = dir.join("trials.csv");
    let mut rows = vec![vec![
        "trial".into(),
        "block_size".into(),
        "variant".into(),
        "data_seed".into(),
        "model_seed".into(),
        "train_nrmse".into(),
        "nrmse".into(),
        "pearson".into(),
        "error".into(),
    ]];
    for r in &report.records {
        rows.push(vec![
            r.trial.to_string(),
            r.block_size.to_string(),
            r.variant.to_string(),
            r.data_seed.to_string(),
            r.model_seed.to_string(),
            fmt_opt(r.train_nrmse),
            fmt_opt(r.nrmse),
            fmt_opt(r.pearson),
            r.error.clone().unwrap_or_default(),
        ]);
    }
    write_csv(&trials_path, &rows)?;
    written.push(trials_path);

    let summary_path = dir.join("summary.csv");
    let mut rows = vec![vec![
        "variant".into(),
        "block_size".into(),
        "n_trials".into(),
        "nrmse_median".into(),
        "nrmse_iqr".into(),
        "nrmse_mean".into(),
        "nrmse_std".into(),
        "pearson_median".into(),
        "pearson_iqr".into(),
        "pearson_mean".into(),
        "pearson_std".into(),
    ]];
    for g in &report.summary {
        rows.push(vec![
            g.variant.to_string(),
            g.block_size.to_string(),
            g.n_trials.to_string(),
            format!("{}", g.nrmse.median),
            format!("{}", g.nrmse.iqr),
            format!("{}", g.nrmse.mean),
            format!("{}", g.nrmse.std),
            format!("{}", g.pearson.median),
            format!("{}", g.pearson.iqr),
            format!("{}", g.pearson.mean),
            format!("{}", g.pearson.std),
        ]);
    }
    write_csv(&summary_path, &rows)?;
    written.push(summary_path);

    if let Some(contributions) = &report.contributions {
        let path = dir.join("contributions.csv");
        let mut rows = vec![vec![
            "feature".into(),
            "label".into(),
            "linear".into(),
            "nonlinear".into(),
            "total".into(),
        ]];
        for c in contributions {
            rows.push(vec![
                c.feature.to_string(),
                c.label.clone(),
                format!("{}", c.linear),
                format!("{}", c.nonlinear),
                format!("{}", c.total),
            ]);
        }
        write_csv(&path, &rows)?;
        written.push(path);
    }

    if let Some(sample) = &report.sample {
        let path = dir.join("sample.csv");
        let dim = sample.truth.first().map(|r| r.len()).unwrap_or(0);
        let mut header = vec!["step".to_string()];
        for prefix in ["truth", "feat_esn", "esn"] {
            for c in 1..=dim {
                header.push(format!("{prefix}_{c}"));
            }
        }
        let mut rows = vec![header];
        for k in 0..sample.truth.len() {
            let mut row = vec![k.to_string()];
            for block in [&sample.truth, &sample.feat_esn, &sample.esn] {
                for v in &block[k] {
                    row.push(format!("{v}"));
                }
            }
            rows.push(row);
        }
        write_csv(&path, &rows)?;
        written.push(path);
    }

    Ok(written)
}

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

/// Trained model payload inside a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", content = "model", rename_all = "snake_case")]
pub enum ModelDoc {
    FeatEsn(FeatEsnModel),
    Esn(EsnModel),
}

/// How forecasts feed back into the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FeedbackState {
    /// Model output dimension equals input dimension; outputs loop straight
    /// back.
    Direct,
    /// Scalar output shifts into a delay window (newest first).
    Embedded { window: Vec<f64> },
}

/// A trained model with everything needed to continue forecasting: the
/// manifest it came from, the primed internal state (inside the model), and
/// the feedback bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: u32,
    pub manifest: ExperimentManifest,
    pub feedback: FeedbackState,
    pub train_nrmse: f64,
    pub noise_sigmas: Vec<f64>,
    /// Channel standardization the model was trained under, if any; applied
    /// inversely to every forecast.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalizer: Option<Normalizer>,
    pub doc: ModelDoc,
}

/// Train the manifest's selected variant on trial 0 data and prime it on the
/// final training input, ready for closed-loop forecasting.
pub fn train_bundle(manifest: &ExperimentManifest) -> Result<ModelBundle> {
    manifest.validate()?;
    let data = prepare_data(manifest)?;
    let block_size = manifest.block_sizes[0];
    let data_seed = manifest.seed.derive(0);
    let model_seed = manifest.seed.derive(1);
    let setup = build_trial_setup(manifest, &data, data_seed)?;
    let feedback = if setup.embedded {
        FeedbackState::Embedded {
            window: setup.prime.clone(),
        }
    } else {
        FeedbackState::Direct
    };
    let (doc, train_nrmse) = match manifest.resolved_variant() {
        Variant::FeatEsn => {
            let features = manifest.feature_matrix()?;
            let hyper = manifest.feat_hyper(block_size, model_seed);
            let mut model = FeatEsnModel::new(features, setup.output_dim, hyper)?;
            let err = model.train(&setup.inputs, &setup.targets, manifest.washout)?;
            model.step(&setup.prime)?;
            (ModelDoc::FeatEsn(model), err)
        }
        Variant::Esn => {
            let n = manifest.feature_matrix()?.n_features() * block_size;
            let hyper = manifest.esn_hyper(n, model_seed);
            let mut model = EsnModel::new(setup.input_dim, setup.output_dim, hyper)?;
            let err = model.train(&setup.inputs, &setup.targets, manifest.washout)?;
            model.step(&setup.prime)?;
            (ModelDoc::Esn(model), err)
        }
    };
    Ok(ModelBundle {
        format_version: BUNDLE_FORMAT_VERSION,
        manifest: manifest.clone(),
        feedback,
        train_nrmse,
        noise_sigmas: setup.noise_sigmas,
        normalizer: setup.normalizer,
        doc,
    })
}

/// Advance a delay window past `prediction` (newest first).
fn advance_window(window: &[f64], prediction: &TimeSeries) -> Vec<f64> {
    let m = window.len();
    let mut sequence: Vec<f64> = window.iter().rev().copied().collect();
    for k in 0..prediction.len() {
        sequence.push(prediction.values()[(k, 0)]);
    }
    sequence[sequence.len() - m..].iter().rev().copied().collect()
}

/// Forecast `steps` samples ahead in original units, updating the bundle's
/// state so repeated calls continue where the previous one stopped.
pub fn predict_bundle(bundle: &mut ModelBundle, steps: usize) -> Result<TimeSeries> {
    let prediction = match (&mut bundle.doc, &bundle.feedback) {
        (ModelDoc::FeatEsn(model), FeedbackState::Direct) => model.free_run(steps)?,
        (ModelDoc::Esn(model), FeedbackState::Direct) => model.free_run(steps)?,
        (ModelDoc::FeatEsn(model), FeedbackState::Embedded { window }) => {
            model.free_run_embedded(window, steps)?
        }
        (ModelDoc::Esn(model), FeedbackState::Embedded { window }) => {
            model.free_run_embedded(window, steps)?
        }
    };
    // feedback bookkeeping stays in model space; only the caller-facing
    // series is mapped back
    if let FeedbackState::Embedded { window } = &mut bundle.feedback {
        *window = advance_window(window, &prediction);
    }
    let prediction = match &bundle.normalizer {
        Some(n) => n.invert(&prediction)?,
        None => prediction,
    };
    let dt = bundle.manifest.resolved_dt();
    let unit = bundle.manifest.time_unit();
    TimeSeries::new(dt, unit, prediction.values().clone())
}

pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<()> {
    let json = serde_json::to_string(bundle)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bundle: ModelBundle = serde_json::from_str(&text)?;
    if bundle.format_version != BUNDLE_FORMAT_VERSION {
        return Err(Error::Manifest(format!(
            "unsupported bundle format {} (expected {BUNDLE_FORMAT_VERSION})",
            bundle.format_version
        )));
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_lorenz() -> ExperimentManifest {
        ExperimentManifest {
            train_len: Some(120),
            test_len: Some(20),
            horizon: Some(10),
            trials: 2,
            block_sizes: vec![2],
            discard: Some(50),
            seed: RngSeed::new(7),
            ..ExperimentManifest::lorenz()
        }
    }

    fn tiny_traffic() -> ExperimentManifest {
        ExperimentManifest {
            features: Some(FeatureSpec::Prefix { m: 4 }),
            embedding: Some(EmbeddingSpec { m: 4, lag: 1 }),
            train_len: Some(60),
            test_len: Some(12),
            horizon: Some(6),
            trials: 2,
            block_sizes: vec![3],
            sigma_v: Some(0.0),
            traffic: Some(SyntheticTrafficParams {
                n_hours: 72,
                seed: RngSeed::new(9),
                ..SyntheticTrafficParams::default()
            }),
            seed: RngSeed::new(11),
            ..ExperimentManifest::traffic()
        }
    }

    #[test]
    fn lorenz_defaults_resolve() {
        let m = ExperimentManifest::lorenz();
        assert_eq!(m.resolved_dt(), 0.02);
        assert_eq!(m.resolved_train_len(), 5000);
        assert_eq!(m.resolved_test_len(), 500);
        assert_eq!(m.resolved_horizon(), 500);
        assert_eq!(m.resolved_alpha(), 0.3);
        assert_eq!(m.resolved_readout(), ReadoutKind::Square);
        assert_eq!(m.resolved_features(), FeatureSpec::Full { m: 3 });
        assert!(m.resolved_embedding().is_none());
        assert_eq!(m.block_sizes, vec![5]);
        assert_eq!(m.trials, 50);
        m.validate().unwrap();
    }

    #[test]
    fn traffic_defaults_resolve() {
        let m = ExperimentManifest::traffic();
        assert_eq!(m.resolved_dt(), 1.0);
        assert_eq!(m.time_unit(), TimeUnit::Hours);
        assert_eq!(m.resolved_train_len(), 1000);
        assert_eq!(m.resolved_test_len(), 70);
        assert_eq!(m.resolved_alpha(), 0.7);
        assert_eq!(m.resolved_readout(), ReadoutKind::Tanh);
        assert_eq!(m.resolved_features(), FeatureSpec::Prefix { m: 100 });
        assert_eq!(m.resolved_embedding(), Some(EmbeddingSpec { m: 100, lag: 1 }));
        assert_eq!(m.block_sizes, vec![10]);
        m.validate().unwrap();
    }

    #[test]
    fn validate_rejects_bad_manifests() {
        let mut m = ExperimentManifest::lorenz();
        m.trials = 0;
        assert!(m.validate().is_err());

        let mut m = ExperimentManifest::lorenz();
        m.horizon = Some(600);
        assert!(m.validate().is_err());

        let mut m = ExperimentManifest::lorenz();
        m.block_sizes = vec![];
        assert!(m.validate().is_err());

        let m = ExperimentManifest {
            experiment: ExperimentKind::Custom,
            ..ExperimentManifest::lorenz()
        };
        assert!(m.validate().is_err(), "custom without data must fail");

        let mut m = ExperimentManifest::lorenz();
        m.embedding = Some(EmbeddingSpec { m: 2, lag: 1 });
        assert!(m.validate().is_err(), "embedding/feature dimension mismatch");
    }

    #[test]
    fn manifest_roundtrips_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = tiny_traffic();
        m.save(&path).unwrap();
        let loaded = ExperimentManifest::load(&path).unwrap();
        assert_eq!(m, loaded);
    }

    #[test]
    fn manifest_accepts_minimal_json() {
        let m: ExperimentManifest = serde_json::from_str(r#"{"experiment":"rossler"}"#).unwrap();
        assert_eq!(m.experiment, ExperimentKind::Rossler);
        assert_eq!(m.resolved_dt(), 0.1);
        assert_eq!(m.resolved_train_len(), 1000);
        assert_eq!(m.trials, 50);
        m.validate().unwrap();
    }

    #[test]
    fn prepare_data_generates_exact_length() {
        let m = tiny_lorenz();
        let data = prepare_data(&m).unwrap();
        assert_eq!(data.series.len(), 140);
        assert_eq!(data.series.dim(), 3);
        assert_eq!(data.columns, vec!["x", "y", "z"]);
        assert_eq!(data.meta.system.as_deref(), Some("lorenz"));
    }

    #[test]
    fn direct_setup_pairs_one_step_ahead() {
        let mut m = tiny_lorenz();
        m.sigma_v = Some(0.0);
        m.normalize = false;
        let data = prepare_data(&m).unwrap();
        let setup = build_trial_setup(&m, &data, RngSeed::new(1)).unwrap();
        assert!(!setup.embedded);
        assert_eq!(setup.inputs.len(), 119);
        assert_eq!(setup.targets.len(), 119);
        assert_eq!(setup.truth.len(), 10);
        // with zero noise the pairing is exactly the clean series shifted
        for k in 0..setup.inputs.len() {
            assert_eq!(setup.inputs.row(k), data.series.row(k));
            assert_eq!(setup.targets.row(k), data.series.row(k + 1));
        }
        assert_eq!(setup.prime, data.series.row(119));
        assert_eq!(setup.truth.row(0), data.series.row(120));
    }

    #[test]
    fn default_noise_is_one_percent_of_channel_std() {
        let mut m = tiny_lorenz();
        m.normalize = false;
        let data = prepare_data(&m).unwrap();
        let setup = build_trial_setup(&m, &data, RngSeed::new(1)).unwrap();
        let (train_clean, _) = split(&data.series, 120, 20).unwrap();
        let stds = train_clean.channel_std();
        for (sigma, sd) in setup.noise_sigmas.iter().zip(&stds) {
            assert!((sigma - 0.01 * sd).abs() < 1e-12);
        }
        // the noisy inputs differ from clean but only slightly
        let mut max_dev: f64 = 0.0;
        for k in 0..setup.inputs.len() {
            for (a, b) in setup.inputs.row(k).iter().zip(data.series.row(k)) {
                max_dev = max_dev.max((a - b).abs());
            }
        }
        assert!(max_dev > 0.0);
        assert!(max_dev < 1.0);
    }

    #[test]
    fn embedded_setup_uses_delay_windows() {
        let mut m = tiny_traffic();
        m.normalize = false;
        let data = prepare_data(&m).unwrap();
        let setup = build_trial_setup(&m, &data, RngSeed::new(1)).unwrap();
        assert!(setup.embedded);
        assert_eq!(setup.input_dim, 4);
        assert_eq!(setup.output_dim, 1);
        // train 60 samples, warmup 3: 57 windows, last held out for priming
        assert_eq!(setup.inputs.len(), 56);
        assert_eq!(setup.targets.len(), 56);
        // window row 0 is [s3, s2, s1, s0]; its target is s4
        let s = |k: usize| data.series.values()[(k, 0)];
        assert_eq!(setup.inputs.row(0), vec![s(3), s(2), s(1), s(0)]);
        assert_eq!(setup.targets.row(0), vec![s(4)]);
        assert_eq!(setup.prime, vec![s(59), s(58), s(57), s(56)]);
        assert_eq!(setup.truth.row(0), vec![s(60)]);
    }

    #[test]
    fn normalization_standardizes_inputs_and_keeps_truth_raw() {
        let mut m = tiny_lorenz();
        m.sigma_v = Some(0.0);
        let data = prepare_data(&m).unwrap();
        let setup = build_trial_setup(&m, &data, RngSeed::new(1)).unwrap();
        assert!(setup.normalizer.is_some(), "normalizer stored");
        // model-facing inputs are z-scored per channel
        let n = setup.inputs.len() as f64;
        let stds = setup.inputs.channel_std();
        for d in 0..3 {
            let mean: f64 = (0..setup.inputs.len())
                .map(|k| setup.inputs.row(k)[d])
                .sum::<f64>()
                / n;
            assert!(mean.abs() < 0.15, "channel {d} mean {mean}");
            assert!((stds[d] - 1.0).abs() < 0.15, "channel {d} std {}", stds[d]);
        }
        // truth is untouched raw data; denormalize inverts the model-space map
        assert_eq!(setup.truth.row(0), data.series.row(120));
        let restored = setup.denormalize(setup.inputs.clone()).unwrap();
        for k in 0..restored.len() {
            for (a, b) in restored.row(k).iter().zip(data.series.row(k)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ablation_runs_grid_and_aggregates() {
        let mut m = tiny_lorenz();
        m.block_sizes = vec![2, 3];
        let report = run_ablation(&m).unwrap();
        assert_eq!(report.records.len(), 2 * 2 * 2);
        assert!(report.records.iter().all(|r| r.succeeded()));
        assert_eq!(report.summary.len(), 4);
        let keys: Vec<(Variant, usize)> = report
            .summary
            .iter()
            .map(|g| (g.variant, g.block_size))
            .collect();
        assert_eq!(
            keys,
            vec![
                (Variant::Esn, 2),
                (Variant::Esn, 3),
                (Variant::FeatEsn, 2),
                (Variant::FeatEsn, 3),
            ]
        );
        let contributions = report.contributions.as_ref().unwrap();
        assert_eq!(contributions.len(), 7);
        let sample = report.sample.as_ref().unwrap();
        assert_eq!(sample.truth.len(), 10);
        assert_eq!(sample.feat_esn.len(), 10);
        assert_eq!(sample.esn.len(), 10);
        assert_eq!(sample.block_size, 2);
    }

    #[test]
    fn ablation_is_deterministic() {
        let m = tiny_lorenz();
        let a = serde_json::to_string(&run_ablation(&m).unwrap()).unwrap();
        let b = serde_json::to_string(&run_ablation(&m).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trial_seeds_are_all_distinct() {
        let mut m = tiny_lorenz();
        m.block_sizes = vec![2, 3];
        let report = run_ablation(&m).unwrap();
        let mut seeds: Vec<u64> = report
            .records
            .iter()
            .flat_map(|r| [r.data_seed.value(), r.model_seed.value()])
            .collect();
        seeds.sort_unstable();
        seeds.dedup();
        // 4 trials x 2 seeds, shared between the paired variant records
        assert_eq!(seeds.len(), 8);
    }

    #[test]
    fn failed_trials_are_recorded_not_fatal() {
        let mut m = tiny_lorenz();
        m.washout = 10_000;
        let report = run_ablation(&m).unwrap();
        assert!(report.records.iter().all(|r| !r.succeeded()));
        assert!(report.records.iter().all(|r| r.error.is_some()));
        assert!(report.summary.is_empty());
        assert!(report.sample.is_none());
    }

    #[test]
    fn traffic_ablation_runs_embedded() {
        let m = tiny_traffic();
        let report = run_ablation(&m).unwrap();
        assert!(report.records.iter().all(|r| r.succeeded()));
        let sample = report.sample.as_ref().unwrap();
        assert_eq!(sample.truth.len(), 6);
        assert_eq!(sample.truth[0].len(), 1);
        // prefix features over 4 lags
        assert_eq!(report.contributions.as_ref().unwrap().len(), 4);
    }

    #[test]
    fn report_files_roundtrip() {
        let m = tiny_lorenz();
        let report = run_ablation(&m).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let written = write_report_files(&report, dir.path()).unwrap();
        let names: Vec<String> = written
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(
            names,
            vec![
                "report.json",
                "table.txt",
                "trials.csv",
                "summary.csv",
                "contributions.csv",
                "sample.csv"
            ]
        );
        let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
        let loaded: ExperimentReport = serde_json::from_str(&text).unwrap();
        assert_eq!(report, loaded);
        let table = std::fs::read_to_string(dir.path().join("table.txt")).unwrap();
        assert!(table.contains("feat_esn"));
        assert!(table.contains("experiment: lorenz"));
    }

    #[test]
    fn bundle_trains_and_predicts() {
        let m = tiny_lorenz();
        let mut bundle = train_bundle(&m).unwrap();
        assert!(matches!(bundle.doc, ModelDoc::FeatEsn(_)));
        assert!(matches!(bundle.feedback, FeedbackState::Direct));
        let pred = predict_bundle(&mut bundle, 5).unwrap();
        assert_eq!(pred.len(), 5);
        assert_eq!(pred.dim(), 3);
        assert!(pred.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn bundle_matches_ablation_trial_zero() {
        let m = tiny_lorenz();
        let report = run_ablation(&m).unwrap();
        let mut bundle = train_bundle(&m).unwrap();
        let pred = predict_bundle(&mut bundle, m.resolved_horizon()).unwrap();
        let sample = report.sample.unwrap();
        for k in 0..pred.len() {
            assert_eq!(pred.row(k), sample.feat_esn[k]);
        }
    }

    #[test]
    fn esn_bundle_selected_by_manifest() {
        let mut m = tiny_lorenz();
        m.variant = Some(Variant::Esn);
        let bundle = train_bundle(&m).unwrap();
        assert!(matches!(bundle.doc, ModelDoc::Esn(_)));
    }

    #[test]
    fn bundle_roundtrips_and_continues() {
        let m = tiny_traffic();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let bundle = train_bundle(&m).unwrap();
        assert!(matches!(bundle.feedback, FeedbackState::Embedded { .. }));
        save_bundle(&bundle, &path).unwrap();
        let mut loaded = load_bundle(&path).unwrap();
        assert_eq!(bundle, loaded);

        // two short forecasts from the saved state equal one long forecast
        let mut fresh = bundle.clone();
        let long = predict_bundle(&mut fresh, 6).unwrap();
        let first = predict_bundle(&mut loaded, 3).unwrap();
        let second = predict_bundle(&mut loaded, 3).unwrap();
        for k in 0..3 {
            assert_eq!(first.row(k), long.row(k));
            assert_eq!(second.row(k), long.row(k + 3));
        }
    }

    #[test]
    fn predict_zero_steps_is_empty() {
        let m = tiny_lorenz();
        let mut bundle = train_bundle(&m).unwrap();
        let pred = predict_bundle(&mut bundle, 0).unwrap();
        assert_eq!(pred.len(), 0);
        assert_eq!(pred.dim(), 3);
    }

    #[test]
    fn advance_window_tracks_sequence() {
        let window = vec![3.0, 2.0, 1.0];
        let pred = crate::series::TimeSeries::new(
            1.0,
            TimeUnit::Seconds,
            nalgebra::DMatrix::from_row_slice(2, 1, &[4.0, 5.0]),
        )
        .unwrap();
        assert_eq!(advance_window(&window, &pred), vec![5.0, 4.0, 3.0]);
        let long = crate::series::TimeSeries::new(
            1.0,
            TimeUnit::Seconds,
            nalgebra::DMatrix::from_row_slice(4, 1, &[4.0, 5.0, 6.0, 7.0]),
        )
        .unwrap();
        assert_eq!(advance_window(&window, &long), vec![7.0, 6.0, 5.0]);
    }
}
