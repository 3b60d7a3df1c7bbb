//! Experiment driver for the feature-based ESN library.
//!
//! Every command is driven by a JSON manifest and a master seed, and every
//! artifact it writes is reproducible: rerunning a command with the same
//! manifest produces identical bytes (timestamps are confined to a dedicated
//! report field).

use clap::{Parser, Subcommand};
use featesn::harness::{
    load_bundle, predict_bundle, prepare_data, render_summary_table, run_ablation, save_bundle,
    train_bundle, write_long_metrics_csv, write_report_files, ExperimentManifest,
    ExperimentReport,
};
use featesn::io::write_series_with_meta;
use featesn::{Error, RngSeed, TimeSeries};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "featesn",
    version,
    about = "Feature-based echo state network experiments",
    propagate_version = true
)]
struct Cli {
    /// Master seed, overriding the manifest's seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the manifest's `out` path
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for ablation trials (0 = one per core)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the experiment's source data as CSV plus a metadata sidecar
    Generate {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train one model on the first block size and save it
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Model file to write (default: <out>/model.json)
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Load a trained model and forecast ahead, closed loop
    Predict {
        /// Model file written by `train`
        #[arg(long)]
        model: PathBuf,
        /// Steps to forecast (default: the manifest's horizon)
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Run the full Monte Carlo comparison grid and write a report
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Re-render a saved report as a table and plot-ready CSV
    Report {
        /// report.json written by `ablate`
        #[arg(long)]
        report: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        // ignore failure: the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(if e.is_config() { 2 } else { 3 });
    }
}

fn run(cli: &Cli) -> featesn::Result<()> {
    match &cli.command {
        Command::Generate { manifest } => cmd_generate(cli, manifest),
        Command::Train { manifest, model } => cmd_train(cli, manifest, model.as_deref()),
        Command::Predict { model, horizon } => cmd_predict(cli, model, *horizon),
        Command::Ablate { manifest } => cmd_ablate(cli, manifest),
        Command::Report { report } => cmd_report(cli, report),
    }
}

fn load_manifest(cli: &Cli, path: &Path) -> featesn::Result<ExperimentManifest> {
    let mut manifest = ExperimentManifest::load(path)?;
    if let Some(seed) = cli.seed {
        manifest.seed = RngSeed::new(seed);
    }
    if let Some(out) = &cli.out {
        manifest.out = Some(out.clone());
    }
    Ok(manifest)
}

fn out_dir(manifest: &ExperimentManifest) -> featesn::Result<PathBuf> {
    let dir = manifest.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn cmd_generate(cli: &Cli, manifest_path: &Path) -> featesn::Result<()> {
    let manifest = load_manifest(cli, manifest_path)?;
    let data = prepare_data(&manifest)?;
    let dir = out_dir(&manifest)?;
    let path = dir.join(format!("{}.csv", manifest.experiment));
    write_series_with_meta(&data.series, &path, &data.meta)?;
    println!(
        "wrote {} ({} samples x {} channels)",
        path.display(),
        data.series.len(),
        data.series.dim()
    );
    Ok(())
}

fn cmd_train(cli: &Cli, manifest_path: &Path, model_path: Option<&Path>) -> featesn::Result<()> {
    let manifest = load_manifest(cli, manifest_path)?;
    let bundle = train_bundle(&manifest)?;
    let path = match model_path {
        Some(p) => p.to_path_buf(),
        None => out_dir(&manifest)?.join("model.json"),
    };
    save_bundle(&bundle, &path)?;
    println!(
        "trained {} (b = {}) on {} samples, one-step training NRMSE {:.6}",
        manifest.resolved_variant(),
        manifest.block_sizes[0],
        manifest.resolved_train_len(),
        bundle.train_nrmse
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_predict(cli: &Cli, model_path: &Path, horizon: Option<usize>) -> featesn::Result<()> {
    let mut bundle = load_bundle(model_path)?;
    if let Some(seed) = cli.seed {
        bundle.manifest.seed = RngSeed::new(seed);
    }
    if let Some(out) = &cli.out {
        bundle.manifest.out = Some(out.clone());
    }
    let steps = horizon.unwrap_or_else(|| bundle.manifest.resolved_horizon());
    let truth = lookup_truth(&bundle.manifest, steps);
    let prediction = predict_bundle(&mut bundle, steps)?;
    let dir = out_dir(&bundle.manifest)?;
    let path = dir.join("forecast.csv");
    write_forecast_csv(&path, &prediction, truth.as_ref())?;
    println!("wrote {} ({} steps)", path.display(), steps);
    Ok(())
}

/// The clean continuation of the training window, when the manifest can
/// still produce it (generated data, or a data file that is present and long
/// enough).
fn lookup_truth(manifest: &ExperimentManifest, steps: usize) -> Option<TimeSeries> {
    let data = prepare_data(manifest).ok()?;
    let start = manifest.resolved_train_len();
    if start + steps > data.series.len() {
        return None;
    }
    data.series.slice(start..start + steps).ok()
}

fn write_forecast_csv(
    path: &Path,
    prediction: &TimeSeries,
    truth: Option<&TimeSeries>,
) -> featesn::Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(Error::from)?;
    let dim = prediction.dim();
    let mut header = vec!["step".to_string()];
    for c in 1..=dim {
        header.push(format!("pred_{c}"));
    }
    if truth.is_some() {
        for c in 1..=dim {
            header.push(format!("truth_{c}"));
        }
    }
    writer.write_record(&header)?;
    for k in 0..prediction.len() {
        let mut row = vec![k.to_string()];
        for v in prediction.row(k) {
            row.push(format!("{v}"));
        }
        if let Some(t) = truth {
            for v in t.row(k) {
                row.push(format!("{v}"));
            }
        }
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn cmd_ablate(cli: &Cli, manifest_path: &Path) -> featesn::Result<()> {
    let manifest = load_manifest(cli, manifest_path)?;
    let mut report = run_ablation(&manifest)?;
    report.generated_at = Some(chrono::Utc::now().to_rfc3339());
    let dir = out_dir(&manifest)?;
    let written = write_report_files(&report, &dir)?;
    print!("{}", render_summary_table(&report));
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_report(cli: &Cli, report_path: &Path) -> featesn::Result<()> {
    let text = std::fs::read_to_string(report_path).map_err(|e| Error::io(report_path, e))?;
    let report: ExperimentReport =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", report_path.display())))?;
    if report.records.is_empty() {
        return Err(Error::Data(format!(
            "{}: report contains no trial records",
            report_path.display()
        )));
    }
    print!("{}", render_summary_table(&report));
    if let Some(out) = &cli.out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let path = out.join("metrics_long.csv");
        write_long_metrics_csv(&report, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
