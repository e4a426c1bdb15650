//! Command-line surface: dataset synthesis, feature extraction, protocol
//! training, ablation sweeps, embedding plots, and report generation.

mod plot;
mod runconfig;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use eegfuse::config::{Ablations, TrainConfig};
use eegfuse::engine::{
    dataset_tag, eval_records, load_checkpoint, run_protocol, SnapshotPoint,
};
use eegfuse::error::Error;
use eegfuse::featio::{
    extract_de, generate_synthetic, load_features, load_raw, partition_loso, save_features,
    smooth_dataset, Dataset, FeatureRecord, SmoothMethod, SynthConfig,
};
use eegfuse::fusion::CeMode;
use eegfuse::tsne::{embed_2d, TsneConfig};
use runconfig::RunConfig;

#[derive(Parser)]
#[command(
    name = "eegfuse",
    about = "Semi-supervised dual-stream EEG emotion recognition pipeline",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cross-subject feature dataset.
    Synth(SynthArgs),
    /// Extract DE features from a raw-signal container.
    Extract(ExtractArgs),
    /// Run the leave-one-subject-out protocol on a feature dataset.
    Train(TrainArgs),
    /// Run the full model plus every single-component ablation.
    Ablate(TrainArgs),
    /// Embed fused features in 2-D and render a scatter plot.
    EmbedPlot(EmbedArgs),
    /// Merge metrics files into a methods x N accuracy table.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 15)]
    subjects: usize,
    #[arg(long, default_value_t = 15)]
    trials: usize,
    #[arg(long, default_value_t = 20)]
    segments: usize,
    #[arg(long, default_value_t = 62)]
    channels: usize,
    #[arg(long, default_value_t = 5)]
    bands: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 0.5)]
    shift: f64,
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
}

#[derive(Args)]
struct ExtractArgs {
    /// Raw-signal container produced by an acquisition pipeline.
    #[arg(long)]
    raw: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// "kalman", "movavg", or "none".
    #[arg(long, default_value = "kalman")]
    smooth: String,
    /// Observation/process noise ratio for the Kalman smoother.
    #[arg(long, default_value_t = 10.0)]
    kalman_ratio: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_unlabeled: Option<usize>,
    #[arg(long)]
    et: Option<usize>,
    /// Comma-separated E_t values; one protocol run per value.
    #[arg(long)]
    et_sweep: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    /// "inside_log" (literal weighted loss) or "outside_log".
    #[arg(long)]
    ce_mode: Option<String>,
    /// Comma-separated ablations: no_disc, no_contrastive, no_attn_fusion,
    /// no_sample_weights.
    #[arg(long)]
    ablate: Option<String>,
    /// Capture fused-feature embedding snapshots (epochs 0, 30, final).
    #[arg(long)]
    snapshots: bool,
    /// Key-value config file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Target subject of the fold the checkpoint came from.
    #[arg(long)]
    target_subject: u16,
    #[arg(long, default_value_t = 2)]
    n_unlabeled: usize,
    /// Free-form stage label recorded in the image metadata.
    #[arg(long, default_value = "final")]
    stage: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Deterministic subsample cap before the embedding.
    #[arg(long, default_value_t = 2000)]
    max_points: usize,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    metrics_dir: PathBuf,
    /// Output directory for report.csv / report.txt (defaults to
    /// the metrics directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Train(a) => cmd_train(a, false),
        Command::Ablate(a) => cmd_train(a, true),
        Command::EmbedPlot(a) => cmd_embed_plot(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::from(0),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn cmd_synth(a: SynthArgs) -> Result<(), Error> {
    let cfg = SynthConfig {
        n_subjects: a.subjects,
        trials_per_subject: a.trials,
        segments_per_trial: a.segments,
        n_channels: a.channels,
        n_bands: a.bands,
        n_classes: a.classes,
        shift_strength: a.shift,
        noise_sigma: a.noise,
    };
    let ds = generate_synthetic(&cfg, a.seed)?;
    save_features(&ds, &a.out)?;
    println!(
        "wrote {}: {} records ({} subjects x {} trials x {} segments), {} channels x {} bands, {} classes",
        a.out.display(),
        ds.records.len(),
        cfg.n_subjects,
        cfg.trials_per_subject,
        cfg.segments_per_trial,
        cfg.n_channels,
        cfg.n_bands,
        cfg.n_classes
    );
    Ok(())
}

fn cmd_extract(a: ExtractArgs) -> Result<(), Error> {
    let smooth = match a.smooth.as_str() {
        "kalman" => Some(SmoothMethod::Kalman { ratio: a.kalman_ratio }),
        "movavg" => Some(SmoothMethod::MovingAverage { width: 5 }),
        "none" => None,
        other => return Err(Error::Config(format!("unknown smoothing method '{other}'"))),
    };
    let raw = load_raw(&a.raw)?;
    let mut records = Vec::with_capacity(raw.windows.len());
    for w in &raw.windows {
        records.push(FeatureRecord {
            subject: w.subject,
            trial: w.trial,
            segment: w.segment,
            de: extract_de(&w.samples, &raw.manifest)?,
            label: w.label,
        });
    }
    let mut ds = Dataset { manifest: raw.manifest.clone(), records };
    if let Some(method) = smooth {
        smooth_dataset(&mut ds, &method)?;
    }
    save_features(&ds, &a.out)?;
    println!("wrote {}: {} feature records", a.out.display(), ds.records.len());
    Ok(())
}

fn apply_train_flags(run: &mut RunConfig, a: &TrainArgs) -> Result<(), Error> {
    if let Some(p) = &a.dataset {
        run.dataset = Some(p.clone());
    }
    if let Some(p) = &a.out {
        run.out = Some(p.clone());
    }
    if let Some(n) = a.n_unlabeled {
        run.n_unlabeled = n;
    }
    if let Some(et) = a.et {
        run.train.et = et;
    }
    if let Some(sweep) = &a.et_sweep {
        run.apply("et_sweep", sweep)?;
    }
    if let Some(e) = a.epochs {
        run.train.max_epochs = e;
    }
    if let Some(b) = a.batch {
        run.train.batch_size = b;
    }
    if let Some(s) = a.seed {
        run.train.seed = s;
    }
    if let Some(j) = a.jobs {
        run.jobs = j;
    }
    if let Some(m) = &a.ce_mode {
        run.train.ce_mode = CeMode::parse(m)?;
    }
    if let Some(list) = &a.ablate {
        run.train.ablations = Ablations::parse_list(list)?;
    }
    if a.snapshots {
        run.train.snapshots = true;
    }
    run.validate()
}

fn run_one_protocol(
    ds: &Dataset,
    run: &RunConfig,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<(f64, f64, usize), Error> {
    let result = run_protocol(ds, run.n_unlabeled, cfg, Some(out_dir), run.jobs)?;
    for (subject, msg) in &result.failures {
        eprintln!("fold {subject} failed: {msg}");
    }
    println!(
        "variant={} et={} N={} seed={}: mean accuracy {:.4} ± {:.4} over {} folds{}",
        cfg.ablations.variant_name(),
        cfg.et,
        run.n_unlabeled,
        cfg.seed,
        result.mean_acc,
        result.std_acc,
        result.folds.len(),
        if result.failures.is_empty() {
            String::new()
        } else {
            format!(" ({} failed)", result.failures.len())
        }
    );
    if !result.failures.is_empty() {
        return Err(Error::Numeric(format!("{} folds failed", result.failures.len())));
    }
    Ok((result.mean_acc, result.std_acc, result.folds.len()))
}

fn cmd_train(a: TrainArgs, ablation_sweep: bool) -> Result<(), Error> {
    let mut run = RunConfig::default();
    if let Some(cfg_path) = &a.config {
        let text = fs::read_to_string(cfg_path)?;
        run = RunConfig::parse(&text)?;
    }
    apply_train_flags(&mut run, &a)?;
    let dataset_path = run
        .dataset
        .clone()
        .ok_or_else(|| Error::Config("--dataset is required".into()))?;
    let out = run
        .out
        .clone()
        .ok_or_else(|| Error::Config("--out is required".into()))?;
    let ds = load_features(&dataset_path)?;
    let n_subjects = ds.subjects().len();
    if n_subjects < 2 || run.n_unlabeled > n_subjects - 2 {
        return Err(Error::Config(format!(
            "n_unlabeled {} out of range for {} subjects",
            run.n_unlabeled, n_subjects
        )));
    }
    fs::create_dir_all(&out)?;
    fs::write(out.join("run_config.txt"), run.render())?;

    let variants: Vec<Ablations> = if ablation_sweep {
        let mut v = vec![Ablations::default()];
        for name in Ablations::NAMES {
            let mut ab = Ablations::default();
            ab.set(name)?;
            v.push(ab);
        }
        v
    } else {
        vec![run.train.ablations]
    };

    let et_values: Vec<usize> =
        if run.et_sweep.is_empty() { vec![run.train.et] } else { run.et_sweep.clone() };

    let mut sweep_rows = Vec::new();
    for ablations in &variants {
        for &et in &et_values {
            let cfg = TrainConfig { et, ablations: *ablations, ..run.train.clone() };
            let subdir = match (variants.len() > 1, et_values.len() > 1) {
                (false, false) => out.clone(),
                (true, false) => out.join(ablations.variant_name()),
                (false, true) => out.join(format!("et_{et:03}")),
                (true, true) => out.join(format!("{}_et_{et:03}", ablations.variant_name())),
            };
            let (mean, std, folds) = run_one_protocol(&ds, &run, &cfg, &subdir)?;
            if subdir != out {
                fs::copy(
                    subdir.join("metrics.csv"),
                    out.join(format!(
                        "metrics_{}_et{:03}.csv",
                        ablations.variant_name(),
                        et
                    )),
                )?;
            }
            sweep_rows.push((ablations.variant_name(), et, mean, std, folds));
        }
    }

    if sweep_rows.len() > 1 {
        let mut text = String::from("variant,et,n_unlabeled,mean_accuracy,std_accuracy,folds\n");
        for (variant, et, mean, std, folds) in &sweep_rows {
            text.push_str(&format!(
                "{variant},{et},{},{mean:.6},{std:.6},{folds}\n",
                run.n_unlabeled
            ));
        }
        fs::write(out.join("sweep_summary.csv"), text)?;
        println!("sweep summary written to {}", out.join("sweep_summary.csv").display());
    }
    Ok(())
}

fn cmd_embed_plot(a: EmbedArgs) -> Result<(), Error> {
    let (arch, params) = load_checkpoint(&a.checkpoint)?;
    let ds = load_features(&a.dataset)?;
    eegfuse::engine::params::check_compatible(&arch, &ds.manifest)?;
    let split = partition_loso(&ds, a.target_subject, a.n_unlabeled, a.seed)?;
    let cfg = TrainConfig {
        cheb_order: arch.cheb_order,
        n_heads: arch.n_heads,
        drop_count: Some(arch.drop_count),
        ..TrainConfig::default()
    };

    // deterministic stratified subsample when the pool exceeds max_points
    let mut pool: Vec<(eegfuse::adapt::DomainTag, &FeatureRecord)> = Vec::new();
    for r in &split.s {
        pool.push((eegfuse::adapt::DomainTag::S, r));
    }
    for r in &split.u {
        pool.push((eegfuse::adapt::DomainTag::U, r));
    }
    for r in &split.t {
        pool.push((eegfuse::adapt::DomainTag::T, r));
    }
    let keep_every = pool.len().div_ceil(a.max_points.max(4));
    let kept: Vec<(eegfuse::adapt::DomainTag, &FeatureRecord)> = pool
        .iter()
        .enumerate()
        .filter(|(i, _)| i % keep_every == 0)
        .map(|(_, x)| *x)
        .collect();

    let mut features: Vec<f64> = Vec::new();
    let mut meta: Vec<(eegfuse::adapt::DomainTag, Option<u16>)> = Vec::new();
    for domain in [
        eegfuse::adapt::DomainTag::S,
        eegfuse::adapt::DomainTag::U,
        eegfuse::adapt::DomainTag::T,
    ] {
        let records: Vec<FeatureRecord> = kept
            .iter()
            .filter(|(d, _)| *d == domain)
            .map(|(_, r)| (*r).clone())
            .collect();
        if records.is_empty() {
            continue;
        }
        let out = eval_records(&params, &arch, &cfg, &records, domain)?;
        features.extend(out.fused.iter());
        // labels are plotted when the dataset carries them; unlabeled
        // domains fall back to gray
        meta.extend(records.iter().map(|r| (domain, r.label)));
    }
    let n = meta.len();
    let data = ndarray::Array2::from_shape_vec((n, arch.fused_width()), features)
        .expect("fused feature matrix");
    let emb = embed_2d(&data, &TsneConfig { seed: a.seed, ..TsneConfig::default() })?;
    if emb.pca_fallback {
        eprintln!(
            "warning: {n} points are too few for the embedding; plotted the first two principal directions instead"
        );
    }
    let points: Vec<SnapshotPoint> = emb
        .points
        .iter()
        .zip(meta)
        .map(|(p, (domain, label))| SnapshotPoint {
            x: p[0],
            y: p[1],
            domain: domain.as_str().to_string(),
            label,
        })
        .collect();
    let metadata = format!(
        "{{\"stage\":\"{}\",\"checkpoint\":\"{}\",\"dataset\":\"{}\",\"dataset_tag\":\"{}\",\"target_subject\":{},\"n_unlabeled\":{},\"seed\":{},\"perplexity\":30,\"iterations\":1000,\"points\":{}}}",
        a.stage,
        a.checkpoint.display(),
        a.dataset.display(),
        dataset_tag(&ds),
        a.target_subject,
        a.n_unlabeled,
        a.seed,
        n
    );
    plot::write_scatter(&points, &metadata, &a.out)?;
    println!("wrote {} ({n} points)", a.out.display());
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<(), Error> {
    let runs = eegfuse::engine::metrics::load_metrics_dir(&a.metrics_dir)?;
    let (csv, text) = eegfuse::engine::metrics::report_table(&runs)?;
    let out = a.out.unwrap_or_else(|| a.metrics_dir.clone());
    fs::create_dir_all(&out)?;
    fs::write(out.join("report.csv"), &csv)?;
    fs::write(out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}
