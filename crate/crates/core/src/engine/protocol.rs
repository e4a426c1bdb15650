//! Leave-one-subject-out protocol orchestration: one fold per subject,
//! deterministic parallel execution, and result persistence.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::metrics::{render_metrics_csv, FoldRow, RunMeta};
use super::params::save_checkpoint;
use super::train::{train_fold, FoldResult};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::featio::{partition_loso, Dataset};

/// Aggregate outcome of a full protocol run.
#[derive(Debug)]
pub struct ProtocolResult {
    pub mean_acc: f64,
    pub std_acc: f64,
    pub folds: Vec<FoldResult>,
    /// (target subject, error message) for folds that failed.
    pub failures: Vec<(u16, String)>,
}

/// Geometry tag recorded in metrics files.
pub fn dataset_tag(dataset: &Dataset) -> String {
    format!(
        "s{}_ch{}_b{}_c{}",
        dataset.subjects().len(),
        dataset.manifest.n_channels(),
        dataset.manifest.n_bands(),
        dataset.manifest.n_classes
    )
}

/// Run one fold per subject. Split manifests, per-fold logs, checkpoints,
/// snapshots, and the metrics CSV land in `out_dir` when given. `jobs`
/// bounds worker threads; results merge in subject order regardless.
pub fn run_protocol(
    dataset: &Dataset,
    n_unlabeled: usize,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    jobs: usize,
) -> Result<ProtocolResult> {
    cfg.validate()?;
    dataset.validate()?;
    let subjects = dataset.subjects();
    if subjects.len() < 3 {
        return Err(Error::Config(format!(
            "protocol needs at least 3 subjects, dataset has {}",
            subjects.len()
        )));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }

    // partition up front so split manifests exist even if training fails
    let mut splits = Vec::with_capacity(subjects.len());
    for &target in &subjects {
        let split = partition_loso(dataset, target, n_unlabeled, cfg.seed)?;
        if let Some(dir) = out_dir {
            let manifest = split.manifest(n_unlabeled);
            let json = serde_json::to_string_pretty(&manifest)
                .map_err(|e| Error::Input(e.to_string()))?;
            fs::write(dir.join(format!("fold_{target:02}_split.json")), json)?;
        }
        splits.push(split);
    }

    let jobs = jobs.max(1).min(splits.len());
    let results: Vec<Result<FoldResult>> = if jobs == 1 {
        splits.iter().map(|s| train_fold(s, &dataset.manifest, cfg)).collect()
    } else {
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<FoldResult>>>> =
            splits.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..jobs {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= splits.len() {
                        break;
                    }
                    let r = train_fold(&splits[i], &dataset.manifest, cfg);
                    *slots[i].lock().expect("fold slot") = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("fold slot").expect("fold executed"))
            .collect()
    };

    let mut folds = Vec::new();
    let mut failures = Vec::new();
    let mut rows = Vec::new();
    for (split, result) in splits.iter().zip(results) {
        match result {
            Ok(fold) => {
                rows.push(FoldRow {
                    target_subject: fold.target_subject,
                    accuracy: fold.accuracy,
                    recalls: fold.recalls(),
                    error: None,
                });
                folds.push(fold);
            }
            Err(e) => {
                rows.push(FoldRow {
                    target_subject: split.target_subject,
                    accuracy: 0.0,
                    recalls: Vec::new(),
                    error: Some(e.to_string()),
                });
                failures.push((split.target_subject, e.to_string()));
            }
        }
    }

    let accs: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
    let mean_acc = if accs.is_empty() { 0.0 } else { accs.iter().sum::<f64>() / accs.len() as f64 };
    let std_acc = if accs.is_empty() {
        0.0
    } else {
        (accs.iter().map(|a| (a - mean_acc) * (a - mean_acc)).sum::<f64>() / accs.len() as f64)
            .sqrt()
    };

    if let Some(dir) = out_dir {
        for fold in &folds {
            save_checkpoint(
                &fold.arch,
                &fold.params,
                dir.join(format!("fold_{:02}_checkpoint.bin", fold.target_subject)),
            )?;
            let log = serde_json::to_string_pretty(&fold.epoch_logs)
                .map_err(|e| Error::Input(e.to_string()))?;
            fs::write(dir.join(format!("fold_{:02}_log.json", fold.target_subject)), log)?;
            if !fold.snapshots.is_empty() {
                let snaps = serde_json::to_string(&fold.snapshots)
                    .map_err(|e| Error::Input(e.to_string()))?;
                fs::write(
                    dir.join(format!("fold_{:02}_snapshots.json", fold.target_subject)),
                    snaps,
                )?;
            }
        }
        let meta = RunMeta {
            variant: cfg.ablations.variant_name(),
            n_unlabeled,
            et: cfg.et,
            seed: cfg.seed,
            dataset_tag: dataset_tag(dataset),
        };
        fs::write(
            dir.join("metrics.csv"),
            render_metrics_csv(&meta, &rows, mean_acc, std_acc),
        )?;
    }

    Ok(ProtocolResult { mean_acc, std_acc, folds, failures })
}
