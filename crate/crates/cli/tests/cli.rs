//! End-to-end tests of the command-line surface: every command runs against
//! real files, outputs are deterministic, inputs are never mutated, and
//! exit codes follow the 0/1/2 contract.

use std::fs;
use std::path::Path;
use std::process::Command;

use eegfuse::engine::{init_params, save_checkpoint, Arch};
use eegfuse::featio::{
    load_features, save_raw, DatasetManifest, RawDataset, RawWindow,
};
use ndarray::Array2;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_eegfuse"))
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    fs::write(
        &path,
        "batch = 6\nmax_epochs = 3\net = 1\nheads = 4\neval_views = 1\n",
    )
    .unwrap();
    path
}

fn synth_tiny(dir: &Path, seed: u64) -> std::path::PathBuf {
    let out = dir.join(format!("data_{seed}.bin"));
    let status = bin()
        .args([
            "synth",
            "--out",
            out.to_str().unwrap(),
            "--subjects",
            "4",
            "--trials",
            "3",
            "--segments",
            "3",
            "--channels",
            "6",
            "--bands",
            "2",
            "--classes",
            "3",
            "--seed",
            &seed.to_string(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    out
}

#[test]
fn synth_is_deterministic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_tiny(dir.path(), 7);
    let ds = load_features(&a).unwrap();
    assert_eq!(ds.records.len(), 4 * 3 * 3);
    let b_path = dir.path().join("data_again.bin");
    let status = bin()
        .args([
            "synth", "--out", b_path.to_str().unwrap(), "--subjects", "4", "--trials", "3",
            "--segments", "3", "--channels", "6", "--bands", "2", "--classes", "3",
            "--seed", "7",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b_path).unwrap());
}

#[test]
fn synth_reports_record_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("big.bin");
    let output = bin()
        .args([
            "synth", "--out", out.to_str().unwrap(), "--subjects", "15", "--trials", "15",
            "--segments", "20", "--channels", "4", "--bands", "2",
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("4500 records"), "stdout: {text}");
}

#[test]
fn train_writes_metrics_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_tiny(dir.path(), 1);
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let before = fs::read(&data).unwrap();
    let status = bin()
        .args([
            "train",
            "--dataset",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--n-unlabeled",
            "1",
            "--config",
            cfg.to_str().unwrap(),
            "--jobs",
            "2",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    // input untouched
    assert_eq!(before, fs::read(&data).unwrap());
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    // 4 folds + summary + comment + header
    assert_eq!(metrics.lines().count(), 7);
    for t in 0..4 {
        assert!(out.join(format!("fold_{t:02}_split.json")).exists());
        assert!(out.join(format!("fold_{t:02}_checkpoint.bin")).exists());
        assert!(out.join(format!("fold_{t:02}_log.json")).exists());
    }
    assert!(out.join("run_config.txt").exists());
}

#[test]
fn train_metrics_bytes_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_tiny(dir.path(), 2);
    let cfg = tiny_config(dir.path());
    let mut outputs = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("run{run}"));
        let status = bin()
            .args([
                "train",
                "--dataset",
                data.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--n-unlabeled",
                "1",
                "--seed",
                "9",
                "--config",
                cfg.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(fs::read(out.join("metrics.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn ablate_flag_tags_summary_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_tiny(dir.path(), 3);
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let status = bin()
        .args([
            "train",
            "--dataset",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--n-unlabeled",
            "1",
            "--ablate",
            "no_disc",
            "--config",
            cfg.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let summary = metrics.lines().find(|l| l.contains("summary")).unwrap();
    assert!(summary.starts_with("no_disc,"), "summary row: {summary}");
}

#[test]
fn et_sweep_writes_one_summary_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_tiny(dir.path(), 4);
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let status = bin()
        .args([
            "train",
            "--dataset",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--n-unlabeled",
            "1",
            "--et-sweep",
            "0,1,3",
            "--config",
            cfg.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let sweep = fs::read_to_string(out.join("sweep_summary.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 4, "{sweep}");
    assert!(sweep.lines().nth(1).unwrap().starts_with("full,0,"));
    assert!(sweep.lines().nth(2).unwrap().starts_with("full,1,"));
    assert!(sweep.lines().nth(3).unwrap().starts_with("full,3,"));
}

#[test]
fn extract_roundtrip_from_raw() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = DatasetManifest {
        n_subjects: 2,
        n_trials_per_subject: 1,
        channels: vec!["A".into(), "B".into()],
        bands: DatasetManifest::standard_bands(),
        fs: 128.0,
        n_classes: 2,
    };
    let mut windows = Vec::new();
    for subject in 0..2u16 {
        for segment in 0..3u32 {
            windows.push(RawWindow {
                subject,
                trial: 0,
                segment,
                samples: Array2::from_shape_fn((2, 128), |(c, t)| {
                    ((t as f64) * 0.13 + c as f64 + subject as f64 * 0.7).sin()
                }),
                label: Some(subject),
            });
        }
    }
    let raw_path = dir.path().join("raw.bin");
    save_raw(&RawDataset { manifest, windows }, &raw_path).unwrap();
    let out = dir.path().join("features.bin");
    let status = bin()
        .args([
            "extract",
            "--raw",
            raw_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--smooth",
            "kalman",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let ds = load_features(&out).unwrap();
    assert_eq!(ds.records.len(), 6);
    assert_eq!(ds.records[0].de.dim(), (2, 5));
}

#[test]
fn embed_plot_is_pixel_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_tiny(dir.path(), 5);
    let ds = load_features(&data).unwrap();
    let arch = Arch {
        n_channels: 6,
        n_bands: 2,
        n_classes: 3,
        drop_count: 2,
        cheb_order: 3,
        n_heads: 4,
    };
    let params = init_params(&arch, 11);
    let ckpt = dir.path().join("model.ckpt");
    save_checkpoint(&arch, &params, &ckpt).unwrap();
    let _ = ds;
    let mut images = Vec::new();
    for run in 0..2 {
        let img = dir.path().join(format!("plot{run}.png"));
        let status = bin()
            .args([
                "embed-plot",
                "--checkpoint",
                ckpt.to_str().unwrap(),
                "--dataset",
                data.to_str().unwrap(),
                "--target-subject",
                "0",
                "--n-unlabeled",
                "1",
                "--stage",
                "final",
                "--seed",
                "3",
                "--out",
                img.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
        images.push(fs::read(&img).unwrap());
    }
    assert_eq!(images[0], images[1]);
    // png magic + embedded metadata chunk
    assert_eq!(&images[0][1..4], b"PNG");
    let hay = images[0].windows(12).any(|w| w == b"run_metadata");
    assert!(hay, "metadata text chunk missing");
}

#[test]
fn embed_plot_tiny_input_falls_back_to_pca() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tiny.bin");
    let status = bin()
        .args([
            "synth", "--out", out.to_str().unwrap(), "--subjects", "2", "--trials", "1",
            "--segments", "1", "--channels", "6", "--bands", "2", "--classes", "2",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let arch = Arch {
        n_channels: 6,
        n_bands: 2,
        n_classes: 2,
        drop_count: 2,
        cheb_order: 3,
        n_heads: 4,
    };
    let params = init_params(&arch, 1);
    let ckpt = dir.path().join("model.ckpt");
    save_checkpoint(&arch, &params, &ckpt).unwrap();
    let img = dir.path().join("tiny.png");
    let output = bin()
        .args([
            "embed-plot",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--dataset",
            out.to_str().unwrap(),
            "--target-subject",
            "0",
            "--n-unlabeled",
            "0",
            "--out",
            img.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("principal directions"));
    assert!(img.exists());
}

#[test]
fn report_merges_two_variants() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_tiny(dir.path(), 6);
    let cfg = tiny_config(dir.path());
    let metrics_dir = dir.path().join("metrics");
    fs::create_dir_all(&metrics_dir).unwrap();
    for (variant, flag) in [("full", None), ("no_disc", Some("no_disc"))] {
        let out = dir.path().join(format!("run_{variant}"));
        let mut args = vec![
            "train".to_string(),
            "--dataset".into(),
            data.to_str().unwrap().into(),
            "--out".into(),
            out.to_str().unwrap().into(),
            "--n-unlabeled".into(),
            "1".into(),
            "--config".into(),
            cfg.to_str().unwrap().into(),
        ];
        if let Some(f) = flag {
            args.push("--ablate".into());
            args.push(f.into());
        }
        let status = bin().args(&args).status().unwrap();
        assert!(status.success());
        fs::copy(out.join("metrics.csv"), metrics_dir.join(format!("metrics_{variant}.csv")))
            .unwrap();
    }
    let output = bin()
        .args(["report", "--metrics-dir", metrics_dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(output.status.success());
    let text: String = String::from_utf8_lossy(&output.stdout).into();
    assert!(text.contains("full"));
    assert!(text.contains("no_disc"));
    // mean±std percent cells like 43.75±06.25
    assert!(text.contains('±'), "{text}");
    assert!(metrics_dir.join("report.csv").exists());
    assert!(metrics_dir.join("report.txt").exists());
}

#[test]
fn exit_codes_follow_contract() {
    let dir = tempfile::tempdir().unwrap();
    // config error: unknown ablation
    let data = synth_tiny(dir.path(), 8);
    let status = bin()
        .args([
            "train",
            "--dataset",
            data.to_str().unwrap(),
            "--out",
            dir.path().join("x").to_str().unwrap(),
            "--ablate",
            "no_such_thing",
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    // config error: n_unlabeled out of range
    let status = bin()
        .args([
            "train",
            "--dataset",
            data.to_str().unwrap(),
            "--out",
            dir.path().join("y").to_str().unwrap(),
            "--n-unlabeled",
            "9",
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    // runtime failure: missing dataset file
    let status = bin()
        .args([
            "train",
            "--dataset",
            dir.path().join("missing.bin").to_str().unwrap(),
            "--out",
            dir.path().join("z").to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    // clap-level parse error
    let status = bin().args(["train", "--no-such-flag"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
}
