//! Metrics CSV emission/parsing and the consolidated report table.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Identity of one protocol run, embedded in its metrics file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub variant: String,
    pub n_unlabeled: usize,
    pub et: usize,
    pub seed: u64,
    /// Geometry tag, e.g. "s5_ch16_b5_c3"; report merging demands agreement.
    pub dataset_tag: String,
}

/// One fold's row in a metrics file.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldRow {
    pub target_subject: u16,
    pub accuracy: f64,
    pub recalls: Vec<f64>,
    pub error: Option<String>,
}

/// A parsed metrics file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub meta: RunMeta,
    pub folds: Vec<FoldRow>,
    pub mean_acc: f64,
    pub std_acc: f64,
}

/// Render a metrics CSV: one row per fold plus a summary row.
pub fn render_metrics_csv(
    meta: &RunMeta,
    folds: &[FoldRow],
    mean_acc: f64,
    std_acc: f64,
) -> String {
    let n_classes = folds.iter().map(|f| f.recalls.len()).max().unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# eegfuse-metrics v1 variant={} n={} et={} seed={} dataset={}",
        meta.variant, meta.n_unlabeled, meta.et, meta.seed, meta.dataset_tag
    );
    let mut header = String::from("variant,target_subject,n_unlabeled,et,seed,accuracy,std");
    for c in 0..n_classes {
        let _ = write!(header, ",recall_{c}");
    }
    header.push_str(",error");
    let _ = writeln!(out, "{header}");
    for f in folds {
        let mut row = format!(
            "{},{},{},{},{},",
            meta.variant, f.target_subject, meta.n_unlabeled, meta.et, meta.seed
        );
        match &f.error {
            None => {
                // std column stays empty on fold rows
                let _ = write!(row, "{:.6},,", f.accuracy);
                for c in 0..n_classes {
                    let r = f.recalls.get(c).copied().unwrap_or(0.0);
                    let _ = write!(row, "{r:.6},");
                }
            }
            Some(msg) => {
                row.push_str(",,");
                for _ in 0..n_classes {
                    row.push(',');
                }
                row.push_str(&msg.replace(',', ";"));
            }
        }
        let _ = writeln!(out, "{row}");
    }
    let mut summary = format!(
        "{},summary,{},{},{},{:.6},{:.6}",
        meta.variant, meta.n_unlabeled, meta.et, meta.seed, mean_acc, std_acc
    );
    for _ in 0..n_classes {
        summary.push(',');
    }
    summary.push(',');
    let _ = writeln!(out, "{summary}");
    out
}

/// Parse a metrics CSV produced by [`render_metrics_csv`].
pub fn parse_metrics_csv(text: &str) -> Result<RunMetrics> {
    let mut lines = text.lines();
    let head = lines
        .next()
        .ok_or_else(|| Error::Input("empty metrics file".into()))?;
    if !head.starts_with("# eegfuse-metrics v1 ") {
        return Err(Error::MalformedHeader(format!("not a metrics file: '{head}'")));
    }
    let mut meta = RunMeta {
        variant: String::new(),
        n_unlabeled: 0,
        et: 0,
        seed: 0,
        dataset_tag: String::new(),
    };
    for part in head.trim_start_matches("# eegfuse-metrics v1 ").split_whitespace() {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::MalformedHeader(format!("bad meta field '{part}'")))?;
        match k {
            "variant" => meta.variant = v.to_string(),
            "n" => {
                meta.n_unlabeled =
                    v.parse().map_err(|_| Error::MalformedHeader(format!("bad n '{v}'")))?
            }
            "et" => {
                meta.et =
                    v.parse().map_err(|_| Error::MalformedHeader(format!("bad et '{v}'")))?
            }
            "seed" => {
                meta.seed =
                    v.parse().map_err(|_| Error::MalformedHeader(format!("bad seed '{v}'")))?
            }
            "dataset" => meta.dataset_tag = v.to_string(),
            _ => return Err(Error::MalformedHeader(format!("unknown meta field '{k}'"))),
        }
    }
    let header = lines
        .next()
        .ok_or_else(|| Error::Input("metrics file missing header row".into()))?;
    let n_classes = header.split(',').filter(|c| c.starts_with("recall_")).count();
    let mut folds = Vec::new();
    let mut summary: Option<(f64, f64)> = None;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 7 {
            return Err(Error::Input(format!("short metrics row '{line}'")));
        }
        if cols[1] == "summary" {
            let mean = cols[5]
                .parse()
                .map_err(|_| Error::Input(format!("bad summary mean '{}'", cols[5])))?;
            let std = cols[6]
                .parse()
                .map_err(|_| Error::Input(format!("bad summary std '{}'", cols[6])))?;
            summary = Some((mean, std));
            continue;
        }
        let target: u16 = cols[1]
            .parse()
            .map_err(|_| Error::Input(format!("bad subject '{}'", cols[1])))?;
        let error_col = cols.last().copied().unwrap_or("");
        if !error_col.is_empty() {
            folds.push(FoldRow {
                target_subject: target,
                accuracy: 0.0,
                recalls: Vec::new(),
                error: Some(error_col.to_string()),
            });
            continue;
        }
        let accuracy: f64 = cols[5]
            .parse()
            .map_err(|_| Error::Input(format!("bad accuracy '{}'", cols[5])))?;
        let mut recalls = Vec::with_capacity(n_classes);
        for c in 0..n_classes {
            let cell = cols.get(7 + c).copied().unwrap_or("");
            if !cell.is_empty() {
                recalls.push(
                    cell.parse()
                        .map_err(|_| Error::Input(format!("bad recall '{cell}'")))?,
                );
            }
        }
        folds.push(FoldRow { target_subject: target, accuracy, recalls, error: None });
    }
    let (mean_acc, std_acc) =
        summary.ok_or_else(|| Error::Input("metrics file has no summary row".into()))?;
    Ok(RunMetrics { meta, folds, mean_acc, std_acc })
}

/// Format an accuracy pair as a percent cell, std zero-padded to two
/// integer digits: "85.98±06.21".
pub fn format_cell(mean_acc: f64, std_acc: f64) -> String {
    format!("{:.2}±{:05.2}", 100.0 * mean_acc, 100.0 * std_acc)
}

/// Merge runs into a methods x N table. Returns (csv, aligned text).
pub fn report_table(runs: &[RunMetrics]) -> Result<(String, String)> {
    if runs.is_empty() {
        return Err(Error::Input("no metrics to report".into()));
    }
    let tag = &runs[0].meta.dataset_tag;
    let offenders: Vec<&RunMetrics> =
        runs.iter().filter(|r| &r.meta.dataset_tag != tag).collect();
    if !offenders.is_empty() {
        let names: Vec<String> = offenders
            .iter()
            .map(|r| format!("{} (n={}, dataset={})", r.meta.variant, r.meta.n_unlabeled, r.meta.dataset_tag))
            .collect();
        return Err(Error::Input(format!(
            "metrics files disagree on the dataset: expected '{tag}', offenders: {}",
            names.join(", ")
        )));
    }
    let mut methods: Vec<String> = runs.iter().map(|r| r.meta.variant.clone()).collect();
    methods.sort();
    methods.dedup();
    let mut ns: Vec<usize> = runs.iter().map(|r| r.meta.n_unlabeled).collect();
    ns.sort_unstable();
    ns.dedup();

    let cell = |m: &str, n: usize| -> Option<String> {
        // seeds with the same (variant, N) are pooled over their fold rows
        let mut accs = Vec::new();
        for r in runs.iter().filter(|r| r.meta.variant == m && r.meta.n_unlabeled == n) {
            accs.extend(r.folds.iter().filter(|f| f.error.is_none()).map(|f| f.accuracy));
        }
        if accs.is_empty() {
            return None;
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / accs.len() as f64;
        Some(format_cell(mean, var.sqrt()))
    };

    let mut csv = String::from("method");
    for n in &ns {
        let _ = write!(csv, ",N={n}");
    }
    csv.push('\n');
    for m in &methods {
        let _ = write!(csv, "{m}");
        for n in &ns {
            let _ = write!(csv, ",{}", cell(m, *n).unwrap_or_default());
        }
        csv.push('\n');
    }

    let width = methods.iter().map(|m| m.len()).max().unwrap_or(6).max(6) + 2;
    let mut text = format!("{:width$}", "method", width = width);
    for n in &ns {
        let _ = write!(text, "{:>13}", format!("N={n}"));
    }
    text.push('\n');
    for m in &methods {
        let _ = write!(text, "{m:width$}", width = width);
        for n in &ns {
            let _ = write!(text, "{:>13}", cell(m, *n).unwrap_or_default());
        }
        text.push('\n');
    }
    Ok((csv, text))
}

/// Read every metrics CSV in a directory.
pub fn load_metrics_dir(dir: impl AsRef<Path>) -> Result<Vec<RunMetrics>> {
    let mut files: Vec<_> = fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_file()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .map(|n| n.ends_with(".csv") && n.contains("metrics"))
                    .unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Input(format!(
            "{}: no metrics CSV files found",
            dir.as_ref().display()
        )));
    }
    files
        .iter()
        .map(|f| parse_metrics_csv(&fs::read_to_string(f)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_run(variant: &str, n: usize, accs: &[f64]) -> RunMetrics {
        let folds: Vec<FoldRow> = accs
            .iter()
            .enumerate()
            .map(|(i, &a)| FoldRow {
                target_subject: i as u16,
                accuracy: a,
                recalls: vec![a, a, a],
                error: None,
            })
            .collect();
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / accs.len() as f64;
        RunMetrics {
            meta: RunMeta {
                variant: variant.into(),
                n_unlabeled: n,
                et: 30,
                seed: 1,
                dataset_tag: "s5_ch16_b5_c3".into(),
            },
            folds,
            mean_acc: mean,
            std_acc: var.sqrt(),
        }
    }

    #[test]
    fn csv_roundtrip() {
        let run = sample_run("full", 2, &[0.8, 0.9, 0.7, 0.85, 0.75]);
        let text = render_metrics_csv(&run.meta, &run.folds, run.mean_acc, run.std_acc);
        let back = parse_metrics_csv(&text).unwrap();
        assert_eq!(back.meta, run.meta);
        assert_eq!(back.folds.len(), 5);
        assert!((back.mean_acc - run.mean_acc).abs() < 1e-6);
        for (a, b) in back.folds.iter().zip(run.folds.iter()) {
            assert!((a.accuracy - b.accuracy).abs() < 1e-6);
            assert_eq!(a.recalls.len(), 3);
        }
    }

    #[test]
    fn failed_fold_row_preserved() {
        let meta = sample_run("full", 2, &[0.8]).meta;
        let folds = vec![FoldRow {
            target_subject: 3,
            accuracy: 0.0,
            recalls: vec![],
            error: Some("numeric error: blew up".into()),
        }];
        let text = render_metrics_csv(&meta, &folds, 0.0, 0.0);
        let back = parse_metrics_csv(&text).unwrap();
        assert!(back.folds[0].error.as_deref().unwrap().contains("blew up"));
    }

    #[test]
    fn cell_format_zero_pads_std() {
        assert_eq!(format_cell(0.8598, 0.0621), "85.98±06.21");
        assert_eq!(format_cell(0.5, 0.104), "50.00±10.40");
    }

    #[test]
    fn report_orders_n_ascending() {
        let runs = vec![
            sample_run("full", 4, &[0.7, 0.72]),
            sample_run("full", 1, &[0.8, 0.82]),
            sample_run("no_disc", 1, &[0.6, 0.62]),
        ];
        let (csv, text) = report_table(&runs).unwrap();
        let header = csv.lines().next().unwrap();
        assert_eq!(header, "method,N=1,N=4");
        assert!(text.contains("full"));
        assert!(text.contains("no_disc"));
        // single run -> single-row table
        let (csv1, _) = report_table(&runs[..1]).unwrap();
        assert_eq!(csv1.lines().count(), 2);
    }

    #[test]
    fn conflicting_dataset_tags_listed() {
        let mut runs = vec![sample_run("full", 1, &[0.8])];
        let mut other = sample_run("no_disc", 1, &[0.6]);
        other.meta.dataset_tag = "s9_ch62_b5_c3".into();
        runs.push(other);
        let err = report_table(&runs).unwrap_err();
        assert!(err.to_string().contains("no_disc"));
    }
}
