//! Fold training: the staged epoch schedule, batch assembly, evaluation,
//! and embedding snapshots.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{forward, loss_values, total_loss, BatchRow, ForwardMode};
use super::optimizer::RmsProp;
use super::params::{init_params, Arch, ParamStore};
use crate::adapt::{DomainTag, Stage};
use crate::autodiff::Tape;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::featio::{DatasetManifest, DomainSplit, FeatureRecord};
use crate::tsne::{embed_2d, TsneConfig};

/// Per-epoch provenance: stage, row counts per domain, mean loss components.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: u8,
    pub steps: usize,
    pub s_rows: usize,
    pub u_rows: usize,
    pub t_rows: usize,
    pub loss_ce: f64,
    pub loss_disc: f64,
    pub loss_gcn: f64,
    pub loss_gcl: f64,
}

/// One 2-D embedded point with its domain and (if known) class.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SnapshotPoint {
    pub x: f64,
    pub y: f64,
    pub domain: String,
    pub label: Option<u16>,
}

/// Fused-feature embedding captured at one training stage.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EmbeddingSnapshot {
    pub epoch: usize,
    pub points: Vec<SnapshotPoint>,
}

/// Everything produced by one LOSO fold.
#[derive(Debug, Clone)]
pub struct FoldResult {
    pub target_subject: u16,
    pub n_unlabeled: usize,
    pub accuracy: f64,
    /// confusion[true][predicted]
    pub confusion: Vec<Vec<usize>>,
    pub epoch_logs: Vec<EpochLog>,
    pub snapshots: Vec<EmbeddingSnapshot>,
    pub arch: Arch,
    pub params: ParamStore,
}

impl FoldResult {
    /// Per-class recall from the confusion matrix (0 when a class is absent).
    pub fn recalls(&self) -> Vec<f64> {
        self.confusion
            .iter()
            .map(|row| {
                let total: usize = row.iter().sum();
                if total == 0 {
                    0.0
                } else {
                    row[self.confusion.iter().position(|r| std::ptr::eq(r, row)).unwrap()]
                        as f64
                        / total as f64
                }
            })
            .collect()
    }
}

/// Derive an independent ChaCha stream from the run seed and role tags.
pub fn derive_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut x = seed ^ 0x6a09e667f3bcc908;
    for &t in tags {
        x ^= t.wrapping_add(0x9e3779b97f4a7c15).wrapping_add(x << 6).wrapping_add(x >> 2);
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
        x ^= x >> 31;
    }
    ChaCha8Rng::seed_from_u64(x)
}

fn to_row(r: &FeatureRecord, domain: DomainTag) -> BatchRow {
    BatchRow {
        de: r.de.clone(),
        domain,
        // labels cross into a batch only for labeled-source rows
        label: if domain == DomainTag::S { r.label } else { None },
        key: (r.subject, r.trial, r.segment),
    }
}

/// Evaluation outputs for a record list, computed in fixed-composition
/// batches of `batch_size` rows (last partial batch kept).
pub struct EvalOutputs {
    pub logits: Array2<f64>,
    pub fused: Array2<f64>,
}

pub fn eval_records(
    params: &ParamStore,
    arch: &Arch,
    cfg: &TrainConfig,
    records: &[FeatureRecord],
    domain: DomainTag,
) -> Result<EvalOutputs> {
    let mut logits_rows: Vec<f64> = Vec::with_capacity(records.len() * arch.n_classes);
    let mut fused_rows: Vec<f64> = Vec::with_capacity(records.len() * arch.fused_width());
    for chunk in records.chunks(cfg.batch_size) {
        let rows: Vec<BatchRow> = chunk.iter().map(|r| to_row(r, domain)).collect();
        let mut tape = Tape::new();
        let mut mode = ForwardMode::Eval { views: cfg.eval_views };
        let fwd = forward(&mut tape, params, arch, cfg, &rows, Stage::Three, &mut mode)?;
        logits_rows.extend(tape.value(fwd.logits).iter());
        fused_rows.extend(tape.value(fwd.fused).iter());
    }
    Ok(EvalOutputs {
        logits: Array2::from_shape_vec((records.len(), arch.n_classes), logits_rows)
            .expect("logits rows"),
        fused: Array2::from_shape_vec((records.len(), arch.fused_width()), fused_rows)
            .expect("fused rows"),
    })
}

fn capture_snapshot(
    params: &ParamStore,
    arch: &Arch,
    cfg: &TrainConfig,
    split: &DomainSplit,
    epoch: usize,
    seed: u64,
) -> Result<EmbeddingSnapshot> {
    let mut features: Vec<f64> = Vec::new();
    let mut meta: Vec<(DomainTag, Option<u16>)> = Vec::new();
    for (records, domain) in [
        (&split.s, DomainTag::S),
        (&split.u, DomainTag::U),
        (&split.t, DomainTag::T),
    ] {
        if records.is_empty() {
            continue;
        }
        let out = eval_records(params, arch, cfg, records, domain)?;
        features.extend(out.fused.iter());
        meta.extend(records.iter().map(|r| (domain, r.label)));
    }
    let n = meta.len();
    let data = Array2::from_shape_vec((n, arch.fused_width()), features).expect("fused matrix");
    let emb = embed_2d(&data, &TsneConfig { seed, ..TsneConfig::default() })?;
    Ok(EmbeddingSnapshot {
        epoch,
        points: emb
            .points
            .iter()
            .zip(meta)
            .map(|(p, (domain, label))| SnapshotPoint {
                x: p[0],
                y: p[1],
                domain: domain.as_str().to_string(),
                label,
            })
            .collect(),
    })
}

/// Train one fold through the staged schedule and evaluate on the target.
pub fn train_fold(
    split: &DomainSplit,
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
) -> Result<FoldResult> {
    cfg.validate()?;
    if split.s.is_empty() {
        return Err(Error::Protocol("labeled source domain is empty".into()));
    }
    if split.t.is_empty() {
        return Err(Error::Protocol("target domain is empty".into()));
    }
    let arch = Arch::from_manifest(
        manifest,
        cfg.drop_count_for(manifest.n_channels()),
        cfg.cheb_order,
        cfg.n_heads,
    )?;
    let fold_tag = split.target_subject as u64;
    let mut params = init_params(&arch, derive_rng(cfg.seed, &[fold_tag, 1]).random::<u64>());
    let mut opt = RmsProp::new(cfg.lr, &params);

    let n_unlabeled = split.u_subjects.len();
    let snapshot_epochs: Vec<usize> = {
        let mut e = vec![0usize];
        if cfg.snapshots {
            if cfg.max_epochs > 30 {
                e.push(30);
            }
            e.push(cfg.max_epochs);
        }
        e.sort_unstable();
        e.dedup();
        if cfg.snapshots {
            e
        } else {
            Vec::new()
        }
    };

    let mut snapshots = Vec::new();
    if snapshot_epochs.contains(&0) {
        snapshots.push(capture_snapshot(
            &params,
            &arch,
            cfg,
            split,
            0,
            derive_rng(cfg.seed, &[fold_tag, 2, 0]).random::<u64>(),
        )?);
    }

    let mut epoch_logs = Vec::with_capacity(cfg.max_epochs);
    for epoch in 1..=cfg.max_epochs {
        let stage = if split.u.is_empty() || epoch <= cfg.et { Stage::Two } else { Stage::Three };
        let (sb, ub, tb) = match stage {
            Stage::Two => (cfg.batch_size / 2, 0, cfg.batch_size - cfg.batch_size / 2),
            Stage::Three => {
                let third = cfg.batch_size / 3;
                (third, third, third)
            }
        };
        if sb == 0 || tb == 0 || (stage == Stage::Three && ub == 0) {
            return Err(Error::Config(format!(
                "batch size {} is too small for stage {}",
                cfg.batch_size,
                stage.as_u8()
            )));
        }
        let mut shuffle_rng = derive_rng(cfg.seed, &[fold_tag, 3, epoch as u64]);
        let mut s_idx: Vec<usize> = (0..split.s.len()).collect();
        let mut u_idx: Vec<usize> = (0..split.u.len()).collect();
        let mut t_idx: Vec<usize> = (0..split.t.len()).collect();
        s_idx.shuffle(&mut shuffle_rng);
        u_idx.shuffle(&mut shuffle_rng);
        t_idx.shuffle(&mut shuffle_rng);

        let steps = {
            let mut m = (split.s.len() / sb).min(split.t.len() / tb);
            if stage == Stage::Three {
                m = m.min(split.u.len() / ub);
            }
            m
        };
        if steps == 0 {
            return Err(Error::Protocol(format!(
                "epoch {epoch}: domains too small for one batch (S {}, U {}, T {})",
                split.s.len(),
                split.u.len(),
                split.t.len()
            )));
        }

        let mut sums = [0.0f64; 4];
        let mut rows_seen = [0usize; 3];
        for step in 0..steps {
            let mut rows: Vec<BatchRow> = Vec::with_capacity(cfg.batch_size);
            for &i in &s_idx[step * sb..(step + 1) * sb] {
                rows.push(to_row(&split.s[i], DomainTag::S));
            }
            if stage == Stage::Three {
                for &i in &u_idx[step * ub..(step + 1) * ub] {
                    rows.push(to_row(&split.u[i], DomainTag::U));
                }
            }
            for &i in &t_idx[step * tb..(step + 1) * tb] {
                rows.push(to_row(&split.t[i], DomainTag::T));
            }
            rows_seen[0] += sb;
            if stage == Stage::Three {
                rows_seen[1] += ub;
            }
            rows_seen[2] += tb;

            let mut rng = derive_rng(cfg.seed, &[fold_tag, 4, epoch as u64, step as u64]);
            let mut tape = Tape::new();
            let mut mode = ForwardMode::Train { rng: &mut rng };
            let fwd = forward(&mut tape, &params, &arch, cfg, &rows, stage, &mut mode)?;
            let loss = total_loss(&mut tape, &fwd, cfg);
            let values = loss_values(&tape, &fwd);
            sums[0] += values.ce;
            sums[1] += values.disc;
            sums[2] += values.gcn;
            sums[3] += values.gcl;

            let grads = tape.backward(loss);
            let grad_list: Vec<_> = fwd
                .param_nodes
                .iter()
                .enumerate()
                .map(|(i, &n)| grads.get(n, params.tensor(i).shape()))
                .collect();
            opt.step(&mut params, &grad_list)?;
            if let Some(name) = params.first_non_finite() {
                return Err(Error::Numeric(format!(
                    "parameter '{name}' became non-finite at epoch {epoch} step {step}"
                )));
            }
        }

        epoch_logs.push(EpochLog {
            epoch,
            stage: stage.as_u8(),
            steps,
            s_rows: rows_seen[0],
            u_rows: rows_seen[1],
            t_rows: rows_seen[2],
            loss_ce: sums[0] / steps as f64,
            loss_disc: sums[1] / steps as f64,
            loss_gcn: sums[2] / steps as f64,
            loss_gcl: sums[3] / steps as f64,
        });

        if snapshot_epochs.contains(&epoch) {
            snapshots.push(capture_snapshot(
                &params,
                &arch,
                cfg,
                split,
                epoch,
                derive_rng(cfg.seed, &[fold_tag, 2, epoch as u64]).random::<u64>(),
            )?);
        }
    }

    // final evaluation on the target, fixed order, last partial batch kept
    let eval = eval_records(&params, &arch, cfg, &split.t, DomainTag::T)?;
    let mut confusion = vec![vec![0usize; arch.n_classes]; arch.n_classes];
    let mut correct = 0usize;
    for (i, r) in split.t.iter().enumerate() {
        let truth = usize::from(r.label.ok_or_else(|| {
            Error::Protocol("target record is missing its evaluation label".into())
        })?);
        let row = eval.logits.row(i);
        let pred = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
            .map(|(c, _)| c)
            .expect("nonempty logits");
        confusion[truth][pred] += 1;
        if truth == pred {
            correct += 1;
        }
    }
    let accuracy = correct as f64 / split.t.len() as f64;

    Ok(FoldResult {
        target_subject: split.target_subject,
        n_unlabeled,
        accuracy,
        confusion,
        epoch_logs,
        snapshots,
        arch,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featio::{generate_synthetic, partition_loso, SynthConfig};


    fn tiny_setup(n_unlabeled: usize) -> (crate::featio::Dataset, TrainConfig) {
        let ds = generate_synthetic(
            &SynthConfig {
                n_subjects: 4,
                trials_per_subject: 3,
                segments_per_trial: 4,
                n_channels: 6,
                n_bands: 2,
                n_classes: 3,
                shift_strength: 0.4,
                noise_sigma: 0.2,
            },
            31,
        )
        .unwrap();
        let cfg = TrainConfig {
            batch_size: 6,
            max_epochs: 4,
            et: 2,
            n_heads: 4,
            seed: 5,
            ..TrainConfig::default()
        };
        let _ = n_unlabeled;
        (ds, cfg)
    }

    #[test]
    fn boundary_et_equals_max_keeps_stage_two() {
        let (ds, mut cfg) = tiny_setup(1);
        cfg.et = cfg.max_epochs;
        let split = partition_loso(&ds, 0, 1, 0).unwrap();
        let fold = train_fold(&split, &ds.manifest, &cfg).unwrap();
        assert!(fold.epoch_logs.iter().all(|l| l.stage == 2));
        assert!(fold.epoch_logs.iter().all(|l| l.u_rows == 0));
    }

    #[test]
    fn et_zero_is_stage_three_from_epoch_one() {
        let (ds, mut cfg) = tiny_setup(1);
        cfg.et = 0;
        let split = partition_loso(&ds, 0, 1, 0).unwrap();
        let fold = train_fold(&split, &ds.manifest, &cfg).unwrap();
        assert!(fold.epoch_logs.iter().all(|l| l.stage == 3));
        assert!(fold.epoch_logs.iter().all(|l| l.u_rows > 0));
    }

    #[test]
    fn loss_trace_covers_every_epoch_and_marks_switch() {
        let (ds, cfg) = tiny_setup(1);
        let split = partition_loso(&ds, 1, 1, 0).unwrap();
        let fold = train_fold(&split, &ds.manifest, &cfg).unwrap();
        assert_eq!(fold.epoch_logs.len(), cfg.max_epochs);
        for log in &fold.epoch_logs {
            let want = if log.epoch <= cfg.et { 2 } else { 3 };
            assert_eq!(log.stage, want, "epoch {}", log.epoch);
            if log.stage == 2 {
                assert_eq!(log.u_rows, 0);
            }
        }
    }

    #[test]
    fn fold_is_deterministic() {
        let (ds, cfg) = tiny_setup(1);
        let split = partition_loso(&ds, 2, 1, 0).unwrap();
        let a = train_fold(&split, &ds.manifest, &cfg).unwrap();
        let b = train_fold(&split, &ds.manifest, &cfg).unwrap();
        assert_eq!(a.accuracy, b.accuracy);
        assert_eq!(a.epoch_logs, b.epoch_logs);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn confusion_rows_sum_to_class_counts() {
        let (ds, cfg) = tiny_setup(1);
        let split = partition_loso(&ds, 3, 1, 0).unwrap();
        let fold = train_fold(&split, &ds.manifest, &cfg).unwrap();
        for class in 0..3u16 {
            let count = split.t.iter().filter(|r| r.label == Some(class)).count();
            let row_sum: usize = fold.confusion[class as usize].iter().sum();
            assert_eq!(row_sum, count);
        }
        assert!(fold.accuracy >= 0.0 && fold.accuracy <= 1.0);
    }

    #[test]
    fn target_labels_never_influence_training() {
        // scrambling T labels changes nothing about the trained parameters
        let (ds, cfg) = tiny_setup(1);
        let split = partition_loso(&ds, 0, 1, 0).unwrap();
        let mut scrambled = split.clone();
        let mut rng = derive_rng(99, &[7]);
        for r in scrambled.t.iter_mut() {
            r.label = Some(rng.random_range(0..3) as u16);
        }
        let a = train_fold(&split, &ds.manifest, &cfg).unwrap();
        let b = train_fold(&scrambled, &ds.manifest, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.epoch_logs, b.epoch_logs);
    }

    #[test]
    fn empty_labeled_source_rejected() {
        let (ds, cfg) = tiny_setup(1);
        let mut split = partition_loso(&ds, 0, 1, 0).unwrap();
        split.s.clear();
        assert!(matches!(
            train_fold(&split, &ds.manifest, &cfg),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn eval_view_averaging_is_deterministic() {
        let (ds, mut cfg) = tiny_setup(1);
        let split = partition_loso(&ds, 0, 1, 0).unwrap();
        let arch = crate::engine::params::Arch::from_manifest(
            &ds.manifest,
            cfg.drop_count_for(ds.manifest.n_channels()),
            cfg.cheb_order,
            cfg.n_heads,
        )
        .unwrap();
        let params = crate::engine::params::init_params(&arch, 8);
        let one = eval_records(&params, &arch, &cfg, &split.t, DomainTag::T).unwrap();
        cfg.eval_views = 3;
        let avg_a = eval_records(&params, &arch, &cfg, &split.t, DomainTag::T).unwrap();
        let avg_b = eval_records(&params, &arch, &cfg, &split.t, DomainTag::T).unwrap();
        assert_eq!(avg_a.logits, avg_b.logits);
        assert_ne!(one.logits, avg_a.logits);
    }

    #[test]
    fn snapshots_captured_at_requested_epochs() {
        let (ds, mut cfg) = tiny_setup(1);
        cfg.snapshots = true;
        cfg.max_epochs = 3;
        cfg.et = 1;
        let split = partition_loso(&ds, 0, 1, 0).unwrap();
        let fold = train_fold(&split, &ds.manifest, &cfg).unwrap();
        let epochs: Vec<usize> = fold.snapshots.iter().map(|s| s.epoch).collect();
        assert_eq!(epochs, vec![0, 3]);
        let n_records = split.s.len() + split.u.len() + split.t.len();
        assert_eq!(fold.snapshots[0].points.len(), n_records);
    }
}
