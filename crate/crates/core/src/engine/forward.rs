//! The model forward pass on a tape, and the combined training loss.
//!
//! Non-structural path: flattened DE features through a 3-layer MLP, with a
//! gradient-reversed domain discriminator hanging off the 64-dim output.
//! Structural path: per-sample learned adjacency, Chebyshev convolution,
//! two node-drop views through the structural extractor; one view feeds
//! fusion, both feed the projector for the contrastive loss. Fusion:
//! batch-axis multi-head self-attention over the concatenated streams,
//! similarity-weighted cross-entropy on the labeled-source rows.

use ndarray::{Array2, ArrayD};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Arch, ParamStore, FEATURE_WIDTH};
use crate::adapt::{self, DomainTag, Stage};
use crate::autodiff::{NodeId, Tape};
use crate::config::TrainConfig;
use crate::contrast;
use crate::error::{Error, Result};
use crate::fusion::{self, MhaNodes};
use crate::graphcore;

/// Gradient-reversal coefficient (constant, no ramp).
pub const GRL_MU: f64 = 1.0;
/// Discriminator dropout probability during training.
pub const DISC_DROPOUT: f64 = 0.5;

/// One sample in a batch. `label` is populated only for labeled-source rows.
#[derive(Debug, Clone)]
pub struct BatchRow {
    pub de: Array2<f64>,
    pub domain: DomainTag,
    pub label: Option<u16>,
    /// (subject, trial, segment) provenance, drives eval-time augmentation.
    pub key: (u16, u16, u32),
}

/// Forward execution mode.
pub enum ForwardMode<'a> {
    /// Sampled node drops and discriminator dropout from `rng`.
    Train { rng: &'a mut ChaCha8Rng },
    /// Deterministic per-record node drops (seeded by the record key),
    /// no dropout, `views` augmentations averaged.
    Eval { views: usize },
}

/// Tape handles produced by [`forward`].
pub struct ForwardNodes {
    /// Parameter leaf nodes, aligned with the `ParamStore` order.
    pub param_nodes: Vec<NodeId>,
    pub feat_ns: NodeId,
    pub feat_s: NodeId,
    pub tokens: NodeId,
    pub fused: NodeId,
    pub logits: NodeId,
    pub probs: NodeId,
    pub z1: Option<NodeId>,
    pub z2: Option<NodeId>,
    pub weights: Option<NodeId>,
    pub loss_ce: Option<NodeId>,
    pub loss_disc: Option<NodeId>,
    pub loss_gcn: Option<NodeId>,
    pub loss_gcl: Option<NodeId>,
    pub s_rows: Vec<usize>,
    pub u_rows: Vec<usize>,
    pub t_rows: Vec<usize>,
}

/// Scalar values of the four loss components.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossValues {
    pub ce: f64,
    pub disc: f64,
    pub gcn: f64,
    pub gcl: f64,
}

fn mlp3(tape: &mut Tape, x: NodeId, nodes: &[NodeId], base: usize) -> NodeId {
    // nodes[base..base+6] = w0,b0,w1,b1,w2,b2 with ReLU between layers
    let h0 = fusion::affine_t(tape, x, nodes[base], nodes[base + 1]);
    let a0 = tape.relu(h0);
    let h1 = fusion::affine_t(tape, a0, nodes[base + 2], nodes[base + 3]);
    let a1 = tape.relu(h1);
    fusion::affine_t(tape, a1, nodes[base + 4], nodes[base + 5])
}

/// Mix a record key and view index into a deterministic augmentation seed.
pub fn record_view_seed(key: (u16, u16, u32), view: u64) -> u64 {
    let mut x = (key.0 as u64) << 48 | (key.1 as u64) << 32 | key.2 as u64;
    x ^= view.wrapping_mul(0x9e3779b97f4a7c15);
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Build the full forward graph for `batch`. Row order is preserved
/// everywhere; attention context is exactly the batch content.
pub fn forward(
    tape: &mut Tape,
    params: &ParamStore,
    arch: &Arch,
    cfg: &TrainConfig,
    batch: &[BatchRow],
    stage: Stage,
    mode: &mut ForwardMode,
) -> Result<ForwardNodes> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    if stage == Stage::Two && batch.iter().any(|r| r.domain == DomainTag::U) {
        return Err(Error::Protocol("unlabeled-source rows present in stage 2".into()));
    }
    for row in batch {
        if row.de.dim() != (arch.n_channels, arch.n_bands) {
            return Err(Error::Shape(format!(
                "batch row has shape {:?}, architecture demands ({}, {})",
                row.de.dim(),
                arch.n_channels,
                arch.n_bands
            )));
        }
    }
    let train = matches!(mode, ForwardMode::Train { .. });

    let param_nodes: Vec<NodeId> =
        params.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let idx = |name: &str| params.index_of(name);
    let node = |name: &str| param_nodes[params.index_of(name)];

    // ---- non-structural stream -----------------------------------------
    let ns_width = arch.ns_input();
    let mut flat = Array2::zeros((b, ns_width));
    for (i, row) in batch.iter().enumerate() {
        for (j, v) in row.de.iter().enumerate() {
            flat[[i, j]] = *v;
        }
    }
    let x_ns = tape.leaf2(flat);
    let feat_ns = mlp3(tape, x_ns, &param_nodes, idx("f_ns.0.w"));

    // ---- structural stream ----------------------------------------------
    let w_node = node("graph.w");
    let theta_node = node("graph.theta");
    let drop = arch.drop_count;
    let mut flats_v1: Vec<NodeId> = Vec::with_capacity(b);
    let mut flats_v2: Vec<NodeId> = Vec::with_capacity(b);
    let mut gcn_terms: Vec<NodeId> = Vec::with_capacity(b);
    for row in batch {
        let psi = tape.leaf2(row.de.clone());
        let adj = graphcore::dynamic_adjacency_t(tape, psi, w_node);
        gcn_terms.push(graphcore::graph_reg_loss_t(tape, psi, adj, cfg.lambda_reg));
        let (l_tilde, _lambda) = graphcore::scaled_laplacian_t(tape, adj)?;
        let conv = graphcore::cheb_conv_t(tape, psi, l_tilde, theta_node);
        match mode {
            ForwardMode::Train { rng } => {
                let kept1 = contrast::sample_kept_nodes(arch.n_channels, drop, *rng)?;
                let kept2 = contrast::sample_kept_nodes(arch.n_channels, drop, *rng)?;
                flats_v1.push(contrast::node_drop_t(tape, conv, &kept1));
                flats_v2.push(contrast::node_drop_t(tape, conv, &kept2));
            }
            ForwardMode::Eval { views } => {
                // average the flattened survivors over deterministic views
                let mut acc: Option<NodeId> = None;
                for k in 0..*views {
                    let mut vrng =
                        ChaCha8Rng::seed_from_u64(record_view_seed(row.key, k as u64));
                    let kept =
                        contrast::sample_kept_nodes(arch.n_channels, drop, &mut vrng)?;
                    let f = contrast::node_drop_t(tape, conv, &kept);
                    acc = Some(match acc {
                        Some(a) => tape.add(a, f),
                        None => f,
                    });
                }
                let mean = tape.scale(acc.expect("views >= 1"), 1.0 / *views as f64);
                flats_v1.push(mean);
            }
        }
    }
    let flat1 = tape.concat(&flats_v1, 0);
    let feat_s = mlp3(tape, flat1, &param_nodes, idx("f_s.0.w"));

    let (z1, z2, loss_gcl) = if train {
        let flat2 = tape.concat(&flats_v2, 0);
        let feat_s2 = mlp3(tape, flat2, &param_nodes, idx("f_s.0.w"));
        let proj = |tape: &mut Tape, x: NodeId| -> NodeId {
            let h = fusion::affine_t(tape, x, node("proj.0.w"), node("proj.0.b"));
            let a = tape.relu(h);
            fusion::affine_t(tape, a, node("proj.1.w"), node("proj.1.b"))
        };
        let z1 = proj(tape, feat_s);
        let z2 = proj(tape, feat_s2);
        let gcl = if b >= 2 {
            Some(contrast::nt_xent_t(tape, z1, z2, cfg.tau))
        } else {
            None
        };
        (Some(z1), Some(z2), gcl)
    } else {
        (None, None, None)
    };

    let loss_gcn = if train {
        let cols: Vec<NodeId> =
            gcn_terms.iter().map(|&t| tape.reshape(t, &[1, 1])).collect();
        let stacked = tape.concat(&cols, 0);
        Some(tape.mean_all(stacked))
    } else {
        None
    };

    // ---- fusion and classification ---------------------------------------
    let tokens = tape.concat(&[feat_ns, feat_s], 1);
    let fused = if cfg.ablations.no_attn_fusion {
        tokens
    } else {
        let mha_nodes = MhaNodes {
            w_q: node("fuse.q.w"),
            b_q: node("fuse.q.b"),
            w_k: node("fuse.k.w"),
            b_k: node("fuse.k.b"),
            w_v: node("fuse.v.w"),
            b_v: node("fuse.v.b"),
        };
        fusion::mha_t(tape, tokens, &mha_nodes, arch.n_heads)
    };
    let logits = fusion::affine_t(tape, fused, node("cls.w"), node("cls.b"));
    let probs = tape.softmax(logits);

    let s_rows: Vec<usize> =
        (0..b).filter(|&i| batch[i].domain == DomainTag::S).collect();
    let u_rows: Vec<usize> =
        (0..b).filter(|&i| batch[i].domain == DomainTag::U).collect();
    let t_rows: Vec<usize> =
        (0..b).filter(|&i| batch[i].domain == DomainTag::T).collect();

    // ---- discriminator (through gradient reversal) ------------------------
    let loss_disc = if train {
        let rev = adapt::grad_reverse_t(tape, feat_ns, GRL_MU);
        let h0 = fusion::affine_t(tape, rev, node("disc.0.w"), node("disc.0.b"));
        let a0 = tape.relu(h0);
        let dropped = match mode {
            ForwardMode::Train { rng } => {
                let keep = 1.0 - DISC_DROPOUT;
                let mask = ArrayD::from_shape_fn(
                    ndarray::IxDyn(&[b, FEATURE_WIDTH]),
                    |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 },
                );
                tape.dropout_mask(a0, mask)
            }
            ForwardMode::Eval { .. } => a0,
        };
        let h1 = fusion::affine_t(tape, dropped, node("disc.1.w"), node("disc.1.b"));
        let a1 = tape.relu(h1);
        let dlogits = fusion::affine_t(tape, a1, node("disc.2.w"), node("disc.2.b"));
        let dprobs = adapt::masked_softmax_t(tape, dlogits, stage);
        let one_hot =
            adapt::one_hot_domains(&batch.iter().map(|r| r.domain).collect::<Vec<_>>());
        Some(adapt::cross_entropy_t(tape, dprobs, &one_hot))
    } else {
        None
    };

    // ---- similarity-weighted classification loss --------------------------
    let (weights, loss_ce) = if train && !s_rows.is_empty() {
        if t_rows.is_empty() {
            return Err(Error::Protocol(
                "training batch is missing target rows for similarity weighting".into(),
            ));
        }
        let r = fusion::affine_t(tape, fused, node("phi.w"), node("phi.b"));
        let r_s = tape.gather_rows(r, &s_rows);
        let r_t = tape.gather_rows(r, &t_rows);
        let weights = if cfg.ablations.no_sample_weights {
            tape.leaf2(Array2::ones((s_rows.len(), 1)))
        } else {
            fusion::sample_similarity_t(tape, r_s, r_t)
        };
        let probs_s = tape.gather_rows(probs, &s_rows);
        let mut one_hot = Array2::zeros((s_rows.len(), arch.n_classes));
        for (slot, &i) in s_rows.iter().enumerate() {
            let label = batch[i].label.ok_or_else(|| {
                Error::Protocol(format!("labeled-source row {i} is missing its label"))
            })?;
            if usize::from(label) >= arch.n_classes {
                return Err(Error::Input(format!("label {label} out of range")));
            }
            one_hot[[slot, usize::from(label)]] = 1.0;
        }
        let ce = fusion::weighted_ce_t(tape, probs_s, &one_hot, weights, cfg.ce_mode);
        (Some(weights), Some(ce))
    } else {
        (None, None)
    };

    Ok(ForwardNodes {
        param_nodes,
        feat_ns,
        feat_s,
        tokens,
        fused,
        logits,
        probs,
        z1,
        z2,
        weights,
        loss_ce,
        loss_disc,
        loss_gcn,
        loss_gcl,
        s_rows,
        u_rows,
        t_rows,
    })
}

/// Combined objective `L_ce + a_disc L_disc + a_gcn L_gcn + a_gcl L_gcl`,
/// with ablation flags zeroing the matching weight.
pub fn total_loss(tape: &mut Tape, fwd: &ForwardNodes, cfg: &TrainConfig) -> NodeId {
    let mut total = fwd.loss_ce.expect("total_loss needs a training forward with S rows");
    let alpha_disc = if cfg.ablations.no_disc { 0.0 } else { cfg.alpha_disc };
    let alpha_gcl = if cfg.ablations.no_contrastive { 0.0 } else { cfg.alpha_gcl };
    let alpha_gcn = cfg.alpha_gcn;
    if let Some(disc) = fwd.loss_disc {
        let term = tape.scale(disc, alpha_disc);
        total = tape.add(total, term);
    }
    if let Some(gcn) = fwd.loss_gcn {
        let term = tape.scale(gcn, alpha_gcn);
        total = tape.add(total, term);
    }
    if let Some(gcl) = fwd.loss_gcl {
        let term = tape.scale(gcl, alpha_gcl);
        total = tape.add(total, term);
    }
    total
}

/// Extract the component loss values from a training forward.
pub fn loss_values(tape: &Tape, fwd: &ForwardNodes) -> LossValues {
    LossValues {
        ce: fwd.loss_ce.map(|n| tape.scalar_value(n)).unwrap_or(0.0),
        disc: fwd.loss_disc.map(|n| tape.scalar_value(n)).unwrap_or(0.0),
        gcn: fwd.loss_gcn.map(|n| tape.scalar_value(n)).unwrap_or(0.0),
        gcl: fwd.loss_gcl.map(|n| tape.scalar_value(n)).unwrap_or(0.0),
    }
}
