//! Self-attentive fusion of the two feature streams, target-similarity
//! sample weighting, and the weighted classification loss.
//!
//! Attention operates across the batch axis: the concatenated per-sample
//! feature vectors form the rows of `X`, and `softmax(Q Kᵀ / sqrt(d)) V` is
//! computed per head over the `B x B` score matrix. There is no positional
//! encoding, so the output is equivariant to row permutations, and
//! evaluation must use fixed-composition batches for reproducibility.

use ndarray::{Array1, Array2};

use crate::adapt::LOG_CLAMP;
use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};

/// Projection parameters for the multi-head self-attention block.
#[derive(Debug, Clone)]
pub struct MhaParams {
    pub w_q: Array2<f64>,
    pub b_q: Array1<f64>,
    pub w_k: Array2<f64>,
    pub b_k: Array1<f64>,
    pub w_v: Array2<f64>,
    pub b_v: Array1<f64>,
}

/// Tape-node handles for the same parameters.
#[derive(Debug, Clone, Copy)]
pub struct MhaNodes {
    pub w_q: NodeId,
    pub b_q: NodeId,
    pub w_k: NodeId,
    pub b_k: NodeId,
    pub w_v: NodeId,
    pub b_v: NodeId,
}

/// Softmax-normalized similarity weights over the labeled-source rows of a
/// batch.
#[derive(Debug, Clone)]
pub struct SampleWeights {
    pub weights: Array1<f64>,
}

/// How the similarity weight enters the classification loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CeMode {
    /// `-(1/B) sum_b sum_c y log(w_b * p_bc)` — the weight sits inside the
    /// logarithm.
    InsideLog,
    /// `-(1/B) sum_b w_b sum_c y log(p_bc)` — conventional reweighting.
    OutsideLog,
}

impl CeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CeMode::InsideLog => "inside_log",
            CeMode::OutsideLog => "outside_log",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "inside_log" => Ok(CeMode::InsideLog),
            "outside_log" => Ok(CeMode::OutsideLog),
            other => Err(Error::Config(format!("unknown ce mode '{other}'"))),
        }
    }
}

/// Multi-head self-attention over the batch axis (tape version).
///
/// `x` is `[B, width]`; `width` must be divisible by `n_heads`. Heads are
/// contiguous column blocks of Q/K/V; outputs are concatenated back with no
/// trailing projection.
pub fn mha_t(tape: &mut Tape, x: NodeId, params: &MhaNodes, n_heads: usize) -> NodeId {
    let width = tape.value(x).shape()[1];
    debug_assert!(width.is_multiple_of(n_heads), "width must divide by head count");
    let d = width / n_heads;
    let scale = 1.0 / (d as f64).sqrt();

    let q = affine_t(tape, x, params.w_q, params.b_q);
    let k = affine_t(tape, x, params.w_k, params.b_k);
    let v = affine_t(tape, x, params.w_v, params.b_v);

    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = tape.narrow(q, 1, h * d, d);
        let kh = tape.narrow(k, 1, h * d, d);
        let vh = tape.narrow(v, 1, h * d, d);
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt);
        let scores = tape.scale(scores, scale);
        let att = tape.softmax(scores);
        heads.push(tape.matmul(att, vh));
    }
    tape.concat(&heads, 1)
}

/// `x W + b` for a `[B, in]` node.
pub fn affine_t(tape: &mut Tape, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
    let xw = tape.matmul(x, w);
    tape.add(xw, b)
}

/// Multi-head self-attention (value level).
pub fn mha(x: &Array2<f64>, params: &MhaParams, n_heads: usize) -> Result<Array2<f64>> {
    let width = x.ncols();
    if n_heads == 0 || !width.is_multiple_of(n_heads) {
        return Err(Error::Config(format!(
            "width {width} is not divisible into {n_heads} heads"
        )));
    }
    if params.w_q.nrows() != width {
        return Err(Error::Shape(format!(
            "projection expects width {}, batch has {width}",
            params.w_q.nrows()
        )));
    }
    let mut tape = Tape::new();
    let xn = tape.leaf2(x.clone());
    let nodes = MhaNodes {
        w_q: tape.leaf2(params.w_q.clone()),
        b_q: tape.leaf1(params.b_q.clone()),
        w_k: tape.leaf2(params.w_k.clone()),
        b_k: tape.leaf1(params.b_k.clone()),
        w_v: tape.leaf2(params.w_v.clone()),
        b_v: tape.leaf1(params.b_v.clone()),
    };
    let out = mha_t(&mut tape, xn, &nodes, n_heads);
    Ok(tape
        .value(out)
        .clone()
        .into_dimensionality::<ndarray::Ix2>()
        .expect("attention output is 2-D"))
}

/// Cosine-normalize rows with the norm clamped at 1e-12.
fn normalize_rows_t(tape: &mut Tape, x: NodeId) -> NodeId {
    let sq = tape.mul(x, x);
    let ss = tape.sum_axis_keep(sq, 1);
    let norm = tape.sqrt(ss);
    let norm = tape.clamp_min(norm, 1e-12);
    tape.div(x, norm)
}

/// Mean cosine similarity of each source row against all target rows,
/// softmax-normalized into weights that sum to 1. Returns a `[B_s, 1]` node.
pub fn sample_similarity_t(tape: &mut Tape, r_s: NodeId, r_t: NodeId) -> NodeId {
    let b_t = tape.value(r_t).shape()[0];
    let ns = normalize_rows_t(tape, r_s);
    let nt = normalize_rows_t(tape, r_t);
    let ntt = tape.transpose(nt);
    let cos = tape.matmul(ns, ntt); // [B_s, B_t]
    let sims = tape.sum_axis_keep(cos, 1); // [B_s, 1]
    let sims = tape.scale(sims, 1.0 / b_t as f64);
    let b_s = tape.value(sims).shape()[0];
    let flat = tape.reshape(sims, &[1, b_s]);
    let soft = tape.softmax(flat);
    tape.reshape(soft, &[b_s, 1])
}

/// Value-level sample weighting (see [`sample_similarity_t`]).
pub fn sample_similarity(r_s: &Array2<f64>, r_t: &Array2<f64>) -> Result<SampleWeights> {
    if r_s.ncols() != r_t.ncols() {
        return Err(Error::Shape(format!(
            "representation widths differ: {} vs {}",
            r_s.ncols(),
            r_t.ncols()
        )));
    }
    if r_s.nrows() == 0 || r_t.nrows() == 0 {
        return Err(Error::Shape("similarity needs nonempty source and target".into()));
    }
    let mut tape = Tape::new();
    let s = tape.leaf2(r_s.clone());
    let t = tape.leaf2(r_t.clone());
    let w = sample_similarity_t(&mut tape, s, t);
    let weights = tape.value(w).iter().cloned().collect::<Vec<_>>();
    Ok(SampleWeights { weights: Array1::from_vec(weights) })
}

/// Weighted multi-class cross-entropy on probability rows (tape version).
/// `weights` is a `[B, 1]` node; `one_hot` the label matrix.
pub fn weighted_ce_t(
    tape: &mut Tape,
    probs: NodeId,
    one_hot: &Array2<f64>,
    weights: NodeId,
    mode: CeMode,
) -> NodeId {
    let b = one_hot.nrows() as f64;
    let y = tape.leaf2(one_hot.clone());
    let total = match mode {
        CeMode::InsideLog => {
            let wp = tape.mul(probs, weights); // broadcast [B,1] over [B,C]
            let wp = tape.clamp_min(wp, LOG_CLAMP);
            let lwp = tape.ln(wp);
            let picked = tape.mul(y, lwp);
            tape.sum_all(picked)
        }
        CeMode::OutsideLog => {
            let p = tape.clamp_min(probs, LOG_CLAMP);
            let lp = tape.ln(p);
            let picked = tape.mul(y, lp);
            let rows = tape.sum_axis_keep(picked, 1); // [B,1]
            let weighted = tape.mul(rows, weights);
            tape.sum_all(weighted)
        }
    };
    tape.scale(total, -1.0 / b)
}

/// Weighted multi-class cross-entropy (value level).
pub fn weighted_ce(
    probs: &Array2<f64>,
    labels: &[usize],
    weights: &Array1<f64>,
    mode: CeMode,
) -> Result<f64> {
    let b = probs.nrows();
    let c = probs.ncols();
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for {b} rows", labels.len())));
    }
    if weights.len() != b {
        return Err(Error::Shape(format!("{} weights for {b} rows", weights.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Input(format!("label {bad} out of range for {c} classes")));
    }
    let mut one_hot = Array2::zeros((b, c));
    for (i, &l) in labels.iter().enumerate() {
        one_hot[[i, l]] = 1.0;
    }
    let mut tape = Tape::new();
    let p = tape.leaf2(probs.clone());
    let w2 = Array2::from_shape_vec((b, 1), weights.to_vec()).expect("weights column");
    let w = tape.leaf2(w2);
    let l = weighted_ce_t(&mut tape, p, &one_hot, w, mode);
    Ok(tape.scalar_value(l))
}
