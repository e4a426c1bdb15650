//! Learned channel graphs: dynamic adjacency, graph regularization,
//! scaled Laplacian, and Chebyshev polynomial graph convolution.
//!
//! Each operation exists in two forms: a `*_t` builder that records onto an
//! [`autodiff::Tape`](crate::autodiff::Tape) (used inside the training
//! forward pass), and a plain value-level wrapper that runs a private tape
//! and returns arrays. The wrappers are the public contract; the builders
//! keep gradients flowing.

use ndarray::{Array1, Array2};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};

/// Max iterations for the λ_max power iteration.
pub const POWER_ITER_MAX: usize = 500;

/// A per-sample learned graph: node features, adjacency weight, learned
/// adjacency, and the Chebyshev filter coefficients applied on it.
#[derive(Debug, Clone)]
pub struct LearnedGraph {
    pub psi: Array2<f64>,
    pub w: Array1<f64>,
    pub adjacency: Array2<f64>,
    pub theta: Array1<f64>,
    pub lambda_reg: f64,
}

impl LearnedGraph {
    pub fn new(
        psi: Array2<f64>,
        w: Array1<f64>,
        theta: Array1<f64>,
        lambda_reg: f64,
    ) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::Config("Chebyshev order must be >= 1".into()));
        }
        if lambda_reg < 0.0 {
            return Err(Error::Config("lambda_reg must be >= 0".into()));
        }
        let adjacency = dynamic_adjacency(&psi, &w)?;
        Ok(LearnedGraph { psi, w, adjacency, theta, lambda_reg })
    }
}

// ---------------------------------------------------------------------------
// tape builders
// ---------------------------------------------------------------------------

/// Row-stochastic adjacency from node features:
/// `A_jk = softmax_k(-relu(w . |psi_j - psi_k|))`.
///
/// `psi` is an [n, c] node-feature node, `w` a [c] weight node.
pub fn dynamic_adjacency_t(tape: &mut Tape, psi: NodeId, w: NodeId) -> NodeId {
    let c = tape.value(psi).shape()[1];
    // sum_c w_c * |psi_jc - psi_kc| built band by band from [n,1]-[1,n]
    // broadcasts; keeps the tape 2-D throughout
    let mut dist: Option<NodeId> = None;
    for band in 0..c {
        let col = tape.narrow(psi, 1, band, 1); // [n,1]
        let row = tape.transpose(col); // [1,n]
        let diff = tape.sub(col, row); // [n,n]
        let adiff = tape.abs(diff);
        let wc = tape.narrow(w, 0, band, 1); // [1]
        let wc = tape.reshape(wc, &[1, 1]);
        let term = tape.mul(adiff, wc);
        dist = Some(match dist {
            Some(d) => tape.add(d, term),
            None => term,
        });
    }
    let dist = dist.expect("at least one feature column");
    let act = tape.relu(dist);
    let neg = tape.neg(act);
    tape.softmax(neg)
}

/// Graph regularization `lambda * sum_jk ||psi_j - psi_k||^2 A_jk + ||A||_F^2`.
pub fn graph_reg_loss_t(tape: &mut Tape, psi: NodeId, adj: NodeId, lambda_reg: f64) -> NodeId {
    let c = tape.value(psi).shape()[1];
    // pairwise squared distances, accumulated per feature column
    let mut sqd: Option<NodeId> = None;
    for band in 0..c {
        let col = tape.narrow(psi, 1, band, 1);
        let row = tape.transpose(col);
        let diff = tape.sub(col, row);
        let sq = tape.mul(diff, diff);
        sqd = Some(match sqd {
            Some(d) => tape.add(d, sq),
            None => sq,
        });
    }
    let sqd = sqd.expect("at least one feature column");
    let weighted = tape.mul(sqd, adj);
    let smooth = tape.sum_all(weighted);
    let smooth = tape.scale(smooth, lambda_reg);
    let asq = tape.mul(adj, adj);
    let fro = tape.sum_all(asq);
    tape.add(smooth, fro)
}

/// Symmetrized scaled Laplacian `L~ = (2/λ_max) L - I` with
/// `L = D - (A + Aᵀ)/2`. Returns `(L~, λ_max)` node ids.
pub fn scaled_laplacian_t(tape: &mut Tape, adj: NodeId) -> Result<(NodeId, NodeId)> {
    let n = tape.value(adj).shape()[0];
    let at = tape.transpose(adj);
    let sum = tape.add(adj, at);
    let a_sym = tape.scale(sum, 0.5);
    let lap = tape.laplacian(a_sym);
    let lambda_max = tape.lambda_max_sym(lap, POWER_ITER_MAX)?;
    let two = tape.scalar(2.0);
    let coef = tape.div(two, lambda_max); // 0-dim
    let scaled = tape.mul(lap, coef);
    let eye = tape.leaf2(Array2::eye(n));
    let l_tilde = tape.sub(scaled, eye);
    Ok((l_tilde, lambda_max))
}

/// Chebyshev filter `sum_phi theta_phi x_phi` with the three-term recurrence
/// `x_0 = x`, `x_1 = L~ x`, `x_phi = 2 L~ x_{phi-1} - x_{phi-2}`.
pub fn cheb_conv_t(tape: &mut Tape, x: NodeId, l_tilde: NodeId, theta: NodeId) -> NodeId {
    let order = tape.value(theta).shape()[0];
    let mut terms: Vec<NodeId> = Vec::with_capacity(order);
    for phi in 0..order {
        let base = if phi == 0 {
            x
        } else if phi == 1 {
            tape.matmul(l_tilde, x)
        } else {
            let lx = tape.matmul(l_tilde, terms[phi - 1]);
            let lx2 = tape.scale(lx, 2.0);
            tape.sub(lx2, terms[phi - 2])
        };
        terms.push(base);
    }
    let mut out: Option<NodeId> = None;
    for (phi, &bar) in terms.iter().enumerate() {
        let t = tape.narrow(theta, 0, phi, 1);
        let t = tape.reshape(t, &[1, 1]);
        let scaled = tape.mul(bar, t);
        out = Some(match out {
            Some(acc) => tape.add(acc, scaled),
            None => scaled,
        });
    }
    out.expect("order >= 1")
}

// ---------------------------------------------------------------------------
// value-level wrappers
// ---------------------------------------------------------------------------

fn check_finite(name: &str, it: impl IntoIterator<Item = f64>) -> Result<()> {
    for v in it {
        if !v.is_finite() {
            return Err(Error::Input(format!("{name} contains a non-finite value")));
        }
    }
    Ok(())
}

/// Row-stochastic dynamic adjacency (see [`dynamic_adjacency_t`]).
pub fn dynamic_adjacency(psi: &Array2<f64>, w: &Array1<f64>) -> Result<Array2<f64>> {
    if w.len() != psi.ncols() {
        return Err(Error::Shape(format!(
            "adjacency weight length {} != feature columns {}",
            w.len(),
            psi.ncols()
        )));
    }
    check_finite("psi", psi.iter().cloned())?;
    check_finite("w", w.iter().cloned())?;
    let mut tape = Tape::new();
    let p = tape.leaf2(psi.clone());
    let wn = tape.leaf1(w.clone());
    let a = dynamic_adjacency_t(&mut tape, p, wn);
    Ok(tape
        .value(a)
        .clone()
        .into_dimensionality::<ndarray::Ix2>()
        .expect("adjacency is 2-D"))
}

/// Graph regularization loss (see [`graph_reg_loss_t`]).
pub fn graph_reg_loss(psi: &Array2<f64>, adj: &Array2<f64>, lambda_reg: f64) -> Result<f64> {
    if adj.nrows() != psi.nrows() || adj.ncols() != psi.nrows() {
        return Err(Error::Shape(format!(
            "adjacency {}x{} does not match {} nodes",
            adj.nrows(),
            adj.ncols(),
            psi.nrows()
        )));
    }
    let mut tape = Tape::new();
    let p = tape.leaf2(psi.clone());
    let a = tape.leaf2(adj.clone());
    let l = graph_reg_loss_t(&mut tape, p, a, lambda_reg);
    Ok(tape.scalar_value(l))
}

/// Symmetrized scaled Laplacian and λ_max (see [`scaled_laplacian_t`]).
pub fn scaled_laplacian(adj: &Array2<f64>) -> Result<(Array2<f64>, f64)> {
    if adj.nrows() != adj.ncols() {
        return Err(Error::Shape("adjacency must be square".into()));
    }
    let mut tape = Tape::new();
    let a = tape.leaf2(adj.clone());
    let (lt, lm) = scaled_laplacian_t(&mut tape, a)?;
    let l_tilde = tape
        .value(lt)
        .clone()
        .into_dimensionality::<ndarray::Ix2>()
        .expect("L~ is 2-D");
    Ok((l_tilde, tape.scalar_value(lm)))
}

/// Chebyshev graph convolution (see [`cheb_conv_t`]).
pub fn cheb_conv(x: &Array2<f64>, l_tilde: &Array2<f64>, theta: &Array1<f64>) -> Result<Array2<f64>> {
    if theta.is_empty() {
        return Err(Error::Shape("theta must have length >= 1".into()));
    }
    if l_tilde.nrows() != x.nrows() || l_tilde.ncols() != x.nrows() {
        return Err(Error::Shape(format!(
            "L~ {}x{} does not match {} nodes",
            l_tilde.nrows(),
            l_tilde.ncols(),
            x.nrows()
        )));
    }
    let mut tape = Tape::new();
    let xn = tape.leaf2(x.clone());
    let ln = tape.leaf2(l_tilde.clone());
    let tn = tape.leaf1(theta.clone());
    let out = cheb_conv_t(&mut tape, xn, ln, tn);
    Ok(tape
        .value(out)
        .clone()
        .into_dimensionality::<ndarray::Ix2>()
        .expect("conv output is 2-D"))
}
