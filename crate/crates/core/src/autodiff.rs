//! Tape-based reverse-mode automatic differentiation over `f64` tensors.
//!
//! A [`Tape`] records matrix-level operations during the forward pass and
//! replays them in reverse to accumulate gradients. Values are dynamic-rank
//! `ndarray` arrays; scalars are 0-dim arrays. Elementwise binary ops
//! co-broadcast both operands NumPy-style and reduce gradients back to the
//! operand shapes.
//!
//! The tape also tracks a *kink margin*: the smallest distance of any
//! ReLU / abs / clamp input to its non-differentiable point during the
//! forward pass. Finite-difference gradient checks use it to skip
//! coordinates whose perturbation straddles a kink.

use ndarray::{ArrayD, Axis, Ix1, Ix2, IxDyn};

use crate::error::{Error, Result};

/// Index of a node on the tape.
pub type NodeId = usize;

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Relu(NodeId),
    Abs(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Sqrt(NodeId),
    ClampMin(NodeId, f64),
    /// Row-wise softmax over the last axis.
    Softmax(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    /// Sum along `axis`, keeping the axis with length 1.
    SumAxis(NodeId, usize),
    Reshape(NodeId),
    Concat(Vec<NodeId>, usize),
    GatherRows(NodeId, Vec<usize>),
    Narrow(NodeId, usize, usize, usize),
    GradReverse(NodeId, f64),
    /// Elementwise multiply by a fixed mask (inverted-dropout scaling baked in).
    Dropout(NodeId, ArrayD<f64>),
    /// Largest eigenvalue of a symmetric PSD matrix via power iteration.
    /// Stores the converged unit eigenvector for the backward pass.
    LambdaMaxSym(NodeId, ArrayD<f64>),
    /// Graph Laplacian L = D - A with D = diag(row sums of A).
    Laplacian(NodeId),
    Scale(NodeId, f64),
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
}

/// Recording tape for one forward/backward pass.
pub struct Tape {
    nodes: Vec<Node>,
    kink_margin: f64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`NodeId`].
pub struct Grads {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Grads {
    /// Gradient of the backward root with respect to node `id`.
    /// Nodes the root does not depend on get a zero gradient.
    pub fn get(&self, id: NodeId, shape: &[usize]) -> ArrayD<f64> {
        match &self.grads[id] {
            Some(g) => g.clone(),
            None => ArrayD::zeros(IxDyn(shape)),
        }
    }

    pub fn get_opt(&self, id: NodeId) -> Option<&ArrayD<f64>> {
        self.grads[id].as_ref()
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        assert!(
            da == db || da == 1 || db == 1,
            "incompatible broadcast shapes {a:?} vs {b:?}"
        );
        out[i] = da.max(db);
    }
    out
}

/// Sum `grad` down to `shape`, undoing NumPy-style broadcasting.
fn unbroadcast(mut grad: ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    while grad.ndim() > shape.len() {
        grad = grad.sum_axis(Axis(0));
    }
    for (axis, (&g, &s)) in grad.shape().to_vec().iter().zip(shape).enumerate() {
        if g != s {
            debug_assert_eq!(s, 1);
            grad = grad
                .sum_axis(Axis(axis))
                .insert_axis(Axis(axis));
        }
    }
    grad
}

/// Cyclic Jacobi eigensolver returning the largest eigenvalue and its unit
/// eigenvector. `None` if the off-diagonal mass refuses to vanish.
fn jacobi_top_eigenpair(m: &ndarray::Array2<f64>) -> Option<(f64, ndarray::Array1<f64>)> {
    let n = m.nrows();
    let mut a = m.clone();
    let mut vecs = ndarray::Array2::<f64>::eye(n);
    let scale = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[[i, j]] * a[[i, j]];
            }
        }
        if off.sqrt() <= 1e-13 * scale {
            let (mut best, mut best_val) = (0, f64::NEG_INFINITY);
            for i in 0..n {
                if a[[i, i]] > best_val {
                    best_val = a[[i, i]];
                    best = i;
                }
            }
            return Some((best_val, vecs.column(best).to_owned()));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[[p, q]].abs() <= 1e-300 {
                    continue;
                }
                let theta = 0.5 * (2.0 * a[[p, q]]).atan2(a[[q, q]] - a[[p, p]]);
                let (s, c) = theta.sin_cos();
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = vecs[[k, p]];
                    let vkq = vecs[[k, q]];
                    vecs[[k, p]] = c * vkp - s * vkq;
                    vecs[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    None
}

fn co_broadcast(
    a: &ArrayD<f64>,
    b: &ArrayD<f64>,
    f: impl Fn(f64, f64) -> f64,
) -> ArrayD<f64> {
    let shape = broadcast_shape(a.shape(), b.shape());
    let ab = a.broadcast(IxDyn(&shape)).expect("broadcast lhs");
    let bb = b.broadcast(IxDyn(&shape)).expect("broadcast rhs");
    let mut out = ArrayD::zeros(IxDyn(&shape));
    ndarray::Zip::from(&mut out).and(&ab).and(&bb).for_each(|o, &x, &y| *o = f(x, y));
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), kink_margin: f64::INFINITY }
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Smallest |distance to kink| seen by ReLU/abs/clamp during forwards.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    /// Value of node `id`.
    pub fn value(&self, id: NodeId) -> &ArrayD<f64> {
        &self.nodes[id].value
    }

    /// Value of a 0-dim node as `f64`.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        let v = &self.nodes[id].value;
        debug_assert_eq!(v.len(), 1, "scalar_value on non-scalar node");
        *v.iter().next().expect("scalar node")
    }

    // ---- leaves -----------------------------------------------------------

    pub fn leaf(&mut self, value: ArrayD<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn leaf2(&mut self, value: ndarray::Array2<f64>) -> NodeId {
        self.leaf(value.into_dyn())
    }

    pub fn leaf1(&mut self, value: ndarray::Array1<f64>) -> NodeId {
        self.leaf(value.into_dyn())
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.leaf(ndarray::arr0(value).into_dyn())
    }

    // ---- elementwise ------------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = co_broadcast(&self.nodes[a].value, &self.nodes[b].value, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = co_broadcast(&self.nodes[a].value, &self.nodes[b].value, |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = co_broadcast(&self.nodes[a].value, &self.nodes[b].value, |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = co_broadcast(&self.nodes[a].value, &self.nodes[b].value, |x, y| x / y);
        self.push(v, Op::Div(a, b))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| -x);
        self.push(v, Op::Neg(a))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| c * x);
        self.push(v, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.track_kinks(a, 0.0);
        let v = self.nodes[a].value.mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.track_kinks(a, 0.0);
        let v = self.nodes[a].value.mapv(f64::abs);
        self.push(v, Op::Abs(a))
    }

    /// Track how close the inputs of a kinked op came to the kink at `c`.
    /// Inputs exactly on the kink are structural (e.g. the zero diagonal of
    /// a pairwise-distance matrix): they stay on it under perturbation, the
    /// path is constant there, and a finite difference across it is exact,
    /// so they do not count toward the margin.
    fn track_kinks(&mut self, a: NodeId, c: f64) {
        for &x in self.nodes[a].value.iter() {
            let d = (x - c).abs();
            if d != 0.0 {
                self.kink_margin = self.kink_margin.min(d);
            }
        }
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    /// Natural log; caller must guarantee positive inputs
    /// (combine with [`Tape::clamp_min`] otherwise).
    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(f64::ln);
        self.push(v, Op::Ln(a))
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn clamp_min(&mut self, a: NodeId, c: f64) -> NodeId {
        self.track_kinks(a, c);
        let v = self.nodes[a].value.mapv(|x| x.max(c));
        self.push(v, Op::ClampMin(a, c))
    }

    // ---- linear algebra ---------------------------------------------------

    /// 2-D matrix product.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = self.nodes[a].value.view().into_dimensionality::<Ix2>().expect("matmul lhs 2-D");
        let bv = self.nodes[b].value.view().into_dimensionality::<Ix2>().expect("matmul rhs 2-D");
        let v = av.dot(&bv).into_dyn();
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.view().into_dimensionality::<Ix2>().expect("transpose 2-D")
            .t().to_owned().into_dyn();
        self.push(v, Op::Transpose(a))
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let x = &self.nodes[a].value;
        let mut v = x.clone();
        let last = v.ndim() - 1;
        for mut row in v.lanes_mut(Axis(last)) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for e in row.iter_mut() {
                *e = (*e - m).exp();
                sum += *e;
            }
            for e in row.iter_mut() {
                *e /= sum;
            }
        }
        self.push(v, Op::Softmax(a))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = ndarray::arr0(self.nodes[a].value.sum()).into_dyn();
        self.push(v, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let v = ndarray::arr0(self.nodes[a].value.mean().expect("mean of empty array")).into_dyn();
        self.push(v, Op::MeanAll(a))
    }

    /// Sum along `axis` with the axis kept (length 1).
    pub fn sum_axis_keep(&mut self, a: NodeId, axis: usize) -> NodeId {
        let v = self.nodes[a].value.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        self.push(v, Op::SumAxis(a, axis))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let v = self.nodes[a]
            .value
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: element count mismatch");
        self.push(v, Op::Reshape(a))
    }

    /// Concatenate nodes along `axis`.
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> NodeId {
        let views: Vec<_> = parts.iter().map(|&p| self.nodes[p].value.view()).collect();
        let v = ndarray::concatenate(Axis(axis), &views).expect("concat shape mismatch");
        self.push(v, Op::Concat(parts.to_vec(), axis))
    }

    /// Select rows of a 2-D node (duplicates allowed).
    pub fn gather_rows(&mut self, a: NodeId, rows: &[usize]) -> NodeId {
        let av = self.nodes[a].value.view().into_dimensionality::<Ix2>().expect("gather 2-D");
        let v = av.select(Axis(0), rows).into_dyn();
        self.push(v, Op::GatherRows(a, rows.to_vec()))
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> NodeId {
        let v = self.nodes[a]
            .value
            .slice_axis(Axis(axis), ndarray::Slice::from(start..start + len))
            .to_owned();
        self.push(v, Op::Narrow(a, axis, start, len))
    }

    /// Identity forward; backward multiplies the incoming gradient by `-mu`.
    pub fn grad_reverse(&mut self, a: NodeId, mu: f64) -> NodeId {
        let v = self.nodes[a].value.clone();
        self.push(v, Op::GradReverse(a, mu))
    }

    /// Multiply by a fixed 0/k mask (inverted dropout: k = 1/(1-p)).
    pub fn dropout_mask(&mut self, a: NodeId, mask: ArrayD<f64>) -> NodeId {
        debug_assert_eq!(self.nodes[a].value.shape(), mask.shape());
        let v = &self.nodes[a].value * &mask;
        self.push(v, Op::Dropout(a, mask))
    }

    /// L = D - A with D = diag(row sums of A); `a` must be square 2-D.
    pub fn laplacian(&mut self, a: NodeId) -> NodeId {
        let av = self.nodes[a].value.view().into_dimensionality::<Ix2>().expect("laplacian 2-D");
        let n = av.nrows();
        debug_assert_eq!(n, av.ncols());
        let mut l = -av.to_owned();
        for i in 0..n {
            l[[i, i]] += av.row(i).sum();
        }
        self.push(l.into_dyn(), Op::Laplacian(a))
    }

    /// Largest eigenvalue of a symmetric PSD matrix by power iteration
    /// (tolerance 1e-9, at most `max_iter` iterations). If ‖L‖_F < 1e-12
    /// the eigenvalue is defined as 1 with zero gradient.
    pub fn lambda_max_sym(&mut self, a: NodeId, max_iter: usize) -> Result<NodeId> {
        let l = self.nodes[a].value.view().into_dimensionality::<Ix2>().expect("lambda_max 2-D");
        let n = l.nrows();
        let fro = l.iter().map(|x| x * x).sum::<f64>().sqrt();
        if fro < 1e-12 {
            let v = ArrayD::zeros(IxDyn(&[n]));
            let id = self.push(ndarray::arr0(1.0).into_dyn(), Op::LambdaMaxSym(a, v));
            return Ok(id);
        }
        // The all-ones vector is in the Laplacian kernel, so start from a
        // fixed pseudo-random vector instead.
        let mut state: u64 = 0x9e3779b97f4a7c15;
        let mut v = ndarray::Array1::from_shape_fn(n, |_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
        });
        let norm = v.dot(&v).sqrt();
        v /= norm;
        let mut lambda = 0.0;
        let mut converged = false;
        let mut iters = 0;
        for it in 0..max_iter {
            iters = it + 1;
            let mut w = l.dot(&v);
            let wn = w.dot(&w).sqrt();
            if wn < 1e-300 {
                // v landed in the kernel; re-seed deterministically
                state = state.wrapping_add(0x5851f42d4c957f2d);
                v = ndarray::Array1::from_shape_fn(n, |_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    ((state >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
                });
                let nm = v.dot(&v).sqrt();
                v /= nm;
                continue;
            }
            w /= wn;
            let lw = l.dot(&w);
            lambda = w.dot(&lw);
            // eigenpair residual, so the eigenvector (used by the backward
            // pass) is as converged as the eigenvalue
            let resid = (&lw - &(lambda * &w)).iter().map(|x| x * x).sum::<f64>().sqrt();
            v = w;
            if resid <= 1e-9 * lambda.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            // Narrow eigenvalue gaps (< a few percent) stall power iteration
            // at this tolerance/budget; a Jacobi sweep on these small dense
            // matrices recovers the exact top pair deterministically.
            match jacobi_top_eigenpair(&l.to_owned()) {
                Some((jl, jv)) => {
                    lambda = jl;
                    v = jv;
                }
                None => {
                    return Err(Error::Numeric(format!(
                        "power iteration did not converge after {iters} iterations \
                         (lambda estimate {lambda:.6e}, frobenius {fro:.6e}) and the \
                         Jacobi fallback also failed"
                    )));
                }
            }
        }
        let id = self.push(ndarray::arr0(lambda).into_dyn(), Op::LambdaMaxSym(a, v.into_dyn()));
        Ok(id)
    }

    // ---- backward ---------------------------------------------------------

    /// Backpropagate from scalar node `root` (seeded with gradient 1).
    pub fn backward(&self, root: NodeId) -> Grads {
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; self.nodes.len()];
        debug_assert_eq!(self.nodes[root].value.len(), 1, "backward root must be scalar");
        grads[root] = Some(ArrayD::ones(self.nodes[root].value.raw_dim()));

        for id in (0..=root).rev() {
            // leaves keep their gradient so callers can read it afterwards
            if matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            let go = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[id].op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    self.accum(&mut grads, *a, unbroadcast(go.clone(), self.nodes[*a].value.shape()));
                    self.accum(&mut grads, *b, unbroadcast(go.clone(), self.nodes[*b].value.shape()));
                }
                Op::Sub(a, b) => {
                    self.accum(&mut grads, *a, unbroadcast(go.clone(), self.nodes[*a].value.shape()));
                    self.accum(&mut grads, *b, unbroadcast(go.mapv(|x| -x), self.nodes[*b].value.shape()));
                }
                Op::Mul(a, b) => {
                    let ga = co_broadcast(&go, &self.nodes[*b].value, |g, y| g * y);
                    let gb = co_broadcast(&go, &self.nodes[*a].value, |g, x| g * x);
                    self.accum(&mut grads, *a, unbroadcast(ga, self.nodes[*a].value.shape()));
                    self.accum(&mut grads, *b, unbroadcast(gb, self.nodes[*b].value.shape()));
                }
                Op::Div(a, b) => {
                    let ga = co_broadcast(&go, &self.nodes[*b].value, |g, y| g / y);
                    let out = &self.nodes[id].value;
                    // d(a/b)/db = -a/b^2 = -out/b
                    let tmp = co_broadcast(&go, out, |g, o| g * o);
                    let gb = co_broadcast(&tmp, &self.nodes[*b].value, |t, y| -t / y);
                    self.accum(&mut grads, *a, unbroadcast(ga, self.nodes[*a].value.shape()));
                    self.accum(&mut grads, *b, unbroadcast(gb, self.nodes[*b].value.shape()));
                }
                Op::Neg(a) => self.accum(&mut grads, *a, go.mapv(|x| -x)),
                Op::Scale(a, c) => self.accum(&mut grads, *a, go.mapv(|x| c * x)),
                Op::MatMul(a, b) => {
                    let g = go.view().into_dimensionality::<Ix2>().unwrap();
                    let av = self.nodes[*a].value.view().into_dimensionality::<Ix2>().unwrap();
                    let bv = self.nodes[*b].value.view().into_dimensionality::<Ix2>().unwrap();
                    self.accum(&mut grads, *a, g.dot(&bv.t()).into_dyn());
                    self.accum(&mut grads, *b, av.t().dot(&g).into_dyn());
                }
                Op::Transpose(a) => {
                    let g = go.view().into_dimensionality::<Ix2>().unwrap().t().to_owned();
                    self.accum(&mut grads, *a, g.into_dyn());
                }
                Op::Relu(a) => {
                    let g = co_broadcast(&go, &self.nodes[*a].value, |g, x| if x > 0.0 { g } else { 0.0 });
                    self.accum(&mut grads, *a, g);
                }
                Op::Abs(a) => {
                    let g = co_broadcast(&go, &self.nodes[*a].value, |g, x| if x == 0.0 { 0.0 } else { g * x.signum() });
                    self.accum(&mut grads, *a, g);
                }
                Op::Exp(a) => {
                    let g = &go * &self.nodes[id].value;
                    self.accum(&mut grads, *a, g);
                }
                Op::Ln(a) => {
                    let g = co_broadcast(&go, &self.nodes[*a].value, |g, x| g / x);
                    self.accum(&mut grads, *a, g);
                }
                Op::Sqrt(a) => {
                    let g = co_broadcast(&go, &self.nodes[id].value, |g, o| g / (2.0 * o));
                    self.accum(&mut grads, *a, g);
                }
                Op::ClampMin(a, c) => {
                    let g = co_broadcast(&go, &self.nodes[*a].value, |g, x| if x > *c { g } else { 0.0 });
                    self.accum(&mut grads, *a, g);
                }
                Op::Softmax(a) => {
                    let s = &self.nodes[id].value;
                    let last = s.ndim() - 1;
                    let mut g = go.clone();
                    for (mut grow, srow) in g.lanes_mut(Axis(last)).into_iter().zip(s.lanes(Axis(last))) {
                        let dot: f64 = grow.iter().zip(srow.iter()).map(|(gi, si)| gi * si).sum();
                        for (gi, si) in grow.iter_mut().zip(srow.iter()) {
                            *gi = (*gi - dot) * si;
                        }
                    }
                    self.accum(&mut grads, *a, g);
                }
                Op::SumAll(a) => {
                    let g0 = *go.iter().next().unwrap();
                    let g = ArrayD::from_elem(self.nodes[*a].value.raw_dim(), g0);
                    self.accum(&mut grads, *a, g);
                }
                Op::MeanAll(a) => {
                    let n = self.nodes[*a].value.len() as f64;
                    let g0 = *go.iter().next().unwrap() / n;
                    let g = ArrayD::from_elem(self.nodes[*a].value.raw_dim(), g0);
                    self.accum(&mut grads, *a, g);
                }
                Op::SumAxis(a, _axis) => {
                    let target = self.nodes[*a].value.shape();
                    let g = go.broadcast(IxDyn(target)).unwrap().to_owned();
                    self.accum(&mut grads, *a, g);
                }
                Op::Reshape(a) => {
                    let g = go
                        .into_shape_with_order(self.nodes[*a].value.raw_dim())
                        .unwrap();
                    self.accum(&mut grads, *a, g);
                }
                Op::Concat(parts, axis) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.nodes[p].value.shape()[*axis];
                        let g = go
                            .slice_axis(Axis(*axis), ndarray::Slice::from(offset..offset + len))
                            .to_owned();
                        self.accum(&mut grads, p, g);
                        offset += len;
                    }
                }
                Op::GatherRows(a, rows) => {
                    let shape = self.nodes[*a].value.shape().to_vec();
                    let mut g = ndarray::Array2::<f64>::zeros((shape[0], shape[1]));
                    let gv = go.view().into_dimensionality::<Ix2>().unwrap();
                    for (i, &r) in rows.iter().enumerate() {
                        let mut dst = g.row_mut(r);
                        dst += &gv.row(i);
                    }
                    self.accum(&mut grads, *a, g.into_dyn());
                }
                Op::Narrow(a, axis, start, len) => {
                    let mut g = ArrayD::zeros(self.nodes[*a].value.raw_dim());
                    {
                        let mut slice =
                            g.slice_axis_mut(Axis(*axis), ndarray::Slice::from(*start..start + len));
                        slice += &go;
                    }
                    self.accum(&mut grads, *a, g);
                }
                Op::GradReverse(a, mu) => {
                    self.accum(&mut grads, *a, go.mapv(|x| -mu * x));
                }
                Op::Dropout(a, mask) => {
                    self.accum(&mut grads, *a, &go * mask);
                }
                Op::LambdaMaxSym(a, eigvec) => {
                    // dλ/dL = v vᵀ for a simple top eigenpair of symmetric L.
                    let g0 = *go.iter().next().unwrap();
                    let v = eigvec.view().into_dimensionality::<Ix1>().unwrap();
                    let n = v.len();
                    let mut g = ndarray::Array2::<f64>::zeros((n, n));
                    for i in 0..n {
                        for j in 0..n {
                            g[[i, j]] = g0 * v[i] * v[j];
                        }
                    }
                    self.accum(&mut grads, *a, g.into_dyn());
                }
                Op::Laplacian(a) => {
                    // grad_A[j,k] = go[j,j] - go[j,k]
                    let gv = go.view().into_dimensionality::<Ix2>().unwrap();
                    let n = gv.nrows();
                    let mut g = ndarray::Array2::<f64>::zeros((n, n));
                    for j in 0..n {
                        let d = gv[[j, j]];
                        for k in 0..n {
                            g[[j, k]] = d - gv[[j, k]];
                        }
                    }
                    self.accum(&mut grads, *a, g.into_dyn());
                }
            }
        }
        Grads { grads }
    }

    fn accum(&self, grads: &mut [Option<ArrayD<f64>>], id: NodeId, g: ArrayD<f64>) {
        match &mut grads[id] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }
}
