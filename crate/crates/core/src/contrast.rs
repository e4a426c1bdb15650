//! Node-drop graph augmentation and the normalized temperature-scaled
//! contrastive loss.
//!
//! Two augmented views of each sample's convolved graph are produced by
//! dropping a fixed number of channels; surviving node features are
//! flattened (channel-major, band-minor) and pushed through the structural
//! extractor and projector. The contrastive loss pulls the two projections
//! of the same sample together against in-batch negatives drawn from the
//! anchor's own view, symmetrized over the two views.

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};

/// One node-drop view: the surviving node indices (ascending) and the
/// flattened surviving rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedView {
    pub kept_nodes: Vec<usize>,
    pub flat: Vec<f64>,
}

/// Sample `drop_count` distinct node indices to drop, uniformly without
/// replacement. Returns the *kept* indices, ascending.
pub fn sample_kept_nodes<R: Rng>(
    n_nodes: usize,
    drop_count: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if drop_count >= n_nodes {
        return Err(Error::Config(format!(
            "drop_count {drop_count} must be < node count {n_nodes}"
        )));
    }
    // Floyd's algorithm: drop_count distinct draws from 0..n_nodes
    let mut dropped = std::collections::BTreeSet::new();
    for j in (n_nodes - drop_count)..n_nodes {
        let t = rng.random_range(0..=j);
        if !dropped.insert(t) {
            dropped.insert(j);
        }
    }
    Ok((0..n_nodes).filter(|i| !dropped.contains(i)).collect())
}

/// Drop `drop_count` random nodes from a convolved graph and flatten the
/// survivors row-major.
pub fn node_drop<R: Rng>(
    conv_out: &Array2<f64>,
    drop_count: usize,
    rng: &mut R,
) -> Result<AugmentedView> {
    let kept = sample_kept_nodes(conv_out.nrows(), drop_count, rng)?;
    let mut flat = Vec::with_capacity(kept.len() * conv_out.ncols());
    for &node in &kept {
        flat.extend(conv_out.row(node).iter());
    }
    Ok(AugmentedView { kept_nodes: kept, flat })
}

/// Tape version: gather the kept rows of `conv_out` and flatten to `[1, k*c]`.
pub fn node_drop_t(tape: &mut Tape, conv_out: NodeId, kept: &[usize]) -> NodeId {
    let c = tape.value(conv_out).shape()[1];
    let g = tape.gather_rows(conv_out, kept);
    tape.reshape(g, &[1, kept.len() * c])
}

/// Cosine-normalize the rows of a [b, d] node; norms clamped at 1e-12.
fn normalize_rows_t(tape: &mut Tape, z: NodeId) -> NodeId {
    let sq = tape.mul(z, z);
    let ss = tape.sum_axis_keep(sq, 1); // [b,1]
    let norm = tape.sqrt(ss);
    let norm = tape.clamp_min(norm, 1e-12);
    tape.div(z, norm)
}

/// One direction of the contrastive loss: anchors are rows of `za`,
/// positives the matching rows of `zb`, negatives the other rows of `za`.
fn nt_xent_one_side_t(tape: &mut Tape, za: NodeId, zb: NodeId, tau: f64) -> NodeId {
    let b = tape.value(za).shape()[0];
    let na = normalize_rows_t(tape, za);
    let nb = normalize_rows_t(tape, zb);
    // positive similarities: rowwise dot of matching rows
    let prod = tape.mul(na, nb);
    let pos = tape.sum_axis_keep(prod, 1); // [b,1]
    let pos = tape.scale(pos, 1.0 / tau);
    // own-view similarity matrix with the diagonal masked out
    let nat = tape.transpose(na);
    let sims = tape.matmul(na, nat); // [b,b]
    let sims = tape.scale(sims, 1.0 / tau);
    let mut mask = Array2::<f64>::zeros((b, b));
    for i in 0..b {
        mask[[i, i]] = f64::NEG_INFINITY;
    }
    let mask = tape.leaf2(mask);
    let masked = tape.add(sims, mask);
    let ex = tape.exp(masked);
    let denom = tape.sum_axis_keep(ex, 1); // [b,1]
    let log_denom = tape.ln(denom);
    let per_anchor = tape.sub(log_denom, pos); // -pos + log denom
    tape.mean_all(per_anchor)
}

/// Contrastive loss on a tape, symmetrized over the two views.
pub fn nt_xent_t(tape: &mut Tape, z1: NodeId, z2: NodeId, tau: f64) -> NodeId {
    let l12 = nt_xent_one_side_t(tape, z1, z2, tau);
    let l21 = nt_xent_one_side_t(tape, z2, z1, tau);
    let sum = tape.add(l12, l21);
    tape.scale(sum, 0.5)
}

/// Normalized temperature-scaled contrastive loss between two views.
///
/// Rows of `z1`/`z2` are the projections of the same samples under the two
/// augmentations. Requires at least two rows and `tau > 0`; rows must have
/// nonzero norm.
pub fn nt_xent(z1: &Array2<f64>, z2: &Array2<f64>, tau: f64) -> Result<f64> {
    if z1.shape() != z2.shape() {
        return Err(Error::Shape(format!(
            "view shapes differ: {:?} vs {:?}",
            z1.shape(),
            z2.shape()
        )));
    }
    if z1.nrows() < 2 {
        return Err(Error::Config("contrastive loss needs a batch of at least 2".into()));
    }
    if tau <= 0.0 {
        return Err(Error::Config("temperature must be > 0".into()));
    }
    for (name, z) in [("view 1", z1), ("view 2", z2)] {
        for row in z.rows() {
            let norm: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Numeric(format!("zero-norm row in {name}")));
            }
            if !norm.is_finite() {
                return Err(Error::Input(format!("non-finite row in {name}")));
            }
        }
    }
    let mut tape = Tape::new();
    let a = tape.leaf2(z1.clone());
    let b = tape.leaf2(z2.clone());
    let l = nt_xent_t(&mut tape, a, b, tau);
    Ok(tape.scalar_value(l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn node_drop_zero_is_flatten() {
        let m = arr2(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = node_drop(&m, 0, &mut rng).unwrap();
        assert_eq!(v.kept_nodes, vec![0, 1, 2]);
        assert_eq!(v.flat, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn node_drop_62_to_49_gives_245() {
        let m = Array2::<f64>::zeros((62, 5));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = node_drop(&m, 13, &mut rng).unwrap();
        assert_eq!(v.kept_nodes.len(), 49);
        assert_eq!(v.flat.len(), 245);
        // kept indices strictly increasing
        assert!(v.kept_nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn node_drop_deterministic_under_seed() {
        let m = Array2::<f64>::from_shape_fn((10, 3), |(i, j)| (i * 3 + j) as f64);
        let a = node_drop(&m, 4, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = node_drop(&m, 4, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn node_drop_preserves_values() {
        let m = Array2::<f64>::from_shape_fn((8, 2), |(i, j)| (i * 2 + j) as f64 * 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = node_drop(&m, 3, &mut rng).unwrap();
        for (slot, &node) in v.kept_nodes.iter().enumerate() {
            assert_eq!(v.flat[slot * 2], m[[node, 0]]);
            assert_eq!(v.flat[slot * 2 + 1], m[[node, 1]]);
        }
    }

    #[test]
    fn node_drop_rejects_full_drop() {
        let m = Array2::<f64>::zeros((4, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(node_drop(&m, 4, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn nt_xent_two_row_orthonormal() {
        // Z1 rows e1, e2; Z2 = Z1; tau = 1:
        // per anchor: -(1) + ln(exp(0)) = -1
        let z = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let loss = nt_xent(&z, &z, 1.0).unwrap();
        assert!((loss - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn nt_xent_scale_invariant() {
        let z1 = arr2(&[[0.3, 1.2, -0.5], [1.0, 0.1, 0.4], [-0.2, 0.8, 0.9]]);
        let z2 = arr2(&[[0.1, 1.0, -0.3], [0.9, 0.2, 0.5], [-0.1, 0.7, 1.1]]);
        let base = nt_xent(&z1, &z2, 0.5).unwrap();
        let mut scaled = z1.clone();
        for v in scaled.row_mut(1).iter_mut() {
            *v *= 7.5;
        }
        let after = nt_xent(&scaled, &z2, 0.5).unwrap();
        assert!((base - after).abs() < 1e-12);
    }

    /// Plain double-loop reference, independent of the tape path.
    fn nt_xent_bruteforce(z1: &Array2<f64>, z2: &Array2<f64>, tau: f64) -> f64 {
        let cos = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| {
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
        };
        let b = z1.nrows();
        let side = |za: &Array2<f64>, zb: &Array2<f64>| {
            let mut total = 0.0;
            for i in 0..b {
                let num = (cos(za.row(i), zb.row(i)) / tau).exp();
                let mut den = 0.0;
                for k in 0..b {
                    if k != i {
                        den += (cos(za.row(i), za.row(k)) / tau).exp();
                    }
                }
                total += -(num / den).ln();
            }
            total / b as f64
        };
        0.5 * (side(z1, z2) + side(z2, z1))
    }

    #[test]
    fn nt_xent_matches_bruteforce() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &b in &[2usize, 4, 8] {
            let z1 = Array2::from_shape_fn((b, 5), |_| rng.random::<f64>() * 2.0 - 1.0);
            let z2 = Array2::from_shape_fn((b, 5), |_| rng.random::<f64>() * 2.0 - 1.0);
            let got = nt_xent(&z1, &z2, 0.5).unwrap();
            let want = nt_xent_bruteforce(&z1, &z2, 0.5);
            assert!((got - want).abs() < 1e-9, "B={b}: {got} vs {want}");
        }
    }

    #[test]
    fn nt_xent_decreases_as_views_align() {
        // rotate Z2 rows toward Z1 rows while negatives (own view) stay fixed
        let z1 = arr2(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]);
        let far = arr2(&[[0.0, 1.0], [1.0, 0.0], [0.0, -1.0]]);
        let near = arr2(&[[0.9, 0.1], [0.1, 0.9], [-0.9, -0.1]]);
        let l_far = nt_xent(&z1, &far, 0.5).unwrap();
        let l_near = nt_xent(&z1, &near, 0.5).unwrap();
        assert!(l_near < l_far);
    }

    #[test]
    fn nt_xent_rejects_bad_inputs() {
        let one = arr2(&[[1.0, 0.0]]);
        assert!(matches!(nt_xent(&one, &one, 1.0), Err(Error::Config(_))));
        let z = arr2(&[[1.0, 0.0], [0.0, 0.0]]);
        assert!(matches!(nt_xent(&z, &z, 1.0), Err(Error::Numeric(_))));
        let ok = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        assert!(matches!(nt_xent(&ok, &ok, 0.0), Err(Error::Config(_))));
    }
}
