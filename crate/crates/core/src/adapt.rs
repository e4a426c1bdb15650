//! Adversarial feature alignment: gradient reversal and the staged
//! two-then-three-domain discriminator loss.
//!
//! The discriminator always owns a 3-way head over {S, U, T}. While the
//! schedule is in stage 2 the U logit is masked to -inf before the softmax,
//! so the head behaves as the 2-way S/T classifier without discarding
//! trained weights at the stage switch.

use ndarray::{Array2, ArrayD};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};

/// Log arguments inside cross-entropies are clamped at this floor.
pub const LOG_CLAMP: f64 = 1e-12;

/// Domain of origin for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DomainTag {
    /// Labeled source.
    S,
    /// Unlabeled source.
    U,
    /// Target (labels hidden from training).
    T,
}

impl DomainTag {
    /// Column index in the 3-way discriminator head.
    pub fn index(self) -> usize {
        match self {
            DomainTag::S => 0,
            DomainTag::U => 1,
            DomainTag::T => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DomainTag::S => "S",
            DomainTag::U => "U",
            DomainTag::T => "T",
        }
    }
}

/// Training stage: 2-way (S/T) before `E_t`, 3-way (S/U/T) after.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Two,
    Three,
}

impl Stage {
    pub fn as_u8(self) -> u8 {
        match self {
            Stage::Two => 2,
            Stage::Three => 3,
        }
    }
}

/// One-hot domain labels over {S, U, T} for a batch.
pub fn one_hot_domains(tags: &[DomainTag]) -> Array2<f64> {
    let mut m = Array2::zeros((tags.len(), 3));
    for (i, t) in tags.iter().enumerate() {
        m[[i, t.index()]] = 1.0;
    }
    m
}

/// Identity in the forward pass; multiplies the incoming gradient by `-mu`
/// in the backward pass.
pub fn grad_reverse_t(tape: &mut Tape, features: NodeId, mu: f64) -> NodeId {
    tape.grad_reverse(features, mu)
}

/// Value-level gradient reversal: the forward pass is the identity.
pub fn grad_reverse(features: &ArrayD<f64>, _mu: f64) -> ArrayD<f64> {
    features.clone()
}

/// Apply the stage mask to 3-way logits and softmax. In stage 2 the U
/// column gets -inf so it receives exactly zero probability.
pub fn masked_softmax_t(tape: &mut Tape, logits: NodeId, stage: Stage) -> NodeId {
    let masked = match stage {
        Stage::Three => logits,
        Stage::Two => {
            let b = tape.value(logits).shape()[0];
            let mut mask = Array2::<f64>::zeros((b, 3));
            for i in 0..b {
                mask[[i, DomainTag::U.index()]] = f64::NEG_INFINITY;
            }
            let mask = tape.leaf2(mask);
            tape.add(logits, mask)
        }
    };
    tape.softmax(masked)
}

/// Cross-entropy of probability rows against one-hot labels (mean over
/// rows, log clamp at 1e-12).
pub fn cross_entropy_t(tape: &mut Tape, probs: NodeId, one_hot: &Array2<f64>) -> NodeId {
    let y = tape.leaf2(one_hot.clone());
    let p = tape.clamp_min(probs, LOG_CLAMP);
    let lp = tape.ln(p);
    let picked = tape.mul(y, lp);
    let total = tape.sum_all(picked);
    let b = one_hot.nrows() as f64;
    tape.scale(total, -1.0 / b)
}

/// Discriminator loss on already-computed output probabilities.
///
/// In stage 2, `probs` may have 2 columns (S, T) or 3 columns with the U
/// column identically zero; U rows are a protocol error.
pub fn domain_ce(probs: &Array2<f64>, tags: &[DomainTag], stage: Stage) -> Result<f64> {
    if probs.nrows() != tags.len() {
        return Err(Error::Shape(format!(
            "{} probability rows vs {} labels",
            probs.nrows(),
            tags.len()
        )));
    }
    if stage == Stage::Two && tags.contains(&DomainTag::U) {
        return Err(Error::Protocol("unlabeled-source rows present in stage 2".into()));
    }
    let col = |tag: DomainTag| -> Result<usize> {
        match (stage, probs.ncols()) {
            (_, 3) => Ok(tag.index()),
            (Stage::Two, 2) => Ok(match tag {
                DomainTag::S => 0,
                DomainTag::T => 1,
                DomainTag::U => unreachable!(),
            }),
            (_, c) => Err(Error::Shape(format!("unexpected {c} probability columns"))),
        }
    };
    if stage == Stage::Two && probs.ncols() == 3 {
        let u = DomainTag::U.index();
        if probs.column(u).iter().any(|&p| p != 0.0) {
            return Err(Error::Protocol(
                "stage 2 requires zero probability on the U class".into(),
            ));
        }
    }
    let mut total = 0.0;
    for (i, &tag) in tags.iter().enumerate() {
        let p = probs[[i, col(tag)?]];
        total -= p.max(LOG_CLAMP).ln();
    }
    Ok(total / tags.len() as f64)
}
