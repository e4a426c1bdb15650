//! Semi-supervised dual-stream learning for cross-subject EEG emotion
//! recognition.
//!
//! The pipeline combines two feature streams over differential-entropy (DE)
//! features from multichannel EEG:
//!
//! - a **non-structural stream**: an MLP feature extractor trained
//!   adversarially (gradient reversal against a domain discriminator) to
//!   align labeled-source, unlabeled-source, and target distributions;
//! - a **structural stream**: a learned per-sample channel graph with
//!   Chebyshev graph convolution, trained with a node-drop contrastive loss.
//!
//! Both 64-dim streams are concatenated and fused by batch-axis multi-head
//! self-attention; labeled-source samples are re-weighted by their cosine
//! similarity to the target batch before the classification loss.
//!
//! Training follows a leave-one-subject-out protocol with incomplete labels:
//! the unlabeled source domain joins only after a warm-up of `E_t` epochs,
//! at which point the domain discriminator switches from 2-way (S/T) to
//! 3-way (S/U/T) classification.
//!
//! Everything is built on a small tape-based reverse-mode autodiff
//! ([`autodiff`]) so that every loss gradient can be verified against
//! central finite differences.

pub mod adapt;
pub mod autodiff;
pub mod config;
pub mod contrast;
pub mod engine;
pub mod error;
pub mod featio;
pub mod fusion;
pub mod graphcore;
pub mod tsne;

pub use error::{Error, Result};
