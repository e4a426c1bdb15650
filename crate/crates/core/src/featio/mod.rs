//! Feature extraction, smoothing, dataset containers, synthetic data, and
//! the incomplete-label leave-one-subject-out partitioning.

mod container;
mod de;
mod smooth;
mod split;
mod synth;

pub use container::{load_features, load_raw, save_features, save_raw, RawDataset, RawWindow};
pub use de::extract_de;
pub use smooth::{lds_smooth, smooth_dataset, SmoothMethod};
pub use split::{partition_loso, DomainSplit, SplitManifest};
pub use synth::{generate_synthetic, SynthConfig};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Static description of a dataset: geometry, channel names, frequency
/// bands, sampling rate, and class count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_subjects: usize,
    pub n_trials_per_subject: usize,
    pub channels: Vec<String>,
    pub bands: Vec<(f64, f64)>,
    pub fs: f64,
    pub n_classes: usize,
}

impl DatasetManifest {
    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_bands(&self) -> usize {
        self.bands.len()
    }

    /// Flattened feature width `n_channels * n_bands`.
    pub fn feature_width(&self) -> usize {
        self.n_channels() * self.n_bands()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::Config("manifest has no channels".into()));
        }
        if self.bands.is_empty() {
            return Err(Error::Config("manifest has no bands".into()));
        }
        if self.n_classes < 1 {
            return Err(Error::Config("manifest needs at least one class".into()));
        }
        let mut max_edge: f64 = 0.0;
        for &(lo, hi) in &self.bands {
            if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi <= lo {
                return Err(Error::Config(format!("invalid band ({lo}, {hi})")));
            }
            max_edge = max_edge.max(hi);
        }
        if self.fs <= 2.0 * max_edge {
            return Err(Error::Config(format!(
                "sampling rate {} must exceed twice the top band edge {}",
                self.fs, max_edge
            )));
        }
        Ok(())
    }

    /// The canonical five EEG bands (Hz), half-open `[low, high)`.
    pub fn standard_bands() -> Vec<(f64, f64)> {
        vec![(1.0, 4.0), (4.0, 8.0), (8.0, 14.0), (14.0, 31.0), (31.0, 50.0)]
    }
}

/// One 1-second segment: per-channel, per-band differential entropy plus
/// provenance ids. `label` is `None` for records in unlabeled splits.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub subject: u16,
    pub trial: u16,
    pub segment: u32,
    pub de: Array2<f64>,
    pub label: Option<u16>,
}

/// A full feature dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<FeatureRecord>,
}

impl Dataset {
    /// Distinct subject ids, ascending.
    pub fn subjects(&self) -> Vec<u16> {
        let mut s: Vec<u16> = self.records.iter().map(|r| r.subject).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.manifest.validate()?;
        let shape = (self.manifest.n_channels(), self.manifest.n_bands());
        for r in &self.records {
            if r.de.dim() != shape {
                return Err(Error::DimensionMismatch(format!(
                    "record (subject {}, trial {}, segment {}) has shape {:?}, manifest demands {:?}",
                    r.subject,
                    r.trial,
                    r.segment,
                    r.de.dim(),
                    shape
                )));
            }
            if r.de.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!(
                    "record (subject {}, trial {}, segment {}) has non-finite features",
                    r.subject, r.trial, r.segment
                )));
            }
            if let Some(l) = r.label {
                if usize::from(l) >= self.manifest.n_classes {
                    return Err(Error::Input(format!(
                        "label {l} out of range for {} classes",
                        self.manifest.n_classes
                    )));
                }
            }
        }
        Ok(())
    }
}
