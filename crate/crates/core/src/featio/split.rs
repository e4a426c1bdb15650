//! Incomplete-label leave-one-subject-out partitioning.
//!
//! For a chosen target subject, the `N` unlabeled-source subjects are the
//! cyclic successors of the target id in the sorted subject list, so every
//! subject rotates through the unlabeled role across folds and the split is
//! fully determined by `(target, N)`.

use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureRecord};
use crate::error::{Error, Result};

/// Records partitioned into labeled source (S), unlabeled source (U, labels
/// stripped), and target (T, labels retained for evaluation only).
#[derive(Debug, Clone)]
pub struct DomainSplit {
    pub s: Vec<FeatureRecord>,
    pub u: Vec<FeatureRecord>,
    pub t: Vec<FeatureRecord>,
    pub s_subjects: Vec<u16>,
    pub u_subjects: Vec<u16>,
    pub target_subject: u16,
}

/// Serializable provenance for one fold's split.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SplitManifest {
    pub target_subject: u16,
    pub n_unlabeled: usize,
    pub s_subjects: Vec<u16>,
    pub u_subjects: Vec<u16>,
    pub s_records: usize,
    pub u_records: usize,
    pub t_records: usize,
}

impl DomainSplit {
    pub fn manifest(&self, n_unlabeled: usize) -> SplitManifest {
        SplitManifest {
            target_subject: self.target_subject,
            n_unlabeled,
            s_subjects: self.s_subjects.clone(),
            u_subjects: self.u_subjects.clone(),
            s_records: self.s.len(),
            u_records: self.u.len(),
            t_records: self.t.len(),
        }
    }
}

/// Partition `dataset` for one fold. `n_unlabeled` subjects cyclically
/// following `target_subject` become U (labels stripped); the rest of the
/// non-target subjects keep their labels as S. The `_seed` parameter is
/// accepted for interface stability; the selection rule itself is
/// deterministic.
pub fn partition_loso(
    dataset: &Dataset,
    target_subject: u16,
    n_unlabeled: usize,
    _seed: u64,
) -> Result<DomainSplit> {
    let subjects = dataset.subjects();
    let n = subjects.len();
    if n < 2 {
        return Err(Error::Config("need at least 2 subjects to partition".into()));
    }
    let pos = subjects
        .iter()
        .position(|&s| s == target_subject)
        .ok_or_else(|| Error::Config(format!("subject {target_subject} not in dataset")))?;
    if n_unlabeled > n - 2 {
        return Err(Error::Config(format!(
            "n_unlabeled {} out of range 0..={} for {} subjects",
            n_unlabeled,
            n - 2,
            n
        )));
    }
    let u_subjects: Vec<u16> = (1..=n_unlabeled).map(|k| subjects[(pos + k) % n]).collect();
    let s_subjects: Vec<u16> = subjects
        .iter()
        .cloned()
        .filter(|s| *s != target_subject && !u_subjects.contains(s))
        .collect();

    let mut s = Vec::new();
    let mut u = Vec::new();
    let mut t = Vec::new();
    for r in &dataset.records {
        if r.subject == target_subject {
            t.push(r.clone());
        } else if u_subjects.contains(&r.subject) {
            let mut stripped = r.clone();
            stripped.label = None;
            u.push(stripped);
        } else {
            if r.label.is_none() {
                return Err(Error::Input(format!(
                    "labeled-source record (subject {}) is missing its label",
                    r.subject
                )));
            }
            s.push(r.clone());
        }
    }
    Ok(DomainSplit { s, u, t, s_subjects, u_subjects, target_subject })
}
