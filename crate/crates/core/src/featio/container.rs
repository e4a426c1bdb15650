//! Binary feature and raw-signal containers.
//!
//! A container file is a length-prefixed UTF-8 JSON header followed by a
//! little-endian binary payload:
//!
//! ```text
//! [u64 le: header byte count][header JSON][payload]
//! ```
//!
//! Feature payload: `n_records * n_channels * n_bands` f64 values in
//! record-major, channel-major, band-minor order, then `n_records` i16
//! labels with -1 meaning unlabeled. Raw payload: f64 samples in
//! record-major, channel-major, sample-minor order.
//!
//! A directory works as a dataset too (one file per subject); manifests
//! must agree on everything except `n_subjects`.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetManifest, FeatureRecord};
use crate::error::{Error, Result};

const FEATURE_FORMAT: &str = "eegfuse.features";
const RAW_FORMAT: &str = "eegfuse.raw";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct FeatureHeader {
    format: String,
    version: u32,
    manifest: DatasetManifest,
    n_records: usize,
    /// [subject, trial, segment] per record.
    records: Vec<(u16, u16, u32)>,
}

/// One raw window: 1 second of multichannel signal plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct RawWindow {
    pub subject: u16,
    pub trial: u16,
    pub segment: u32,
    pub samples: Array2<f64>,
    pub label: Option<u16>,
}

/// A raw-signal dataset awaiting feature extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub manifest: DatasetManifest,
    pub windows: Vec<RawWindow>,
}

#[derive(Serialize, Deserialize)]
struct RawHeader {
    format: String,
    version: u32,
    manifest: DatasetManifest,
    n_records: usize,
    /// [subject, trial, segment, label] per record; label -1 = unlabeled.
    records: Vec<(u16, u16, u32, i32)>,
}

fn write_container(path: &Path, header_json: &[u8], payload: &[u8]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + header_json.len() + payload.len());
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(header_json);
    buf.extend_from_slice(payload);
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

fn read_container(path: &Path) -> Result<(Vec<u8>, Vec<u8>)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 {
        return Err(Error::MalformedHeader(format!(
            "{}: too short for a length prefix",
            path.display()
        )));
    }
    let header_len = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + header_len {
        return Err(Error::MalformedHeader(format!(
            "{}: declared header length {} exceeds file size",
            path.display(),
            header_len
        )));
    }
    let header = bytes[8..8 + header_len].to_vec();
    let payload = bytes[8 + header_len..].to_vec();
    Ok((header, payload))
}

/// Save a feature dataset to one container file.
pub fn save_features(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    dataset.validate()?;
    let header = FeatureHeader {
        format: FEATURE_FORMAT.into(),
        version: VERSION,
        manifest: dataset.manifest.clone(),
        n_records: dataset.records.len(),
        records: dataset.records.iter().map(|r| (r.subject, r.trial, r.segment)).collect(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let width = dataset.manifest.feature_width();
    let mut payload = Vec::with_capacity(dataset.records.len() * (width * 8 + 2));
    for r in &dataset.records {
        for v in r.de.iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    for r in &dataset.records {
        let l: i16 = r.label.map(|v| v as i16).unwrap_or(-1);
        payload.extend_from_slice(&l.to_le_bytes());
    }
    write_container(path.as_ref(), &header_json, &payload)
}

fn load_features_file(path: &Path) -> Result<Dataset> {
    let (header_bytes, payload) = read_container(path)?;
    let header: FeatureHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::MalformedHeader(format!("{}: {e}", path.display())))?;
    if header.format != FEATURE_FORMAT {
        return Err(Error::MalformedHeader(format!(
            "{}: format tag '{}' is not '{FEATURE_FORMAT}'",
            path.display(),
            header.format
        )));
    }
    if header.version != VERSION {
        return Err(Error::MalformedHeader(format!(
            "{}: unsupported version {}",
            path.display(),
            header.version
        )));
    }
    if header.records.len() != header.n_records {
        return Err(Error::DimensionMismatch(format!(
            "{}: header lists {} records but declares n_records = {}",
            path.display(),
            header.records.len(),
            header.n_records
        )));
    }
    header.manifest.validate()?;
    let n = header.n_records;
    let n_ch = header.manifest.n_channels();
    let n_b = header.manifest.n_bands();
    let float_bytes = n * n_ch * n_b * 8;
    let label_bytes = n * 2;
    let expected = float_bytes + label_bytes;
    if payload.len() != expected {
        // a whole number of f64s signals a count disagreement with the
        // manifest; anything else means the payload was cut mid-scalar
        let body = payload.len().saturating_sub(label_bytes);
        if payload.len() > expected || body % 8 == 0 {
            return Err(Error::DimensionMismatch(format!(
                "{}: payload holds {} bytes but the manifest ({} records x {} channels x {} bands) demands {}",
                path.display(),
                payload.len(),
                n,
                n_ch,
                n_b,
                expected
            )));
        }
        return Err(Error::TruncatedPayload(format!(
            "{}: payload ends mid-value ({} of {} bytes)",
            path.display(),
            payload.len(),
            expected
        )));
    }

    let mut records = Vec::with_capacity(n);
    let width = n_ch * n_b;
    for (i, &(subject, trial, segment)) in header.records.iter().enumerate() {
        let base = i * width * 8;
        let mut de = Array2::zeros((n_ch, n_b));
        for (j, v) in de.iter_mut().enumerate() {
            let off = base + j * 8;
            *v = f64::from_le_bytes(payload[off..off + 8].try_into().unwrap());
        }
        let loff = float_bytes + i * 2;
        let raw_label = i16::from_le_bytes(payload[loff..loff + 2].try_into().unwrap());
        let label = if raw_label < 0 { None } else { Some(raw_label as u16) };
        records.push(FeatureRecord { subject, trial, segment, de, label });
    }
    let dataset = Dataset { manifest: header.manifest, records };
    dataset.validate()?;
    Ok(dataset)
}

/// Load a feature dataset from a container file or a directory of per-
/// subject container files.
pub fn load_features(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    if !path.is_dir() {
        return load_features_file(path);
    }
    let mut files: Vec<_> = fs::read_dir(path)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Input(format!("{}: directory holds no files", path.display())));
    }
    let mut merged: Option<Dataset> = None;
    for f in &files {
        let part = load_features_file(f)?;
        match &mut merged {
            None => merged = Some(part),
            Some(acc) => {
                let a = &acc.manifest;
                let b = &part.manifest;
                if a.channels != b.channels
                    || a.bands != b.bands
                    || a.fs != b.fs
                    || a.n_classes != b.n_classes
                    || a.n_trials_per_subject != b.n_trials_per_subject
                {
                    return Err(Error::DimensionMismatch(format!(
                        "{}: manifest disagrees with earlier files in the directory",
                        f.display()
                    )));
                }
                acc.records.extend(part.records);
            }
        }
    }
    let mut dataset = merged.expect("at least one file");
    dataset.manifest.n_subjects = dataset.subjects().len();
    dataset.validate()?;
    Ok(dataset)
}

/// Save a raw-signal dataset.
pub fn save_raw(raw: &RawDataset, path: impl AsRef<Path>) -> Result<()> {
    raw.manifest.validate()?;
    let header = RawHeader {
        format: RAW_FORMAT.into(),
        version: VERSION,
        manifest: raw.manifest.clone(),
        n_records: raw.windows.len(),
        records: raw
            .windows
            .iter()
            .map(|w| {
                (w.subject, w.trial, w.segment, w.label.map(i32::from).unwrap_or(-1))
            })
            .collect(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let mut payload = Vec::new();
    for w in &raw.windows {
        for v in w.samples.iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_container(path.as_ref(), &header_json, &payload)
}

/// Load a raw-signal dataset.
pub fn load_raw(path: impl AsRef<Path>) -> Result<RawDataset> {
    let path = path.as_ref();
    let (header_bytes, payload) = read_container(path)?;
    let header: RawHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::MalformedHeader(format!("{}: {e}", path.display())))?;
    if header.format != RAW_FORMAT {
        return Err(Error::MalformedHeader(format!(
            "{}: format tag '{}' is not '{RAW_FORMAT}'",
            path.display(),
            header.format
        )));
    }
    header.manifest.validate()?;
    let n_ch = header.manifest.n_channels();
    let n_samples = header.manifest.fs.round() as usize;
    let expected = header.n_records * n_ch * n_samples * 8;
    if payload.len() != expected {
        if payload.len() > expected || payload.len() % 8 == 0 {
            return Err(Error::DimensionMismatch(format!(
                "{}: payload holds {} bytes, manifest demands {}",
                path.display(),
                payload.len(),
                expected
            )));
        }
        return Err(Error::TruncatedPayload(format!(
            "{}: payload ends mid-value",
            path.display()
        )));
    }
    let mut windows = Vec::with_capacity(header.n_records);
    for (i, &(subject, trial, segment, label)) in header.records.iter().enumerate() {
        let base = i * n_ch * n_samples * 8;
        let mut samples = Array2::zeros((n_ch, n_samples));
        for (j, v) in samples.iter_mut().enumerate() {
            let off = base + j * 8;
            *v = f64::from_le_bytes(payload[off..off + 8].try_into().unwrap());
        }
        let label = if label < 0 { None } else { Some(label as u16) };
        windows.push(RawWindow { subject, trial, segment, samples, label });
    }
    Ok(RawDataset { manifest: header.manifest, windows })
}
