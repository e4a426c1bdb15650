//! Model architecture, the named parameter store, and checkpoints.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featio::DatasetManifest;

/// Hidden/output width of both stream extractors.
pub const FEATURE_WIDTH: usize = 64;
/// Projector output width.
pub const PROJECTOR_OUT: usize = 32;
/// Width of the similarity representation produced by the phi layer.
pub const PHI_WIDTH: usize = 64;

/// Concrete layer widths derived from dataset geometry and config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub n_channels: usize,
    pub n_bands: usize,
    pub n_classes: usize,
    pub drop_count: usize,
    pub cheb_order: usize,
    pub n_heads: usize,
}

impl Arch {
    pub fn from_manifest(
        manifest: &DatasetManifest,
        drop_count: usize,
        cheb_order: usize,
        n_heads: usize,
    ) -> Result<Self> {
        let arch = Arch {
            n_channels: manifest.n_channels(),
            n_bands: manifest.n_bands(),
            n_classes: manifest.n_classes,
            drop_count,
            cheb_order,
            n_heads,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.drop_count >= self.n_channels {
            return Err(Error::Config(format!(
                "drop_count {} must be < channel count {}",
                self.drop_count, self.n_channels
            )));
        }
        if !self.fused_width().is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "fused width {} is not divisible into {} heads",
                self.fused_width(),
                self.n_heads
            )));
        }
        if self.cheb_order < 1 {
            return Err(Error::Config("Chebyshev order must be >= 1".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        Ok(())
    }

    /// Flattened input width of the non-structural extractor.
    pub fn ns_input(&self) -> usize {
        self.n_channels * self.n_bands
    }

    /// Surviving channels after node drop.
    pub fn kept_nodes(&self) -> usize {
        self.n_channels - self.drop_count
    }

    /// Flattened input width of the structural extractor.
    pub fn s_input(&self) -> usize {
        self.kept_nodes() * self.n_bands
    }

    /// Concatenated token width entering attention.
    pub fn fused_width(&self) -> usize {
        2 * FEATURE_WIDTH
    }
}

/// Named tensors in a fixed order so iteration, checkpoints, and gradient
/// application are all deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<ArrayD<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn push(&mut self, name: &str, tensor: ArrayD<f64>) {
        debug_assert!(!self.names.iter().any(|n| n == name), "duplicate tensor {name}");
        self.names.push(name.to_string());
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> usize {
        self.names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unknown tensor '{name}'"))
    }

    pub fn get(&self, name: &str) -> &ArrayD<f64> {
        &self.tensors[self.index_of(name)]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ArrayD<f64> {
        let i = self.index_of(name);
        &mut self.tensors[i]
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn tensor(&self, idx: usize) -> &ArrayD<f64> {
        &self.tensors[idx]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut ArrayD<f64> {
        &mut self.tensors[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.names.iter().map(|s| s.as_str()).zip(self.tensors.iter())
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// First tensor holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.iter().find(|(_, t)| t.iter().any(|v| !v.is_finite())).map(|(n, _)| n)
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

fn uniform_fan_in(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = 1.0 / (rows as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

fn push_affine(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, rows: usize, cols: usize) {
    store.push(&format!("{name}.w"), uniform_fan_in(rng, rows, cols).into_dyn());
    store.push(&format!("{name}.b"), Array1::<f64>::zeros(cols).into_dyn());
}

/// All trainable tensors: the two extractor stacks, graph weight and
/// Chebyshev coefficients, projector, discriminator, attention projections,
/// phi layer, and the classifier head.
pub fn init_params(arch: &Arch, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let h = FEATURE_WIDTH;

    push_affine(&mut store, &mut rng, "f_ns.0", arch.ns_input(), h);
    push_affine(&mut store, &mut rng, "f_ns.1", h, h);
    push_affine(&mut store, &mut rng, "f_ns.2", h, h);

    push_affine(&mut store, &mut rng, "f_s.0", arch.s_input(), h);
    push_affine(&mut store, &mut rng, "f_s.1", h, h);
    push_affine(&mut store, &mut rng, "f_s.2", h, h);

    // near-pass-through graph stream: all-ones distance weight and an
    // identity Chebyshev filter
    store.push("graph.w", Array1::<f64>::ones(arch.n_bands).into_dyn());
    let mut theta = Array1::<f64>::zeros(arch.cheb_order);
    theta[0] = 1.0;
    store.push("graph.theta", theta.into_dyn());

    push_affine(&mut store, &mut rng, "proj.0", h, h);
    push_affine(&mut store, &mut rng, "proj.1", h, PROJECTOR_OUT);

    push_affine(&mut store, &mut rng, "disc.0", h, h);
    push_affine(&mut store, &mut rng, "disc.1", h, h);
    push_affine(&mut store, &mut rng, "disc.2", h, 3);

    let fw = arch.fused_width();
    push_affine(&mut store, &mut rng, "fuse.q", fw, fw);
    push_affine(&mut store, &mut rng, "fuse.k", fw, fw);
    push_affine(&mut store, &mut rng, "fuse.v", fw, fw);

    push_affine(&mut store, &mut rng, "phi", fw, PHI_WIDTH);
    push_affine(&mut store, &mut rng, "cls", fw, arch.n_classes);

    store
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_FORMAT: &str = "eegfuse.checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    arch: Arch,
    tensors: Vec<(String, Vec<usize>)>,
}

/// Write `params` with its architecture to a versioned container file.
pub fn save_checkpoint(arch: &Arch, params: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        arch: arch.clone(),
        tensors: params.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let mut payload = Vec::with_capacity(params.total_len() * 8);
    for (_, t) in params.iter() {
        for v in t.iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut buf = Vec::with_capacity(8 + header_json.len() + payload.len());
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);
    buf.extend_from_slice(&payload);
    let mut f = fs::File::create(path.as_ref())?;
    f.write_all(&buf)?;
    Ok(())
}

/// Read a checkpoint back.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Arch, ParamStore)> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if bytes.len() < 8 {
        return Err(Error::MalformedHeader(format!("{}: too short", path.display())));
    }
    let header_len = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + header_len {
        return Err(Error::MalformedHeader(format!("{}: header cut short", path.display())));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[8..8 + header_len])
        .map_err(|e| Error::MalformedHeader(format!("{}: {e}", path.display())))?;
    if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
        return Err(Error::MalformedHeader(format!(
            "{}: not a version-{CHECKPOINT_VERSION} checkpoint",
            path.display()
        )));
    }
    header.arch.validate()?;
    let payload = &bytes[8 + header_len..];
    let expected: usize = header.tensors.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if payload.len() != expected * 8 {
        return Err(Error::TruncatedPayload(format!(
            "{}: payload holds {} bytes, header demands {}",
            path.display(),
            payload.len(),
            expected * 8
        )));
    }
    let mut store = ParamStore::new();
    let mut off = 0usize;
    for (name, shape) in &header.tensors {
        let count: usize = shape.iter().product();
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(f64::from_le_bytes(payload[off..off + 8].try_into().unwrap()));
            off += 8;
        }
        let t = ArrayD::from_shape_vec(IxDyn(shape), data)
            .map_err(|e| Error::DimensionMismatch(format!("{name}: {e}")))?;
        store.push(name, t);
    }
    Ok((header.arch, store))
}

/// Verify that a checkpoint's architecture matches a dataset's geometry.
pub fn check_compatible(arch: &Arch, manifest: &DatasetManifest) -> Result<()> {
    if arch.n_channels != manifest.n_channels()
        || arch.n_bands != manifest.n_bands()
        || arch.n_classes != manifest.n_classes
    {
        return Err(Error::DimensionMismatch(format!(
            "checkpoint built for {} channels x {} bands, {} classes; dataset has {} x {}, {} classes",
            arch.n_channels,
            arch.n_bands,
            arch.n_classes,
            manifest.n_channels(),
            manifest.n_bands(),
            manifest.n_classes
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> Arch {
        Arch {
            n_channels: 62,
            n_bands: 5,
            n_classes: 3,
            drop_count: 13,
            cheb_order: 3,
            n_heads: 64,
        }
    }

    #[test]
    fn seed_geometry_matches_reference_widths() {
        let a = arch();
        assert_eq!(a.ns_input(), 310);
        assert_eq!(a.kept_nodes(), 49);
        assert_eq!(a.s_input(), 245);
        assert_eq!(a.fused_width(), 128);
        assert!(a.validate().is_ok());
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = arch();
        let p1 = init_params(&a, 7);
        let p2 = init_params(&a, 7);
        assert_eq!(p1, p2);
        assert_eq!(p1.get("f_ns.0.w").shape(), &[310, 64]);
        assert_eq!(p1.get("f_s.0.w").shape(), &[245, 64]);
        assert_eq!(p1.get("disc.2.w").shape(), &[64, 3]);
        assert_eq!(p1.get("graph.w").shape(), &[5]);
        // identity filter start
        let theta = p1.get("graph.theta");
        assert_eq!(theta[[0]], 1.0);
        assert_eq!(theta[[1]], 0.0);
        // all-ones adjacency weight
        assert!(p1.get("graph.w").iter().all(|&v| v == 1.0));
        // biases zero
        assert!(p1.get("cls.b").iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let a = arch();
        let p = init_params(&a, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&a, &p, &path).unwrap();
        let (a2, p2) = load_checkpoint(&path).unwrap();
        assert_eq!(a, a2);
        assert_eq!(p, p2);
    }

    #[test]
    fn incompatible_checkpoint_detected() {
        let a = arch();
        let manifest = DatasetManifest {
            n_subjects: 3,
            n_trials_per_subject: 3,
            channels: (0..16).map(|i| format!("C{i}")).collect(),
            bands: DatasetManifest::standard_bands(),
            fs: 200.0,
            n_classes: 3,
        };
        assert!(matches!(
            check_compatible(&a, &manifest),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn head_divisibility_enforced() {
        let mut a = arch();
        a.n_heads = 3;
        assert!(matches!(a.validate(), Err(Error::Config(_))));
    }
}
