//! Training configuration and the strict plain-text key-value format.
//!
//! Config files are `key = value` lines with `#` comments. Parsing rejects
//! unknown and duplicate keys outright so a typo in an ablation flag can
//! never silently run the wrong experiment.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::fusion::CeMode;

/// Ablation switches (each removes one component's contribution).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ablations {
    pub no_disc: bool,
    pub no_contrastive: bool,
    pub no_attn_fusion: bool,
    pub no_sample_weights: bool,
}

impl Ablations {
    pub const NAMES: [&'static str; 4] =
        ["no_disc", "no_contrastive", "no_attn_fusion", "no_sample_weights"];

    pub fn set(&mut self, name: &str) -> Result<()> {
        match name {
            "no_disc" => self.no_disc = true,
            "no_contrastive" => self.no_contrastive = true,
            "no_attn_fusion" => self.no_attn_fusion = true,
            "no_sample_weights" => self.no_sample_weights = true,
            other => return Err(Error::Config(format!("unknown ablation '{other}'"))),
        }
        Ok(())
    }

    pub fn parse_list(list: &str) -> Result<Self> {
        let mut a = Ablations::default();
        for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            a.set(part)?;
        }
        Ok(a)
    }

    pub fn render_list(&self) -> String {
        let mut names = Vec::new();
        if self.no_disc {
            names.push("no_disc");
        }
        if self.no_contrastive {
            names.push("no_contrastive");
        }
        if self.no_attn_fusion {
            names.push("no_attn_fusion");
        }
        if self.no_sample_weights {
            names.push("no_sample_weights");
        }
        names.join(",")
    }

    /// Run label used in metrics files: "full" or the ablation list.
    pub fn variant_name(&self) -> String {
        let list = self.render_list();
        if list.is_empty() {
            "full".into()
        } else {
            list
        }
    }
}

/// All training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// E_t: last epoch of the 2-domain stage; U joins at `et + 1`.
    pub et: usize,
    pub max_epochs: usize,
    pub tau: f64,
    pub lambda_reg: f64,
    /// Chebyshev coefficient count (polynomial degree + 1).
    pub cheb_order: usize,
    pub n_heads: usize,
    /// Channels dropped per augmentation view; `None` derives
    /// ceil(0.2 * n_channels), which is 13 on 62 channels.
    pub drop_count: Option<usize>,
    pub alpha_disc: f64,
    pub alpha_gcn: f64,
    pub alpha_gcl: f64,
    pub seed: u64,
    pub ce_mode: CeMode,
    pub ablations: Ablations,
    /// Deterministic augmentation views averaged at evaluation time.
    pub eval_views: usize,
    /// Capture fused-feature embedding snapshots (epochs 0, 30, final).
    pub snapshots: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 48,
            et: 30,
            max_epochs: 100,
            tau: 0.5,
            lambda_reg: 0.01,
            cheb_order: 3,
            n_heads: 64,
            drop_count: None,
            alpha_disc: 1.0,
            alpha_gcn: 1.0,
            alpha_gcl: 1.0,
            seed: 0,
            ce_mode: CeMode::InsideLog,
            ablations: Ablations::default(),
            eval_views: 1,
            snapshots: false,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 17] = [
        "lr",
        "batch",
        "et",
        "max_epochs",
        "tau",
        "lambda_reg",
        "phi",
        "heads",
        "drop_count",
        "alpha_disc",
        "alpha_gcn",
        "alpha_gcl",
        "seed",
        "ce_mode",
        "ablate",
        "eval_views",
        "snapshots",
    ];

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be >= 2".into()));
        }
        if self.et > self.max_epochs {
            return Err(Error::Config(format!(
                "et {} must not exceed max_epochs {}",
                self.et, self.max_epochs
            )));
        }
        if self.tau <= 0.0 {
            return Err(Error::Config("tau must be > 0".into()));
        }
        if self.lambda_reg < 0.0 {
            return Err(Error::Config("lambda_reg must be >= 0".into()));
        }
        if self.cheb_order < 1 {
            return Err(Error::Config("phi must be >= 1".into()));
        }
        if self.n_heads < 1 {
            return Err(Error::Config("heads must be >= 1".into()));
        }
        if self.alpha_disc < 0.0 || self.alpha_gcn < 0.0 || self.alpha_gcl < 0.0 {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        if self.eval_views < 1 {
            return Err(Error::Config("eval_views must be >= 1".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("lr must be > 0".into()));
        }
        Ok(())
    }

    /// Effective drop count for `n_channels`.
    pub fn drop_count_for(&self, n_channels: usize) -> usize {
        self.drop_count
            .unwrap_or_else(|| ((0.2 * n_channels as f64).ceil() as usize).max(1))
    }

    /// Apply one key-value assignment.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |k: &str, v: &str| Error::Config(format!("bad value '{v}' for key '{k}'"));
        match key {
            "lr" => self.lr = value.parse().map_err(|_| bad(key, value))?,
            "batch" => self.batch_size = value.parse().map_err(|_| bad(key, value))?,
            "et" => self.et = value.parse().map_err(|_| bad(key, value))?,
            "max_epochs" => self.max_epochs = value.parse().map_err(|_| bad(key, value))?,
            "tau" => self.tau = value.parse().map_err(|_| bad(key, value))?,
            "lambda_reg" => self.lambda_reg = value.parse().map_err(|_| bad(key, value))?,
            "phi" => self.cheb_order = value.parse().map_err(|_| bad(key, value))?,
            "heads" => self.n_heads = value.parse().map_err(|_| bad(key, value))?,
            "drop_count" => {
                self.drop_count = if value == "auto" {
                    None
                } else {
                    Some(value.parse().map_err(|_| bad(key, value))?)
                }
            }
            "alpha_disc" => self.alpha_disc = value.parse().map_err(|_| bad(key, value))?,
            "alpha_gcn" => self.alpha_gcn = value.parse().map_err(|_| bad(key, value))?,
            "alpha_gcl" => self.alpha_gcl = value.parse().map_err(|_| bad(key, value))?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key, value))?,
            "ce_mode" => self.ce_mode = CeMode::parse(value)?,
            "ablate" => self.ablations = Ablations::parse_list(value)?,
            "eval_views" => self.eval_views = value.parse().map_err(|_| bad(key, value))?,
            "snapshots" => {
                self.snapshots = match value {
                    "true" => true,
                    "false" => false,
                    _ => return Err(bad(key, value)),
                }
            }
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Render every key in declaration order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "lr = {}", self.lr);
        let _ = writeln!(out, "batch = {}", self.batch_size);
        let _ = writeln!(out, "et = {}", self.et);
        let _ = writeln!(out, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(out, "tau = {}", self.tau);
        let _ = writeln!(out, "lambda_reg = {}", self.lambda_reg);
        let _ = writeln!(out, "phi = {}", self.cheb_order);
        let _ = writeln!(out, "heads = {}", self.n_heads);
        match self.drop_count {
            Some(d) => {
                let _ = writeln!(out, "drop_count = {d}");
            }
            None => {
                let _ = writeln!(out, "drop_count = auto");
            }
        }
        let _ = writeln!(out, "alpha_disc = {}", self.alpha_disc);
        let _ = writeln!(out, "alpha_gcn = {}", self.alpha_gcn);
        let _ = writeln!(out, "alpha_gcl = {}", self.alpha_gcl);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "ce_mode = {}", self.ce_mode.as_str());
        let _ = writeln!(out, "ablate = {}", self.ablations.render_list());
        let _ = writeln!(out, "eval_views = {}", self.eval_views);
        let _ = writeln!(out, "snapshots = {}", self.snapshots);
        out
    }
}

/// Parse `key = value` lines; returns pairs in file order.
/// Duplicate keys are rejected.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut seen = BTreeSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected 'key = value', got '{raw}'", lineno + 1))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !seen.insert(key.clone()) {
            return Err(Error::Config(format!("line {}: duplicate key '{key}'", lineno + 1)));
        }
        pairs.push((key, value));
    }
    Ok(pairs)
}

/// Parse a full [`TrainConfig`] from config text (all keys optional,
/// unknown keys rejected).
pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (k, v) in parse_kv(text)? {
        cfg.apply(&k, &v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
