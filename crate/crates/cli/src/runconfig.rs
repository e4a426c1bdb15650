//! Run configuration: training hyperparameters plus run-level paths and
//! options, round-tripping through the strict key-value text format.

use std::path::PathBuf;

use eegfuse::config::{parse_kv, TrainConfig};
use eegfuse::error::{Error, Result};

/// A full training-run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub n_unlabeled: usize,
    /// When nonempty, run the protocol once per listed E_t value.
    pub et_sweep: Vec<usize>,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            dataset: None,
            out: None,
            n_unlabeled: 2,
            et_sweep: Vec::new(),
            jobs: 1,
        }
    }
}

impl RunConfig {
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |k: &str, v: &str| Error::Config(format!("bad value '{v}' for key '{k}'"));
        match key {
            "dataset" => {
                self.dataset =
                    if value.is_empty() { None } else { Some(PathBuf::from(value)) }
            }
            "out" => {
                self.out = if value.is_empty() { None } else { Some(PathBuf::from(value)) }
            }
            "n_unlabeled" => self.n_unlabeled = value.parse().map_err(|_| bad(key, value))?,
            "et_sweep" => {
                self.et_sweep = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|p| p.trim().parse().map_err(|_| bad(key, value)))
                        .collect::<Result<Vec<usize>>>()?
                }
            }
            "jobs" => self.jobs = value.parse().map_err(|_| bad(key, value))?,
            _ => self.train.apply(key, value)?,
        }
        Ok(())
    }

    /// Parse config text; unknown keys are rejected by `TrainConfig::apply`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in parse_kv(text)? {
            cfg.apply(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        for &et in &self.et_sweep {
            if et > self.train.max_epochs {
                return Err(Error::Config(format!(
                    "et_sweep value {} exceeds max_epochs {}",
                    et, self.train.max_epochs
                )));
            }
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = self.train.render();
        out.push_str(&format!(
            "dataset = {}\n",
            self.dataset.as_deref().map(|p| p.display().to_string()).unwrap_or_default()
        ));
        out.push_str(&format!(
            "out = {}\n",
            self.out.as_deref().map(|p| p.display().to_string()).unwrap_or_default()
        ));
        out.push_str(&format!("n_unlabeled = {}\n", self.n_unlabeled));
        out.push_str(&format!(
            "et_sweep = {}\n",
            self.et_sweep.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(",")
        ));
        out.push_str(&format!("jobs = {}\n", self.jobs));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_identity() {
        let mut cfg = RunConfig::default();
        cfg.train.et = 10;
        cfg.train.seed = 42;
        cfg.dataset = Some(PathBuf::from("/tmp/data.bin"));
        cfg.out = Some(PathBuf::from("runs/a"));
        cfg.n_unlabeled = 3;
        cfg.et_sweep = vec![0, 10, 30];
        cfg.jobs = 4;
        let parsed = RunConfig::parse(&cfg.render()).unwrap();
        assert_eq!(cfg, parsed);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(RunConfig::parse("unknown_thing = 1\n").is_err());
    }

    #[test]
    fn sweep_value_bounded_by_max_epochs() {
        assert!(RunConfig::parse("max_epochs = 50\net_sweep = 0,60\n").is_err());
        assert!(RunConfig::parse("max_epochs = 50\net_sweep = 0,50\n").is_ok());
    }
}
