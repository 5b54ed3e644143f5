use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domains::{Palette, ShiftSpec, TrainSize};
use crate::error::{Error, Result};
use crate::network::Architecture;
use crate::selector::Strategy;
use crate::trainer::TrainConfig;

/// One experiment, parsed from a single JSON document. Unknown keys are
/// rejected; everything except `source` and `output_dir` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub source: SourceSpec,
    #[serde(default = "default_arch")]
    pub architecture: Architecture,
    /// Master seed; every random stream in the experiment derives from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub shift: ShiftSpec,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default = "default_pretrain")]
    pub pretrain: TrainConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub pixel_unit: bool,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    pub output_dir: PathBuf,
}

fn default_arch() -> Architecture {
    Architecture::Mnist4
}

fn default_pretrain() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.early_stop.max_epochs = 60;
    cfg
}

fn default_strategies() -> Vec<Strategy> {
    vec![Strategy::Flex]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    /// An IDX image/label file pair.
    Idx { images: PathBuf, labels: PathBuf },
    /// Procedural digit glyphs.
    Synthetic {
        /// Data seed; defaults to the master seed.
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default = "default_count")]
        count: usize,
        #[serde(default = "default_size")]
        size: usize,
        #[serde(default)]
        palette: Palette,
        #[serde(default = "default_classes")]
        classes: usize,
    },
}

fn default_count() -> usize {
    6000
}
fn default_size() -> usize {
    16
}
fn default_classes() -> usize {
    10
}

/// How the dataset is divided into a source part (pretraining) and a
/// target part (shifted, then subsampled).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_source_fraction")]
    pub source_fraction: f64,
    #[serde(default = "default_holdout")]
    pub source_val: usize,
    #[serde(default = "default_holdout")]
    pub source_test: usize,
    #[serde(default = "default_holdout")]
    pub val: usize,
    #[serde(default = "default_holdout")]
    pub test: usize,
    /// Target training-set sizes; `select` uses the first.
    #[serde(default = "default_train_sizes")]
    pub train_sizes: Vec<TrainSize>,
}

fn default_source_fraction() -> f64 {
    0.5
}
fn default_holdout() -> usize {
    500
}
fn default_train_sizes() -> Vec<TrainSize> {
    vec![TrainSize::PerClass(30)]
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            source_fraction: default_source_fraction(),
            source_val: default_holdout(),
            source_test: default_holdout(),
            val: default_holdout(),
            test: default_holdout(),
            train_sizes: default_train_sizes(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetDomain {
    /// Queries are the shifted target test split.
    Shifted,
    /// Queries are the unshifted source validation split (self-retrieval).
    Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    /// Source network; defaults to `<output_dir>/pretrained.ckpt`.
    #[serde(default)]
    pub source_checkpoint: Option<PathBuf>,
    /// Tuned network; defaults to the chosen model of the first strategy.
    #[serde(default)]
    pub tuned_checkpoint: Option<PathBuf>,
    #[serde(default = "default_target_domain")]
    pub target_domain: TargetDomain,
}

fn default_k() -> usize {
    10
}
fn default_target_domain() -> TargetDomain {
    TargetDomain::Shifted
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: default_k(),
            source_checkpoint: None,
            tuned_checkpoint: None,
            target_domain: default_target_domain(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.split.source_fraction > 0.0 && self.split.source_fraction < 1.0) {
            return bad(format!("source_fraction must be in (0, 1), got {}", self.split.source_fraction));
        }
        if self.split.train_sizes.is_empty() {
            return bad("split.train_sizes must not be empty".into());
        }
        if self.strategies.is_empty() {
            return bad("strategies must not be empty".into());
        }
        if self.retrieval.k == 0 {
            return bad("retrieval.k must be at least 1".into());
        }
        if let SourceSpec::Idx { images, labels } = &self.source {
            for p in [images, labels] {
                if !p.exists() {
                    return bad(format!("dataset file {} does not exist", p.display()));
                }
            }
        }
        self.pretrain.validate().map_err(|e| Error::Config(format!("pretrain: {e}")))?;
        self.train.validate().map_err(|e| Error::Config(format!("train: {e}")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = ExperimentConfig::from_json(r#"{"source":{"synthetic":{}},"output_dir":"out"}"#).unwrap();
        assert_eq!(c.architecture, Architecture::Mnist4);
        assert_eq!(c.train.learning_rate, 1e-3);
        assert_eq!(c.train.early_stop.eval_every, 5);
        assert_eq!(c.strategies, vec![Strategy::Flex]);
        assert_eq!(c.retrieval.k, 10);
        assert_eq!(c.shift, ShiftSpec::Identity);
    }

    #[test]
    fn unknown_keys_and_missing_required_fields_fail() {
        assert!(ExperimentConfig::from_json(r#"{"source":{"synthetic":{}},"output_dir":"o","bogus":1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"output_dir":"o"}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"source":{"synthetic":{}}}"#).is_err());
        let e = ExperimentConfig::from_json(r#"{"source":{"synthetic":{}},"output_dir":"o","train":{"seed":3}}"#);
        assert!(e.is_err());
    }

    #[test]
    fn missing_idx_file_is_config_error() {
        let e = ExperimentConfig::from_json(
            r#"{"source":{"idx":{"images":"/nonexistent/a","labels":"/nonexistent/b"}},"output_dir":"o"}"#,
        )
        .unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn full_config_parses() {
        let c = ExperimentConfig::from_json(
            r#"{
              "source": {"synthetic": {"seed": 4, "count": 1000, "size": 16, "palette": "color", "classes": 10}},
              "architecture": "cifar7",
              "seed": 11,
              "shift": {"kind": "channel_mix", "matrix": [[0,1,0],[1,0,0],[0,0,1]], "offset": [0,0,0]},
              "split": {"source_fraction": 0.4, "val": 100, "test": 100, "train_sizes": [3, 30, {"fraction": 1.0}]},
              "train": {"learning_rate": 0.002, "batch_size": 16, "early_stop": {"eval_every": 10}},
              "strategies": ["flex", "fast-flex", "faster-flex", "ft-fc", "ft-ss", "ft-all"],
              "pixel_unit": true,
              "retrieval": {"k": 5, "target_domain": "source"},
              "output_dir": "runs/a"
            }"#,
        )
        .unwrap();
        assert_eq!(c.split.train_sizes.len(), 3);
        assert_eq!(c.strategies.len(), 6);
        assert_eq!(c.train.early_stop.patience, 3);
        assert_eq!(c.retrieval.target_domain, TargetDomain::Source);
    }
}
