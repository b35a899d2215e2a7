//! Declarative run configuration: TOML file + CLI overrides.
//!
//! Every field has a default, so an empty config file (or none at all) is a
//! complete benchmark description. The fully resolved config is echoed into
//! every output artifact together with its hash.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::adapt::{AdaptConfig, TrainConfig};
use crate::data::SynthConfig;
use crate::model::ModelConfig;

/// Top-level configuration of a run.
///
/// Note the model defaults here are the desk-benchmark widths (leaner than
/// [`ModelConfig::default`]) so the full train + adapt + evaluate pipeline
/// fits a laptop-CPU time budget.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Root directory for output artifacts.
    pub out_dir: PathBuf,
    /// Dataset root (`<root>/{train,test}/{images,masks}`).
    pub data_dir: PathBuf,
    /// Channels the loader decodes (1 = grayscale, 3 = RGB).
    pub channels: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub adapt: AdaptConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            data_dir: PathBuf::from("data/synth"),
            channels: 1,
            model: ModelConfig {
                widths: [8, 16, 32, 64],
                decoder_width: 8,
                ..ModelConfig::default()
            },
            train: TrainConfig::default(),
            adapt: AdaptConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    /// Load from a TOML file; missing keys fall back to defaults.
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("reading config {}: {e}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| anyhow::anyhow!("parsing config {}: {e}", path.display()))?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            Some(p) => Self::from_file(p),
            None => Ok(RunConfig::default()),
        }
    }

    /// The resolved config as a JSON value, for embedding into artifacts.
    pub fn as_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// SHA-256 of the resolved config JSON.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_is_a_complete_config() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.adapt.epochs, 5);
        assert_eq!(cfg.adapt.batch_size, 4);
        assert_eq!(cfg.train.lr, 2e-4);
        assert_eq!(cfg.synth.shift_gain, 1.4);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::default();
        let b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig { seed: 1, ..RunConfig::default() };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn partial_toml_overrides_only_named_fields() {
        let cfg: RunConfig = toml::from_str(
            "[adapt]\nlr = 0.01\n[synth]\nshift_gain = 2.0\n",
        )
        .unwrap();
        assert_eq!(cfg.adapt.lr, 0.01);
        assert_eq!(cfg.adapt.epochs, 5);
        assert_eq!(cfg.synth.shift_gain, 2.0);
        assert_eq!(cfg.synth.shift_gamma, 1.3);
    }
}
