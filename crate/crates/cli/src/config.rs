use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use phat_core::data::{load_csv, synth_mixed, Dataset};
use phat_core::presets;
use phat_core::training::TrainConfig;

/// Where the series comes from: exactly one of a CSV path or the generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSource {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "two")]
    pub per_group: usize,
    #[serde(default = "default_length")]
    pub length: usize,
}

fn two() -> usize {
    2
}

fn default_length() -> usize {
    4096
}

/// A training run as read from `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// CSV with an optional leading timestamp column.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SynthSource>,
    /// Named preset to start from; `train` fields replace it wholesale.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(cfg)
    }

    /// The effective training configuration, validated.
    pub fn resolve(&self) -> anyhow::Result<TrainConfig> {
        let cfg = match (&self.train, &self.preset) {
            (Some(t), None) => t.clone(),
            (None, Some(name)) => presets::get(name)?.config,
            (Some(_), Some(_)) => bail!("give either `train` or `preset`, not both"),
            (None, None) => bail!("config needs a `train` section or a `preset`"),
        };
        cfg.validate()?;
        match (&self.dataset, &self.synthetic) {
            (Some(_), Some(_)) => bail!("give either `dataset` or `synthetic`, not both"),
            (None, None) => bail!("config needs a `dataset` path or a `synthetic` source"),
            _ => {}
        }
        Ok(cfg)
    }

    pub fn load_data(&self, base: &Path) -> anyhow::Result<Dataset> {
        if let Some(path) = &self.dataset {
            let path = if path.is_relative() {
                base.join(path)
            } else {
                path.clone()
            };
            return load_csv(&path).with_context(|| format!("loading {}", path.display()));
        }
        let s = self.synthetic.as_ref().expect("checked by resolve");
        Ok(synth_mixed(s.seed, s.per_group, s.length)?.0)
    }
}
