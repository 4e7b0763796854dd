use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pna::PnaOptions;

/// Component switches. Everything on is the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Group variates by period; off puts every variate in one bucket.
    pub bucketing: bool,
    /// Off replaces each attention layer by a per-position affine map.
    pub attention: bool,
    pub offset_attention: bool,
    pub aligned_attention: bool,
    pub positive_branch: bool,
    pub negative_branch: bool,
    pub positive_modulation: bool,
    pub negative_modulation: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            bucketing: true,
            attention: true,
            offset_attention: true,
            aligned_attention: true,
            positive_branch: true,
            negative_branch: true,
            positive_modulation: true,
            negative_modulation: true,
        }
    }
}

impl Ablation {
    pub fn pna_options(&self) -> PnaOptions {
        PnaOptions {
            offset_attention: self.offset_attention,
            aligned_attention: self.aligned_attention,
            positive_branch: self.positive_branch,
            negative_branch: self.negative_branch,
            positive_modulation: self.positive_modulation,
            negative_modulation: self.negative_modulation,
        }
    }

    /// Named variants: `full`, `no-offset`, `no-aligned`, `no-attention`,
    /// `no-bucket`.
    pub fn variant(name: &str) -> Result<Self> {
        let mut a = Self::default();
        match name {
            "full" => {}
            "no-offset" => a.offset_attention = false,
            "no-aligned" => a.aligned_attention = false,
            "no-attention" => a.attention = false,
            "no-bucket" => a.bucketing = false,
            other => return Err(Error::Config(format!("unknown ablation variant {other}"))),
        }
        Ok(a)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub topk: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    /// Per-window, per-variate standardization around the network.
    #[serde(default = "yes")]
    pub instance_norm: bool,
    #[serde(default)]
    pub ablation: Ablation,
}

fn yes() -> bool {
    true
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("topk", self.topk),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("layers", self.layers),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "{} heads do not divide d_model {}",
                self.heads, self.d_model
            )));
        }
        if self.lookback < 4 {
            return Err(Error::Config("lookback must be at least 4".into()));
        }
        if self.topk > self.lookback / 2 {
            return Err(Error::Config(format!(
                "topk {} exceeds the {} frequency bins of the look-back",
                self.topk,
                self.lookback / 2
            )));
        }
        Ok(())
    }
}
