use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FusionWeights, ModelConfig, PhatModel};
use crate::bucketing::BucketSet;
use crate::data::Scaler;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_FORMAT: &str = "phat-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Self-describing snapshot of a model: configuration, bucket topology,
/// fusion weights, normalization statistics and every parameter by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    pub buckets: BucketSet,
    pub fusion: FusionWeights,
    pub scaler: Option<Scaler>,
    pub params: Vec<NamedParam>,
}

impl PhatModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config: self.config.clone(),
            buckets: self.buckets.clone(),
            fusion: self.fusion.clone(),
            scaler: self.scaler.clone(),
            params: self
                .store
                .iter()
                .map(|(_, name, t)| NamedParam {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format {:?}",
                ck.format
            )));
        }
        let mut model = PhatModel::with_buckets(ck.config, ck.buckets, 0)
            .map_err(|e| Error::Checkpoint(format!("topology does not build: {e}")))?;
        if ck.params.len() != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, the topology needs {}",
                ck.params.len(),
                model.store.len()
            )));
        }
        for p in ck.params {
            let id = model
                .store
                .find(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter {}", p.name)))?;
            let t = Tensor::new(p.shape, p.data)
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", p.name)))?;
            model
                .store
                .set(id, t)
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", p.name)))?;
        }
        if model.fusion != ck.fusion {
            return Err(Error::Checkpoint(
                "fusion weights disagree with the bucket topology".into(),
            ));
        }
        model.scaler = ck.scaler;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(ck)
    }
}
