//! Named training configurations: tuned per-dataset hyperparameters and two
//! synthetic setups.

use crate::data::SplitRatios;
use crate::error::{Error, Result};
use crate::model::{Ablation, ModelConfig};
use crate::training::TrainConfig;

/// Epoch budget for the benchmark presets; the tuned hyperparameters do not
/// list one.
pub const DEFAULT_EPOCHS: usize = 10;

struct Row {
    dataset: &'static str,
    // Per horizon slot: (batch, lr, d_model, layers, heads, lookback).
    slots: [(usize, f64, usize, usize, usize, usize); 4],
}

const LONG: [usize; 4] = [96, 192, 336, 720];
const SHORT: [usize; 4] = [24, 36, 48, 60];

#[rustfmt::skip]
const TABLE: &[Row] = &[
    Row { dataset: "nn5", slots: [(16, 0.01, 32, 1, 2, 104), (256, 0.01, 128, 1, 4, 104), (256, 0.01, 64, 1, 4, 104), (128, 0.01, 32, 1, 8, 104)] },
    Row { dataset: "exchange", slots: [(16, 0.001, 4, 1, 2, 96), (32, 0.01, 8, 1, 4, 96), (64, 0.01, 8, 1, 2, 96), (256, 0.1, 16, 1, 2, 96)] },
    Row { dataset: "fred-md", slots: [(16, 0.01, 32, 1, 2, 36), (16, 0.01, 96, 1, 2, 36), (16, 0.01, 32, 1, 2, 36), (32, 0.1, 32, 1, 2, 36)] },
    Row { dataset: "etth1", slots: [(16, 0.001, 4, 2, 4, 512), (16, 0.001, 4, 1, 2, 512), (16, 0.001, 4, 1, 2, 512), (32, 0.001, 4, 1, 2, 336)] },
    Row { dataset: "etth2", slots: [(32, 0.001, 4, 1, 4, 512), (16, 0.001, 12, 1, 2, 512), (32, 0.01, 16, 1, 4, 336), (128, 0.001, 12, 1, 4, 336)] },
    Row { dataset: "ettm1", slots: [(8, 0.01, 8, 1, 4, 336), (16, 0.01, 8, 1, 2, 336), (16, 0.0001, 8, 1, 2, 336), (16, 0.0001, 4, 1, 4, 336)] },
    Row { dataset: "ettm2", slots: [(16, 0.01, 4, 1, 2, 336), (16, 0.001, 8, 1, 2, 336), (16, 0.001, 8, 1, 2, 336), (16, 0.01, 4, 1, 2, 336)] },
    Row { dataset: "aqshunyi", slots: [(32, 0.001, 8, 1, 2, 512), (32, 0.001, 8, 1, 2, 336), (32, 0.0001, 16, 1, 2, 336), (32, 0.0001, 8, 1, 4, 336)] },
    Row { dataset: "aqwan", slots: [(32, 0.001, 16, 1, 2, 512), (32, 0.0001, 8, 1, 2, 512), (32, 0.001, 16, 1, 2, 336), (32, 0.0001, 8, 1, 2, 336)] },
    Row { dataset: "ili", slots: [(8, 0.001, 24, 1, 2, 104), (64, 0.01, 8, 1, 2, 104), (8, 0.1, 8, 1, 2, 104), (8, 0.01, 4, 1, 2, 104)] },
    Row { dataset: "czelan", slots: [(16, 0.01, 4, 1, 4, 336), (16, 0.0001, 4, 1, 4, 512), (16, 0.01, 4, 1, 2, 336), (16, 0.0001, 4, 1, 2, 512)] },
    Row { dataset: "zafnoo", slots: [(16, 0.001, 4, 1, 2, 336), (16, 0.0001, 6, 1, 2, 512), (16, 0.0001, 4, 1, 2, 512), (16, 0.001, 4, 1, 2, 512)] },
    Row { dataset: "nasdaq", slots: [(256, 0.01, 24, 1, 4, 104), (16, 0.01, 24, 1, 2, 104), (32, 0.1, 8, 1, 2, 104), (256, 0.1, 32, 1, 4, 104)] },
    Row { dataset: "nyse", slots: [(32, 0.1, 4, 1, 4, 36), (64, 0.1, 6, 1, 2, 36), (64, 0.1, 8, 1, 4, 36), (64, 0.1, 2, 1, 2, 36)] },
];

fn horizons(dataset: &str) -> [usize; 4] {
    match dataset {
        "nn5" | "fred-md" | "ili" | "nasdaq" | "nyse" => SHORT,
        _ => LONG,
    }
}

fn split_for(dataset: &str) -> SplitRatios {
    match dataset {
        "etth1" | "etth2" | "ettm1" | "ettm2" => SplitRatios([6, 2, 2]),
        _ => SplitRatios([7, 1, 2]),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub name: String,
    pub description: String,
    pub config: TrainConfig,
}

fn model(
    lookback: usize,
    horizon: usize,
    d_model: usize,
    heads: usize,
    layers: usize,
) -> ModelConfig {
    ModelConfig {
        lookback,
        horizon,
        topk: 1,
        d_model,
        heads,
        layers,
        instance_norm: true,
        ablation: Ablation::default(),
    }
}

fn synthetic() -> Vec<Preset> {
    vec![
        Preset {
            name: "synthetic-small".into(),
            description: "fast smoke run on synth_mixed (S=960)".into(),
            config: TrainConfig {
                model: model(48, 24, 8, 2, 1),
                batch_size: 16,
                learning_rate: 0.01,
                epochs: 3,
                seed: 0,
                scale: true,
                split: SplitRatios([7, 1, 2]),
            },
        },
        Preset {
            name: "synthetic-acceptance".into(),
            description: "desk-scale experiment on synth_mixed (S=4096, T=192, L=96)".into(),
            config: TrainConfig {
                model: model(192, 96, 8, 2, 1),
                batch_size: 32,
                learning_rate: 0.01,
                epochs: 4,
                seed: 0,
                scale: true,
                split: SplitRatios([7, 1, 2]),
            },
        },
    ]
}

/// Every preset, synthetic first.
pub fn all() -> Vec<Preset> {
    let mut out = synthetic();
    for row in TABLE {
        for (h, &(batch, lr, d, layers, heads, t)) in horizons(row.dataset).iter().zip(&row.slots) {
            out.push(Preset {
                name: format!("{}-{h}", row.dataset),
                description: format!("tuned hyperparameters for {} at horizon {h}", row.dataset),
                config: TrainConfig {
                    model: model(t, *h, d, heads, layers),
                    batch_size: batch,
                    learning_rate: lr,
                    epochs: DEFAULT_EPOCHS,
                    seed: 0,
                    scale: true,
                    split: split_for(row.dataset),
                },
            });
        }
    }
    out
}

pub fn get(name: &str) -> Result<Preset> {
    let key = name.to_ascii_lowercase();
    all()
        .into_iter()
        .find(|p| p.name == key)
        .ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ettm1_96_row() {
        let p = get("ETTm1-96").unwrap().config;
        assert_eq!(p.batch_size, 8);
        assert_eq!(p.learning_rate, 0.01);
        assert_eq!(
            (
                p.model.d_model,
                p.model.layers,
                p.model.heads,
                p.model.lookback
            ),
            (8, 1, 4, 336)
        );
    }

    #[test]
    fn every_preset_is_valid_and_unique() {
        let all = all();
        assert_eq!(all.len(), 2 + 14 * 4);
        for p in &all {
            p.config
                .validate()
                .unwrap_or_else(|e| panic!("{}: {e}", p.name));
        }
        let mut names: Vec<_> = all.iter().map(|p| &p.name).collect();
        names.dedup();
        assert_eq!(names.len(), all.len());
        assert!(get("ili-24").is_ok() && get("ili-96").is_err());
    }
}
