//! Shared fixtures for the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use phat_core::bucketing::build_buckets;
use phat_core::model::{Ablation, ModelConfig, PhatModel};
use phat_core::numerics::{uniform_tensor, Tensor};
use phat_core::periodicity::detect_periods;

/// A `P × N × d` feature block with entries in `[-1, 1]`.
pub fn features(p: usize, n: usize, d: usize, seed: u64) -> Tensor {
    uniform_tensor(&mut ChaCha8Rng::seed_from_u64(seed), &[p, n, d], 1.0)
}

/// `P × P × N` logits with entries in `[-3, 3]`.
pub fn logits(p: usize, n: usize, seed: u64) -> Tensor {
    uniform_tensor(&mut ChaCha8Rng::seed_from_u64(seed), &[p, p, n], 3.0)
}

/// Two period-24 and two period-96 sinusoids, `4 × len`.
pub fn series(len: usize) -> Tensor {
    let data = [24.0, 24.0, 96.0, 96.0]
        .iter()
        .enumerate()
        .flat_map(|(c, &p)| {
            (0..len).map(move |t| (std::f64::consts::TAU * t as f64 / p + c as f64).sin())
        })
        .collect();
    Tensor::new(vec![4, len], data).expect("sized")
}

/// A model over [`series`] plus one look-back window and target.
pub fn model(lookback: usize, horizon: usize, d_model: usize) -> (PhatModel, Tensor, Tensor) {
    let config = ModelConfig {
        lookback,
        horizon,
        topk: 1,
        d_model,
        heads: 2,
        layers: 1,
        instance_norm: true,
        ablation: Ablation::default(),
    };
    let s = series(4 * (lookback + horizon));
    let profile = detect_periods(&s, 1).expect("detectable");
    let buckets = build_buckets(&profile, horizon).expect("valid buckets");
    let m = PhatModel::with_buckets(config, buckets, 0).expect("valid model");
    let x = Tensor::new(
        vec![4, lookback],
        (0..4).flat_map(|c| s.row(c)[..lookback].to_vec()).collect(),
    )
    .expect("sized");
    let y = Tensor::new(
        vec![4, horizon],
        (0..4)
            .flat_map(|c| s.row(c)[lookback..lookback + horizon].to_vec())
            .collect(),
    )
    .expect("sized");
    (m, x, y)
}
