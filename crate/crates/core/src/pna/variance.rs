use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::index::{DistanceMode, ModulationIndex};
use super::modulate_and_fuse;
use crate::error::Result;
use crate::numerics::{sigmoid_scalar, softmax_axis, Tensor};

/// Sample variance of fused offset-attention entries next to plain softmax
/// attention over the same positive logits. Informational only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub period: usize,
    pub trials: usize,
    pub fused_variance: f64,
    pub vanilla_variance: f64,
    pub mean_gate: f64,
}

fn variance(xs: &[f64]) -> f64 {
    let n = xs.len().max(1) as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Draws standard-normal logits and gate pre-activations `trials` times for
/// a single-column `P × P` attention map.
pub fn variance_report(period: usize, trials: usize, seed: u64) -> Result<VarianceReport> {
    let index = ModulationIndex::new(period, DistanceMode::Periodic)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw =
        |len: usize| -> Vec<f64> { (0..len).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let (mut fused, mut vanilla, mut gates) = (Vec::new(), Vec::new(), Vec::new());
    let pp = period * period;
    for _ in 0..trials {
        let zeta = Tensor::new(vec![period, period, 1], draw(pp))?;
        let eta = Tensor::new(vec![period, period, 1], draw(pp))?;
        let gate = Tensor::new(
            vec![period, 1, 1],
            draw(period).into_iter().map(sigmoid_scalar).collect(),
        )?;
        fused.extend_from_slice(modulate_and_fuse(&zeta, &eta, &gate, &index)?.data());
        vanilla.extend_from_slice(softmax_axis(&zeta, 1)?.data());
        gates.extend_from_slice(gate.data());
    }
    Ok(VarianceReport {
        period,
        trials,
        fused_variance: variance(&fused),
        vanilla_variance: variance(&vanilla),
        mean_gate: gates.iter().sum::<f64>() / gates.len().max(1) as f64,
    })
}
