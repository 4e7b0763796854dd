//! The full forecaster: per-bucket alignment, folding, embedding and
//! attention stacks, flatten heads, and magnitude-weighted fusion of every
//! bucket a variate belongs to.

mod checkpoint;
mod config;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, NamedParam, CHECKPOINT_FORMAT};
pub use config::{Ablation, ModelConfig};

use crate::bucketing::{build_buckets, build_shared_bucket, BucketSet, BucketSpec};
use crate::data::Scaler;
use crate::error::{Error, Result};
use crate::numerics::{uniform_tensor, Graph, ParamId, ParamStore, Tensor, Var};
use crate::periodicity::PeriodProfile;
use crate::pna::{
    layer_forward, AttentionBundle, DistanceMode, HeadTrace, LayerParams, ModulationIndex,
};

/// Variance floor of the per-window standardization.
pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Parameters and precomputed indices of one bucket branch.
#[derive(Clone, Debug)]
pub struct BucketModule {
    pub spec: BucketSpec,
    pub align_w: ParamId,
    pub align_b: ParamId,
    pub embed_w: ParamId,
    pub embed_b: ParamId,
    pub layers: Vec<LayerParams>,
    pub head_w: ParamId,
    pub head_b: ParamId,
    index: Arc<ModulationIndex>,
    fold: Arc<Vec<Option<usize>>>,
    flatten: Arc<Vec<Option<usize>>>,
}

/// Fusion weight of every (variate, bucket) pair; each variate's weights
/// sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    /// Per variate: `(active bucket, weight)` in ascending bucket order.
    pub variates: Vec<Vec<(usize, f64)>>,
}

impl FusionWeights {
    pub fn weight(&self, variate: usize, bucket: usize) -> Option<f64> {
        self.variates[variate]
            .iter()
            .find(|(b, _)| *b == bucket)
            .map(|(_, w)| *w)
    }
}

/// Softmax over each variate's buckets of the spectral magnitude that placed
/// the variate there. Variates in a single bucket get weight one.
pub fn fusion_weights(buckets: &BucketSet) -> Result<FusionWeights> {
    let mut variates: Vec<Vec<(usize, f64)>> = vec![Vec::new(); buckets.num_variates];
    let mut mags: Vec<Vec<f64>> = vec![Vec::new(); buckets.num_variates];
    for (b, spec) in buckets.active().enumerate() {
        for (&c, &m) in spec.members.iter().zip(&spec.magnitudes) {
            if c >= buckets.num_variates {
                return Err(Error::invalid(format!("bucket member {c} out of range")));
            }
            variates[c].push((b, 0.0));
            mags[c].push(m.abs());
        }
    }
    for (c, (slots, m)) in variates.iter_mut().zip(&mags).enumerate() {
        if slots.is_empty() {
            return Err(Error::invalid(format!("variate {c} belongs to no bucket")));
        }
        let top = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = m.iter().map(|v| (v - top).exp()).collect();
        let z: f64 = e.iter().sum();
        for (slot, ev) in slots.iter_mut().zip(e) {
            slot.1 = ev / z;
        }
    }
    Ok(FusionWeights { variates })
}

#[derive(Clone, Debug)]
pub struct PhatModel {
    pub config: ModelConfig,
    pub buckets: BucketSet,
    pub fusion: FusionWeights,
    pub store: ParamStore,
    pub modules: Vec<BucketModule>,
    /// Dataset-level standardization the model was trained under.
    pub scaler: Option<Scaler>,
    mixer: Arc<Tensor>,
    transpose: Arc<Vec<Option<usize>>>,
}

/// Tape handles of one forward pass.
pub struct ForwardTrace {
    /// Forecast, `C × L`.
    pub output: Var,
    /// Head traces per bucket module, per layer.
    pub heads: Vec<Vec<Vec<HeadTrace>>>,
}

/// Attention tensors of one head in one layer of one bucket.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttentionDump {
    pub period: usize,
    pub layer: usize,
    pub head: usize,
    pub bundle: AttentionBundle,
}

fn fold_index(spec: &BucketSpec) -> Vec<Option<usize>> {
    let (p, n) = spec.grid();
    let m = spec.len();
    let mut idx = Vec::with_capacity(p * n * m);
    for pi in 0..p {
        for ni in 0..n {
            let src = spec.source(pi, ni);
            idx.extend((0..m).map(|j| src.map(|t| j * spec.horizon + t)));
        }
    }
    idx
}

fn flatten_index(spec: &BucketSpec, d_h: usize) -> Vec<Option<usize>> {
    let (p, n) = spec.grid();
    (0..spec.horizon)
        .flat_map(|t| {
            let cell = (t % p) * n + t / p;
            (0..d_h).map(move |k| Some(cell * d_h + k))
        })
        .collect()
}

impl PhatModel {
    /// Builds the bucket topology from a period profile and initializes
    /// every parameter from `seed`.
    pub fn new(config: ModelConfig, profile: &PeriodProfile, seed: u64) -> Result<Self> {
        config.validate()?;
        let buckets = if config.ablation.bucketing {
            build_buckets(profile, config.horizon)?
        } else {
            build_shared_bucket(profile, config.horizon)?
        };
        Self::with_buckets(config, buckets, seed)
    }

    /// Initializes a model over an explicit bucket topology.
    pub fn with_buckets(config: ModelConfig, buckets: BucketSet, seed: u64) -> Result<Self> {
        config.validate()?;
        let fusion = fusion_weights(&buckets)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (t, l, d) = (config.lookback, config.horizon, config.d_model);
        let mut modules = Vec::new();
        for spec in buckets.active() {
            if spec.horizon != l {
                return Err(Error::invalid(format!(
                    "bucket built for horizon {}, model horizon {l}",
                    spec.horizon
                )));
            }
            let name = if spec.is_zero() {
                "bucket0".to_string()
            } else {
                format!("bucket{}", spec.period)
            };
            let m = spec.len();
            let bound = |fan: usize| 1.0 / (fan as f64).sqrt();
            let align_w = store.add(
                format!("{name}.align.w"),
                uniform_tensor(&mut rng, &[t, l], bound(t)),
            )?;
            let align_b = store.add(
                format!("{name}.align.b"),
                uniform_tensor(&mut rng, &[l], bound(t)),
            )?;
            let embed_w = store.add(
                format!("{name}.embed.w"),
                uniform_tensor(&mut rng, &[m, d], bound(m)),
            )?;
            let embed_b = store.add(
                format!("{name}.embed.b"),
                uniform_tensor(&mut rng, &[d], bound(m)),
            )?;
            let layers = (0..config.layers)
                .map(|i| {
                    LayerParams::init(
                        &mut store,
                        &format!("{name}.layer{i}"),
                        d,
                        config.heads,
                        spec.n_periods,
                        config.ablation.attention,
                        &mut rng,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let head_w = store.add(
                format!("{name}.head.w"),
                uniform_tensor(&mut rng, &[d, m], bound(d)),
            )?;
            let head_b = store.add(
                format!("{name}.head.b"),
                uniform_tensor(&mut rng, &[m], bound(d)),
            )?;
            let mode = if spec.is_zero() {
                DistanceMode::Absolute
            } else {
                DistanceMode::Periodic
            };
            modules.push(BucketModule {
                index: Arc::new(ModulationIndex::new(spec.phase_len(), mode)?),
                fold: Arc::new(fold_index(spec)),
                flatten: Arc::new(flatten_index(spec, d)),
                spec: spec.clone(),
                align_w,
                align_b,
                embed_w,
                embed_b,
                layers,
                head_w,
                head_b,
            });
        }
        let c = buckets.num_variates;
        let total: usize = modules.iter().map(|m| m.spec.len()).sum();
        let mut mixer = Tensor::zeros(&[total, c]);
        let mut offset = 0;
        for (b, module) in modules.iter().enumerate() {
            for (j, &v) in module.spec.members.iter().enumerate() {
                let w = fusion.weight(v, b).expect("member has a fusion weight");
                mixer.set(&[offset + j, v], w);
            }
            offset += module.spec.len();
        }
        let transpose = (0..c)
            .flat_map(|ci| (0..l).map(move |ti| Some(ti * c + ci)))
            .collect();
        Ok(Self {
            config,
            buckets,
            fusion,
            store,
            modules,
            scaler: None,
            mixer: Arc::new(mixer),
            transpose: Arc::new(transpose),
        })
    }

    pub fn num_variates(&self) -> usize {
        self.buckets.num_variates
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (c, t) = (self.num_variates(), self.config.lookback);
        if x.shape() != [c, t] {
            return Err(Error::shape(format!(
                "model expects {c}×{t} input, got {:?}",
                x.shape()
            )));
        }
        if !x.all_finite() {
            return Err(Error::InvalidInput(
                "input window contains NaN or infinite values".into(),
            ));
        }
        Ok(())
    }

    /// Per-variate mean and scale of a window when instance normalization is
    /// on; identity otherwise.
    fn window_stats(&self, x: &Tensor) -> (Vec<f64>, Vec<f64>) {
        let c = x.shape()[0];
        if !self.config.instance_norm {
            return (vec![0.0; c], vec![1.0; c]);
        }
        (0..c)
            .map(|i| {
                let row = x.row(i);
                let n = row.len() as f64;
                let mean = row.iter().sum::<f64>() / n;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                (mean, (var + INSTANCE_NORM_EPS).sqrt())
            })
            .unzip()
    }

    /// Records the forward pass of one `C × T` window on `g`.
    pub fn forward_graph(&self, g: &mut Graph, x: &Tensor) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let (c, t, l) = (
            self.num_variates(),
            self.config.lookback,
            self.config.horizon,
        );
        let (mean, scale) = self.window_stats(x);
        let opts = self.config.ablation.pna_options();
        let mut outs = Vec::with_capacity(self.modules.len());
        let mut heads = Vec::with_capacity(self.modules.len());
        for module in &self.modules {
            let spec = &module.spec;
            let m = spec.len();
            let mut rows = Vec::with_capacity(m * t);
            for &v in &spec.members {
                rows.extend(x.row(v).iter().map(|e| (e - mean[v]) / scale[v]));
            }
            let xb = g.constant(Tensor::new(vec![m, t], rows)?);
            let aw = g.param(&self.store, module.align_w);
            let ab = g.param(&self.store, module.align_b);
            let aligned = g.affine(xb, aw, ab)?;
            let (p, n) = spec.grid();
            let folded = g.gather(aligned, Arc::clone(&module.fold), &[p, n, m])?;
            let ew = g.param(&self.store, module.embed_w);
            let eb = g.param(&self.store, module.embed_b);
            let mut z = g.affine(folded, ew, eb)?;
            let mut layer_traces = Vec::with_capacity(module.layers.len());
            for layer in &module.layers {
                let (next, tr) = layer_forward(g, &self.store, layer, z, &module.index, &opts)?;
                z = next;
                layer_traces.push(tr);
            }
            let flat = g.gather(z, Arc::clone(&module.flatten), &[l, self.config.d_model])?;
            let hw = g.param(&self.store, module.head_w);
            let hb = g.param(&self.store, module.head_b);
            outs.push(g.affine(flat, hw, hb)?);
            heads.push(layer_traces);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_last(&outs)?
        };
        let mixer = g.constant((*self.mixer).clone());
        let mixed = g.matmul(cat, mixer)?;
        let mut y = g.gather(mixed, Arc::clone(&self.transpose), &[c, l])?;
        if self.config.instance_norm {
            let gain = Tensor::new(
                vec![c, l],
                scale
                    .iter()
                    .flat_map(|&s| std::iter::repeat_n(s, l))
                    .collect(),
            )?;
            let shift = Tensor::new(
                vec![c, l],
                mean.iter()
                    .flat_map(|&m| std::iter::repeat_n(m, l))
                    .collect(),
            )?;
            y = g.mul_const(y, gain)?;
            y = g.add_const(y, shift)?;
        }
        Ok(ForwardTrace { output: y, heads })
    }

    /// Forecast `C × L` from a `C × T` window.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let tr = self.forward_graph(&mut g, x)?;
        Ok(g.value(tr.output).clone())
    }

    /// Forecast in the data's original units: applies the stored dataset
    /// scaler around [`forward`](Self::forward) when there is one.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        match &self.scaler {
            Some(s) => s.inverse(&self.forward(&s.transform(x)?)?),
            None => self.forward(x),
        }
    }

    /// Attention tensors of every head for one window.
    pub fn attention_maps(&self, x: &Tensor) -> Result<Vec<AttentionDump>> {
        let mut g = Graph::new();
        let tr = self.forward_graph(&mut g, x)?;
        let mut out = Vec::new();
        for (module, layers) in self.modules.iter().zip(&tr.heads) {
            for (li, heads) in layers.iter().enumerate() {
                for (hi, h) in heads.iter().enumerate() {
                    out.push(AttentionDump {
                        period: module.spec.period,
                        layer: li,
                        head: hi,
                        bundle: AttentionBundle::from_trace(&g, h),
                    });
                }
            }
        }
        Ok(out)
    }

    pub fn count_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Parameter counts grouped by role: align, embed, attention, head.
    pub fn param_breakdown(&self) -> Vec<(String, usize)> {
        let mut groups: Vec<(String, usize)> = Vec::new();
        for (_, name, t) in self.store.iter() {
            let role = match name.split('.').nth(1) {
                Some(r) if r.starts_with("layer") => "attention",
                Some(r) => r,
                None => name,
            };
            match groups.iter_mut().find(|(g, _)| g == role) {
                Some((_, n)) => *n += t.len(),
                None => groups.push((role.to_string(), t.len())),
            }
        }
        groups
    }
}

/// Folds a `P × N × d` bucket output back onto the horizon, truncating
/// padding, and maps features to one value per member: `|B| × L`.
pub fn flatten_align(
    bucket_out: &Tensor,
    w: &Tensor,
    b: &Tensor,
    spec: &BucketSpec,
) -> Result<Tensor> {
    let (p, n) = spec.grid();
    let d = bucket_out.last_dim();
    if bucket_out.shape() != [p, n, d] || w.shape() != [d, spec.len()] || b.shape() != [spec.len()]
    {
        return Err(Error::shape(format!(
            "flatten of {:?} with head {:?}/{:?} for a {p}×{n} bucket of {}",
            bucket_out.shape(),
            w.shape(),
            b.shape(),
            spec.len()
        )));
    }
    let src = bucket_out.data();
    let flat: Vec<f64> = flatten_index(spec, d)
        .into_iter()
        .map(|i| src[i.expect("in range")])
        .collect();
    let y = crate::numerics::matmul_last(&Tensor::new(vec![spec.horizon, d], flat)?, w)?;
    let (l, m) = (spec.horizon, spec.len());
    let mut out = Tensor::zeros(&[m, l]);
    for t in 0..l {
        for j in 0..m {
            out.set(&[j, t], y.data()[t * m + j] + b.data()[j]);
        }
    }
    Ok(out)
}
