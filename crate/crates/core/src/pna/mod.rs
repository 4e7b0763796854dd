//! Positive-negative attention over a folded bucket: offset attention among
//! the phases of one period, aligned attention among periods at one phase,
//! and the multi-head wrapper with a gated residual and dynamic tanh.

mod index;
pub mod kernels;
mod variance;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use index::{periodic_distance, DistanceMode, ModulationIndex};
pub use kernels::Side;
pub use variance::{variance_report, VarianceReport};

use crate::error::{Error, Result};
use crate::numerics::{softmax_axis, uniform_tensor, Graph, ParamId, ParamStore, Tensor, Var};
use kernels::{AlignedLogits, Modulate, NegativeGate, OffsetLogits};

/// Runtime switches for the ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PnaOptions {
    /// Attention among phases of one period; off means identity.
    pub offset_attention: bool,
    /// Attention among periods at one phase; off means identity.
    pub aligned_attention: bool,
    pub positive_branch: bool,
    pub negative_branch: bool,
    pub positive_modulation: bool,
    pub negative_modulation: bool,
}

impl Default for PnaOptions {
    fn default() -> Self {
        Self {
            offset_attention: true,
            aligned_attention: true,
            positive_branch: true,
            negative_branch: true,
            positive_modulation: true,
            negative_modulation: true,
        }
    }
}

/// Parameter handles of one attention head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    /// `d_slice → 2·d_att`, split into the two query branches.
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wg: ParamId,
    pub bg: ParamId,
    /// Aligned-attention temperature; absent when there is a single period.
    pub mu_aligned: Option<ParamId>,
    pub alpha: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerParams {
    Attention {
        heads: Vec<HeadParams>,
        wo: ParamId,
    },
    /// Per-position affine map used when attention is switched off.
    Dense {
        w: ParamId,
        b: ParamId,
    },
}

fn add_uniform(
    store: &mut ParamStore,
    name: String,
    shape: &[usize],
    fan_in: usize,
    rng: &mut impl Rng,
) -> Result<ParamId> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    store.add(name, uniform_tensor(rng, shape, bound))
}

impl LayerParams {
    /// Registers a layer's parameters under `prefix`.
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d_h: usize,
        heads: usize,
        n_periods: usize,
        attention: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if !attention {
            let w = add_uniform(store, format!("{prefix}.dense.w"), &[d_h, d_h], d_h, rng)?;
            let b = add_uniform(store, format!("{prefix}.dense.b"), &[d_h], d_h, rng)?;
            return Ok(LayerParams::Dense { w, b });
        }
        if heads == 0 || !d_h.is_multiple_of(heads) {
            return Err(Error::invalid(format!(
                "{heads} heads do not divide width {d_h}"
            )));
        }
        let ds = d_h / heads;
        let mut hs = Vec::with_capacity(heads);
        for h in 0..heads {
            let p = format!("{prefix}.head{h}");
            let wq = add_uniform(store, format!("{p}.wq"), &[ds, 2 * ds], ds, rng)?;
            let wk = add_uniform(store, format!("{p}.wk"), &[ds, 2 * ds], ds, rng)?;
            let wv = add_uniform(store, format!("{p}.wv"), &[ds, ds], ds, rng)?;
            let wg = add_uniform(store, format!("{p}.wg"), &[ds, 1], ds, rng)?;
            let bg = store.add(format!("{p}.bg"), Tensor::zeros(&[1]))?;
            let mu_aligned = if n_periods > 1 {
                Some(store.add(
                    format!("{p}.mu_aligned"),
                    Tensor::scalar(1.0 / (ds as f64).sqrt()),
                )?)
            } else {
                None
            };
            let alpha = store.add(format!("{p}.alpha"), Tensor::scalar(1.0))?;
            let gamma = store.add(format!("{p}.gamma"), Tensor::full(&[ds], 1.0))?;
            let beta = store.add(format!("{p}.beta"), Tensor::zeros(&[ds]))?;
            hs.push(HeadParams {
                wq,
                wk,
                wv,
                wg,
                bg,
                mu_aligned,
                alpha,
                gamma,
                beta,
            });
        }
        let wo = add_uniform(store, format!("{prefix}.wo"), &[d_h, d_h], d_h, rng)?;
        Ok(LayerParams::Attention { heads: hs, wo })
    }
}

/// Every intermediate of one head on the tape.
#[derive(Clone, Debug)]
pub struct HeadTrace {
    pub q1: Var,
    pub q2: Var,
    pub k1: Var,
    pub k2: Var,
    pub v: Var,
    pub gate: Var,
    /// Offset attention; `None` when switched off (identity).
    pub offset: Option<Var>,
    /// Aligned attention; `None` when switched off or with a single period.
    pub aligned: Option<Var>,
    /// Attention output before the residual.
    pub pna: Var,
    pub out: Var,
}

/// Columns `[lo, lo + width)` of the last axis.
pub fn slice_last(g: &mut Graph, x: Var, lo: usize, width: usize) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    let d = *shape
        .last()
        .ok_or_else(|| Error::shape("slice of a scalar"))?;
    if lo + width > d {
        return Err(Error::shape(format!(
            "columns {lo}..{} of width {d}",
            lo + width
        )));
    }
    let rows = g.value(x).len() / d.max(1);
    let index = (0..rows)
        .flat_map(|r| (lo..lo + width).map(move |c| Some(r * d + c)))
        .collect();
    let mut out_shape = shape;
    *out_shape.last_mut().unwrap() = width;
    g.gather(x, Arc::new(index), &out_shape)
}

fn rank3(g: &Graph, z: Var) -> Result<(usize, usize, usize)> {
    match *g.value(z).shape() {
        [p, n, d] => Ok((p, n, d)),
        ref s => Err(Error::shape(format!(
            "bucket features must be P×N×d, got {s:?}"
        ))),
    }
}

/// One head on a `P × N × d_slice` slice.
pub fn head_forward(
    g: &mut Graph,
    store: &ParamStore,
    head: &HeadParams,
    z: Var,
    index: &Arc<ModulationIndex>,
    opts: &PnaOptions,
) -> Result<HeadTrace> {
    let (p, n, ds) = rank3(g, z)?;
    if store.get(head.wq).shape() != [ds, 2 * ds] {
        return Err(Error::shape(format!(
            "head expects a slice of width {}, got {ds}",
            store.get(head.wq).shape()[0]
        )));
    }
    if index.period() != p {
        return Err(Error::shape(format!(
            "modulation index of period {} for {p} phases",
            index.period()
        )));
    }
    let wq = g.param(store, head.wq);
    let wk = g.param(store, head.wk);
    let wv = g.param(store, head.wv);
    let wg = g.param(store, head.wg);
    let bg = g.param(store, head.bg);
    let q = g.matmul(z, wq)?;
    let k = g.matmul(z, wk)?;
    let q1 = slice_last(g, q, 0, ds)?;
    let q2 = slice_last(g, q, ds, ds)?;
    let k1 = slice_last(g, k, 0, ds)?;
    let k2 = slice_last(g, k, ds, ds)?;
    let v = g.matmul(z, wv)?;
    let gl = g.affine(z, wg, bg)?;
    let gate = g.sigmoid(gl);

    let scale = 1.0 / (ds as f64).sqrt();
    let offset = if opts.offset_attention {
        Some(offset_attention(
            g, q1, k1, q2, k2, gate, index, scale, opts,
        )?)
    } else {
        None
    };

    let aligned = match head.mu_aligned {
        Some(mu) if opts.aligned_attention && n > 1 => {
            let mu = g.param(store, mu);
            let logits = g.custom(Arc::new(AlignedLogits), &[q1, k1, mu])?;
            Some(g.softmax(logits, 2)?)
        }
        _ => None,
    };

    let u = match aligned {
        Some(a) => g.mode_multiply(a, v, 2)?,
        None => v,
    };
    let pna = match offset {
        Some(a) => g.mode_multiply(a, u, 1)?,
        None => u,
    };
    let residual = g.mul_column(z, gate)?;
    let pre = g.add(pna, residual)?;
    let alpha = g.param(store, head.alpha);
    let gamma = g.param(store, head.gamma);
    let beta = g.param(store, head.beta);
    let scaled = g.scale_by(pre, alpha)?;
    let t = g.tanh(scaled);
    let gained = g.mul_bias(t, gamma)?;
    let out = g.add_bias(gained, beta)?;
    Ok(HeadTrace {
        q1,
        q2,
        k1,
        k2,
        v,
        gate,
        offset,
        aligned,
        pna,
        out,
    })
}

#[allow(clippy::too_many_arguments)]
fn offset_attention(
    g: &mut Graph,
    q1: Var,
    k1: Var,
    q2: Var,
    k2: Var,
    gate: Var,
    index: &Arc<ModulationIndex>,
    scale: f64,
    opts: &PnaOptions,
) -> Result<Var> {
    let logits = Arc::new(OffsetLogits { scale });
    if !opts.positive_branch && !opts.negative_branch {
        let zeta = g.custom(logits, &[q1, k1])?;
        return g.softmax(zeta, 1);
    }
    let positive = if opts.positive_branch {
        let mut zeta = g.custom(logits.clone(), &[q1, k1])?;
        if opts.positive_modulation {
            let m = Modulate {
                index: Arc::clone(index),
                side: Side::Closer,
            };
            zeta = g.custom(Arc::new(m), &[zeta])?;
        }
        Some(g.softmax(zeta, 1)?)
    } else {
        None
    };
    let negative = if opts.negative_branch {
        let mut eta = g.custom(logits, &[q2, k2])?;
        if opts.negative_modulation {
            let m = Modulate {
                index: Arc::clone(index),
                side: Side::Farther,
            };
            eta = g.custom(Arc::new(m), &[eta])?;
        }
        let s = g.softmax(eta, 1)?;
        Some(g.custom(Arc::new(NegativeGate), &[s, gate])?)
    } else {
        None
    };
    match (positive, negative) {
        (Some(a), Some(b)) => g.add(a, b),
        (Some(a), None) | (None, Some(a)) => Ok(a),
        (None, None) => unreachable!("handled above"),
    }
}

/// A full layer on `P × N × d_h` features; returns the output and the head
/// traces (empty for the dense variant).
pub fn layer_forward(
    g: &mut Graph,
    store: &ParamStore,
    layer: &LayerParams,
    z: Var,
    index: &Arc<ModulationIndex>,
    opts: &PnaOptions,
) -> Result<(Var, Vec<HeadTrace>)> {
    let (_, _, d_h) = rank3(g, z)?;
    match layer {
        LayerParams::Dense { w, b } => {
            let w = g.param(store, *w);
            let b = g.param(store, *b);
            Ok((g.affine(z, w, b)?, Vec::new()))
        }
        LayerParams::Attention { heads, wo } => {
            let ds = d_h / heads.len();
            let mut traces = Vec::with_capacity(heads.len());
            let mut outs = Vec::with_capacity(heads.len());
            for (h, head) in heads.iter().enumerate() {
                let slice = if heads.len() == 1 {
                    z
                } else {
                    slice_last(g, z, h * ds, ds)?
                };
                let t = head_forward(g, store, head, slice, index, opts)?;
                outs.push(t.out);
                traces.push(t);
            }
            let cat = if outs.len() == 1 {
                outs[0]
            } else {
                g.concat_last(&outs)?
            };
            let wo = g.param(store, *wo);
            Ok((g.matmul(cat, wo)?, traces))
        }
    }
}

/// Attention tensors of one head, detached from any tape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionBundle {
    pub q1: Tensor,
    pub q2: Tensor,
    pub k1: Tensor,
    pub k2: Tensor,
    pub v: Tensor,
    /// Gate Λ, `P × N × 1`.
    pub gate: Tensor,
    /// Offset attention Ā, `P × P × N` (identity pattern when switched off).
    pub offset: Tensor,
    /// Aligned attention Ã, `P × N × N` (identity pattern when skipped).
    pub aligned: Tensor,
}

fn identity_offset(p: usize, n: usize) -> Tensor {
    let mut t = Tensor::zeros(&[p, p, n]);
    for m in 0..p {
        for ni in 0..n {
            t.set(&[m, m, ni], 1.0);
        }
    }
    t
}

fn identity_aligned(p: usize, n: usize) -> Tensor {
    let mut t = Tensor::zeros(&[p, n, n]);
    for pi in 0..p {
        for ni in 0..n {
            t.set(&[pi, ni, ni], 1.0);
        }
    }
    t
}

impl AttentionBundle {
    pub fn from_trace(g: &Graph, t: &HeadTrace) -> Self {
        let (p, n) = {
            let s = g.value(t.v).shape();
            (s[0], s[1])
        };
        Self {
            q1: g.value(t.q1).clone(),
            q2: g.value(t.q2).clone(),
            k1: g.value(t.k1).clone(),
            k2: g.value(t.k2).clone(),
            v: g.value(t.v).clone(),
            gate: g.value(t.gate).clone(),
            offset: t
                .offset
                .map_or_else(|| identity_offset(p, n), |v| g.value(v).clone()),
            aligned: t
                .aligned
                .map_or_else(|| identity_aligned(p, n), |v| g.value(v).clone()),
        }
    }
}

/// Runs one head on a detached slice and returns its attention tensors.
pub fn project(
    z: &Tensor,
    store: &ParamStore,
    head: &HeadParams,
    index: &ModulationIndex,
    opts: &PnaOptions,
) -> Result<AttentionBundle> {
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let t = head_forward(&mut g, store, head, zv, &Arc::new(index.clone()), opts)?;
    Ok(AttentionBundle::from_trace(&g, &t))
}

/// Positive and negative offset logits, scaled by `d_att^{-1/2}`.
pub fn offset_logits(
    q1: &Tensor,
    k1: &Tensor,
    q2: &Tensor,
    k2: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let d = q1.last_dim().max(1) as f64;
    let scale = 1.0 / d.sqrt();
    Ok((
        kernels::offset_logits_kernel(q1, k1, scale)?,
        kernels::offset_logits_kernel(q2, k2, scale)?,
    ))
}

/// `softmax(ζ̃) − Λ ⊙ softmax(η̃)` over the key axis.
pub fn modulate_and_fuse(
    zeta: &Tensor,
    eta: &Tensor,
    gate: &Tensor,
    index: &ModulationIndex,
) -> Result<Tensor> {
    let pos = softmax_axis(&kernels::modulate_kernel(zeta, index, Side::Closer)?, 1)?;
    let neg = softmax_axis(&kernels::modulate_kernel(eta, index, Side::Farther)?, 1)?;
    let neg = kernels::negative_gate_kernel(&neg, gate)?;
    pos.zip_map(&neg, |a, b| a + b)
}

/// `softmax_m(μ·⟨q1[p,n], k1[p,m]⟩)`.
pub fn aligned_attention(q1: &Tensor, k1: &Tensor, mu: f64) -> Result<Tensor> {
    softmax_axis(&kernels::aligned_logits_kernel(q1, k1, mu)?, 2)
}

/// Attention output of one head before the residual and normalization.
pub fn pna_forward(
    z: &Tensor,
    store: &ParamStore,
    head: &HeadParams,
    index: &ModulationIndex,
    opts: &PnaOptions,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let t = head_forward(&mut g, store, head, zv, &Arc::new(index.clone()), opts)?;
    Ok(g.value(t.pna).clone())
}

/// A whole layer on detached `P × N × d_h` features.
pub fn multi_head(
    z: &Tensor,
    store: &ParamStore,
    layer: &LayerParams,
    index: &ModulationIndex,
    opts: &PnaOptions,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let (out, _) = layer_forward(&mut g, store, layer, zv, &Arc::new(index.clone()), opts)?;
    Ok(g.value(out).clone())
}

/// A layer over the unfolded aperiodic bucket, `L × 1 × d_h`, with distances
/// measured on the plain time axis.
pub fn zero_bucket_forward(
    z: &Tensor,
    store: &ParamStore,
    layer: &LayerParams,
    opts: &PnaOptions,
) -> Result<Tensor> {
    match *z.shape() {
        [l, 1, _] => {
            let index = ModulationIndex::new(l, DistanceMode::Absolute)?;
            multi_head(z, store, layer, &index, opts)
        }
        ref s => Err(Error::shape(format!(
            "aperiodic bucket features must be L×1×d, got {s:?}"
        ))),
    }
}
