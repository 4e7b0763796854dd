//! Attention kernels with hand-written adjoints, registered on the tape as
//! custom operations.

use std::sync::Arc;

use super::index::ModulationIndex;
use crate::error::{Error, Result};
use crate::numerics::counter::{self, MacKind};
use crate::numerics::{sigmoid_scalar, softplus_scalar, CustomOp, Tensor};

fn dims3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(Error::shape(format!(
            "{what} must be rank 3, got {:?}",
            t.shape()
        ))),
    }
}

/// `out[m,q,n] = scale·⟨q[m,n,:], k[q,n,:]⟩` for `q, k` of shape `P×N×d`.
pub fn offset_logits_kernel(q: &Tensor, k: &Tensor, scale: f64) -> Result<Tensor> {
    let (p, n, d) = dims3(q, "query")?;
    if k.shape() != q.shape() {
        return Err(Error::shape(format!(
            "query {:?} and key {:?} differ",
            q.shape(),
            k.shape()
        )));
    }
    let (qd, kd) = (q.data(), k.data());
    let mut out = vec![0.0; p * p * n];
    for m in 0..p {
        for s in 0..p {
            for ni in 0..n {
                let a = &qd[(m * n + ni) * d..(m * n + ni + 1) * d];
                let b = &kd[(s * n + ni) * d..(s * n + ni + 1) * d];
                out[(m * p + s) * n + ni] =
                    scale * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            }
        }
    }
    counter::record(MacKind::OffsetAttention, (p * p * n * d) as u64);
    Tensor::new(vec![p, p, n], out)
}

/// `out[p,n,m] = mu·⟨q[p,n,:], k[p,m,:]⟩`.
pub fn aligned_logits_kernel(q: &Tensor, k: &Tensor, mu: f64) -> Result<Tensor> {
    let (p, n, d) = dims3(q, "query")?;
    if k.shape() != q.shape() {
        return Err(Error::shape(format!(
            "query {:?} and key {:?} differ",
            q.shape(),
            k.shape()
        )));
    }
    let (qd, kd) = (q.data(), k.data());
    let mut out = vec![0.0; p * n * n];
    for pi in 0..p {
        for a in 0..n {
            let qa = &qd[(pi * n + a) * d..(pi * n + a + 1) * d];
            for b in 0..n {
                let kb = &kd[(pi * n + b) * d..(pi * n + b + 1) * d];
                out[(pi * n + a) * n + b] = mu * qa.iter().zip(kb).map(|(x, y)| x * y).sum::<f64>();
            }
        }
    }
    counter::record(MacKind::AlignedAttention, (p * n * n * d) as u64);
    Tensor::new(vec![p, n, n], out)
}

/// Which keys a modulation term sums over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// Keys closer than the target (positive branch).
    Closer,
    /// Keys farther than the target (negative branch).
    Farther,
}

fn check_logits(x: &Tensor, index: &ModulationIndex) -> Result<(usize, usize)> {
    let (p, p2, n) = dims3(x, "logits")?;
    if p != p2 || p != index.period() {
        return Err(Error::shape(format!(
            "logits {:?} do not match a modulation index of period {}",
            x.shape(),
            index.period()
        )));
    }
    Ok((p, n))
}

/// Per-level sums of `v` over a row, then exclusive prefix (closer) or suffix
/// (farther) sums so `acc[level]` covers the strictly closer/farther keys.
fn level_sums(row: &[usize], levels: usize, v: impl Fn(usize) -> f64, side: Side, acc: &mut [f64]) {
    acc[..levels].iter_mut().for_each(|a| *a = 0.0);
    for (s, &lv) in row.iter().enumerate() {
        acc[lv] += v(s);
    }
    let mut run = 0.0;
    let order: Box<dyn Iterator<Item = usize>> = match side {
        Side::Closer => Box::new(0..levels),
        Side::Farther => Box::new((0..levels).rev()),
    };
    for lv in order {
        let here = acc[lv];
        acc[lv] = run;
        run += here;
    }
}

/// `x̃[m,q,n] = x[m,q,n] − Σ_{s ∈ set(m,q)} softplus(x[m,s,n])`, where the set
/// holds `q` and every key strictly closer (or farther) from `m`.
pub fn modulate_kernel(x: &Tensor, index: &ModulationIndex, side: Side) -> Result<Tensor> {
    let (p, n) = check_logits(x, index)?;
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    let mut acc = vec![0.0; index.levels()];
    let sp: Vec<f64> = xd.iter().map(|&v| softplus_scalar(v)).collect();
    for m in 0..p {
        let row = index.row(m);
        for ni in 0..n {
            let at = |s: usize| (m * p + s) * n + ni;
            level_sums(row, index.levels(), |s| sp[at(s)], side, &mut acc);
            for q in 0..p {
                out[at(q)] = xd[at(q)] - acc[row[q]] - sp[at(q)];
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

fn modulate_adjoint(x: &Tensor, grad: &Tensor, index: &ModulationIndex, side: Side) -> Tensor {
    let p = index.period();
    let n = x.shape()[2];
    let (xd, gd) = (x.data(), grad.data());
    let mut out = vec![0.0; xd.len()];
    let mut acc = vec![0.0; index.levels()];
    // The key s feeds every target strictly on the other side of it, so the
    // adjoint sums gradients over the opposite direction.
    let opposite = match side {
        Side::Closer => Side::Farther,
        Side::Farther => Side::Closer,
    };
    for m in 0..p {
        let row = index.row(m);
        for ni in 0..n {
            let at = |s: usize| (m * p + s) * n + ni;
            level_sums(row, index.levels(), |s| gd[at(s)], opposite, &mut acc);
            for s in 0..p {
                let g = gd[at(s)];
                out[at(s)] = g - sigmoid_scalar(xd[at(s)]) * (g + acc[row[s]]);
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}

/// `out[m,q,n] = −Λ[m,n]·s[m,q,n]`.
pub fn negative_gate_kernel(s: &Tensor, gate: &Tensor) -> Result<Tensor> {
    let (p, p2, n) = dims3(s, "attention")?;
    if p != p2 || gate.shape() != [p, n, 1] {
        return Err(Error::shape(format!(
            "gate {:?} does not fit attention {:?}",
            gate.shape(),
            s.shape()
        )));
    }
    let (sd, gd) = (s.data(), gate.data());
    let mut out = vec![0.0; sd.len()];
    for m in 0..p {
        for q in 0..p {
            for ni in 0..n {
                let i = (m * p + q) * n + ni;
                out[i] = -gd[m * n + ni] * sd[i];
            }
        }
    }
    Tensor::new(s.shape().to_vec(), out)
}

pub(crate) struct OffsetLogits {
    pub scale: f64,
}

impl CustomOp for OffsetLogits {
    fn name(&self) -> &'static str {
        "offset_logits"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        offset_logits_kernel(inputs[0], inputs[1], self.scale)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (q, k) = (inputs[0], inputs[1]);
        let (p, n, d) = (q.shape()[0], q.shape()[1], q.shape()[2]);
        let (qd, kd, gd) = (q.data(), k.data(), grad.data());
        let mut dq = vec![0.0; qd.len()];
        let mut dk = vec![0.0; kd.len()];
        for m in 0..p {
            for s in 0..p {
                for ni in 0..n {
                    let g = self.scale * gd[(m * p + s) * n + ni];
                    if g == 0.0 {
                        continue;
                    }
                    let (a, b) = ((m * n + ni) * d, (s * n + ni) * d);
                    for j in 0..d {
                        dq[a + j] += g * kd[b + j];
                        dk[b + j] += g * qd[a + j];
                    }
                }
            }
        }
        let shape = q.shape().to_vec();
        vec![
            Some(Tensor::new(shape.clone(), dq).expect("shape")),
            Some(Tensor::new(shape, dk).expect("shape")),
        ]
    }
}

pub(crate) struct AlignedLogits;

impl CustomOp for AlignedLogits {
    fn name(&self) -> &'static str {
        "aligned_logits"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        aligned_logits_kernel(inputs[0], inputs[1], inputs[2].item())
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (q, k, mu) = (inputs[0], inputs[1], inputs[2].item());
        let (p, n, d) = (q.shape()[0], q.shape()[1], q.shape()[2]);
        let (qd, kd, gd) = (q.data(), k.data(), grad.data());
        let mut dq = vec![0.0; qd.len()];
        let mut dk = vec![0.0; kd.len()];
        let mut dmu = 0.0;
        for pi in 0..p {
            for a in 0..n {
                for b in 0..n {
                    let g = gd[(pi * n + a) * n + b];
                    let (ia, ib) = ((pi * n + a) * d, (pi * n + b) * d);
                    let mut dot = 0.0;
                    for j in 0..d {
                        dot += qd[ia + j] * kd[ib + j];
                        dq[ia + j] += mu * g * kd[ib + j];
                        dk[ib + j] += mu * g * qd[ia + j];
                    }
                    dmu += g * dot;
                }
            }
        }
        let shape = q.shape().to_vec();
        vec![
            Some(Tensor::new(shape.clone(), dq).expect("shape")),
            Some(Tensor::new(shape, dk).expect("shape")),
            Some(Tensor::new(inputs[2].shape().to_vec(), vec![dmu]).expect("shape")),
        ]
    }
}

pub(crate) struct Modulate {
    pub index: Arc<ModulationIndex>,
    pub side: Side,
}

impl CustomOp for Modulate {
    fn name(&self) -> &'static str {
        match self.side {
            Side::Closer => "positive_modulation",
            Side::Farther => "negative_modulation",
        }
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        modulate_kernel(inputs[0], &self.index, self.side)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(modulate_adjoint(
            inputs[0],
            grad,
            &self.index,
            self.side,
        ))]
    }
}

pub(crate) struct NegativeGate;

impl CustomOp for NegativeGate {
    fn name(&self) -> &'static str {
        "negative_gate"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        negative_gate_kernel(inputs[0], inputs[1])
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (s, gate) = (inputs[0], inputs[1]);
        let (p, n) = (s.shape()[0], s.shape()[2]);
        let (sd, gd, gr) = (s.data(), gate.data(), grad.data());
        let mut ds = vec![0.0; sd.len()];
        let mut dg = vec![0.0; gd.len()];
        for m in 0..p {
            for q in 0..p {
                for ni in 0..n {
                    let i = (m * p + q) * n + ni;
                    ds[i] = -gd[m * n + ni] * gr[i];
                    dg[m * n + ni] -= gr[i] * sd[i];
                }
            }
        }
        vec![
            Some(Tensor::new(s.shape().to_vec(), ds).expect("shape")),
            Some(Tensor::new(gate.shape().to_vec(), dg).expect("shape")),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference, relative_error, Graph};
    use crate::pna::DistanceMode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
        )
        .unwrap()
    }

    fn gradcheck(op: Arc<dyn CustomOp>, inputs: Vec<Tensor>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probe_shape = op
            .forward(&inputs.iter().collect::<Vec<_>>())
            .unwrap()
            .shape()
            .to_vec();
        let w = random(&mut rng, &probe_shape, 1.0);
        let eval = |vals: &[Tensor]| {
            let mut g = Graph::new();
            let vars: Vec<_> = vals.iter().map(|t| g.input(t.clone())).collect();
            let out = g.custom(Arc::clone(&op), &vars).unwrap();
            let y = g.mul_const(out, w.clone()).unwrap();
            let l = g.sum(y);
            (g, vars, l)
        };
        let (g, vars, l) = eval(&inputs);
        let adj = g.backward(l).unwrap();
        for (k, v) in vars.iter().enumerate() {
            let analytic = adj.get(*v).unwrap().clone();
            let numeric = finite_difference(&inputs[k], 1e-5, |t| {
                let mut vals = inputs.clone();
                vals[k] = t.clone();
                let (g, _, l) = eval(&vals);
                g.value(l).item()
            });
            for (a, n) in analytic.data().iter().zip(numeric.data()) {
                assert!(
                    relative_error(*a, *n, 1e-7) < 1e-4,
                    "{} input {k}: {a} vs {n}",
                    op.name()
                );
            }
        }
    }

    #[test]
    fn adjoints_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..10 {
            let (p, n, d) = (
                rng.random_range(1..6),
                rng.random_range(1..4),
                rng.random_range(1..4),
            );
            let q = random(&mut rng, &[p, n, d], 1.5);
            let k = random(&mut rng, &[p, n, d], 1.5);
            gradcheck(
                Arc::new(OffsetLogits { scale: 0.7 }),
                vec![q.clone(), k.clone()],
                seed,
            );
            gradcheck(
                Arc::new(AlignedLogits),
                vec![q, k, Tensor::scalar(0.4)],
                seed,
            );

            for mode in [DistanceMode::Periodic, DistanceMode::Absolute] {
                let index = Arc::new(ModulationIndex::new(p, mode).unwrap());
                for side in [Side::Closer, Side::Farther] {
                    let x = random(&mut rng, &[p, p, n], 3.0);
                    gradcheck(
                        Arc::new(Modulate {
                            index: Arc::clone(&index),
                            side,
                        }),
                        vec![x],
                        seed,
                    );
                }
            }
            let s = random(&mut rng, &[p, p, n], 1.0);
            let gate = random(&mut rng, &[p, n, 1], 1.0);
            gradcheck(Arc::new(NegativeGate), vec![s, gate], seed);
        }
    }

    #[test]
    fn offset_logits_hand_case() {
        // P=2, N=1, d=1: q = [1, 2], k = [3, -1].
        let q = Tensor::new(vec![2, 1, 1], vec![1.0, 2.0]).unwrap();
        let k = Tensor::new(vec![2, 1, 1], vec![3.0, -1.0]).unwrap();
        let z = offset_logits_kernel(&q, &k, 1.0).unwrap();
        assert_eq!(z.data(), &[3.0, -1.0, 6.0, -2.0]);
        let zero = offset_logits_kernel(&Tensor::zeros(&[2, 1, 1]), &k, 1.0).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn modulation_matches_explicit_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in 1..9 {
            let index = ModulationIndex::new(p, DistanceMode::Periodic).unwrap();
            let x = random(&mut rng, &[p, p, 2], 4.0);
            let pos = modulate_kernel(&x, &index, Side::Closer).unwrap();
            let neg = modulate_kernel(&x, &index, Side::Farther).unwrap();
            for m in 0..p {
                for q in 0..p {
                    for n in 0..2 {
                        let v = x.get(&[m, q, n]);
                        let sp = |s: &usize| softplus_scalar(x.get(&[m, *s, n]));
                        let want_pos = v - index.closer(m, q).iter().map(sp).sum::<f64>();
                        let want_neg = v - index.farther(m, q).iter().map(sp).sum::<f64>();
                        assert!((pos.get(&[m, q, n]) - want_pos).abs() < 1e-12);
                        assert!((neg.get(&[m, q, n]) - want_neg).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
