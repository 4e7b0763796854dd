//! Brute-force references for the attention and correlation kernels.
//!
//! Everything here is written from the defining formulas with its own
//! scalar helpers and plain slices; nothing is imported from the production
//! modules, so a shared bug cannot hide behind agreement.

#![allow(clippy::needless_range_loop)]

use serde::Serialize;

fn sigmoid(x: f64) -> f64 {
    // Branches keep exp from overflowing.
    if x < 0.0 {
        let e = x.exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        (1.0 + x.exp()).ln()
    }
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let top = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - top).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Worst-case disagreement between a reference and the code under test.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct OracleReport {
    pub name: String,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub cases_run: usize,
}

impl OracleReport {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Self::default()
        }
    }

    /// Folds one compared value into the running maxima. Relative error is
    /// taken against the reference magnitude.
    pub fn compare(&mut self, reference: f64, actual: f64) {
        let abs = (reference - actual).abs();
        let rel = if abs == 0.0 {
            0.0
        } else {
            abs / reference.abs().max(f64::MIN_POSITIVE)
        };
        if abs.is_nan() {
            self.max_abs_error = f64::INFINITY;
            self.max_rel_error = f64::INFINITY;
            return;
        }
        self.max_abs_error = self.max_abs_error.max(abs);
        self.max_rel_error = self.max_rel_error.max(rel);
    }

    pub fn case_done(&mut self) {
        self.cases_run += 1;
    }
}

/// Stick-breaking weights of one logit row: key `n` receives
/// `σ(ζ[n]) · Π (1 − σ(ζ[s]))` over every key `s` strictly closer to the
/// query than `n`.
pub fn stick_breaking_oracle(zeta: &[f64], distances: &[usize]) -> Vec<f64> {
    assert_eq!(zeta.len(), distances.len(), "one distance per logit");
    (0..zeta.len())
        .map(|n| {
            let mut w = sigmoid(zeta[n]);
            for s in 0..zeta.len() {
                if distances[s] < distances[n] {
                    w *= 1.0 - sigmoid(zeta[s]);
                }
            }
            w
        })
        .collect()
}

/// The negative-branch dual: the product runs over keys strictly farther.
pub fn reverse_stick_breaking_oracle(eta: &[f64], distances: &[usize]) -> Vec<f64> {
    assert_eq!(eta.len(), distances.len(), "one distance per logit");
    (0..eta.len())
        .map(|n| {
            let mut w = sigmoid(eta[n]);
            for s in 0..eta.len() {
                if distances[s] > distances[n] {
                    w *= 1.0 - sigmoid(eta[s]);
                }
            }
            w
        })
        .collect()
}

/// The leftover-stick bounds: `Π (1 − σ)` over strictly closer and strictly
/// farther keys respectively.
pub fn leftover_stick(logits: &[f64], distances: &[usize], n: usize, farther: bool) -> f64 {
    let mut rest = 1.0;
    for s in 0..logits.len() {
        let take = if farther {
            distances[s] > distances[n]
        } else {
            distances[s] < distances[n]
        };
        if take {
            rest *= 1.0 - sigmoid(logits[s]);
        }
    }
    rest
}

/// Distance between phases `i` and `j` on a cycle, or on a line.
pub fn oracle_distance(i: usize, j: usize, period: usize, cyclic: bool) -> usize {
    let fwd = i.abs_diff(j);
    if cyclic {
        fwd.min(period - fwd)
    } else {
        fwd
    }
}

/// One attention head written out as plain row-major arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleHead {
    pub ds: usize,
    /// `ds × 2ds`; the first `ds` output columns feed the positive branch.
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    /// `ds × ds`.
    pub wv: Vec<f64>,
    /// `ds`.
    pub wg: Vec<f64>,
    pub bg: f64,
    /// Aligned-attention scale; `None` means the identity.
    pub mu: Option<f64>,
}

/// Head output `Σ_q Ā[m,q,n] · (Ã V)[q,n,:]` for `z` of shape `P × N × ds`,
/// computed with explicit loops. `cyclic` picks periodic over absolute
/// distance.
pub fn naive_pna_oracle(
    z: &[f64],
    p: usize,
    n: usize,
    head: &OracleHead,
    cyclic: bool,
) -> Vec<f64> {
    let ds = head.ds;
    assert_eq!(z.len(), p * n * ds, "z must be P×N×ds");
    let at = |pi: usize, ni: usize| (pi * n + ni) * ds;

    // Projections.
    let mut q1 = vec![0.0; p * n * ds];
    let mut q2 = vec![0.0; p * n * ds];
    let mut k1 = vec![0.0; p * n * ds];
    let mut k2 = vec![0.0; p * n * ds];
    let mut v = vec![0.0; p * n * ds];
    let mut lam = vec![0.0; p * n];
    for pi in 0..p {
        for ni in 0..n {
            let row = &z[at(pi, ni)..at(pi, ni) + ds];
            for c in 0..ds {
                let (mut a, mut b, mut e, mut f, mut g) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for r in 0..ds {
                    a += row[r] * head.wq[r * 2 * ds + c];
                    b += row[r] * head.wq[r * 2 * ds + ds + c];
                    e += row[r] * head.wk[r * 2 * ds + c];
                    f += row[r] * head.wk[r * 2 * ds + ds + c];
                    g += row[r] * head.wv[r * ds + c];
                }
                q1[at(pi, ni) + c] = a;
                q2[at(pi, ni) + c] = b;
                k1[at(pi, ni) + c] = e;
                k2[at(pi, ni) + c] = f;
                v[at(pi, ni) + c] = g;
            }
            let mut s = head.bg;
            for r in 0..ds {
                s += row[r] * head.wg[r];
            }
            lam[pi * n + ni] = sigmoid(s);
        }
    }
    let dot = |x: &[f64], i: usize, y: &[f64], j: usize| -> f64 {
        (0..ds).map(|c| x[i + c] * y[j + c]).sum()
    };

    // Aligned attention across periods of the same phase.
    let mut u = vec![0.0; p * n * ds];
    for pi in 0..p {
        for a in 0..n {
            let weights: Vec<f64> = match head.mu {
                Some(mu) if n > 1 => softmax(
                    &(0..n)
                        .map(|b| mu * dot(&q1, at(pi, a), &k1, at(pi, b)))
                        .collect::<Vec<_>>(),
                ),
                _ => (0..n).map(|b| if b == a { 1.0 } else { 0.0 }).collect(),
            };
            for b in 0..n {
                for c in 0..ds {
                    u[at(pi, a) + c] += weights[b] * v[at(pi, b) + c];
                }
            }
        }
    }

    // Offset attention within each period.
    let scale = 1.0 / (ds as f64).sqrt();
    let mut out = vec![0.0; p * n * ds];
    for ni in 0..n {
        for m in 0..p {
            let zeta: Vec<f64> = (0..p)
                .map(|s| scale * dot(&q1, at(m, ni), &k1, at(s, ni)))
                .collect();
            let eta: Vec<f64> = (0..p)
                .map(|s| scale * dot(&q2, at(m, ni), &k2, at(s, ni)))
                .collect();
            let dist: Vec<usize> = (0..p).map(|s| oracle_distance(m, s, p, cyclic)).collect();
            let mut zt = vec![0.0; p];
            let mut et = vec![0.0; p];
            for q in 0..p {
                let (mut cz, mut ce) = (0.0, 0.0);
                for s in 0..p {
                    if s == q || dist[s] < dist[q] {
                        cz += softplus(zeta[s]);
                    }
                    if s == q || dist[s] > dist[q] {
                        ce += softplus(eta[s]);
                    }
                }
                zt[q] = zeta[q] - cz;
                et[q] = eta[q] - ce;
            }
            let pos = softmax(&zt);
            let neg = softmax(&et);
            for q in 0..p {
                let w = pos[q] - lam[m * n + ni] * neg[q];
                for c in 0..ds {
                    out[at(m, ni) + c] += w * u[at(q, ni) + c];
                }
            }
        }
    }
    out
}

/// Biased sample autocorrelation at `lag` from two explicit passes; `None`
/// for a constant series.
pub fn acf_oracle(series: &[f64], lag: usize) -> Option<f64> {
    assert!(lag < series.len(), "lag must be shorter than the series");
    let len = series.len() as f64;
    let mut mean = 0.0;
    for x in series {
        mean += x;
    }
    mean /= len;
    let mut c0 = 0.0;
    for x in series {
        c0 += (x - mean) * (x - mean);
    }
    if c0 == 0.0 {
        return None;
    }
    let mut ck = 0.0;
    for t in 0..series.len() - lag {
        ck += (series[t] - mean) * (series[t + lag] - mean);
    }
    Some(ck / c0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stick_breaking_examples() {
        let w = stick_breaking_oracle(&[0.0, 0.0], &[0, 1]);
        assert_eq!(w, vec![0.5, 0.25]);
        assert_eq!(stick_breaking_oracle(&[1.3], &[0]), vec![sigmoid(1.3)]);
        let w = stick_breaking_oracle(&[-50.0, -50.0], &[0, 1]);
        assert!(w.iter().all(|&x| x < 1e-20));
        assert!((w[1] / w[0] - (1.0 - sigmoid(-50.0))).abs() < 1e-8);
        assert_eq!(
            reverse_stick_breaking_oracle(&[0.0, 0.0], &[0, 1]),
            vec![0.25, 0.5]
        );
    }

    #[test]
    fn pna_oracle_fixtures() {
        // One phase and a closed gate: both attentions are the identity.
        let head = OracleHead {
            ds: 2,
            wq: vec![0.3, -0.2, 0.5, 0.1, 0.7, 0.4, -0.6, 0.2],
            wk: vec![0.1, 0.9, -0.3, 0.2, 0.5, -0.5, 0.4, 0.3],
            wv: vec![1.0, 0.5, -0.25, 2.0],
            wg: vec![0.0, 0.0],
            bg: -800.0,
            mu: None,
        };
        let z = vec![1.0, 2.0, -1.0, 0.5, 3.0, -2.0];
        let out = naive_pna_oracle(&z, 1, 3, &head, true);
        for r in 0..3 {
            let v0 = z[2 * r] * 1.0 + z[2 * r + 1] * -0.25;
            let v1 = z[2 * r] * 0.5 + z[2 * r + 1] * 2.0;
            assert!((out[2 * r] - v0).abs() < 1e-15 && (out[2 * r + 1] - v1).abs() < 1e-15);
        }
        let zero = naive_pna_oracle(
            &z,
            3,
            1,
            &OracleHead {
                wv: vec![0.0; 4],
                ..head
            },
            true,
        );
        assert!(zero.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn acf_examples() {
        let s = [1.0, 3.0, 2.0, 5.0, 4.0];
        assert_eq!(acf_oracle(&s, 0), Some(1.0));
        let r: Vec<f64> = s.iter().rev().cloned().collect();
        for lag in 0..5 {
            assert!((acf_oracle(&s, lag).unwrap() - acf_oracle(&r, lag).unwrap()).abs() < 1e-15);
        }
        assert_eq!(acf_oracle(&[2.0; 4], 1), None);
    }

    #[test]
    fn distances() {
        assert_eq!(oracle_distance(0, 23, 24, true), 1);
        assert_eq!(oracle_distance(0, 23, 24, false), 23);
    }
}
