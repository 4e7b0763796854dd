//! Named numerical checks that pit the production kernels against the
//! oracles and against their closed-form invariants. The CLI `verify`
//! command and the acceptance suite both run these.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::Serialize;

use crate::bucketing::{BucketSet, BucketSpec};
use crate::error::Result;
use crate::model::{Ablation, ModelConfig, PhatModel};
use crate::numerics::{counter, ParamStore, Tensor};
use crate::oracles::{
    acf_oracle, leftover_stick, naive_pna_oracle, oracle_distance, reverse_stick_breaking_oracle,
    stick_breaking_oracle, OracleHead, OracleReport,
};
use crate::periodicity::{autocorrelation, detect_periods, is_periodic};
use crate::pna::kernels::{modulate_kernel, Side};
use crate::pna::{
    offset_logits, pna_forward, project, DistanceMode, HeadParams, LayerParams, ModulationIndex,
    PnaOptions,
};
use crate::training::{gradcheck, GradcheckOptions};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub report: OracleReport,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct VerifyOptions {
    /// Substring a check name must contain to run.
    pub filter: Option<String>,
    /// Fault injection: corrupt the analytic gradient in the gradient check.
    pub corrupt_gradient: bool,
    pub seed: u64,
}

type CheckFn = fn(&VerifyOptions) -> Result<CheckResult>;

/// Every check with the default case counts.
pub const CHECKS: &[(&str, CheckFn)] = &[
    ("stick-breaking", |o| stick_breaking(500, o.seed)),
    ("row-sum", |o| row_sum(100, o.seed)),
    ("local-dominance", |o| local_dominance(100, o.seed)),
    ("bounds", |o| bounds(100, o.seed)),
    ("pna-oracle", |o| pna_oracle(50, o.seed)),
    ("acf-oracle", |o| acf(50, o.seed)),
    ("gradcheck", |o| gradient(5, 10, o.corrupt_gradient)),
    ("period-detection", |o| period_detection(100, o.seed)),
    ("complexity", |_| complexity()),
];

pub fn run(opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    CHECKS
        .iter()
        .filter(|(name, _)| {
            opts.filter
                .as_ref()
                .is_none_or(|f| name.contains(f.as_str()))
        })
        .map(|(_, f)| f(opts))
        .collect()
}

fn finish(
    name: &str,
    start: Instant,
    passed: bool,
    report: OracleReport,
    detail: String,
) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed,
        report,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize], sd: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let d = Normal::new(0.0, sd).expect("positive sd");
    Tensor::new(shape.to_vec(), (0..n).map(|_| d.sample(rng)).collect()).expect("sized")
}

/// A random single-head instance: store, head handles, features.
struct Instance {
    store: ParamStore,
    head: HeadParams,
    z: Tensor,
    index: ModulationIndex,
    p: usize,
    n: usize,
    ds: usize,
}

fn instance(
    rng: &mut ChaCha8Rng,
    p: usize,
    n: usize,
    ds: usize,
    mode: DistanceMode,
    with_mu: bool,
) -> Instance {
    let mut store = ParamStore::new();
    let layer = LayerParams::init(
        &mut store,
        "l",
        ds,
        1,
        if with_mu { 2 } else { 1 },
        true,
        rng,
    )
    .expect("valid layer");
    let LayerParams::Attention { heads, .. } = layer else {
        unreachable!("attention requested")
    };
    let head = heads.into_iter().next().expect("one head");
    // Spread the weights beyond their init range so logits are not tiny.
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let shape = store.get(id).shape().to_vec();
        store
            .set(id, normal_tensor(rng, &shape, 0.8))
            .expect("same shape");
    }
    Instance {
        store,
        head,
        z: normal_tensor(rng, &[p, n, ds], 1.0),
        index: ModulationIndex::new(p, mode).expect("p ≥ 1"),
        p,
        n,
        ds,
    }
}

fn to_oracle(inst: &Instance) -> OracleHead {
    let s = &inst.store;
    OracleHead {
        ds: inst.ds,
        wq: s.get(inst.head.wq).data().to_vec(),
        wk: s.get(inst.head.wk).data().to_vec(),
        wv: s.get(inst.head.wv).data().to_vec(),
        wg: s.get(inst.head.wg).data().to_vec(),
        bg: s.get(inst.head.bg).item(),
        mu: inst.head.mu_aligned.map(|id| s.get(id).item()),
    }
}

/// `exp(ζ̃)` against the closed-form product, and the farther-set dual.
pub fn stick_breaking(rows: usize, seed: u64) -> Result<CheckResult> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let mut rep = OracleReport::new("stick-breaking");
    while rep.cases_run < rows {
        let p = rng.random_range(2..=8);
        let idx = ModulationIndex::new(p, DistanceMode::Periodic)?;
        let x = normal_tensor(&mut rng, &[p, p, 1], 3.0);
        let closer = modulate_kernel(&x, &idx, Side::Closer)?;
        let farther = modulate_kernel(&x, &idx, Side::Farther)?;
        for m in 0..p {
            let row = &x.data()[m * p..(m + 1) * p];
            let dist: Vec<usize> = (0..p).map(|s| oracle_distance(m, s, p, true)).collect();
            let pos = stick_breaking_oracle(row, &dist);
            let neg = reverse_stick_breaking_oracle(row, &dist);
            for q in 0..p {
                rep.compare(pos[q], closer.data()[m * p + q].exp());
                rep.compare(neg[q], farther.data()[m * p + q].exp());
            }
            rep.case_done();
        }
    }
    let passed = rep.max_rel_error < 1e-10;
    let detail = format!("max relative error {:.2e} (limit 1e-10)", rep.max_rel_error);
    Ok(finish("stick-breaking", start, passed, rep, detail))
}

fn random_attention(
    rng: &mut ChaCha8Rng,
    max_p: usize,
    min_n: usize,
) -> Result<(Instance, crate::pna::AttentionBundle)> {
    let p = rng.random_range(2..=max_p);
    let n = rng.random_range(min_n..=4);
    let ds = rng.random_range(1..=3);
    let inst = instance(rng, p, n, ds, DistanceMode::Periodic, n > 1);
    let bundle = project(
        &inst.z,
        &inst.store,
        &inst.head,
        &inst.index,
        &PnaOptions::default(),
    )?;
    Ok((inst, bundle))
}

/// `Σ_q Ā[m,q,n] = 1 − Λ[m,n]`.
pub fn row_sum(instances: usize, seed: u64) -> Result<CheckResult> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
    let mut rep = OracleReport::new("row-sum");
    for _ in 0..instances {
        let (inst, b) = random_attention(&mut rng, 16, 1)?;
        let (p, n) = (inst.p, inst.n);
        for m in 0..p {
            for ni in 0..n {
                let s: f64 = (0..p).map(|q| b.offset.get(&[m, q, ni])).sum();
                rep.compare(1.0 - b.gate.get(&[m, ni, 0]), s);
            }
        }
        rep.case_done();
    }
    let passed = rep.max_abs_error < 1e-10;
    let detail = format!(
        "max |Σ Ā − (1 − Λ)| = {:.2e} (limit 1e-10)",
        rep.max_abs_error
    );
    Ok(finish("row-sum", start, passed, rep, detail))
}

/// Every modulated weight sits strictly under its leftover stick.
pub fn local_dominance(instances: usize, seed: u64) -> Result<CheckResult> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
    let mut rep = OracleReport::new("local-dominance");
    let mut violations = 0usize;
    let mut checked = 0usize;
    for _ in 0..instances {
        let (inst, b) = random_attention(&mut rng, 16, 1)?;
        let (p, n) = (inst.p, inst.n);
        let (zeta, eta) = offset_logits(&b.q1, &b.k1, &b.q2, &b.k2)?;
        let zt = modulate_kernel(&zeta, &inst.index, Side::Closer)?;
        let et = modulate_kernel(&eta, &inst.index, Side::Farther)?;
        for ni in 0..n {
            for m in 0..p {
                let dist: Vec<usize> = (0..p).map(|s| oracle_distance(m, s, p, true)).collect();
                let zr: Vec<f64> = (0..p).map(|s| zeta.get(&[m, s, ni])).collect();
                let er: Vec<f64> = (0..p).map(|s| eta.get(&[m, s, ni])).collect();
                for q in 0..p {
                    let (wz, bz) = (
                        zt.get(&[m, q, ni]).exp(),
                        leftover_stick(&zr, &dist, q, false),
                    );
                    let (we, be) = (
                        et.get(&[m, q, ni]).exp(),
                        leftover_stick(&er, &dist, q, true),
                    );
                    checked += 2;
                    violations += usize::from(wz >= bz) + usize::from(we >= be);
                    rep.max_rel_error = rep.max_rel_error.max(wz / bz).max(we / be);
                }
            }
        }
        rep.case_done();
    }
    let passed = violations == 0;
    let detail = format!(
        "{violations} of {checked} weights not strictly below their bound; smallest margin 1 − w/bound = {:.2e}",
        1.0 - rep.max_rel_error
    );
    Ok(finish("local-dominance", start, passed, rep, detail))
}

/// `Ā ∈ (−Λ, 1)` elementwise and every Ã slice sums to one.
pub fn bounds(instances: usize, seed: u64) -> Result<CheckResult> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 4);
    let mut rep = OracleReport::new("bounds");
    let mut outside = 0usize;
    for _ in 0..instances {
        let (inst, b) = random_attention(&mut rng, 12, 2)?;
        let (p, n) = (inst.p, inst.n);
        for m in 0..p {
            for ni in 0..n {
                let lam = b.gate.get(&[m, ni, 0]);
                for q in 0..p {
                    let a = b.offset.get(&[m, q, ni]);
                    outside += usize::from(!(a > -lam && a < 1.0));
                }
            }
        }
        for pi in 0..p {
            for ni in 0..n {
                let s: f64 = (0..n).map(|j| b.aligned.get(&[pi, ni, j])).sum();
                rep.compare(1.0, s);
            }
        }
        rep.case_done();
    }
    let passed = outside == 0 && rep.max_abs_error < 1e-10;
    let detail = format!(
        "{outside} offset weights outside (−Λ, 1); aligned row sums off by at most {:.2e}",
        rep.max_abs_error
    );
    Ok(finish("bounds", start, passed, rep, detail))
}

/// Head output against the loop-level oracle, covering periodic buckets,
/// the absolute-distance aperiodic bucket and the single-period identity.
pub fn pna_oracle(instances: usize, seed: u64) -> Result<CheckResult> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 5);
    let mut rep = OracleReport::new("pna-oracle");
    let mut kinds = [0usize; 3];
    for i in 0..instances {
        let ds = rng.random_range(1..=3);
        let kind = i % 3;
        let (p, n, mode, with_mu) = match kind {
            0 => (
                rng.random_range(1..=6),
                rng.random_range(2..=4),
                DistanceMode::Periodic,
                true,
            ),
            1 => (rng.random_range(2..=12), 1, DistanceMode::Absolute, false),
            _ => (rng.random_range(2..=8), 1, DistanceMode::Periodic, true),
        };
        kinds[kind] += 1;
        let inst = instance(&mut rng, p, n, ds, mode, with_mu);
        let got = pna_forward(
            &inst.z,
            &inst.store,
            &inst.head,
            &inst.index,
            &PnaOptions::default(),
        )?;
        let want = naive_pna_oracle(
            inst.z.data(),
            p,
            n,
            &to_oracle(&inst),
            mode == DistanceMode::Periodic,
        );
        for (w, g) in want.iter().zip(got.data()) {
            rep.compare(*w, *g);
        }
        rep.case_done();
    }
    let passed = rep.max_abs_error < 1e-10;
    let detail = format!(
        "max abs error {:.2e} over {} periodic, {} aperiodic, {} single-period instances",
        rep.max_abs_error, kinds[0], kinds[1], kinds[2]
    );
    Ok(finish("pna-oracle", start, passed, rep, detail))
}

/// Production autocorrelation against the two-pass oracle.
pub fn acf(series: usize, seed: u64) -> Result<CheckResult> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 6);
    let mut rep = OracleReport::new("acf-oracle");
    for _ in 0..series {
        let len = rng.random_range(8..200);
        let x: Vec<f64> = (0..len)
            .map(|_| rng.sample::<f64, _>(StandardNormal) + 3.0)
            .collect();
        let max_lag = len - 1;
        let acf = autocorrelation(&x, max_lag)?;
        for lag in 0..=max_lag {
            rep.compare(acf_oracle(&x, lag).expect("not constant"), acf.at(lag));
        }
        rep.case_done();
    }
    let passed = rep.max_abs_error < 1e-12;
    let detail = format!("max abs error {:.2e} (limit 1e-12)", rep.max_abs_error);
    Ok(finish("acf-oracle", start, passed, rep, detail))
}

/// The reference gradient-check model: one period-4 bucket over a horizon
/// of 12 (three periods) holding two variates, a third variate aperiodic,
/// width 4 split over two heads.
pub fn reference_model(seed: u64) -> Result<PhatModel> {
    let config = ModelConfig {
        lookback: 16,
        horizon: 12,
        topk: 1,
        d_model: 4,
        heads: 2,
        layers: 1,
        instance_norm: true,
        ablation: Ablation::default(),
    };
    let buckets = BucketSet {
        buckets: vec![BucketSpec::new(4, 12, vec![0, 1], vec![2.0, 1.0])?],
        zero_bucket: BucketSpec::zero(12, vec![2])?,
        num_variates: 3,
    };
    PhatModel::with_buckets(config, buckets, seed)
}

/// Analytic against central-difference gradients of the full model.
pub fn gradient(seeds: u64, params_per_run: usize, corrupt: bool) -> Result<CheckResult> {
    let start = Instant::now();
    let mut rep = OracleReport::new("gradcheck");
    let mut worst = String::new();
    for seed in 0..seeds {
        let model = reference_model(seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = normal_tensor(&mut rng, &[3, 16], 1.0);
        let y = normal_tensor(&mut rng, &[3, 12], 1.0);
        let opts = GradcheckOptions {
            samples: Some(params_per_run),
            seed,
            corrupt,
            ..Default::default()
        };
        let r = gradcheck(&model, &x, &y, &opts)?;
        for e in &r.entries {
            if worst.is_empty() || e.max_rel_error > rep.max_rel_error {
                worst = format!("{} (seed {seed})", e.name);
            }
            rep.max_rel_error = rep.max_rel_error.max(e.max_rel_error);
            rep.max_abs_error = rep.max_abs_error.max((e.analytic - e.numeric).abs());
        }
        rep.cases_run += r.entries.iter().map(|e| e.checked).sum::<usize>();
    }
    let passed = rep.max_rel_error < 1e-4;
    let detail = format!(
        "max relative error {:.2e} at {worst} (limit 1e-4)",
        rep.max_rel_error
    );
    Ok(finish("gradcheck", start, passed, rep, detail))
}

/// Counts from the detection experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DetectionStats {
    pub seeds: usize,
    pub sinusoid_hits: usize,
    pub noise_rejections: usize,
}

/// Period-24 sinusoids at 20 dB SNR and white noise, `T = 512`.
pub fn detection_stats(seeds: usize, seed: u64) -> Result<DetectionStats> {
    let t = 512;
    let amp = 1.0;
    // Signal power A²/2 over noise power σ² equals 100.
    let noise = Normal::new(0.0, (amp * amp / 2.0 / 100.0f64).sqrt()).expect("positive");
    let mut stats = DetectionStats {
        seeds,
        sinusoid_hits: 0,
        noise_rejections: 0,
    };
    for s in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003) + s as u64);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let x: Vec<f64> = (0..t)
            .map(|i| {
                amp * (std::f64::consts::TAU * i as f64 / 24.0 + phase).sin()
                    + noise.sample(&mut rng)
            })
            .collect();
        let prof = detect_periods(&Tensor::new(vec![1, t], x)?, 1)?;
        stats.sinusoid_hits += usize::from(prof.variates[0][0].period == 24);
        let w: Vec<f64> = (0..t).map(|_| rng.sample(StandardNormal)).collect();
        stats.noise_rejections += usize::from(!is_periodic(&w, 24));
    }
    Ok(stats)
}

pub fn period_detection(seeds: usize, seed: u64) -> Result<CheckResult> {
    let start = Instant::now();
    let st = detection_stats(seeds, seed)?;
    let mut rep = OracleReport::new("period-detection");
    rep.cases_run = 2 * seeds;
    let passed = st.sinusoid_hits * 100 >= 99 * seeds && st.noise_rejections * 100 >= 90 * seeds;
    let detail = format!(
        "top-1 = 24 in {}/{seeds}; noise not periodic at 24 in {}/{seeds}",
        st.sinusoid_hits, st.noise_rejections
    );
    Ok(finish("period-detection", start, passed, rep, detail))
}

/// Offset-attention multiply-accumulates of one forward pass of a
/// single-bucket model.
pub fn offset_macs(period: usize, horizon: usize, lookback: usize) -> Result<u64> {
    let config = ModelConfig {
        lookback,
        horizon,
        topk: 1,
        d_model: 8,
        heads: 2,
        layers: 1,
        instance_norm: true,
        ablation: Ablation::default(),
    };
    let buckets = BucketSet {
        buckets: vec![BucketSpec::new(period, horizon, vec![0], vec![1.0])?],
        zero_bucket: BucketSpec::zero(horizon, vec![])?,
        num_variates: 1,
    };
    let model = PhatModel::with_buckets(config, buckets, 0)?;
    let x = Tensor::new(
        vec![1, lookback],
        (0..lookback).map(|i| (i as f64 * 0.3).sin()).collect(),
    )?;
    counter::reset();
    model.forward(&x)?;
    Ok(counter::snapshot().offset_attention)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComplexityStats {
    /// `(T, MACs)` at `P = 24`, `L = 96`.
    pub by_lookback: Vec<(usize, u64)>,
    /// `(P, MACs)` at four periods per horizon.
    pub by_period: Vec<(usize, u64)>,
    /// Least-squares `c` in `MACs ≈ c·P²`.
    pub quadratic_coef: f64,
    /// Largest relative deviation from the fit.
    pub max_fit_error: f64,
}

pub fn complexity_stats() -> Result<ComplexityStats> {
    let by_lookback = [96, 336, 512]
        .iter()
        .map(|&t| offset_macs(24, 96, t).map(|c| (t, c)))
        .collect::<Result<Vec<_>>>()?;
    let by_period = [12, 24, 48]
        .iter()
        .map(|&p| offset_macs(p, 4 * p, 96).map(|c| (p, c)))
        .collect::<Result<Vec<_>>>()?;
    let (num, den) = by_period.iter().fold((0.0, 0.0), |(a, b), &(p, c)| {
        let p2 = (p * p) as f64;
        (a + p2 * c as f64, b + p2 * p2)
    });
    let coef = num / den;
    let max_fit_error = by_period
        .iter()
        .map(|&(p, c)| ((c as f64 - coef * (p * p) as f64) / (coef * (p * p) as f64)).abs())
        .fold(0.0, f64::max);
    Ok(ComplexityStats {
        by_lookback,
        by_period,
        quadratic_coef: coef,
        max_fit_error,
    })
}

pub fn complexity() -> Result<CheckResult> {
    let start = Instant::now();
    let st = complexity_stats()?;
    let invariant = st.by_lookback.windows(2).all(|w| w[0].1 == w[1].1);
    let passed = invariant && st.max_fit_error <= 0.10;
    let mut rep = OracleReport::new("complexity");
    rep.cases_run = st.by_lookback.len() + st.by_period.len();
    rep.max_rel_error = st.max_fit_error;
    let detail = format!(
        "MACs by T {:?}; by P {:?}; quadratic fit error {:.1}%",
        st.by_lookback,
        st.by_period,
        100.0 * st.max_fit_error
    );
    Ok(finish("complexity", start, passed, rep, detail))
}
