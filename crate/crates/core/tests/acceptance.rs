//! Acceptance criteria, one PASS/FAIL line each. Criterion failures are
//! reported, not asserted; only an internal error aborts the run.

use std::time::Instant;

use phat_core::data::synth_mixed;
use phat_core::model::{Ablation, PhatModel};
use phat_core::numerics::Tensor;
use phat_core::periodicity::detect_periods;
use phat_core::training::{evaluate, evaluate_with, naive_periods, seasonal_naive, train};
use phat_core::verify::{self, CheckResult};
use phat_core::{presets, Result};

struct Line {
    id: &'static str,
    passed: bool,
    detail: String,
}

fn from_check(id: &'static str, r: CheckResult) -> Line {
    Line {
        id,
        passed: r.passed,
        detail: format!("{} [{:.2}s]", r.detail, r.seconds),
    }
}

fn stick_breaking() -> Result<Line> {
    let r = verify::stick_breaking(500, 0)?;
    let fast = r.seconds < 10.0;
    Ok(Line {
        id: "1 stick-breaking identity",
        passed: r.passed && fast,
        detail: format!("{} [{:.2}s, limit 10s]", r.detail, r.seconds),
    })
}

fn forecasting() -> Result<Line> {
    let start = Instant::now();
    let (ds, _) = synth_mixed(0, 2, 4096)?;
    let cfg = presets::get("synthetic-acceptance")?.config;
    let full = train(&ds, &cfg)?;
    let mut flat_cfg = cfg.clone();
    flat_cfg.model.ablation = Ablation::variant("no-bucket")?;
    let flat = train(&ds, &flat_cfg)?;

    let test = &full.prepared.test;
    let (t, l) = (cfg.model.lookback, cfg.model.horizon);
    let periods = naive_periods(&full.prepared.profile, t);
    let naive = evaluate_with(test, t, l, |x| seasonal_naive(x, &periods, l))?;
    let phat = evaluate(&full.model, test)?;
    let shared = evaluate(&flat.model, test)?;
    let secs = start.elapsed().as_secs_f64();

    let ratio = phat.mse / naive.mse;
    let beats_naive = ratio <= 0.5;
    let beats_shared = phat.mse < shared.mse;
    let fast = secs < 300.0;
    Ok(Line {
        id: "8 desk-scale forecasting",
        passed: beats_naive && beats_shared && fast,
        detail: format!(
            "test MSE {:.5} vs naive {:.5} (ratio {ratio:.3}, limit 0.5: {}); vs w/o Bucket {:.5} ({}); \
             periods {:?}; {} epochs; [{secs:.0}s, limit 300s: {}]",
            phat.mse,
            naive.mse,
            verdict(beats_naive),
            shared.mse,
            verdict(beats_shared),
            full.model.buckets.periods(),
            cfg.epochs,
            verdict(fast),
        ),
    })
}

fn complexity() -> Result<Line> {
    let st = verify::complexity_stats()?;
    let invariant = st.by_lookback.windows(2).all(|w| w[0].1 == w[1].1);
    let fixed_l: Vec<(usize, u64)> = [12, 24, 48]
        .iter()
        .map(|&p| verify::offset_macs(p, 96, 96).map(|c| (p, c)))
        .collect::<Result<_>>()?;
    Ok(Line {
        id: "9 complexity",
        passed: invariant && st.max_fit_error <= 0.10,
        detail: format!(
            "MACs by T {:?} ({}); by P at four periods per horizon {:?}, quadratic fit error {:.1}%; \
             for reference at fixed L=96 {:?}",
            st.by_lookback,
            if invariant { "invariant" } else { "varies" },
            st.by_period,
            100.0 * st.max_fit_error,
            fixed_l,
        ),
    })
}

fn parameter_count() -> Result<Line> {
    let cfg = presets::get("ettm1-96")?.config;
    // Seven variates with a daily cycle at 15-minute sampling.
    let s = 4 * cfg.model.lookback;
    let x: Vec<f64> = (0..7)
        .flat_map(|c| {
            (0..s).map(move |t| (std::f64::consts::TAU * t as f64 / 96.0 + c as f64).sin())
        })
        .collect();
    let profile = detect_periods(&Tensor::new(vec![7, s], x)?, cfg.model.topk)?;
    let model = PhatModel::new(cfg.model, &profile, 0)?;
    let n = model.count_params();
    let target = 33_400.0;
    let ratio = n as f64 / target;
    let parts: Vec<String> = model
        .param_breakdown()
        .iter()
        .map(|(k, v)| format!("{k} {v}"))
        .collect();
    Ok(Line {
        id: "10 parameter count",
        passed: (1.0 / 3.0..=3.0).contains(&ratio),
        detail: format!(
            "{n} parameters, {ratio:.3}× the 33.4K reference; {}; buckets {:?}",
            parts.join(", "),
            model.buckets.periods()
        ),
    })
}

type Criterion = (&'static str, Box<dyn Fn() -> Result<Line>>);

fn verdict(ok: bool) -> &'static str {
    if ok {
        "met"
    } else {
        "missed"
    }
}

fn main() {
    let quick = std::env::args().any(|a| a == "--quick")
        || std::env::var_os("PHAT_ACCEPTANCE_QUICK").is_some();
    let criteria: Vec<Criterion> = vec![
        ("1", Box::new(stick_breaking)),
        (
            "2",
            Box::new(|| Ok(from_check("2 row-sum identity", verify::row_sum(100, 0)?))),
        ),
        (
            "3",
            Box::new(|| {
                Ok(from_check(
                    "3 local dominance",
                    verify::local_dominance(100, 0)?,
                ))
            }),
        ),
        (
            "4",
            Box::new(|| Ok(from_check("4 bounds", verify::bounds(100, 0)?))),
        ),
        (
            "5",
            Box::new(|| {
                Ok(from_check(
                    "5 oracle equivalence",
                    verify::pna_oracle(50, 0)?,
                ))
            }),
        ),
        (
            "6",
            Box::new(|| {
                Ok(from_check(
                    "6 gradient check",
                    verify::gradient(5, 10, false)?,
                ))
            }),
        ),
        (
            "7",
            Box::new(|| {
                Ok(from_check(
                    "7 period detection",
                    verify::period_detection(100, 0)?,
                ))
            }),
        ),
        ("8", Box::new(forecasting)),
        ("9", Box::new(complexity)),
        ("10", Box::new(parameter_count)),
    ];
    let (mut ran, mut failed) = (0, 0);
    for (key, run) in &criteria {
        if quick && *key == "8" {
            println!("SKIP 8 desk-scale forecasting (quick mode)");
            continue;
        }
        let line = run().unwrap_or_else(|e| panic!("criterion {key} could not run: {e}"));
        ran += 1;
        failed += usize::from(!line.passed);
        println!(
            "{} {}: {}",
            if line.passed { "PASS" } else { "FAIL" },
            line.id,
            line.detail
        );
    }
    println!("acceptance: {} of {ran} criteria met", ran - failed);
}
