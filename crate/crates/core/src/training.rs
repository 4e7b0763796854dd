//! Losses, Adam, the minibatch training loop, gradient checking and the
//! seasonal-naive reference forecaster.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{split, windows, Dataset, Scaler, SplitRatios};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, PhatModel};
use crate::numerics::{Graph, ParamId, ParamStore, Tensor};
use crate::periodicity::{detect_periods, PeriodProfile};

fn same_shape(pred: &Tensor, target: &Tensor) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("metrics of an empty tensor"));
    }
    Ok(())
}

pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    same_shape(pred, target)?;
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok(s / pred.len() as f64)
}

pub fn mae(pred: &Tensor, target: &Tensor) -> Result<f64> {
    same_shape(pred, target)?;
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(s / pred.len() as f64)
}

/// Moments of every parameter in a store, indexed like the store.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Parameters absent from `grads` see a zero
/// gradient. Nothing is modified when any gradient is non-finite.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[(ParamId, Tensor)],
    state: &mut AdamState,
) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::State(format!(
            "optimizer tracks {} parameters, store has {}",
            state.m.len(),
            store.len()
        )));
    }
    for (id, g) in grads {
        if g.shape() != store.get(*id).shape() {
            return Err(Error::shape(format!(
                "gradient shape mismatch for {}",
                store.name(*id)
            )));
        }
        if !g.all_finite() {
            return Err(Error::Training(format!(
                "non-finite gradient for parameter {}",
                store.name(*id)
            )));
        }
    }
    let mut full: Vec<Option<&Tensor>> = vec![None; store.len()];
    for (id, g) in grads {
        full[id.0] = Some(g);
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let k = id.0;
        let p = store.get_mut(id).data_mut();
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for i in 0..p.len() {
            let g = full[k].map_or(0.0, |t| t.data()[i]);
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            p[i] -= state.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + state.eps);
        }
    }
    Ok(())
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Standardize every variate with training-split statistics.
    #[serde(default = "yes")]
    pub scale: bool,
    #[serde(default)]
    pub split: SplitRatios,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning_rate {} is not usable",
                self.learning_rate
            )));
        }
        if self.split.0.contains(&0) {
            return Err(Error::Config("split ratios must be positive".into()));
        }
        Ok(())
    }
}

/// The three splits in model units plus the training-split period profile.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: Tensor,
    pub val: Tensor,
    pub test: Tensor,
    pub scaler: Option<Scaler>,
    pub profile: PeriodProfile,
}

pub fn prepare(ds: &Dataset, cfg: &TrainConfig) -> Result<Prepared> {
    let sp = split(ds, cfg.split)?;
    let scaler = cfg.scale.then(|| Scaler::fit(&sp.train));
    let (train, val, test) = match &scaler {
        Some(s) => (
            s.transform(&sp.train)?,
            s.transform(&sp.val)?,
            s.transform(&sp.test)?,
        ),
        None => (sp.train, sp.val, sp.test),
    };
    if !train.all_finite() {
        return Err(Error::InvalidInput(
            "training split contains non-finite values".into(),
        ));
    }
    let profile = detect_periods(&train, cfg.model.topk)?;
    Ok(Prepared {
        train,
        val,
        test,
        scaler,
        profile,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub windows: usize,
}

/// Error accumulated over every stride-1 window of `series`.
pub fn evaluate_with(
    series: &Tensor,
    lookback: usize,
    horizon: usize,
    mut forecast: impl FnMut(&Tensor) -> Result<Tensor>,
) -> Result<Metrics> {
    let w = windows(series, lookback, horizon)?;
    let (mut se, mut ae) = (0.0, 0.0);
    for (x, y) in w.iter() {
        let p = forecast(&x)?;
        se += mse(&p, &y)?;
        ae += mae(&p, &y)?;
    }
    let n = w.len() as f64;
    Ok(Metrics {
        mse: se / n,
        mae: ae / n,
        windows: w.len(),
    })
}

/// Metrics of `model` on a series already in model units.
pub fn evaluate(model: &PhatModel, series: &Tensor) -> Result<Metrics> {
    evaluate_with(series, model.config.lookback, model.config.horizon, |x| {
        model.forward(x)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub val_mae: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub model: PhatModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub prepared: Prepared,
}

pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(ds, cfg, |_| {})
}

/// Like [`train`], reporting each finished epoch to `on_epoch`.
pub fn train_with(
    ds: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let prepared = prepare(ds, cfg)?;
    let mut model = PhatModel::new(cfg.model.clone(), &prepared.profile, cfg.seed)?;
    model.scaler = prepared.scaler.clone();
    let (t, l) = (cfg.model.lookback, cfg.model.horizon);
    let train_w = windows(&prepared.train, t, l)?;
    windows(&prepared.val, t, l)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e_ed0f_7a1e);
    let mut adam = AdamState::new(&model.store, cfg.learning_rate);
    let mut order: Vec<usize> = (0..train_w.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut acc: Vec<Option<Tensor>> = vec![None; model.store.len()];
            for &i in batch {
                let (x, y) = train_w.get(i);
                let mut g = Graph::new();
                let out = model.forward_graph(&mut g, &x)?.output;
                let loss = g.mse(out, y)?;
                let lv = g.value(loss).item();
                if !lv.is_finite() {
                    return Err(Error::Training(format!(
                        "loss diverged in epoch {epoch}, batch {bi} (window {i})"
                    )));
                }
                loss_sum += lv;
                for (id, grad) in g.backward(loss)?.param_grads(&g) {
                    match &mut acc[id.0] {
                        Some(a) => a
                            .data_mut()
                            .iter_mut()
                            .zip(grad.data())
                            .for_each(|(s, v)| *s += v),
                        slot => *slot = Some(grad),
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            let grads: Vec<(ParamId, Tensor)> = acc
                .into_iter()
                .enumerate()
                .filter_map(|(k, g)| g.map(|g| (ParamId(k), g.map(|v| v * inv))))
                .collect();
            adam_step(&mut model.store, &grads, &mut adam)?;
        }
        let val = evaluate(&model, &prepared.val)?;
        let entry = EpochLog {
            epoch,
            train_mse: loss_sum / train_w.len() as f64,
            val_mse: val.mse,
            val_mae: val.mae,
        };
        on_epoch(&entry);
        log.push(entry);
        if !val.mse.is_finite() {
            return Err(Error::Training(format!(
                "validation loss diverged in epoch {epoch}"
            )));
        }
        if best.as_ref().is_none_or(|(b, _, _)| val.mse < *b) {
            best = Some((val.mse, epoch, model.store.clone()));
        }
    }
    let best_epoch = best.map(|(_, e, store)| {
        model.store = store;
        e
    });
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        prepared,
    })
}

/// Metric log as CSV text.
pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,train_mse,val_mse,val_mae\n");
    for e in log {
        s.push_str(&format!(
            "{},{},{},{}\n",
            e.epoch, e.train_mse, e.val_mse, e.val_mae
        ));
    }
    s
}

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    /// Scalars to probe across all selected parameters; `None` checks all.
    pub samples: Option<usize>,
    pub step: f64,
    pub tolerance: f64,
    /// Floor on the denominator of the relative error, so gradients near
    /// zero are judged on absolute agreement.
    pub denom_floor: f64,
    pub seed: u64,
    /// Restrict to these parameter names; an empty list checks nothing.
    pub params: Option<Vec<String>>,
    /// Test fixture: perturb the analytic gradient before comparing.
    pub corrupt: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            samples: None,
            step: 1e-5,
            tolerance: 1e-4,
            denom_floor: 1e-6,
            seed: 0,
            params: None,
            corrupt: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub entries: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.entries
            .iter()
            .filter(|e| e.max_rel_error >= self.tolerance)
    }
}

/// Analytic MSE gradients against central differences on one window.
pub fn gradcheck(
    model: &PhatModel,
    x: &Tensor,
    y: &Tensor,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport> {
    let loss_of = |m: &PhatModel| -> Result<f64> {
        let mut g = Graph::new();
        let out = m.forward_graph(&mut g, x)?.output;
        let l = g.mse(out, y.clone())?;
        Ok(g.value(l).item())
    };
    let mut g = Graph::new();
    let out = model.forward_graph(&mut g, x)?.output;
    let loss = g.mse(out, y.clone())?;
    let mut analytic: Vec<Option<Tensor>> = vec![None; model.store.len()];
    for (id, t) in g.backward(loss)?.param_grads(&g) {
        analytic[id.0] = Some(t);
    }

    let selected: Vec<ParamId> = model
        .store
        .ids()
        .filter(|id| match &opts.params {
            Some(names) => names.iter().any(|n| n == model.store.name(*id)),
            None => true,
        })
        .collect();
    let mut probes: Vec<(ParamId, usize)> = selected
        .iter()
        .flat_map(|&id| (0..model.store.get(id).len()).map(move |i| (id, i)))
        .collect();
    if let Some(k) = opts.samples {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let picked = index::sample(&mut rng, probes.len(), k.min(probes.len()));
        let mut chosen: Vec<_> = picked.iter().map(|i| probes[i]).collect();
        chosen.sort_by_key(|(id, i)| (id.0, *i));
        probes = chosen;
    }

    let mut probe = model.clone();
    let mut entries: Vec<ParamCheck> = Vec::new();
    for (id, i) in probes {
        let orig = probe.store.get(id).data()[i];
        probe.store.get_mut(id).data_mut()[i] = orig + opts.step;
        let up = loss_of(&probe)?;
        probe.store.get_mut(id).data_mut()[i] = orig - opts.step;
        let down = loss_of(&probe)?;
        probe.store.get_mut(id).data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * opts.step);
        let mut a = analytic[id.0].as_ref().map_or(0.0, |t| t.data()[i]);
        if opts.corrupt {
            a = a * 1.5 + 1e-3;
        }
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.denom_floor);
        let name = model.store.name(id);
        match entries.last_mut() {
            Some(e) if e.name == name => {
                e.checked += 1;
                if err > e.max_rel_error {
                    (e.max_rel_error, e.analytic, e.numeric) = (err, a, numeric);
                }
            }
            _ => entries.push(ParamCheck {
                name: name.to_string(),
                checked: 1,
                max_rel_error: err,
                analytic: a,
                numeric,
            }),
        }
    }
    Ok(GradcheckReport {
        entries,
        tolerance: opts.tolerance,
    })
}

/// Per-variate period for the seasonal-naive forecaster: the strongest
/// significant period that fits in the look-back, else 1 (repeat the last
/// value).
pub fn naive_periods(profile: &PeriodProfile, lookback: usize) -> Vec<usize> {
    profile
        .variates
        .iter()
        .map(|cands| {
            cands
                .iter()
                .find(|c| c.significant && c.period >= 1 && c.period <= lookback)
                .map_or(1, |c| c.period)
        })
        .collect()
}

/// Repeats the last `P_c` look-back steps of each variate across the horizon.
pub fn seasonal_naive(x: &Tensor, periods: &[usize], horizon: usize) -> Result<Tensor> {
    if x.rank() != 2 || x.shape()[0] != periods.len() {
        return Err(Error::shape(format!(
            "{} periods for input {:?}",
            periods.len(),
            x.shape()
        )));
    }
    let t = x.shape()[1];
    let mut out = Vec::with_capacity(periods.len() * horizon);
    for (c, &p) in periods.iter().enumerate() {
        if p == 0 || p > t {
            return Err(Error::invalid(format!(
                "period {p} does not fit a look-back of {t}"
            )));
        }
        let row = x.row(c);
        out.extend((0..horizon).map(|h| row[t - p + h % p]));
    }
    Tensor::new(vec![periods.len(), horizon], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_mixed;
    use crate::model::Ablation;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn metric_examples() {
        let a = t(&[vec![1.0, 3.0]]);
        let z = t(&[vec![0.0, 0.0]]);
        assert_eq!(mse(&a, &z).unwrap(), 5.0);
        assert_eq!(mae(&a, &z).unwrap(), 2.0);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let b = a.map(|v| v + 2.0);
        assert_eq!(mse(&b, &a).unwrap(), 4.0);
        assert_eq!(mae(&b, &a).unwrap(), 2.0);
        assert!(mse(&a, &t(&[vec![1.0]])).is_err());
    }

    fn one_param(value: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::from_vec(value)).unwrap();
        s
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut s = one_param(vec![1.0, -2.0, 0.5]);
        let mut st = AdamState::new(&s, 0.01);
        let g = Tensor::from_vec(vec![3.0, -0.2, 1e-3]);
        adam_step(&mut s, &[(ParamId(0), g)], &mut st).unwrap();
        let d = s.get(ParamId(0)).data();
        assert!((d[0] - 0.99).abs() < 1e-6);
        assert!((d[1] + 1.99).abs() < 1e-6);
        assert!((d[2] - 0.49).abs() < 1e-6);
    }

    #[test]
    fn adam_two_steps_by_hand() {
        let mut s = one_param(vec![0.0]);
        let mut st = AdamState::new(&s, 0.1);
        for _ in 0..2 {
            adam_step(
                &mut s,
                &[(ParamId(0), Tensor::from_vec(vec![0.5]))],
                &mut st,
            )
            .unwrap();
        }
        // m1 = .05, v1 = .00025; m2 = .095, v2 = .00049975.
        let step1 = 0.1 * (0.05 / 0.1) / ((0.00025f64 / 0.001).sqrt() + 1e-8);
        let m2: f64 = 0.9 * 0.05 + 0.1 * 0.5;
        let v2: f64 = 0.999 * 0.00025 + 0.001 * 0.25;
        let step2 = 0.1 * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        assert!((s.get(ParamId(0)).data()[0] + step1 + step2).abs() < 1e-14);
        assert_eq!(st.t, 2);
    }

    #[test]
    fn adam_identity_cases() {
        let mut s = one_param(vec![1.0, 2.0]);
        let mut st = AdamState::new(&s, 0.5);
        adam_step(&mut s, &[(ParamId(0), Tensor::zeros(&[2]))], &mut st).unwrap();
        adam_step(&mut s, &[], &mut st).unwrap();
        assert_eq!(s.get(ParamId(0)).data(), &[1.0, 2.0]);
        let mut st = AdamState::new(&s, 0.0);
        adam_step(
            &mut s,
            &[(ParamId(0), Tensor::from_vec(vec![4.0, -1.0]))],
            &mut st,
        )
        .unwrap();
        assert_eq!(s.get(ParamId(0)).data(), &[1.0, 2.0]);
        assert!(st.v.iter().all(|v| v.data().iter().all(|&e| e >= 0.0)));
    }

    #[test]
    fn adam_rejects_nan_by_name() {
        let mut s = one_param(vec![1.0]);
        let mut st = AdamState::new(&s, 0.1);
        let err = adam_step(
            &mut s,
            &[(ParamId(0), Tensor::from_vec(vec![f64::NAN]))],
            &mut st,
        )
        .unwrap_err();
        assert!(
            matches!(&err, Error::Training(m) if m.contains('w')),
            "{err}"
        );
        assert_eq!(st.t, 0);
        assert_eq!(s.get(ParamId(0)).data(), &[1.0]);
    }

    #[test]
    fn naive_repeats_last_period() {
        let x = t(&[
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            vec![9.0, 8.0, 7.0, 6.0, 5.0, 4.0],
        ]);
        let y = seasonal_naive(&x, &[3, 1], 5).unwrap();
        assert_eq!(y.row(0), &[3.0, 4.0, 5.0, 3.0, 4.0]);
        assert_eq!(y.row(1), &[4.0; 5]);
        assert!(seasonal_naive(&x, &[7, 1], 5).is_err());
    }

    pub(crate) fn small_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                lookback: 48,
                horizon: 24,
                topk: 1,
                d_model: 4,
                heads: 2,
                layers: 1,
                instance_norm: true,
                ablation: Ablation::default(),
            },
            batch_size: 16,
            learning_rate: 0.01,
            epochs,
            seed: 3,
            scale: true,
            split: SplitRatios::default(),
        }
    }

    #[test]
    fn zero_epochs_keeps_initial_model() {
        let (ds, _) = synth_mixed(1, 1, 960).unwrap();
        let cfg = small_config(0);
        let out = train(&ds, &cfg).unwrap();
        let fresh = PhatModel::new(cfg.model.clone(), &out.prepared.profile, cfg.seed).unwrap();
        assert_eq!(
            out.model.to_checkpoint().params,
            fresh.to_checkpoint().params
        );
        assert!(out.log.is_empty() && out.best_epoch.is_none());
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let (ds, _) = synth_mixed(2, 1, 960).unwrap();
        let cfg = small_config(5);
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &cfg).unwrap();
        assert_eq!(a.log[0].train_mse, b.log[0].train_mse);
        assert!(a.log[4].train_mse < a.log[0].train_mse, "{:?}", a.log);
        let best = a.best_epoch.unwrap();
        assert_eq!(
            evaluate(&a.model, &a.prepared.val).unwrap().mse,
            a.log[best].val_mse
        );
        assert!(log_csv(&a.log).starts_with("epoch,train_mse,val_mse,val_mae\n0,"));
    }

    #[test]
    fn constant_series_is_fit() {
        let values = Tensor::full(&[2, 960], 3.5);
        let ds = Dataset {
            name: "flat".into(),
            columns: vec!["a".into(), "b".into()],
            values,
        };
        let out = train(&ds, &small_config(3)).unwrap();
        assert!(out.log.last().unwrap().val_mse < 1e-6, "{:?}", out.log);
    }

    #[test]
    fn gradcheck_passes_and_catches_corruption() {
        let (ds, _) = synth_mixed(4, 1, 960).unwrap();
        let cfg = small_config(0);
        let prep = prepare(&ds, &cfg).unwrap();
        let model = PhatModel::new(cfg.model.clone(), &prep.profile, 1).unwrap();
        let (x, y) = windows(&prep.train, 48, 24).unwrap().get(5);
        let opts = GradcheckOptions {
            samples: Some(40),
            ..Default::default()
        };
        let rep = gradcheck(&model, &x, &y, &opts).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert_eq!(rep.entries.iter().map(|e| e.checked).sum::<usize>(), 40);
        let bad = gradcheck(
            &model,
            &x,
            &y,
            &GradcheckOptions {
                corrupt: true,
                ..opts.clone()
            },
        )
        .unwrap();
        assert!(!bad.passed());
        assert!(bad.failures().count() > 0);
        let none = gradcheck(
            &model,
            &x,
            &y,
            &GradcheckOptions {
                params: Some(vec![]),
                ..opts
            },
        )
        .unwrap();
        assert!(none.entries.is_empty() && none.passed());
    }
}
