//! Per-variate dominant period detection from one-sided DFT magnitudes, with
//! an autocorrelation significance test at each candidate lag.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dft_magnitudes, Tensor};

/// z-value of the two-sided 95% band for a white-noise autocorrelation.
pub const BARTLETT_Z: f64 = 1.96;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodCandidate {
    /// Frequency bin that produced the period.
    pub bin: usize,
    pub period: usize,
    pub magnitude: f64,
    pub significant: bool,
}

/// Top-K periods per variate, each list ordered by decreasing magnitude.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodProfile {
    pub topk: usize,
    pub length: usize,
    pub variates: Vec<Vec<PeriodCandidate>>,
}

impl PeriodProfile {
    pub fn num_variates(&self) -> usize {
        self.variates.len()
    }

    /// Periods as a K×C table; `None` where a variate has fewer than K
    /// distinct periods.
    pub fn period_table(&self) -> Vec<Vec<Option<usize>>> {
        (0..self.topk)
            .map(|k| {
                self.variates
                    .iter()
                    .map(|cands| cands.get(k).map(|c| c.period))
                    .collect()
            })
            .collect()
    }

    pub fn is_aperiodic(&self, variate: usize) -> bool {
        self.variates[variate].iter().all(|c| !c.significant)
    }

    /// The strongest candidate of a variate regardless of significance.
    pub fn dominant(&self, variate: usize) -> Option<&PeriodCandidate> {
        self.variates[variate].first()
    }
}

/// Maps a frequency bin to a period length, rounding half up.
pub fn bin_to_period(length: usize, bin: usize) -> usize {
    debug_assert!(bin > 0);
    (length as f64 / bin as f64 + 0.5).floor() as usize
}

/// Detects the K strongest distinct periods of every row of `x` (C×T).
///
/// The DC bin is never a candidate. Equal magnitudes go to the lower bin.
/// When two bins round to the same period only the stronger one is kept and
/// the next bin is considered instead.
pub fn detect_periods(x: &Tensor, k: usize) -> Result<PeriodProfile> {
    if x.rank() != 2 {
        return Err(Error::shape(format!(
            "period detection expects a C×T matrix, got {:?}",
            x.shape()
        )));
    }
    let t = x.shape()[1];
    if t < 4 {
        return Err(Error::invalid(format!(
            "period detection needs at least 4 steps, got {t}"
        )));
    }
    let bins = t / 2;
    if k == 0 || k > bins {
        return Err(Error::invalid(format!(
            "top-k of {k} requested but only {bins} non-DC bins exist"
        )));
    }
    let variates = (0..x.shape()[0])
        .map(|c| detect_series(x.row(c), k))
        .collect::<Result<Vec<_>>>()?;
    Ok(PeriodProfile {
        topk: k,
        length: t,
        variates,
    })
}

fn detect_series(series: &[f64], k: usize) -> Result<Vec<PeriodCandidate>> {
    let t = series.len();
    let mags = dft_magnitudes(series)?;
    let mut order: Vec<usize> = (1..mags.len()).collect();
    order.sort_by(|&a, &b| mags[b].total_cmp(&mags[a]).then(a.cmp(&b)));

    let acf = autocorrelation(series, t - 1)?;
    let mut out: Vec<PeriodCandidate> = Vec::with_capacity(k);
    for bin in order {
        if out.len() == k {
            break;
        }
        let period = bin_to_period(t, bin);
        if out.iter().any(|c| c.period == period) {
            continue;
        }
        out.push(PeriodCandidate {
            bin,
            period,
            magnitude: mags[bin],
            significant: acf.exceeds_band(period),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Acf {
    /// ρ(0..=max_lag).
    pub values: Vec<f64>,
    /// Series length the estimate was computed from.
    pub length: usize,
    /// The series had zero variance; every ρ is reported as 0.
    pub degenerate: bool,
}

impl Acf {
    pub fn at(&self, lag: usize) -> f64 {
        self.values[lag]
    }

    /// Whether |ρ(lag)| clears the white-noise 95% band `1.96/√T`.
    pub fn exceeds_band(&self, lag: usize) -> bool {
        if self.degenerate || lag == 0 || lag >= self.values.len() {
            return false;
        }
        self.values[lag].abs() > BARTLETT_Z / (self.length as f64).sqrt()
    }
}

/// Biased sample autocorrelation up to `max_lag`.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Result<Acf> {
    let t = x.len();
    if max_lag >= t {
        return Err(Error::invalid(format!(
            "lag {max_lag} needs a series longer than {t}"
        )));
    }
    let mean = x.iter().sum::<f64>() / t as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0: f64 = centered.iter().map(|v| v * v).sum::<f64>() / t as f64;
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if c0 <= (1e-12 * scale).powi(2) || c0 == 0.0 {
        return Ok(Acf {
            values: vec![0.0; max_lag + 1],
            length: t,
            degenerate: true,
        });
    }
    let values = (0..=max_lag)
        .map(|lag| {
            let ck: f64 = centered[..t - lag]
                .iter()
                .zip(&centered[lag..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / t as f64;
            ck / c0
        })
        .collect();
    Ok(Acf {
        values,
        length: t,
        degenerate: false,
    })
}

/// Bartlett-band significance of the autocorrelation at `period`.
pub fn is_periodic(x: &[f64], period: usize) -> bool {
    if period < 1 || period >= x.len() {
        return false;
    }
    match autocorrelation(x, period) {
        Ok(acf) => acf.exceeds_band(period),
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn sine(t: usize, period: f64, phase: f64) -> Vec<f64> {
        (0..t)
            .map(|i| (TAU * i as f64 / period + phase).sin())
            .collect()
    }

    #[test]
    fn period_24_sinusoid_at_t96() {
        let x = Tensor::new(vec![1, 96], sine(96, 24.0, 0.0)).unwrap();
        let p = detect_periods(&x, 1).unwrap();
        assert_eq!(p.variates[0][0].bin, 4);
        assert_eq!(p.variates[0][0].period, 24);
        assert!(p.variates[0][0].significant);
    }

    #[test]
    fn bin_five_rounds_to_nineteen() {
        assert_eq!(bin_to_period(96, 5), 19);
        assert_eq!(bin_to_period(96, 48), 2);
        assert_eq!(bin_to_period(96, 1), 96);
        // 10/4 = 2.5 rounds half up.
        assert_eq!(bin_to_period(10, 4), 3);
    }

    #[test]
    fn constant_variate_is_not_significant() {
        let x = Tensor::new(vec![1, 64], vec![2.5; 64]).unwrap();
        let p = detect_periods(&x, 1).unwrap();
        assert!(!p.variates[0][0].significant);
        assert!(p.is_aperiodic(0));
    }

    #[test]
    fn topk_bounds() {
        let x = Tensor::new(vec![1, 16], sine(16, 4.0, 0.1)).unwrap();
        assert!(matches!(
            detect_periods(&x, 9),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            detect_periods(&x, 0),
            Err(Error::InvalidArgument(_))
        ));
        let short = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            detect_periods(&short, 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn duplicate_periods_are_collapsed() {
        // T=100: bins 33 and 34 both round to period 3.
        let x = Tensor::new(
            vec![1, 100],
            (0..100).map(|i| ((i * 7919) % 13) as f64).collect(),
        )
        .unwrap();
        let p = detect_periods(&x, 10).unwrap();
        let periods: Vec<usize> = p.variates[0].iter().map(|c| c.period).collect();
        let mut dedup = periods.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), periods.len());
        assert!(p.variates[0]
            .windows(2)
            .all(|w| w[0].magnitude >= w[1].magnitude));
    }

    #[test]
    fn acf_examples() {
        let x = sine(480, 24.0, 0.3);
        let acf = autocorrelation(&x, 30).unwrap();
        assert!((acf.at(0) - 1.0).abs() < 1e-12);
        assert!(acf.at(24) > 0.9);
        assert!(acf.at(12) < -0.9);

        let alt: Vec<f64> = (0..200)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let acf = autocorrelation(&alt, 1).unwrap();
        assert!(acf.at(1) < -0.99);

        assert!(matches!(
            autocorrelation(&alt, 200),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn constant_acf_is_degenerate() {
        let acf = autocorrelation(&[0.1; 40], 5).unwrap();
        assert!(acf.degenerate);
        assert!(acf.values.iter().all(|&v| v == 0.0));
        assert!(!is_periodic(&[0.1; 40], 5));
    }

    #[test]
    fn sinusoid_is_periodic() {
        let x = sine(480, 24.0, 1.0);
        assert!(is_periodic(&x, 24));
        assert!(!is_periodic(&x, 480));
    }
}
