use std::f64::consts::TAU;

use crate::error::{Error, Result};

/// One-sided DFT magnitudes, bins `0..=T/2`, by direct summation.
///
/// Twiddles are indexed by `(k·t) mod T` so every angle is reduced exactly
/// before the trig call.
pub fn dft_magnitudes(x: &[f64]) -> Result<Vec<f64>> {
    let t = x.len();
    if t < 2 {
        return Err(Error::invalid(format!(
            "DFT needs at least 2 samples, got {t}"
        )));
    }
    let (cos, sin): (Vec<f64>, Vec<f64>) = (0..t)
        .map(|j| {
            let angle = TAU * j as f64 / t as f64;
            (angle.cos(), angle.sin())
        })
        .unzip();
    let bins = t / 2 + 1;
    let mut out = Vec::with_capacity(bins);
    for k in 0..bins {
        let (mut re, mut im) = (0.0, 0.0);
        let mut idx = 0usize;
        for &v in x {
            re += v * cos[idx];
            im -= v * sin[idx];
            idx += k;
            if idx >= t {
                idx -= t;
            }
        }
        out.push(re.hypot(im));
    }
    Ok(out)
}
