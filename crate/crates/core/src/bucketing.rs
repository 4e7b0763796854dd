//! Groups variates by shared period, folds horizon-aligned sequences into a
//! phase × period grid, and mixes the variates of a bucket into features.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{matmul_last, Tensor};
use crate::periodicity::PeriodProfile;

/// One group of variates sharing a period. `period == 0` marks the bucket of
/// variates without a significant period, which is laid out as `L × 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketSpec {
    pub period: usize,
    pub members: Vec<usize>,
    /// Spectral magnitude that put each member in this bucket.
    pub magnitudes: Vec<f64>,
    pub horizon: usize,
    pub n_periods: usize,
    pub pad: usize,
}

impl BucketSpec {
    pub fn new(
        period: usize,
        horizon: usize,
        members: Vec<usize>,
        magnitudes: Vec<f64>,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("horizon must be positive"));
        }
        if period == 1 {
            return Err(Error::invalid("bucket period must be 0 or at least 2"));
        }
        if members.len() != magnitudes.len() {
            return Err(Error::invalid("one magnitude per member required"));
        }
        let (n_periods, pad) = if period == 0 {
            (1, 0)
        } else {
            let n = horizon.div_ceil(period);
            (n, period * n - horizon)
        };
        Ok(Self {
            period,
            members,
            magnitudes,
            horizon,
            n_periods,
            pad,
        })
    }

    pub fn zero(horizon: usize, members: Vec<usize>) -> Result<Self> {
        let mags = vec![0.0; members.len()];
        Self::new(0, horizon, members, mags)
    }

    pub fn is_zero(&self) -> bool {
        self.period == 0
    }

    /// Length of the phase axis: the period, or the horizon for Bucket-0.
    pub fn phase_len(&self) -> usize {
        if self.is_zero() {
            self.horizon
        } else {
            self.period
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.phase_len(), self.n_periods)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Position of `variate` within the member list.
    pub fn slot(&self, variate: usize) -> Option<usize> {
        self.members.iter().position(|&m| m == variate)
    }

    /// Source index in a horizon-aligned sequence for grid cell `[p, n]`,
    /// `None` for padding.
    pub fn source(&self, p: usize, n: usize) -> Option<usize> {
        let t = n * self.phase_len() + p;
        (t < self.horizon).then_some(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketSet {
    /// Periodic buckets in ascending period order.
    pub buckets: Vec<BucketSpec>,
    pub zero_bucket: BucketSpec,
    pub num_variates: usize,
}

impl BucketSet {
    /// Instantiated buckets: periodic ones ascending, then Bucket-0 if it has
    /// members.
    pub fn active(&self) -> impl Iterator<Item = &BucketSpec> {
        self.buckets
            .iter()
            .chain(std::iter::once(&self.zero_bucket).filter(|b| !b.is_empty()))
    }

    /// Indices into [`active`](Self::active) of every bucket holding `variate`.
    pub fn buckets_of(&self, variate: usize) -> Vec<usize> {
        self.active()
            .enumerate()
            .filter(|(_, b)| b.slot(variate).is_some())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn periods(&self) -> Vec<usize> {
        self.buckets.iter().map(|b| b.period).collect()
    }
}

fn check_horizon(profile: &PeriodProfile, horizon: usize) -> Result<()> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be positive"));
    }
    if profile.variates.is_empty() {
        return Err(Error::invalid("profile has no variates"));
    }
    Ok(())
}

/// Period a candidate occupies once folded over a horizon of `horizon`
/// steps; `None` when nothing of length at least 2 fits.
pub fn effective_period(period: usize, horizon: usize) -> Option<usize> {
    let p = period.min(horizon);
    (p >= 2).then_some(p)
}

/// One bucket per distinct significant period, plus Bucket-0 for variates
/// with no significant candidate. Periods longer than the horizon are capped
/// at the horizon; candidates that collapse onto the same capped period keep
/// the larger magnitude.
pub fn build_buckets(profile: &PeriodProfile, horizon: usize) -> Result<BucketSet> {
    check_horizon(profile, horizon)?;
    let mut groups: BTreeMap<usize, BTreeMap<usize, f64>> = BTreeMap::new();
    let mut zero = Vec::new();
    for (c, cands) in profile.variates.iter().enumerate() {
        let mut placed = false;
        for cand in cands.iter().filter(|c| c.significant) {
            let Some(p) = effective_period(cand.period, horizon) else {
                continue;
            };
            let slot = groups.entry(p).or_default().entry(c).or_insert(f64::MIN);
            *slot = slot.max(cand.magnitude);
            placed = true;
        }
        if !placed {
            zero.push(c);
        }
    }
    let buckets = groups
        .into_iter()
        .map(|(p, members)| {
            let (m, mags) = members.into_iter().unzip();
            BucketSpec::new(p, horizon, m, mags)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BucketSet {
        buckets,
        zero_bucket: BucketSpec::zero(horizon, zero)?,
        num_variates: profile.num_variates(),
    })
}

/// Every variate in one bucket. Its period is the most common significant
/// top-1 period (ties go to the larger summed magnitude, then the shorter
/// period); with no significant top-1 period at all the bucket is Bucket-0.
pub fn build_shared_bucket(profile: &PeriodProfile, horizon: usize) -> Result<BucketSet> {
    check_horizon(profile, horizon)?;
    let c = profile.num_variates();
    let mut votes: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for cand in profile.variates.iter().filter_map(|v| v.first()) {
        if !cand.significant {
            continue;
        }
        if let Some(p) = effective_period(cand.period, horizon) {
            let e = votes.entry(p).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += cand.magnitude;
        }
    }
    let winner = votes
        .iter()
        .max_by(|a, b| {
            a.1 .0
                .cmp(&b.1 .0)
                .then(a.1 .1.total_cmp(&b.1 .1))
                .then(b.0.cmp(a.0))
        })
        .map(|(&p, _)| p);
    let members: Vec<usize> = (0..c).collect();
    match winner {
        Some(p) => Ok(BucketSet {
            buckets: vec![BucketSpec::new(p, horizon, members, vec![0.0; c])?],
            zero_bucket: BucketSpec::zero(horizon, Vec::new())?,
            num_variates: c,
        }),
        None => Ok(BucketSet {
            buckets: Vec::new(),
            zero_bucket: BucketSpec::zero(horizon, members)?,
            num_variates: c,
        }),
    }
}

/// Folds a horizon-aligned series into the `P × N` grid, `[p, n] = x[n·P + p]`,
/// zero-padding the tail.
pub fn fold_variate(x: &[f64], spec: &BucketSpec) -> Result<Tensor> {
    if x.len() != spec.horizon {
        return Err(Error::shape(format!(
            "fold expects {} steps, got {}",
            spec.horizon,
            x.len()
        )));
    }
    let (p, n) = spec.grid();
    let mut out = Tensor::zeros(&[p, n]);
    for pi in 0..p {
        for ni in 0..n {
            if let Some(t) = spec.source(pi, ni) {
                out.data_mut()[pi * n + ni] = x[t];
            }
        }
    }
    Ok(out)
}

/// Inverse of [`fold_variate`]: reads the grid period by period and drops the
/// padding.
pub fn unfold_variate(grid: &Tensor, spec: &BucketSpec) -> Result<Vec<f64>> {
    let (p, n) = spec.grid();
    if grid.shape() != [p, n] {
        return Err(Error::shape(format!(
            "unfold expects [{p}, {n}], got {:?}",
            grid.shape()
        )));
    }
    Ok((0..spec.horizon)
        .map(|t| grid.data()[(t % p) * n + t / p])
        .collect())
}

/// The members of one bucket folded side by side: `|B| × P × N`.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldedBucket {
    pub data: Tensor,
    pub spec: BucketSpec,
}

/// Folds the rows of `aligned` (`|B| × L`, one row per member).
pub fn fold_bucket(aligned: &Tensor, spec: &BucketSpec) -> Result<FoldedBucket> {
    if aligned.shape() != [spec.len(), spec.horizon] {
        return Err(Error::shape(format!(
            "bucket of {} members over {} steps cannot fold {:?}",
            spec.len(),
            spec.horizon,
            aligned.shape()
        )));
    }
    let (p, n) = spec.grid();
    let mut data = Vec::with_capacity(spec.len() * p * n);
    for j in 0..spec.len() {
        data.extend(fold_variate(aligned.row(j), spec)?.into_data());
    }
    Ok(FoldedBucket {
        data: Tensor::new(vec![spec.len(), p, n], data)?,
        spec: spec.clone(),
    })
}

/// Mixed-variate features of one bucket, `P × N × d_h`.
#[derive(Clone, Debug, PartialEq)]
pub struct BucketEmbedding {
    pub data: Tensor,
}

/// `Z[p,n,:] = Σ_j folded[j,p,n]·W[j,:] + b`.
pub fn embed_bucket(folded: &FoldedBucket, w: &Tensor, b: &Tensor) -> Result<BucketEmbedding> {
    let m = folded.spec.len();
    let (p, n) = folded.spec.grid();
    if w.rank() != 2 || w.shape()[0] != m || b.shape() != [w.shape()[1]] {
        return Err(Error::shape(format!(
            "embedding of {m} variates with W {:?} and b {:?}",
            w.shape(),
            b.shape()
        )));
    }
    let src = folded.data.data();
    let mut cells = Vec::with_capacity(p * n * m);
    for cell in 0..p * n {
        cells.extend((0..m).map(|j| src[j * p * n + cell]));
    }
    let x = Tensor::new(vec![p, n, m], cells)?;
    let mut z = matmul_last(&x, w)?;
    let d = b.len();
    for row in z.data_mut().chunks_mut(d) {
        for (v, bb) in row.iter_mut().zip(b.data()) {
            *v += bb;
        }
    }
    Ok(BucketEmbedding { data: z })
}

/// `y = x·W + b` for a `T → L` map.
pub fn align_lookback(x: &[f64], w: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    if w.rank() != 2 || w.shape()[0] != x.len() || b.shape() != [w.shape()[1]] {
        return Err(Error::shape(format!(
            "alignment of {} steps with W {:?} and b {:?}",
            x.len(),
            w.shape(),
            b.shape()
        )));
    }
    let xt = Tensor::new(vec![1, x.len()], x.to_vec())?;
    let y = matmul_last(&xt, w)?;
    Ok(y.data().iter().zip(b.data()).map(|(a, c)| a + c).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::periodicity::PeriodCandidate;

    fn profile(rows: &[&[(usize, f64, bool)]]) -> PeriodProfile {
        PeriodProfile {
            topk: rows.iter().map(|r| r.len()).max().unwrap_or(1),
            length: 192,
            variates: rows
                .iter()
                .map(|r| {
                    r.iter()
                        .map(|&(period, magnitude, significant)| PeriodCandidate {
                            bin: 192 / period,
                            period,
                            magnitude,
                            significant,
                        })
                        .collect()
                })
                .collect(),
        }
    }

    #[test]
    fn groups_by_period() {
        let p = profile(&[&[(24, 3.0, true)], &[(24, 2.0, true)], &[(96, 1.0, true)]]);
        let set = build_buckets(&p, 96).unwrap();
        assert_eq!(set.periods(), vec![24, 96]);
        assert_eq!(set.buckets[0].members, vec![0, 1]);
        assert_eq!(set.buckets[1].members, vec![2]);
        assert!(set.zero_bucket.is_empty());
        assert_eq!(set.active().count(), 2);
    }

    #[test]
    fn variate_may_join_several_buckets() {
        let p = profile(&[
            &[(24, 3.0, true), (96, 1.0, true)],
            &[(12, 1.0, false), (7, 1.0, true)],
        ]);
        let set = build_buckets(&p, 96).unwrap();
        assert_eq!(set.periods(), vec![7, 24, 96]);
        assert_eq!(set.buckets_of(0), vec![1, 2]);
        assert_eq!(set.buckets_of(1), vec![0]);
    }

    #[test]
    fn all_insignificant_goes_to_zero_bucket() {
        let p = profile(&[&[(24, 3.0, false)], &[(5, 2.0, false)]]);
        let set = build_buckets(&p, 96).unwrap();
        assert!(set.buckets.is_empty());
        assert_eq!(set.zero_bucket.members, vec![0, 1]);
        assert_eq!(set.zero_bucket.grid(), (96, 1));
        assert_eq!(set.active().count(), 1);
    }

    #[test]
    fn long_periods_are_capped_at_the_horizon() {
        let p = profile(&[&[(192, 2.0, true), (96, 5.0, true)], &[(3, 1.0, true)]]);
        let set = build_buckets(&p, 96).unwrap();
        assert_eq!(set.periods(), vec![3, 96]);
        assert_eq!(set.buckets[1].members, vec![0]);
        assert_eq!(set.buckets[1].magnitudes, vec![5.0]);
        // A horizon of one step cannot hold any period.
        let set = build_buckets(&p, 1).unwrap();
        assert!(set.buckets.is_empty());
        assert_eq!(set.zero_bucket.members, vec![0, 1]);
    }

    #[test]
    fn shared_bucket_takes_the_majority_period() {
        let p = profile(&[
            &[(24, 1.0, true)],
            &[(96, 9.0, true)],
            &[(24, 1.0, true)],
            &[(5, 1.0, false)],
        ]);
        let set = build_shared_bucket(&p, 96).unwrap();
        assert_eq!(set.periods(), vec![24]);
        assert_eq!(set.buckets[0].members, vec![0, 1, 2, 3]);
        let tie = profile(&[&[(24, 1.0, true)], &[(96, 9.0, true)]]);
        assert_eq!(build_shared_bucket(&tie, 96).unwrap().periods(), vec![96]);
        let none = profile(&[&[(24, 1.0, false)]]);
        let set = build_shared_bucket(&none, 96).unwrap();
        assert!(set.buckets.is_empty());
        assert_eq!(set.zero_bucket.members, vec![0]);
    }

    #[test]
    fn spec_padding() {
        let s = BucketSpec::new(24, 96, vec![0], vec![1.0]).unwrap();
        assert_eq!((s.n_periods, s.pad), (4, 0));
        let s = BucketSpec::new(36, 96, vec![0], vec![1.0]).unwrap();
        assert_eq!((s.n_periods, s.pad), (3, 12));
        assert!(BucketSpec::new(1, 96, vec![0], vec![1.0]).is_err());
    }

    #[test]
    fn fold_layout_and_padding() {
        let x: Vec<f64> = (0..96).map(|t| t as f64 + 1.0).collect();
        let s = BucketSpec::new(36, 96, vec![0], vec![1.0]).unwrap();
        let g = fold_variate(&x, &s).unwrap();
        assert_eq!(g.shape(), &[36, 3]);
        assert_eq!(g.get(&[5, 1]), x[41]);
        assert_eq!(g.data().iter().filter(|&&v| v == 0.0).count(), 12);
        for p in 24..36 {
            assert_eq!(g.get(&[p, 2]), 0.0);
        }
        assert_eq!(unfold_variate(&g, &s).unwrap(), x);

        let z = BucketSpec::zero(3, vec![0]).unwrap();
        let g = fold_variate(&[1.0, 2.0, 3.0], &z).unwrap();
        assert_eq!(g.shape(), &[3, 1]);
        assert_eq!(g.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn embed_examples() {
        let s = BucketSpec::new(2, 4, vec![0, 1], vec![1.0, 1.0]).unwrap();
        let aligned =
            Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 6.0, 7.0, 8.0]]).unwrap();
        let folded = fold_bucket(&aligned, &s).unwrap();
        assert_eq!(folded.data.shape(), &[2, 2, 2]);

        let zero_w = Tensor::zeros(&[2, 3]);
        let e = embed_bucket(&folded, &zero_w, &Tensor::full(&[3], 1.5)).unwrap();
        assert!(e.data.data().iter().all(|&v| v == 1.5));

        // W = [[1, 2], [3, -1]], b = [0.5, 0]; cell [1,0] holds x0=2, x1=6.
        let w = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0]]).unwrap();
        let b = Tensor::from_vec(vec![0.5, 0.0]);
        let e = embed_bucket(&folded, &w, &b).unwrap();
        assert_eq!(e.data.shape(), &[2, 2, 2]);
        assert_eq!(e.data.get(&[1, 0, 0]), 2.0 + 18.0 + 0.5);
        assert_eq!(e.data.get(&[1, 0, 1]), 4.0 - 6.0);

        let one = BucketSpec::new(2, 4, vec![3], vec![1.0]).unwrap();
        let folded = fold_bucket(
            &Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap(),
            &one,
        )
        .unwrap();
        let e = embed_bucket(&folded, &Tensor::full(&[1, 3], 1.0), &Tensor::zeros(&[3])).unwrap();
        assert_eq!(e.data.get(&[1, 1, 2]), 4.0);
        assert!(matches!(
            embed_bucket(&folded, &Tensor::zeros(&[2, 3]), &Tensor::zeros(&[3])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn align_examples() {
        let w = Tensor::from_rows(&[
            vec![1.0, 0.0],
            vec![2.0, 1.0],
            vec![0.0, -1.0],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let b = Tensor::from_vec(vec![0.25, -0.5]);
        let y = align_lookback(&[1.0, 2.0, 3.0, 4.0], &w, &b).unwrap();
        assert_eq!(y, vec![1.0 + 4.0 + 4.0 + 0.25, 2.0 - 3.0 + 4.0 - 0.5]);
        assert_eq!(align_lookback(&[0.0; 4], &w, &b).unwrap(), vec![0.25, -0.5]);
        let id = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(
            align_lookback(&[3.0, 4.0], &id, &b).unwrap(),
            vec![3.25, 3.5]
        );
    }
}
