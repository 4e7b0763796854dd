//! Datasets: CSV ingestion, chronological splits, sliding windows,
//! standardization, and the mixed-period synthetic generator.

use std::f64::consts::TAU;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// A multivariate series stored variate-major, `C × S`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub columns: Vec<String>,
    pub values: Tensor,
}

impl Dataset {
    pub fn num_variates(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn is_number(s: &str) -> bool {
    s.trim().parse::<f64>().is_ok()
}

/// Reads an ETT-style CSV: optional header row, optional leading timestamp
/// column, numeric variates after that.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    parse_csv(file, &name)
}

pub fn parse_csv(reader: impl Read, name: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<(usize, csv::StringRecord)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(rows.len() + 1, |p| p.line() as usize);
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        rows.push((line, rec));
    }
    let Some((_, first)) = rows.first() else {
        return Err(Error::Parse {
            line: 1,
            message: "file is empty".into(),
        });
    };
    let header = first.iter().any(|c| !is_number(c));
    let data_start = usize::from(header);
    let width = first.len();
    let timestamp = match rows.get(data_start) {
        Some((_, r)) => r.get(0).is_some_and(|c| !is_number(c)),
        None => {
            return Err(Error::Parse {
                line: rows[0].0 + 1,
                message: "no data rows".into(),
            })
        }
    };
    let skip = usize::from(timestamp);
    if width <= skip {
        return Err(Error::Parse {
            line: rows[0].0,
            message: "no numeric columns".into(),
        });
    }
    let c = width - skip;
    let columns = if header {
        first.iter().skip(skip).map(str::to_string).collect()
    } else {
        (0..c).map(|i| format!("v{i}")).collect()
    };
    let body = &rows[data_start..];
    let s = body.len();
    let mut values = vec![0.0; c * s];
    for (t, (line, rec)) in body.iter().enumerate() {
        if rec.len() != width {
            return Err(Error::Parse {
                line: *line,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        for (j, cell) in rec.iter().skip(skip).enumerate() {
            values[j * s + t] = cell.parse::<f64>().map_err(|_| Error::Parse {
                line: *line,
                message: format!("non-numeric value {cell:?} in column {}", j + skip + 1),
            })?;
        }
    }
    Ok(Dataset {
        name: name.to_string(),
        columns,
        values: Tensor::new(vec![c, s], values)?,
    })
}

/// Writes a dataset as CSV with a header row and no timestamp column.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    let csv_err = |e: csv::Error| Error::Io(e.into());
    w.write_record(&ds.columns).map_err(csv_err)?;
    for t in 0..ds.len() {
        let row: Vec<String> = (0..ds.num_variates())
            .map(|c| ds.values.get(&[c, t]).to_string())
            .collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Train:validation:test proportions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatios(pub [usize; 3]);

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios([7, 1, 2])
    }
}

/// Three contiguous chronological pieces of one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Tensor,
    pub val: Tensor,
    pub test: Tensor,
    /// Start of validation and test.
    pub bounds: (usize, usize),
}

fn columns(x: &Tensor, lo: usize, hi: usize) -> Tensor {
    let (c, s) = (x.shape()[0], x.shape()[1]);
    let mut data = Vec::with_capacity(c * (hi - lo));
    for i in 0..c {
        data.extend_from_slice(&x.data()[i * s + lo..i * s + hi]);
    }
    Tensor::new(vec![c, hi - lo], data).expect("slice within bounds")
}

/// Splits at `⌊S·r1/Σr⌋` and `⌊S·(r1+r2)/Σr⌋`.
pub fn split(ds: &Dataset, ratios: SplitRatios) -> Result<Splits> {
    let [r1, r2, r3] = ratios.0;
    if r1 == 0 || r2 == 0 || r3 == 0 {
        return Err(Error::invalid(format!(
            "split ratios must be positive, got {r1}:{r2}:{r3}"
        )));
    }
    let s = ds.len();
    let total = r1 + r2 + r3;
    let a = s * r1 / total;
    let b = s * (r1 + r2) / total;
    if a == 0 || b == a || b == s {
        return Err(Error::invalid(format!(
            "{s} samples leave an empty split at {r1}:{r2}:{r3}"
        )));
    }
    Ok(Splits {
        train: columns(&ds.values, 0, a),
        val: columns(&ds.values, a, b),
        test: columns(&ds.values, b, s),
        bounds: (a, b),
    })
}

/// Stride-1 look-back/horizon pairs over one contiguous piece.
#[derive(Clone, Copy, Debug)]
pub struct Windows<'a> {
    series: &'a Tensor,
    lookback: usize,
    horizon: usize,
}

pub fn windows(series: &Tensor, lookback: usize, horizon: usize) -> Result<Windows<'_>> {
    if series.rank() != 2 {
        return Err(Error::shape(format!(
            "series must be C×S, got {:?}",
            series.shape()
        )));
    }
    if lookback == 0 || horizon == 0 {
        return Err(Error::invalid("look-back and horizon must be positive"));
    }
    let len = series.shape()[1];
    if len < lookback + horizon {
        return Err(Error::invalid(format!(
            "{len} steps cannot hold a window of {lookback} + {horizon}"
        )));
    }
    Ok(Windows {
        series,
        lookback,
        horizon,
    })
}

impl Windows<'_> {
    pub fn len(&self) -> usize {
        self.series.shape()[1] - self.lookback - self.horizon + 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Window `i`: look-back starts at `i`, horizon at `i + T`.
    pub fn get(&self, i: usize) -> (Tensor, Tensor) {
        assert!(i < self.len(), "window {i} out of range");
        (
            columns(self.series, i, i + self.lookback),
            columns(
                self.series,
                i + self.lookback,
                i + self.lookback + self.horizon,
            ),
        )
    }

    pub fn iter(&self) -> impl Iterator<Item = (Tensor, Tensor)> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }
}

/// Per-variate standardization with statistics from one piece of data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Constant variates get unit scale.
    pub fn fit(x: &Tensor) -> Self {
        let (c, s) = (x.shape()[0], x.shape()[1].max(1));
        let (mean, std) = (0..c)
            .map(|i| {
                let row = x.row(i);
                let m = row.iter().sum::<f64>() / s as f64;
                let v = row.iter().map(|e| (e - m).powi(2)).sum::<f64>() / s as f64;
                let sd = v.sqrt();
                (m, if sd > 1e-12 { sd } else { 1.0 })
            })
            .unzip();
        Self { mean, std }
    }

    fn apply(&self, x: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor> {
        if x.rank() != 2 || x.shape()[0] != self.mean.len() {
            return Err(Error::shape(format!(
                "scaler for {} variates applied to {:?}",
                self.mean.len(),
                x.shape()
            )));
        }
        let s = x.shape()[1];
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(k, &v)| f(v, self.mean[k / s.max(1)], self.std[k / s.max(1)]))
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    pub fn transform(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(x, |v, m, s| (v - m) / s)
    }

    pub fn inverse(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(x, |v, m, s| v * s + m)
    }
}

/// Role of a synthetic variate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SynthGroup {
    /// Period-24 sinusoid.
    Short,
    /// Period-96 sinusoid.
    Long,
    /// Sign-flipped copy of the first member of a periodic group.
    AntiPhase,
    /// White noise only.
    Noise,
}

/// Standard deviation of the additive noise in [`synth_mixed`].
pub const SYNTH_NOISE_STD: f64 = 0.1;

pub const SYNTH_PERIODS: (usize, usize) = (24, 96);

/// `per_group` period-24 and period-96 sinusoids with random phase, one
/// anti-phase copy of each periodic group's first member, and `per_group`
/// pure-noise variates. Every variate carries Gaussian noise of std 0.1.
pub fn synth_mixed(
    seed: u64,
    per_group: usize,
    length: usize,
) -> Result<(Dataset, Vec<SynthGroup>)> {
    let (short, long) = SYNTH_PERIODS;
    if per_group == 0 {
        return Err(Error::invalid("synthetic groups need at least one variate"));
    }
    if length < 4 * long {
        return Err(Error::invalid(format!(
            "synthetic series needs at least {} steps, got {length}",
            4 * long
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, SYNTH_NOISE_STD).expect("valid std");
    let sine = |period: usize, phase: f64| -> Vec<f64> {
        (0..length)
            .map(|t| (TAU * t as f64 / period as f64 + phase).sin())
            .collect()
    };
    let mut clean: Vec<Vec<f64>> = Vec::new();
    let mut groups = Vec::new();
    let mut columns = Vec::new();
    for (g, period, tag) in [
        (SynthGroup::Short, short, "a"),
        (SynthGroup::Long, long, "b"),
    ] {
        for i in 0..per_group {
            let phase = rng.random_range(0.0..TAU);
            clean.push(sine(period, phase));
            groups.push(g);
            columns.push(format!("{tag}{i}_p{period}"));
        }
    }
    for (k, period) in [(0, short), (per_group, long)] {
        clean.push(clean[k].iter().map(|v| -v).collect());
        groups.push(SynthGroup::AntiPhase);
        columns.push(format!("c_neg_p{period}"));
    }
    for i in 0..per_group {
        clean.push(vec![0.0; length]);
        groups.push(SynthGroup::Noise);
        columns.push(format!("d{i}_noise"));
    }
    let mut values = Vec::with_capacity(clean.len() * length);
    for row in &clean {
        values.extend(row.iter().map(|v| v + noise.sample(&mut rng)));
    }
    let ds = Dataset {
        name: format!("synth_mixed_s{seed}"),
        columns,
        values: Tensor::new(vec![clean.len(), length], values)?,
    };
    Ok((ds, groups))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::periodicity::{autocorrelation, detect_periods, is_periodic};

    fn parse(s: &str) -> Result<Dataset> {
        parse_csv(s.as_bytes(), "t")
    }

    #[test]
    fn plain_numeric_file() {
        let ds = parse("1,2\n3,4\n5,6\n").unwrap();
        assert_eq!(ds.values.shape(), &[2, 3]);
        assert_eq!(ds.values.row(0), &[1.0, 3.0, 5.0]);
        assert_eq!(ds.columns, vec!["v0", "v1"]);
    }

    #[test]
    fn header_and_date_column() {
        let ds =
            parse("date,HUFL,OT\n2016-07-01 00:00:00,5.8,30.5\n2016-07-01 01:00:00,5.7,27.8\n")
                .unwrap();
        assert_eq!(ds.columns, vec!["HUFL", "OT"]);
        assert_eq!(ds.values.row(1), &[30.5, 27.8]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        assert!(matches!(parse(""), Err(Error::Parse { .. })));
        match parse("a,b\n1,2\n3\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match parse("a,b\n1,2\n3,x\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("a,b\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn csv_round_trip() {
        let (ds, _) = synth_mixed(3, 1, 400).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_csv(&ds, &p).unwrap();
        let back = load_csv(&p).unwrap();
        assert_eq!(back.columns, ds.columns);
        assert_eq!(back.values, ds.values);
    }

    fn ds_of_len(s: usize) -> Dataset {
        Dataset {
            name: "x".into(),
            columns: vec!["a".into()],
            values: Tensor::new(vec![1, s], (0..s).map(|v| v as f64).collect()).unwrap(),
        }
    }

    #[test]
    fn split_sizes() {
        let sizes = |s, r| {
            let sp = split(&ds_of_len(s), SplitRatios(r)).unwrap();
            (sp.train.shape()[1], sp.val.shape()[1], sp.test.shape()[1])
        };
        assert_eq!(sizes(10, [7, 1, 2]), (7, 1, 2));
        assert_eq!(sizes(10, [6, 2, 2]), (6, 2, 2));
        assert_eq!(sizes(966, [7, 1, 2]), (676, 96, 194));
        assert!(split(&ds_of_len(3), SplitRatios([7, 1, 2])).is_err());
        assert!(split(&ds_of_len(30), SplitRatios([0, 1, 2])).is_err());
    }

    #[test]
    fn window_counts_and_offsets() {
        let x = ds_of_len(20).values;
        assert_eq!(windows(&x, 12, 8).unwrap().len(), 1);
        let y = ds_of_len(24).values;
        let w = windows(&y, 12, 8).unwrap();
        assert_eq!(w.len(), 5);
        let (xi, yi) = w.get(3);
        assert_eq!(xi.data()[0], 3.0);
        assert_eq!(yi.data()[0], 15.0);
        assert!(windows(&ds_of_len(19).values, 12, 8).is_err());
    }

    #[test]
    fn scaler_round_trip() {
        let (ds, _) = synth_mixed(1, 1, 400).unwrap();
        let sc = Scaler::fit(&ds.values);
        let z = sc.transform(&ds.values).unwrap();
        for i in 0..z.shape()[0] {
            let row = z.row(i);
            let m = row.iter().sum::<f64>() / row.len() as f64;
            assert!(m.abs() < 1e-12);
        }
        assert!(sc.inverse(&z).unwrap().max_abs_diff(&ds.values) < 1e-12);
        let flat = Scaler::fit(&Tensor::full(&[1, 5], 3.0));
        assert_eq!(flat.std, vec![1.0]);
    }

    #[test]
    fn synthetic_groups_behave() {
        let (ds, groups) = synth_mixed(7, 2, 960).unwrap();
        assert_eq!(ds.num_variates(), 8);
        assert_eq!(ds.len(), 960);
        let prof = detect_periods(&ds.values, 1).unwrap();
        for (c, g) in groups.iter().enumerate() {
            let row = ds.values.row(c);
            match g {
                SynthGroup::Short => {
                    assert_eq!(prof.variates[c][0].period, 24);
                    assert!(autocorrelation(row, 12).unwrap().at(12) < 0.0);
                }
                SynthGroup::Long => assert_eq!(prof.variates[c][0].period, 96),
                SynthGroup::AntiPhase => assert!(prof.variates[c][0].significant),
                SynthGroup::Noise => {
                    assert!(!is_periodic(row, 24) && !is_periodic(row, 96));
                }
            }
        }
        // The anti-phase copy of the first short variate moves against it.
        let anti = groups
            .iter()
            .position(|g| *g == SynthGroup::AntiPhase)
            .unwrap();
        let neg = ds
            .values
            .row(0)
            .iter()
            .zip(ds.values.row(anti))
            .filter(|(a, b)| *a * *b < 0.0)
            .count();
        assert!(neg > 840);
        let (again, _) = synth_mixed(7, 2, 960).unwrap();
        assert_eq!(again.values, ds.values);
        assert!(synth_mixed(7, 2, 100).is_err());
    }
}
