//! Time-series ingestion, windowing, normalization, and synthetic datasets.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor for degenerate normalization statistics.
pub const NORM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeSeries {
    pub id: String,
    pub values: Vec<f64>,
    /// Base seasonality, e.g. 24 for hourly data.
    pub period: usize,
    pub start_index: i64,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A fixed-length (past, future) slice of a source series.
#[derive(Debug, Clone)]
pub struct Window {
    pub past: Vec<f64>,
    pub future: Vec<f64>,
    pub series_id: String,
    /// Offset of the first past element within the source series.
    pub offset: usize,
}

impl Window {
    /// Past and future concatenated into the full window of length C+P.
    pub fn full(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.past.len() + self.future.len());
        v.extend_from_slice(&self.past);
        v.extend_from_slice(&self.future);
        v
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub series: Vec<TimeSeries>,
    pub context_len: usize,
    pub pred_len: usize,
    /// When true, the last P points of each series are reserved for test and
    /// the preceding P for validation; training windows stay clear of both.
    pub holdout: bool,
}

impl Dataset {
    pub fn period(&self) -> usize {
        self.series.first().map(|s| s.period).unwrap_or(1)
    }

    /// Length of the range available to the given split for one series.
    pub fn split_len(&self, series_len: usize, split: Split) -> usize {
        if !self.holdout {
            return series_len;
        }
        let p = self.pred_len;
        match split {
            Split::Train => series_len.saturating_sub(2 * p),
            Split::Val => series_len.saturating_sub(p),
            Split::Test => series_len,
        }
    }
}

/// Normalization statistics, invertible on any slice given its phase.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NormStats {
    MeanScale {
        scale: f64,
    },
    FreqZscore {
        means: Vec<f64>,
        stds: Vec<f64>,
    },
}

impl NormStats {
    /// Normalizes `values` whose first element sits at absolute index
    /// `start` of the fitted series (phase = start mod period).
    pub fn normalize_at(&self, values: &[f64], start: i64) -> Vec<f64> {
        match self {
            NormStats::MeanScale { scale } => values.iter().map(|v| v / scale).collect(),
            NormStats::FreqZscore { means, stds } => {
                let p = means.len() as i64;
                values
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let ph = (start + i as i64).rem_euclid(p) as usize;
                        (v - means[ph]) / stds[ph]
                    })
                    .collect()
            }
        }
    }

    pub fn denormalize_at(&self, values: &[f64], start: i64) -> Vec<f64> {
        match self {
            NormStats::MeanScale { scale } => values.iter().map(|v| v * scale).collect(),
            NormStats::FreqZscore { means, stds } => {
                let p = means.len() as i64;
                values
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let ph = (start + i as i64).rem_euclid(p) as usize;
                        v * stds[ph] + means[ph]
                    })
                    .collect()
            }
        }
    }
}

/// Scales a series by the mean of its history, floored at `NORM_FLOOR`.
pub fn mean_scale(series: &[f64], hist: &[f64]) -> (Vec<f64>, NormStats) {
    let mean = if hist.is_empty() {
        0.0
    } else {
        hist.iter().sum::<f64>() / hist.len() as f64
    };
    let scale = mean.abs().max(NORM_FLOOR);
    let out = series.iter().map(|v| v / scale).collect();
    (out, NormStats::MeanScale { scale })
}

/// Per-phase z-score normalization: indices congruent mod `period` share
/// statistics. Constant phases get their std floored at `NORM_FLOOR`.
pub fn freq_zscore(series: &[f64], period: usize) -> Result<(Vec<f64>, NormStats)> {
    if period == 0 {
        return Err(Error::Config("period must be >= 1".into()));
    }
    if series.len() < 2 * period {
        return Err(Error::InsufficientData(format!(
            "freq_zscore needs length >= 2*period ({}), got {}",
            2 * period,
            series.len()
        )));
    }
    let mut means = vec![0.0; period];
    let mut counts = vec![0usize; period];
    for (i, v) in series.iter().enumerate() {
        means[i % period] += v;
        counts[i % period] += 1;
    }
    for (m, c) in means.iter_mut().zip(&counts) {
        *m /= *c as f64;
    }
    let mut stds = vec![0.0; period];
    for (i, v) in series.iter().enumerate() {
        let d = v - means[i % period];
        stds[i % period] += d * d;
    }
    for (s, c) in stds.iter_mut().zip(&counts) {
        *s = (*s / *c as f64).sqrt();
        if *s < NORM_FLOOR {
            *s = NORM_FLOOR;
        }
    }
    let stats = NormStats::FreqZscore { means, stds };
    let out = stats.normalize_at(series, 0);
    Ok((out, stats))
}

/// Closed-form window start offsets for a range of length `len`.
pub fn window_offsets(len: usize, context_len: usize, pred_len: usize, stride: usize) -> Vec<usize> {
    let w = context_len + pred_len;
    if stride == 0 || len < w {
        return Vec::new();
    }
    (0..=(len - w)).step_by(stride).collect()
}

/// Enumerates windows for the given split. Train windows slide over the
/// training range; val and test yield one rolling-origin window per series
/// whose future block is the reserved segment.
pub fn make_windows(dataset: &Dataset, stride: usize, split: Split) -> Result<Vec<Window>> {
    if stride == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    let c = dataset.context_len;
    let p = dataset.pred_len;
    let mut out = Vec::new();
    for s in &dataset.series {
        let n = s.len();
        match split {
            Split::Train => {
                let range = dataset.split_len(n, Split::Train);
                for off in window_offsets(range, c, p, stride) {
                    out.push(slice_window(s, off, c, p));
                }
            }
            Split::Val | Split::Test => {
                if !dataset.holdout {
                    continue;
                }
                let end = if split == Split::Val { n - p } else { n };
                if end >= c + p {
                    out.push(slice_window(s, end - c - p, c, p));
                }
            }
        }
    }
    Ok(out)
}

fn slice_window(s: &TimeSeries, offset: usize, c: usize, p: usize) -> Window {
    Window {
        past: s.values[offset..offset + c].to_vec(),
        future: s.values[offset + c..offset + c + p].to_vec(),
        series_id: s.id.clone(),
        offset,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FileFormat {
    Csv,
    Jsonl,
}

/// Loads a dataset from CSV (`id,timestamp_index,value`) or JSONL (one
/// object per series). Series shorter than C+3P are rejected.
pub fn load_dataset(
    path: &Path,
    format: FileFormat,
    period: usize,
    context_len: usize,
    pred_len: usize,
) -> Result<Dataset> {
    if period == 0 {
        return Err(Error::Config("period must be >= 1".into()));
    }
    let series = match format {
        FileFormat::Csv => load_csv(path)?,
        FileFormat::Jsonl => load_jsonl(path)?,
    };
    finish_dataset(series, period, context_len, pred_len)
}

fn finish_dataset(
    mut series: Vec<TimeSeries>,
    period: usize,
    context_len: usize,
    pred_len: usize,
) -> Result<Dataset> {
    if series.is_empty() {
        return Err(Error::InsufficientData("no series found".into()));
    }
    let required = context_len + 3 * pred_len;
    for s in series.iter_mut() {
        s.period = period;
        if s.len() < required {
            return Err(Error::SeriesTooShort {
                id: s.id.clone(),
                len: s.len(),
                required,
            });
        }
        for (i, v) in s.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidValue {
                    id: s.id.clone(),
                    index: i,
                    msg: "non-finite value".into(),
                });
            }
        }
    }
    Ok(Dataset {
        series,
        context_len,
        pred_len,
        holdout: true,
    })
}

fn load_csv(path: &Path) -> Result<Vec<TimeSeries>> {
    let file = File::open(path)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let mut series: Vec<TimeSeries> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2; // 1-based, after header
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if rec.len() != 3 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 3 columns, got {}", rec.len()),
            });
        }
        let id = rec[0].to_string();
        let idx: i64 = rec[1].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad timestamp_index '{}'", &rec[1]),
        })?;
        let value: f64 = rec[2].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad value '{}'", &rec[2]),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                line,
                msg: format!("non-finite value '{}'", &rec[2]),
            });
        }
        match series.last_mut() {
            Some(last) if last.id == id => {
                let expected = last.start_index + last.values.len() as i64;
                if idx != expected {
                    return Err(Error::Parse {
                        line,
                        msg: format!(
                            "series '{}' indices not contiguous: expected {}, got {}",
                            id, expected, idx
                        ),
                    });
                }
                last.values.push(value);
            }
            _ => series.push(TimeSeries {
                id,
                values: vec![value],
                period: 1,
                start_index: idx,
            }),
        }
    }
    Ok(series)
}

#[derive(Deserialize)]
struct JsonlSeries {
    id: String,
    values: Vec<f64>,
    #[serde(default)]
    start_index: i64,
}

fn load_jsonl(path: &Path) -> Result<Vec<TimeSeries>> {
    let file = File::open(path)?;
    let rdr = BufReader::new(file);
    let mut series = Vec::new();
    for (i, line) in rdr.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: JsonlSeries = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        series.push(TimeSeries {
            id: s.id,
            values: s.values,
            period: 1,
            start_index: s.start_index,
        });
    }
    Ok(series)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    SineMix,
    Ar1,
    OuPath,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n_series: usize,
    pub length: usize,
    pub period: usize,
    pub noise_std: f64,
    pub seed: u64,
}

/// AR(1) coefficient used by the `ar1` generator.
pub const AR1_COEFF: f64 = 0.9;

/// Deterministic synthetic dataset generator (seeded).
pub fn gen_synthetic(
    spec: &SyntheticSpec,
    context_len: usize,
    pred_len: usize,
) -> Result<Dataset> {
    if spec.period == 0 {
        return Err(Error::Config("period must be >= 1".into()));
    }
    if spec.length < context_len + 3 * pred_len {
        return Err(Error::Config(format!(
            "length {} < C+3P = {}",
            spec.length,
            context_len + 3 * pred_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let p = spec.period;
    let mut series = Vec::with_capacity(spec.n_series);
    for k in 0..spec.n_series {
        let values = match spec.kind {
            SyntheticKind::SineMix => {
                let phi1: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
                let phi2: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
                // Temporally correlated Gaussian noise (unit-variance AR(1)
                // with the same kernel-matched coefficient as ou-path), the
                // texture of measurement series rather than white static.
                let a = (-std::f64::consts::PI / p as f64).exp();
                let innov = (1.0 - a * a).sqrt();
                let mut noise: f64 = rng.sample(StandardNormal);
                (0..spec.length)
                    .map(|t| {
                        // Phase reduced before the float conversion so the
                        // noiseless signal is exactly periodic.
                        let ph = (t % p) as f64 / p as f64;
                        let base = 2.0
                            + (std::f64::consts::TAU * ph + phi1).sin()
                            + 0.3 * (2.0 * std::f64::consts::TAU * ph + phi2).sin();
                        let out = base + spec.noise_std * noise;
                        let z: f64 = rng.sample(StandardNormal);
                        noise = a * noise + innov * z;
                        out
                    })
                    .collect()
            }
            SyntheticKind::Ar1 => {
                let sigma = spec.noise_std;
                let stat = sigma / (1.0 - AR1_COEFF * AR1_COEFF).sqrt();
                let mut x: f64 = {
                    let z: f64 = rng.sample(StandardNormal);
                    stat * z
                };
                (0..spec.length)
                    .map(|_| {
                        let out = x;
                        let z: f64 = rng.sample(StandardNormal);
                        x = AR1_COEFF * x + sigma * z;
                        out
                    })
                    .collect()
            }
            SyntheticKind::OuPath => {
                // Discretized OU process matching the OU kernel with l=1 at
                // normalized spacing pi/p; unit stationary variance.
                let a = (-std::f64::consts::PI / p as f64).exp();
                let innov = (1.0 - a * a).sqrt();
                let mut x: f64 = rng.sample(StandardNormal);
                (0..spec.length)
                    .map(|_| {
                        let z: f64 = rng.sample(StandardNormal);
                        let n: f64 = rng.sample(StandardNormal);
                        let out = x + spec.noise_std * n;
                        x = a * x + innov * z;
                        out
                    })
                    .collect()
            }
        };
        series.push(TimeSeries {
            id: format!("synthetic-{k}"),
            values,
            period: p,
            start_index: 0,
        });
    }
    Ok(Dataset {
        series,
        context_len,
        pred_len,
        holdout: true,
    })
}

/// Sample autocorrelation at the given lag: Pearson correlation between
/// the series and its lagged copy over the overlapping range.
pub fn autocorrelation(values: &[f64], lag: usize) -> f64 {
    let n = values.len() - lag;
    let a = &values[..n];
    let b = &values[lag..];
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..n {
        num += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma).powi(2);
        vb += (b[i] - mb).powi(2);
    }
    num / (va.sqrt() * vb.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::io::Write;

    fn raw_dataset(values: Vec<f64>, c: usize, p: usize) -> Dataset {
        Dataset {
            series: vec![TimeSeries {
                id: "s0".into(),
                values,
                period: 24,
                start_index: 0,
            }],
            context_len: c,
            pred_len: p,
            holdout: false,
        }
    }

    #[test]
    fn mean_scale_direct_division() {
        let (out, stats) = mean_scale(&[2.0, 4.0], &[1.0, 3.0]);
        assert_eq!(out, vec![1.0, 2.0]);
        match stats {
            NormStats::MeanScale { scale } => assert_eq!(scale, 2.0),
            _ => panic!(),
        }
    }

    #[test]
    fn mean_scale_zero_series() {
        let (out, _) = mean_scale(&[0.0, 0.0], &[5.0, 5.0]);
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn mean_scale_degenerate_hist_floored() {
        let (out, stats) = mean_scale(&[1.0, -1.0], &[0.0, 0.0]);
        assert!(out.iter().all(|v| v.is_finite()));
        match stats {
            NormStats::MeanScale { scale } => assert_eq!(scale, NORM_FLOOR),
            _ => panic!(),
        }
    }

    #[test]
    fn mean_scale_round_trip() {
        let series = vec![1.5, -2.25, 0.125, 7.75];
        let (out, stats) = mean_scale(&series, &[2.0, 6.0]);
        let back = stats.denormalize_at(&out, 0);
        for (a, b) in series.iter().zip(&back) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn freq_zscore_constant_phases() {
        let (out, _) = freq_zscore(&[1.0, 3.0, 1.0, 3.0], 2).unwrap();
        assert_eq!(out, vec![0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn freq_zscore_hand_computed() {
        let (out, stats) = freq_zscore(&[0.0, 10.0, 2.0, 12.0], 2).unwrap();
        assert_eq!(out, vec![-1.0, -1.0, 1.0, 1.0]);
        match &stats {
            NormStats::FreqZscore { means, stds } => {
                assert_eq!(means, &vec![1.0, 11.0]);
                assert_eq!(stds, &vec![1.0, 1.0]);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn freq_zscore_fitted_range_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let series: Vec<f64> = (0..240)
            .map(|t| (t % 24) as f64 + 3.0 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let (out, _) = freq_zscore(&series, 24).unwrap();
        for ph in 0..24 {
            let vals: Vec<f64> = out.iter().skip(ph).step_by(24).copied().collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let s = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            assert!(m.abs() < 1e-10);
            assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn freq_zscore_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let series: Vec<f64> = (0..48).map(|_| rng.gen::<f64>() * 10.0 - 5.0).collect();
        let (out, stats) = freq_zscore(&series, 4).unwrap();
        let back = stats.denormalize_at(&out, 0);
        for (a, b) in series.iter().zip(&back) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn window_count_exact() {
        let ds = raw_dataset(vec![0.0; 48], 24, 24);
        let w = make_windows(&ds, 1, Split::Train).unwrap();
        assert_eq!(w.len(), 1);

        let ds = raw_dataset(vec![0.0; 50], 24, 24);
        let w = make_windows(&ds, 1, Split::Train).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(
            w.iter().map(|x| x.offset).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn window_count_closed_form() {
        for (len, c, p, stride) in [(100, 10, 5, 1), (100, 10, 5, 7), (37, 8, 8, 3)] {
            let ds = raw_dataset(vec![0.0; len], c, p);
            let w = make_windows(&ds, stride, Split::Train).unwrap();
            assert_eq!(w.len(), (len - c - p) / stride + 1);
            for win in &w {
                assert!(win.offset + c + p <= len);
            }
        }
    }

    #[test]
    fn stride_zero_rejected() {
        let ds = raw_dataset(vec![0.0; 48], 24, 24);
        assert!(make_windows(&ds, 0, Split::Train).is_err());
    }

    #[test]
    fn windows_are_contiguous_slices() {
        let values: Vec<f64> = (0..60).map(|v| v as f64).collect();
        let ds = raw_dataset(values.clone(), 24, 24);
        for w in make_windows(&ds, 1, Split::Train).unwrap() {
            assert_eq!(w.full(), values[w.offset..w.offset + 48].to_vec());
        }
    }

    #[test]
    fn holdout_splits_disjoint() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::SineMix,
            n_series: 2,
            length: 200,
            period: 24,
            noise_std: 0.1,
            seed: 1,
        };
        let ds = gen_synthetic(&spec, 24, 24).unwrap();
        let train = make_windows(&ds, 1, Split::Train).unwrap();
        let val = make_windows(&ds, 1, Split::Val).unwrap();
        let test = make_windows(&ds, 1, Split::Test).unwrap();
        assert_eq!(val.len(), 2);
        assert_eq!(test.len(), 2);
        let train_end = 200 - 48;
        for w in &train {
            assert!(w.offset + 48 <= train_end);
        }
        for w in &val {
            assert_eq!(w.offset + 24, 200 - 48); // future occupies [152, 176)
        }
        for w in &test {
            assert_eq!(w.offset + 24, 200 - 24);
        }
    }

    #[test]
    fn synthetic_deterministic() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::Ar1,
            n_series: 3,
            length: 150,
            period: 24,
            noise_std: 1.0,
            seed: 42,
        };
        let a = gen_synthetic(&spec, 24, 24).unwrap();
        let b = gen_synthetic(&spec, 24, 24).unwrap();
        for (x, y) in a.series.iter().zip(&b.series) {
            assert_eq!(x.values, y.values);
        }
    }

    #[test]
    fn sine_mix_noiseless_periodic() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::SineMix,
            n_series: 1,
            length: 480,
            period: 24,
            noise_std: 0.0,
            seed: 5,
        };
        let ds = gen_synthetic(&spec, 24, 24).unwrap();
        let ac = autocorrelation(&ds.series[0].values, 24);
        assert!((ac - 1.0).abs() < 1e-9, "lag-p autocorrelation {ac}");
    }

    #[test]
    fn ar1_lag1_autocorrelation() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::Ar1,
            n_series: 1,
            length: 100_000,
            period: 24,
            noise_std: 1.0,
            seed: 11,
        };
        let ds = gen_synthetic(&spec, 24, 24).unwrap();
        let ac = autocorrelation(&ds.series[0].values, 1);
        assert!((ac - AR1_COEFF).abs() < 0.02, "lag-1 autocorrelation {ac}");
    }

    #[test]
    fn unknown_short_series_rejected() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::SineMix,
            n_series: 1,
            length: 90,
            period: 24,
            noise_std: 0.0,
            seed: 0,
        };
        assert!(gen_synthetic(&spec, 24, 24).is_err());
    }

    #[test]
    fn csv_round_trip_and_short_series() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let mut f = File::create(&path).unwrap();
        writeln!(f, "id,timestamp_index,value").unwrap();
        for t in 0..100 {
            writeln!(f, "a,{},{}", t, t as f64 * 0.5).unwrap();
        }
        drop(f);
        let ds = load_dataset(&path, FileFormat::Csv, 24, 24, 24).unwrap();
        assert_eq!(ds.series.len(), 1);
        assert_eq!(ds.series[0].len(), 100);

        // Length 90 < C+3P = 96 must fail.
        let path2 = dir.path().join("short.csv");
        let mut f = File::create(&path2).unwrap();
        writeln!(f, "id,timestamp_index,value").unwrap();
        for t in 0..90 {
            writeln!(f, "a,{},{}", t, t as f64).unwrap();
        }
        drop(f);
        let err = load_dataset(&path2, FileFormat::Csv, 24, 24, 24).unwrap_err();
        assert!(matches!(err, Error::SeriesTooShort { .. }), "{err}");
    }

    #[test]
    fn csv_nan_rejected_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.csv");
        let mut f = File::create(&path).unwrap();
        writeln!(f, "id,timestamp_index,value").unwrap();
        for t in 0..10 {
            if t == 5 {
                writeln!(f, "a,{},NaN", t).unwrap();
            } else {
                writeln!(f, "a,{},{}", t, t).unwrap();
            }
        }
        drop(f);
        match load_dataset(&path, FileFormat::Csv, 24, 2, 2).unwrap_err() {
            Error::Parse { line, msg } => {
                assert_eq!(line, 7); // header + rows 0..=5
                assert!(msg.contains("NaN"));
            }
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn jsonl_two_series() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let mut f = File::create(&path).unwrap();
        let vals: Vec<f64> = (0..100).map(|v| v as f64).collect();
        for id in ["a", "b"] {
            writeln!(
                f,
                "{}",
                serde_json::json!({"id": id, "values": vals})
            )
            .unwrap();
        }
        drop(f);
        let ds = load_dataset(&path, FileFormat::Jsonl, 24, 24, 24).unwrap();
        assert_eq!(ds.series.len(), 2);
        assert!(ds.series.iter().all(|s| s.period == 24));
    }
}
