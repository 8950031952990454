//! Evaluation: pinball loss, CRPS, Linear Predictive Score, and the
//! prior/data Wasserstein study.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{make_windows, Dataset, Split, Window};
use crate::error::{Error, Result};
use crate::gp::{build_cov, gp_sample_with, normalize_times, KernelSpec};
use crate::ot;

/// The nine quantile levels used throughout.
pub const QUANTILE_LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Pinball loss (kappa - 1{y < q})(y - q).
pub fn pinball(q: f64, y: f64, kappa: f64) -> f64 {
    let ind = if y < q { 1.0 } else { 0.0 };
    (kappa - ind) * (y - q)
}

/// Per-horizon quantiles at the nine levels, non-decreasing across levels.
#[derive(Debug, Clone, Serialize)]
pub struct QuantileForecast {
    pub levels: Vec<f64>,
    /// quantiles[k][h] = level-k quantile at horizon h.
    pub quantiles: Vec<Vec<f64>>,
}

/// Empirical quantiles by linear interpolation (type-7) over the sample
/// axis; crossing quantiles are sorted per horizon.
pub fn quantiles_from_samples(samples: &[Vec<f64>]) -> Result<QuantileForecast> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no forecast samples".into()));
    }
    let p = samples[0].len();
    let s = samples.len();
    let mut quantiles = vec![vec![0.0; p]; QUANTILE_LEVELS.len()];
    let mut col = vec![0.0; s];
    for h in 0..p {
        for (i, row) in samples.iter().enumerate() {
            col[i] = row[h];
        }
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (k, &level) in QUANTILE_LEVELS.iter().enumerate() {
            let pos = level * (s - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            quantiles[k][h] = col[lo] * (1.0 - frac) + col[hi] * frac;
        }
        // Sorting per horizon enforces monotonicity across levels.
        let mut vals: Vec<f64> = quantiles.iter().map(|row| row[h]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (k, v) in vals.into_iter().enumerate() {
            quantiles[k][h] = v;
        }
    }
    Ok(QuantileForecast {
        levels: QUANTILE_LEVELS.to_vec(),
        quantiles,
    })
}

/// Mean over the nine levels and the horizon of 2 * pinball.
pub fn crps_quantiles(qf: &QuantileForecast, y: &[f64]) -> Result<f64> {
    let p = y.len();
    if qf.quantiles.iter().any(|row| row.len() != p) {
        return Err(Error::ShapeMismatch {
            expected: format!("quantile rows of length {p}"),
            got: "mismatched horizon".into(),
        });
    }
    let mut acc = 0.0;
    for (k, &kappa) in qf.levels.iter().enumerate() {
        for (h, &yh) in y.iter().enumerate() {
            acc += 2.0 * pinball(qf.quantiles[k][h], yh, kappa);
        }
    }
    Ok(acc / (qf.levels.len() * p) as f64)
}

/// CRPS of a sample-based forecast against the realized future.
pub fn crps_samples(samples: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    let qf = quantiles_from_samples(samples)?;
    crps_quantiles(&qf, y)
}

/// Dataset-level accumulator for the mean weighted quantile loss
/// convention: sum of 2 * pinball over all points divided by sum |y|.
#[derive(Debug, Default, Clone)]
pub struct CrpsAccumulator {
    pub loss_sum: f64,
    pub abs_sum: f64,
    pub n_points: usize,
}

impl CrpsAccumulator {
    pub fn add(&mut self, qf: &QuantileForecast, y: &[f64]) {
        for (k, &kappa) in qf.levels.iter().enumerate() {
            for (h, &yv) in y.iter().enumerate() {
                self.loss_sum += 2.0 * pinball(qf.quantiles[k][h], yv, kappa);
            }
        }
        self.abs_sum += y.iter().map(|v| v.abs()).sum::<f64>();
        self.n_points += y.len() * qf.levels.len();
    }

    /// Normalized score; falls back to the per-point mean when sum |y| = 0.
    pub fn weighted(&self) -> f64 {
        if self.abs_sum > 0.0 {
            self.loss_sum / (self.abs_sum * QUANTILE_LEVELS.len() as f64)
        } else {
            self.mean()
        }
    }

    pub fn mean(&self) -> f64 {
        if self.n_points == 0 {
            0.0
        } else {
            self.loss_sum / self.n_points as f64
        }
    }
}

const LPS_RIDGE: f64 = 1e-6;

/// Linear Predictive Score: CRPS on real test windows of an ordinary
/// least squares past->future regressor fitted on synthetic windows.
pub fn lps(synthetic: &[Window], real_test: &[Window]) -> Result<f64> {
    if synthetic.is_empty() || real_test.is_empty() {
        return Err(Error::InsufficientData("lps needs nonempty window sets".into()));
    }
    let c = synthetic[0].past.len();
    let p = synthetic[0].future.len();
    let n = synthetic.len();
    // Design matrix with an intercept column.
    let x = DMatrix::from_fn(n, c + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            synthetic[i].past[j - 1]
        }
    });
    let y = DMatrix::from_fn(n, p, |i, j| synthetic[i].future[j]);
    let mut gram = x.transpose() * &x;
    for i in 0..c + 1 {
        gram[(i, i)] += LPS_RIDGE;
    }
    let chol = nalgebra::Cholesky::new(gram)
        .ok_or(Error::NotPositiveDefinite { jitter: LPS_RIDGE })?;
    let beta = chol.solve(&(x.transpose() * &y)); // (C+1) x P

    let mut acc = 0.0;
    let mut count = 0usize;
    for w in real_test {
        if w.past.len() != c || w.future.len() != p {
            return Err(Error::ShapeMismatch {
                expected: format!("windows of shape ({c}, {p})"),
                got: format!("({}, {})", w.past.len(), w.future.len()),
            });
        }
        let feat = DVector::from_fn(c + 1, |i, _| if i == 0 { 1.0 } else { w.past[i - 1] });
        let pred = beta.transpose() * feat;
        // A point forecast's nine quantiles coincide.
        for h in 0..p {
            for &kappa in QUANTILE_LEVELS.iter() {
                acc += 2.0 * pinball(pred[h], w.future[h], kappa);
            }
            count += QUANTILE_LEVELS.len();
        }
    }
    Ok(acc / count as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyRow {
    pub kernel: String,
    pub multiple: usize,
    /// Mean optimal-coupling cost relative to the random-coupling cost.
    pub ratio: f64,
}

/// Relative mini-batch Wasserstein distances between GP-prior batches and
/// data batches, across window lengths L = multiple * period.
pub fn wasserstein_study(
    dataset: &Dataset,
    kernels: &[KernelSpec],
    multiples: &[usize],
    batch: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<StudyRow>> {
    let period = dataset.period();
    // Per-series global standardization over the train range so prior and
    // data live on comparable scales.
    let mut standardized: Vec<Vec<f64>> = Vec::new();
    for s in &dataset.series {
        let range = dataset.split_len(s.len(), Split::Train);
        let vals = &s.values[..range];
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64)
            .sqrt()
            .max(1e-8);
        standardized.push(vals.iter().map(|v| (v - m) / sd).collect());
    }

    let mut out = Vec::new();
    for spec in kernels {
        for &m in multiples {
            let len = m * period;
            let offsets: Vec<(usize, usize)> = standardized
                .iter()
                .enumerate()
                .flat_map(|(si, vals)| {
                    (0..vals.len().saturating_sub(len).saturating_add(
                        if vals.len() >= len { 1 } else { 0 },
                    ))
                        .map(move |off| (si, off))
                })
                .collect();
            if offsets.len() < batch {
                return Err(Error::InsufficientData(format!(
                    "only {} windows of length {len} available, need {batch}",
                    offsets.len()
                )));
            }
            let times = normalize_times(&(0..len as i64).collect::<Vec<_>>(), period);
            let cov = build_cov(spec, &times)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ratio_acc = 0.0;
            for _ in 0..trials {
                let prior = gp_sample_with(&cov, batch, &mut rng);
                let mut data = DMatrix::zeros(batch, len);
                for b in 0..batch {
                    let (si, off) = offsets[rng.gen_range(0..offsets.len())];
                    for j in 0..len {
                        data[(b, j)] = standardized[si][off + j];
                    }
                }
                let cm = ot::cost_matrix(&prior, &data)?;
                let opt = ot::assign(&cm)?.total_cost / batch as f64;
                let base = ot::random_coupling_cost(&cm);
                ratio_acc += opt / base;
            }
            out.push(StudyRow {
                kernel: kernel_name(spec),
                multiple: m,
                ratio: ratio_acc / trials as f64,
            });
        }
    }
    Ok(out)
}

pub fn kernel_name(spec: &KernelSpec) -> String {
    use crate::gp::KernelKind::*;
    match spec.kind {
        Isotropic => "isotropic".into(),
        SquaredExponential => "se".into(),
        OrnsteinUhlenbeck => "ou".into(),
        Periodic => "pe".into(),
    }
}

/// Seasonal-naive point forecast: repeats the last observed season.
pub fn seasonal_naive(past: &[f64], period: usize, horizon: usize) -> Vec<f64> {
    let c = past.len();
    let season = period.min(c);
    (0..horizon)
        .map(|h| past[c - season + (h % season)])
        .collect()
}

/// CRPS of a point forecast (all nine quantiles coincide).
pub fn crps_point(pred: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (q, yv) in pred.iter().zip(y) {
        for &kappa in QUANTILE_LEVELS.iter() {
            acc += 2.0 * pinball(*q, *yv, kappa);
        }
    }
    acc / (pred.len() * QUANTILE_LEVELS.len()) as f64
}

/// Windows drawn for training/eval studies; helper shared with the CLI.
pub fn split_windows(dataset: &Dataset, split: Split) -> Result<Vec<Window>> {
    make_windows(dataset, 1, split)
}
