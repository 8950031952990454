//! Conditional-flow-matching training: probability-path sampling, the
//! regression loss, and the unconditional / conditional training loops.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{make_windows, mean_scale, freq_zscore, Dataset, NormStats, Split};
use crate::error::{Error, Result};
use crate::gp::{build_cov, gpr_operator, normalize_times, KernelKind, KernelSpec};
use crate::metrics::crps_samples;
use crate::net::{
    backward_batch, BatchItem, ModelConfig, OptimState, Params, VectorFieldModel,
};
use crate::ot::{assign, cost_matrix};
use crate::sampling::{condition_vector, forecast, ForecastInputs, ForecastMode, SamplerConfig};

/// How prior draws are paired with data draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    /// Identity pairing of independent batches.
    Independent,
    /// Mini-batch optimal-transport assignment (unconditional training).
    OptimalTransport,
    /// GP-regression conditional prior (conditional training).
    Gpr,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub sigma_min: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub seed: u64,
    pub prior: KernelSpec,
    pub coupling: Coupling,
    /// Conditional training: validation cadence in epochs.
    pub val_every: usize,
    /// Conditional training: forecast samples per validation window.
    pub val_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sigma_min: 1e-4,
            batch_size: 64,
            epochs: 400,
            batches_per_epoch: 128,
            seed: 0,
            prior: KernelSpec::default_for(KernelKind::Isotropic),
            coupling: Coupling::OptimalTransport,
            val_every: 10,
            val_samples: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_min <= 0.0 {
            return Err(Error::Config("sigma_min must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.coupling == Coupling::OptimalTransport && self.batch_size < 2 {
            return Err(Error::Config(
                "optimal-transport coupling needs batch_size >= 2".into(),
            ));
        }
        if self.batches_per_epoch == 0 {
            return Err(Error::Config("batches_per_epoch must be >= 1".into()));
        }
        self.prior.validate()
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_crps: Option<f64>,
}

/// A finished training run: the model (EMA set to the best validation
/// snapshot when validation ran), the optimizer state, and the epoch log.
pub struct TrainResult {
    pub model: VectorFieldModel,
    pub opt: OptimState,
    pub logs: Vec<EpochLog>,
}

/// Draws a probability-path point x_t = t x1 + (1-t) x0 + sigma_min z.
pub fn sample_path_point<R: Rng>(
    x0: &DVector<f64>,
    x1: &DVector<f64>,
    t: f64,
    sigma_min: f64,
    rng: &mut R,
) -> DVector<f64> {
    DVector::from_fn(x0.len(), |i, _| {
        let z: f64 = rng.sample(StandardNormal);
        t * x1[i] + (1.0 - t) * x0[i] + sigma_min * z
    })
}

/// One training example before path sampling.
pub struct PathPair {
    pub x0: DVector<f64>,
    pub x1: DVector<f64>,
    pub c: Option<DVector<f64>>,
}

/// Loss and parameter gradients of one mini batch: each example draws its
/// own t ~ U[0,1] and path point, then regresses the field onto x1 - x0.
pub fn cfm_loss_batch<R: Rng>(
    model: &VectorFieldModel,
    pairs: &[PathPair],
    sigma_min: f64,
    rng: &mut R,
) -> Result<(f64, Params)> {
    let mut staged = Vec::with_capacity(pairs.len());
    for p in pairs {
        if p.x0.len() != p.x1.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{}", p.x0.len()),
                got: format!("{}", p.x1.len()),
            });
        }
        let t: f64 = rng.gen();
        let xt = sample_path_point(&p.x0, &p.x1, t, sigma_min, rng);
        let target = &p.x1 - &p.x0;
        staged.push((t, xt, p.c.clone(), target));
    }
    let items: Vec<BatchItem<'_>> = staged
        .iter()
        .map(|(t, xt, c, target)| BatchItem {
            t: *t,
            x: xt,
            c: c.as_ref(),
            target,
        })
        .collect();
    backward_batch(model, &items)
}

/// Trains the unconditional model (whole windows as sequences) with a GP
/// prior and optimal-transport or independent coupling.
pub fn train_uncond(
    dataset: &Dataset,
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    if model_cfg.conditional {
        return Err(Error::Config(
            "train_uncond needs an unconditional model".into(),
        ));
    }
    if cfg.coupling == Coupling::Gpr {
        return Err(Error::Config(
            "gpr coupling belongs to conditional training".into(),
        ));
    }
    let l = dataset.context_len + dataset.pred_len;
    if model_cfg.input_len != l {
        return Err(Error::ShapeMismatch {
            expected: format!("input_len {l}"),
            got: format!("{}", model_cfg.input_len),
        });
    }
    let windows = make_windows(dataset, 1, Split::Train)?;
    if windows.is_empty() {
        return Err(Error::InsufficientData("no training windows".into()));
    }
    // Mean-scale each window by its context block, matching inference where
    // only the context is observed.
    let data: Vec<DVector<f64>> = windows
        .iter()
        .map(|w| {
            let (v, _) = mean_scale(&w.full(), &w.past);
            DVector::from_vec(v)
        })
        .collect();

    let times = normalize_times(&(0..l as i64).collect::<Vec<_>>(), dataset.period());
    let cov = build_cov(&cfg.prior, &times)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = VectorFieldModel::new(model_cfg, cfg.seed);
    let mut opt = OptimState::new(&model.params);
    let mut logs = Vec::with_capacity(cfg.epochs);
    let b = cfg.batch_size;
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        for _ in 0..cfg.batches_per_epoch {
            let idx: Vec<usize> = (0..b).map(|_| rng.gen_range(0..data.len())).collect();
            let x1 = DMatrix::from_fn(b, l, |i, j| data[idx[i]][j]);
            let x0 = crate::gp::gp_sample_with(&cov, b, &mut rng);
            let perm: Vec<usize> = match cfg.coupling {
                Coupling::OptimalTransport => assign(&cost_matrix(&x0, &x1)?)?.perm,
                _ => (0..b).collect(),
            };
            let pairs: Vec<PathPair> = (0..b)
                .map(|i| PathPair {
                    x0: DVector::from_fn(l, |j, _| x0[(i, j)]),
                    x1: DVector::from_fn(l, |j, _| x1[(perm[i], j)]),
                    c: None,
                })
                .collect();
            let (loss, mut grads) = cfm_loss_batch(&model, &pairs, cfg.sigma_min, &mut rng)?;
            crate::net::opt_step(&mut model, &mut opt, &mut grads)?;
            loss_sum += loss;
        }
        logs.push(EpochLog {
            epoch,
            loss: loss_sum / cfg.batches_per_epoch as f64,
            val_crps: None,
        });
    }
    Ok(TrainResult { model, opt, logs })
}

/// Per-series frequency z-score statistics fitted on the training range
/// only, keyed by series id; phase-aligned to absolute indices.
pub fn series_norm_stats(dataset: &Dataset) -> Result<HashMap<String, NormStats>> {
    let p = dataset.period();
    let mut out = HashMap::new();
    for s in &dataset.series {
        let train_len = dataset.split_len(s.len(), Split::Train);
        let (_, stats) = freq_zscore(&s.values[..train_len], p)?;
        let stats = match stats {
            NormStats::FreqZscore { means, stds } => {
                // The fit indexed phases from the slice start; rotate so the
                // tables are indexed by absolute phase.
                let rot = |v: &[f64]| -> Vec<f64> {
                    (0..p)
                        .map(|ph| {
                            let k = (ph as i64 - s.start_index).rem_euclid(p as i64) as usize;
                            v[k]
                        })
                        .collect()
                };
                NormStats::FreqZscore {
                    means: rot(&means),
                    stds: rot(&stds),
                }
            }
            other => other,
        };
        out.insert(s.id.clone(), stats);
    }
    Ok(out)
}

/// Trains the conditional model with the GP-regression conditional prior.
pub fn train_cond(
    dataset: &Dataset,
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    if !model_cfg.conditional {
        return Err(Error::Config("train_cond needs a conditional model".into()));
    }
    if cfg.coupling != Coupling::Gpr {
        return Err(Error::Config(
            "conditional training uses the gpr coupling".into(),
        ));
    }
    let c_len = dataset.context_len;
    let p_len = dataset.pred_len;
    let l = c_len + p_len;
    if model_cfg.input_len != l {
        return Err(Error::ShapeMismatch {
            expected: format!("input_len {l}"),
            got: format!("{}", model_cfg.input_len),
        });
    }

    let stats = series_norm_stats(dataset)?;
    let starts: HashMap<String, i64> = dataset
        .series
        .iter()
        .map(|s| (s.id.clone(), s.start_index))
        .collect();
    // Normalized copies of the series for window extraction.
    let mut norm_ds = dataset.clone();
    for s in norm_ds.series.iter_mut() {
        s.values = stats[&s.id].normalize_at(&s.values, s.start_index);
    }
    let windows = make_windows(&norm_ds, 1, Split::Train)?;
    if windows.is_empty() {
        return Err(Error::InsufficientData("no training windows".into()));
    }

    // All kernels are stationary in normalized time, so one conditioning
    // operator over the canonical layout serves every window.
    let period = dataset.period();
    let all: Vec<i64> = (0..l as i64).collect();
    let times = normalize_times(&all, period);
    let gpr = gpr_operator(&cfg.prior, &times[..c_len], &times[c_len..])?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = VectorFieldModel::new(model_cfg, cfg.seed);
    let mut opt = OptimState::new(&model.params);
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Params)> = None;
    let b = cfg.batch_size;
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        for _ in 0..cfg.batches_per_epoch {
            let idx: Vec<usize> = (0..b).map(|_| rng.gen_range(0..windows.len())).collect();
            let mut pairs = Vec::with_capacity(b);
            for &i in &idx {
                let w = &windows[i];
                let y = DVector::from_vec(w.full());
                let dist = gpr.condition(&DVector::from_column_slice(&w.past));
                let x0 = crate::gp::cond_prior_sample(&dist, &w.past, &mut rng);
                let c = condition_vector(&w.past, l);
                pairs.push(PathPair {
                    x0,
                    x1: y,
                    c: Some(c),
                });
            }
            let (loss, mut grads) = cfm_loss_batch(&model, &pairs, cfg.sigma_min, &mut rng)?;
            crate::net::opt_step(&mut model, &mut opt, &mut grads)?;
            loss_sum += loss;
        }
        let mut val_crps = None;
        let at_val = cfg.val_every > 0
            && ((epoch + 1) % cfg.val_every == 0 || epoch + 1 == cfg.epochs);
        if at_val && dataset.holdout {
            let score = validate_cond(&model, dataset, &stats, &starts, &gpr, cfg)?;
            val_crps = Some(score);
            if best.as_ref().is_none_or(|(b, _)| score < *b) {
                best = Some((score, model.ema.clone()));
            }
        }
        logs.push(EpochLog {
            epoch,
            loss: loss_sum / cfg.batches_per_epoch as f64,
            val_crps,
        });
    }
    // Inference uses the best validation snapshot of the EMA parameters.
    if let Some((_, ema)) = best {
        model.ema = ema;
    }
    Ok(TrainResult { model, opt, logs })
}

/// Mean validation-window CRPS via a small forecast (cheap proxy).
fn validate_cond(
    model: &VectorFieldModel,
    dataset: &Dataset,
    stats: &HashMap<String, NormStats>,
    starts: &HashMap<String, i64>,
    gpr: &crate::gp::GprOperator,
    cfg: &TrainConfig,
) -> Result<f64> {
    let val = make_windows(dataset, 1, Split::Val)?;
    if val.is_empty() {
        return Err(Error::InsufficientData("no validation windows".into()));
    }
    let scfg = SamplerConfig {
        seed: cfg.seed ^ 0x5a11,
        ..SamplerConfig::default()
    };
    let mut acc = 0.0;
    for w in &val {
        let st = &stats[&w.series_id];
        let abs = starts[&w.series_id] + w.offset as i64;
        let inp = ForecastInputs {
            model,
            y_p_norm: st.normalize_at(&w.past, abs),
            pred_len: w.future.len(),
            norm: st,
            start_index: abs,
        };
        let samples = forecast(&inp, &ForecastMode::CondDirect { gpr }, cfg.val_samples, &scfg)?;
        acc += crps_samples(&samples, &w.future)?;
    }
    Ok(acc / val.len() as f64)
}
