//! Command implementations: each validates first (writing nothing on
//! failure), then produces its artifacts plus a manifest.

use std::collections::BTreeMap;
use std::path::Path;

use clap::ValueEnum;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use tsflow_core::cfm::{series_norm_stats, train_cond, train_uncond, TrainResult};
use tsflow_core::data::{
    gen_synthetic, load_dataset, mean_scale, Dataset, Split, SyntheticSpec, Window,
};
use tsflow_core::gp::{build_cov, gp_sample_with, gpr_operator, normalize_times, KernelKind, KernelSpec};
use tsflow_core::metrics::{
    lps, quantiles_from_samples, split_windows, wasserstein_study, CrpsAccumulator,
    QUANTILE_LEVELS,
};
use tsflow_core::net::{load_checkpoint, save_checkpoint, VectorFieldModel};
use tsflow_core::ot::batch_w2;
use tsflow_core::sampling::{euler_integrate, forecast, ForecastInputs, ForecastMode};

use crate::artifacts::ArtifactWriter;
use crate::config::RunConfig;
use crate::CliError;

fn runtime(e: tsflow_core::error::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Forecast strategy: the conditional model's direct path, or conditional
/// prior sampling plus guidance on an unconditional model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    CondDirect,
    CpsGuided,
}

fn build_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let d = &cfg.dataset;
    if let Some(kind) = d.synthetic {
        gen_synthetic(
            &SyntheticSpec {
                kind,
                n_series: d.n_series,
                length: d.length,
                period: d.period,
                noise_std: d.noise_std,
                seed: cfg.seed,
            },
            d.context_len,
            d.pred_len,
        )
        .map_err(runtime)
    } else {
        let path = d.path.as_ref().expect("validated: path or synthetic set");
        load_dataset(path, d.resolved_format(), d.period, d.context_len, d.pred_len)
            .map_err(runtime)
    }
}

fn load_model(path: &Path) -> Result<VectorFieldModel, CliError> {
    let (model, _) = load_checkpoint(path).map_err(runtime)?;
    Ok(model)
}

/// `synth`: materialize the configured synthetic dataset as a loadable CSV.
pub fn cmd_synth(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.validate()?;
    if cfg.dataset.synthetic.is_none() {
        return Err(CliError::Validation(vec![
            "dataset.synthetic: synth requires a synthetic dataset section".into(),
        ]));
    }
    let ds = build_dataset(cfg)?;
    let mut writer = ArtifactWriter::new(&cfg.output_dir, "synth")?;
    let mut csv = String::from("id,timestamp_index,value\n");
    for s in &ds.series {
        for (i, v) in s.values.iter().enumerate() {
            csv.push_str(&format!("{},{},{}\n", s.id, s.start_index + i as i64, v));
        }
    }
    writer.write_string("dataset.csv", &csv)?;
    writer.finish()
}

/// `train`: fit the configured model and write checkpoint + log + snapshot.
pub fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.validate()?;
    let ds = build_dataset(cfg)?;
    let mcfg = cfg.model_config();
    let result: TrainResult = if cfg.model.conditional {
        train_cond(&ds, mcfg, &cfg.train).map_err(runtime)?
    } else {
        train_uncond(&ds, mcfg, &cfg.train).map_err(runtime)?
    };
    let mut writer = ArtifactWriter::new(&cfg.output_dir, "train")?;
    save_checkpoint(&result.model, &result.opt, &writer.path("checkpoint.bin"))
        .map_err(runtime)?;
    writer.add_existing("checkpoint.bin")?;
    let mut log = String::from("epoch,loss,val_crps\n");
    for row in &result.logs {
        let val = row.val_crps.map(|v| v.to_string()).unwrap_or_default();
        log.push_str(&format!("{},{},{}\n", row.epoch, row.loss, val));
    }
    writer.write_string("training_log.csv", &log)?;
    let resolved = toml::to_string_pretty(cfg)
        .map_err(|e| CliError::Runtime(format!("serializing resolved config: {e}")))?;
    writer.write_string("resolved_config.toml", &resolved)?;
    writer.finish()
}

#[derive(Serialize)]
struct WindowQuantiles {
    series_id: String,
    offset: usize,
    levels: Vec<f64>,
    /// `quantiles[k][h]`: level k, horizon step h.
    quantiles: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct CrpsReport {
    split: String,
    mode: String,
    n_windows: usize,
    n_samples: usize,
    crps_weighted: f64,
    crps_mean: f64,
}

/// `forecast`: sample futures for every window of the chosen split.
pub fn cmd_forecast(
    cfg: &RunConfig,
    checkpoint: &Path,
    split: SplitArg,
    n_samples: usize,
    mode: Option<ModeArg>,
) -> Result<(), CliError> {
    cfg.validate()?;
    if !checkpoint.exists() {
        return Err(CliError::Validation(vec![format!(
            "checkpoint: '{}' does not exist",
            checkpoint.display()
        )]));
    }
    let model = load_model(checkpoint)?;
    let mode = mode.unwrap_or(if model.cfg.conditional {
        ModeArg::CondDirect
    } else {
        ModeArg::CpsGuided
    });
    match mode {
        ModeArg::CondDirect if !model.cfg.conditional => {
            return Err(CliError::Validation(vec![
                "mode: cond-direct requires a conditional checkpoint".into(),
            ]))
        }
        ModeArg::CpsGuided if model.cfg.conditional => {
            return Err(CliError::Validation(vec![
                "mode: cps-guided requires an unconditional checkpoint".into(),
            ]))
        }
        _ => {}
    }
    let ds = build_dataset(cfg)?;
    let l = cfg.input_len();
    if model.cfg.input_len != l {
        return Err(CliError::Validation(vec![format!(
            "checkpoint: input_len {} does not match context_len + pred_len = {l}",
            model.cfg.input_len
        )]));
    }
    let windows = split_windows(&ds, split.into()).map_err(runtime)?;
    if windows.is_empty() {
        return Err(CliError::Runtime(format!(
            "no {:?} windows available",
            Split::from(split)
        )));
    }
    let starts: BTreeMap<String, i64> = ds
        .series
        .iter()
        .map(|s| (s.id.clone(), s.start_index))
        .collect();

    let c_len = ds.context_len;
    let times = normalize_times(&(0..l as i64).collect::<Vec<_>>(), ds.period());
    // Mode-specific machinery, built once.
    let stats;
    let gpr;
    let cov;
    match mode {
        ModeArg::CondDirect => {
            stats = Some(series_norm_stats(&ds).map_err(runtime)?);
            gpr = Some(gpr_operator(&cfg.prior, &times[..c_len], &times[c_len..]).map_err(runtime)?);
            cov = None;
        }
        ModeArg::CpsGuided => {
            stats = None;
            gpr = None;
            cov = Some(build_cov(&cfg.prior, &times).map_err(runtime)?);
        }
    }

    let mut csv = String::from("series_id,offset,sample_idx,h,value\n");
    let mut quantile_rows = Vec::with_capacity(windows.len());
    let mut acc = CrpsAccumulator::default();
    for w in &windows {
        let abs = starts[&w.series_id] + w.offset as i64;
        let samples = match mode {
            ModeArg::CondDirect => {
                let st = &stats.as_ref().unwrap()[&w.series_id];
                let inp = ForecastInputs {
                    model: &model,
                    y_p_norm: st.normalize_at(&w.past, abs),
                    pred_len: w.future.len(),
                    norm: st,
                    start_index: abs,
                };
                let mode = ForecastMode::CondDirect {
                    gpr: gpr.as_ref().unwrap(),
                };
                forecast(&inp, &mode, n_samples, &cfg.sampler).map_err(runtime)?
            }
            ModeArg::CpsGuided => {
                let (y_p_norm, st) = mean_scale(&w.past, &w.past);
                let inp = ForecastInputs {
                    model: &model,
                    y_p_norm,
                    pred_len: w.future.len(),
                    norm: &st,
                    start_index: abs,
                };
                let mode = ForecastMode::UncondCpsGuided {
                    prior: cov.as_ref().unwrap(),
                };
                forecast(&inp, &mode, n_samples, &cfg.sampler).map_err(runtime)?
            }
        };
        for (i, s) in samples.iter().enumerate() {
            for (h, v) in s.iter().enumerate() {
                csv.push_str(&format!("{},{},{},{},{}\n", w.series_id, w.offset, i, h, v));
            }
        }
        let qf = quantiles_from_samples(&samples).map_err(runtime)?;
        acc.add(&qf, &w.future);
        quantile_rows.push(WindowQuantiles {
            series_id: w.series_id.clone(),
            offset: w.offset,
            levels: qf.levels.clone(),
            quantiles: qf.quantiles.clone(),
        });
    }

    let report = CrpsReport {
        split: format!("{:?}", Split::from(split)).to_lowercase(),
        mode: format!("{mode:?}"),
        n_windows: windows.len(),
        n_samples,
        crps_weighted: acc.weighted(),
        crps_mean: acc.mean(),
    };
    let mut writer = ArtifactWriter::new(&cfg.output_dir, "forecast")?;
    writer.write_string("forecasts.csv", &csv)?;
    writer.write_json("quantiles.json", &quantile_rows)?;
    writer.write_json("crps_report.json", &report)?;
    writer.finish()
}

/// Draws `n` unconditional sequences in normalized space.
fn draw_uncond_samples(
    cfg: &RunConfig,
    model: &VectorFieldModel,
    n: usize,
) -> Result<Vec<Vec<f64>>, CliError> {
    let l = model.cfg.input_len;
    let times = normalize_times(&(0..l as i64).collect::<Vec<_>>(), cfg.dataset.period);
    let cov = build_cov(&cfg.prior, &times).map_err(runtime)?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // Per-sample derived seed, matching the forecast convention.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.sampler.seed ^ i as u64);
        let x0 = gp_sample_with(&cov, 1, &mut rng);
        let x0 = DVector::from_fn(l, |j, _| x0[(0, j)]);
        let x = euler_integrate(
            |t, x| model.forward_ema(t, x, None),
            &x0,
            cfg.sampler.ode_steps,
        )
        .map_err(runtime)?;
        out.push(x.iter().copied().collect());
    }
    Ok(out)
}

#[derive(Serialize)]
struct PlotData {
    levels: Vec<f64>,
    /// `quantiles[k][t]`: level k at position t, across all samples.
    quantiles: Vec<Vec<f64>>,
    n_samples: usize,
}

/// `sample`: unconditional generation in normalized space.
pub fn cmd_sample(cfg: &RunConfig, checkpoint: &Path, n: usize) -> Result<(), CliError> {
    cfg.validate()?;
    if !checkpoint.exists() {
        return Err(CliError::Validation(vec![format!(
            "checkpoint: '{}' does not exist",
            checkpoint.display()
        )]));
    }
    let model = load_model(checkpoint)?;
    if model.cfg.conditional {
        return Err(CliError::Validation(vec![
            "checkpoint: sample requires an unconditional checkpoint".into(),
        ]));
    }
    let samples = draw_uncond_samples(cfg, &model, n)?;
    let mut csv = String::from("sample_idx,t,value\n");
    for (i, s) in samples.iter().enumerate() {
        for (t, v) in s.iter().enumerate() {
            csv.push_str(&format!("{i},{t},{v}\n"));
        }
    }
    let plot = if samples.is_empty() {
        PlotData {
            levels: QUANTILE_LEVELS.to_vec(),
            quantiles: Vec::new(),
            n_samples: 0,
        }
    } else {
        let qf = quantiles_from_samples(&samples).map_err(runtime)?;
        PlotData {
            levels: qf.levels,
            quantiles: qf.quantiles,
            n_samples: samples.len(),
        }
    };
    let mut writer = ArtifactWriter::new(&cfg.output_dir, "sample")?;
    writer.write_string("samples.csv", &csv)?;
    writer.write_json("plot_data.json", &plot)?;
    writer.finish()
}

/// Reads a `sample_idx,t,value` CSV back into per-sample rows.
fn read_samples_csv(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(vec![format!("'{}': {e}", path.display())]))?;
    let mut by_idx: BTreeMap<u64, Vec<(u64, f64)>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let err = |msg: &str| {
            CliError::Runtime(format!("'{}' line {}: {msg}", path.display(), lineno + 1))
        };
        if parts.len() != 3 {
            return Err(err("expected 3 columns"));
        }
        let idx: u64 = parts[0].parse().map_err(|_| err("bad sample_idx"))?;
        let t: u64 = parts[1].parse().map_err(|_| err("bad t"))?;
        let v: f64 = parts[2].parse().map_err(|_| err("bad value"))?;
        by_idx.entry(idx).or_default().push((t, v));
    }
    let mut out = Vec::with_capacity(by_idx.len());
    for (_, mut row) in by_idx {
        row.sort_by_key(|(t, _)| *t);
        out.push(row.into_iter().map(|(_, v)| v).collect());
    }
    Ok(out)
}

#[derive(Serialize)]
struct W2Report {
    a: String,
    b: String,
    batch: usize,
    batches: usize,
    w2: f64,
}

/// `eval w2`: average batched 2-Wasserstein distance between sample files.
pub fn cmd_eval_w2(a: &Path, b: &Path, batch: usize, out: &Path) -> Result<(), CliError> {
    let mut errs = Vec::new();
    if !a.exists() {
        errs.push(format!("a: '{}' does not exist", a.display()));
    }
    if !b.exists() {
        errs.push(format!("b: '{}' does not exist", b.display()));
    }
    if batch == 0 {
        errs.push("batch: must be >= 1".into());
    }
    if !errs.is_empty() {
        return Err(CliError::Validation(errs));
    }
    let xa = read_samples_csv(a)?;
    let xb = read_samples_csv(b)?;
    let n = xa.len().min(xb.len());
    let batches = n / batch;
    if batches == 0 {
        return Err(CliError::Runtime(format!(
            "need at least {batch} samples per file, got {} and {}",
            xa.len(),
            xb.len()
        )));
    }
    let l = xa[0].len();
    if xa.iter().chain(xb.iter()).any(|r| r.len() != l) {
        return Err(CliError::Runtime("inconsistent sample lengths".into()));
    }
    let mut total = 0.0;
    for k in 0..batches {
        let ma = DMatrix::from_fn(batch, l, |i, j| xa[k * batch + i][j]);
        let mb = DMatrix::from_fn(batch, l, |i, j| xb[k * batch + i][j]);
        total += batch_w2(&ma, &mb).map_err(runtime)?;
    }
    let w2 = total / batches as f64;
    let mut writer = ArtifactWriter::new(out, "eval-w2")?;
    writer.write_string(
        "w2.csv",
        &format!("a,b,batch,batches,w2\n{},{},{batch},{batches},{w2}\n", a.display(), b.display()),
    )?;
    writer.write_json(
        "w2.json",
        &W2Report {
            a: a.display().to_string(),
            b: b.display().to_string(),
            batch,
            batches,
            w2,
        },
    )?;
    writer.finish()
}

#[derive(Serialize)]
struct LpsReport {
    n_synthetic: usize,
    n_test_windows: usize,
    lps: f64,
}

/// `eval lps`: linear predictive score of model samples against real test
/// windows, both in normalized space.
pub fn cmd_eval_lps(cfg: &RunConfig, checkpoint: &Path, n_synthetic: usize) -> Result<(), CliError> {
    cfg.validate()?;
    if !checkpoint.exists() {
        return Err(CliError::Validation(vec![format!(
            "checkpoint: '{}' does not exist",
            checkpoint.display()
        )]));
    }
    let model = load_model(checkpoint)?;
    if model.cfg.conditional {
        return Err(CliError::Validation(vec![
            "checkpoint: eval lps requires an unconditional checkpoint".into(),
        ]));
    }
    let ds = build_dataset(cfg)?;
    let c = ds.context_len;
    let samples = draw_uncond_samples(cfg, &model, n_synthetic)?;
    let synthetic: Vec<Window> = samples
        .into_iter()
        .enumerate()
        .map(|(i, s)| Window {
            past: s[..c].to_vec(),
            future: s[c..].to_vec(),
            series_id: "synthetic".into(),
            offset: i,
        })
        .collect();
    // Real windows move to the model's normalized space via context scaling.
    let real: Vec<Window> = split_windows(&ds, Split::Test)
        .map_err(runtime)?
        .into_iter()
        .map(|w| {
            let (past, st) = mean_scale(&w.past, &w.past);
            let future = st.normalize_at(&w.future, 0);
            Window { past, future, ..w }
        })
        .collect();
    let score = lps(&synthetic, &real).map_err(runtime)?;
    let report = LpsReport {
        n_synthetic: synthetic.len(),
        n_test_windows: real.len(),
        lps: score,
    };
    let mut writer = ArtifactWriter::new(&cfg.output_dir, "eval-lps")?;
    writer.write_string(
        "lps.csv",
        &format!(
            "n_synthetic,n_test_windows,lps\n{},{},{score}\n",
            report.n_synthetic, report.n_test_windows
        ),
    )?;
    writer.write_json("lps.json", &report)?;
    writer.finish()
}

/// `eval wstudy`: relative optimal-coupling cost per kernel and batch
/// multiple.
pub fn cmd_eval_wstudy(
    cfg: &RunConfig,
    kernels: &[String],
    multiples: &[usize],
    batch: usize,
    trials: usize,
) -> Result<(), CliError> {
    cfg.validate()?;
    let mut errs = Vec::new();
    let mut kinds = Vec::with_capacity(kernels.len());
    for name in kernels {
        match name.as_str() {
            "isotropic" => kinds.push(KernelKind::Isotropic),
            "se" => kinds.push(KernelKind::SquaredExponential),
            "ou" => kinds.push(KernelKind::OrnsteinUhlenbeck),
            "pe" => kinds.push(KernelKind::Periodic),
            other => errs.push(format!(
                "kernels: unknown kernel '{other}' (expected isotropic, se, ou, pe)"
            )),
        }
    }
    if kernels.is_empty() {
        errs.push("kernels: need at least one".into());
    }
    if multiples.is_empty() || multiples.contains(&0) {
        errs.push("multiples: need nonzero batch multiples".into());
    }
    if batch < 2 {
        errs.push("batch: must be >= 2".into());
    }
    if trials == 0 {
        errs.push("trials: must be >= 1".into());
    }
    if !errs.is_empty() {
        return Err(CliError::Validation(errs));
    }
    let ds = build_dataset(cfg)?;
    let specs: Vec<KernelSpec> = kinds.iter().map(|&k| KernelSpec::default_for(k)).collect();
    let rows = wasserstein_study(&ds, &specs, multiples, batch, trials, cfg.seed)
        .map_err(runtime)?;
    let mut csv = String::from("kernel,multiple,ratio\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{}\n", r.kernel, r.multiple, r.ratio));
    }
    let mut writer = ArtifactWriter::new(&cfg.output_dir, "eval-wstudy")?;
    writer.write_string("wstudy.csv", &csv)?;
    writer.write_json("wstudy.json", &rows)?;
    writer.finish()
}
