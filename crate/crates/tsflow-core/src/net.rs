//! The parametric vector field u(t, x[, c]): a residual fully-connected
//! network with analytic gradients, Adam with global-norm clipping, EMA
//! shadow parameters, and binary checkpointing.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const EMA_MOMENTUM: f64 = 0.9999;
/// Frequency scaling so t in [0,1] spans distinguishable embedding phases.
const TIME_EMBED_SCALE: f64 = 100.0;

const CHECKPOINT_MAGIC: &[u8; 8] = b"TSFCKPT1";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Window length L = C + P; the field maps R^L -> R^L.
    pub input_len: usize,
    pub hidden_dim: usize,
    pub time_embed_dim: usize,
    pub num_blocks: usize,
    pub conditional: bool,
}

impl ModelConfig {
    pub fn new(input_len: usize, conditional: bool) -> Self {
        ModelConfig {
            input_len,
            hidden_dim: 64,
            time_embed_dim: 64,
            num_blocks: 3,
            conditional,
        }
    }

    /// Dimension of the assembled network input.
    pub fn in_dim(&self) -> usize {
        self.input_len
            + self.time_embed_dim
            + if self.conditional { 2 * self.input_len } else { 0 }
    }

    fn n_layers(&self) -> usize {
        2 + 2 * self.num_blocks
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub layers: Vec<Linear>,
}

impl Params {
    pub fn zeros_like(&self) -> Params {
        Params {
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    w: DMatrix::zeros(l.w.nrows(), l.w.ncols()),
                    b: DVector::zeros(l.b.len()),
                })
                .collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.len() + l.b.len())
            .sum()
    }

    /// Values in declaration order (per layer: weights column-major, bias).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(l.w.as_slice());
            out.extend_from_slice(l.b.as_slice());
        }
        out
    }

    pub fn from_flat(&mut self, flat: &[f64]) {
        let mut k = 0;
        for l in self.layers.iter_mut() {
            let wn = l.w.len();
            l.w.as_mut_slice().copy_from_slice(&flat[k..k + wn]);
            k += wn;
            let bn = l.b.len();
            l.b.as_mut_slice().copy_from_slice(&flat[k..k + bn]);
            k += bn;
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.w.iter().chain(l.b.iter()).map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for l in self.layers.iter_mut() {
            l.w *= s;
            l.b *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone)]
pub struct VectorFieldModel {
    pub cfg: ModelConfig,
    pub params: Params,
    pub ema: Params,
    pub ema_momentum: f64,
}

/// Interleaved sinusoidal embedding: entry 2k = sin(t w_k), 2k+1 = cos(t w_k).
pub fn time_embed(t: f64, dim: usize) -> DVector<f64> {
    assert!(dim.is_multiple_of(2), "embedding dimension must be even");
    let mut out = DVector::zeros(dim);
    for k in 0..dim / 2 {
        let omega = TIME_EMBED_SCALE * 10000f64.powf(-2.0 * k as f64 / dim as f64);
        out[2 * k] = (t * omega).sin();
        out[2 * k + 1] = (t * omega).cos();
    }
    out
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_prime(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache {
    inp: DVector<f64>,
    hs: Vec<DVector<f64>>,
    zs: Vec<DVector<f64>>,
    acts: Vec<DVector<f64>>,
    pub out: DVector<f64>,
}

impl VectorFieldModel {
    pub fn new(cfg: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(cfg.n_layers());
        let push = |rng: &mut ChaCha8Rng, rows: usize, cols: usize, zero: bool| Linear {
            w: if zero {
                DMatrix::zeros(rows, cols)
            } else {
                let scale = 1.0 / (cols as f64).sqrt();
                DMatrix::from_fn(rows, cols, |_, _| {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    z * scale
                })
            },
            b: DVector::zeros(rows),
        };
        layers.push(push(&mut rng, cfg.hidden_dim, cfg.in_dim(), false));
        for _ in 0..cfg.num_blocks {
            layers.push(push(&mut rng, cfg.hidden_dim, cfg.hidden_dim, false));
            layers.push(push(&mut rng, cfg.hidden_dim, cfg.hidden_dim, false));
        }
        // Zero output projection: the initial field is the zero field.
        layers.push(push(&mut rng, cfg.input_len, cfg.hidden_dim, true));
        let params = Params { layers };
        let ema = params.clone();
        VectorFieldModel {
            cfg,
            params,
            ema,
            ema_momentum: EMA_MOMENTUM,
        }
    }

    fn assemble_input(&self, t: f64, x: &DVector<f64>, c: Option<&DVector<f64>>) -> Result<DVector<f64>> {
        let l = self.cfg.input_len;
        if x.len() != l {
            return Err(Error::ShapeMismatch {
                expected: format!("input of length {l}"),
                got: format!("{}", x.len()),
            });
        }
        match (self.cfg.conditional, c) {
            (true, None) => {
                return Err(Error::Config(
                    "conditional model called without a condition".into(),
                ))
            }
            (false, Some(_)) => {
                return Err(Error::Config(
                    "unconditional model called with a condition".into(),
                ))
            }
            (true, Some(c)) if c.len() != 2 * l => {
                return Err(Error::ShapeMismatch {
                    expected: format!("condition of length {}", 2 * l),
                    got: format!("{}", c.len()),
                });
            }
            _ => {}
        }
        let mut inp = DVector::zeros(self.cfg.in_dim());
        inp.rows_mut(0, l).copy_from(x);
        inp.rows_mut(l, self.cfg.time_embed_dim)
            .copy_from(&time_embed(t, self.cfg.time_embed_dim));
        if let Some(c) = c {
            inp.rows_mut(l + self.cfg.time_embed_dim, 2 * l).copy_from(c);
        }
        Ok(inp)
    }

    pub fn forward(&self, t: f64, x: &DVector<f64>, c: Option<&DVector<f64>>) -> Result<DVector<f64>> {
        Ok(self.forward_cached(&self.params, t, x, c)?.out)
    }

    /// Forward pass through the EMA shadow parameters (inference path).
    pub fn forward_ema(&self, t: f64, x: &DVector<f64>, c: Option<&DVector<f64>>) -> Result<DVector<f64>> {
        Ok(self.forward_cached(&self.ema, t, x, c)?.out)
    }

    pub fn forward_cached(
        &self,
        params: &Params,
        t: f64,
        x: &DVector<f64>,
        c: Option<&DVector<f64>>,
    ) -> Result<ForwardCache> {
        let inp = self.assemble_input(t, x, c)?;
        let r = self.cfg.num_blocks;
        let mut hs = Vec::with_capacity(r + 1);
        let mut zs = Vec::with_capacity(r);
        let mut acts = Vec::with_capacity(r);
        let mut h = &params.layers[0].w * &inp + &params.layers[0].b;
        hs.push(h.clone());
        for k in 0..r {
            let fc1 = &params.layers[1 + 2 * k];
            let fc2 = &params.layers[2 + 2 * k];
            let z = &fc1.w * &h + &fc1.b;
            let a = z.map(silu);
            h = &h + &fc2.w * &a + &fc2.b;
            zs.push(z);
            acts.push(a);
            hs.push(h.clone());
        }
        let last = params.layers.last().unwrap();
        let out = &last.w * &h + &last.b;
        Ok(ForwardCache { inp, hs, zs, acts, out })
    }

    /// Accumulates parameter gradients for one sample and returns the
    /// gradient with respect to the state slice x of the input.
    pub fn backward(
        &self,
        params: &Params,
        cache: &ForwardCache,
        grad_out: &DVector<f64>,
        grads: &mut Params,
    ) -> DVector<f64> {
        let r = self.cfg.num_blocks;
        let last_idx = params.layers.len() - 1;
        let last = &params.layers[last_idx];
        grads.layers[last_idx].w += grad_out * cache.hs[r].transpose();
        grads.layers[last_idx].b += grad_out;
        let mut gh = last.w.transpose() * grad_out;
        for k in (0..r).rev() {
            let fc1 = &params.layers[1 + 2 * k];
            let fc2 = &params.layers[2 + 2 * k];
            let ga = fc2.w.transpose() * &gh;
            grads.layers[2 + 2 * k].w += &gh * cache.acts[k].transpose();
            grads.layers[2 + 2 * k].b += &gh;
            let gz = DVector::from_fn(ga.len(), |i, _| ga[i] * silu_prime(cache.zs[k][i]));
            grads.layers[1 + 2 * k].w += &gz * cache.hs[k].transpose();
            grads.layers[1 + 2 * k].b += &gz;
            gh += fc1.w.transpose() * &gz;
        }
        grads.layers[0].w += &gh * cache.inp.transpose();
        grads.layers[0].b += &gh;
        let ginp = params.layers[0].w.transpose() * &gh;
        ginp.rows(0, self.cfg.input_len).into_owned()
    }

    /// Input-gradient only (no parameter gradients); used when
    /// backpropagating through ODE integration at inference.
    pub fn input_vjp(&self, params: &Params, cache: &ForwardCache, grad_out: &DVector<f64>) -> DVector<f64> {
        let r = self.cfg.num_blocks;
        let last = params.layers.last().unwrap();
        let mut gh = last.w.transpose() * grad_out;
        for k in (0..r).rev() {
            let fc1 = &params.layers[1 + 2 * k];
            let fc2 = &params.layers[2 + 2 * k];
            let ga = fc2.w.transpose() * &gh;
            let gz = DVector::from_fn(ga.len(), |i, _| ga[i] * silu_prime(cache.zs[k][i]));
            gh += fc1.w.transpose() * &gz;
        }
        let ginp = params.layers[0].w.transpose() * &gh;
        ginp.rows(0, self.cfg.input_len).into_owned()
    }

    pub fn require_conditional(&self, conditional: bool) -> Result<()> {
        if self.cfg.conditional != conditional {
            return Err(Error::Config(format!(
                "model is {}, expected {}",
                kind_name(self.cfg.conditional),
                kind_name(conditional)
            )));
        }
        Ok(())
    }
}

fn kind_name(conditional: bool) -> &'static str {
    if conditional {
        "conditional"
    } else {
        "unconditional"
    }
}

/// One training example for the regression loss.
pub struct BatchItem<'a> {
    pub t: f64,
    pub x: &'a DVector<f64>,
    pub c: Option<&'a DVector<f64>>,
    pub target: &'a DVector<f64>,
}

/// Mean-over-batch squared-error loss and its exact parameter gradients.
pub fn backward_batch(model: &VectorFieldModel, batch: &[BatchItem<'_>]) -> Result<(f64, Params)> {
    let mut grads = model.params.zeros_like();
    let b = batch.len() as f64;
    let mut loss = 0.0;
    for item in batch {
        let cache = model.forward_cached(&model.params, item.t, item.x, item.c)?;
        let resid = &cache.out - item.target;
        loss += resid.norm_squared() / b;
        let grad_out = resid * (2.0 / b);
        model.backward(&model.params, &cache, &grad_out, &mut grads);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "training loss".into(),
        });
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OptHyper {
    pub learning_rate: f64,
    pub clip_threshold: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptHyper {
    fn default() -> Self {
        OptHyper {
            learning_rate: 1e-3,
            clip_threshold: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimState {
    pub hyper: OptHyper,
    pub m: Params,
    pub v: Params,
    pub step: u64,
}

impl OptimState {
    pub fn new(params: &Params) -> Self {
        OptimState {
            hyper: OptHyper::default(),
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// Global-norm clipping, bias-corrected Adam update, then the EMA shadow
/// update theta' <- m theta' + (1-m) theta.
pub fn opt_step(model: &mut VectorFieldModel, opt: &mut OptimState, grads: &mut Params) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            context: "gradients".into(),
        });
    }
    let h = opt.hyper.clone();
    let norm = grads.global_norm();
    if norm > h.clip_threshold {
        grads.scale(h.clip_threshold / norm);
    }
    opt.step += 1;
    let t = opt.step as f64;
    let bc1 = 1.0 - h.beta1.powf(t);
    let bc2 = 1.0 - h.beta2.powf(t);
    for li in 0..model.params.layers.len() {
        let p = &mut model.params.layers[li];
        let g = &grads.layers[li];
        let m = &mut opt.m.layers[li];
        let v = &mut opt.v.layers[li];
        for (pw, (gw, (mw, vw))) in p
            .w
            .iter_mut()
            .zip(g.w.iter().zip(m.w.iter_mut().zip(v.w.iter_mut())))
        {
            *mw = h.beta1 * *mw + (1.0 - h.beta1) * gw;
            *vw = h.beta2 * *vw + (1.0 - h.beta2) * gw * gw;
            *pw -= h.learning_rate * (*mw / bc1) / ((*vw / bc2).sqrt() + h.eps);
        }
        for (pb, (gb, (mb, vb))) in p
            .b
            .iter_mut()
            .zip(g.b.iter().zip(m.b.iter_mut().zip(v.b.iter_mut())))
        {
            *mb = h.beta1 * *mb + (1.0 - h.beta1) * gb;
            *vb = h.beta2 * *vb + (1.0 - h.beta2) * gb * gb;
            *pb -= h.learning_rate * (*mb / bc1) / ((*vb / bc2).sqrt() + h.eps);
        }
    }
    let m = model.ema_momentum;
    for (e, p) in model.ema.layers.iter_mut().zip(&model.params.layers) {
        e.w = &e.w * m + &p.w * (1.0 - m);
        e.b = &e.b * m + &p.b * (1.0 - m);
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    config: ModelConfig,
    ema_momentum: f64,
    opt: OptHyper,
    step: u64,
    blob_len: u64,
    blob_sha256: String,
}

fn blob_bytes(parts: [&Params; 4]) -> Vec<u8> {
    let mut out = Vec::new();
    for p in parts {
        for v in p.to_flat() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Writes config header (JSON) plus little-endian f64 blobs for params,
/// EMA shadow, and Adam moments, guarded by a SHA-256 checksum.
pub fn save_checkpoint(model: &VectorFieldModel, opt: &OptimState, path: &Path) -> Result<()> {
    let blob = blob_bytes([&model.params, &model.ema, &opt.m, &opt.v]);
    let digest = Sha256::digest(&blob);
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        config: model.cfg,
        ema_momentum: model.ema_momentum,
        opt: opt.hyper.clone(),
        step: opt.step,
        blob_len: blob.len() as u64,
        blob_sha256: format!("{digest:x}"),
    };
    let header_json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(CHECKPOINT_MAGIC)?;
    f.write_all(&(header_json.len() as u32).to_le_bytes())?;
    f.write_all(&header_json)?;
    f.write_all(&blob)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(VectorFieldModel, OptimState)> {
    let mut f = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut len_buf = [0u8; 4];
    f.read_exact(&mut len_buf)
        .map_err(|_| Error::Checkpoint("truncated header length".into()))?;
    let header_len = u32::from_le_bytes(len_buf) as usize;
    let mut header_buf = vec![0u8; header_len];
    f.read_exact(&mut header_buf)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&header_buf).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {}",
            header.version
        )));
    }
    let mut blob = Vec::new();
    f.read_to_end(&mut blob)?;
    if blob.len() != header.blob_len as usize {
        return Err(Error::Checkpoint(format!(
            "blob length mismatch: header says {}, file has {}",
            header.blob_len,
            blob.len()
        )));
    }
    let digest = format!("{:x}", Sha256::digest(&blob));
    if digest != header.blob_sha256 {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }

    let mut model = VectorFieldModel::new(header.config, 0);
    model.ema_momentum = header.ema_momentum;
    let mut opt = OptimState::new(&model.params);
    opt.hyper = header.opt;
    opt.step = header.step;
    let n = model.params.n_params();
    if blob.len() != 4 * n * 8 {
        return Err(Error::Checkpoint("blob size inconsistent with config".into()));
    }
    let floats: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    model.params.from_flat(&floats[0..n]);
    model.ema.from_flat(&floats[n..2 * n]);
    opt.m.from_flat(&floats[2 * n..3 * n]);
    opt.v.from_flat(&floats[3 * n..4 * n]);
    Ok((model, opt))
}
