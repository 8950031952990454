//! Gaussian-process kernels, covariance construction, sampling,
//! log-density/score evaluation, and GP-regression conditional priors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default white-noise jitter added to every covariance diagonal.
pub const DEFAULT_JITTER: f64 = 1e-6;
/// Jitter escalation cap; beyond this the factorization error is surfaced.
pub const MAX_JITTER: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    /// Identity covariance; ignores the length scale.
    Isotropic,
    #[serde(rename = "se")]
    SquaredExponential,
    #[serde(rename = "ou")]
    OrnsteinUhlenbeck,
    #[serde(rename = "pe")]
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub length_scale: f64,
    pub white_noise: f64,
}

impl KernelSpec {
    /// Default parameterizations: SE l=sqrt(1/2), OU l=1, PE l=sqrt(2).
    pub fn default_for(kind: KernelKind) -> Self {
        let length_scale = match kind {
            KernelKind::Isotropic => 1.0,
            KernelKind::SquaredExponential => (0.5f64).sqrt(),
            KernelKind::OrnsteinUhlenbeck => 1.0,
            KernelKind::Periodic => (2.0f64).sqrt(),
        };
        KernelSpec {
            kind,
            length_scale,
            white_noise: DEFAULT_JITTER,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length_scale <= 0.0 {
            return Err(Error::Config("kernel length_scale must be > 0".into()));
        }
        if self.white_noise < 0.0 {
            return Err(Error::Config("kernel white_noise must be >= 0".into()));
        }
        Ok(())
    }
}

/// Maps integer time indices to reals so one full period spans pi.
pub fn normalize_times(indices: &[i64], period: usize) -> Vec<f64> {
    let p = period.max(1) as f64;
    indices
        .iter()
        .map(|&t| t as f64 * std::f64::consts::PI / p)
        .collect()
}

/// Kernel value at distance `d`. White noise is not included here; it only
/// enters the covariance diagonal.
pub fn kernel_eval(spec: &KernelSpec, d: f64) -> f64 {
    let l = spec.length_scale;
    match spec.kind {
        KernelKind::Isotropic => {
            if d == 0.0 {
                1.0
            } else {
                0.0
            }
        }
        KernelKind::SquaredExponential => (-d * d / (2.0 * l * l)).exp(),
        KernelKind::OrnsteinUhlenbeck => (-d.abs() / l).exp(),
        KernelKind::Periodic => (-(2.0 / (l * l)) * d.sin().powi(2)).exp(),
    }
}

/// Positive-definite covariance with its lower Cholesky factor.
#[derive(Debug, Clone)]
pub struct CovMatrix {
    pub sigma: DMatrix<f64>,
    pub chol: DMatrix<f64>,
    /// Jitter that made the factorization succeed.
    pub jitter: f64,
}

impl CovMatrix {
    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    /// Solves Sigma x = b via the Cholesky factor.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let w = self
            .chol
            .solve_lower_triangular(b)
            .expect("factor has positive diagonal");
        self.chol
            .transpose()
            .solve_upper_triangular(&w)
            .expect("factor has positive diagonal")
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.chol[(i, i)].ln()).sum::<f64>()
    }
}

/// Builds the covariance K(t_i, t_j) + jitter * delta_ij and factors it,
/// escalating jitter x10 up to `MAX_JITTER` on failure.
pub fn build_cov(spec: &KernelSpec, times: &[f64]) -> Result<CovMatrix> {
    spec.validate()?;
    let n = times.len();
    if n == 0 {
        return Err(Error::Config("build_cov needs at least one time".into()));
    }
    let base = DMatrix::from_fn(n, n, |i, j| kernel_eval(spec, times[i] - times[j]));
    let mut jitter = spec.white_noise.max(DEFAULT_JITTER);
    loop {
        let mut sigma = base.clone();
        for i in 0..n {
            sigma[(i, i)] += jitter;
        }
        if let Some(chol) = nalgebra::Cholesky::new(sigma.clone()) {
            return Ok(CovMatrix {
                sigma,
                chol: chol.unpack_dirty().lower_triangle(),
                jitter,
            });
        }
        if jitter >= MAX_JITTER {
            return Err(Error::NotPositiveDefinite { jitter });
        }
        jitter *= 10.0;
    }
}

/// Draws `count` samples (rows) from N(0, Sigma) with a fresh seeded RNG.
pub fn gp_sample(cov: &CovMatrix, count: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gp_sample_with(cov, count, &mut rng)
}

/// Draws `count` samples (rows) from N(0, Sigma) using the given RNG.
pub fn gp_sample_with<R: Rng>(cov: &CovMatrix, count: usize, rng: &mut R) -> DMatrix<f64> {
    let n = cov.dim();
    let mut out = DMatrix::zeros(count, n);
    for s in 0..count {
        let z = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
        let x = &cov.chol * z;
        for j in 0..n {
            out[(s, j)] = x[j];
        }
    }
    out
}

/// Log density and score of N(0, Sigma) at `x`, via triangular solves.
pub fn gp_logpdf_score(cov: &CovMatrix, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let n = cov.dim();
    if x.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("vector of length {n}"),
            got: format!("length {}", x.len()),
        });
    }
    let v = cov.solve(x);
    let logp = -0.5 * x.dot(&v)
        - 0.5 * cov.log_det()
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    Ok((logp, -v))
}

/// Gaussian with mean and covariance factor F such that Cov = F F^T.
#[derive(Debug, Clone)]
pub struct GaussianDist {
    pub mean: DVector<f64>,
    pub factor: DMatrix<f64>,
}

impl GaussianDist {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample_with<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.factor.ncols(), |_, _| rng.sample(StandardNormal));
        &self.mean + &self.factor * z
    }
}

/// Precomputed GP-regression conditioning for a fixed time layout:
/// mean = gain * y_p, covariance = factor factor^T.
#[derive(Debug, Clone)]
pub struct GprOperator {
    pub gain: DMatrix<f64>,
    pub factor: DMatrix<f64>,
}

impl GprOperator {
    pub fn condition(&self, y_p: &DVector<f64>) -> GaussianDist {
        GaussianDist {
            mean: &self.gain * y_p,
            factor: self.factor.clone(),
        }
    }
}

/// Builds the GPR operator for given (normalized) past and future times.
pub fn gpr_operator(
    spec: &KernelSpec,
    past_times: &[f64],
    future_times: &[f64],
) -> Result<GprOperator> {
    let spp = build_cov(spec, past_times)?;
    let sff = build_cov(spec, future_times)?;
    let c = past_times.len();
    let p = future_times.len();
    let sfp = DMatrix::from_fn(p, c, |i, j| {
        kernel_eval(spec, future_times[i] - past_times[j])
    });

    // gain = Sigma_fp Sigma_pp^-1, via solves against the transpose block.
    let mut inv_spf = DMatrix::zeros(c, p);
    for j in 0..p {
        let col = DVector::from_fn(c, |i, _| sfp[(j, i)]);
        inv_spf.set_column(j, &spp.solve(&col));
    }
    let gain = inv_spf.transpose();

    let mut cond = &sff.sigma - &sfp * &inv_spf;
    // Symmetrize before the eigen clip.
    cond = (&cond + cond.transpose()) * 0.5;
    let factor = psd_factor(cond)?;
    Ok(GprOperator { gain, factor })
}

/// Factor a symmetric PSD matrix, clipping eigenvalues below 0 (tolerating
/// numerical dips down to -1e-8).
fn psd_factor(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = nalgebra::Cholesky::new(m.clone()) {
        return Ok(chol.unpack_dirty().lower_triangle());
    }
    let eig = nalgebra::SymmetricEigen::new(m);
    let mut vals = eig.eigenvalues;
    for v in vals.iter_mut() {
        if *v < -1e-8 {
            return Err(Error::NotPositiveDefinite { jitter: *v });
        }
        *v = v.max(0.0).sqrt();
    }
    let mut f = eig.eigenvectors;
    for j in 0..f.ncols() {
        let s = vals[j];
        for i in 0..f.nrows() {
            f[(i, j)] *= s;
        }
    }
    Ok(f)
}

/// Closed-form Gaussian conditioning of the future block on the observed
/// past: N(Sigma_fp Sigma_pp^-1 y_p, Sigma_ff - Sigma_fp Sigma_pp^-1 Sigma_pf).
pub fn gpr_condition(
    spec: &KernelSpec,
    past_times: &[f64],
    future_times: &[f64],
    y_p: &[f64],
) -> Result<GaussianDist> {
    if y_p.len() != past_times.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} past observations", past_times.len()),
            got: format!("{}", y_p.len()),
        });
    }
    let op = gpr_operator(spec, past_times, future_times)?;
    Ok(op.condition(&DVector::from_column_slice(y_p)))
}

/// Samples the conditional prior: past block ~ N(y_p, I), future block from
/// the GPR conditional; blocks independent. Output length C+P.
pub fn cond_prior_sample<R: Rng>(
    gpr: &GaussianDist,
    y_p: &[f64],
    rng: &mut R,
) -> DVector<f64> {
    let c = y_p.len();
    let p = gpr.dim();
    let mut out = DVector::zeros(c + p);
    for i in 0..c {
        let z: f64 = rng.sample(StandardNormal);
        out[i] = y_p[i] + z;
    }
    let f = gpr.sample_with(rng);
    for i in 0..p {
        out[c + i] = f[i];
    }
    out
}
