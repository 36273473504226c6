//! Kernels over (digit, angle) inputs and exact GP regression with
//! per-observation noise.
//!
//! Every subset in the model is a single digit instance, so the covariance
//! matrices here are small (one row per observed rotation) and are handled
//! densely with a Cholesky factorization.


use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Jitter added to covariance diagonals before factorization.
pub const DEFAULT_JITTER: f64 = 1e-8;
/// Jitter used for the single retry when the first factorization fails.
pub const RETRY_JITTER: f64 = 1e-6;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// One auxiliary datum: a digit instance id and a rotation angle in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxPoint {
    pub digit: usize,
    pub angle: f64,
}

impl AuxPoint {
    pub fn new(digit: usize, angle: f64) -> Self {
        debug_assert!(angle.is_finite());
        Self { digit, angle }
    }
}

/// Amplitude and lengthscale of the periodic local kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub amplitude: f64,
    pub lengthscale: f64,
}

impl KernelParams {
    pub fn new(amplitude: f64, lengthscale: f64) -> Result<Self> {
        if !(amplitude > 0.0 && amplitude.is_finite()) || !(lengthscale > 0.0 && lengthscale.is_finite())
        {
            return Err(Error::Config(format!(
                "kernel parameters must be positive (amplitude={amplitude}, lengthscale={lengthscale})"
            )));
        }
        Ok(Self {
            amplitude,
            lengthscale,
        })
    }
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            lengthscale: 1.0,
        }
    }
}

/// Dense symmetric covariance over the points of one subset.
///
/// `entries` already includes `jitter` on the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    pub entries: DMatrix<f64>,
    pub jitter: f64,
}

impl CovMatrix {
    pub fn new(entries: DMatrix<f64>, jitter: f64) -> Self {
        Self { entries, jitter }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            entries: DMatrix::identity(n, n),
            jitter: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }
}

/// Exact posterior of one GP channel given Gaussian pseudo-observations.
#[derive(Debug, Clone)]
pub struct GPPosterior {
    pub mean: DVector<f64>,
    pub cov: CovMatrix,
    pub log_marginal: f64,
}

/// Periodic local kernel, zero across digit instances.
pub fn local_kernel(a: &AuxPoint, b: &AuxPoint, p: &KernelParams) -> f64 {
    if a.digit != b.digit {
        return 0.0;
    }
    let s = (a.angle - b.angle).abs().sin();
    p.amplitude * p.amplitude * (-2.0 * s * s / (p.lengthscale * p.lengthscale)).exp()
}

/// Local kernel value with its partial derivatives w.r.t. amplitude and lengthscale.
pub fn local_kernel_with_grad(a: &AuxPoint, b: &AuxPoint, p: &KernelParams) -> (f64, f64, f64) {
    if a.digit != b.digit {
        return (0.0, 0.0, 0.0);
    }
    let s = (a.angle - b.angle).abs().sin();
    let r2 = p.lengthscale * p.lengthscale;
    let e = (-2.0 * s * s / r2).exp();
    let k = p.amplitude * p.amplitude * e;
    let dk_damp = 2.0 * p.amplitude * e;
    let dk_dlen = k * 4.0 * s * s / (r2 * p.lengthscale);
    (k, dk_damp, dk_dlen)
}

/// Binary kernel shared by the global channels.
pub fn global_kernel(a: &AuxPoint, b: &AuxPoint) -> f64 {
    if a.digit == b.digit {
        1.0
    } else {
        0.0
    }
}

pub(crate) fn check_single_digit<'a>(points: impl IntoIterator<Item = &'a AuxPoint>) -> Result<Option<usize>> {
    let mut digit = None;
    for p in points {
        match digit {
            None => digit = Some(p.digit),
            Some(d) if d != p.digit => {
                return Err(Error::MixedDigit {
                    expected: d,
                    found: p.digit,
                })
            }
            _ => {}
        }
    }
    Ok(digit)
}

/// Covariance of the local kernel over the points of a single digit subset.
pub fn build_local_cov(points: &[AuxPoint], p: &KernelParams, jitter: f64) -> Result<CovMatrix> {
    if points.is_empty() {
        return Err(Error::Shape("covariance needs at least one point".into()));
    }
    check_single_digit(points)?;
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = local_kernel(&points[i], &points[j], p);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += jitter;
    }
    Ok(CovMatrix::new(k, jitter))
}

/// Cholesky factorization with the single jitter retry used throughout the crate.
pub fn cholesky_with_retry(a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = a.nrows();
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Cholesky { dim: n });
    }
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok(c);
    }
    let mut retry = a.clone();
    for i in 0..n {
        retry[(i, i)] += RETRY_JITTER;
    }
    Cholesky::new(retry).ok_or(Error::Cholesky { dim: n })
}

fn check_obs(k: &CovMatrix, obs_mean: &[f64], obs_std: &[f64]) -> Result<()> {
    let n = k.dim();
    if obs_mean.len() != n || obs_std.len() != n {
        return Err(Error::Shape(format!(
            "covariance is {n}x{n} but got {} means and {} stds",
            obs_mean.len(),
            obs_std.len()
        )));
    }
    if obs_std.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::Shape("observation stds must be positive".into()));
    }
    Ok(())
}

/// Factorization of `K + diag(obs_std²)` shared by the regression routines.
pub(crate) struct NoisyFactor {
    pub chol: Cholesky<f64, Dyn>,
    /// `(K + D)^{-1} obs_mean`
    pub alpha: DVector<f64>,
    pub log_marginal: f64,
}

pub(crate) fn factor_noisy(k: &CovMatrix, obs_mean: &[f64], obs_std: &[f64]) -> Result<NoisyFactor> {
    check_obs(k, obs_mean, obs_std)?;
    let n = k.dim();
    let mut a = k.entries.clone();
    for (i, s) in obs_std.iter().enumerate() {
        a[(i, i)] += s * s;
    }
    let chol = cholesky_with_retry(&a)?;
    let y = DVector::from_column_slice(obs_mean);
    let alpha = chol.solve(&y);
    let half_logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    let log_marginal = -0.5 * y.dot(&alpha) - half_logdet - 0.5 * n as f64 * LN_2PI;
    Ok(NoisyFactor {
        chol,
        alpha,
        log_marginal,
    })
}

/// `log N(obs_mean | 0, K + diag(obs_std²))`.
pub fn gp_marginal_loglik(k: &CovMatrix, obs_mean: &[f64], obs_std: &[f64]) -> Result<f64> {
    Ok(factor_noisy(k, obs_mean, obs_std)?.log_marginal)
}

/// Posterior over the latent function values at the observed inputs.
pub fn gp_posterior(k: &CovMatrix, obs_mean: &[f64], obs_std: &[f64]) -> Result<GPPosterior> {
    let f = factor_noisy(k, obs_mean, obs_std)?;
    let mean = &k.entries * &f.alpha;
    let v = f
        .chol
        .l_dirty()
        .solve_lower_triangular(&k.entries)
        .ok_or(Error::Cholesky { dim: k.dim() })?;
    let mut cov = &k.entries - v.transpose() * v;
    symmetrize(&mut cov);
    Ok(GPPosterior {
        mean,
        cov: CovMatrix::new(cov, 0.0),
        log_marginal: f.log_marginal,
    })
}

/// Predictive mean and variance of the local latent function at new angles of the same digit.
pub fn gp_predict(
    k: &CovMatrix,
    points: &[AuxPoint],
    obs_mean: &[f64],
    obs_std: &[f64],
    targets: &[AuxPoint],
    p: &KernelParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if points.len() != k.dim() {
        return Err(Error::Shape(format!(
            "{} context points for a {}x{} covariance",
            points.len(),
            k.dim(),
            k.dim()
        )));
    }
    check_single_digit(points.iter().chain(targets))?;
    let f = factor_noisy(k, obs_mean, obs_std)?;
    let cross = DMatrix::from_fn(points.len(), targets.len(), |i, j| {
        local_kernel(&points[i], &targets[j], p)
    });
    let w = f
        .chol
        .l_dirty()
        .solve_lower_triangular(&cross)
        .ok_or(Error::Cholesky { dim: k.dim() })?;
    let mean = (cross.transpose() * &f.alpha).iter().copied().collect();
    let var = targets
        .iter()
        .enumerate()
        .map(|(j, t)| (local_kernel(t, t, p) - w.column(j).norm_squared()).max(0.0))
        .collect();
    Ok((mean, var))
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `log N(x | mean, var)` for a scalar.
pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// `log N(x | 0, cov)` through a Cholesky factor of `cov`.
pub fn mvn_logpdf_zero_mean(x: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = cholesky_with_retry(cov)?;
    let n = x.len() as f64;
    let half_logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    let sol = chol.solve(x);
    Ok(-0.5 * x.dot(&sol) - half_logdet - 0.5 * n * LN_2PI)
}
