//! Structured posterior of one digit subset.
//!
//! The encoder's per-image Gaussians act as approximate likelihoods. Combined
//! with the factorized prior, the posterior splits into `J` exact GP posteriors
//! over the subset's rotations (local channels) and `L - J` scalar conjugate
//! Gaussians shared by every image of the digit (global channels).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gp::{
    self, build_local_cov, cholesky_with_retry, normal_logpdf, AuxPoint, CovMatrix, GPPosterior,
    KernelParams,
};

/// Split of the latent space into local (angle-dependent) and global channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentConfig {
    pub total_channels: usize,
    pub local_channels: usize,
}

impl LatentConfig {
    pub fn new(total_channels: usize, local_channels: usize) -> Result<Self> {
        if local_channels < 1 || local_channels > total_channels {
            return Err(Error::Config(format!(
                "need 1 <= local_channels ({local_channels}) <= total_channels ({total_channels})"
            )));
        }
        Ok(Self {
            total_channels,
            local_channels,
        })
    }

    pub fn global_channels(&self) -> usize {
        self.total_channels - self.local_channels
    }
}

impl Default for LatentConfig {
    fn default() -> Self {
        Self {
            total_channels: 16,
            local_channels: 8,
        }
    }
}

/// Per-image mean-field factors produced by the encoder, one row per image.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub means: DMatrix<f64>,
    pub stds: DMatrix<f64>,
}

impl EncoderOutput {
    pub fn new(means: DMatrix<f64>, stds: DMatrix<f64>) -> Result<Self> {
        if means.shape() != stds.shape() {
            return Err(Error::Shape(format!(
                "means {:?} vs stds {:?}",
                means.shape(),
                stds.shape()
            )));
        }
        if stds.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::Shape("encoder stds must be strictly positive".into()));
        }
        Ok(Self { means, stds })
    }

    pub fn num_images(&self) -> usize {
        self.means.nrows()
    }

    pub fn num_channels(&self) -> usize {
        self.means.ncols()
    }

    fn column(&self, l: usize) -> (Vec<f64>, Vec<f64>) {
        (
            self.means.column(l).iter().copied().collect(),
            self.stds.column(l).iter().copied().collect(),
        )
    }
}

/// Conjugate posterior of one global channel under a standard-normal prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalPosterior {
    pub mean: f64,
    pub var: f64,
    pub log_z: f64,
}

#[derive(Debug, Clone)]
pub struct SubsetPosterior {
    pub local: Vec<GPPosterior>,
    pub global: Vec<GlobalPosterior>,
    pub log_z_total: f64,
}

/// Standard-normal draws for [`sample_posterior`]: one `Q`-vector per local
/// channel and one scalar per global channel.
#[derive(Debug, Clone)]
pub struct PosteriorNoise {
    pub local: Vec<DVector<f64>>,
    pub global: Vec<f64>,
}

impl PosteriorNoise {
    pub fn zeros(q: usize, cfg: &LatentConfig) -> Self {
        Self {
            local: vec![DVector::zeros(q); cfg.local_channels],
            global: vec![0.0; cfg.global_channels()],
        }
    }
}

pub fn global_conjugate(means: &[f64], stds: &[f64]) -> GlobalPosterior {
    debug_assert_eq!(means.len(), stds.len());
    let mut precision = 1.0;
    let mut weighted = 0.0;
    let mut log_lik_at_zero = 0.0;
    for (&m, &s) in means.iter().zip(stds) {
        let v = s * s;
        precision += 1.0 / v;
        weighted += m / v;
        log_lik_at_zero += normal_logpdf(0.0, m, v);
    }
    let var = 1.0 / precision;
    let mean = var * weighted;
    let log_z = normal_logpdf(0.0, 0.0, 1.0) + log_lik_at_zero - normal_logpdf(0.0, mean, var);
    GlobalPosterior { mean, var, log_z }
}

/// Posterior for a subset whose local channels share the covariance `k`.
///
/// Passing the identity for `k` together with `local_channels == total_channels`
/// gives the independent per-image prior used by the ablation.
pub fn compose_posterior_with_cov(
    enc: &EncoderOutput,
    k: &CovMatrix,
    cfg: &LatentConfig,
) -> Result<SubsetPosterior> {
    if enc.num_channels() != cfg.total_channels {
        return Err(Error::Shape(format!(
            "encoder produced {} channels, config expects {}",
            enc.num_channels(),
            cfg.total_channels
        )));
    }
    if enc.num_images() != k.dim() {
        return Err(Error::Shape(format!(
            "{} encoded images for a {}x{} covariance",
            enc.num_images(),
            k.dim(),
            k.dim()
        )));
    }
    let mut local = Vec::with_capacity(cfg.local_channels);
    for l in 0..cfg.local_channels {
        let (m, s) = enc.column(l);
        local.push(gp::gp_posterior(k, &m, &s)?);
    }
    let global: Vec<_> = (cfg.local_channels..cfg.total_channels)
        .map(|l| {
            let (m, s) = enc.column(l);
            global_conjugate(&m, &s)
        })
        .collect();
    let log_z_total = local.iter().map(|p| p.log_marginal).sum::<f64>()
        + global.iter().map(|g| g.log_z).sum::<f64>();
    Ok(SubsetPosterior {
        local,
        global,
        log_z_total,
    })
}

pub fn compose_posterior(
    enc: &EncoderOutput,
    points: &[AuxPoint],
    cfg: &LatentConfig,
    kp: &KernelParams,
) -> Result<SubsetPosterior> {
    let k = build_local_cov(points, kp, gp::DEFAULT_JITTER)?;
    compose_posterior_with_cov(enc, &k, cfg)
}

/// Reparameterized draw of the subset's latent matrix (`Q x L`).
///
/// Global channels are drawn once and broadcast down their column.
pub fn sample_posterior(sp: &SubsetPosterior, noise: &PosteriorNoise) -> Result<DMatrix<f64>> {
    if noise.local.len() != sp.local.len() || noise.global.len() != sp.global.len() {
        return Err(Error::Shape("noise does not match posterior channel counts".into()));
    }
    let q = sp
        .local
        .first()
        .map(|p| p.mean.len())
        .ok_or_else(|| Error::Shape("posterior has no local channels".into()))?;
    let l_total = sp.local.len() + sp.global.len();
    let mut z = DMatrix::zeros(q, l_total);
    for (l, (post, eps)) in sp.local.iter().zip(&noise.local).enumerate() {
        if eps.len() != q {
            return Err(Error::Shape(format!("local noise has length {}, expected {q}", eps.len())));
        }
        let chol = cholesky_with_retry(&post.cov.entries)?;
        let col = &post.mean + chol.l_dirty().lower_triangle() * eps;
        z.set_column(l, &col);
    }
    for (g, (post, eps)) in sp.global.iter().zip(&noise.global).enumerate() {
        let v = post.mean + post.var.sqrt() * eps;
        z.column_mut(sp.local.len() + g).fill(v);
    }
    Ok(z)
}

/// `Σ_q Σ_l log N(z_ql | μ_ql, σ_ql²)`.
pub fn log_qtilde(enc: &EncoderOutput, z: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(enc.means.shape(), z.shape());
    z.iter()
        .zip(enc.means.iter())
        .zip(enc.stds.iter())
        .map(|((&z, &m), &s)| normal_logpdf(z, m, s * s))
        .sum()
}

/// Log prior density of a latent matrix under the factorized prior.
///
/// Each global channel is a single scalar per subset, read from the first row.
pub fn log_prior(z: &DMatrix<f64>, k: &CovMatrix, cfg: &LatentConfig) -> Result<f64> {
    let mut total = 0.0;
    for l in 0..cfg.local_channels {
        total += gp::mvn_logpdf_zero_mean(&z.column(l).into_owned(), &k.entries)?;
    }
    for l in cfg.local_channels..cfg.total_channels {
        total += normal_logpdf(z[(0, l)], 0.0, 1.0);
    }
    Ok(total)
}

/// Log density of a latent matrix under the structured posterior.
pub fn log_posterior_density(sp: &SubsetPosterior, z: &DMatrix<f64>) -> Result<f64> {
    let mut total = 0.0;
    for (l, post) in sp.local.iter().enumerate() {
        let centered = z.column(l) - &post.mean;
        total += gp::mvn_logpdf_zero_mean(&centered, &post.cov.entries)?;
    }
    for (g, post) in sp.global.iter().enumerate() {
        total += normal_logpdf(z[(0, sp.local.len() + g)], post.mean, post.var);
    }
    Ok(total)
}

/// Both sides of `q = q̃ · prior / Z` evaluated at `z`.
///
/// Returns `(log q̃(z) + log prior(z) - log Z, log q(z))`; they agree for any
/// `z` whose global columns are constant.
pub fn pointwise_identity_check(
    sp: &SubsetPosterior,
    enc: &EncoderOutput,
    k: &CovMatrix,
    cfg: &LatentConfig,
    z: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    let lhs = log_qtilde(enc, z) + log_prior(z, k, cfg)? - sp.log_z_total;
    let rhs = log_posterior_density(sp, z)?;
    Ok((lhs, rhs))
}
