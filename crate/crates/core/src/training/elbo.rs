//! Single-sample estimate of one subset's ELBO and its reverse pass.
//!
//! The estimate is `Σ_q [log p(y_q | z_q) - log q̃(z_q | y_q)] + log Z` with `z`
//! drawn from the structured posterior. Local channels are sampled pathwise:
//! with a prior draw `f = chol(K) ε₁` and an observation-noise draw
//! `e = σ ∘ ε₂`, the vector `z = f + K (K + D)⁻¹ (μ - f - e)` has exactly the
//! GP posterior mean and covariance, and only `K + D` is ever factorized.
//! That keeps gradients well conditioned when `K` is rank deficient (angles
//! half a turn apart have identical kernel rows).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use super::model::ModelParams;
use crate::data::DigitSubset;
use crate::error::{Error, Result};
use crate::gp::{self, cholesky_with_retry, local_kernel_with_grad, normal_logpdf, AuxPoint, CovMatrix, LN_2PI};
use crate::nets::{gaussian_loglik, gaussian_loglik_grad, DecoderTape, EncoderTape, Image};

/// Standard-normal draws for one subset estimate.
///
/// `prior` and `obs` are `Q x C` for the `C` GP channels; `global` holds one
/// draw per global channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboNoise {
    pub prior: DMatrix<f64>,
    pub obs: DMatrix<f64>,
    pub global: Vec<f64>,
}

impl ElboNoise {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, q: usize, model: &ModelParams) -> Self {
        let cfg = model.posterior_config();
        let c = cfg.local_channels;
        let mut draw = || -> f64 { rng.sample(StandardNormal) };
        let prior = DMatrix::from_fn(q, c, |_, _| draw());
        let obs = DMatrix::from_fn(q, c, |_, _| draw());
        let global = (0..cfg.global_channels()).map(|_| draw()).collect();
        Self { prior, obs, global }
    }

    pub fn zeros(q: usize, model: &ModelParams) -> Self {
        let cfg = model.posterior_config();
        Self {
            prior: DMatrix::zeros(q, cfg.local_channels),
            obs: DMatrix::zeros(q, cfg.local_channels),
            global: vec![0.0; cfg.global_channels()],
        }
    }

    /// Reorders rows so that row `i` of the result is row `perm[i]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        let c = self.prior.ncols();
        Self {
            prior: DMatrix::from_fn(perm.len(), c, |i, j| self.prior[(perm[i], j)]),
            obs: DMatrix::from_fn(perm.len(), c, |i, j| self.obs[(perm[i], j)]),
            global: self.global.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboParts {
    pub elbo: f64,
    pub log_lik: f64,
    pub log_qtilde: f64,
    pub log_z: f64,
    /// Per-pixel squared error of the decoded means against the inputs.
    pub recon_mse: f64,
}

/// Gradient of `-(w · log_lik - log_qtilde + log_z)` for a recon weight `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub encoder: Vec<f64>,
    pub decoder: Vec<f64>,
    /// Derivatives w.r.t. kernel amplitude and lengthscale.
    pub kernel: [f64; 2],
}

impl Gradient {
    pub fn zeros(model: &ModelParams) -> Self {
        Self {
            encoder: vec![0.0; model.encoder.params.len()],
            decoder: vec![0.0; model.decoder.params.len()],
            kernel: [0.0; 2],
        }
    }

    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        for (a, b) in self.encoder.iter_mut().zip(&other.encoder) {
            *a += scale * b;
        }
        for (a, b) in self.decoder.iter_mut().zip(&other.decoder) {
            *a += scale * b;
        }
        for (a, b) in self.kernel.iter_mut().zip(&other.kernel) {
            *a += scale * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.iter().chain(&self.decoder).chain(&self.kernel).all(|v| v.is_finite())
    }
}

struct LocalChannel {
    chol_a: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    beta: DVector<f64>,
}

struct GlobalChannel {
    var: f64,
    mean: f64,
    weighted: f64,
}

/// Latent-level part of the estimate: structured posterior, sample, `log q̃`, `log Z`.
pub struct LatentTape {
    means: DMatrix<f64>,
    stds: DMatrix<f64>,
    k: DMatrix<f64>,
    chol_k: DMatrix<f64>,
    prior_noise: DMatrix<f64>,
    obs_noise: DMatrix<f64>,
    global_noise: Vec<f64>,
    local: Vec<LocalChannel>,
    global: Vec<GlobalChannel>,
    pub z: DMatrix<f64>,
    pub log_z: f64,
    pub log_qtilde: f64,
}

/// Gradients of a latent-level loss w.r.t. encoder outputs and the prior covariance.
pub struct LatentGrad {
    pub means: DMatrix<f64>,
    pub stds: DMatrix<f64>,
    pub cov: Option<DMatrix<f64>>,
}

impl LatentTape {
    /// `means`/`stds` are `Q x L`; the first `noise.prior.ncols()` channels use
    /// covariance `k`, the rest are global.
    pub fn forward(means: DMatrix<f64>, stds: DMatrix<f64>, k: &CovMatrix, noise: &ElboNoise) -> Result<Self> {
        let (q, l_total) = means.shape();
        let n_gp = noise.prior.ncols();
        if stds.shape() != (q, l_total)
            || k.dim() != q
            || noise.prior.nrows() != q
            || noise.obs.shape() != (q, n_gp)
            || n_gp + noise.global.len() != l_total
        {
            return Err(Error::Shape("latent inputs and noise disagree".into()));
        }
        let chol_k = cholesky_with_retry(&k.entries)?.l();
        let mut z = DMatrix::zeros(q, l_total);
        let mut log_z = 0.0;
        let mut local = Vec::with_capacity(n_gp);
        for l in 0..n_gp {
            let mu = means.column(l).into_owned();
            let s = stds.column(l).into_owned();
            let mut a = k.entries.clone();
            for i in 0..q {
                a[(i, i)] += s[i] * s[i];
            }
            let chol_a = cholesky_with_retry(&a)?;
            let alpha = chol_a.solve(&mu);
            let half_logdet: f64 = chol_a.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
            log_z += -0.5 * mu.dot(&alpha) - half_logdet - 0.5 * q as f64 * LN_2PI;
            let f = &chol_k * noise.prior.column(l);
            let e = s.component_mul(&noise.obs.column(l));
            let r = &mu - &f - e;
            let beta = chol_a.solve(&r);
            z.set_column(l, &(f + &k.entries * &beta));
            local.push(LocalChannel { chol_a, alpha, beta });
        }
        let mut global = Vec::with_capacity(noise.global.len());
        for (g, &eps) in noise.global.iter().enumerate() {
            let l = n_gp + g;
            let mut precision = 1.0;
            let mut weighted = 0.0;
            for i in 0..q {
                let v = stds[(i, l)] * stds[(i, l)];
                precision += 1.0 / v;
                weighted += means[(i, l)] / v;
                log_z += normal_logpdf(0.0, means[(i, l)], v);
            }
            let var = 1.0 / precision;
            let mean = var * weighted;
            log_z += normal_logpdf(0.0, 0.0, 1.0) - normal_logpdf(0.0, mean, var);
            z.column_mut(l).fill(mean + var.sqrt() * eps);
            global.push(GlobalChannel { var, mean, weighted });
        }
        let log_qtilde = z
            .iter()
            .zip(means.iter())
            .zip(stds.iter())
            .map(|((&z, &m), &s)| normal_logpdf(z, m, s * s))
            .sum();
        Ok(Self {
            means,
            stds,
            k: k.entries.clone(),
            chol_k,
            prior_noise: noise.prior.clone(),
            obs_noise: noise.obs.clone(),
            global_noise: noise.global.clone(),
            local,
            global,
            z,
            log_z,
            log_qtilde,
        })
    }

    /// Reverse pass of `loss = upstream(z) + log_qtilde - log_z`, given `z_bar = ∂upstream/∂z`.
    ///
    /// With `want_cov` the gradient w.r.t. the prior covariance entries is
    /// also returned.
    pub fn backward(&self, z_bar_upstream: &DMatrix<f64>, want_cov: bool) -> LatentGrad {
        self.backward_weighted(z_bar_upstream, 1.0, -1.0, want_cov)
    }

    /// Reverse pass of `upstream(z) + w_q · log_qtilde + w_z · log_z`.
    pub fn backward_weighted(&self, z_bar_upstream: &DMatrix<f64>, w_q: f64, w_z: f64, want_cov: bool) -> LatentGrad {
        let (q, _) = self.means.shape();
        let mut z_bar = z_bar_upstream.clone();
        let mut mu_bar = DMatrix::zeros(q, self.means.ncols());
        let mut s_bar = DMatrix::zeros(q, self.means.ncols());

        // log q̃ = Σ -½ ln 2π - ln s - (z - μ)² / (2 s²)
        for idx in 0..self.z.len() {
            let (z, m, s) = (self.z[idx], self.means[idx], self.stds[idx]);
            let d = z - m;
            let s2 = s * s;
            z_bar[idx] += w_q * (-d / s2);
            mu_bar[idx] += w_q * (d / s2);
            s_bar[idx] += w_q * (-1.0 / s + d * d / (s2 * s));
        }

        let mut k_bar = DMatrix::<f64>::zeros(q, q);
        let mut lk_bar = DMatrix::<f64>::zeros(q, q);
        for (l, ch) in self.local.iter().enumerate() {
            let zb = z_bar.column(l).into_owned();
            let s = self.stds.column(l);
            // z = f + K β
            let mut f_bar = zb.clone();
            if want_cov {
                k_bar += &zb * ch.beta.transpose();
            }
            let beta_bar = &self.k * &zb;
            // β = A⁻¹ r
            let gamma = ch.chol_a.solve(&beta_bar);
            let mut a_bar = -&gamma * ch.beta.transpose();
            // r = μ - f - e, e = s ∘ ε₂
            f_bar -= &gamma;
            for i in 0..q {
                mu_bar[(i, l)] += gamma[i];
                s_bar[(i, l)] += -gamma[i] * self.obs_noise[(i, l)];
            }
            if want_cov {
                // f = chol(K) ε₁
                lk_bar += &f_bar * self.prior_noise.column(l).transpose();
            }
            // log Z_l = -½ μᵀα - ½ ln|A| - ...
            let a_inv = ch.chol_a.inverse();
            for i in 0..q {
                mu_bar[(i, l)] += w_z * (-ch.alpha[i]);
            }
            a_bar += (&ch.alpha * ch.alpha.transpose() - &a_inv) * (0.5 * w_z);
            for i in 0..q {
                s_bar[(i, l)] += 2.0 * s[i] * a_bar[(i, i)];
            }
            if want_cov {
                k_bar += &a_bar;
            }
        }

        let n_gp = self.local.len();
        for (g, ch) in self.global.iter().enumerate() {
            let l = n_gp + g;
            let eps = self.global_noise[g];
            let z_tot: f64 = z_bar.column(l).sum();
            let mut m_bar = z_tot;
            let mut v_bar = z_tot * eps / (2.0 * ch.var.sqrt());
            // log Z_g = Σ log N(0 | μ_q, s_q²) + ½ ln v + m² / (2v) + const
            for i in 0..q {
                let (m, s) = (self.means[(i, l)], self.stds[(i, l)]);
                mu_bar[(i, l)] += w_z * (-m / (s * s));
                s_bar[(i, l)] += w_z * (-1.0 / s + m * m / (s * s * s));
            }
            v_bar += w_z * (0.5 / ch.var - ch.mean * ch.mean / (2.0 * ch.var * ch.var));
            m_bar += w_z * (ch.mean / ch.var);
            // m = v h
            v_bar += m_bar * ch.weighted;
            let h_bar = m_bar * ch.var;
            // v = 1 / (1 + Σ s⁻²)
            let prec_bar = -v_bar * ch.var * ch.var;
            for i in 0..q {
                let (m, s) = (self.means[(i, l)], self.stds[(i, l)]);
                let s3 = s * s * s;
                mu_bar[(i, l)] += h_bar / (s * s);
                s_bar[(i, l)] += -2.0 * h_bar * m / s3 - 2.0 * prec_bar / s3;
            }
        }

        let cov = want_cov.then(|| k_bar + cholesky_backward(&self.chol_k, &lk_bar));
        LatentGrad {
            means: mu_bar,
            stds: s_bar,
            cov,
        }
    }
}

/// Symmetric adjoint of `A ↦ chol(A)`: given `∂loss/∂L` returns `∂loss/∂A`.
pub fn cholesky_backward(l: &DMatrix<f64>, l_bar: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut p = l.transpose() * l_bar.lower_triangle();
    for i in 0..n {
        for j in (i + 1)..n {
            p[(i, j)] = 0.0;
        }
        p[(i, i)] *= 0.5;
    }
    // S = L⁻ᵀ P L⁻¹
    let lt = l.transpose();
    let x = lt
        .solve_upper_triangular(&p)
        .expect("Cholesky factor has a zero pivot");
    let s = lt
        .solve_upper_triangular(&x.transpose())
        .expect("Cholesky factor has a zero pivot")
        .transpose();
    (&s + s.transpose()) * 0.5
}

/// Recorded forward pass of one subset estimate.
pub struct ElboTape {
    pub parts: ElboParts,
    enc: Vec<EncoderTape>,
    dec: Vec<DecoderTape>,
    latent: LatentTape,
    images: Vec<Image>,
    points: Vec<AuxPoint>,
}

impl ElboTape {
    pub fn z(&self) -> &DMatrix<f64> {
        &self.latent.z
    }

    pub fn decoded(&self) -> impl Iterator<Item = &Image> {
        self.dec.iter().map(|t| &t.output)
    }
}

pub fn forward(model: &ModelParams, subset: &DigitSubset, noise: &ElboNoise) -> Result<ElboTape> {
    if subset.is_empty() {
        return Err(Error::Shape("empty subset".into()));
    }
    gp::check_single_digit(&subset.points)?;
    let q = subset.len();
    let l_total = model.latent.total_channels;
    let enc = subset
        .images
        .iter()
        .map(|img| model.encoder.forward(img))
        .collect::<Result<Vec<_>>>()?;
    let means = DMatrix::from_fn(q, l_total, |i, l| enc[i].means[l]);
    let stds = DMatrix::from_fn(q, l_total, |i, l| enc[i].stds[l]);
    let k = model.subset_cov(&subset.points)?;
    let latent = LatentTape::forward(means, stds, &k, noise)?;
    let dec = (0..q)
        .map(|i| {
            let z: Vec<f64> = latent.z.row(i).iter().copied().collect();
            model.decoder.forward(&z)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut log_lik = 0.0;
    let mut sq = 0.0;
    for (t, y) in dec.iter().zip(&subset.images) {
        log_lik += gaussian_loglik(y, &t.output, model.sigma_y);
        sq += t.output.mse(y);
    }
    let elbo = log_lik - latent.log_qtilde + latent.log_z;
    let parts = ElboParts {
        elbo,
        log_lik,
        log_qtilde: latent.log_qtilde,
        log_z: latent.log_z,
        recon_mse: sq / q as f64,
    };
    if !elbo.is_finite() {
        return Err(Error::NonFinite("subset ELBO".into()));
    }
    Ok(ElboTape {
        parts,
        enc,
        dec,
        latent,
        images: subset.images.clone(),
        points: subset.points.clone(),
    })
}

/// Gradient of `-(recon_weight · log_lik - log_qtilde + log_z)`.
pub fn backward(model: &ModelParams, tape: &ElboTape, recon_weight: f64, want_kernel: bool) -> Gradient {
    let mut grad = Gradient::zeros(model);
    let (q, l_total) = tape.latent.z.shape();
    let mut z_bar = DMatrix::zeros(q, l_total);
    for (i, (t, y)) in tape.dec.iter().zip(&tape.images).enumerate() {
        let d_out: Vec<f64> = gaussian_loglik_grad(y, &t.output, model.sigma_y)
            .into_iter()
            .map(|g| -recon_weight * g)
            .collect();
        let dz = model.decoder.backward(t, &d_out, &mut grad.decoder);
        for l in 0..l_total {
            z_bar[(i, l)] = dz[l];
        }
    }
    let want_cov = want_kernel && model.prior == super::PriorKind::Factorized;
    let lg = tape.latent.backward(&z_bar, want_cov);
    for (i, t) in tape.enc.iter().enumerate() {
        let dm: Vec<f64> = lg.means.row(i).iter().copied().collect();
        let ds: Vec<f64> = lg.stds.row(i).iter().copied().collect();
        model.encoder.backward(t, &dm, &ds, &mut grad.encoder);
    }
    if let Some(k_bar) = lg.cov {
        for i in 0..q {
            for j in 0..q {
                let (_, da, dr) = local_kernel_with_grad(&tape.points[i], &tape.points[j], &model.kernel);
                grad.kernel[0] += k_bar[(i, j)] * da;
                grad.kernel[1] += k_bar[(i, j)] * dr;
            }
        }
    }
    grad
}

/// ELBO estimate without gradients.
pub fn subset_elbo(model: &ModelParams, subset: &DigitSubset, noise: &ElboNoise) -> Result<ElboParts> {
    Ok(forward(model, subset, noise)?.parts)
}

/// Estimate plus gradient of the (recon-weighted) negative ELBO.
pub fn subset_loss_grad(
    model: &ModelParams,
    subset: &DigitSubset,
    noise: &ElboNoise,
    recon_weight: f64,
    want_kernel: bool,
) -> Result<(ElboParts, Gradient)> {
    let tape = forward(model, subset, noise)?;
    let grad = backward(model, &tape, recon_weight, want_kernel);
    Ok((tape.parts, grad))
}

/// `log Z` of a subset with its gradients w.r.t. encoder means and stds.
pub fn log_z_with_grad(
    means: &DMatrix<f64>,
    stds: &DMatrix<f64>,
    k: &CovMatrix,
    local_channels: usize,
) -> Result<(f64, DMatrix<f64>, DMatrix<f64>)> {
    let q = means.nrows();
    let noise = ElboNoise {
        prior: DMatrix::zeros(q, local_channels),
        obs: DMatrix::zeros(q, local_channels),
        global: vec![0.0; means.ncols() - local_channels],
    };
    let tape = LatentTape::forward(means.clone(), stds.clone(), k, &noise)?;
    let g = tape.backward_weighted(&DMatrix::zeros(q, means.ncols()), 0.0, 1.0, false);
    Ok((tape.log_z, g.means, g.stds))
}
