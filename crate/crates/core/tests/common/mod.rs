//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use fgpvae::data::{RawDigit, RotatedDataset};
use fgpvae::data::DigitSubset;
use fgpvae::gp::AuxPoint;
use fgpvae::nets::Image;
use fgpvae::training::elbo::{self, ElboNoise};
use fgpvae::training::{ModelParams, PriorKind, TrainConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `log N(x | mean, cov)` through an LU determinant and an explicit inverse.
pub fn dense_mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = x.len() as f64;
    let lu = cov.clone().lu();
    let det = lu.determinant();
    assert!(det > 0.0, "oracle covariance not positive definite");
    let inv = lu.try_inverse().expect("oracle covariance singular");
    let d = x - mean;
    -0.5 * (n * LN_2PI + det.ln() + (d.transpose() * inv * &d)[(0, 0)])
}

pub fn scalar_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean).powi(2) / var)
}

/// Periodic kernel written out from its definition.
pub fn oracle_kernel(w1: f64, w2: f64, amplitude: f64, lengthscale: f64) -> f64 {
    let s = (w1 - w2).abs().sin();
    amplitude * amplitude * (-2.0 * s * s / (lengthscale * lengthscale)).exp()
}

/// Shared-scalar marginal `log ∫ N(a|0,1) ∏ N(μ_q | a, s_q²) da` by dense
/// joint Gaussian: `μ ~ N(0, 11ᵀ + diag(s²))`.
pub fn oracle_global_log_z(means: &[f64], stds: &[f64]) -> f64 {
    let q = means.len();
    let cov = DMatrix::from_fn(q, q, |i, j| 1.0 + if i == j { stds[i] * stds[i] } else { 0.0 });
    dense_mvn_logpdf(&DVector::from_column_slice(means), &DVector::zeros(q), &cov)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Smooth blob images with distinct shapes, labelled `label`.
pub fn synthetic_raws(n: usize, side: usize, label: u8, seed: u64) -> Vec<RawDigit> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let cx = r.gen_range(0.35..0.65) * side as f64;
            let cy = r.gen_range(0.3..0.5) * side as f64;
            let sx = r.gen_range(0.08..0.2) * side as f64;
            let sy = r.gen_range(0.15..0.3) * side as f64;
            let px = (0..side * side)
                .map(|k| {
                    let (y, x) = ((k / side) as f64, (k % side) as f64);
                    (-(x - cx).powi(2) / (2.0 * sx * sx) - (y - cy).powi(2) / (2.0 * sy * sy)).exp()
                })
                .collect();
            RawDigit {
                pixels: Image::new(side, side, px).unwrap(),
                label,
            }
        })
        .collect()
}

pub fn toy_dataset(p: usize, q: usize, side: usize, seed: u64) -> RotatedDataset {
    let raws = synthetic_raws(p + 2, side, 3, seed);
    fgpvae::data::build_rotated_dataset(&raws, 3, p, q, seed).unwrap()
}

/// Model with every parameter drawn uniformly from `[-scale, scale]`.
pub fn random_model(side: usize, latent: usize, local: usize, scale: f64, seed: u64) -> ModelParams {
    let cfg = TrainConfig {
        latent_channels: latent,
        local_channels: local,
        ..TrainConfig::default()
    };
    let mut r = rng(seed);
    let mut m = ModelParams::init(side, side, &cfg, &mut r).unwrap();
    for v in m.encoder.params.values_mut().iter_mut().chain(m.decoder.params.values_mut()) {
        *v = r.gen_range(-scale..scale);
    }
    m
}

pub fn repo_data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn mnist_paths() -> (PathBuf, PathBuf) {
    let d = repo_data_dir();
    (
        d.join("mnist-5k-images-idx3-ubyte.gz"),
        d.join("mnist-5k-labels-idx1-ubyte.gz"),
    )
}

/// Relative error with the denominator floored at `floor`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub const FD_STEP: f64 = 1e-5;
const H: f64 = FD_STEP;

pub fn toy_subset(seed: u64) -> DigitSubset {
    let mut r = rng(seed);
    let angles = [0.3, 1.9];
    DigitSubset {
        digit: 0,
        points: angles.iter().map(|&w| AuxPoint::new(0, w)).collect(),
        images: (0..2)
            .map(|_| Image::new(4, 4, (0..16).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap())
            .collect(),
        indices: vec![0, 1],
    }
}

pub fn negative_elbo(model: &ModelParams, s: &DigitSubset, noise: &ElboNoise, w: f64) -> f64 {
    let p = elbo::subset_elbo(model, s, noise).unwrap();
    -(w * p.log_lik - p.log_qtilde + p.log_z)
}

/// Worst relative error over every network weight and both kernel parameters.
pub fn elbo_gradient_audit(seed: u64, w: f64, prior: PriorKind) -> f64 {
    let mut model = random_model(4, 2, 1, 0.6, seed);
    model.prior = prior;
    let s = toy_subset(seed + 100);
    let noise = ElboNoise::sample(&mut rng(seed + 200), 2, &model);
    let (_, g) = elbo::subset_loss_grad(&model, &s, &noise, w, true).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..model.encoder.params.len() {
        let v = model.encoder.params.values()[i];
        model.encoder.params.values_mut()[i] = v + H;
        let up = negative_elbo(&model, &s, &noise, w);
        model.encoder.params.values_mut()[i] = v - H;
        let dn = negative_elbo(&model, &s, &noise, w);
        model.encoder.params.values_mut()[i] = v;
        worst = worst.max(rel_err(g.encoder[i], (up - dn) / (2.0 * H), 1e-4));
    }
    for i in 0..model.decoder.params.len() {
        let v = model.decoder.params.values()[i];
        model.decoder.params.values_mut()[i] = v + H;
        let up = negative_elbo(&model, &s, &noise, w);
        model.decoder.params.values_mut()[i] = v - H;
        let dn = negative_elbo(&model, &s, &noise, w);
        model.decoder.params.values_mut()[i] = v;
        worst = worst.max(rel_err(g.decoder[i], (up - dn) / (2.0 * H), 1e-4));
    }
    let base = model.kernel;
    for (j, analytic) in g.kernel.iter().enumerate() {
        let at = |d: f64| {
            let mut m = model.clone();
            if j == 0 {
                m.kernel.amplitude = base.amplitude + d;
            } else {
                m.kernel.lengthscale = base.lengthscale + d;
            }
            negative_elbo(&m, &s, &noise, w)
        };
        let fd = (at(H) - at(-H)) / (2.0 * H);
        worst = worst.max(rel_err(*analytic, fd, 1e-4));
    }
    worst
}

/// Worst relative errors of the analytic `log Z` gradients w.r.t. encoder
/// means and stds, over subsets of one to five images.
pub fn log_z_gradient_audit(seed: u64) -> (f64, f64) {
    use fgpvae::gp::{build_local_cov, DEFAULT_JITTER};
    use fgpvae::training::elbo::log_z_with_grad;
    let mut r = rng(seed);
    let (mut worst_m, mut worst_s): (f64, f64) = (0.0, 0.0);
    for q in 1..=5 {
        let l = 3;
        let means = DMatrix::from_fn(q, l, |_, _| r.gen_range(-2.0..2.0));
        let stds = DMatrix::from_fn(q, l, |_, _| r.gen_range(0.2..1.5));
        let pts: Vec<AuxPoint> = (0..q).map(|i| AuxPoint::new(0, 0.4 * i as f64 + r.gen_range(0.0..0.3))).collect();
        let k = build_local_cov(&pts, &Default::default(), DEFAULT_JITTER).unwrap();
        let f = |mm: &DMatrix<f64>, ss: &DMatrix<f64>| log_z_with_grad(mm, ss, &k, 2).unwrap().0;
        let (_, gm, gs) = log_z_with_grad(&means, &stds, &k, 2).unwrap();
        for idx in 0..means.len() {
            let (mut up, mut dn) = (means.clone(), means.clone());
            up[idx] += H;
            dn[idx] -= H;
            worst_m = worst_m.max(rel_err(gm[idx], (f(&up, &stds) - f(&dn, &stds)) / (2.0 * H), 1e-4));
            let (mut up, mut dn) = (stds.clone(), stds.clone());
            up[idx] += H;
            dn[idx] -= H;
            worst_s = worst_s.max(rel_err(gs[idx], (f(&means, &up) - f(&means, &dn)) / (2.0 * H), 1e-4));
        }
    }
    (worst_m, worst_s)
}
