//! Conditional generation and held-out error.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ModelParams, PriorKind};
use crate::data::{DigitSubset, RotatedDataset, Split};
use crate::error::{Error, Result};
use crate::gp::{build_local_cov, cholesky_with_retry, gp_predict, AuxPoint, DEFAULT_JITTER};
use crate::nets::Image;
use crate::posterior::global_conjugate;

/// Context images used per unseen digit when extrapolating.
pub const EXTRAPOLATION_CONTEXT: usize = 11;

/// Predictive latent means (`targets x L`) for one digit given its context images.
pub fn predict_latents(model: &ModelParams, context: &DigitSubset, targets: &[f64]) -> Result<DMatrix<f64>> {
    let l_total = model.latent.total_channels;
    if context.is_empty() {
        return Err(Error::MissingContext { digit: context.digit });
    }
    let mut out = DMatrix::zeros(targets.len(), l_total);
    if model.prior == PriorKind::Identity {
        return Ok(out);
    }
    let q = context.len();
    let mut means = DMatrix::zeros(q, l_total);
    let mut stds = DMatrix::zeros(q, l_total);
    for (i, img) in context.images.iter().enumerate() {
        let (m, s) = model.encoder.encode(img)?;
        for l in 0..l_total {
            means[(i, l)] = m[l];
            stds[(i, l)] = s[l];
        }
    }
    let k = model.subset_cov(&context.points)?;
    let tpoints: Vec<AuxPoint> = targets.iter().map(|&w| AuxPoint::new(context.digit, w)).collect();
    let col = |mat: &DMatrix<f64>, l: usize| -> Vec<f64> { mat.column(l).iter().copied().collect() };
    for l in 0..model.latent.local_channels {
        let (mu, _) = gp_predict(&k, &context.points, &col(&means, l), &col(&stds, l), &tpoints, &model.kernel)?;
        for (t, v) in mu.into_iter().enumerate() {
            out[(t, l)] = v;
        }
    }
    for l in model.latent.local_channels..l_total {
        let g = global_conjugate(&col(&means, l), &col(&stds, l));
        out.column_mut(l).fill(g.mean);
    }
    Ok(out)
}

/// Decodes the predictive latent means at each target angle.
pub fn generate(model: &ModelParams, context: &DigitSubset, targets: &[f64]) -> Result<Vec<Image>> {
    let z = predict_latents(model, context, targets)?;
    (0..targets.len())
        .map(|t| model.decoder.decode(&z.row(t).iter().copied().collect::<Vec<_>>()))
        .collect()
}

/// Samples a new digit from the prior at `targets` and decodes it.
pub fn generate_from_prior<R: Rng + ?Sized>(model: &ModelParams, targets: &[f64], rng: &mut R) -> Result<Vec<Image>> {
    let t = targets.len();
    let l_total = model.latent.total_channels;
    let mut z = DMatrix::zeros(t, l_total);
    if t == 0 {
        return Ok(Vec::new());
    }
    let points: Vec<AuxPoint> = targets.iter().map(|&w| AuxPoint::new(0, w)).collect();
    let cfg = model.posterior_config();
    let chol = match model.prior {
        PriorKind::Factorized => cholesky_with_retry(&build_local_cov(&points, &model.kernel, DEFAULT_JITTER)?.entries)?.l(),
        PriorKind::Identity => DMatrix::identity(t, t),
    };
    for l in 0..cfg.local_channels {
        let eps = nalgebra::DVector::from_fn(t, |_, _| rng.sample::<f64, _>(StandardNormal));
        z.set_column(l, &(&chol * eps));
    }
    for l in cfg.local_channels..l_total {
        let v: f64 = rng.sample(StandardNormal);
        z.column_mut(l).fill(v);
    }
    (0..t)
        .map(|i| model.decoder.decode(&z.row(i).iter().copied().collect::<Vec<_>>()))
        .collect()
}

/// Squared-error totals over a set of predictions.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct MseAccumulator {
    sum: f64,
    count: usize,
}

impl MseAccumulator {
    fn add(&mut self, pred: &Image, truth: &Image) {
        self.sum += pred.mse(truth);
        self.count += 1;
    }

    fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.sum / self.count as f64
        }
    }
}

/// Predicts `targets` of one digit from `context` and accumulates per-pixel error.
fn score(model: &ModelParams, context: &DigitSubset, targets: &DigitSubset, acc: &mut MseAccumulator) -> Result<()> {
    let angles: Vec<f64> = targets.points.iter().map(|p| p.angle).collect();
    let preds = generate(model, context, &angles)?;
    for (p, y) in preds.iter().zip(&targets.images) {
        acc.add(p, y);
    }
    Ok(())
}

/// Mean per-pixel MSE over all test images, each predicted from its digit's training images.
pub fn evaluate(model: &ModelParams, dataset: &RotatedDataset) -> Result<f64> {
    let mut acc = MseAccumulator::default();
    for d in &dataset.digits {
        if !d.splits.contains(&Split::Test) {
            continue;
        }
        let full = dataset.full_subset(d.id).expect("digit listed in dataset");
        let ctx: Vec<usize> = (0..full.len()).filter(|&a| d.splits[a] == Split::Train).collect();
        let tgt: Vec<usize> = (0..full.len()).filter(|&a| d.splits[a] == Split::Test).collect();
        if ctx.is_empty() {
            return Err(Error::MissingContext { digit: d.id });
        }
        score(model, &full.select(&ctx), &full.select(&tgt), &mut acc)?;
    }
    if acc.count == 0 {
        return Err(Error::Shape("dataset has no test images".into()));
    }
    Ok(acc.mean())
}

/// Mean per-pixel MSE on digits never used in training.
///
/// For each such digit `contexts` angles are drawn (seeded) as context and
/// the remaining angles are predicted.
pub fn extrapolate_eval(model: &ModelParams, dataset: &RotatedDataset, contexts: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = MseAccumulator::default();
    for d in &dataset.digits {
        if !d.splits.iter().all(|&s| s == Split::Extrapolation) {
            continue;
        }
        let full = dataset.full_subset(d.id).expect("digit listed in dataset");
        if contexts == 0 {
            return Err(Error::MissingContext { digit: d.id });
        }
        let take = contexts.min(full.len());
        let mut ctx = index::sample(&mut rng, full.len(), take).into_vec();
        ctx.sort_unstable();
        let tgt: Vec<usize> = (0..full.len()).filter(|a| !ctx.contains(a)).collect();
        if tgt.is_empty() {
            continue;
        }
        score(model, &full.select(&ctx), &full.select(&tgt), &mut acc)?;
    }
    if acc.count == 0 {
        return Err(Error::Shape("dataset has no extrapolation targets".into()));
    }
    Ok(acc.mean())
}
