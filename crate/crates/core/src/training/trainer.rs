use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::elbo::{subset_loss_grad, ElboNoise, ElboParts, Gradient};
use super::{geco_step, Adam, ModelParams, PriorKind, TrainConfig};
use crate::data::DigitSubset;
use crate::error::{Error, Result};
use crate::gp::KernelParams;

pub const METRICS_HEADER: &str = "epoch,elbo,mse,geco_multiplier,seconds";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean unweighted ELBO per subset.
    pub elbo: f64,
    /// Mean per-pixel reconstruction MSE.
    pub mse: f64,
    pub geco_multiplier: f64,
    pub seconds: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.elbo, self.mse, self.geco_multiplier, self.seconds
        )
    }
}

/// Optimizer, GECO and sampling state around a [`ModelParams`].
pub struct Trainer {
    pub model: ModelParams,
    pub cfg: TrainConfig,
    adam_enc: Adam,
    adam_dec: Adam,
    /// Adam over log amplitude and log lengthscale.
    adam_kernel: Adam,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: ModelParams, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let lr = cfg.learning_rate;
        Ok(Self {
            adam_enc: Adam::new(model.encoder.params.len(), lr),
            adam_dec: Adam::new(model.decoder.params.len(), lr),
            adam_kernel: Adam::new(2, lr),
            // offset keeps the sampling stream apart from the init stream
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a11),
            model,
            cfg,
            epoch: 0,
        })
    }

    /// Fresh model initialized from `cfg.seed`.
    pub fn from_config(height: usize, width: usize, cfg: TrainConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = ModelParams::init(height, width, &cfg, &mut rng)?;
        Self::new(model, cfg)
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn train_epoch(&mut self, subsets: &[DigitSubset]) -> Result<EpochMetrics> {
        if subsets.is_empty() {
            return Err(Error::Shape("no training subsets".into()));
        }
        let start = Instant::now();
        let mut order: Vec<usize> = (0..subsets.len()).collect();
        order.shuffle(&mut self.rng);
        let mut elbo_sum = 0.0;
        let mut mse_sum = 0.0;
        for chunk in order.chunks(self.cfg.subsets_per_batch) {
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = &subsets[i];
                let keep = self.cfg.rotations_per_subset.min(s.len());
                let mut pos = index::sample(&mut self.rng, s.len(), keep).into_vec();
                pos.sort_unstable();
                let sub = s.select(&pos);
                let noise = ElboNoise::sample(&mut self.rng, sub.len(), &self.model);
                batch.push((sub, noise));
            }
            let results = self.batch_grads(&batch)?;
            let scale = 1.0 / batch.len() as f64;
            let mut grad = Gradient::zeros(&self.model);
            let mut batch_mse = 0.0;
            for (parts, g) in &results {
                grad.add_scaled(g, scale);
                batch_mse += parts.recon_mse * scale;
                elbo_sum += parts.elbo;
                mse_sum += parts.recon_mse;
            }
            if !grad.is_finite() {
                return Err(Error::NonFinite(format!("gradient in epoch {}", self.epoch + 1)));
            }
            self.adam_enc.step(self.model.encoder.params.values_mut(), &grad.encoder);
            self.adam_dec.step(self.model.decoder.params.values_mut(), &grad.decoder);
            if self.cfg.learn_kernel && self.model.prior == PriorKind::Factorized {
                let kp = self.model.kernel;
                let mut logs = [kp.amplitude.ln(), kp.lengthscale.ln()];
                let g = [grad.kernel[0] * kp.amplitude, grad.kernel[1] * kp.lengthscale];
                self.adam_kernel.step(&mut logs, &g);
                self.model.kernel = KernelParams::new(logs[0].exp(), logs[1].exp())?;
            }
            self.model.geco = geco_step(self.model.geco, batch_mse, &self.cfg);
        }
        self.epoch += 1;
        let n = subsets.len() as f64;
        Ok(EpochMetrics {
            epoch: self.epoch,
            elbo: elbo_sum / n,
            mse: mse_sum / n,
            geco_multiplier: self.model.geco.lagrange_multiplier,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Per-subset results in batch order, computed on up to `cfg.threads` workers.
    fn batch_grads(&self, batch: &[(DigitSubset, ElboNoise)]) -> Result<Vec<(ElboParts, Gradient)>> {
        let weight = self.model.geco.lagrange_multiplier;
        let want_kernel = self.cfg.learn_kernel;
        let model = &self.model;
        let run = |(s, n): &(DigitSubset, ElboNoise)| -> Result<(ElboParts, Gradient)> {
            let out = subset_loss_grad(model, s, n, weight, want_kernel);
            match out {
                Err(Error::NonFinite(_)) | Err(Error::Cholesky { .. }) => Err(Error::NonFinite(format!(
                    "loss for digit {} in epoch {}",
                    s.digit,
                    self.epoch + 1
                ))),
                other => other,
            }
        };
        let threads = self.cfg.threads.min(batch.len()).max(1);
        if threads == 1 {
            return batch.iter().map(run).collect();
        }
        let per = batch.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .chunks(per)
                .map(|part| scope.spawn(move || part.iter().map(run).collect::<Result<Vec<_>>>()))
                .collect();
            let mut out = Vec::with_capacity(batch.len());
            for h in handles {
                out.extend(h.join().expect("gradient worker panicked")?);
            }
            Ok(out)
        })
    }

    /// Runs `cfg.epochs - epochs_done()` more epochs, calling `on_epoch` after each.
    pub fn fit<F>(&mut self, subsets: &[DigitSubset], mut on_epoch: F) -> Result<Vec<EpochMetrics>>
    where
        F: FnMut(&EpochMetrics, &ModelParams) -> Result<()>,
    {
        let mut log = Vec::new();
        while self.epoch < self.cfg.epochs {
            let m = self.train_epoch(subsets)?;
            on_epoch(&m, &self.model)?;
            log.push(m);
        }
        Ok(log)
    }
}

/// Trains a fresh model on `subsets` for `cfg.epochs` epochs.
pub fn train(subsets: &[DigitSubset], height: usize, width: usize, cfg: &TrainConfig) -> Result<(ModelParams, Vec<EpochMetrics>)> {
    let mut t = Trainer::from_config(height, width, cfg.clone())?;
    let log = t.fit(subsets, |_, _| Ok(()))?;
    Ok((t.model, log))
}

pub fn metrics_csv(log: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for m in log {
        s.push_str(&m.csv_row());
        s.push('\n');
    }
    s
}
