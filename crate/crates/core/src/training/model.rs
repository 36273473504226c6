use std::path::Path;

use rand::Rng;

use super::{GecoState, TrainConfig};
use crate::error::{Error, Result};
use crate::gp::{build_local_cov, AuxPoint, CovMatrix, KernelParams, DEFAULT_JITTER};
use crate::nets::checkpoint::{load_tensors, save_tensors, NamedTensor};
use crate::nets::{Decoder, Encoder, NetArch, NetParams};
use crate::posterior::LatentConfig;

/// Latent prior family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    /// Periodic GP over angles in the local channels, one shared scalar per
    /// digit in the global channels.
    Factorized,
    /// Independent standard normal for every image and channel (ablation).
    Identity,
}

/// Everything needed to encode, infer and decode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub latent: LatentConfig,
    pub kernel: KernelParams,
    pub sigma_y: f64,
    pub prior: PriorKind,
    pub geco: GecoState,
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(height: usize, width: usize, cfg: &TrainConfig, rng: &mut R) -> Result<Self> {
        let latent = cfg.latent_config()?;
        let arch = NetArch::new(height, width, latent.total_channels)?;
        let encoder = Encoder::init(arch, rng);
        let decoder = Decoder::init(arch, rng);
        Ok(Self {
            encoder,
            decoder,
            latent,
            kernel: cfg.kernel_params()?,
            sigma_y: cfg.sigma_y,
            prior: if cfg.ablation_identity_prior {
                PriorKind::Identity
            } else {
                PriorKind::Factorized
            },
            geco: GecoState::default(),
        })
    }

    pub fn arch(&self) -> NetArch {
        self.encoder.arch
    }

    /// Channel split used for inference: the identity prior treats every
    /// channel as an independent per-image GP with unit covariance.
    pub fn posterior_config(&self) -> LatentConfig {
        match self.prior {
            PriorKind::Factorized => self.latent,
            PriorKind::Identity => LatentConfig {
                total_channels: self.latent.total_channels,
                local_channels: self.latent.total_channels,
            },
        }
    }

    /// Prior covariance shared by the GP channels of one subset.
    pub fn subset_cov(&self, points: &[AuxPoint]) -> Result<CovMatrix> {
        match self.prior {
            PriorKind::Factorized => build_local_cov(points, &self.kernel, DEFAULT_JITTER),
            PriorKind::Identity => Ok(CovMatrix::identity(points.len())),
        }
    }

    pub fn num_params(&self) -> usize {
        self.encoder.params.len() + self.decoder.params.len()
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        let arch = self.arch();
        out.push(NamedTensor::new(
            "meta.image",
            vec![2],
            vec![arch.height as f64, arch.width as f64],
        ));
        out.push(NamedTensor::new(
            "meta.latent",
            vec![2],
            vec![self.latent.total_channels as f64, self.latent.local_channels as f64],
        ));
        out.push(NamedTensor::scalar(
            "meta.identity_prior",
            if self.prior == PriorKind::Identity { 1.0 } else { 0.0 },
        ));
        out.push(NamedTensor::scalar("kernel.amplitude", self.kernel.amplitude));
        out.push(NamedTensor::scalar("kernel.lengthscale", self.kernel.lengthscale));
        out.push(NamedTensor::scalar("likelihood.sigma_y", self.sigma_y));
        out.push(NamedTensor::scalar("geco.multiplier", self.geco.lagrange_multiplier));
        out.push(NamedTensor::scalar("geco.constraint_ma", self.geco.constraint_ma));
        for (prefix, params) in [("enc", &self.encoder.params), ("dec", &self.decoder.params)] {
            for e in params.entries() {
                out.push(NamedTensor::new(
                    format!("{prefix}.{}", e.name),
                    e.shape.clone(),
                    params.view(&e.name).to_vec(),
                ));
            }
        }
        out
    }

    pub fn from_tensors(tensors: &[NamedTensor]) -> Result<Self> {
        let find = |name: &str| -> Result<&NamedTensor> {
            tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Shape(format!("checkpoint lacks {name}")))
        };
        let scalar = |name: &str| -> Result<f64> { Ok(find(name)?.values[0]) };
        let image = &find("meta.image")?.values;
        let lat = &find("meta.latent")?.values;
        let latent = LatentConfig::new(lat[0] as usize, lat[1] as usize)?;
        let arch = NetArch::new(image[0] as usize, image[1] as usize, latent.total_channels)?;
        let fill = |prefix: &str, mut params: NetParams| -> Result<NetParams> {
            for e in params.entries().to_vec() {
                let t = find(&format!("{prefix}.{}", e.name))?;
                if t.shape != e.shape {
                    return Err(Error::Shape(format!(
                        "{prefix}.{} has shape {:?}, expected {:?}",
                        e.name, t.shape, e.shape
                    )));
                }
                params.view_mut(&e.name).copy_from_slice(&t.values);
            }
            Ok(params)
        };
        Ok(Self {
            encoder: Encoder {
                arch,
                params: fill("enc", Encoder::layout(arch))?,
            },
            decoder: Decoder {
                arch,
                params: fill("dec", Decoder::layout(arch))?,
            },
            latent,
            kernel: KernelParams::new(scalar("kernel.amplitude")?, scalar("kernel.lengthscale")?)?,
            sigma_y: scalar("likelihood.sigma_y")?,
            prior: if scalar("meta.identity_prior")? != 0.0 {
                PriorKind::Identity
            } else {
                PriorKind::Factorized
            },
            geco: GecoState {
                lagrange_multiplier: scalar("geco.multiplier")?,
                constraint_ma: scalar("geco.constraint_ma")?,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_tensors(path, &self.to_tensors())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensors(&load_tensors(path)?)
    }
}
