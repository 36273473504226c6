use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gp::KernelParams;
use crate::posterior::LatentConfig;

/// Training hyperparameters. Every field is addressable from a config file
/// as `key = value`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub subsets_per_batch: usize,
    pub rotations_per_subset: usize,
    pub learning_rate: f64,
    pub geco_kappa: f64,
    pub geco_alpha: f64,
    pub geco_ma_decay: f64,
    pub seed: u64,
    pub ablation_identity_prior: bool,
    pub latent_channels: usize,
    pub local_channels: usize,
    /// Decoder likelihood scale.
    pub sigma_y: f64,
    pub kernel_amplitude: f64,
    pub kernel_lengthscale: f64,
    /// Optimize the kernel amplitude and lengthscale jointly with the networks.
    pub learn_kernel: bool,
    /// Write a checkpoint every this many epochs (0: only at exit).
    pub checkpoint_every: usize,
    /// Worker threads for per-subset gradients; the reduction order is fixed.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            subsets_per_batch: 20,
            rotations_per_subset: 11,
            learning_rate: 0.001,
            geco_kappa: 0.020,
            geco_alpha: 0.01,
            geco_ma_decay: 0.99,
            seed: 0,
            ablation_identity_prior: false,
            latent_channels: 16,
            local_channels: 8,
            sigma_y: 0.1,
            kernel_amplitude: 1.0,
            kernel_lengthscale: 1.0,
            learn_kernel: false,
            checkpoint_every: 0,
            threads: 1,
        }
    }
}

const KEYS: &[&str] = &[
    "epochs",
    "subsets_per_batch",
    "rotations_per_subset",
    "learning_rate",
    "geco_kappa",
    "geco_alpha",
    "geco_ma_decay",
    "seed",
    "ablation_identity_prior",
    "latent_channels",
    "local_channels",
    "sigma_y",
    "kernel_amplitude",
    "kernel_lengthscale",
    "learn_kernel",
    "checkpoint_every",
    "threads",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} = {value:?}")))
}

impl TrainConfig {
    pub fn keys() -> &'static [&'static str] {
        KEYS
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "subsets_per_batch" => self.subsets_per_batch = parse(key, value)?,
            "rotations_per_subset" => self.rotations_per_subset = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "geco_kappa" => self.geco_kappa = parse(key, value)?,
            "geco_alpha" => self.geco_alpha = parse(key, value)?,
            "geco_ma_decay" => self.geco_ma_decay = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "ablation_identity_prior" => self.ablation_identity_prior = parse(key, value)?,
            "latent_channels" => self.latent_channels = parse(key, value)?,
            "local_channels" => self.local_channels = parse(key, value)?,
            "sigma_y" => self.sigma_y = parse(key, value)?,
            "kernel_amplitude" => self.kernel_amplitude = parse(key, value)?,
            "kernel_lengthscale" => self.kernel_lengthscale = parse(key, value)?,
            "learn_kernel" => self.learn_kernel = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::at_path(path, e))?;
        Self::parse_str(&text)
    }

    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key));
        }
        s
    }

    fn get(&self, key: &str) -> String {
        match key {
            "epochs" => self.epochs.to_string(),
            "subsets_per_batch" => self.subsets_per_batch.to_string(),
            "rotations_per_subset" => self.rotations_per_subset.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "geco_kappa" => self.geco_kappa.to_string(),
            "geco_alpha" => self.geco_alpha.to_string(),
            "geco_ma_decay" => self.geco_ma_decay.to_string(),
            "seed" => self.seed.to_string(),
            "ablation_identity_prior" => self.ablation_identity_prior.to_string(),
            "latent_channels" => self.latent_channels.to_string(),
            "local_channels" => self.local_channels.to_string(),
            "sigma_y" => self.sigma_y.to_string(),
            "kernel_amplitude" => self.kernel_amplitude.to_string(),
            "kernel_lengthscale" => self.kernel_lengthscale.to_string(),
            "learn_kernel" => self.learn_kernel.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "threads" => self.threads.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive_int = [
            ("subsets_per_batch", self.subsets_per_batch),
            ("rotations_per_subset", self.rotations_per_subset),
            ("threads", self.threads),
        ];
        for (k, v) in positive_int {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        if !(self.geco_kappa > 0.0 && self.geco_alpha >= 0.0 && (0.0..1.0).contains(&self.geco_ma_decay)) {
            return Err(Error::Config("GECO settings out of range".into()));
        }
        if !self.sigma_y.is_finite() || self.sigma_y <= 0.0 {
            return Err(Error::Config("sigma_y must be positive".into()));
        }
        self.latent_config()?;
        self.kernel_params()?;
        Ok(())
    }

    pub fn latent_config(&self) -> Result<LatentConfig> {
        LatentConfig::new(self.latent_channels, self.local_channels)
    }

    pub fn kernel_params(&self) -> Result<KernelParams> {
        KernelParams::new(self.kernel_amplitude, self.kernel_lengthscale)
    }
}
