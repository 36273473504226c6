//! ELBO assembly, GECO-constrained Adam training, evaluation and the
//! identity-prior ablation.

mod adam;
mod config;
pub mod elbo;
pub mod eval;
mod geco;
mod model;
mod trainer;

pub use adam::Adam;
pub use config::TrainConfig;
pub use elbo::{ElboNoise, ElboParts, Gradient};
pub use eval::{evaluate, extrapolate_eval, generate, generate_from_prior, predict_latents, EXTRAPOLATION_CONTEXT};
pub use geco::{geco_step, GecoState, MULTIPLIER_MAX, MULTIPLIER_MIN};
pub use model::{ModelParams, PriorKind};
pub use trainer::{metrics_csv, train, EpochMetrics, Trainer, METRICS_HEADER};
