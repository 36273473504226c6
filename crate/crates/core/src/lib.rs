//! Factorized Gaussian-process variational autoencoder.
//!
//! Images come in subsets that share one digit instance and differ by
//! rotation angle. The latent prior factorizes over subsets: the first `J`
//! latent channels follow a periodic GP over the angle, the remaining ones are
//! a single style scalar per digit. Inference is exact per subset given the
//! encoder's Gaussian pseudo-likelihoods, so one epoch costs `O(P Q³)` for `P`
//! subsets of `Q` rotations.
//!
//! Modules:
//! * [`gp`]: kernels and heteroscedastic GP regression.
//! * [`posterior`]: the structured per-subset posterior and its normalizer.
//! * [`nets`]: convolutional encoder/decoder with reverse-mode gradients.
//! * [`training`]: ELBO, GECO, Adam, evaluation and checkpoints.
//! * [`data`]: MNIST IDX ingestion, rotation, splits and dataset files.
//! * [`cli`]: the command implementations behind the `fgpvae` binary.

pub mod cli;
pub mod data;
pub mod error;
pub mod gp;
pub mod io_util;
pub mod nets;
pub mod posterior;
pub mod training;

pub use error::{Error, Result};
