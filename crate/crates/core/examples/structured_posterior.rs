//! Structured posterior of one digit subset: exact GP posteriors in the
//! local channels, a conjugate update in the global ones, and the
//! normalizing constant that ties them to the encoder's factors.
//!
//! ```text
//! cargo run --release --example structured_posterior
//! ```

use fgpvae::gp::{build_local_cov, AuxPoint, KernelParams, DEFAULT_JITTER};
use fgpvae::posterior::{
    compose_posterior, pointwise_identity_check, sample_posterior, EncoderOutput, LatentConfig, PosteriorNoise,
};
use nalgebra::{DMatrix, DVector};

fn main() -> fgpvae::Result<()> {
    // 3 rotations of one digit, 2 local and 2 global channels
    let cfg = LatentConfig::new(4, 2)?;
    let points: Vec<AuxPoint> = [0.0, 0.4, 1.2].iter().map(|&w| AuxPoint::new(7, w)).collect();
    let enc = EncoderOutput::new(
        DMatrix::from_row_slice(3, 4, &[0.5, -1.0, 0.8, 0.1, 0.6, -0.7, 1.1, 0.0, 0.2, 0.3, 0.9, -0.2]),
        DMatrix::from_row_slice(3, 4, &[0.3, 0.3, 0.5, 0.5, 0.3, 0.4, 0.5, 0.5, 0.6, 0.4, 0.5, 0.5]),
    )?;
    let kernel = KernelParams::default();
    let sp = compose_posterior(&enc, &points, &cfg, &kernel)?;

    for (l, p) in sp.local.iter().enumerate() {
        println!("local channel {l}: mean {:.3?}  log Z {:.4}", p.mean.as_slice(), p.log_marginal);
    }
    for (g, p) in sp.global.iter().enumerate() {
        println!("global channel {g}: mean {:.3}  var {:.3}  log Z {:.4}", p.mean, p.var, p.log_z);
    }
    println!("total log Z {:.4}", sp.log_z_total);

    let mut noise = PosteriorNoise::zeros(3, &cfg);
    noise.local[0] = DVector::from_vec(vec![0.5, -1.0, 0.3]);
    noise.global[1] = 1.2;
    let z = sample_posterior(&sp, &noise)?;
    println!("\nsample:\n{z:.3}");

    let k = build_local_cov(&points, &kernel, DEFAULT_JITTER)?;
    let (lhs, rhs) = pointwise_identity_check(&sp, &enc, &k, &cfg, &z)?;
    println!("log q~ + log p - log Z = {lhs:.6}");
    println!("log q                 = {rhs:.6}");
    Ok(())
}
