//! Heteroscedastic GP regression over rotation angles with the periodic kernel.
//!
//! ```text
//! cargo run --release --example gp_regression
//! ```

use fgpvae::gp::{build_local_cov, gp_marginal_loglik, gp_posterior, gp_predict, AuxPoint, KernelParams, DEFAULT_JITTER};

fn main() -> fgpvae::Result<()> {
    let kernel = KernelParams::default();
    let angles = [0.0, 0.8, 1.6, 2.4];
    let points: Vec<AuxPoint> = angles.iter().map(|&w| AuxPoint::new(0, w)).collect();
    let obs_mean = [0.9, 0.2, -0.5, 0.1];
    // the third observation is much less certain than the others
    let obs_std = [0.1, 0.1, 1.5, 0.1];

    let k = build_local_cov(&points, &kernel, DEFAULT_JITTER)?;
    println!("log marginal likelihood: {:.4}", gp_marginal_loglik(&k, &obs_mean, &obs_std)?);

    let post = gp_posterior(&k, &obs_mean, &obs_std)?;
    for (i, w) in angles.iter().enumerate() {
        println!(
            "angle {w:.2}: observed {:+.2} +/- {:.2}  posterior {:+.3} +/- {:.3}",
            obs_mean[i],
            obs_std[i],
            post.mean[i],
            post.cov.entries[(i, i)].max(0.0).sqrt()
        );
    }

    let targets: Vec<AuxPoint> = (0..8).map(|i| AuxPoint::new(0, i as f64 * 0.4)).collect();
    let (mean, var) = gp_predict(&k, &points, &obs_mean, &obs_std, &targets, &kernel)?;
    println!("\nprediction");
    for ((t, m), v) in targets.iter().zip(mean).zip(var) {
        println!("  {:.2} -> {m:+.3} (sd {:.3})", t.angle, v.sqrt());
    }
    Ok(())
}
