//! Seconds per epoch against the number of digit subsets at fixed rotations.
//!
//! ```text
//! cargo run --release --example scaling_bench -- [epochs]
//! ```

use std::path::Path;

use fgpvae::cli::{cmd_bench, linear_fit, BenchArgs};

fn main() -> fgpvae::Result<()> {
    let epochs = std::env::args().nth(1).map_or(3, |a| a.parse().expect("epoch count"));
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let args = BenchArgs {
        config: None,
        images: data.join("mnist-5k-images-idx3-ubyte.gz"),
        labels: data.join("mnist-5k-labels-idx1-ubyte.gz"),
        sizes: vec![25, 50, 100, 200],
        num_angles: 16,
        label: 3,
        epochs_override: epochs,
        seed: Some(0),
        out: std::env::temp_dir().join("fgpvae-bench.csv"),
    };
    let rows = cmd_bench(&args, &[])?;
    let x: Vec<f64> = rows.iter().map(|r| r.digits as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.seconds_per_epoch).collect();
    let (intercept, slope, r2) = linear_fit(&x, &y);
    println!("seconds/epoch ~ {intercept:.4} + {slope:.5} P   (R^2 {r2:.4})");
    for w in rows.windows(2) {
        println!("P {} -> {}: x{:.2}", w[0].digits, w[1].digits, w[1].seconds_per_epoch / w[0].seconds_per_epoch);
    }
    Ok(())
}
