//! Short training run on a handful of rotated threes, with the metrics CSV
//! and a checkpoint written to a scratch directory.
//!
//! ```text
//! cargo run --release --example train_toy -- [epochs]
//! ```

use std::path::Path;

use fgpvae::data::{build_rotated_dataset, load_idx};
use fgpvae::training::{evaluate, metrics_csv, ModelParams, TrainConfig, Trainer};

fn main() -> fgpvae::Result<()> {
    let epochs = std::env::args().nth(1).map_or(30, |a| a.parse().expect("epoch count"));
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let raws = load_idx(
        &data.join("mnist-5k-images-idx3-ubyte.gz"),
        &data.join("mnist-5k-labels-idx1-ubyte.gz"),
    )?;
    let ds = build_rotated_dataset(&raws, 3, 20, 16, 1)?;
    let cfg = TrainConfig {
        epochs,
        seed: 1,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::from_config(ds.height, ds.width, cfg)?;
    println!("{} parameters", trainer.model.num_params());
    let log = trainer.fit(&ds.train_subsets(), |m, _| {
        println!("epoch {:3}  elbo {:10.1}  mse {:.4}  multiplier {:.3}", m.epoch, m.elbo, m.mse, m.geco_multiplier);
        Ok(())
    })?;
    println!("held-out angle MSE {:.4}", evaluate(&trainer.model, &ds)?);

    let dir = std::env::temp_dir().join("fgpvae-train-toy");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("metrics.csv"), metrics_csv(&log))?;
    trainer.model.save(&dir.join("model.ckpt"))?;
    assert_eq!(ModelParams::load(&dir.join("model.ckpt"))?, trainer.model);
    println!("wrote {}", dir.display());
    Ok(())
}
