//! Renders one digit at every grid angle from its training rotations and
//! writes generated images next to the ground truth as PGM files.
//!
//! Uses a checkpoint and dataset from `fgpvae train` when given, otherwise
//! trains a small model first.
//!
//! ```text
//! cargo run --release --example conditional_generation -- [model.ckpt data.fgpdata] [digit]
//! ```

use std::path::Path;

use fgpvae::cli::{image_grid, prior_samples_grid, write_pgm};
use fgpvae::data::{build_rotated_dataset, load_idx, RotatedDataset, Split};
use fgpvae::training::{generate, ModelParams, TrainConfig, Trainer};

fn main() -> fgpvae::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (model, ds) = if args.len() >= 2 {
        (ModelParams::load(args[0].as_ref())?, RotatedDataset::load(args[1].as_ref())?)
    } else {
        let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
        let raws = load_idx(
            &data.join("mnist-5k-images-idx3-ubyte.gz"),
            &data.join("mnist-5k-labels-idx1-ubyte.gz"),
        )?;
        let ds = build_rotated_dataset(&raws, 3, 20, 16, 0)?;
        let cfg = TrainConfig {
            epochs: 60,
            ..TrainConfig::default()
        };
        let mut t = Trainer::from_config(ds.height, ds.width, cfg)?;
        t.fit(&ds.train_subsets(), |_, _| Ok(()))?;
        (t.model, ds)
    };
    let id: usize = args.get(2).map_or(0, |a| a.parse().expect("digit id"));
    let record = ds.digit(id).ok_or(fgpvae::Error::UnknownDigit(id))?;
    let full = ds.full_subset(id).expect("digit exists");
    let ctx: Vec<usize> = (0..full.len()).filter(|&a| record.splits[a] == Split::Train).collect();
    let generated = generate(&model, &full.select(&ctx), &ds.angles)?;

    let dir = std::env::temp_dir().join("fgpvae-generation");
    std::fs::create_dir_all(&dir)?;
    for (q, (img, truth)) in generated.iter().zip(&record.images).enumerate() {
        let tag = if record.splits[q] == Split::Test { "  (held out)" } else { "" };
        println!("angle {:.3}: MSE {:.4}{tag}", ds.angles[q], img.mse(truth));
        write_pgm(&dir.join(format!("angle{q:02}.pgm")), img)?;
    }
    write_pgm(&dir.join("grid.pgm"), &image_grid(&[record.images.clone(), generated])?)?;
    write_pgm(&dir.join("prior_samples.pgm"), &prior_samples_grid(&model, &ds.angles, 4, 0)?)?;
    println!("wrote {}", dir.display());
    Ok(())
}
