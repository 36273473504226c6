//! Rotated-threes dataset from the bundled MNIST subset, saved and reloaded.
//!
//! ```text
//! cargo run --release --example build_dataset -- [out.fgpdata]
//! ```

use std::path::{Path, PathBuf};

use fgpvae::data::{build_rotated_dataset, load_idx, partition_by_digit, RotatedDataset, Split};

fn main() -> fgpvae::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("rotated-threes.fgpdata"), PathBuf::from);
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let raws = load_idx(
        &data.join("mnist-5k-images-idx3-ubyte.gz"),
        &data.join("mnist-5k-labels-idx1-ubyte.gz"),
    )?;
    println!("{} raw digits, {} of them threes", raws.len(), raws.iter().filter(|r| r.label == 3).count());

    let ds = build_rotated_dataset(&raws, 3, 400, 16, 0)?;
    println!(
        "{} images: {} train, {} test, {} extrapolation",
        ds.num_images(),
        ds.count(Split::Train),
        ds.count(Split::Test),
        ds.count(Split::Extrapolation)
    );
    println!("angle grid: {:.3?}", ds.angles);
    let subsets = partition_by_digit(&ds);
    println!("{} digit subsets of {} rotations", subsets.len(), subsets[0].len());

    ds.save(&out)?;
    let back = RotatedDataset::load(&out)?;
    assert_eq!(back, ds);
    println!("saved and reloaded {}", out.display());
    Ok(())
}
