mod common;

use std::collections::HashSet;

use common::{mnist_paths, synthetic_raws, toy_dataset};
use fgpvae::data::{
    angle_grid, build_rotated_dataset, encode_idx, load_idx, parse_images, partition_by_digit, rotate_image,
    RotatedDataset, Split, IMAGES_MAGIC,
};
use fgpvae::nets::Image;
use fgpvae::Error;

/// Header fields read straight from the IDX bytes, independent of the loader.
fn header(bytes: &[u8]) -> Vec<u32> {
    bytes[..16].chunks(4).map(|c| u32::from_be_bytes(c.try_into().unwrap())).collect()
}

#[test]
fn bundled_mnist_matches_its_header() {
    let (img_path, lab_path) = mnist_paths();
    let raw = {
        use std::io::Read;
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(std::fs::File::open(&img_path).unwrap())
            .read_to_end(&mut out)
            .unwrap();
        out
    };
    let h = header(&raw);
    assert_eq!(h[0], IMAGES_MAGIC);
    let digits = load_idx(&img_path, &lab_path).unwrap();
    assert_eq!(digits.len(), h[1] as usize);
    assert_eq!((digits[0].pixels.height, digits[0].pixels.width), (h[2] as usize, h[3] as usize));
    assert_eq!((h[2], h[3]), (28, 28));
    assert!(digits.iter().filter(|d| d.label == 3).count() >= 400);
    assert!(digits.iter().all(|d| d.pixels.pixels.iter().all(|p| (0.0..=1.0).contains(p))));
    let sample = &raw[16..16 + 784];
    for (b, p) in sample.iter().zip(&digits[0].pixels.pixels) {
        assert_eq!(*b as f64 / 255.0, *p);
    }
}

#[test]
fn idx_errors() {
    let img = Image::new(2, 2, vec![0.0, 1.0, 0.5, 0.25]).unwrap();
    let (ib, lb) = encode_idx(&[img.clone(), img], &[1, 2]);
    assert!(matches!(parse_images(&ib[..ib.len() - 1]), Err(Error::Truncated(_))));
    assert!(matches!(parse_images(&ib[..10]), Err(Error::Truncated(_))));
    assert!(matches!(parse_images(&lb), Err(Error::BadMagic { .. })));
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
    std::fs::write(&ip, &ib).unwrap();
    let mut short = lb.clone();
    short[7] = 1;
    short.truncate(9);
    std::fs::write(&lp, &short).unwrap();
    assert!(matches!(load_idx(&ip, &lp), Err(Error::CountMismatch { images: 2, labels: 1 })));
    assert!(matches!(load_idx(&dir.path().join("none"), &lp), Err(Error::Path { .. })));
}

#[test]
fn rotation_contracts() {
    let raws = synthetic_raws(4, 28, 3, 5);
    for r in &raws {
        let img = &r.pixels;
        assert_eq!(rotate_image(img, 0.0), *img);
        let full = rotate_image(img, 2.0 * std::f64::consts::PI);
        let twice = rotate_image(&rotate_image(img, std::f64::consts::PI), std::f64::consts::PI);
        for ((a, b), c) in img.pixels.iter().zip(&full.pixels).zip(&twice.pixels) {
            assert!((a - b).abs() <= 1e-6 && (a - c).abs() <= 1e-6);
        }
    }
}

#[test]
fn rotation_keeps_range_and_energy_over_the_corpus() {
    let (i, l) = mnist_paths();
    let raws = load_idx(&i, &l).unwrap();
    let mut ratios = Vec::new();
    for r in raws.iter().filter(|r| r.label == 3).take(200) {
        let e0: f64 = r.pixels.pixels.iter().map(|v| v * v).sum();
        for w in angle_grid(16) {
            let out = rotate_image(&r.pixels, w);
            assert!(out.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
            ratios.push(out.pixels.iter().map(|v| v * v).sum::<f64>() / e0);
        }
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let within = ratios.iter().filter(|r| (*r - 1.0).abs() <= 0.2).count() as f64 / ratios.len() as f64;
    assert!((mean - 1.0).abs() <= 0.2, "mean energy ratio {mean}");
    assert!(within >= 0.99, "only {within} of rotations keep energy within 20%");
}

#[test]
fn full_scale_split_counts() {
    let (i, l) = mnist_paths();
    let raws = load_idx(&i, &l).unwrap();
    let ds = build_rotated_dataset(&raws, 3, 400, 16, 0).unwrap();
    assert_eq!(ds.num_images(), 6400);
    assert_eq!(ds.count(Split::Train), 4050);
    assert_eq!(ds.count(Split::Test), 270);
    assert_eq!(ds.count(Split::Extrapolation), 2080);
    assert!(matches!(
        build_rotated_dataset(&raws, 3, 600, 16, 0),
        Err(Error::InsufficientDigits { wanted: 600, .. })
    ));
}

#[test]
fn toy_build_and_partition() {
    let ds = toy_dataset(2, 2, 8, 1);
    assert_eq!(ds.num_images(), 4);
    let parts = partition_by_digit(&ds);
    assert_eq!(parts.iter().map(|p| p.len()).collect::<Vec<_>>(), vec![2, 2]);
    let ds3 = toy_dataset(3, 5, 8, 2);
    let parts = partition_by_digit(&ds3);
    assert_eq!(parts.len(), 3);
    let mut seen = HashSet::new();
    for p in &parts {
        assert!(p.points.windows(2).all(|w| w[0].angle < w[1].angle));
        for &i in &p.indices {
            assert!(seen.insert(i));
        }
    }
    assert_eq!(seen.len(), ds3.num_images());
}

#[test]
fn dataset_round_trip_is_bit_exact() {
    let ds = toy_dataset(5, 6, 8, 9);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.fgpdata");
    ds.save(&path).unwrap();
    let back = RotatedDataset::load(&path).unwrap();
    assert_eq!(back.seed, ds.seed);
    assert_eq!(back.num_angles(), 6);
    for (a, b) in ds.digits.iter().zip(&back.digits) {
        assert_eq!(a.splits, b.splits);
        for (x, y) in a.images.iter().zip(&b.images) {
            assert!(x.pixels.iter().zip(&y.pixels).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    assert!(matches!(RotatedDataset::read_from(&mut &bytes[..]), Err(Error::BadMagic { .. })));
    bytes[0] = b'F';
    bytes[8] = 9;
    assert!(matches!(RotatedDataset::read_from(&mut &bytes[..]), Err(Error::Version { found: 9, .. })));
}

#[test]
fn angle_scale_touches_only_the_kernel_angles() {
    let ds = toy_dataset(3, 8, 8, 5);
    let mut half = ds.clone();
    half.scale_angles(0.5).unwrap();
    for (a, b) in ds.angles.iter().zip(&half.angles) {
        assert_eq!(*b, 0.5 * a);
    }
    assert_eq!(half.digits, ds.digits);
    let mut bad = ds.clone();
    for f in [0.0, -1.0, 1.5, f64::NAN] {
        assert!(matches!(bad.scale_angles(f), Err(Error::Config(_))));
    }
    assert_eq!(bad, ds);
}

#[test]
fn same_seed_same_split() {
    let a = toy_dataset(12, 16, 8, 4);
    let b = toy_dataset(12, 16, 8, 4);
    assert_eq!(a, b);
    for d in &a.digits {
        let tests = d.splits.iter().filter(|&&s| s == Split::Test).count();
        let extra = d.splits.iter().all(|&s| s == Split::Extrapolation);
        assert!(tests == 1 || extra);
    }
}
