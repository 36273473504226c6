//! Command implementations behind the `fgpvae` binary.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 numerical abort, 5 unknown digit id.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{self, RotatedDataset, Split, SplitPolicy};
use crate::error::{Error, Result};
use crate::io_util::write_atomic;
use crate::nets::Image;
use crate::training::{self, metrics_csv, ModelParams, TrainConfig, Trainer, EXTRAPOLATION_CONTEXT};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_UNKNOWN_DIGIT: i32 = 5;

/// Environment variable overriding the worker count for per-subset gradients.
pub const THREADS_ENV: &str = "FGPVAE_THREADS";

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::NonFinite(_) | Error::Cholesky { .. } => EXIT_NUMERICAL,
        Error::UnknownDigit(_) => EXIT_UNKNOWN_DIGIT,
        _ => EXIT_DATA,
    }
}

#[derive(Debug, Parser)]
#[command(name = "fgpvae", version, about = "Factorized GP-VAE on rotated digits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a rotated dataset from MNIST IDX files.
    BuildData(BuildDataArgs),
    /// Train a model and write checkpoints, metrics and a manifest.
    Train(TrainArgs),
    /// Held-out angle MSE of a checkpoint on the test split.
    Eval(EvalArgs),
    /// Conditionally generate one digit at the requested angles.
    Generate(GenerateArgs),
    /// MSE on digits never used in training, from a few context angles each.
    Extrapolate(ExtrapolateArgs),
    /// Time training epochs for several dataset sizes.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct BuildDataArgs {
    /// IDX image file (optionally gzipped).
    #[arg(long)]
    pub images: PathBuf,
    /// IDX label file (optionally gzipped).
    #[arg(long)]
    pub labels: PathBuf,
    /// Dataset file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub label: u8,
    #[arg(long, default_value_t = 400)]
    pub num_digits: usize,
    #[arg(long, default_value_t = 16)]
    pub num_angles: usize,
    /// Digits used for training; the rest are reserved for extrapolation [default: 27/40 of num-digits, rounded up].
    #[arg(long)]
    pub train_digits: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Factor applied to the stored angles the kernels see; images still span a full turn.
    #[arg(long, default_value_t = 1.0)]
    pub angle_scale: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key = value` config file; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset file written by build-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config epoch count.
    #[arg(long)]
    pub epochs_override: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub digit: usize,
    /// Comma-separated angles in radians [default: the dataset's angle grid].
    #[arg(long, value_delimiter = ',')]
    pub angles: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtrapolateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for choosing context angles.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Context images per digit.
    #[arg(long, default_value_t = EXTRAPOLATION_CONTEXT)]
    pub contexts: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Comma-separated digit counts.
    #[arg(long, value_delimiter = ',', default_value = "25,50,100,200")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    pub num_angles: usize,
    #[arg(long, default_value_t = 3)]
    pub label: u8,
    /// Timed epochs per size.
    #[arg(long, default_value_t = 3)]
    pub epochs_override: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV file to write.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn dispatch(cmd: Command) -> Result<()> {
    let invocation: Vec<String> = std::env::args().collect();
    match cmd {
        Command::BuildData(a) => cmd_build_data(&a, &invocation),
        Command::Train(a) => cmd_train(&a, &invocation).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a, &invocation).map(|_| ()),
        Command::Generate(a) => cmd_generate(&a, &invocation).map(|_| ()),
        Command::Extrapolate(a) => cmd_extrapolate(&a, &invocation).map(|_| ()),
        Command::Bench(a) => cmd_bench(&a, &invocation).map(|_| ()),
    }
}

/// Writes `key = value` lines describing a run.
fn write_manifest(path: &Path, command: &str, invocation: &[String], fields: &[(&str, String)], cfg: Option<&TrainConfig>) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "# fgpvae run manifest");
    let _ = writeln!(s, "command = {command}");
    let _ = writeln!(s, "version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "invocation = {}", invocation.join(" "));
    for (k, v) in fields {
        let _ = writeln!(s, "{k} = {v}");
    }
    if let Some(cfg) = cfg {
        let _ = writeln!(s, "[config]");
        s.push_str(&cfg.to_config_string());
    }
    write_atomic(path, |w| w.write_all(s.as_bytes()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::at_path(dir, e))
}

fn sibling_manifest(file: &Path) -> PathBuf {
    let mut name = file.file_name().map(OsString::from).unwrap_or_default();
    name.push(".manifest");
    file.with_file_name(name)
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::from_file(p).map_err(|e| match e {
            Error::Path { path, source } => Error::Config(format!("{}: {source}", path.display())),
            other => other,
        })?,
        None => TrainConfig::default(),
    };
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        cfg.threads = n;
    }
    Ok(cfg)
}

pub fn cmd_build_data(a: &BuildDataArgs, invocation: &[String]) -> Result<()> {
    let raws = data::load_idx(&a.images, &a.labels)?;
    let policy = a
        .train_digits
        .map_or(SplitPolicy::default_for(a.num_digits), |n| SplitPolicy { train_digits: n });
    let mut ds = data::build_rotated_dataset_with(&raws, a.label, a.num_digits, a.num_angles, a.seed, policy)?;
    ds.scale_angles(a.angle_scale)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    ds.save(&a.out)?;
    let fields = [
        ("images", a.images.display().to_string()),
        ("labels", a.labels.display().to_string()),
        ("label", a.label.to_string()),
        ("num_digits", a.num_digits.to_string()),
        ("num_angles", a.num_angles.to_string()),
        ("train_digits", policy.train_digits.to_string()),
        ("seed", a.seed.to_string()),
        ("angle_scale", a.angle_scale.to_string()),
        ("train_images", ds.count(Split::Train).to_string()),
        ("test_images", ds.count(Split::Test).to_string()),
        ("extrapolation_images", ds.count(Split::Extrapolation).to_string()),
    ];
    write_manifest(&sibling_manifest(&a.out), "build-data", invocation, &fields, None)?;
    println!(
        "wrote {}: {} train, {} test, {} extrapolation images",
        a.out.display(),
        fields[8].1,
        fields[9].1,
        fields[10].1
    );
    Ok(())
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub metrics: Vec<training::EpochMetrics>,
    pub checkpoint: PathBuf,
}

pub fn cmd_train(a: &TrainArgs, invocation: &[String]) -> Result<TrainOutcome> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(e) = a.epochs_override {
        cfg.epochs = e;
    }
    cfg.validate()?;
    let ds = RotatedDataset::load(&a.data)?;
    let subsets = ds.train_subsets();
    if subsets.is_empty() {
        return Err(Error::Shape(format!("{} has no training images", a.data.display())));
    }
    ensure_dir(&a.out)?;
    let fields = [("data", a.data.display().to_string()), ("seed", cfg.seed.to_string())];
    write_manifest(&a.out.join("manifest.txt"), "train", invocation, &fields, Some(&cfg))?;
    let csv_path = a.out.join("metrics.csv");
    let final_ckpt = a.out.join("model.ckpt");
    let every = cfg.checkpoint_every;
    let mut trainer = Trainer::from_config(ds.height, ds.width, cfg)?;
    let mut csv = metrics_csv(&[]);
    let metrics = trainer.fit(&subsets, |m, model| {
        csv.push_str(&m.csv_row());
        csv.push('\n');
        write_atomic(&csv_path, |w| w.write_all(csv.as_bytes()))?;
        if every > 0 && m.epoch % every == 0 {
            model.save(&a.out.join(format!("model-epoch{:05}.ckpt", m.epoch)))?;
        }
        println!("epoch {} elbo {:.3} mse {:.5} multiplier {:.4} ({:.2}s)", m.epoch, m.elbo, m.mse, m.geco_multiplier, m.seconds);
        Ok(())
    })?;
    if metrics.is_empty() {
        write_atomic(&csv_path, |w| w.write_all(csv.as_bytes()))?;
    }
    trainer.model.save(&final_ckpt)?;
    Ok(TrainOutcome {
        model: trainer.model,
        metrics,
        checkpoint: final_ckpt,
    })
}

pub fn cmd_eval(a: &EvalArgs, invocation: &[String]) -> Result<f64> {
    let model = ModelParams::load(&a.checkpoint)?;
    let ds = RotatedDataset::load(&a.data)?;
    let mse = training::evaluate(&model, &ds)?;
    ensure_dir(&a.out)?;
    let fields = [
        ("checkpoint", a.checkpoint.display().to_string()),
        ("data", a.data.display().to_string()),
        ("test_mse", mse.to_string()),
    ];
    write_manifest(&a.out.join("manifest.txt"), "eval", invocation, &fields, None)?;
    let body = format!("split,mse\ntest,{mse}\n");
    write_atomic(&a.out.join("eval.csv"), |w| w.write_all(body.as_bytes()))?;
    println!("test mse {mse:.6}");
    Ok(mse)
}

pub fn cmd_extrapolate(a: &ExtrapolateArgs, invocation: &[String]) -> Result<f64> {
    let model = ModelParams::load(&a.checkpoint)?;
    let ds = RotatedDataset::load(&a.data)?;
    let mse = training::extrapolate_eval(&model, &ds, a.contexts, a.seed)?;
    ensure_dir(&a.out)?;
    let fields = [
        ("checkpoint", a.checkpoint.display().to_string()),
        ("data", a.data.display().to_string()),
        ("seed", a.seed.to_string()),
        ("contexts", a.contexts.to_string()),
        ("extrapolation_mse", mse.to_string()),
    ];
    write_manifest(&a.out.join("manifest.txt"), "extrapolate", invocation, &fields, None)?;
    let body = format!("split,mse\nextrapolation,{mse}\n");
    write_atomic(&a.out.join("extrapolate.csv"), |w| w.write_all(body.as_bytes()))?;
    println!("extrapolation mse {mse:.6}");
    Ok(mse)
}

/// Files written by `generate`.
#[derive(Debug, Clone)]
pub struct GenerateOutcome {
    pub images: Vec<PathBuf>,
    pub grid: Option<PathBuf>,
    /// Per-pixel MSE against ground truth, for angles on the dataset grid.
    pub errors: Vec<Option<f64>>,
}

/// Context for `generate`: the digit's training images, or all of its images
/// when it was never trained on.
fn generation_context(ds: &RotatedDataset, id: usize) -> Result<data::DigitSubset> {
    let d = ds.digit(id).ok_or(Error::UnknownDigit(id))?;
    let full = ds.full_subset(id).ok_or(Error::UnknownDigit(id))?;
    let pos: Vec<usize> = if d.splits.contains(&Split::Train) {
        (0..full.len()).filter(|&a| d.splits[a] == Split::Train).collect()
    } else {
        (0..full.len()).collect()
    };
    if pos.is_empty() {
        return Err(Error::MissingContext { digit: id });
    }
    Ok(full.select(&pos))
}

pub fn cmd_generate(a: &GenerateArgs, invocation: &[String]) -> Result<GenerateOutcome> {
    let model = ModelParams::load(&a.checkpoint)?;
    let ds = RotatedDataset::load(&a.data)?;
    let context = generation_context(&ds, a.digit)?;
    let angles = a.angles.clone().unwrap_or_else(|| ds.angles.clone());
    if angles.is_empty() || angles.iter().any(|w| !w.is_finite()) {
        return Err(Error::Config("angles must be finite and non-empty".into()));
    }
    let generated = training::generate(&model, &context, &angles)?;
    let record = ds.digit(a.digit).ok_or(Error::UnknownDigit(a.digit))?;
    ensure_dir(&a.out)?;
    let mut outcome = GenerateOutcome {
        images: Vec::new(),
        grid: None,
        errors: Vec::new(),
    };
    let mut pairs = Vec::new();
    for (i, (img, &w)) in generated.iter().zip(&angles).enumerate() {
        let path = a.out.join(format!("digit{}_angle{:02}.pgm", a.digit, i));
        write_pgm(&path, img)?;
        outcome.images.push(path);
        let truth = ds
            .angles
            .iter()
            .position(|&g| (g - w).abs() < 1e-9)
            .map(|q| &record.images[q]);
        outcome.errors.push(truth.map(|t| img.mse(t)));
        if let Some(t) = truth {
            pairs.push((t.clone(), img.clone()));
        }
    }
    if !pairs.is_empty() {
        let (top, bottom): (Vec<Image>, Vec<Image>) = pairs.into_iter().unzip();
        let path = a.out.join(format!("digit{}_grid.pgm", a.digit));
        write_pgm(&path, &image_grid(&[top, bottom])?)?;
        outcome.grid = Some(path);
    }
    let fields = [
        ("checkpoint", a.checkpoint.display().to_string()),
        ("data", a.data.display().to_string()),
        ("digit", a.digit.to_string()),
        ("angles", angles.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",")),
    ];
    write_manifest(&a.out.join("manifest.txt"), "generate", invocation, &fields, None)?;
    println!("wrote {} images to {}", outcome.images.len(), a.out.display());
    Ok(outcome)
}

/// One bench row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub digits: usize,
    pub seconds_per_epoch: f64,
    pub mse: f64,
}

/// Least-squares fit `y = a + b x` and its coefficient of determination.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (intercept, slope, 1.0 - ss_res / ss_tot)
}

pub fn cmd_bench(a: &BenchArgs, invocation: &[String]) -> Result<Vec<BenchRow>> {
    if a.sizes.is_empty() || a.sizes.contains(&0) {
        return Err(Error::Config("--sizes must list positive digit counts".into()));
    }
    if a.epochs_override == 0 {
        return Err(Error::Config("bench needs at least one epoch".into()));
    }
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.epochs = a.epochs_override;
    // timing integrity
    cfg.threads = 1;
    cfg.validate()?;
    let raws = data::load_idx(&a.images, &a.labels)?;
    let mut rows = Vec::new();
    for &p in &a.sizes {
        let ds = data::build_rotated_dataset_with(&raws, a.label, p, a.num_angles, cfg.seed, SplitPolicy::all_train(p))?;
        let subsets = ds.train_subsets();
        let mut trainer = Trainer::from_config(ds.height, ds.width, cfg.clone())?;
        let start = Instant::now();
        let log = trainer.fit(&subsets, |_, _| Ok(()))?;
        let seconds = start.elapsed().as_secs_f64() / log.len() as f64;
        let row = BenchRow {
            digits: p,
            seconds_per_epoch: seconds,
            mse: log.last().map_or(f64::NAN, |m| m.mse),
        };
        println!("P={p}: {seconds:.3} s/epoch, mse {:.5}", row.mse);
        rows.push(row);
    }
    let mut csv = String::from("P,seconds_per_epoch,mse\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{}", r.digits, r.seconds_per_epoch, r.mse);
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_atomic(&a.out, |w| w.write_all(csv.as_bytes()))?;
    let mut fields = vec![
        ("images", a.images.display().to_string()),
        ("labels", a.labels.display().to_string()),
        ("sizes", a.sizes.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(",")),
        ("num_angles", a.num_angles.to_string()),
        ("epochs", a.epochs_override.to_string()),
        ("seed", cfg.seed.to_string()),
    ];
    if rows.len() >= 2 {
        let x: Vec<f64> = rows.iter().map(|r| r.digits as f64).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.seconds_per_epoch).collect();
        let (_, slope, r2) = linear_fit(&x, &y);
        println!("linear fit: {slope:.5} s per digit, R^2 = {r2:.4}");
        fields.push(("linear_fit_r2", r2.to_string()));
    }
    write_manifest(&sibling_manifest(&a.out), "bench", invocation, &fields, Some(&cfg))?;
    Ok(rows)
}

/// Binary greymap (`P5`, maxval 255).
pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

/// Inverse of [`encode_pgm`] for files it wrote.
pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let bad = || Error::Shape("not a P5 greymap with maxval 255".into());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?);
    }
    pos += 1;
    let (w, h): (usize, usize) = (fields[1].parse().map_err(|_| bad())?, fields[2].parse().map_err(|_| bad())?);
    if fields[0] != "P5" || fields[3] != "255" || bytes.len() < pos + w * h {
        return Err(bad());
    }
    Image::new(h, w, bytes[pos..pos + w * h].iter().map(|&b| b as f64 / 255.0).collect())
}

pub fn write_pgm(path: &Path, img: &Image) -> Result<()> {
    let bytes = encode_pgm(img);
    write_atomic(path, |w| w.write_all(&bytes))
}

/// Tiles equally sized images row by row with a one-pixel black gutter.
pub fn image_grid(rows: &[Vec<Image>]) -> Result<Image> {
    let first = rows
        .iter()
        .flat_map(|r| r.first())
        .next()
        .ok_or_else(|| Error::Shape("empty grid".into()))?;
    let (h, w) = (first.height, first.width);
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let gh = rows.len() * (h + 1) - 1;
    let gw = cols * (w + 1) - 1;
    let mut px = vec![0.0; gh * gw];
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            if (img.height, img.width) != (h, w) {
                return Err(Error::Shape("grid images differ in size".into()));
            }
            for y in 0..h {
                let dst = (r * (h + 1) + y) * gw + c * (w + 1);
                px[dst..dst + w].copy_from_slice(&img.pixels[y * w..(y + 1) * w]);
            }
        }
    }
    Image::new(gh, gw, px)
}

/// Samples `count` new digits from the prior and tiles them, one row per digit.
pub fn prior_samples_grid(model: &ModelParams, angles: &[f64], count: usize, seed: u64) -> Result<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..count)
        .map(|_| training::generate_from_prior(model, angles, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    image_grid(&rows)
}
