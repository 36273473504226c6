//! Conditional generation for digit instances never seen in training, from
//! 11 randomly chosen context rotations each.
//!
//! ```text
//! cargo run --release --example extrapolation -- model.ckpt data.fgpdata
//! ```

use fgpvae::data::RotatedDataset;
use fgpvae::training::{evaluate, extrapolate_eval, ModelParams, EXTRAPOLATION_CONTEXT};

fn main() -> fgpvae::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [ckpt, data] = &args[..] else {
        eprintln!("usage: extrapolation <model.ckpt> <data.fgpdata>");
        std::process::exit(2);
    };
    let model = ModelParams::load(ckpt.as_ref())?;
    let ds = RotatedDataset::load(data.as_ref())?;
    let test = evaluate(&model, &ds)?;
    let extra = extrapolate_eval(&model, &ds, EXTRAPOLATION_CONTEXT, 0)?;
    println!("held-out angle MSE, training digits: {test:.4}");
    println!("MSE on unseen digits ({EXTRAPOLATION_CONTEXT} contexts): {extra:.4}");
    println!("ratio {:.3}", extra / test);
    Ok(())
}
