//! Inference and generative networks with hand-written reverse passes.
//!
//! Both networks have three 3x3 convolution layers with 8 filters and ELU
//! activations plus one fully connected layer. The encoder downsamples twice
//! with stride 2; the decoder mirrors it with stride-2 transposed convolutions
//! and ends in a sigmoid so pixel means stay in `[0, 1]`.
//!
//! Every forward pass returns a tape holding the activations its backward
//! pass needs. Backward passes accumulate into a flat gradient buffer laid
//! out like the corresponding [`NetParams`].

pub mod checkpoint;
mod conv;

use rand::Rng;

use crate::error::{Error, Result};
use conv::{ConvShape, TConvShape};

pub const CONV_LAYERS: usize = 3;
pub const FILTERS: usize = 8;
pub const KERNEL_SIZE: usize = conv::KSIZE;

/// Lower bound added to every encoder standard deviation.
pub const STD_FLOOR: f64 = 1e-4;
/// Encoder standard deviation produced by a raw output of zero: `STD_FLOOR + ln 2`.
pub const STD_AT_ZERO: f64 = STD_FLOOR + std::f64::consts::LN_2;

use crate::gp::LN_2PI;

/// Grayscale image, row-major, pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::Shape(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn mse(&self, other: &Image) -> f64 {
        debug_assert_eq!(self.pixels.len(), other.pixels.len());
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / self.pixels.len() as f64
    }
}

/// Shapes shared by the encoder and decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetArch {
    pub height: usize,
    pub width: usize,
    pub latent: usize,
}

impl NetArch {
    pub fn new(height: usize, width: usize, latent: usize) -> Result<Self> {
        if height == 0 || width == 0 || !height.is_multiple_of(4) || !width.is_multiple_of(4) {
            return Err(Error::Shape(format!(
                "image sides must be positive multiples of 4, got {height}x{width}"
            )));
        }
        if latent == 0 {
            return Err(Error::Shape("latent dimension must be positive".into()));
        }
        Ok(Self {
            height,
            width,
            latent,
        })
    }

    pub fn mnist(latent: usize) -> Self {
        Self {
            height: 28,
            width: 28,
            latent,
        }
    }

    fn feature_len(&self) -> usize {
        FILTERS * (self.height / 4) * (self.width / 4)
    }

    fn enc_convs(&self) -> [ConvShape; CONV_LAYERS] {
        let (h, w) = (self.height, self.width);
        [
            ConvShape { c_in: 1, c_out: FILTERS, h_in: h, w_in: w, stride: 1 },
            ConvShape { c_in: FILTERS, c_out: FILTERS, h_in: h, w_in: w, stride: 2 },
            ConvShape { c_in: FILTERS, c_out: FILTERS, h_in: h / 2, w_in: w / 2, stride: 2 },
        ]
    }

    fn dec_tconvs(&self) -> [TConvShape; 2] {
        let (h, w) = (self.height, self.width);
        [
            TConvShape { c_in: FILTERS, c_out: FILTERS, h_in: h / 4, w_in: w / 4, stride: 2 },
            TConvShape { c_in: FILTERS, c_out: FILTERS, h_in: h / 2, w_in: w / 2, stride: 2 },
        ]
    }

    fn dec_out_conv(&self) -> ConvShape {
        ConvShape {
            c_in: FILTERS,
            c_out: 1,
            h_in: self.height,
            w_in: self.width,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter vector with named views.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    entries: Vec<ParamEntry>,
    values: Vec<f64>,
}

impl NetParams {
    fn from_shapes(shapes: &[(&str, Vec<usize>)]) -> Self {
        let mut entries = Vec::with_capacity(shapes.len());
        let mut offset = 0;
        for (name, shape) in shapes {
            let e = ParamEntry {
                name: name.to_string(),
                shape: shape.clone(),
                offset,
            };
            offset += e.len();
            entries.push(e);
        }
        Self {
            entries,
            values: vec![0.0; offset],
        }
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn entry(&self, name: &str) -> &ParamEntry {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub fn view(&self, name: &str) -> &[f64] {
        let e = self.entry(name);
        &self.values[e.offset..e.offset + e.len()]
    }

    pub fn view_mut(&mut self, name: &str) -> &mut [f64] {
        let e = self.entry(name).clone();
        &mut self.values[e.offset..e.offset + e.len()]
    }

    /// Replace the values, keeping the layout. Fails on length mismatch.
    pub fn set_values(&mut self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.values.len(),
                values.len()
            )));
        }
        self.values = values;
        Ok(())
    }

    fn range(&self, name: &str) -> std::ops::Range<usize> {
        let e = self.entry(name);
        e.offset..e.offset + e.len()
    }

    fn init_uniform<R: Rng + ?Sized>(&mut self, name: &str, fan_in: usize, rng: &mut R) {
        let bound = (3.0 / fan_in as f64).sqrt();
        for v in self.view_mut(name) {
            *v = rng.gen_range(-bound..bound);
        }
    }
}

#[inline]
fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// ELU derivative expressed through the activation output.
#[inline]
fn elu_grad_from_output(y: f64) -> f64 {
    if y > 0.0 {
        1.0
    } else {
        y + 1.0
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dense_forward(input: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    let n_in = input.len();
    for (o, (row, b)) in out.iter_mut().zip(weight.chunks_exact(n_in).zip(bias)) {
        *o = b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
    }
}

fn dense_backward(
    input: &[f64],
    weight: &[f64],
    d_out: &[f64],
    d_in: &mut [f64],
    d_weight: &mut [f64],
    d_bias: &mut [f64],
) {
    let n_in = input.len();
    d_in.fill(0.0);
    for (o, &g) in d_out.iter().enumerate() {
        d_bias[o] += g;
        let row = &weight[o * n_in..(o + 1) * n_in];
        let d_row = &mut d_weight[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            d_row[i] += g * input[i];
            d_in[i] += g * row[i];
        }
    }
}

/// Inference network: image to per-channel mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub arch: NetArch,
    pub params: NetParams,
}

/// Activations recorded by [`Encoder::forward`].
#[derive(Debug, Clone)]
pub struct EncoderTape {
    input: Vec<f64>,
    hidden: [Vec<f64>; CONV_LAYERS],
    raw: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Encoder {
    pub fn layout(arch: NetArch) -> NetParams {
        let f = FILTERS;
        let k = KERNEL_SIZE;
        NetParams::from_shapes(&[
            ("conv1.weight", vec![f, 1, k, k]),
            ("conv1.bias", vec![f]),
            ("conv2.weight", vec![f, f, k, k]),
            ("conv2.bias", vec![f]),
            ("conv3.weight", vec![f, f, k, k]),
            ("conv3.bias", vec![f]),
            ("fc.weight", vec![2 * arch.latent, arch.feature_len()]),
            ("fc.bias", vec![2 * arch.latent]),
        ])
    }

    /// Fan-in scaled uniform weights, zero biases, zero output layer.
    pub fn init<R: Rng + ?Sized>(arch: NetArch, rng: &mut R) -> Self {
        let mut params = Self::layout(arch);
        let k2 = KERNEL_SIZE * KERNEL_SIZE;
        params.init_uniform("conv1.weight", k2, rng);
        params.init_uniform("conv2.weight", FILTERS * k2, rng);
        params.init_uniform("conv3.weight", FILTERS * k2, rng);
        Self { arch, params }
    }

    pub fn forward(&self, img: &Image) -> Result<EncoderTape> {
        if img.height != self.arch.height || img.width != self.arch.width {
            return Err(Error::Shape(format!(
                "encoder expects {}x{} images, got {}x{}",
                self.arch.height, self.arch.width, img.height, img.width
            )));
        }
        let p = &self.params;
        let shapes = self.arch.enc_convs();
        let mut hidden: [Vec<f64>; CONV_LAYERS] = Default::default();
        for (i, s) in shapes.iter().enumerate() {
            let input = if i == 0 { &img.pixels } else { &hidden[i - 1] };
            let mut out = vec![0.0; s.out_len()];
            conv::conv_forward(
                s,
                input,
                p.view(&format!("conv{}.weight", i + 1)),
                p.view(&format!("conv{}.bias", i + 1)),
                &mut out,
            );
            out.iter_mut().for_each(|v| *v = elu(*v));
            hidden[i] = out;
        }
        let l = self.arch.latent;
        let mut raw = vec![0.0; 2 * l];
        dense_forward(&hidden[2], p.view("fc.weight"), p.view("fc.bias"), &mut raw);
        let means = raw[..l].to_vec();
        let stds = raw[l..].iter().map(|&r| STD_FLOOR + softplus(r)).collect();
        Ok(EncoderTape {
            input: img.pixels.clone(),
            hidden,
            raw,
            means,
            stds,
        })
    }

    pub fn encode(&self, img: &Image) -> Result<(Vec<f64>, Vec<f64>)> {
        let t = self.forward(img)?;
        Ok((t.means, t.stds))
    }

    /// Accumulates parameter gradients into `grad` and returns the input-pixel gradient.
    pub fn backward(&self, tape: &EncoderTape, d_means: &[f64], d_stds: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let l = self.arch.latent;
        let p = &self.params;
        let mut d_raw = vec![0.0; 2 * l];
        d_raw[..l].copy_from_slice(d_means);
        for j in 0..l {
            d_raw[l + j] = d_stds[j] * sigmoid(tape.raw[l + j]);
        }
        let mut d_hidden = vec![0.0; tape.hidden[2].len()];
        {
            let (w, b) = (p.range("fc.weight"), p.range("fc.bias"));
            let (gw, gb) = split_two(grad, w, b);
            dense_backward(&tape.hidden[2], p.view("fc.weight"), &d_raw, &mut d_hidden, gw, gb);
        }
        let shapes = self.arch.enc_convs();
        for i in (0..CONV_LAYERS).rev() {
            for (d, &h) in d_hidden.iter_mut().zip(&tape.hidden[i]) {
                *d *= elu_grad_from_output(h);
            }
            let input = if i == 0 { &tape.input } else { &tape.hidden[i - 1] };
            let mut d_in = vec![0.0; shapes[i].in_len()];
            let w_name = format!("conv{}.weight", i + 1);
            let (gw, gb) = split_two(grad, p.range(&w_name), p.range(&format!("conv{}.bias", i + 1)));
            conv::conv_backward(&shapes[i], input, p.view(&w_name), &d_hidden, Some(&mut d_in), gw, gb);
            d_hidden = d_in;
        }
        d_hidden
    }
}

/// Generative network: latent vector to mean image.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub arch: NetArch,
    pub params: NetParams,
}

#[derive(Debug, Clone)]
pub struct DecoderTape {
    z: Vec<f64>,
    hidden: [Vec<f64>; CONV_LAYERS],
    pub output: Image,
}

impl Decoder {
    pub fn layout(arch: NetArch) -> NetParams {
        let f = FILTERS;
        let k = KERNEL_SIZE;
        NetParams::from_shapes(&[
            ("fc.weight", vec![arch.feature_len(), arch.latent]),
            ("fc.bias", vec![arch.feature_len()]),
            ("tconv1.weight", vec![f, f, k, k]),
            ("tconv1.bias", vec![f]),
            ("tconv2.weight", vec![f, f, k, k]),
            ("tconv2.bias", vec![f]),
            ("conv_out.weight", vec![1, f, k, k]),
            ("conv_out.bias", vec![1]),
        ])
    }

    pub fn init<R: Rng + ?Sized>(arch: NetArch, rng: &mut R) -> Self {
        let mut params = Self::layout(arch);
        let k2 = KERNEL_SIZE * KERNEL_SIZE;
        params.init_uniform("fc.weight", arch.latent, rng);
        // each upsampled pixel sees roughly a quarter of the 3x3 taps
        params.init_uniform("tconv1.weight", (FILTERS * k2).div_ceil(4), rng);
        params.init_uniform("tconv2.weight", (FILTERS * k2).div_ceil(4), rng);
        params.init_uniform("conv_out.weight", FILTERS * k2, rng);
        Self { arch, params }
    }

    pub fn forward(&self, z: &[f64]) -> Result<DecoderTape> {
        if z.len() != self.arch.latent {
            return Err(Error::Shape(format!(
                "decoder expects {} latents, got {}",
                self.arch.latent,
                z.len()
            )));
        }
        let p = &self.params;
        let mut h0 = vec![0.0; self.arch.feature_len()];
        dense_forward(z, p.view("fc.weight"), p.view("fc.bias"), &mut h0);
        h0.iter_mut().for_each(|v| *v = elu(*v));
        let [t1, t2] = self.arch.dec_tconvs();
        let mut h1 = vec![0.0; t1.out_len()];
        conv::tconv_forward(&t1, &h0, p.view("tconv1.weight"), p.view("tconv1.bias"), &mut h1);
        h1.iter_mut().for_each(|v| *v = elu(*v));
        let mut h2 = vec![0.0; t2.out_len()];
        conv::tconv_forward(&t2, &h1, p.view("tconv2.weight"), p.view("tconv2.bias"), &mut h2);
        h2.iter_mut().for_each(|v| *v = elu(*v));
        let c = self.arch.dec_out_conv();
        let mut out = vec![0.0; c.out_len()];
        conv::conv_forward(&c, &h2, p.view("conv_out.weight"), p.view("conv_out.bias"), &mut out);
        out.iter_mut().for_each(|v| *v = sigmoid(*v));
        Ok(DecoderTape {
            z: z.to_vec(),
            hidden: [h0, h1, h2],
            output: Image {
                height: self.arch.height,
                width: self.arch.width,
                pixels: out,
            },
        })
    }

    pub fn decode(&self, z: &[f64]) -> Result<Image> {
        Ok(self.forward(z)?.output)
    }

    /// Accumulates parameter gradients and returns the latent gradient.
    pub fn backward(&self, tape: &DecoderTape, d_output: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let p = &self.params;
        let d_pre: Vec<f64> = d_output
            .iter()
            .zip(&tape.output.pixels)
            .map(|(g, y)| g * y * (1.0 - y))
            .collect();
        let c = self.arch.dec_out_conv();
        let mut d_h2 = vec![0.0; c.in_len()];
        {
            let (gw, gb) = split_two(grad, p.range("conv_out.weight"), p.range("conv_out.bias"));
            conv::conv_backward(&c, &tape.hidden[2], p.view("conv_out.weight"), &d_pre, Some(&mut d_h2), gw, gb);
        }
        let [t1, t2] = self.arch.dec_tconvs();
        for (d, &h) in d_h2.iter_mut().zip(&tape.hidden[2]) {
            *d *= elu_grad_from_output(h);
        }
        let mut d_h1 = vec![0.0; t2.in_len()];
        {
            let (gw, gb) = split_two(grad, p.range("tconv2.weight"), p.range("tconv2.bias"));
            conv::tconv_backward(&t2, &tape.hidden[1], p.view("tconv2.weight"), &d_h2, Some(&mut d_h1), gw, gb);
        }
        for (d, &h) in d_h1.iter_mut().zip(&tape.hidden[1]) {
            *d *= elu_grad_from_output(h);
        }
        let mut d_h0 = vec![0.0; t1.in_len()];
        {
            let (gw, gb) = split_two(grad, p.range("tconv1.weight"), p.range("tconv1.bias"));
            conv::tconv_backward(&t1, &tape.hidden[0], p.view("tconv1.weight"), &d_h1, Some(&mut d_h0), gw, gb);
        }
        for (d, &h) in d_h0.iter_mut().zip(&tape.hidden[0]) {
            *d *= elu_grad_from_output(h);
        }
        let mut d_z = vec![0.0; self.arch.latent];
        let (gw, gb) = split_two(grad, p.range("fc.weight"), p.range("fc.bias"));
        dense_backward(&tape.z, p.view("fc.weight"), &d_h0, &mut d_z, gw, gb);
        d_z
    }
}

/// Two disjoint mutable windows into a gradient buffer; `a` must precede `b`.
fn split_two(
    grad: &mut [f64],
    a: std::ops::Range<usize>,
    b: std::ops::Range<usize>,
) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (head, tail) = grad.split_at_mut(b.start);
    (&mut head[a], &mut tail[..b.end - b.start])
}

/// `Σ_pixels log N(y | mu, σ_y²)`.
pub fn gaussian_loglik(y: &Image, mu: &Image, sigma_y: f64) -> f64 {
    let var = sigma_y * sigma_y;
    let k = y.pixels.len() as f64;
    let sq: f64 = y
        .pixels
        .iter()
        .zip(&mu.pixels)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    -0.5 * k * (LN_2PI + var.ln()) - 0.5 * sq / var
}

/// Gradient of [`gaussian_loglik`] with respect to `mu`.
pub fn gaussian_loglik_grad(y: &Image, mu: &Image, sigma_y: f64) -> Vec<f64> {
    let var = sigma_y * sigma_y;
    y.pixels.iter().zip(&mu.pixels).map(|(a, b)| (a - b) / var).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(h, w, (0..h * w).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn architecture_matches_declared_layers() {
        let arch = NetArch::mnist(16);
        let enc = Encoder::layout(arch);
        let dec = Decoder::layout(arch);
        let convs = |p: &NetParams| {
            p.entries()
                .iter()
                .filter(|e| e.name.ends_with(".weight") && e.shape.len() == 4)
                .map(|e| e.shape.clone())
                .collect::<Vec<_>>()
        };
        for net in [&enc, &dec] {
            let c = convs(net);
            assert_eq!(c.len(), 3);
            assert!(c.iter().all(|s| s[2] == 3 && s[3] == 3));
            let fcs = net.entries().iter().filter(|e| e.name == "fc.weight").count();
            assert_eq!(fcs, 1);
        }
        assert!(convs(&enc).iter().all(|s| s[0] == 8));
        assert_eq!(enc.view("fc.weight").len(), 32 * 7 * 7 * 8);
        let expected_enc = (8 * 9 + 8) + 2 * (8 * 8 * 9 + 8) + (392 * 32 + 32);
        assert_eq!(enc.len(), expected_enc);
        let expected_dec = (16 * 392 + 392) + 2 * (8 * 8 * 9 + 8) + (8 * 9 + 1);
        assert_eq!(dec.len(), expected_dec);
    }

    #[test]
    fn zero_output_layer_gives_constant_encoding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = Encoder::init(NetArch::mnist(16), &mut rng);
        let (m, s) = enc.encode(&Image::zeros(28, 28)).unwrap();
        assert_eq!(m.len(), 16);
        assert!(m.iter().all(|&v| v == 0.0));
        assert!(s.iter().all(|&v| (v - STD_AT_ZERO).abs() < 1e-15));
    }

    #[test]
    fn encoder_rejects_wrong_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = Encoder::init(NetArch::mnist(4), &mut rng);
        assert!(matches!(enc.encode(&Image::zeros(8, 8)), Err(Error::Shape(_))));
    }

    #[test]
    fn decoder_shape_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dec = Decoder::init(NetArch::mnist(16), &mut rng);
        let z: Vec<f64> = (0..16).map(|i| (i as f64 - 8.0) * 0.3).collect();
        let a = dec.decode(&z).unwrap();
        let b = dec.decode(&z).unwrap();
        assert_eq!((a.height, a.width), (28, 28));
        assert_eq!(a, b);
        assert!(a.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn gaussian_loglik_values() {
        let y = toy_image(28, 28, 3);
        let at_mean = gaussian_loglik(&y, &y, 1.0);
        assert!((at_mean - (-392.0 * (2.0 * std::f64::consts::PI).ln())).abs() < 1e-10);
        let mut shifted = y.clone();
        shifted.pixels[5] += 0.1;
        assert!((gaussian_loglik(&y, &shifted, 0.1) - (gaussian_loglik(&y, &y, 0.1) - 0.5)).abs() < 1e-9);
    }

    fn fd_check(f: &dyn Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], tol: f64) {
        let h = 1e-5;
        for i in 0..x.len() {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            let num = (f(&a) - f(&b)) / (2.0 * h);
            let denom = num.abs().max(analytic[i].abs()).max(1e-4);
            assert!(
                (num - analytic[i]).abs() / denom <= tol,
                "component {i}: numeric {num} vs analytic {}",
                analytic[i]
            );
        }
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let arch = NetArch::new(8, 8, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut enc = Encoder::init(arch, &mut rng);
        // give the output layer nonzero weights so every path is exercised
        for v in enc.params.view_mut("fc.weight") {
            *v = rng.gen_range(-0.3..0.3);
        }
        let img = toy_image(8, 8, 5);
        let wm: Vec<f64> = (0..3).map(|i| 0.5 - i as f64 * 0.4).collect();
        let ws: Vec<f64> = (0..3).map(|i| 0.2 + i as f64 * 0.3).collect();
        let loss = |e: &Encoder, img: &Image| {
            let (m, s) = e.encode(img).unwrap();
            m.iter().zip(&wm).map(|(a, b)| a * b).sum::<f64>() + s.iter().zip(&ws).map(|(a, b)| a * a * b).sum::<f64>()
        };
        let tape = enc.forward(&img).unwrap();
        let d_s: Vec<f64> = tape.stds.iter().zip(&ws).map(|(s, w)| 2.0 * s * w).collect();
        let mut grad = vec![0.0; enc.params.len()];
        let d_img = enc.backward(&tape, &wm, &d_s, &mut grad);
        let params = enc.params.values().to_vec();
        fd_check(
            &|p: &[f64]| {
                let mut e = enc.clone();
                e.params.set_values(p.to_vec()).unwrap();
                loss(&e, &img)
            },
            &params,
            &grad,
            1e-4,
        );
        fd_check(
            &|px: &[f64]| loss(&enc, &Image::new(8, 8, px.to_vec()).unwrap()),
            &img.pixels,
            &d_img,
            1e-4,
        );
    }

    #[test]
    fn decoder_gradients_match_finite_differences() {
        let arch = NetArch::new(8, 4, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dec = Decoder::init(arch, &mut rng);
        let y = toy_image(8, 4, 7);
        let z = vec![0.3, -0.7, 1.1];
        let loss = |d: &Decoder, z: &[f64]| gaussian_loglik(&y, &d.decode(z).unwrap(), 0.3);
        let tape = dec.forward(&z).unwrap();
        let d_out = gaussian_loglik_grad(&y, &tape.output, 0.3);
        let mut grad = vec![0.0; dec.params.len()];
        let d_z = dec.backward(&tape, &d_out, &mut grad);
        let params = dec.params.values().to_vec();
        fd_check(
            &|p: &[f64]| {
                let mut d = dec.clone();
                d.params.set_values(p.to_vec()).unwrap();
                loss(&d, &z)
            },
            &params,
            &grad,
            1e-4,
        );
        fd_check(&|zz: &[f64]| loss(&dec, zz), &z, &d_z, 1e-4);
    }
}
