//! 3x3 convolutions with padding 1, plus their transposed counterparts.
//!
//! Tensors are flat `[channel][row][col]` slices. Convolution weights are
//! `[c_out][c_in][3][3]`; transposed-convolution weights are `[c_in][c_out][3][3]`.

pub(crate) const KSIZE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn h_out(&self) -> usize {
        (self.h_in - 1) / self.stride + 1
    }

    pub fn w_out(&self) -> usize {
        (self.w_in - 1) / self.stride + 1
    }

    #[cfg(test)]
    pub fn weight_len(&self) -> usize {
        self.c_in * self.c_out * KSIZE * KSIZE
    }

    pub fn in_len(&self) -> usize {
        self.c_in * self.h_in * self.w_in
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.h_out() * self.w_out()
    }
}

/// Output indices `o` with `o * stride + k - 1` inside `[0, n_in)`, clipped to `[0, n_out)`.
#[inline]
fn valid_range(k: usize, stride: usize, n_in: usize, n_out: usize) -> std::ops::Range<usize> {
    if k > n_in {
        return 0..0;
    }
    let lo = if k == 0 { 1usize.div_ceil(stride) } else { 0 };
    // o * stride + k - 1 <= n_in - 1
    let hi = ((n_in - k) / stride + 1).min(n_out);
    lo..hi.max(lo)
}

pub(crate) fn conv_forward(s: &ConvShape, input: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    let (ho, wo) = (s.h_out(), s.w_out());
    debug_assert_eq!(input.len(), s.in_len());
    debug_assert_eq!(out.len(), s.out_len());
    for co in 0..s.c_out {
        let plane = &mut out[co * ho * wo..(co + 1) * ho * wo];
        plane.fill(bias[co]);
        for ci in 0..s.c_in {
            let src = &input[ci * s.h_in * s.w_in..(ci + 1) * s.h_in * s.w_in];
            for ky in 0..KSIZE {
                let rows = valid_range(ky, s.stride, s.h_in, ho);
                for kx in 0..KSIZE {
                    let w = weight[((co * s.c_in + ci) * KSIZE + ky) * KSIZE + kx];
                    let cols = valid_range(kx, s.stride, s.w_in, wo);
                    for oy in rows.clone() {
                        let iy = oy * s.stride + ky - 1;
                        let src_row = &src[iy * s.w_in..(iy + 1) * s.w_in];
                        let dst_row = &mut plane[oy * wo..(oy + 1) * wo];
                        for ox in cols.clone() {
                            dst_row[ox] += w * src_row[ox * s.stride + kx - 1];
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates weight and bias gradients; writes the input gradient when requested.
pub(crate) fn conv_backward(
    s: &ConvShape,
    input: &[f64],
    weight: &[f64],
    d_out: &[f64],
    mut d_in: Option<&mut [f64]>,
    d_weight: &mut [f64],
    d_bias: &mut [f64],
) {
    let (ho, wo) = (s.h_out(), s.w_out());
    if let Some(d) = d_in.as_deref_mut() {
        d.fill(0.0);
    }
    for co in 0..s.c_out {
        let g = &d_out[co * ho * wo..(co + 1) * ho * wo];
        d_bias[co] += g.iter().sum::<f64>();
        for ci in 0..s.c_in {
            let base = ci * s.h_in * s.w_in;
            for ky in 0..KSIZE {
                let rows = valid_range(ky, s.stride, s.h_in, ho);
                for kx in 0..KSIZE {
                    let widx = ((co * s.c_in + ci) * KSIZE + ky) * KSIZE + kx;
                    let w = weight[widx];
                    let cols = valid_range(kx, s.stride, s.w_in, wo);
                    let mut acc = 0.0;
                    for oy in rows.clone() {
                        let iy = oy * s.stride + ky - 1;
                        let g_row = &g[oy * wo..(oy + 1) * wo];
                        let src_row = &input[base + iy * s.w_in..base + (iy + 1) * s.w_in];
                        for ox in cols.clone() {
                            acc += g_row[ox] * src_row[ox * s.stride + kx - 1];
                        }
                        if let Some(d) = d_in.as_deref_mut() {
                            let d_row = &mut d[base + iy * s.w_in..base + (iy + 1) * s.w_in];
                            for ox in cols.clone() {
                                d_row[ox * s.stride + kx - 1] += w * g_row[ox];
                            }
                        }
                    }
                    d_weight[widx] += acc;
                }
            }
        }
    }
}

/// Shape of a transposed convolution that upsamples by `stride`.
///
/// It is the adjoint of a [`ConvShape`] mapping `stride * h_in` rows down to `h_in`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct TConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub stride: usize,
}

impl TConvShape {
    pub fn h_out(&self) -> usize {
        self.h_in * self.stride
    }

    pub fn w_out(&self) -> usize {
        self.w_in * self.stride
    }

    #[cfg(test)]
    pub fn weight_len(&self) -> usize {
        self.c_in * self.c_out * KSIZE * KSIZE
    }

    pub fn in_len(&self) -> usize {
        self.c_in * self.h_in * self.w_in
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.h_out() * self.w_out()
    }
}

pub(crate) fn tconv_forward(s: &TConvShape, input: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    let (ho, wo) = (s.h_out(), s.w_out());
    debug_assert_eq!(input.len(), s.in_len());
    debug_assert_eq!(out.len(), s.out_len());
    for co in 0..s.c_out {
        out[co * ho * wo..(co + 1) * ho * wo].fill(bias[co]);
    }
    for ci in 0..s.c_in {
        let src = &input[ci * s.h_in * s.w_in..(ci + 1) * s.h_in * s.w_in];
        for co in 0..s.c_out {
            let plane = &mut out[co * ho * wo..(co + 1) * ho * wo];
            for ky in 0..KSIZE {
                let rows = valid_range(ky, s.stride, ho, s.h_in);
                for kx in 0..KSIZE {
                    let w = weight[((ci * s.c_out + co) * KSIZE + ky) * KSIZE + kx];
                    let cols = valid_range(kx, s.stride, wo, s.w_in);
                    for iy in rows.clone() {
                        let oy = iy * s.stride + ky - 1;
                        let src_row = &src[iy * s.w_in..(iy + 1) * s.w_in];
                        let dst_row = &mut plane[oy * wo..(oy + 1) * wo];
                        for ix in cols.clone() {
                            dst_row[ix * s.stride + kx - 1] += w * src_row[ix];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn tconv_backward(
    s: &TConvShape,
    input: &[f64],
    weight: &[f64],
    d_out: &[f64],
    mut d_in: Option<&mut [f64]>,
    d_weight: &mut [f64],
    d_bias: &mut [f64],
) {
    let (ho, wo) = (s.h_out(), s.w_out());
    if let Some(d) = d_in.as_deref_mut() {
        d.fill(0.0);
    }
    for co in 0..s.c_out {
        d_bias[co] += d_out[co * ho * wo..(co + 1) * ho * wo].iter().sum::<f64>();
    }
    for ci in 0..s.c_in {
        let base = ci * s.h_in * s.w_in;
        for co in 0..s.c_out {
            let g = &d_out[co * ho * wo..(co + 1) * ho * wo];
            for ky in 0..KSIZE {
                let rows = valid_range(ky, s.stride, ho, s.h_in);
                for kx in 0..KSIZE {
                    let widx = ((ci * s.c_out + co) * KSIZE + ky) * KSIZE + kx;
                    let w = weight[widx];
                    let cols = valid_range(kx, s.stride, wo, s.w_in);
                    let mut acc = 0.0;
                    for iy in rows.clone() {
                        let oy = iy * s.stride + ky - 1;
                        let g_row = &g[oy * wo..(oy + 1) * wo];
                        let src_row = &input[base + iy * s.w_in..base + (iy + 1) * s.w_in];
                        for ix in cols.clone() {
                            acc += g_row[ix * s.stride + kx - 1] * src_row[ix];
                        }
                        if let Some(d) = d_in.as_deref_mut() {
                            let d_row = &mut d[base + iy * s.w_in..base + (iy + 1) * s.w_in];
                            for ix in cols.clone() {
                                d_row[ix] += w * g_row[ix * s.stride + kx - 1];
                            }
                        }
                    }
                    d_weight[widx] += acc;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(s: &ConvShape, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let (ho, wo) = (s.h_out(), s.w_out());
        let mut out = vec![0.0; s.out_len()];
        for co in 0..s.c_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias[co];
                    for ci in 0..s.c_in {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * s.stride + ky) as isize - 1;
                                let ix = (ox * s.stride + kx) as isize - 1;
                                if iy < 0 || ix < 0 || iy >= s.h_in as isize || ix >= s.w_in as isize {
                                    continue;
                                }
                                acc += weight[((co * s.c_in + ci) * 3 + ky) * 3 + kx]
                                    * input[(ci * s.h_in + iy as usize) * s.w_in + ix as usize];
                            }
                        }
                    }
                    out[(co * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    fn ramp(n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|i| ((i * 37 % 23) as f64 - 11.0) * scale).collect()
    }

    #[test]
    fn conv_matches_naive_loops() {
        for &(h, w, stride) in &[(6, 5, 1), (8, 8, 2), (7, 4, 2), (4, 4, 2), (2, 2, 2)] {
            let s = ConvShape { c_in: 2, c_out: 3, h_in: h, w_in: w, stride };
            let input = ramp(s.in_len(), 0.1);
            let weight = ramp(s.weight_len(), 0.03);
            let bias = vec![0.1, -0.2, 0.3];
            let mut out = vec![0.0; s.out_len()];
            conv_forward(&s, &input, &weight, &bias, &mut out);
            let expected = naive_conv(&s, &input, &weight, &bias);
            for (a, b) in out.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stride_two_halves_the_grid() {
        let s = ConvShape { c_in: 1, c_out: 1, h_in: 28, w_in: 28, stride: 2 };
        assert_eq!((s.h_out(), s.w_out()), (14, 14));
        let s = ConvShape { h_in: 14, w_in: 14, ..s };
        assert_eq!(s.h_out(), 7);
    }

    /// `<tconv(x), y> == <x, conv(y)>` with matching weights and zero bias.
    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        let t = TConvShape { c_in: 2, c_out: 3, h_in: 4, w_in: 3, stride: 2 };
        let c = ConvShape { c_in: 3, c_out: 2, h_in: 8, w_in: 6, stride: 2 };
        let x = ramp(t.in_len(), 0.2);
        let y = ramp(c.in_len(), 0.07);
        // tconv weight [ci][co] equals conv weight [co'=ci][ci'=co]
        let wt = ramp(t.weight_len(), 0.05);
        let mut tx = vec![0.0; t.out_len()];
        tconv_forward(&t, &x, &wt, &[0.0; 3], &mut tx);
        let mut cy = vec![0.0; c.out_len()];
        conv_forward(&c, &y, &wt, &[0.0; 2], &mut cy);
        let lhs: f64 = tx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&cy).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    fn check_grads<F, B>(in_len: usize, w_len: usize, b_len: usize, out_len: usize, fwd: F, bwd: B)
    where
        F: Fn(&[f64], &[f64], &[f64]) -> Vec<f64>,
        B: Fn(&[f64], &[f64], &[f64], &mut [f64], &mut [f64], &mut [f64]),
    {
        let x = ramp(in_len, 0.13);
        let w = ramp(w_len, 0.04);
        let b = ramp(b_len, 0.2);
        let r = ramp(out_len, 0.3);
        let loss = |x: &[f64], w: &[f64], b: &[f64]| -> f64 {
            fwd(x, w, b).iter().zip(&r).map(|(o, r)| 0.5 * o * o * r).sum()
        };
        let out = fwd(&x, &w, &b);
        let g: Vec<f64> = out.iter().zip(&r).map(|(o, r)| o * r).collect();
        let (mut dx, mut dw, mut db) = (vec![0.0; in_len], vec![0.0; w_len], vec![0.0; b_len]);
        bwd(&x, &w, &g, &mut dx, &mut dw, &mut db);
        let h = 1e-6;
        let fd = |f: &dyn Fn(f64) -> f64| (f(h) - f(-h)) / (2.0 * h);
        for i in 0..in_len {
            let num = fd(&|e| {
                let mut xx = x.clone();
                xx[i] += e;
                loss(&xx, &w, &b)
            });
            assert!((num - dx[i]).abs() < 1e-6 * (1.0 + num.abs()), "dx[{i}] {num} vs {}", dx[i]);
        }
        for i in 0..w_len {
            let num = fd(&|e| {
                let mut ww = w.clone();
                ww[i] += e;
                loss(&x, &ww, &b)
            });
            assert!((num - dw[i]).abs() < 1e-6 * (1.0 + num.abs()), "dw[{i}]");
        }
        for i in 0..b_len {
            let num = fd(&|e| {
                let mut bb = b.clone();
                bb[i] += e;
                loss(&x, &w, &bb)
            });
            assert!((num - db[i]).abs() < 1e-6 * (1.0 + num.abs()), "db[{i}]");
        }
    }

    #[test]
    fn conv_gradients() {
        for stride in [1, 2] {
            let s = ConvShape { c_in: 2, c_out: 2, h_in: 5, w_in: 4, stride };
            check_grads(
                s.in_len(),
                s.weight_len(),
                2,
                s.out_len(),
                |x, w, b| {
                    let mut o = vec![0.0; s.out_len()];
                    conv_forward(&s, x, w, b, &mut o);
                    o
                },
                |x, w, g, dx, dw, db| conv_backward(&s, x, w, g, Some(dx), dw, db),
            );
        }
    }

    #[test]
    fn tconv_gradients() {
        let s = TConvShape { c_in: 2, c_out: 3, h_in: 3, w_in: 2, stride: 2 };
        check_grads(
            s.in_len(),
            s.weight_len(),
            3,
            s.out_len(),
            |x, w, b| {
                let mut o = vec![0.0; s.out_len()];
                tconv_forward(&s, x, w, b, &mut o);
                o
            },
            |x, w, g, dx, dw, db| tconv_backward(&s, x, w, g, Some(dx), dw, db),
        );
    }
}
