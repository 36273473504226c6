use crate::nets::Image;

/// Rotates about the image center with bilinear interpolation.
///
/// Samples falling outside the source read as zero; the result is clipped to `[0, 1]`.
pub fn rotate_image(img: &Image, angle: f64) -> Image {
    if angle == 0.0 {
        return img.clone();
    }
    let (h, w) = (img.height, img.width);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = angle.sin_cos();
    let sample = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            img.pixels[r as usize * w + c as usize]
        }
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            // inverse map: where in the source does this output pixel come from
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (c0, r0) = (x0 as isize, y0 as isize);
            let v = sample(r0, c0) * (1.0 - fx) * (1.0 - fy)
                + sample(r0, c0 + 1) * fx * (1.0 - fy)
                + sample(r0 + 1, c0) * (1.0 - fx) * fy
                + sample(r0 + 1, c0 + 1) * fx * fy;
            out[y * w + x] = v.clamp(0.0, 1.0);
        }
    }
    Image {
        height: h,
        width: w,
        pixels: out,
    }
}
