//! Convolution, transposed convolution, bilinear resampling and activation
//! primitives on planar channel-major buffers. All parallel loops write
//! disjoint fixed chunks, so results are independent of thread count.

use crate::par;

use super::LayerSpec;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let p = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    // Keep outputs strictly inside (0,1) even for extreme logits.
    p.clamp(1e-12, 1.0 - 1e-12)
}

pub fn relu_inplace(data: &mut [f64]) {
    for v in data.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zero the gradient wherever the (post-)activation was clamped.
pub fn relu_backward_inplace(grad: &mut [f64], act: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(act) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// y = conv(x) + b, zero padding, parallel over output channels.
pub fn conv_forward(s: &LayerSpec, w: &[f64], b: &[f64], x: &[f64], y: &mut [f64]) {
    let plane = s.out_w * s.out_h;
    par::for_each_chunk_mut(y, plane, |oc, out| {
        for oy in 0..s.out_h {
            for ox in 0..s.out_w {
                let mut acc = b[oc];
                for ic in 0..s.in_ch {
                    let wbase = ((oc * s.in_ch + ic) * s.k) * s.k;
                    let xbase = ic * s.in_h * s.in_w;
                    for ky in 0..s.k {
                        let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                        if iy < 0 || iy >= s.in_h as isize {
                            continue;
                        }
                        let xrow = xbase + iy as usize * s.in_w;
                        let wrow = wbase + ky * s.k;
                        for kx in 0..s.k {
                            let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                            if ix < 0 || ix >= s.in_w as isize {
                                continue;
                            }
                            acc += w[wrow + kx] * x[xrow + ix as usize];
                        }
                    }
                }
                out[oy * s.out_w + ox] = acc;
            }
        }
    });
}

/// dx = conv weights applied transposed to dy, parallel over input channels.
pub fn conv_backward_input(s: &LayerSpec, w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let plane = s.in_w * s.in_h;
    par::for_each_chunk_mut(dx, plane, |ic, dxp| {
        for iy in 0..s.in_h {
            for ix in 0..s.in_w {
                let mut acc = 0.0;
                for oc in 0..s.out_ch {
                    let wbase = ((oc * s.in_ch + ic) * s.k) * s.k;
                    let ybase = oc * s.out_h * s.out_w;
                    for ky in 0..s.k {
                        let oy_num = iy as isize + s.pad as isize - ky as isize;
                        if oy_num < 0 || oy_num % s.stride as isize != 0 {
                            continue;
                        }
                        let oy = (oy_num / s.stride as isize) as usize;
                        if oy >= s.out_h {
                            continue;
                        }
                        for kx in 0..s.k {
                            let ox_num = ix as isize + s.pad as isize - kx as isize;
                            if ox_num < 0 || ox_num % s.stride as isize != 0 {
                                continue;
                            }
                            let ox = (ox_num / s.stride as isize) as usize;
                            if ox >= s.out_w {
                                continue;
                            }
                            acc += w[wbase + ky * s.k + kx] * dy[ybase + oy * s.out_w + ox];
                        }
                    }
                }
                dxp[iy * s.in_w + ix] = acc;
            }
        }
    });
}

/// Weight and bias gradients for a convolution; dw parallel over output
/// channels, db summed in channel order.
pub fn conv_backward_params(
    s: &LayerSpec,
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) {
    let wchunk = s.in_ch * s.k * s.k;
    par::for_each_chunk_mut(dw, wchunk, |oc, dwp| {
        let ybase = oc * s.out_h * s.out_w;
        for ic in 0..s.in_ch {
            let xbase = ic * s.in_h * s.in_w;
            for ky in 0..s.k {
                for kx in 0..s.k {
                    let mut acc = 0.0;
                    for oy in 0..s.out_h {
                        let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                        if iy < 0 || iy >= s.in_h as isize {
                            continue;
                        }
                        let xrow = xbase + iy as usize * s.in_w;
                        let yrow = ybase + oy * s.out_w;
                        for ox in 0..s.out_w {
                            let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                            if ix < 0 || ix >= s.in_w as isize {
                                continue;
                            }
                            acc += dy[yrow + ox] * x[xrow + ix as usize];
                        }
                    }
                    dwp[(ic * s.k + ky) * s.k + kx] = acc;
                }
            }
        }
    });
    for oc in 0..s.out_ch {
        let ybase = oc * s.out_h * s.out_w;
        db[oc] = dy[ybase..ybase + s.out_h * s.out_w].iter().sum();
    }
}

/// Transposed convolution forward (gather form), parallel over output
/// channels. Weights are `[in_ch][out_ch][ky][kx]`.
pub fn deconv_forward(s: &LayerSpec, w: &[f64], b: &[f64], x: &[f64], y: &mut [f64]) {
    let plane = s.out_w * s.out_h;
    par::for_each_chunk_mut(y, plane, |oc, out| {
        for oy in 0..s.out_h {
            for ox in 0..s.out_w {
                let mut acc = b[oc];
                for ky in 0..s.k {
                    let iy_num = oy as isize + s.pad as isize - ky as isize;
                    if iy_num < 0 || iy_num % s.stride as isize != 0 {
                        continue;
                    }
                    let iy = (iy_num / s.stride as isize) as usize;
                    if iy >= s.in_h {
                        continue;
                    }
                    for kx in 0..s.k {
                        let ix_num = ox as isize + s.pad as isize - kx as isize;
                        if ix_num < 0 || ix_num % s.stride as isize != 0 {
                            continue;
                        }
                        let ix = (ix_num / s.stride as isize) as usize;
                        if ix >= s.in_w {
                            continue;
                        }
                        for ic in 0..s.in_ch {
                            let wi = ((ic * s.out_ch + oc) * s.k + ky) * s.k + kx;
                            acc += w[wi] * x[ic * s.in_h * s.in_w + iy * s.in_w + ix];
                        }
                    }
                }
                out[oy * s.out_w + ox] = acc;
            }
        }
    });
}

/// Input gradient of a transposed convolution, parallel over input channels.
pub fn deconv_backward_input(s: &LayerSpec, w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let plane = s.in_w * s.in_h;
    par::for_each_chunk_mut(dx, plane, |ic, dxp| {
        for iy in 0..s.in_h {
            for ix in 0..s.in_w {
                let mut acc = 0.0;
                for ky in 0..s.k {
                    let oy = (iy * s.stride + ky) as isize - s.pad as isize;
                    if oy < 0 || oy >= s.out_h as isize {
                        continue;
                    }
                    for kx in 0..s.k {
                        let ox = (ix * s.stride + kx) as isize - s.pad as isize;
                        if ox < 0 || ox >= s.out_w as isize {
                            continue;
                        }
                        for oc in 0..s.out_ch {
                            let wi = ((ic * s.out_ch + oc) * s.k + ky) * s.k + kx;
                            acc += w[wi]
                                * dy[oc * s.out_h * s.out_w
                                    + oy as usize * s.out_w
                                    + ox as usize];
                        }
                    }
                }
                dxp[iy * s.in_w + ix] = acc;
            }
        }
    });
}

/// Weight and bias gradients for a transposed convolution, parallel over
/// input channels (each owns a disjoint weight chunk).
pub fn deconv_backward_params(
    s: &LayerSpec,
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) {
    let wchunk = s.out_ch * s.k * s.k;
    par::for_each_chunk_mut(dw, wchunk, |ic, dwp| {
        let xbase = ic * s.in_h * s.in_w;
        for oc in 0..s.out_ch {
            let ybase = oc * s.out_h * s.out_w;
            for ky in 0..s.k {
                for kx in 0..s.k {
                    let mut acc = 0.0;
                    for iy in 0..s.in_h {
                        let oy = (iy * s.stride + ky) as isize - s.pad as isize;
                        if oy < 0 || oy >= s.out_h as isize {
                            continue;
                        }
                        let xrow = xbase + iy * s.in_w;
                        let yrow = ybase + oy as usize * s.out_w;
                        for ix in 0..s.in_w {
                            let ox = (ix * s.stride + kx) as isize - s.pad as isize;
                            if ox < 0 || ox >= s.out_w as isize {
                                continue;
                            }
                            acc += x[xrow + ix] * dy[yrow + ox as usize];
                        }
                    }
                    dwp[(oc * s.k + ky) * s.k + kx] = acc;
                }
            }
        }
    });
    for oc in 0..s.out_ch {
        let ybase = oc * s.out_h * s.out_w;
        db[oc] = dy[ybase..ybase + s.out_h * s.out_w].iter().sum();
    }
}

/// Bilinear upsample of a single-channel plane (half-pixel centers, edge
/// clamp) plus the weights needed for its transpose.
fn sample_axis(dst: usize, dst_len: usize, src_len: usize) -> (usize, usize, f64) {
    let pos = (dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5;
    let pos = pos.clamp(0.0, (src_len - 1) as f64);
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, pos - i0 as f64)
}

pub fn upsample_bilinear(src: &[f64], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f64> {
    let mut out = vec![0.0; dw * dh];
    for y in 0..dh {
        let (y0, y1, fy) = sample_axis(y, dh, sh);
        for x in 0..dw {
            let (x0, x1, fx) = sample_axis(x, dw, sw);
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bot = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            out[y * dw + x] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

/// Transpose of `upsample_bilinear`: scatter each output gradient back onto
/// its four source taps with the same weights.
pub fn upsample_bilinear_backward(
    dy: &[f64],
    dw_: usize,
    dh_: usize,
    sw: usize,
    sh: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; sw * sh];
    for y in 0..dh_ {
        let (y0, y1, fy) = sample_axis(y, dh_, sh);
        for x in 0..dw_ {
            let (x0, x1, fx) = sample_axis(x, dw_, sw);
            let g = dy[y * dw_ + x];
            dx[y0 * sw + x0] += g * (1.0 - fx) * (1.0 - fy);
            dx[y0 * sw + x1] += g * fx * (1.0 - fy);
            dx[y1 * sw + x0] += g * (1.0 - fx) * fy;
            dx[y1 * sw + x1] += g * fx * fy;
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{LayerKind, LayerSpec};

    fn spec(kind: LayerKind, in_ch: usize, out_ch: usize, k: usize, stride: usize) -> LayerSpec {
        let (in_w, in_h) = (6, 6);
        let (out_w, out_h) = match kind {
            LayerKind::Deconv => (in_w * 2, in_h * 2),
            _ => {
                let o = (in_w + 2 - k) / stride + 1;
                (o, o)
            }
        };
        LayerSpec {
            name: "t",
            kind,
            in_ch,
            out_ch,
            k,
            stride,
            pad: 1,
            in_w,
            in_h,
            out_w,
            out_h,
        }
    }

    #[test]
    fn conv_identity_kernel_passes_through() {
        let s = spec(LayerKind::Conv, 1, 1, 3, 1);
        let mut w = vec![0.0; 9];
        w[4] = 1.0; // center tap
        let x: Vec<f64> = (0..36).map(|i| i as f64).collect();
        let mut y = vec![0.0; 36];
        conv_forward(&s, &w, &[0.0], &x, &mut y);
        assert_eq!(x, y);
    }

    #[test]
    fn deconv_doubles_resolution() {
        let s = spec(LayerKind::Deconv, 2, 3, 4, 2);
        let x = vec![1.0; 2 * 36];
        let w = vec![0.5; 2 * 3 * 16];
        let mut y = vec![0.0; 3 * 144];
        deconv_forward(&s, &w, &[0.0; 3], &x, &mut y);
        // Interior outputs each gather 2x2 taps from both input channels.
        assert!((y[13 * 12 + 5] - 2.0 * 4.0 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn upsample_transpose_is_adjoint() {
        // <up(x), y> must equal <x, up^T(y)> for the pair to be a valid
        // linear map and its transpose.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let (sw, sh, dw, dh) = (4, 3, 9, 7);
        let x: Vec<f64> = (0..sw * sh).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..dw * dh).map(|_| rng.random_range(-1.0..1.0)).collect();
        let up = upsample_bilinear(&x, sw, sh, dw, dh);
        let down = upsample_bilinear_backward(&y, dw, dh, sw, sh);
        let lhs: f64 = up.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&down).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn sigmoid_is_bounded_and_centered() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) < 1.0);
        assert!(sigmoid(-800.0) > 0.0);
    }
}
