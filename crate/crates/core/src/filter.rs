//! Separable Gaussian windows shared by the SSIM loss and MS-SSIM metric.

use crate::scalar::Scalar;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalized 1-D Gaussian taps.
pub fn gaussian_kernel<T: Scalar>(size: usize, sigma: f64) -> Vec<T> {
    let r = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - r;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| T::lit(v / sum)).collect()
}

/// Same-size separable filtering with zero padding. For a symmetric kernel
/// this operator is self-adjoint.
pub fn blur_same<T: Scalar>(src: &[T], w: usize, h: usize, k: &[T]) -> Vec<T> {
    let r = k.len() / 2;
    let mut tmp = vec![T::zero(); w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            let mut acc = T::zero();
            for xx in lo..=hi {
                acc += k[xx + r - x] * row[xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for yy in lo..=hi {
            let kv = k[yy + r - y];
            let src_row = &tmp[yy * w..(yy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, &s) in dst.iter_mut().zip(src_row) {
                *d += kv * s;
            }
        }
    }
    out
}

/// Valid-region separable filtering; output is `(w−n+1)×(h−n+1)`.
pub fn blur_valid<T: Scalar>(src: &[T], w: usize, h: usize, k: &[T]) -> (Vec<T>, usize, usize) {
    let n = k.len();
    if w < n || h < n {
        return (Vec::new(), 0, 0);
    }
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut tmp = vec![T::zero(); ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = T::zero();
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * src[y * w + x + i];
            }
            tmp[y * ow + x] = acc;
        }
    }
    let mut out = vec![T::zero(); ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = T::zero();
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * tmp[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    (out, ow, oh)
}
