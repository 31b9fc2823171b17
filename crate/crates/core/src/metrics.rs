//! Distortion and rate metrics.
//!
//! PSNR is computed on float images clamped to `[0, 1]` (not on 8-bit
//! quantized values). MS-SSIM uses the five-scale weights, 11×11 Gaussian
//! window with σ = 1.5, `K1 = 0.01`, `K2 = 0.03`, valid-region filtering
//! and 2×2 average-pool downsampling. Images too small for five scales use
//! as many scales as fit, with the leading weights renormalized to sum to 1.

use crate::error::Result;
use crate::filter::{blur_valid, gaussian_kernel, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
use crate::image::{ImageBuffer, CHANNELS};
use crate::scalar::Scalar;

pub const PSNR_CAP_DB: f64 = 100.0;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ms_ssim: f64,
    pub bpp: Option<f64>,
}

impl MetricReport {
    pub fn compute<T: Scalar>(x: &ImageBuffer<T>, y: &ImageBuffer<T>, bpp: Option<f64>) -> Result<Self> {
        Ok(Self {
            psnr_db: psnr(x, y)?,
            ms_ssim: ms_ssim(x, y)?,
            bpp,
        })
    }
}

/// Mean squared error after clamping both images to `[0, 1]`.
pub fn mse<T: Scalar>(x: &ImageBuffer<T>, y: &ImageBuffer<T>) -> Result<f64> {
    x.ensure_same_shape(y)?;
    let n = x.as_slice().len() as f64;
    let sum: f64 = x
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(a, b)| {
            let d = a.as_f64().clamp(0.0, 1.0) - b.as_f64().clamp(0.0, 1.0);
            d * d
        })
        .sum();
    Ok(sum / n)
}

/// `10·log10(1 / MSE)` with peak 1, capped at [`PSNR_CAP_DB`].
pub fn psnr<T: Scalar>(x: &ImageBuffer<T>, y: &ImageBuffer<T>) -> Result<f64> {
    let m = mse(x, y)?;
    if m <= 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}

/// Number of scales that fit, and the window size used.
pub fn ms_ssim_scales(width: usize, height: usize) -> (usize, usize) {
    let min_dim = width.min(height);
    if min_dim < SSIM_WINDOW {
        // Tiny images: single scale with the largest odd window that fits.
        let win = if min_dim % 2 == 1 { min_dim } else { min_dim - 1 };
        return (1, win.max(1));
    }
    let mut scales = 1;
    while scales < MS_SSIM_WEIGHTS.len() && (min_dim >> scales) >= SSIM_WINDOW {
        scales += 1;
    }
    (scales, SSIM_WINDOW)
}

pub fn ms_ssim<T: Scalar>(x: &ImageBuffer<T>, y: &ImageBuffer<T>) -> Result<f64> {
    x.ensure_same_shape(y)?;
    let (scales, win) = ms_ssim_scales(x.width(), x.height());
    let weight_sum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let weights: Vec<f64> = MS_SSIM_WEIGHTS[..scales].iter().map(|w| w / weight_sum).collect();
    let kernel: Vec<f64> = gaussian_kernel(win, SSIM_SIGMA);

    let mut total = 0.0;
    for c in 0..CHANNELS {
        let mut a: Vec<f64> = x.channel(c).iter().map(|v| v.as_f64().clamp(0.0, 1.0)).collect();
        let mut b: Vec<f64> = y.channel(c).iter().map(|v| v.as_f64().clamp(0.0, 1.0)).collect();
        let (mut w, mut h) = (x.width(), x.height());
        let mut value = 1.0;
        for (s, &weight) in weights.iter().enumerate() {
            let (ssim, cs) = ssim_cs(&a, &b, w, h, &kernel);
            let term = if s + 1 == scales { ssim } else { cs };
            value *= term.max(0.0).powf(weight);
            if s + 1 < scales {
                (a, _, _) = downsample(&a, w, h);
                (b, w, h) = downsample(&b, w, h);
            }
        }
        total += value;
    }
    Ok((total / CHANNELS as f64).clamp(0.0, 1.0))
}

/// Mean SSIM and mean contrast-structure term over the valid region.
fn ssim_cs(a: &[f64], b: &[f64], w: usize, h: usize, k: &[f64]) -> (f64, f64) {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(p, q)| p * q).collect();
    let (ma, ow, oh) = blur_valid(a, w, h, k);
    let (mb, ..) = blur_valid(b, w, h, k);
    let (eaa, ..) = blur_valid(&aa, w, h, k);
    let (ebb, ..) = blur_valid(&bb, w, h, k);
    let (eab, ..) = blur_valid(&ab, w, h, k);
    let n = (ow * oh) as f64;
    let (mut ssim_sum, mut cs_sum) = (0.0, 0.0);
    for i in 0..ow * oh {
        let saa = eaa[i] - ma[i] * ma[i];
        let sbb = ebb[i] - mb[i] * mb[i];
        let sab = eab[i] - ma[i] * mb[i];
        let cs = (2.0 * sab + c2) / (saa + sbb + c2);
        let lum = (2.0 * ma[i] * mb[i] + c1) / (ma[i] * ma[i] + mb[i] * mb[i] + c1);
        cs_sum += cs;
        ssim_sum += lum * cs;
    }
    (ssim_sum / n, cs_sum / n)
}

/// 2×2 average pooling; a trailing odd row/column is dropped.
fn downsample(src: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let (ow, oh) = (w / 2, h / 2);
    let mut out = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        for x in 0..ow {
            let i = 2 * y * w + 2 * x;
            out.push(0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]));
        }
    }
    (out, ow, oh)
}

/// Bits per pixel of a stream of `total_bits` covering a `width×height` image.
pub fn bits_per_pixel(total_bits: u64, width: usize, height: usize) -> f64 {
    total_bits as f64 / (width * height) as f64
}
