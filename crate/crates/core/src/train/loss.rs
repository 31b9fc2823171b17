//! Reconstruction losses and their per-pixel gradients.

use crate::error::Result;
use crate::filter::{blur_same, gaussian_kernel, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
use crate::image::{ImageBuffer, CHANNELS};
use crate::scalar::Scalar;

/// Weight of the pixel term in the combined losses; SSIM gets the rest.
pub const PIXEL_TERM_WEIGHT: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LossKind {
    #[default]
    L2,
    L1,
    Ssim,
    L1Ssim,
    L2Ssim,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::L2 => "l2",
            LossKind::L1 => "l1",
            LossKind::Ssim => "ssim",
            LossKind::L1Ssim => "l1+ssim",
            LossKind::L2Ssim => "l2+ssim",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_lowercase().as_str() {
            "l2" => LossKind::L2,
            "l1" => LossKind::L1,
            "ssim" => LossKind::Ssim,
            "l1+ssim" => LossKind::L1Ssim,
            "l2+ssim" => LossKind::L2Ssim,
            _ => return None,
        })
    }
}

/// Scalar loss and `∂loss/∂rendered`.
pub fn loss_and_grad<T: Scalar>(
    rendered: &ImageBuffer<T>,
    target: &ImageBuffer<T>,
    kind: LossKind,
) -> Result<(T, ImageBuffer<T>)> {
    rendered.ensure_same_shape(target)?;
    let mut grad = ImageBuffer::zeros(rendered.width(), rendered.height());
    let w_pix = T::lit(PIXEL_TERM_WEIGHT);
    let w_ssim = T::one() - w_pix;
    let loss = match kind {
        LossKind::L2 => mse_into(rendered, target, T::one(), &mut grad),
        LossKind::L1 => mae_into(rendered, target, T::one(), &mut grad),
        LossKind::Ssim => T::one() - ssim_into(rendered, target, -T::one(), &mut grad),
        LossKind::L1Ssim => {
            let l1 = mae_into(rendered, target, w_pix, &mut grad);
            let s = ssim_into(rendered, target, -w_ssim, &mut grad);
            w_pix * l1 + w_ssim * (T::one() - s)
        }
        LossKind::L2Ssim => {
            let l2 = mse_into(rendered, target, w_pix, &mut grad);
            let s = ssim_into(rendered, target, -w_ssim, &mut grad);
            w_pix * l2 + w_ssim * (T::one() - s)
        }
    };
    Ok((loss, grad))
}

fn mse_into<T: Scalar>(x: &ImageBuffer<T>, y: &ImageBuffer<T>, weight: T, grad: &mut ImageBuffer<T>) -> T {
    let count = T::lit(x.as_slice().len() as f64);
    let scale = T::lit(2.0) * weight / count;
    let mut sum = T::zero();
    for ((g, &a), &b) in grad.as_mut_slice().iter_mut().zip(x.as_slice()).zip(y.as_slice()) {
        let r = a - b;
        sum += r * r;
        *g += scale * r;
    }
    sum / count
}

fn mae_into<T: Scalar>(x: &ImageBuffer<T>, y: &ImageBuffer<T>, weight: T, grad: &mut ImageBuffer<T>) -> T {
    let count = T::lit(x.as_slice().len() as f64);
    let scale = weight / count;
    let mut sum = T::zero();
    for ((g, &a), &b) in grad.as_mut_slice().iter_mut().zip(x.as_slice()).zip(y.as_slice()) {
        let r = a - b;
        sum += r.abs();
        if r > T::zero() {
            *g += scale;
        } else if r < T::zero() {
            *g -= scale;
        }
    }
    sum / count
}

/// Mean SSIM (11×11 Gaussian window, zero-padded same-size maps) averaged
/// over channels. Adds `weight · ∂SSIM/∂x` into `grad`.
fn ssim_into<T: Scalar>(x: &ImageBuffer<T>, y: &ImageBuffer<T>, weight: T, grad: &mut ImageBuffer<T>) -> T {
    let (w, h) = (x.width(), x.height());
    let n = w * h;
    let k: Vec<T> = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = T::lit(SSIM_K1 * SSIM_K1);
    let c2 = T::lit(SSIM_K2 * SSIM_K2);
    let two = T::lit(2.0);
    let count = T::lit((n * CHANNELS) as f64);
    let mut total = T::zero();

    for c in 0..CHANNELS {
        let xs = x.channel(c);
        let ys = y.channel(c);
        let xx: Vec<T> = xs.iter().map(|&v| v * v).collect();
        let yy: Vec<T> = ys.iter().map(|&v| v * v).collect();
        let xy: Vec<T> = xs.iter().zip(ys).map(|(&a, &b)| a * b).collect();
        let mx = blur_same(xs, w, h, &k);
        let my = blur_same(ys, w, h, &k);
        let exx = blur_same(&xx, w, h, &k);
        let eyy = blur_same(&yy, w, h, &k);
        let exy = blur_same(&xy, w, h, &k);

        let mut d_mx = vec![T::zero(); n];
        let mut d_sxx = vec![T::zero(); n];
        let mut d_sxy = vec![T::zero(); n];
        let pix_w = weight / count;
        for i in 0..n {
            let (mxi, myi) = (mx[i], my[i]);
            let sxx = exx[i] - mxi * mxi;
            let syy = eyy[i] - myi * myi;
            let sxy = exy[i] - mxi * myi;
            let a1 = two * mxi * myi + c1;
            let a2 = two * sxy + c2;
            let b1 = mxi * mxi + myi * myi + c1;
            let b2 = sxx + syy + c2;
            let s = a1 * a2 / (b1 * b2);
            total += s;

            let ds_dmx = two * myi * a2 / (b1 * b2) - s * two * mxi / b1;
            let ds_dsxy = two * a1 / (b1 * b2);
            let ds_dsxx = -s / b2;
            // sxx and sxy depend on mx through the −mx² and −mx·my terms.
            d_mx[i] = pix_w * (ds_dmx - two * mxi * ds_dsxx - myi * ds_dsxy);
            d_sxx[i] = pix_w * ds_dsxx;
            d_sxy[i] = pix_w * ds_dsxy;
        }
        let g_mx = blur_same(&d_mx, w, h, &k);
        let g_sxx = blur_same(&d_sxx, w, h, &k);
        let g_sxy = blur_same(&d_sxy, w, h, &k);
        let out = grad.channel_mut(c);
        for i in 0..n {
            out[i] += g_mx[i] + two * xs[i] * g_sxx[i] + ys[i] * g_sxy[i];
        }
    }
    total / count
}

/// Mean SSIM with the loss's windowing (zero-padded, same size).
pub fn ssim<T: Scalar>(x: &ImageBuffer<T>, y: &ImageBuffer<T>) -> Result<T> {
    x.ensure_same_shape(y)?;
    let mut scratch = ImageBuffer::zeros(x.width(), x.height());
    Ok(ssim_into(x, y, T::zero(), &mut scratch))
}
