//! Analytic backward pass of the accumulated-summation renderer.
//!
//! Gradients are first collected per Gaussian in screen space (center,
//! covariance, color) and then chained through the covariance factorization
//! and the position activation. The displacement convention is
//! `d = pixel_center − gaussian_center`.

use rayon::prelude::*;

use crate::error::Result;
use crate::image::ImageBuffer;
use crate::model::{position_to_pixel_jacobian, CovFactors, GaussianCloud};
use crate::raster::{eval_sigma, prepare_splats, RenderConfig, Splat, TileBins};
use crate::scalar::Scalar;

/// Loss gradient of one Gaussian with respect to its screen-space quantities.
///
/// `d_cov = (g1, g2, g3)` holds `G = ∂L/∂Σ = [[g1, g2], [g2, g3]]`, each
/// matrix entry treated as an independent variable.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScreenGrad<T> {
    pub d_center: [T; 2],
    pub d_cov: [T; 3],
    pub d_color: [T; 3],
}

impl<T: Scalar> ScreenGrad<T> {
    #[inline]
    fn add(&mut self, o: &Self) {
        for i in 0..2 {
            self.d_center[i] += o.d_center[i];
        }
        for i in 0..3 {
            self.d_cov[i] += o.d_cov[i];
            self.d_color[i] += o.d_color[i];
        }
    }
}

/// Per-Gaussian gradients with respect to the raw learnable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer<T> {
    pub d_mu_raw: Vec<[T; 2]>,
    pub d_cov_raw: Vec<[T; 3]>,
    pub d_color_w: Vec<[T; 3]>,
}

impl<T: Scalar> GradientBuffer<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_mu_raw: vec![[T::zero(); 2]; n],
            d_cov_raw: vec![[T::zero(); 3]; n],
            d_color_w: vec![[T::zero(); 3]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.d_mu_raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_mu_raw.is_empty()
    }

    /// Same layout as [`GaussianCloud::to_flat`].
    pub fn to_flat(&self) -> Vec<T> {
        (0..self.len())
            .flat_map(|i| {
                let [m0, m1] = self.d_mu_raw[i];
                let [v0, v1, v2] = self.d_cov_raw[i];
                let [c0, c1, c2] = self.d_color_w[i];
                [m0, m1, v0, v1, v2, c0, c1, c2]
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

/// Contribution of one (Gaussian, pixel) pair.
///
/// `d_center` is the gradient with respect to the Gaussian center in pixel
/// coordinates; the caller chains it through the position activation.
#[inline]
pub fn backward_pixel<T: Scalar>(
    color: &[T; 3],
    inv: &crate::model::Covariance2x2<T>,
    d: [T; 2],
    upstream: [T; 3],
) -> ScreenGrad<T> {
    let e = (-eval_sigma(inv, d)).exp();
    // ∂L/∂σ = Σ_k upstream_k · (−c′_k e^{−σ})
    let dl_dsigma = -e * (upstream[0] * color[0] + upstream[1] * color[1] + upstream[2] * color[2]);
    let sd = inv.mul_vec(d);
    let half = T::lit(0.5);
    ScreenGrad {
        // ∂σ/∂center = −Σ⁻¹d
        d_center: [-dl_dsigma * sd[0], -dl_dsigma * sd[1]],
        // ∂σ/∂Σ = −½ Σ⁻¹ d dᵀ Σ⁻¹
        d_cov: [
            -half * dl_dsigma * sd[0] * sd[0],
            -half * dl_dsigma * sd[0] * sd[1],
            -half * dl_dsigma * sd[1] * sd[1],
        ],
        d_color: [upstream[0] * e, upstream[1] * e, upstream[2] * e],
    }
}

/// Gradient with respect to the effective Cholesky factor `(l1, l2, l3)`.
#[inline]
pub fn chol_backward<T: Scalar>(g: [T; 3], l: [T; 3]) -> [T; 3] {
    let two = T::lit(2.0);
    let [g1, g2, g3] = g;
    let [l1, l2, l3] = l;
    [
        two * g1 * l1 + two * g2 * l2,
        two * g2 * l1 + two * g3 * l2,
        two * g3 * l3,
    ]
}

/// Gradient with respect to `(θ, s1, s2)` of `Σ = R S Sᵀ Rᵀ`.
#[inline]
pub fn rs_backward<T: Scalar>(g: [T; 3], theta: T, s: [T; 2]) -> [T; 3] {
    let (sin, cos) = theta.sin_cos();
    let [g1, g2, g3] = g;
    let two = T::lit(2.0);
    // ⟨G, M⟩ for symmetric M = [[m00, m01], [m01, m11]].
    let inner = |m00: T, m01: T, m11: T| g1 * m00 + two * g2 * m01 + g3 * m11;

    let (v1, v2) = (s[0] * s[0], s[1] * s[1]);
    // ∂Σ/∂θ = R'S²Rᵀ + RS²R'ᵀ
    let dtheta = inner(
        -two * sin * cos * (v1 - v2),
        (cos * cos - sin * sin) * (v1 - v2),
        two * sin * cos * (v1 - v2),
    );
    // R diag(2s1, 0) Rᵀ and R diag(0, 2s2) Rᵀ
    let ds1 = inner(two * s[0] * cos * cos, two * s[0] * cos * sin, two * s[0] * sin * sin);
    let ds2 = inner(two * s[1] * sin * sin, -two * s[1] * cos * sin, two * s[1] * cos * cos);
    [dtheta, ds1, ds2]
}

/// Screen-space gradients of every splat for the given upstream image
/// (`∂L/∂pixel`), using the same footprints as the forward pass.
///
/// Each tile accumulates privately; tile partials are reduced in tile order.
pub fn backward_screen<T: Scalar>(
    splats: &[Splat<T>],
    upstream: &ImageBuffer<T>,
    cfg: &RenderConfig,
) -> Vec<ScreenGrad<T>> {
    let (width, height) = (upstream.width(), upstream.height());
    let bins = TileBins::build(splats, width, height, cfg);
    let partials: Vec<Vec<ScreenGrad<T>>> = (0..bins.bins.len())
        .into_par_iter()
        .map(|tile| {
            bins.bins[tile]
                .iter()
                .map(|entry| {
                    let s = &splats[entry.index];
                    let mut acc = ScreenGrad::default();
                    for y in entry.rows.clone() {
                        for x in entry.cols.clone() {
                            let up = [upstream.get(x, y, 0), upstream.get(x, y, 1), upstream.get(x, y, 2)];
                            if up.iter().all(|v| v.is_zero()) {
                                continue;
                            }
                            acc.add(&backward_pixel(&s.color, &s.inv, s.displacement(x, y), up));
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect();

    let mut out = vec![ScreenGrad::default(); splats.len()];
    for (tile, grads) in partials.iter().enumerate() {
        for (entry, g) in bins.bins[tile].iter().zip(grads) {
            out[entry.index].add(g);
        }
    }
    out
}

/// Chains a screen-space covariance gradient to the raw covariance parameters.
pub fn cov_backward_raw<T: Scalar>(g: [T; 3], factors: &CovFactors<T>) -> [T; 3] {
    let gate = |v: T, active: bool| if active { v } else { T::zero() };
    match *factors {
        CovFactors::Cholesky { l, active } => {
            let d = chol_backward(g, l);
            [gate(d[0], active[0]), d[1], gate(d[2], active[1])]
        }
        CovFactors::RotationScaling { theta, s, active } => {
            let d = rs_backward(g, theta, s);
            [d[0], gate(d[1], active[0]), gate(d[2], active[1])]
        }
    }
}

/// Chains screen-space gradients to the cloud's raw parameters.
pub fn chain_to_raw<T: Scalar>(cloud: &GaussianCloud<T>, screen: &[ScreenGrad<T>]) -> GradientBuffer<T> {
    let mut out = GradientBuffer::zeros(cloud.len());
    for (i, (g, sg)) in cloud.gaussians().iter().zip(screen).enumerate() {
        let jac = position_to_pixel_jacobian(g.mu_raw, cloud.width(), cloud.height());
        out.d_mu_raw[i] = [sg.d_center[0] * jac[0], sg.d_center[1] * jac[1]];
        out.d_cov_raw[i] = cov_backward_raw(sg.d_cov, &CovFactors::from_raw(g.cov_raw, cloud.kind()));
        out.d_color_w[i] = sg.d_color;
    }
    out
}

pub fn backward_render<T: Scalar>(
    cloud: &GaussianCloud<T>,
    upstream: &ImageBuffer<T>,
    cfg: &RenderConfig,
) -> Result<GradientBuffer<T>> {
    cloud.ensure_frame(upstream)?;
    let splats = prepare_splats(cloud)?;
    Ok(chain_to_raw(cloud, &backward_screen(&splats, upstream, cfg)))
}

impl<T: Scalar> GaussianCloud<T> {
    pub(crate) fn ensure_frame<U: Scalar>(&self, img: &ImageBuffer<U>) -> Result<()> {
        if img.width() != self.width() || img.height() != self.height() {
            return Err(crate::Error::ShapeMismatch {
                expected: (self.width(), self.height()),
                found: (img.width(), img.height()),
            });
        }
        Ok(())
    }
}
