//! Gaussian parameterization: raw storage, covariance factorizations and
//! the mapping from position logits to pixel coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Offset added to the diagonal of `L` (or to both scales) at materialization.
pub const DIAG_OFFSET: f64 = 0.5;
/// Lower clamp for effective diagonal entries / scales.
pub const EPS_MIN: f64 = 1e-3;
/// Determinants at or below this are treated as corrupted parameters. Sits
/// an order of magnitude under `EPS_MIN⁴`, the smallest clamped determinant.
pub const DET_FLOOR: f64 = 1e-13;
/// Learnable scalars per Gaussian: 2 position + 3 covariance + 3 color.
pub const PARAMS_PER_GAUSSIAN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FactorizationKind {
    /// `Σ = L Lᵀ`, raw `(l1, l2, l3)`.
    Cholesky,
    /// `Σ = R S Sᵀ Rᵀ`, raw `(θ, s1, s2)`.
    RotationScaling,
}

impl FactorizationKind {
    pub fn to_byte(self) -> u8 {
        match self {
            FactorizationKind::Cholesky => 0,
            FactorizationKind::RotationScaling => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(FactorizationKind::Cholesky),
            1 => Some(FactorizationKind::RotationScaling),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FactorizationKind::Cholesky => "cholesky",
            FactorizationKind::RotationScaling => "rs",
        }
    }
}

/// One splat. All fields are unconstrained; activations are applied when the
/// Gaussian is materialized.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Gaussian2D<T> {
    /// Position logits; `tanh` maps them into `(-1, 1)²`.
    pub mu_raw: [T; 2],
    /// `(l1, l2, l3)` or `(θ, s1, s2)` depending on the cloud's factorization.
    pub cov_raw: [T; 3],
    /// Weighted color `c′`, opacity already folded in.
    pub color_w: [T; 3],
}

impl<T: Scalar> Gaussian2D<T> {
    pub fn to_array(&self) -> [T; PARAMS_PER_GAUSSIAN] {
        let [m0, m1] = self.mu_raw;
        let [v0, v1, v2] = self.cov_raw;
        let [c0, c1, c2] = self.color_w;
        [m0, m1, v0, v1, v2, c0, c1, c2]
    }

    pub fn from_slice(p: &[T]) -> Self {
        Self {
            mu_raw: [p[0], p[1]],
            cov_raw: [p[2], p[3], p[4]],
            color_w: [p[5], p[6], p[7]],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Gaussian2D<U> {
        let c = |v: T| U::lit(v.as_f64());
        Gaussian2D {
            mu_raw: self.mu_raw.map(c),
            cov_raw: self.cov_raw.map(c),
            color_w: self.color_w.map(c),
        }
    }
}

/// Symmetric 2×2 matrix `[[a, b], [b, c]]` with its cached determinant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance2x2<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub det: T,
}

impl<T: Scalar> Covariance2x2<T> {
    pub fn new(a: T, b: T, c: T) -> Self {
        Self {
            a,
            b,
            c,
            det: a * c - b * b,
        }
    }

    /// Builds from entries whose determinant is known in closed form.
    fn with_det(a: T, b: T, c: T, det: T) -> Self {
        Self { a, b, c, det }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::one())
    }

    /// Closed-form inverse via the adjugate.
    pub fn invert(&self) -> Result<Self> {
        if !(self.det.as_f64() > DET_FLOOR) {
            return Err(Error::DegenerateCovariance {
                det: self.det.as_f64(),
            });
        }
        let inv_det = T::one() / self.det;
        Ok(Self {
            a: self.c * inv_det,
            b: -self.b * inv_det,
            c: self.a * inv_det,
            det: inv_det,
        })
    }

    /// `dᵀ M d`.
    #[inline]
    pub fn quad_form(&self, d: [T; 2]) -> T {
        self.a * d[0] * d[0] + (self.b + self.b) * d[0] * d[1] + self.c * d[1] * d[1]
    }

    /// `M d`.
    #[inline]
    pub fn mul_vec(&self, d: [T; 2]) -> [T; 2] {
        [self.a * d[0] + self.b * d[1], self.b * d[0] + self.c * d[1]]
    }

    /// Full matrix product, row-major `[m00, m01, m10, m11]`.
    pub fn mul(&self, o: &Self) -> [T; 4] {
        [
            self.a * o.a + self.b * o.b,
            self.a * o.b + self.b * o.c,
            self.b * o.a + self.c * o.b,
            self.b * o.b + self.c * o.c,
        ]
    }
}

/// Applies the diagonal offset and the `EPS_MIN` clamp. The flag is false
/// when the clamp is active, in which case the gradient is zero.
#[inline]
pub fn effective_diagonal<T: Scalar>(raw: T) -> (T, bool) {
    let v = raw + T::lit(DIAG_OFFSET);
    let floor = T::lit(EPS_MIN);
    if v >= floor {
        (v, true)
    } else {
        (floor, false)
    }
}

/// Effective factor values of one Gaussian's covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovFactors<T> {
    /// `l = (l1+0.5, l2, l3+0.5)`; `active[i]` is false where a diagonal was clamped.
    Cholesky { l: [T; 3], active: [bool; 2] },
    /// `θ` and `s = (s1+0.5, s2+0.5)`.
    RotationScaling {
        theta: T,
        s: [T; 2],
        active: [bool; 2],
    },
}

impl<T: Scalar> CovFactors<T> {
    pub fn from_raw(raw: [T; 3], kind: FactorizationKind) -> Self {
        match kind {
            FactorizationKind::Cholesky => {
                let (l1, a1) = effective_diagonal(raw[0]);
                let (l3, a3) = effective_diagonal(raw[2]);
                CovFactors::Cholesky {
                    l: [l1, raw[1], l3],
                    active: [a1, a3],
                }
            }
            FactorizationKind::RotationScaling => {
                let (s1, a1) = effective_diagonal(raw[1]);
                let (s2, a2) = effective_diagonal(raw[2]);
                CovFactors::RotationScaling {
                    theta: raw[0],
                    s: [s1, s2],
                    active: [a1, a2],
                }
            }
        }
    }

    pub fn covariance(&self) -> Covariance2x2<T> {
        match *self {
            CovFactors::Cholesky { l: [l1, l2, l3], .. } => {
                let d = l1 * l3;
                Covariance2x2::with_det(l1 * l1, l1 * l2, l2 * l2 + l3 * l3, d * d)
            }
            CovFactors::RotationScaling { theta, s, .. } => {
                let (sin, cos) = theta.sin_cos();
                let (v1, v2) = (s[0] * s[0], s[1] * s[1]);
                Covariance2x2::with_det(
                    cos * cos * v1 + sin * sin * v2,
                    cos * sin * (v1 - v2),
                    sin * sin * v1 + cos * cos * v2,
                    v1 * v2,
                )
            }
        }
    }
}

pub fn materialize_covariance<T: Scalar>(cov_raw: [T; 3], kind: FactorizationKind) -> Covariance2x2<T> {
    CovFactors::from_raw(cov_raw, kind).covariance()
}

pub fn invert_covariance<T: Scalar>(cov: &Covariance2x2<T>) -> Result<Covariance2x2<T>> {
    cov.invert()
}

/// Maps position logits to continuous pixel coordinates (y down, origin at
/// the top-left corner of the frame).
#[inline]
pub fn position_to_pixel<T: Scalar>(mu_raw: [T; 2], width: usize, height: usize) -> [T; 2] {
    let half = T::lit(0.5);
    [
        (mu_raw[0].tanh() + T::one()) * half * T::lit(width as f64),
        (mu_raw[1].tanh() + T::one()) * half * T::lit(height as f64),
    ]
}

/// Derivative of [`position_to_pixel`] per axis.
#[inline]
pub fn position_to_pixel_jacobian<T: Scalar>(mu_raw: [T; 2], width: usize, height: usize) -> [T; 2] {
    let half = T::lit(0.5);
    let t0 = mu_raw[0].tanh();
    let t1 = mu_raw[1].tanh();
    [
        (T::one() - t0 * t0) * half * T::lit(width as f64),
        (T::one() - t1 * t1) * half * T::lit(height as f64),
    ]
}

/// Ordered set of Gaussians over a fixed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud<T> {
    gaussians: Vec<Gaussian2D<T>>,
    kind: FactorizationKind,
    width: usize,
    height: usize,
}

impl<T: Scalar> GaussianCloud<T> {
    pub fn new(
        gaussians: Vec<Gaussian2D<T>>,
        kind: FactorizationKind,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if gaussians.is_empty() {
            return Err(Error::InvalidConfig("a cloud needs at least one Gaussian".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidConfig(format!(
                "frame {width}x{height} must be at least 1x1"
            )));
        }
        Ok(Self {
            gaussians,
            kind,
            width,
            height,
        })
    }

    /// Random initialization: positions `atanh(2u−1)`, covariance and color
    /// parameters uniform in `[0, 1)`.
    pub fn init_random(
        n: usize,
        kind: FactorizationKind,
        width: usize,
        height: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Keep 2u−1 strictly inside (−1, 1) so atanh stays finite.
        let lim = 1.0 - 1e-6;
        let gaussians = (0..n)
            .map(|_| {
                let mut pos = || {
                    let u: f64 = rng.gen();
                    T::lit((2.0 * u - 1.0).clamp(-lim, lim).atanh())
                };
                let mu_raw = [pos(), pos()];
                let mut unit = || T::lit(rng.gen::<f64>());
                Gaussian2D {
                    mu_raw,
                    cov_raw: [unit(), unit(), unit()],
                    color_w: [unit(), unit(), unit()],
                }
            })
            .collect();
        Self::new(gaussians, kind, width, height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    #[inline]
    pub fn kind(&self) -> FactorizationKind {
        self.kind
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn gaussians(&self) -> &[Gaussian2D<T>] {
        &self.gaussians
    }

    pub fn gaussians_mut(&mut self) -> &mut [Gaussian2D<T>] {
        &mut self.gaussians
    }

    pub fn param_count(&self) -> usize {
        self.gaussians.len() * PARAMS_PER_GAUSSIAN
    }

    /// Parameters flattened Gaussian-major, 8 per Gaussian.
    pub fn to_flat(&self) -> Vec<T> {
        self.gaussians.iter().flat_map(|g| g.to_array()).collect()
    }

    pub fn set_flat(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length");
        for (g, chunk) in self
            .gaussians
            .iter_mut()
            .zip(flat.chunks_exact(PARAMS_PER_GAUSSIAN))
        {
            *g = Gaussian2D::from_slice(chunk);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.gaussians.iter().all(Gaussian2D::is_finite)
    }

    pub fn cast<U: Scalar>(&self) -> GaussianCloud<U> {
        GaussianCloud {
            gaussians: self.gaussians.iter().map(Gaussian2D::cast).collect(),
            kind: self.kind,
            width: self.width,
            height: self.height,
        }
    }

    /// Same cloud with the Gaussians reordered by `order[i]` → new position `i`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            gaussians: order.iter().map(|&i| self.gaussians[i]).collect(),
            ..self.clone()
        }
    }
}
