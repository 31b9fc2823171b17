//! Learned `b`-bit asymmetric quantization of covariance parameters.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-component scale `γ` and offset `β`, shared by every Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymQuant<T> {
    pub gamma: [T; 3],
    pub beta: [T; 3],
    pub bits: u8,
}

impl<T: Scalar> AsymQuant<T> {
    pub fn new(gamma: [T; 3], beta: [T; 3], bits: u8) -> Result<Self> {
        if !(1..=16).contains(&bits) {
            return Err(Error::InvalidConfig(format!("quantization bits {bits} outside 1..=16")));
        }
        if gamma.iter().any(|g| !(*g > T::zero())) {
            return Err(Error::InvalidConfig("quantization scales must be > 0".into()));
        }
        Ok(Self { gamma, beta, bits })
    }

    /// Range-covering initialization: `β = min`, `γ = (max − min) / (2^b − 1)`.
    pub fn fit_range(values: &[[T; 3]], bits: u8) -> Result<Self> {
        let q = T::lit(max_code(bits) as f64);
        let mut gamma = [T::one(); 3];
        let mut beta = [T::zero(); 3];
        for i in 0..3 {
            let lo = values.iter().map(|v| v[i]).fold(T::infinity(), T::min);
            let hi = values.iter().map(|v| v[i]).fold(T::neg_infinity(), T::max);
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidConfig("cannot fit quantizer range to empty or non-finite data".into()));
            }
            beta[i] = lo;
            gamma[i] = ((hi - lo) / q).max(T::lit(1e-6));
        }
        Self::new(gamma, beta, bits)
    }

    #[inline]
    pub fn max_code(&self) -> u32 {
        max_code(self.bits)
    }
}

#[inline]
pub fn max_code(bits: u8) -> u32 {
    (1u32 << bits) - 1
}

/// `code = round(clamp((l − β)/γ, 0, 2^b − 1))`, `dequantized = code·γ + β`.
pub fn quantize_asym<T: Scalar>(l: [T; 3], q: &AsymQuant<T>) -> ([u16; 3], [T; 3]) {
    let qmax = T::lit(q.max_code() as f64);
    let mut codes = [0u16; 3];
    let mut deq = [T::zero(); 3];
    for i in 0..3 {
        let v = ((l[i] - q.beta[i]) / q.gamma[i]).max(T::zero()).min(qmax);
        let code = v.round();
        codes[i] = code.to_u16().unwrap_or(0);
        deq[i] = code * q.gamma[i] + q.beta[i];
    }
    (codes, deq)
}

/// Straight-through partial derivatives of the dequantized value with
/// respect to `(l, γ, β)`, one triple per component.
pub fn asym_ste_partials<T: Scalar>(l: [T; 3], q: &AsymQuant<T>) -> [[T; 3]; 3] {
    let qmax = T::lit(q.max_code() as f64);
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        let v = (l[i] - q.beta[i]) / q.gamma[i];
        out[i] = if v < T::zero() {
            [T::zero(), T::zero(), T::one()]
        } else if v > qmax {
            [T::zero(), qmax, T::one()]
        } else {
            [T::one(), v.round() - v, T::zero()]
        };
    }
    out
}
