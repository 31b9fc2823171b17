//! Attribute quantization: fp16 positions, learned asymmetric quantization of
//! covariance parameters and residual vector quantization of colors.

mod asym;
mod kmeans;
mod qat;
mod rvq;

pub use asym::{asym_ste_partials, max_code, quantize_asym, AsymQuant};
pub use kmeans::{kmeans_init, KMeansResult};
pub use qat::{qat_finetune, QatConfig, QatOutcome};
pub use rvq::{
    commitment_loss, ema_update, rvq_decode, rvq_encode, CodebookStage, RvqCode, RvqCodebook, DEFAULT_EMA_DECAY,
};

use half::f16;

use crate::error::{Error, Result};
use crate::model::{FactorizationKind, Gaussian2D, GaussianCloud};
use crate::raster::{render, RenderConfig};
use crate::image::ImageBuffer;
use crate::scalar::Scalar;

/// Largest binary16 value below 1; keeps stored positions strictly inside (−1, 1).
const FP16_BELOW_ONE: f32 = 1.0 - 1.0 / 2048.0;

/// Rounds a normalized position to binary16 (round-to-nearest-even),
/// keeping it strictly inside `(−1, 1)`.
pub fn position_to_fp16(p: f32) -> u16 {
    let h = f16::from_f32(p.clamp(-FP16_BELOW_ONE, FP16_BELOW_ONE));
    h.to_bits()
}

pub fn fp16_to_f32(bits: u16) -> f32 {
    f16::from_bits(bits).to_f32()
}

/// `⌈log₂ B⌉`, the width of one color index.
pub fn index_bits(codebook_size: usize) -> u32 {
    if codebook_size <= 1 {
        0
    } else {
        usize::BITS - (codebook_size - 1).leading_zeros()
    }
}

/// One Gaussian after quantization. Field order matches the packed record,
/// so the derived ordering is the lexicographic order of the packed bytes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QuantizedGaussian {
    /// Binary16 bit patterns of `tanh(μ_raw)`.
    pub position: [u16; 2],
    pub cov_codes: [u16; 3],
    pub color_indices: Vec<u8>,
}

/// A fully quantized cloud; decodable without the source image.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedCloud {
    pub width: u32,
    pub height: u32,
    pub kind: FactorizationKind,
    pub bits: u8,
    pub gamma: [f32; 3],
    pub beta: [f32; 3],
    /// `M` stages of `B` codewords.
    pub codebooks: Vec<Vec<[f32; 3]>>,
    pub kmeans_seed: u64,
    pub gaussians: Vec<QuantizedGaussian>,
}

impl QuantizedCloud {
    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn stages(&self) -> usize {
        self.codebooks.len()
    }

    pub fn codebook_size(&self) -> usize {
        self.codebooks.first().map_or(0, Vec::len)
    }

    pub fn index_bits(&self) -> u32 {
        index_bits(self.codebook_size())
    }

    /// Sorts the records into their canonical order. Rendering sums in record
    /// order, so canonical clouds render bit-identically however they were stored.
    pub fn canonicalize(&mut self) {
        self.gaussians.sort_unstable();
    }

    /// Bits of one packed Gaussian: `32 + 3b + M·⌈log₂B⌉`.
    pub fn record_bits(&self) -> u32 {
        32 + 3 * u32::from(self.bits) + self.stages() as u32 * self.index_bits()
    }

    /// Checks every code against its declared width and the metadata for consistency.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.gaussians.is_empty() {
            return Err(Error::InvalidConfig("empty frame or cloud".into()));
        }
        if !(1..=16).contains(&self.bits) {
            return Err(Error::InvalidConfig(format!("bits {} outside 1..=16", self.bits)));
        }
        let b = self.codebook_size();
        if self.codebooks.is_empty() || b == 0 || b > 255 || self.codebooks.iter().any(|s| s.len() != b) {
            return Err(Error::InvalidConfig("codebooks must be M >= 1 stages of 1..=255 entries".into()));
        }
        let qmax = max_code(self.bits);
        for g in &self.gaussians {
            if let Some(&c) = g.cov_codes.iter().find(|&&c| u32::from(c) > qmax) {
                return Err(Error::CodeOutOfRange {
                    field: "covariance",
                    value: u32::from(c),
                    bits: u32::from(self.bits),
                });
            }
            if g.color_indices.len() != self.stages() {
                return Err(Error::InvalidConfig("color index count differs from stage count".into()));
            }
            if let Some(&i) = g.color_indices.iter().find(|&&i| usize::from(i) >= b) {
                return Err(Error::CodeOutOfRange {
                    field: "color index",
                    value: u32::from(i),
                    bits: self.index_bits(),
                });
            }
            if g.position.iter().any(|&p| !fp16_to_f32(p).is_finite() || fp16_to_f32(p).abs() >= 1.0) {
                return Err(Error::InvalidConfig("positions must be finite and inside (-1, 1)".into()));
            }
        }
        Ok(())
    }

    /// Dequantized Gaussian parameters in the cloud's raw parameterization.
    pub fn dequantize<T: Scalar>(&self, g: &QuantizedGaussian) -> Gaussian2D<T> {
        let mu = g.position.map(|p| T::lit(f64::from(fp16_to_f32(p)).atanh()));
        let mut cov = [T::zero(); 3];
        for i in 0..3 {
            cov[i] = T::lit(f64::from(f32::from(g.cov_codes[i]) * self.gamma[i] + self.beta[i]));
        }
        let idx: Vec<usize> = g.color_indices.iter().map(|&i| usize::from(i)).collect();
        let color = rvq_decode(&idx, &self.codebooks).map(|v| T::lit(f64::from(v)));
        Gaussian2D {
            mu_raw: mu,
            cov_raw: cov,
            color_w: color,
        }
    }

    pub fn to_cloud<T: Scalar>(&self) -> Result<GaussianCloud<T>> {
        GaussianCloud::new(
            self.gaussians.iter().map(|g| self.dequantize(g)).collect(),
            self.kind,
            self.width as usize,
            self.height as usize,
        )
    }

    pub fn render<T: Scalar>(&self, cfg: &RenderConfig) -> Result<ImageBuffer<T>> {
        render(&self.to_cloud::<T>()?, cfg)
    }
}
