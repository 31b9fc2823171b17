//! Planar three-channel float images.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHANNELS: usize = 3;

/// `H×W×3` image stored channel-planar: `data[c·H·W + y·W + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Scalar> ImageBuffer<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![T::zero(); width * height * CHANNELS],
        }
    }

    pub fn from_planar(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * CHANNELS {
            return Err(Error::InvalidConfig(format!(
                "planar buffer of {} values does not match {width}x{height}x3",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image from a closure evaluated at every `(x, y, channel)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut img = Self::zeros(width, height);
        for c in 0..CHANNELS {
            for y in 0..height {
                for x in 0..width {
                    img.set(x, y, c, f(x, y, c));
                }
            }
        }
        img
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.data[c * self.width * self.height + y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: T) {
        let idx = c * self.width * self.height + y * self.width + x;
        self.data[idx] = v;
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.pixel_count();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.pixel_count();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Copy with every value clamped to `[0, 1]`.
    pub fn clamped(&self) -> Self {
        self.map(|v| v.max(T::zero()).min(T::one()))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ImageBuffer<U> {
        ImageBuffer {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Extracts the `w×h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height || w == 0 || h == 0 {
            return Err(Error::InvalidConfig(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        Ok(Self::from_fn(w, h, |x, y, c| self.get(x0 + x, y0 + y, c)))
    }

    pub fn ensure_same_shape<U>(&self, other: &ImageBuffer<U>) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::ShapeMismatch {
                expected: (self.width, self.height),
                found: (other.width, other.height),
            });
        }
        Ok(())
    }

    /// Interleaved RGB bytes (`value·255`, rounded, after clamping).
    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixel_count() * CHANNELS);
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..CHANNELS {
                    let v = self.get(x, y, c).as_f64().clamp(0.0, 1.0);
                    out.push((v * 255.0).round() as u8);
                }
            }
        }
        out
    }

    /// From interleaved RGB samples with the given maximum value (255 or 65535).
    pub fn from_interleaved(width: usize, height: usize, samples: &[u16], max_value: u16) -> Result<Self> {
        if samples.len() != width * height * CHANNELS {
            return Err(Error::InvalidConfig(format!(
                "expected {} interleaved samples, got {}",
                width * height * CHANNELS,
                samples.len()
            )));
        }
        let scale = 1.0 / f64::from(max_value);
        Ok(Self::from_fn(width, height, |x, y, c| {
            T::lit(f64::from(samples[(y * width + x) * CHANNELS + c]) * scale)
        }))
    }
}
