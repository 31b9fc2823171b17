//! Image files, float checkpoints and content hashes.

use std::fs;
use std::path::Path;

use gsimage::{FactorizationKind, Gaussian2D, GaussianCloud, Image32, ImageBuffer};
use image::{DynamicImage, ImageFormat, RgbImage};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"GSCK";
pub const CHECKPOINT_VERSION: u8 = 1;
const CHECKPOINT_HEADER: usize = 4 + 1 + 1 + 12;

/// Reads an 8- or 16-bit PNG/PPM into `[0, 1]` floats.
pub fn load_image(path: &Path) -> CliResult<Image32> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let img = image::load_from_memory(&bytes).map_err(|e| CliError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let wide = matches!(
        img,
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_)
    );
    let out = if wide {
        ImageBuffer::from_interleaved(w, h, img.to_rgb16().as_raw(), u16::MAX)
    } else {
        let samples: Vec<u16> = img.to_rgb8().as_raw().iter().map(|&v| u16::from(v)).collect();
        ImageBuffer::from_interleaved(w, h, &samples, u16::from(u8::MAX))
    };
    Ok(out?)
}

/// Writes an 8-bit PNG (values clamped and rounded).
pub fn save_png(path: &Path, img: &Image32) -> CliResult<()> {
    let buf = RgbImage::from_raw(img.width() as u32, img.height() as u32, img.to_rgb8()).expect("buffer size");
    buf.save_with_format(path, ImageFormat::Png).map_err(|e| CliError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    Ok(sha256_hex(&read_file(path)?))
}

/// Checkpoint layout: `GSCK`, version, kind, width/height/N as u32 LE, then
/// 8 f32 LE per Gaussian in parameter order.
pub fn checkpoint_bytes(cloud: &GaussianCloud<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(CHECKPOINT_HEADER + 32 * cloud.len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.push(cloud.kind().to_byte());
    for v in [cloud.width(), cloud.height(), cloud.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in cloud.to_flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn parse_checkpoint(bytes: &[u8], path: &Path) -> CliResult<GaussianCloud<f32>> {
    let bad = |message: String| CliError::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < CHECKPOINT_HEADER || bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("missing GSCK header".into()));
    }
    if bytes[4] != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {}", bytes[4])));
    }
    let kind = FactorizationKind::from_byte(bytes[5]).ok_or_else(|| bad(format!("unknown kind {}", bytes[5])))?;
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (w, h, n) = (u32_at(6), u32_at(10), u32_at(14));
    let body = &bytes[CHECKPOINT_HEADER..];
    if body.len() != n * 32 {
        return Err(bad(format!("expected {} parameter bytes, found {}", n * 32, body.len())));
    }
    let flat: Vec<f32> = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let gaussians = flat.chunks_exact(8).map(Gaussian2D::from_slice).collect();
    let cloud = GaussianCloud::new(gaussians, kind, w, h).map_err(|e| bad(e.to_string()))?;
    if !cloud.is_finite() {
        return Err(bad("non-finite parameters".into()));
    }
    Ok(cloud)
}

pub fn save_checkpoint(path: &Path, cloud: &GaussianCloud<f32>) -> CliResult<()> {
    write_file(path, &checkpoint_bytes(cloud))
}

pub fn load_checkpoint(path: &Path) -> CliResult<GaussianCloud<f32>> {
    parse_checkpoint(&read_file(path)?, path)
}
