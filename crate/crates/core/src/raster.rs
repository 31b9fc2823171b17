//! Accumulated-summation splatting.
//!
//! Every pixel is the plain sum `Σ c′ₙ·exp(−σₙ)` over the Gaussians whose
//! footprint covers it. There is no sorting and no transmittance, so the
//! result only depends on the order of the cloud through floating-point
//! reassociation. Within a pixel, contributions are added in ascending
//! Gaussian index, which makes renders bit-reproducible.
//!
//! The frame is split into square tiles rendered independently; each tile
//! only visits the Gaussians binned to it.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::Result;
use crate::image::{ImageBuffer, CHANNELS};
use crate::model::{position_to_pixel, Covariance2x2, FactorizationKind, Gaussian2D, GaussianCloud};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub tile_size: usize,
    /// Support radius `k` in standard deviations along each axis.
    pub support_cutoff_sigmas: f64,
    /// Sum every Gaussian at every pixel. Used as the reference path.
    pub dense_mode: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            tile_size: 16,
            support_cutoff_sigmas: 3.0,
            dense_mode: false,
        }
    }
}

impl RenderConfig {
    pub fn dense() -> Self {
        Self {
            dense_mode: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 || !(self.support_cutoff_sigmas > 0.0) {
            return Err(crate::Error::InvalidConfig(format!(
                "tile_size must be >= 1 and k > 0 (got {}, {})",
                self.tile_size, self.support_cutoff_sigmas
            )));
        }
        Ok(())
    }
}

/// Axis-aligned support box in continuous pixel coordinates, clipped to the
/// frame. A pixel is covered when its center lies inside the box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatFootprint {
    pub gaussian_index: usize,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl SplatFootprint {
    fn full_frame(gaussian_index: usize, width: usize, height: usize) -> Self {
        Self {
            gaussian_index,
            x0: 0.0,
            y0: 0.0,
            x1: width as f64,
            y1: height as f64,
        }
    }

    /// Covered pixel columns and rows; `None` when no pixel center is inside.
    pub fn pixel_ranges(&self) -> Option<(Range<usize>, Range<usize>)> {
        let cols = center_range(self.x0, self.x1)?;
        let rows = center_range(self.y0, self.y1)?;
        Some((cols, rows))
    }

    pub fn is_empty(&self) -> bool {
        self.pixel_ranges().is_none()
    }
}

// Pixel j has its center at j + 0.5.
fn center_range(lo: f64, hi: f64) -> Option<Range<usize>> {
    if !(lo <= hi) {
        return None;
    }
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).floor();
    if last < first {
        return None;
    }
    Some(first as usize..last as usize + 1)
}

/// A Gaussian resolved to screen space, ready to rasterize.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat<T> {
    pub center: [T; 2],
    pub cov: Covariance2x2<T>,
    pub inv: Covariance2x2<T>,
    pub color: [T; 3],
}

impl<T: Scalar> Splat<T> {
    pub fn new(center: [T; 2], cov: Covariance2x2<T>, color: [T; 3]) -> Result<Self> {
        Ok(Self {
            center,
            cov,
            inv: cov.invert()?,
            color,
        })
    }

    pub fn from_gaussian(g: &Gaussian2D<T>, kind: FactorizationKind, width: usize, height: usize) -> Result<Self> {
        let center = position_to_pixel(g.mu_raw, width, height);
        let cov = crate::model::materialize_covariance(g.cov_raw, kind);
        Self::new(center, cov, g.color_w)
    }

    /// `d` from this splat's center to the center of pixel `(x, y)`.
    #[inline]
    pub fn displacement(&self, x: usize, y: usize) -> [T; 2] {
        let half = T::lit(0.5);
        [
            T::lit(x as f64) + half - self.center[0],
            T::lit(y as f64) + half - self.center[1],
        ]
    }

    pub fn footprint(&self, index: usize, cfg: &RenderConfig, width: usize, height: usize) -> SplatFootprint {
        if cfg.dense_mode {
            return SplatFootprint::full_frame(index, width, height);
        }
        let k = cfg.support_cutoff_sigmas;
        let cx = self.center[0].as_f64();
        let cy = self.center[1].as_f64();
        let rx = k * self.cov.a.as_f64().sqrt();
        let ry = k * self.cov.c.as_f64().sqrt();
        SplatFootprint {
            gaussian_index: index,
            x0: (cx - rx).max(0.0),
            y0: (cy - ry).max(0.0),
            x1: (cx + rx).min(width as f64),
            y1: (cy + ry).min(height as f64),
        }
    }
}

/// `σ = ½ dᵀ Σ⁻¹ d`.
#[inline]
pub fn eval_sigma<T: Scalar>(inv: &Covariance2x2<T>, d: [T; 2]) -> T {
    T::lit(0.5) * inv.quad_form(d)
}

pub fn compute_footprint<T: Scalar>(
    g: &Gaussian2D<T>,
    kind: FactorizationKind,
    cfg: &RenderConfig,
    width: usize,
    height: usize,
) -> Result<SplatFootprint> {
    Ok(Splat::from_gaussian(g, kind, width, height)?.footprint(0, cfg, width, height))
}

pub fn prepare_splats<T: Scalar>(cloud: &GaussianCloud<T>) -> Result<Vec<Splat<T>>> {
    cloud
        .gaussians()
        .iter()
        .map(|g| Splat::from_gaussian(g, cloud.kind(), cloud.width(), cloud.height()))
        .collect()
}

/// Pixel ranges of one binned Gaussian, clipped to its tile.
#[derive(Debug, Clone)]
pub(crate) struct BinEntry {
    pub index: usize,
    pub cols: Range<usize>,
    pub rows: Range<usize>,
}

/// Per-tile lists of the Gaussians touching each tile, in ascending index.
#[derive(Debug, Clone)]
pub(crate) struct TileBins {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub width: usize,
    pub height: usize,
    pub bins: Vec<Vec<BinEntry>>,
}

impl TileBins {
    pub fn build<T: Scalar>(splats: &[Splat<T>], width: usize, height: usize, cfg: &RenderConfig) -> Self {
        let ts = cfg.tile_size.max(1);
        let tiles_x = width.div_ceil(ts);
        let tiles_y = height.div_ceil(ts);
        let mut bins: Vec<Vec<BinEntry>> = vec![Vec::new(); tiles_x * tiles_y];
        for (index, s) in splats.iter().enumerate() {
            let Some((cols, rows)) = s.footprint(index, cfg, width, height).pixel_ranges() else {
                continue;
            };
            for ty in rows.start / ts..=(rows.end - 1) / ts {
                for tx in cols.start / ts..=(cols.end - 1) / ts {
                    let tile_cols = tx * ts..((tx + 1) * ts).min(width);
                    let tile_rows = ty * ts..((ty + 1) * ts).min(height);
                    bins[ty * tiles_x + tx].push(BinEntry {
                        index,
                        cols: cols.start.max(tile_cols.start)..cols.end.min(tile_cols.end),
                        rows: rows.start.max(tile_rows.start)..rows.end.min(tile_rows.end),
                    });
                }
            }
        }
        Self {
            tile_size: ts,
            tiles_x,
            width,
            height,
            bins,
        }
    }

    pub fn tile_rect(&self, tile: usize) -> (Range<usize>, Range<usize>) {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        (
            tx * self.tile_size..((tx + 1) * self.tile_size).min(self.width),
            ty * self.tile_size..((ty + 1) * self.tile_size).min(self.height),
        )
    }
}

pub fn render<T: Scalar>(cloud: &GaussianCloud<T>, cfg: &RenderConfig) -> Result<ImageBuffer<T>> {
    let splats = prepare_splats(cloud)?;
    Ok(render_splats(&splats, cloud.width(), cloud.height(), cfg))
}

pub fn render_splats<T: Scalar>(splats: &[Splat<T>], width: usize, height: usize, cfg: &RenderConfig) -> ImageBuffer<T> {
    let bins = TileBins::build(splats, width, height, cfg);
    let tiles: Vec<Vec<[T; 3]>> = (0..bins.bins.len())
        .into_par_iter()
        .map(|tile| render_tile(splats, &bins, tile))
        .collect();

    let mut img = ImageBuffer::zeros(width, height);
    let plane = width * height;
    let out = img.as_mut_slice();
    for (tile, pixels) in tiles.iter().enumerate() {
        let (cols, rows) = bins.tile_rect(tile);
        let tw = cols.len();
        for (i, px) in pixels.iter().enumerate() {
            let x = cols.start + i % tw;
            let y = rows.start + i / tw;
            for c in 0..CHANNELS {
                out[c * plane + y * width + x] = px[c];
            }
        }
    }
    img
}

fn render_tile<T: Scalar>(splats: &[Splat<T>], bins: &TileBins, tile: usize) -> Vec<[T; 3]> {
    let (cols, rows) = bins.tile_rect(tile);
    let tw = cols.len();
    let mut acc = vec![[T::zero(); 3]; tw * rows.len()];
    // Outer loop over Gaussians keeps the per-pixel order ascending in index.
    for entry in &bins.bins[tile] {
        let s = &splats[entry.index];
        for y in entry.rows.clone() {
            for x in entry.cols.clone() {
                let w = (-eval_sigma(&s.inv, s.displacement(x, y))).exp();
                let px = &mut acc[(y - rows.start) * tw + (x - cols.start)];
                px[0] += s.color[0] * w;
                px[1] += s.color[1] * w;
                px[2] += s.color[2] * w;
            }
        }
    }
    acc
}
