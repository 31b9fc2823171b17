//! Quantization-aware fine-tuning.
//!
//! The forward pass renders with fp16-rounded positions, dequantized
//! covariance parameters and RVQ-reconstructed colors. Gradients pass
//! straight through every rounding: to the raw parameters, and to the
//! learned scales/offsets of the covariance quantizer. Codebooks follow the
//! assigned residuals by exponential moving average; the commitment loss is
//! tracked alongside the reconstruction loss.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::grad::{backward_screen, cov_backward_raw};
use crate::image::ImageBuffer;
use crate::metrics::psnr;
use crate::model::{position_to_pixel_jacobian, CovFactors, GaussianCloud, PARAMS_PER_GAUSSIAN};
use crate::raster::{render_splats, RenderConfig, Splat};
use crate::scalar::Scalar;
use crate::train::{check_target, loss_and_grad, AdanConfig, AdanState, LogRecord, LossKind, Optimizer, TrainingLog};

use super::{
    asym_ste_partials, commitment_loss, fp16_to_f32, position_to_fp16, quantize_asym, AsymQuant, QuantizedCloud,
    QuantizedGaussian, RvqCode, RvqCodebook,
};

#[derive(Debug, Clone, PartialEq)]
pub struct QatConfig {
    pub steps: usize,
    /// Constant learning rate for raw parameters and quantizer scales/offsets.
    pub lr: f64,
    /// Weight of the commitment term in the reported total loss.
    pub lambda: f64,
    pub bits: u8,
    pub stages: usize,
    pub codebook_size: usize,
    pub kmeans_iters: usize,
    pub ema_decay: f64,
    pub kmeans_seed: u64,
    pub loss: LossKind,
    pub render: RenderConfig,
    pub adan: AdanConfig,
    pub log_every: usize,
}

impl Default for QatConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            lr: 1e-4,
            lambda: 1.0,
            bits: 6,
            stages: 2,
            codebook_size: 8,
            kmeans_iters: 5,
            ema_decay: super::DEFAULT_EMA_DECAY,
            kmeans_seed: 0,
            loss: LossKind::L2,
            render: RenderConfig::default(),
            adan: AdanConfig::default(),
            log_every: 100,
        }
    }
}

impl QatConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=16).contains(&self.bits) {
            return Err(Error::InvalidConfig(format!("bits {} outside 1..=16", self.bits)));
        }
        if self.stages == 0 || self.stages > 255 {
            return Err(Error::InvalidConfig("RVQ stages must be in 1..=255".into()));
        }
        if !(1..=255).contains(&self.codebook_size) {
            return Err(Error::InvalidConfig("codebook size must be in 1..=255".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) || !(self.lr >= 0.0) {
            return Err(Error::InvalidConfig("ema_decay must be in [0, 1) and lr >= 0".into()));
        }
        self.render.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QatOutcome {
    pub quantized: QuantizedCloud,
    pub log: TrainingLog,
    /// PSNR of the float cloud before fine-tuning.
    pub pre_psnr: f64,
    /// PSNR of the frozen quantized cloud.
    pub post_psnr: f64,
    /// Commitment loss of the final colors against the final codebooks.
    pub commitment: f64,
}

/// Screen-space forward state of one quantized step.
struct QuantForward<T> {
    splats: Vec<Splat<T>>,
    factors: Vec<CovFactors<T>>,
    codes: Vec<RvqCode>,
}

fn quantized_forward<T: Scalar>(cloud: &GaussianCloud<T>, q: &AsymQuant<T>, book: &RvqCodebook) -> Result<QuantForward<T>> {
    let (w, h) = (cloud.width(), cloud.height());
    let n = cloud.len();
    let mut out = QuantForward {
        splats: Vec::with_capacity(n),
        factors: Vec::with_capacity(n),
        codes: Vec::with_capacity(n),
    };
    let half = T::lit(0.5);
    let frame = [T::lit(w as f64), T::lit(h as f64)];
    for g in cloud.gaussians() {
        let mut center = [T::zero(); 2];
        for i in 0..2 {
            let t = g.mu_raw[i].tanh().as_f64() as f32;
            let p = T::lit(f64::from(fp16_to_f32(position_to_fp16(t))));
            center[i] = (p + T::one()) * half * frame[i];
        }
        let (_, lbar) = quantize_asym(g.cov_raw, q);
        let factors = CovFactors::from_raw(lbar, cloud.kind());
        let code = book.encode(g.color_w.map(|v| v.as_f64()));
        let color = code.reconstruction.map(|v| T::lit(f64::from(v)));
        out.splats.push(Splat::new(center, factors.covariance(), color)?);
        out.factors.push(factors);
        out.codes.push(code);
    }
    Ok(out)
}

fn colors_f64<T: Scalar>(cloud: &GaussianCloud<T>) -> Vec<[f64; 3]> {
    cloud.gaussians().iter().map(|g| g.color_w.map(|v| v.as_f64())).collect()
}

/// Fine-tunes a fitted cloud under quantization and freezes the result.
pub fn qat_finetune<T: Scalar>(cloud: &GaussianCloud<T>, target: &ImageBuffer<T>, cfg: &QatConfig) -> Result<QatOutcome> {
    cfg.validate()?;
    check_target(target)?;
    cloud.ensure_frame(target)?;
    let started = Instant::now();
    let pre_psnr = psnr(&crate::raster::render(cloud, &cfg.render)?, target)?;

    let mut cloud = cloud.clone();
    let n = cloud.len();
    let (w, h) = (cloud.width(), cloud.height());
    let covs: Vec<[T; 3]> = cloud.gaussians().iter().map(|g| g.cov_raw).collect();
    let mut quant = AsymQuant::fit_range(&covs, cfg.bits)?;
    let mut book = RvqCodebook::kmeans(
        &colors_f64(&cloud),
        cfg.stages,
        cfg.codebook_size,
        cfg.kmeans_iters,
        cfg.kmeans_seed,
        cfg.ema_decay,
    )?;

    // Flat layout: 8 per Gaussian, then γ (3) and β (3).
    let qoff = n * PARAMS_PER_GAUSSIAN;
    let mut optimizer = Optimizer::Adan(AdanState::new(qoff + 6, cfg.adan));
    let mut log = TrainingLog::default();
    let lambda = T::lit(cfg.lambda);

    for step in 0..cfg.steps {
        let fwd = quantized_forward(&cloud, &quant, &book).map_err(|_| Error::NonFinite { step })?;
        let rendered = render_splats(&fwd.splats, w, h, &cfg.render);
        let (rec, upstream) = loss_and_grad(&rendered, target, cfg.loss)?;
        if step % cfg.log_every.max(1) == 0 {
            let commit = T::lit(commitment_loss(&colors_f64(&cloud), &book));
            log.records.push(LogRecord {
                step,
                loss: (rec + lambda * commit).as_f64(),
                psnr: psnr(&rendered, target)?,
                wall_time_s: started.elapsed().as_secs_f64(),
            });
        }
        log.losses.push(rec.as_f64());

        let screen = backward_screen(&fwd.splats, &upstream, &cfg.render);
        let mut grads = vec![T::zero(); qoff + 6];
        for (i, (g, sg)) in cloud.gaussians().iter().zip(&screen).enumerate() {
            let base = i * PARAMS_PER_GAUSSIAN;
            let jac = position_to_pixel_jacobian(g.mu_raw, w, h);
            grads[base] = sg.d_center[0] * jac[0];
            grads[base + 1] = sg.d_center[1] * jac[1];
            let d_lbar = cov_backward_raw(sg.d_cov, &fwd.factors[i]);
            let partials = asym_ste_partials(g.cov_raw, &quant);
            for k in 0..3 {
                grads[base + 2 + k] = d_lbar[k] * partials[k][0];
                grads[qoff + k] += d_lbar[k] * partials[k][1];
                grads[qoff + 3 + k] += d_lbar[k] * partials[k][2];
                grads[base + 5 + k] = sg.d_color[k];
            }
        }

        let mut params = cloud.to_flat();
        params.extend_from_slice(&quant.gamma);
        params.extend_from_slice(&quant.beta);
        optimizer.step(&mut params, &grads, cfg.lr);
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        cloud.set_flat(&params[..qoff]);
        for k in 0..3 {
            quant.gamma[k] = params[qoff + k].max(T::lit(1e-6));
            quant.beta[k] = params[qoff + 3 + k];
        }
        book.ema_update_batch(&fwd.codes);
    }

    let quantized = freeze(&cloud, &quant, &book, cfg)?;
    let post = quantized.render::<T>(&cfg.render)?;
    let post_psnr = psnr(&post, target)?;
    log.records.push(LogRecord {
        step: cfg.steps,
        loss: loss_and_grad(&post, target, cfg.loss)?.0.as_f64(),
        psnr: post_psnr,
        wall_time_s: started.elapsed().as_secs_f64(),
    });
    Ok(QatOutcome {
        quantized,
        log,
        pre_psnr,
        post_psnr,
        commitment: commitment_loss(&colors_f64(&cloud), &book),
    })
}

fn freeze<T: Scalar>(cloud: &GaussianCloud<T>, quant: &AsymQuant<T>, book: &RvqCodebook, cfg: &QatConfig) -> Result<QuantizedCloud> {
    let gamma = quant.gamma.map(|v| v.as_f64() as f32);
    let beta = quant.beta.map(|v| v.as_f64() as f32);
    let q32 = AsymQuant::new(gamma, beta, cfg.bits)?;
    let gaussians = cloud
        .gaussians()
        .iter()
        .map(|g| {
            let position = g.mu_raw.map(|m| position_to_fp16(m.tanh().as_f64() as f32));
            let (cov_codes, _) = quantize_asym(g.cov_raw.map(|v| v.as_f64() as f32), &q32);
            let code = book.encode(g.color_w.map(|v| v.as_f64()));
            QuantizedGaussian {
                position,
                cov_codes,
                color_indices: code.indices.iter().map(|&i| i as u8).collect(),
            }
        })
        .collect();
    let mut qc = QuantizedCloud {
        width: cloud.width() as u32,
        height: cloud.height() as u32,
        kind: cloud.kind(),
        bits: cfg.bits,
        gamma,
        beta,
        codebooks: book.codewords(),
        kmeans_seed: cfg.kmeans_seed,
        gaussians,
    };
    qc.canonicalize();
    qc.validate()?;
    Ok(qc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FactorizationKind, Gaussian2D};
    use crate::raster::render;

    fn target(w: usize, h: usize) -> ImageBuffer<f32> {
        ImageBuffer::from_fn(w, h, |x, y, c| {
            let fx = x as f32 / w as f32;
            let fy = y as f32 / h as f32;
            [0.2 + 0.6 * fx, 0.5 + 0.3 * (fx * 6.0).sin() * fy, 0.8 - 0.5 * fy][c]
        })
    }

    #[test]
    fn zero_steps_with_codeword_colors_only_loses_geometry_precision() {
        let (w, h) = (24, 20);
        let mut cloud = GaussianCloud::<f32>::init_random(40, FactorizationKind::Cholesky, w, h, 3).unwrap();
        // Restrict colors to 8 distinct values so two RVQ stages reproduce them exactly.
        let palette = [[0.1f32, 0.2, 0.3], [0.9, 0.1, 0.4], [0.5, 0.5, 0.5], [0.0, 0.7, 0.2], [0.3, 0.3, 0.9], [0.8, 0.8, 0.1], [0.6, 0.0, 0.0], [0.2, 0.9, 0.6]];
        for (i, g) in cloud.gaussians_mut().iter_mut().enumerate() {
            g.color_w = palette[i % 8];
        }
        let cfg = QatConfig {
            steps: 0,
            lambda: 0.0,
            ..QatConfig::default()
        };
        let out = qat_finetune(&cloud, &target(w, h), &cfg).unwrap();
        let qcloud = out.quantized.to_cloud::<f32>().unwrap();
        // Records come back in canonical order; pair them up by position.
        let dist = |a: &Gaussian2D<f32>, b: &Gaussian2D<f32>| (a.mu_raw[0] - b.mu_raw[0]).abs() + (a.mu_raw[1] - b.mu_raw[1]).abs();
        let order: Vec<usize> = cloud
            .gaussians()
            .iter()
            .map(|a| {
                (0..qcloud.len())
                    .min_by(|&i, &j| dist(a, &qcloud.gaussians()[i]).total_cmp(&dist(a, &qcloud.gaussians()[j])))
                    .unwrap()
            })
            .collect();
        assert_eq!(order.iter().collect::<std::collections::BTreeSet<_>>().len(), order.len());
        let qcloud = qcloud.permuted(&order);
        for (a, b) in cloud.gaussians().iter().zip(qcloud.gaussians()) {
            for k in 0..3 {
                assert!((a.color_w[k] - b.color_w[k]).abs() < 1e-6);
            }
        }
        assert!(out.commitment < 1e-10);

        // Geometry-only reference: original colors, quantized covariance and positions.
        let geo: Vec<Gaussian2D<f32>> = cloud
            .gaussians()
            .iter()
            .zip(qcloud.gaussians())
            .map(|(a, b)| Gaussian2D {
                color_w: a.color_w,
                ..*b
            })
            .collect();
        let geo = GaussianCloud::new(geo, FactorizationKind::Cholesky, w, h).unwrap();
        let cfg_r = RenderConfig::default();
        let a = render(&geo, &cfg_r).unwrap();
        let b = render(&qcloud, &cfg_r).unwrap();
        let diff = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
        assert!(diff < 1e-5, "{diff}");
    }

    #[test]
    fn finetune_produces_valid_stream_ready_cloud() {
        let (w, h) = (20, 16);
        let tgt = target(w, h);
        let cloud = crate::train::fit(
            &tgt,
            &crate::train::TrainConfig {
                steps: 300,
                num_gaussians: 60,
                lr0: 5e-3,
                seed: 2,
                ..Default::default()
            },
        )
        .unwrap()
        .0;
        let cfg = QatConfig {
            steps: 100,
            log_every: 20,
            ..QatConfig::default()
        };
        let a = qat_finetune(&cloud, &tgt, &cfg).unwrap();
        let b = qat_finetune(&cloud, &tgt, &cfg).unwrap();
        assert_eq!(a.quantized, b.quantized);
        a.quantized.validate().unwrap();
        assert_eq!(a.quantized.record_bits(), 56);
        assert_eq!(a.quantized.len(), 60);
        assert!(a.post_psnr.is_finite() && a.pre_psnr > 10.0);
        assert_eq!(a.log.records.len(), 6);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = QatConfig {
            bits: 0,
            ..QatConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = QatConfig {
            codebook_size: 0,
            ..QatConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
