//! Fitting a cloud to a target image.
//!
//! Each step renders, evaluates the loss, backpropagates and applies one
//! optimizer update. The number of Gaussians never changes.

mod loss;
mod optim;

pub use loss::{loss_and_grad, ssim, LossKind, PIXEL_TERM_WEIGHT};
pub use optim::{adam_step, adan_step, AdamState, AdanConfig, AdanState, Optimizer};

use std::time::Instant;

use crate::error::{Error, Result};
use crate::grad::{backward_screen, chain_to_raw};
use crate::image::ImageBuffer;
use crate::metrics::psnr;
use crate::model::{FactorizationKind, GaussianCloud};
use crate::raster::{prepare_splats, render_splats, RenderConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Adan,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr0: f64,
    pub lr_half_every: usize,
    pub loss: LossKind,
    pub seed: u64,
    pub num_gaussians: usize,
    pub kind: FactorizationKind,
    pub render: RenderConfig,
    pub optimizer: OptimizerKind,
    pub adan: AdanConfig,
    /// Interval between log records; step 0 and the final step are always logged.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 50_000,
            lr0: 1e-3,
            lr_half_every: 20_000,
            loss: LossKind::L2,
            seed: 0,
            num_gaussians: 30_000,
            kind: FactorizationKind::Cholesky,
            render: RenderConfig::default(),
            optimizer: OptimizerKind::Adan,
            adan: AdanConfig::default(),
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be >= 1".into()));
        }
        if !(self.lr0 > 0.0) || self.lr_half_every == 0 {
            return Err(Error::InvalidConfig("lr0 must be > 0 and lr_half_every >= 1".into()));
        }
        if self.num_gaussians == 0 {
            return Err(Error::InvalidConfig("num_gaussians must be >= 1".into()));
        }
        self.render.validate()
    }
}

/// `lr0 · 0.5^⌊step / lr_half_every⌋`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * 0.5f64.powi((step / cfg.lr_half_every) as i32)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    pub loss: f64,
    pub psnr: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<LogRecord>,
    /// Loss before every update, indexed by step.
    pub losses: Vec<f64>,
}

impl TrainingLog {
    /// Trailing moving average of `losses` with the given window.
    pub fn smoothed_losses(&self, window: usize) -> Vec<f64> {
        let window = window.max(1);
        let mut out = Vec::with_capacity(self.losses.len());
        let mut sum = 0.0;
        for (i, &l) in self.losses.iter().enumerate() {
            sum += l;
            if i >= window {
                sum -= self.losses[i - window];
            }
            out.push(sum / (i + 1).min(window) as f64);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,psnr,wall_time_s\n");
        for r in &self.records {
            s.push_str(&format!("{},{:.9e},{:.6},{:.3}\n", r.step, r.loss, r.psnr, r.wall_time_s));
        }
        s
    }
}

pub(crate) fn check_target<T: Scalar>(target: &ImageBuffer<T>) -> Result<()> {
    if target
        .as_slice()
        .iter()
        .any(|v| !(*v >= T::zero() && *v <= T::one()))
    {
        return Err(Error::InvalidConfig("target pixels must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Incremental fitting loop. Not meant to be shared across threads mid-fit.
pub struct Fitter<'a, T: Scalar> {
    target: &'a ImageBuffer<T>,
    cfg: TrainConfig,
    cloud: GaussianCloud<T>,
    optimizer: Optimizer<T>,
    step: usize,
    log: TrainingLog,
    started: Instant,
}

impl<'a, T: Scalar> Fitter<'a, T> {
    pub fn new(target: &'a ImageBuffer<T>, cfg: TrainConfig) -> Result<Self> {
        let cloud = GaussianCloud::init_random(
            cfg.num_gaussians,
            cfg.kind,
            target.width(),
            target.height(),
            cfg.seed,
        )?;
        Self::from_cloud(target, cloud, cfg)
    }

    /// Continues optimizing an existing cloud with a fresh optimizer state.
    pub fn from_cloud(target: &'a ImageBuffer<T>, cloud: GaussianCloud<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        check_target(target)?;
        cloud.ensure_frame(target)?;
        let n = cloud.param_count();
        let optimizer = match cfg.optimizer {
            OptimizerKind::Adan => Optimizer::Adan(AdanState::new(n, cfg.adan)),
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(n)),
        };
        Ok(Self {
            target,
            cfg,
            cloud,
            optimizer,
            step: 0,
            log: TrainingLog::default(),
            started: Instant::now(),
        })
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn cloud(&self) -> &GaussianCloud<T> {
        &self.cloud
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    /// One render → loss → backward → update cycle. Returns the loss
    /// evaluated before the update.
    pub fn step(&mut self) -> Result<f64> {
        let (w, h) = (self.cloud.width(), self.cloud.height());
        let splats = prepare_splats(&self.cloud).map_err(|_| Error::NonFinite { step: self.step })?;
        let rendered = render_splats(&splats, w, h, &self.cfg.render);
        let (loss, upstream) = loss_and_grad(&rendered, self.target, self.cfg.loss)?;
        let loss = loss.as_f64();
        self.log.losses.push(loss);
        if self.step % self.cfg.log_every.max(1) == 0 {
            self.record(loss, &rendered)?;
        }

        let screen = backward_screen(&splats, &upstream, &self.cfg.render);
        let grads = chain_to_raw(&self.cloud, &screen).to_flat();
        let mut params = self.cloud.to_flat();
        self.optimizer.step(&mut params, &grads, lr_at(self.step, &self.cfg));
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: self.step });
        }
        self.cloud.set_flat(&params);
        self.step += 1;
        Ok(loss)
    }

    fn record(&mut self, loss: f64, rendered: &ImageBuffer<T>) -> Result<()> {
        self.log.records.push(LogRecord {
            step: self.step,
            loss,
            psnr: psnr(rendered, self.target)?,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        });
        Ok(())
    }

    /// PSNR of the current cloud against the target.
    pub fn current_psnr(&self) -> Result<f64> {
        let rendered = crate::raster::render(&self.cloud, &self.cfg.render)?;
        psnr(&rendered, self.target)
    }

    /// Runs the remaining steps of the configured budget.
    pub fn run(&mut self) -> Result<()> {
        while self.step < self.cfg.steps {
            self.step()?;
        }
        Ok(())
    }

    /// Logs the final state and returns the cloud with its log.
    pub fn finish(mut self) -> Result<(GaussianCloud<T>, TrainingLog)> {
        let rendered = crate::raster::render(&self.cloud, &self.cfg.render)?;
        let (loss, _) = loss_and_grad(&rendered, self.target, self.cfg.loss)?;
        if self.log.records.last().map(|r| r.step) != Some(self.step) {
            self.record(loss.as_f64(), &rendered)?;
        }
        Ok((self.cloud, self.log))
    }
}

pub fn fit<T: Scalar>(target: &ImageBuffer<T>, cfg: &TrainConfig) -> Result<(GaussianCloud<T>, TrainingLog)> {
    let mut fitter = Fitter::new(target, cfg.clone())?;
    fitter.run()?;
    fitter.finish()
}
