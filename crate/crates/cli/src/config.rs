//! Resolved run settings: defaults, overlaid by a TOML file, overlaid by flags.

use std::path::Path;

use gsimage::quant::QatConfig;
use gsimage::train::{LossKind, TrainConfig};
use gsimage::{FactorizationKind, RenderConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub num_gaussians: usize,
    pub steps: usize,
    pub lr: f64,
    pub lr_half_every: usize,
    pub loss: String,
    pub factorization: String,
    pub seed: u64,
    pub log_every: usize,
    pub tile_size: usize,
    pub support_sigmas: f64,
    pub qat_steps: usize,
    pub qat_lr: f64,
    pub commitment_weight: f64,
    pub bits: u8,
    pub rvq_stages: usize,
    pub codebook_size: usize,
    pub kmeans_iters: usize,
    pub ema_decay: f64,
    pub bitsback: bool,
}

impl Default for Settings {
    fn default() -> Self {
        let t = TrainConfig::default();
        let q = QatConfig::default();
        Self {
            num_gaussians: t.num_gaussians,
            steps: t.steps,
            lr: t.lr0,
            lr_half_every: t.lr_half_every,
            loss: t.loss.name().into(),
            factorization: t.kind.name().into(),
            seed: t.seed,
            log_every: t.log_every,
            tile_size: t.render.tile_size,
            support_sigmas: t.render.support_cutoff_sigmas,
            qat_steps: q.steps,
            qat_lr: q.lr,
            commitment_weight: q.lambda,
            bits: q.bits,
            rvq_stages: q.stages,
            codebook_size: q.codebook_size,
            kmeans_iters: q.kmeans_iters,
            ema_decay: q.ema_decay,
            bitsback: false,
        }
    }
}

/// Flag values that override the file and the defaults when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub num_gaussians: Option<usize>,
    pub steps: Option<usize>,
    pub loss: Option<String>,
    pub factorization: Option<String>,
    pub seed: Option<u64>,
    pub qat_steps: Option<usize>,
    pub bits: Option<u8>,
    pub rvq_stages: Option<usize>,
    pub codebook_size: Option<usize>,
    pub bitsback: bool,
}

impl Settings {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Defaults, then `file` if given, then the overrides.
    pub fn resolve(file: Option<&Path>, o: &Overrides) -> CliResult<Self> {
        let mut s = match file {
            Some(p) => Self::from_toml(&std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?)?,
            None => Self::default(),
        };
        macro_rules! overlay {
            ($($f:ident),*) => {$(
                if let Some(v) = o.$f.clone() {
                    s.$f = v;
                }
            )*};
        }
        overlay!(num_gaussians, steps, loss, factorization, seed, qat_steps, bits, rvq_stages, codebook_size);
        s.bitsback |= o.bitsback;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.loss_kind()?;
        self.kind()?;
        self.train_config()?.validate()?;
        self.qat_config()?.validate()?;
        Ok(())
    }

    pub fn loss_kind(&self) -> CliResult<LossKind> {
        LossKind::parse(&self.loss).ok_or_else(|| {
            CliError::Config(format!("unknown loss '{}' (l2, l1, ssim, l1+ssim, l2+ssim)", self.loss))
        })
    }

    pub fn kind(&self) -> CliResult<FactorizationKind> {
        match self.factorization.as_str() {
            "cholesky" => Ok(FactorizationKind::Cholesky),
            "rs" => Ok(FactorizationKind::RotationScaling),
            other => Err(CliError::Config(format!("unknown factorization '{other}' (cholesky, rs)"))),
        }
    }

    pub fn render_config(&self) -> RenderConfig {
        RenderConfig {
            tile_size: self.tile_size,
            support_cutoff_sigmas: self.support_sigmas,
            dense_mode: false,
        }
    }

    pub fn train_config(&self) -> CliResult<TrainConfig> {
        Ok(TrainConfig {
            steps: self.steps,
            lr0: self.lr,
            lr_half_every: self.lr_half_every,
            loss: self.loss_kind()?,
            seed: self.seed,
            num_gaussians: self.num_gaussians,
            kind: self.kind()?,
            render: self.render_config(),
            log_every: self.log_every,
            ..TrainConfig::default()
        })
    }

    pub fn qat_config(&self) -> CliResult<QatConfig> {
        Ok(QatConfig {
            steps: self.qat_steps,
            lr: self.qat_lr,
            lambda: self.commitment_weight,
            bits: self.bits,
            stages: self.rvq_stages,
            codebook_size: self.codebook_size,
            kmeans_iters: self.kmeans_iters,
            ema_decay: self.ema_decay,
            kmeans_seed: self.seed,
            loss: self.loss_kind()?,
            render: self.render_config(),
            log_every: self.log_every,
            ..QatConfig::default()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_is_flags_then_file_then_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "steps = 123\nbits = 8\nloss = \"l1\"\n").unwrap();
        let o = Overrides {
            bits: Some(5),
            ..Overrides::default()
        };
        let s = Settings::resolve(Some(&path), &o).unwrap();
        assert_eq!(s.steps, 123);
        assert_eq!(s.bits, 5);
        assert_eq!(s.loss, "l1");
        assert_eq!(s.num_gaussians, Settings::default().num_gaussians);
    }

    #[test]
    fn unknown_keys_and_values_are_rejected() {
        assert!(Settings::from_toml("stepz = 3").is_err());
        let o = Overrides {
            loss: Some("l3".into()),
            ..Overrides::default()
        };
        assert!(Settings::resolve(None, &o).is_err());
    }
}
