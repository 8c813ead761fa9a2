use std::path::Path;

use serde::{Deserialize, Serialize};

use super::losses::LossWeights;
use crate::{Error, Result};

/// Inputs of the shading module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShadingFeatures {
    /// Normals pushed through the inverse deformation Jacobians (pose-aware).
    Deformed,
    /// Undeformed canonical and template normals (pose-blind ablation).
    Canonical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Step size of the canonical points and the SDF network.
    pub learning_rate: f64,
    /// Step size of the appearance modules.
    pub appearance_learning_rate: f64,
    /// Learning rates decay linearly to this fraction of their start value.
    pub final_lr_fraction: f64,
    /// Frames per optimizer step.
    pub batch_size: usize,
    pub upsample_every: usize,
    pub geometry_freeze_epoch: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub prune: bool,
    pub shading_features: ShadingFeatures,
    /// Held-out frames evaluated every this many epochs; the last epoch is
    /// always evaluated.
    pub eval_every: usize,
    /// Each batch holds all training frames of one pose (views of one
    /// instant), so the per-pose shading is shared; `batch_size` is ignored.
    pub batch_by_pose: bool,
    /// Adam steps fitting the SDF alone to the initial points before training.
    pub sdf_warmup_steps: usize,
    pub sdf_warmup_learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-4,
            appearance_learning_rate: 1e-4,
            final_lr_fraction: 1.0,
            batch_size: 16,
            upsample_every: 5,
            geometry_freeze_epoch: 35,
            seed: 0,
            width: 256,
            height: 256,
            prune: true,
            shading_features: ShadingFeatures::Deformed,
            eval_every: 0,
            batch_by_pose: false,
            sdf_warmup_steps: 0,
            sdf_warmup_learning_rate: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.geometry_freeze_epoch > self.epochs {
            return Err(Error::Config(format!("geometry_freeze_epoch {} exceeds epochs {}", self.geometry_freeze_epoch, self.epochs)));
        }
        if self.upsample_every == 0 {
            return Err(Error::Config("upsample_every must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image resolution must be nonzero".into()));
        }
        let lrs = [self.learning_rate, self.appearance_learning_rate, self.final_lr_fraction, self.sdf_warmup_learning_rate];
        if lrs.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::Config("learning rates must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// 1-based epochs at which the point set is upsampled.
    pub fn is_upsample_epoch(&self, epoch: usize) -> bool {
        epoch.is_multiple_of(self.upsample_every) && epoch <= self.geometry_freeze_epoch
    }

    pub fn geometry_trainable(&self, epoch: usize) -> bool {
        epoch <= self.geometry_freeze_epoch
    }

    /// Learning-rate multiplier at optimizer step `step` of `total`.
    pub fn lr_scale(&self, step: usize, total: usize) -> f64 {
        let t = if total <= 1 { 0.0 } else { step as f64 / (total - 1) as f64 };
        1.0 + (self.final_lr_fraction - 1.0) * t
    }
}

/// Training configuration file: `[train]` and `[loss]` tables.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub loss: LossWeights,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.loss.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_schedule() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        let ups: Vec<usize> = (1..=c.epochs).filter(|&e| c.is_upsample_epoch(e)).collect();
        assert_eq!(ups, vec![5, 10, 15, 20, 25, 30, 35]);
        assert!(c.geometry_trainable(35) && !c.geometry_trainable(36));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(TrainConfig { geometry_freeze_epoch: 200, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { upsample_every: 0, ..Default::default() }.validate().is_err());
        assert!(RunConfig { loss: LossWeights { lambda_rgb: -1.0, ..Default::default() }, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn file_round_trip_uses_field_names() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        let cfg = RunConfig { train: TrainConfig { epochs: 7, geometry_freeze_epoch: 3, ..Default::default() }, ..Default::default() };
        cfg.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        for key in ["[train]", "[loss]", "epochs = 7", "learning_rate", "batch_size", "upsample_every", "geometry_freeze_epoch", "lambda_vgg", "lambda_eik"] {
            assert!(text.contains(key), "{key}");
        }
        assert_eq!(RunConfig::load(&path).unwrap(), cfg);
        std::fs::write(&path, "[train]\nepochs = 40\n").unwrap();
        let partial = RunConfig::load(&path).unwrap();
        assert_eq!(partial.train.epochs, 40);
        assert_eq!(partial.loss, LossWeights::default());
    }
}
