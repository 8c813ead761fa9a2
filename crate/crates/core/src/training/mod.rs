//! Losses, metrics, the hand model bundle and the training loop.

mod config;
mod losses;
mod metrics;
mod model;
mod train;

pub use config::{RunConfig, ShadingFeatures, TrainConfig};
pub use losses::{
    mask_loss, mask_loss_value, perceptual_loss, rgb_loss, rgb_loss_value, LossParts, LossWeights, PerceptualExtractor,
    PERCEPTUAL_SEED,
};
pub use metrics::{iou, metrics, psnr, psnr_from_mse, ssim, Metrics, PSNR_CAP};
pub use model::{posed_template, HandModel, ModelConfig};
pub use train::{train, write_log, EpochLog, Trainer};

use crate::linalg::Vec3;
use crate::renderer::Camera;
use crate::rig::PoseParams;
use crate::{Error, Real, Result};

/// One observed image with its foreground mask, camera and pose.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSample<T> {
    /// Row-major `H·W` colors in `[0, 1]`.
    pub rgb: Vec<Vec3<T>>,
    pub mask: Vec<bool>,
    pub camera: Camera<T>,
    pub pose: PoseParams<T>,
}

impl<T: Real> FrameSample<T> {
    pub fn width(&self) -> usize {
        self.camera.width
    }

    pub fn height(&self) -> usize {
        self.camera.height
    }

    /// `index` only labels the error.
    pub fn validate(&self, index: usize) -> Result<()> {
        let n = self.camera.num_pixels();
        let frame = |reason: String| Error::Frame { frame: index, reason };
        if self.rgb.len() != n {
            return Err(frame(format!("image has {} pixels, camera expects {n}", self.rgb.len())));
        }
        if self.mask.len() != n {
            return Err(frame(format!("mask has {} pixels, camera expects {n}", self.mask.len())));
        }
        if self.rgb.iter().flatten().any(|&c| !(c >= T::zero() && c <= T::one())) {
            return Err(frame("image values outside [0, 1]".into()));
        }
        if !self.pose.is_finite() {
            return Err(frame("non-finite pose".into()));
        }
        self.camera.validate().map_err(|e| frame(e.to_string()))
    }
}

/// Training and held-out frames.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset<T> {
    pub train: Vec<FrameSample<T>>,
    pub val: Vec<FrameSample<T>>,
}

impl<T: Real> Dataset<T> {
    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Empty("training frames"));
        }
        for (i, f) in self.train.iter().chain(&self.val).enumerate() {
            f.validate(i)?;
        }
        Ok(())
    }
}
