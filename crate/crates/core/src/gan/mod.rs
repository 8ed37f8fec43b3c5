//! Landmark-map to RGBD conditional GAN.
//!
//! A skip-connected encoder-decoder generator maps the 1-channel landmark
//! map to RGB plus depth; a patch discriminator judges the 5-channel
//! concatenation of map and RGBD. The objective is the binary
//! cross-entropy adversarial loss plus a weighted L1 reconstruction term.

mod model;
mod train;
mod weights;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::flm::Resolution;

pub use model::{
    ArchDescriptor, Discriminator, Generator, DISCRIMINATOR_IN_CHANNELS, GENERATOR_IN_CHANNELS, GENERATOR_OUT_CHANNELS,
};
pub use train::{train_gan, EpochLog, GanTrainer, TrainingLog};
pub use weights::{generate, AvatarGenerator, GeneratorWeights, Provenance, WEIGHTS_HEADER_BYTES};

#[derive(Debug, Error)]
pub enum GanError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset resolution {dataset} does not match the configured {config}")]
    ResolutionMismatch { dataset: Resolution, config: Resolution },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("weights file: {0}")]
    Corrupt(String),
    #[error("architecture mismatch: {0}")]
    Architecture(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    pub epochs_total: usize,
    pub epochs_const_lr: usize,
    pub learning_rate: f32,
    pub beta1: f32,
    pub batch_size: usize,
    pub init_mean: f32,
    pub init_std: f32,
    pub l1_weight: f32,
    pub jitter: bool,
    pub mirror: bool,
    pub resolution: u32,
    pub ngf: usize,
    pub ndf: usize,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl GanConfig {
    /// 256x256, 200 epochs, base width 64.
    pub fn full() -> Self {
        Self {
            epochs_total: 200,
            epochs_const_lr: 100,
            learning_rate: 2e-4,
            beta1: 0.5,
            batch_size: 1,
            init_mean: 0.0,
            init_std: 0.02,
            l1_weight: 100.0,
            jitter: true,
            mirror: false,
            resolution: 256,
            ngf: 64,
            ndf: 64,
            seed: 0,
        }
    }

    /// Reduced profile that trains on one CPU core within hours. The capture
    /// camera never moves, so crop jitter only teaches a shift that never
    /// occurs and is left off.
    pub fn desk() -> Self {
        Self { epochs_total: 40, epochs_const_lr: 20, resolution: 128, ngf: 16, ndf: 16, jitter: false, ..Self::full() }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "full" => Some(Self::full()),
            "desk" => Some(Self::desk()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), GanError> {
        let bad = |m: &str| Err(GanError::InvalidConfig(m.into()));
        if self.epochs_const_lr > self.epochs_total {
            return bad("epochs_const_lr exceeds epochs_total");
        }
        if !(self.learning_rate > 0.0 && self.init_std > 0.0 && self.l1_weight >= 0.0) {
            return bad("rates must be positive");
        }
        if self.batch_size == 0 || self.ngf == 0 || self.ndf == 0 {
            return bad("batch size and widths must be positive");
        }
        if self.init_mean != 0.0 {
            return bad("only zero-mean initialization is supported");
        }
        if !self.resolution.is_power_of_two() || self.resolution < 32 {
            return bad("resolution must be a power of two of at least 32");
        }
        if self.mirror {
            return bad("mirroring would swap left/right landmark semantics");
        }
        Ok(())
    }

    /// Learning rate for 1-based `epoch`: constant, then linear decay to
    /// zero at `epochs_total`.
    pub fn lr_at(&self, epoch: usize) -> f32 {
        if epoch <= self.epochs_const_lr {
            return self.learning_rate;
        }
        let span = (self.epochs_total - self.epochs_const_lr) as f32;
        self.learning_rate * ((self.epochs_total as f32 - epoch as f32) / span).clamp(0.0, 1.0)
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn descriptor(&self) -> ArchDescriptor {
        ArchDescriptor::unet(self.resolution, self.ngf)
    }
}
