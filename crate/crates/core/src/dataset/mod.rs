//! Paired training corpora built from the face oracle.
//!
//! A [`CaptureScript`] plays the role of the recording session: posed
//! expressions, spoken sentences and free talk. [`build_paired_dataset`]
//! turns it into landmark-map/RGBD pairs for the generator and
//! [`build_lowerface_dataset`] into augmented lower-face camera crops for
//! the landmark regressor.

mod capture;
mod lowerface;
mod store;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::flm::{bounds_from_dataset, rasterize, FacialLandmarkSet, FlmError, LandmarkBounds, LandmarkMap, Resolution};
use crate::synth::{landmarks_at, render_face_at, IdentitySpec, RgbdFrame, SynthError};

pub use capture::{build_capture_script, expression_table, CaptureConfig, CaptureScript, ScriptFrame, Segment};
pub use lowerface::{
    build_lowerface_dataset, crop_lower_view, lowerface_subset, reference_to_crop, AugmentConfig, AugmentParams, LowerFaceDataset,
    LowerFaceSample, CROP_ORIGIN, CROP_SIZE,
};
pub use store::{load_lowerface, load_paired, save_lowerface, save_paired, MANIFEST};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Landmarks(#[from] FlmError),
    #[error("capture script is empty")]
    EmptyScript,
    #[error("target of {target} samples is below the {frames} script frames")]
    TargetTooSmall { target: usize, frames: usize },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: missing file")]
    MissingFile { path: String },
    #[error("{path}: checksum mismatch")]
    Checksum { path: String },
    #[error("{path}: expected {expected}, found {found}")]
    Shape { path: String, expected: String, found: String },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedItem {
    pub map: LandmarkMap,
    pub frame: RgbdFrame,
    pub landmarks: FacialLandmarkSet,
    pub segment: Segment,
}

/// Landmark-map/RGBD pairs of one identity at one resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedDataset {
    pub identity: IdentitySpec,
    pub capture: CaptureConfig,
    pub resolution: Resolution,
    pub depth_range: (f32, f32),
    pub bounds: LandmarkBounds,
    pub neutral_index: usize,
    /// Lower-face landmark subset of this identity (see [`lowerface_subset`]).
    pub subset_indices: Vec<usize>,
    pub items: Vec<PairedItem>,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn neutral_reference(&self) -> &FacialLandmarkSet {
        &self.items[self.neutral_index].landmarks
    }

    /// Stable digest over all pixel data and landmarks.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.resolution.width.to_le_bytes());
        h.update(self.resolution.height.to_le_bytes());
        for item in &self.items {
            h.update(&item.frame.rgb);
            h.update(&item.frame.depth);
            for v in item.landmarks.to_flat() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Smallest and largest non-background depth code over all frames.
    pub fn face_code_range(&self) -> Option<(u8, u8)> {
        let codes = self.items.iter().flat_map(|i| i.frame.depth.iter().copied().filter(move |&c| c != i.frame.background_code));
        codes.fold(None, |acc, c| match acc {
            None => Some((c, c)),
            Some((lo, hi)) => Some((lo.min(c), hi.max(c))),
        })
    }

    /// Every tenth item starting at 9: the evaluation hold-out.
    pub fn holdout_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|i| i % 10 == 9).collect()
    }

    pub fn training_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|i| i % 10 != 9).collect()
    }

    /// Copy restricted to `indices`, keeping the metadata of the full set.
    pub fn subset(&self, indices: &[usize]) -> PairedDataset {
        PairedDataset { items: indices.iter().map(|&i| self.items[i].clone()).collect(), ..self.clone() }
    }
}

/// Renders every script frame at `resolution` and records bounds and the
/// neutral reference.
pub fn build_paired_dataset(
    script: &CaptureScript,
    identity: &IdentitySpec,
    resolution: Resolution,
) -> Result<PairedDataset, DatasetError> {
    if script.frames.is_empty() {
        return Err(DatasetError::EmptyScript);
    }
    let mut items = Vec::with_capacity(script.frames.len());
    for f in &script.frames {
        let landmarks = landmarks_at(identity, &f.params, resolution)?;
        let frame = render_face_at(identity, &f.params, resolution)?;
        items.push(PairedItem { map: rasterize(&landmarks), frame, landmarks, segment: f.segment });
    }
    let bounds = bounds_from_dataset(items.iter().map(|i| &i.landmarks))?;
    Ok(PairedDataset {
        identity: identity.clone(),
        capture: script.config.clone(),
        resolution,
        depth_range: items[0].frame.depth_range,
        bounds,
        neutral_index: script.neutral_index,
        subset_indices: lowerface_subset(identity),
        items,
    })
}

#[cfg(test)]
mod tests;
