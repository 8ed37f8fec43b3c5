use image::GrayImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::flm::{Point, LANDMARK_COUNT, MIRROR};
use crate::imaging::{warp_gray, Affine2};
use crate::synth::{landmarks_of, lower_view_transform, render_hmc_views, ExpressionParams, IdentitySpec};

use super::{CaptureScript, DatasetError};

/// Top-left corner of the lower-half crop inside the lower camera image.
pub const CROP_ORIGIN: (u32, u32) = (64, 128);
/// Side of the square crop fed to the regressor.
pub const CROP_SIZE: u32 = 128;
/// Neutral landmarks closer than this to the crop border are not labels.
const SUBSET_MARGIN: f32 = 6.0;

/// Reference face coordinates to crop pixels.
pub fn reference_to_crop() -> Affine2 {
    Affine2::translation(-(CROP_ORIGIN.0 as f32), -(CROP_ORIGIN.1 as f32)).then_after(&lower_view_transform())
}

/// Cuts the regressor input out of a full lower camera image.
pub fn crop_lower_view(view: &GrayImage) -> GrayImage {
    image::imageops::crop_imm(view, CROP_ORIGIN.0, CROP_ORIGIN.1, CROP_SIZE, CROP_SIZE).to_image()
}

/// Landmarks visible in the neutral lower-face crop, closed under
/// left/right mirroring, ascending.
pub fn lowerface_subset(identity: &IdentitySpec) -> Vec<usize> {
    let neutral = landmarks_of(identity, &ExpressionParams::NEUTRAL).expect("neutral is in bounds");
    let to_crop = reference_to_crop();
    let hi = CROP_SIZE as f32 - 1.0 - SUBSET_MARGIN;
    let inside: Vec<bool> = neutral
        .points()
        .iter()
        .map(|&p| {
            let c = to_crop.apply(p);
            (SUBSET_MARGIN..=hi).contains(&c.x) && (SUBSET_MARGIN..=hi).contains(&c.y)
        })
        .collect();
    (0..LANDMARK_COUNT).filter(|&i| inside[i] && inside[MIRROR[i]]).collect()
}

/// For every label slot, the slot holding its mirror partner.
pub(crate) fn mirror_slots(subset: &[usize]) -> Vec<usize> {
    subset
        .iter()
        .map(|&i| subset.iter().position(|&j| j == MIRROR[i]).expect("subset is mirror-closed"))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub flip: bool,
    /// Crop-window shift in pixels; content moves the opposite way.
    pub dx: f32,
    pub dy: f32,
    pub angle_deg: f32,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams { flip: false, dx: 0.0, dy: 0.0, angle_deg: 0.0 };

    /// Source crop coordinates to augmented crop coordinates.
    pub fn transform(&self) -> Affine2 {
        let c = (CROP_SIZE as f32 - 1.0) / 2.0;
        let flip = if self.flip { Affine2::mirror_x(c) } else { Affine2::IDENTITY };
        let rot = Affine2::rotation_about(self.angle_deg.to_radians(), Point::new(c, c));
        Affine2::translation(-self.dx, -self.dy).then_after(&rot.then_after(&flip))
    }

    /// Moves labels with the image; a flip also swaps mirror partners.
    pub fn apply_to_labels(&self, labels: &[Point], subset: &[usize]) -> Vec<Point> {
        let t = self.transform();
        if self.flip {
            mirror_slots(subset).iter().map(|&k| t.apply(labels[k])).collect()
        } else {
            labels.iter().map(|&p| t.apply(p)).collect()
        }
    }

    /// Inverse of [`apply_to_labels`](Self::apply_to_labels).
    pub fn invert_labels(&self, labels: &[Point], subset: &[usize]) -> Vec<Point> {
        let t = self.transform().inverse();
        if self.flip {
            mirror_slots(subset).iter().map(|&k| t.apply(labels[k])).collect()
        } else {
            labels.iter().map(|&p| t.apply(p)).collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub target: usize,
    pub flip_probability: f32,
    pub jitter_px: f32,
    pub rotation_deg: f32,
    pub train_fraction: f32,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { target: 10_000, flip_probability: 0.5, jitter_px: 8.0, rotation_deg: 10.0, train_fraction: 0.7, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LowerFaceSample {
    pub image: GrayImage,
    /// Subset landmark positions in crop pixels, in `subset_indices` order.
    pub label: Vec<Point>,
    pub base_frame: usize,
    pub augment: AugmentParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LowerFaceDataset {
    pub identity: IdentitySpec,
    pub augment: AugmentConfig,
    pub subset_indices: Vec<usize>,
    pub samples: Vec<LowerFaceSample>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Renders each script frame once, then fills up to `config.target`
/// samples: the first pass is unaugmented, later samples are randomly
/// flipped, shifted and rotated.
pub fn build_lowerface_dataset(
    script: &CaptureScript,
    identity: &IdentitySpec,
    config: &AugmentConfig,
) -> Result<LowerFaceDataset, DatasetError> {
    let n = script.frames.len();
    if n == 0 {
        return Err(DatasetError::EmptyScript);
    }
    if config.target < n {
        return Err(DatasetError::TargetTooSmall { target: config.target, frames: n });
    }
    let subset = lowerface_subset(identity);
    let to_crop = reference_to_crop();
    let mut views = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for f in &script.frames {
        views.push(render_hmc_views(identity, &f.params)?.lower_face);
        let flm = landmarks_of(identity, &f.params)?;
        labels.push(subset.iter().map(|&i| to_crop.apply(flm.point(i))).collect::<Vec<_>>());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let crop_origin = Affine2::translation(CROP_ORIGIN.0 as f32, CROP_ORIGIN.1 as f32);
    let mut samples = Vec::with_capacity(config.target);
    for s in 0..config.target {
        let base = s % n;
        let augment = if s < n {
            AugmentParams::IDENTITY
        } else {
            AugmentParams {
                flip: rng.random::<f32>() < config.flip_probability,
                dx: rng.random_range(-config.jitter_px..=config.jitter_px),
                dy: rng.random_range(-config.jitter_px..=config.jitter_px),
                angle_deg: rng.random_range(-config.rotation_deg..=config.rotation_deg),
            }
        };
        let image = if augment == AugmentParams::IDENTITY {
            crop_lower_view(&views[base])
        } else {
            let dst_to_view = crop_origin.then_after(&augment.transform().inverse());
            warp_gray(&views[base], CROP_SIZE, CROP_SIZE, &dst_to_view, 10)
        };
        let label = augment.apply_to_labels(&labels[base], &subset);
        samples.push(LowerFaceSample { image, label, base_frame: base, augment });
    }

    let (train, test) = split(config.target, config.train_fraction, config.seed);
    Ok(LowerFaceDataset { identity: identity.clone(), augment: config.clone(), subset_indices: subset, samples, train, test })
}

/// Seeded random assignment; both halves sorted.
pub(crate) fn split(count: usize, train_fraction: f32, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5_1717));
    let n_train = (count as f32 * train_fraction).round() as usize;
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}
