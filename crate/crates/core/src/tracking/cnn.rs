//! Lower-face landmark regressor: four stride-2 convolutions and two fully
//! connected layers from a 128x128 grayscale crop straight to coordinates.

use std::path::Path;
use std::time::Instant;

use image::GrayImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{crop_lower_view, reference_to_crop, LowerFaceDataset, LowerFaceSample, CROP_SIZE};
use crate::flm::{Point, Resolution};
use crate::imaging::Affine2;
use crate::nn::{mse_loss, Adam, Conv2d, Init, Linear, Module, Param, Relu, Tensor};
use crate::synth::LOWER_VIEW_SIZE;

use super::{PartialLandmarkReport, Source, TrackingError};

const MAGIC: &[u8; 8] = b"LFCNN001";
/// Labels are regressed as `(v - HALF) / HALF` in crop pixels.
const HALF: f32 = CROP_SIZE as f32 / 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub widths: [usize; 4],
    pub hidden: usize,
    pub seed: u64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self { epochs: 15, batch_size: 8, learning_rate: 1e-3, widths: [16, 32, 64, 128], hidden: 256, seed: 0 }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<(), TrackingError> {
        let bad = |m: &str| Err(TrackingError::InvalidConfig(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 || self.hidden == 0 {
            return bad("epochs, batch size and hidden width must be positive");
        }
        if self.widths.contains(&0) {
            return bad("convolution widths must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}

/// The regressor itself; outputs are normalized crop coordinates.
#[derive(Clone, Debug)]
pub struct LowerFaceCnn {
    convs: Vec<Conv2d>,
    acts: Vec<Relu>,
    fc1: Linear,
    act: Relu,
    fc2: Linear,
}

impl LowerFaceCnn {
    pub fn new(widths: [usize; 4], hidden: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut convs = Vec::new();
        let mut cin = 1;
        for &w in &widths {
            convs.push(Conv2d::new(cin, w, 3, 2, 1, true, Init::He, rng));
            cin = w;
        }
        let side = CROP_SIZE as usize >> widths.len();
        Self {
            convs,
            acts: vec![Relu::new(); widths.len()],
            fc1: Linear::new(cin * side * side, hidden, Init::He, rng),
            act: Relu::new(),
            fc2: Linear::new(hidden, outputs, Init::Normal(0.01), rng),
        }
    }

    pub fn outputs(&self) -> usize {
        self.fc2.outputs
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for (conv, act) in self.convs.iter_mut().zip(&mut self.acts) {
            h = act.forward(&conv.forward(&h));
        }
        let h = self.act.forward(&self.fc1.forward(&h));
        self.fc2.forward(&h)
    }

    pub fn backward(&mut self, grad: &Tensor) {
        let g = self.fc2.backward(grad);
        let mut g = self.fc1.backward(&self.act.backward(&g));
        for (conv, act) in self.convs.iter_mut().zip(&mut self.acts).rev() {
            g = conv.backward(&act.backward(&g));
        }
    }
}

impl Module for LowerFaceCnn {
    fn params(&self) -> Vec<&Param> {
        let mut p: Vec<&Param> = self.convs.iter().flat_map(|c| c.params()).collect();
        p.extend(self.fc1.params());
        p.extend(self.fc2.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p: Vec<&mut Param> = self.convs.iter_mut().flat_map(|c| c.params_mut()).collect();
        p.extend(self.fc1.params_mut());
        p.extend(self.fc2.params_mut());
        p
    }
}

/// Trained regressor plus everything needed to map its outputs back to
/// reference space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerFaceWeights {
    pub subset_indices: Vec<usize>,
    /// Side of the square crop the network reads.
    pub input_size: u32,
    pub widths: [usize; 4],
    pub hidden: usize,
    pub identity_seed: u64,
    pub epochs: usize,
    #[serde(skip)]
    pub params: Vec<f32>,
}

impl LowerFaceWeights {
    pub fn model(&self) -> Result<LowerFaceCnn, TrackingError> {
        if self.input_size != CROP_SIZE {
            return Err(TrackingError::Corrupt(format!("input size {} is not {CROP_SIZE}", self.input_size)));
        }
        let mut model =
            LowerFaceCnn::new(self.widths, self.hidden, 2 * self.subset_indices.len(), &mut ChaCha8Rng::seed_from_u64(0));
        if !model.load_flat_params(&self.params) {
            return Err(TrackingError::Corrupt(format!(
                "{} parameters for an architecture needing {}",
                self.params.len(),
                model.param_count()
            )));
        }
        Ok(model)
    }

    pub fn tracker(&self) -> Result<LowerFaceTracker, TrackingError> {
        Ok(LowerFaceTracker {
            model: self.model()?,
            subset: self.subset_indices.clone(),
            crop_to_reference: reference_to_crop().inverse(),
        })
    }

    /// Magic, u32 header length, JSON header, u64 parameter count, f32
    /// parameters, SHA-256 of everything before.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(self).expect("header serializes");
        let mut out = Vec::with_capacity(MAGIC.len() + 12 + header.len() + 4 * self.params.len() + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for v in &self.params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrackingError> {
        let corrupt = |m: String| TrackingError::Corrupt(m);
        if bytes.len() < MAGIC.len() + 12 + 32 {
            return Err(corrupt(format!("truncated: {} bytes", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch".into()));
        }
        let hlen = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes")) as usize;
        let fixed = 12 + hlen + 8;
        if body.len() < fixed {
            return Err(corrupt("header overruns the file".into()));
        }
        let mut weights: Self =
            serde_json::from_slice(&body[12..12 + hlen]).map_err(|e| corrupt(format!("header: {e}")))?;
        let count = u64::from_le_bytes(body[fixed - 8..fixed].try_into().expect("8 bytes")) as usize;
        if body.len() != fixed + 4 * count {
            return Err(corrupt(format!("expected {count} parameters, found {} bytes", body.len() - fixed)));
        }
        weights.params = body[fixed..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        weights.model()?;
        Ok(weights)
    }

    pub fn export(&self, path: &Path) -> Result<(), TrackingError> {
        std::fs::write(path, self.to_bytes())
            .map_err(|source| TrackingError::Io { path: path.display().to_string(), source })
    }

    pub fn import(path: &Path) -> Result<Self, TrackingError> {
        let bytes =
            std::fs::read(path).map_err(|source| TrackingError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&bytes)
    }
}

/// Inference wrapper reading full lower camera images.
#[derive(Clone, Debug)]
pub struct LowerFaceTracker {
    model: LowerFaceCnn,
    subset: Vec<usize>,
    crop_to_reference: Affine2,
}

impl LowerFaceTracker {
    pub fn subset_indices(&self) -> &[usize] {
        &self.subset
    }

    /// Subset positions in crop pixels for an already cropped image.
    pub fn predict_crop(&mut self, crop: &GrayImage) -> Result<Vec<Point>, TrackingError> {
        check_size(crop, CROP_SIZE)?;
        let out = self.model.forward(&images_to_tensor(&[crop]));
        Ok(decode_labels(&out.data))
    }

    /// Lower-face landmarks in reference space from a lower camera image.
    pub fn track(&mut self, view: &GrayImage) -> Result<PartialLandmarkReport, TrackingError> {
        check_size(view, LOWER_VIEW_SIZE)?;
        let crop = self.predict_crop(&crop_lower_view(view))?;
        let points = self.subset.iter().zip(crop).map(|(&i, p)| (i, self.crop_to_reference.apply(p))).collect();
        Ok(PartialLandmarkReport::new(Source::LowerFace, points))
    }
}

fn check_size(img: &GrayImage, side: u32) -> Result<(), TrackingError> {
    if img.dimensions() != (side, side) {
        return Err(TrackingError::Resolution {
            expected: Resolution::square(side),
            found: Resolution { width: img.width(), height: img.height() },
        });
    }
    Ok(())
}

fn images_to_tensor(images: &[&GrayImage]) -> Tensor {
    let s = CROP_SIZE as usize;
    let data = images.iter().flat_map(|img| img.as_raw().iter().map(|&v| v as f32 / 127.5 - 1.0)).collect();
    Tensor::from_vec(images.len(), 1, s, s, data)
}

fn encode_labels(label: &[Point]) -> impl Iterator<Item = f32> + '_ {
    label.iter().flat_map(|p| [(p.x - HALF) / HALF, (p.y - HALF) / HALF])
}

fn decode_labels(v: &[f32]) -> Vec<Point> {
    v.chunks_exact(2).map(|c| Point::new(c[0] * HALF + HALF, c[1] * HALF + HALF)).collect()
}

fn batch(samples: &[&LowerFaceSample]) -> (Tensor, Tensor) {
    let images: Vec<&GrayImage> = samples.iter().map(|s| &s.image).collect();
    let k = samples[0].label.len();
    let labels = samples.iter().flat_map(|s| encode_labels(&s.label)).collect();
    (images_to_tensor(&images), Tensor::from_vec(samples.len(), 2 * k, 1, 1, labels))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnEpochLog {
    pub epoch: usize,
    pub train_mse: f32,
    pub wall_s: f32,
}

/// Held-out quality of a trained regressor next to the mean-label
/// baseline. Squared errors are in normalized units; pixel errors are mean
/// per-landmark Euclidean distances in reference 256 space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnReport {
    pub epochs: Vec<CnnEpochLog>,
    pub train_count: usize,
    pub test_count: usize,
    pub test_mse: f64,
    pub baseline_mse: f64,
    pub mean_error_px: f64,
    pub baseline_error_px: f64,
}

/// Trains on `dataset.train` with Adam and MSE and scores `dataset.test`.
pub fn train_lowerface_cnn(
    dataset: &LowerFaceDataset,
    config: &CnnConfig,
) -> Result<(LowerFaceWeights, CnnReport), TrackingError> {
    config.validate()?;
    if dataset.train.is_empty() {
        return Err(TrackingError::EmptySplit("train"));
    }
    if dataset.test.is_empty() {
        return Err(TrackingError::EmptySplit("test"));
    }
    let k = dataset.subset_indices.len();
    let mut model = LowerFaceCnn::new(config.widths, config.hidden, 2 * k, &mut ChaCha8Rng::seed_from_u64(config.seed));
    let mut adam = Adam::new(config.learning_rate, 0.9, 0.999);
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0C22_0001);
    let mut order = dataset.train.clone();
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        order.shuffle(&mut order_rng);
        let (mut total, mut seen) = (0.0f64, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let samples: Vec<&LowerFaceSample> = chunk.iter().map(|&i| &dataset.samples[i]).collect();
            let (x, y) = batch(&samples);
            let pred = model.forward(&x);
            let (loss, grad) = mse_loss(&pred, &y);
            model.backward(&grad);
            adam.step(model.params_mut());
            total += loss as f64 * chunk.len() as f64;
            seen += chunk.len();
        }
        let log = CnnEpochLog { epoch, train_mse: (total / seen as f64) as f32, wall_s: start.elapsed().as_secs_f32() };
        log::info!("lower-face epoch {epoch}: train mse {:.5} in {:.1}s", log.train_mse, log.wall_s);
        epochs.push(log);
    }

    let weights = LowerFaceWeights {
        subset_indices: dataset.subset_indices.clone(),
        input_size: CROP_SIZE,
        widths: config.widths,
        hidden: config.hidden,
        identity_seed: dataset.identity.seed,
        epochs: config.epochs,
        params: model.flat_params(),
    };
    let report = score(&mut model, dataset, epochs);
    Ok((weights, report))
}

fn score(model: &mut LowerFaceCnn, dataset: &LowerFaceDataset, epochs: Vec<CnnEpochLog>) -> CnnReport {
    let k = dataset.subset_indices.len();
    let mut mean = vec![0.0f64; 2 * k];
    for &i in &dataset.train {
        for (m, v) in mean.iter_mut().zip(encode_labels(&dataset.samples[i].label)) {
            *m += v as f64;
        }
    }
    let mean: Vec<f32> = mean.iter().map(|m| (m / dataset.train.len() as f64) as f32).collect();
    let baseline_points = decode_labels(&mean);

    let crop_to_reference = reference_to_crop().inverse();
    let subset = &dataset.subset_indices;
    let to_reference = |s: &LowerFaceSample, pts: &[Point]| -> Vec<Point> {
        s.augment.invert_labels(pts, subset).into_iter().map(|p| crop_to_reference.apply(p)).collect()
    };
    let (mut sq, mut base_sq, mut err, mut base_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for chunk in dataset.test.chunks(32) {
        let samples: Vec<&LowerFaceSample> = chunk.iter().map(|&i| &dataset.samples[i]).collect();
        let (x, y) = batch(&samples);
        let pred = model.forward(&x);
        for (j, s) in samples.iter().enumerate() {
            let p = &pred.data[j * 2 * k..(j + 1) * 2 * k];
            let t = &y.data[j * 2 * k..(j + 1) * 2 * k];
            sq += p.iter().zip(t).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>();
            base_sq += mean.iter().zip(t).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>();
            let truth = to_reference(s, &s.label);
            let guess = to_reference(s, &decode_labels(p));
            let base = to_reference(s, &baseline_points);
            err += truth.iter().zip(&guess).map(|(a, b)| a.distance(*b) as f64).sum::<f64>();
            base_err += truth.iter().zip(&base).map(|(a, b)| a.distance(*b) as f64).sum::<f64>();
        }
    }
    let n = dataset.test.len() as f64;
    CnnReport {
        epochs,
        train_count: dataset.train.len(),
        test_count: dataset.test.len(),
        test_mse: sq / (n * 2.0 * k as f64),
        baseline_mse: base_sq / (n * 2.0 * k as f64),
        mean_error_px: err / (n * k as f64),
        baseline_error_px: base_err / (n * k as f64),
    }
}
