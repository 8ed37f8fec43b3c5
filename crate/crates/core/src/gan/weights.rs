//! Generator weights and their transferable file form.
//!
//! Layout: 8-byte magic, a JSON header space-padded to
//! [`WEIGHTS_HEADER_BYTES`], the parameter count (u64 LE), the parameters
//! (f32 LE) and a SHA-256 over everything before it. The size depends on
//! the architecture only.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::flm::{LandmarkMap, Resolution};
use crate::nn::{Module, Tensor};
use crate::synth::{RgbdFrame, BACKGROUND_CODE};

use super::{ArchDescriptor, GanError, Generator};

const MAGIC: &[u8; 8] = b"RGBDGAN1";
pub const WEIGHTS_HEADER_BYTES: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub dataset_hash: String,
    pub epochs: usize,
    pub identity_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorWeights {
    pub descriptor: ArchDescriptor,
    pub provenance: Provenance,
    /// Depth range of the training data, copied onto generated frames.
    pub depth_range: (f32, f32),
    /// Smallest and largest face depth code seen in training.
    pub face_codes: (u8, u8),
    pub params: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    descriptor: ArchDescriptor,
    provenance: Provenance,
    depth_range_mm: (f32, f32),
    face_codes: (u8, u8),
}

impl GeneratorWeights {
    pub fn resolution(&self) -> Resolution {
        Resolution::square(self.descriptor.resolution)
    }

    /// Inference-mode generator for these weights.
    pub fn generator(&self) -> Result<AvatarGenerator, GanError> {
        let mut model = Generator::new(self.descriptor.clone(), 0.02, &mut ChaCha8Rng::seed_from_u64(0));
        if !model.load_flat_params(&self.params) {
            return Err(GanError::Architecture(format!(
                "{} parameters for a descriptor needing {}",
                self.params.len(),
                model.param_count()
            )));
        }
        Ok(AvatarGenerator { model, depth_range: self.depth_range })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, GanError> {
        let header = Header {
            descriptor: self.descriptor.clone(),
            provenance: self.provenance.clone(),
            depth_range_mm: self.depth_range,
            face_codes: self.face_codes,
        };
        let mut json = serde_json::to_vec(&header).expect("header serializes");
        if json.len() > WEIGHTS_HEADER_BYTES {
            return Err(GanError::Corrupt(format!("header of {} bytes exceeds the fixed size", json.len())));
        }
        json.resize(WEIGHTS_HEADER_BYTES, b' ');
        let mut out = Vec::with_capacity(MAGIC.len() + WEIGHTS_HEADER_BYTES + 8 + 4 * self.params.len() + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for v in &self.params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GanError> {
        let fixed = MAGIC.len() + WEIGHTS_HEADER_BYTES + 8;
        if bytes.len() < fixed + 32 {
            return Err(GanError::Corrupt(format!("truncated: {} bytes", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(GanError::Corrupt("bad magic".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(GanError::Corrupt("checksum mismatch".into()));
        }
        let header: Header = serde_json::from_slice(body[8..8 + WEIGHTS_HEADER_BYTES].trim_ascii_end())
            .map_err(|e| GanError::Corrupt(format!("header: {e}")))?;
        let count = u64::from_le_bytes(body[fixed - 8..fixed].try_into().expect("8 bytes")) as usize;
        if body.len() != fixed + 4 * count {
            return Err(GanError::Corrupt(format!("expected {count} parameters, found {} bytes", body.len() - fixed)));
        }
        let params = body[fixed..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let weights = Self {
            descriptor: header.descriptor,
            provenance: header.provenance,
            depth_range: header.depth_range_mm,
            face_codes: header.face_codes,
            params,
        };
        // reject blobs that do not fit their own descriptor
        weights.generator()?;
        Ok(weights)
    }

    pub fn export(&self, path: &Path) -> Result<(), GanError> {
        std::fs::write(path, self.to_bytes()?).map_err(|source| GanError::Io { path: path.display().to_string(), source })
    }

    pub fn import(path: &Path) -> Result<Self, GanError> {
        let bytes = std::fs::read(path).map_err(|source| GanError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&bytes)
    }
}

/// A generator in inference mode: dropout off, deterministic.
pub struct AvatarGenerator {
    model: Generator,
    depth_range: (f32, f32),
}

impl AvatarGenerator {
    pub fn resolution(&self) -> Resolution {
        Resolution::square(self.model.descriptor.resolution)
    }

    pub fn generate(&mut self, map: &LandmarkMap) -> Result<RgbdFrame, GanError> {
        if map.resolution() != self.resolution() {
            return Err(GanError::Architecture(format!(
                "landmark map is {}, generator expects {}",
                map.resolution(),
                self.resolution()
            )));
        }
        // dropout is inactive outside training, so the generator is never sampled
        let out = self.model.forward(&map_to_tensor(map), false, &mut ChaCha8Rng::seed_from_u64(0));
        Ok(tensor_to_frame(&out, 0, self.depth_range))
    }
}

/// One-shot convenience around [`GeneratorWeights::generator`].
pub fn generate(weights: &GeneratorWeights, map: &LandmarkMap) -> Result<RgbdFrame, GanError> {
    weights.generator()?.generate(map)
}

/// `{0, 1}` map to a `[1, 1, h, w]` tensor in `{-1, 1}`.
pub(crate) fn map_to_tensor(map: &LandmarkMap) -> Tensor {
    let r = map.resolution();
    Tensor::from_vec(
        1,
        1,
        r.height as usize,
        r.width as usize,
        map.pixels().iter().map(|&v| if v != 0 { 1.0 } else { -1.0 }).collect(),
    )
}

fn to_code(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Sample `index` of a 4-channel tensor back to 8-bit codes.
pub(crate) fn tensor_to_frame(t: &Tensor, index: usize, depth_range: (f32, f32)) -> RgbdFrame {
    let resolution = Resolution { width: t.w as u32, height: t.h as u32 };
    let n = t.h * t.w;
    let s = t.sample(index);
    let mut rgb = vec![0; 3 * n];
    for i in 0..n {
        for c in 0..3 {
            rgb[3 * i + c] = to_code(s[c * n + i]);
        }
    }
    let depth = s[3 * n..4 * n].iter().map(|&v| to_code(v)).collect();
    RgbdFrame { resolution, rgb, depth, depth_range, background_code: BACKGROUND_CODE }
}
