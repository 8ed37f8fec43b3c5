//! Directory persistence: PNG per image plus a JSON manifest with
//! landmarks, bounds and per-file SHA-256 checksums.

use std::fs;
use std::path::Path;

use image::{ColorType, ImageFormat};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::flm::{rasterize, FacialLandmarkSet, LandmarkBounds, LandmarkMap, Point, Resolution};
use crate::synth::{IdentitySpec, RgbdFrame};

use super::{
    AugmentConfig, AugmentParams, CaptureConfig, DatasetError, LowerFaceDataset, LowerFaceSample, PairedDataset,
    PairedItem, Segment, CROP_SIZE,
};

pub const MANIFEST: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
struct PairedManifest {
    kind: String,
    resolution: Resolution,
    depth_range_mm: (f32, f32),
    background_code: u8,
    seed: u64,
    identity: IdentitySpec,
    capture: CaptureConfig,
    neutral_index: usize,
    subset_indices: Vec<usize>,
    bounds: LandmarkBounds,
    /// One flat `[x0, y0, ..., x69, y69]` list per frame.
    landmarks: Vec<Vec<f32>>,
    frames: Vec<PairedEntry>,
}

#[derive(Serialize, Deserialize)]
struct PairedEntry {
    segment: Segment,
    rgb: FileRef,
    depth: FileRef,
    flm: FileRef,
}

#[derive(Serialize, Deserialize)]
struct FileRef {
    file: String,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
struct LowerFaceManifest {
    kind: String,
    resolution: Resolution,
    seed: u64,
    identity: IdentitySpec,
    augment: AugmentConfig,
    subset_indices: Vec<usize>,
    train: Vec<usize>,
    test: Vec<usize>,
    /// Crop-space labels, one flat list per sample in subset order.
    landmarks: Vec<Vec<f32>>,
    samples: Vec<LowerFaceEntry>,
}

#[derive(Serialize, Deserialize)]
struct LowerFaceEntry {
    base_frame: usize,
    augment: AugmentParams,
    image: FileRef,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.display().to_string(), source }
}

fn write_png(dir: &Path, name: String, data: &[u8], res: Resolution, color: ColorType) -> Result<FileRef, DatasetError> {
    let path = dir.join(&name);
    let mut bytes = Vec::new();
    image::write_buffer_with_format(
        &mut std::io::Cursor::new(&mut bytes),
        data,
        res.width,
        res.height,
        color,
        ImageFormat::Png,
    )
    .map_err(|e| DatasetError::Format { path: path.display().to_string(), message: e.to_string() })?;
    fs::write(&path, &bytes).map_err(io_err(&path))?;
    Ok(FileRef { file: name, sha256: hex::encode(Sha256::digest(&bytes)) })
}

fn read_png(dir: &Path, r: &FileRef, res: Resolution, color: ColorType) -> Result<Vec<u8>, DatasetError> {
    let path = dir.join(&r.file);
    let shown = path.display().to_string();
    if !path.exists() {
        return Err(DatasetError::MissingFile { path: shown });
    }
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    if hex::encode(Sha256::digest(&bytes)) != r.sha256 {
        return Err(DatasetError::Checksum { path: shown });
    }
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| DatasetError::Format { path: shown.clone(), message: e.to_string() })?;
    if img.width() != res.width || img.height() != res.height || img.color() != color {
        return Err(DatasetError::Shape {
            path: shown,
            expected: format!("{res} {color:?}"),
            found: format!("{}x{} {:?}", img.width(), img.height(), img.color()),
        });
    }
    Ok(img.into_bytes())
}

fn write_manifest<T: Serialize>(dir: &Path, manifest: &T) -> Result<(), DatasetError> {
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(io_err(&path))
}

fn read_manifest<T: for<'de> Deserialize<'de>>(dir: &Path, kind: &str) -> Result<T, DatasetError> {
    let path = dir.join(MANIFEST);
    let shown = path.display().to_string();
    if !path.exists() {
        return Err(DatasetError::MissingFile { path: shown });
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| DatasetError::Format { path: shown.clone(), message: e.to_string() })?;
    if value.get("kind").and_then(|k| k.as_str()) != Some(kind) {
        return Err(DatasetError::Format { path: shown, message: format!("not a {kind} dataset") });
    }
    serde_json::from_value(value).map_err(|e| DatasetError::Format { path: shown, message: e.to_string() })
}

pub fn save_paired(dataset: &PairedDataset, dir: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let res = dataset.resolution;
    let mut frames = Vec::with_capacity(dataset.len());
    for (i, item) in dataset.items.iter().enumerate() {
        frames.push(PairedEntry {
            segment: item.segment,
            rgb: write_png(dir, format!("rgb_{i:06}.png"), &item.frame.rgb, res, ColorType::Rgb8)?,
            depth: write_png(dir, format!("depth_{i:06}.png"), &item.frame.depth, res, ColorType::L8)?,
            flm: write_png(dir, format!("flm_{i:06}.png"), &item.map.to_gray(), res, ColorType::L8)?,
        });
    }
    write_manifest(
        dir,
        &PairedManifest {
            kind: "paired".into(),
            resolution: res,
            depth_range_mm: dataset.depth_range,
            background_code: dataset.items.first().map_or(0, |i| i.frame.background_code),
            seed: dataset.identity.seed,
            identity: dataset.identity.clone(),
            capture: dataset.capture.clone(),
            neutral_index: dataset.neutral_index,
            subset_indices: dataset.subset_indices.clone(),
            bounds: dataset.bounds.clone(),
            landmarks: dataset.items.iter().map(|i| i.landmarks.to_flat()).collect(),
            frames,
        },
    )
}

pub fn load_paired(dir: &Path) -> Result<PairedDataset, DatasetError> {
    let m: PairedManifest = read_manifest(dir, "paired")?;
    let manifest_path = dir.join(MANIFEST).display().to_string();
    let format_err = |message: String| DatasetError::Format { path: manifest_path.clone(), message };
    if m.landmarks.len() != m.frames.len() {
        return Err(format_err(format!("{} landmark sets for {} frames", m.landmarks.len(), m.frames.len())));
    }
    if m.neutral_index >= m.frames.len() {
        return Err(format_err(format!("neutral_index {} out of range", m.neutral_index)));
    }
    let res = m.resolution;
    let mut items = Vec::with_capacity(m.frames.len());
    for (entry, flat) in m.frames.iter().zip(&m.landmarks) {
        let landmarks = FacialLandmarkSet::from_flat(flat, res).map_err(|e| format_err(e.to_string()))?;
        let rgb = read_png(dir, &entry.rgb, res, ColorType::Rgb8)?;
        let depth = read_png(dir, &entry.depth, res, ColorType::L8)?;
        let flm = read_png(dir, &entry.flm, res, ColorType::L8)?;
        let map = LandmarkMap::from_gray(res, &flm).expect("size checked");
        if map != rasterize(&landmarks) {
            return Err(DatasetError::Format {
                path: dir.join(&entry.flm.file).display().to_string(),
                message: "landmark map does not match the stored landmarks".into(),
            });
        }
        let frame = RgbdFrame { resolution: res, rgb, depth, depth_range: m.depth_range_mm, background_code: m.background_code };
        items.push(PairedItem { map, frame, landmarks, segment: entry.segment });
    }
    Ok(PairedDataset {
        identity: m.identity,
        capture: m.capture,
        resolution: res,
        depth_range: m.depth_range_mm,
        bounds: m.bounds,
        neutral_index: m.neutral_index,
        subset_indices: m.subset_indices,
        items,
    })
}

pub fn save_lowerface(dataset: &LowerFaceDataset, dir: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let res = Resolution::square(CROP_SIZE);
    let mut samples = Vec::with_capacity(dataset.samples.len());
    for (i, s) in dataset.samples.iter().enumerate() {
        samples.push(LowerFaceEntry {
            base_frame: s.base_frame,
            augment: s.augment,
            image: write_png(dir, format!("ir_{i:06}.png"), s.image.as_raw(), res, ColorType::L8)?,
        });
    }
    write_manifest(
        dir,
        &LowerFaceManifest {
            kind: "lowerface".into(),
            resolution: res,
            seed: dataset.augment.seed,
            identity: dataset.identity.clone(),
            augment: dataset.augment.clone(),
            subset_indices: dataset.subset_indices.clone(),
            train: dataset.train.clone(),
            test: dataset.test.clone(),
            landmarks: dataset.samples.iter().map(|s| s.label.iter().flat_map(|p| [p.x, p.y]).collect()).collect(),
            samples,
        },
    )
}

pub fn load_lowerface(dir: &Path) -> Result<LowerFaceDataset, DatasetError> {
    let m: LowerFaceManifest = read_manifest(dir, "lowerface")?;
    let manifest_path = dir.join(MANIFEST).display().to_string();
    if m.landmarks.len() != m.samples.len() || m.resolution != Resolution::square(CROP_SIZE) {
        return Err(DatasetError::Format { path: manifest_path, message: "inconsistent sample table".into() });
    }
    let mut samples = Vec::with_capacity(m.samples.len());
    for (entry, flat) in m.samples.iter().zip(&m.landmarks) {
        if flat.len() != 2 * m.subset_indices.len() {
            return Err(DatasetError::Format { path: manifest_path, message: "label length differs from subset".into() });
        }
        let raw = read_png(dir, &entry.image, m.resolution, ColorType::L8)?;
        samples.push(LowerFaceSample {
            image: image::GrayImage::from_raw(CROP_SIZE, CROP_SIZE, raw).expect("size checked"),
            label: flat.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect(),
            base_frame: entry.base_frame,
            augment: entry.augment,
        });
    }
    Ok(LowerFaceDataset {
        identity: m.identity,
        augment: m.augment,
        subset_indices: m.subset_indices,
        samples,
        train: m.train,
        test: m.test,
    })
}
