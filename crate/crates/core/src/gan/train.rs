use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::PairedDataset;
use crate::flm::Resolution;
use crate::nn::{bce_with_logits, concat_channels, l1_loss, split_channels, Adam, Module, Tensor};

use super::weights::GeneratorWeights;
use super::{Discriminator, GanConfig, GanError, Generator, Provenance, GENERATOR_IN_CHANNELS};

/// Per-epoch means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub g_adv: f32,
    pub l1: f32,
    pub d_loss: f32,
    pub lr: f32,
    pub wall_s: f32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

/// A training item pre-scaled to the jitter size, kept as 8-bit codes.
struct Prepared {
    side: usize,
    /// 0 or 255.
    map: Vec<u8>,
    /// Planar R, G, B, depth.
    rgbd: Vec<u8>,
}

/// Holds both networks and optimizer state across epochs, so callers can
/// checkpoint between them.
pub struct GanTrainer {
    config: GanConfig,
    generator: Generator,
    discriminator: Discriminator,
    opt_g: Adam,
    opt_d: Adam,
    items: Vec<Prepared>,
    order_rng: ChaCha8Rng,
    step_rng: ChaCha8Rng,
    epoch: usize,
    dataset_hash: String,
    identity_seed: u64,
    depth_range: (f32, f32),
    face_codes: (u8, u8),
    pub log: TrainingLog,
}

impl GanTrainer {
    pub fn new(dataset: &PairedDataset, config: GanConfig) -> Result<Self, GanError> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(GanError::EmptyDataset);
        }
        let expected = Resolution::square(config.resolution);
        if dataset.resolution != expected {
            return Err(GanError::ResolutionMismatch { dataset: dataset.resolution, config: expected });
        }
        let r = config.resolution as usize;
        let side = if config.jitter { (r * 286 + 128) / 256 } else { r };
        let items = dataset.items.iter().map(|it| prepare(it.map.pixels(), &it.frame, r, side)).collect();
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let generator = Generator::new(config.descriptor(), config.init_std, &mut init_rng);
        let discriminator = Discriminator::new(config.ndf, config.init_std, &mut init_rng);
        Ok(Self {
            opt_g: Adam::new(config.learning_rate, config.beta1, 0.999),
            opt_d: Adam::new(config.learning_rate, config.beta1, 0.999),
            order_rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_0001),
            step_rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_0002),
            generator,
            discriminator,
            items,
            epoch: 0,
            dataset_hash: dataset.content_hash(),
            identity_seed: dataset.identity.seed,
            depth_range: dataset.depth_range,
            face_codes: dataset.face_code_range().unwrap_or((1, 254)),
            log: TrainingLog::default(),
            config,
        })
    }

    pub fn config(&self) -> &GanConfig {
        &self.config
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.config.epochs_total
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.discriminator
    }

    pub fn run_epoch(&mut self) -> EpochLog {
        let started = Instant::now();
        self.epoch += 1;
        let lr = self.config.lr_at(self.epoch);
        self.opt_g.lr = lr;
        self.opt_d.lr = lr;
        let mut order: Vec<usize> = (0..self.items.len()).collect();
        order.shuffle(&mut self.order_rng);
        let (mut g_adv, mut l1, mut d_loss) = (0.0f64, 0.0f64, 0.0f64);
        let batches: Vec<Vec<usize>> = order.chunks(self.config.batch_size).map(<[usize]>::to_vec).collect();
        for batch in &batches {
            let (x, y) = self.batch(batch);
            let (a, b, c) = self.step(&x, &y);
            g_adv += a as f64;
            l1 += b as f64;
            d_loss += c as f64;
        }
        let n = batches.len().max(1) as f64;
        let entry = EpochLog {
            epoch: self.epoch,
            g_adv: (g_adv / n) as f32,
            l1: (l1 / n) as f32,
            d_loss: (d_loss / n) as f32,
            lr,
            wall_s: started.elapsed().as_secs_f32(),
        };
        self.log.epochs.push(entry.clone());
        entry
    }

    /// One optimizer step for each network; returns (adversarial, L1, critic)
    /// losses.
    fn step(&mut self, x: &Tensor, y: &Tensor) -> (f32, f32, f32) {
        let fake = self.generator.forward(x, true, &mut self.step_rng);

        // critic: real pairs toward 1, generated toward 0, averaged
        let real_logits = self.discriminator.forward(&concat_channels(x, y));
        let (loss_real, g_real) = bce_with_logits(&real_logits, 1.0);
        self.discriminator.backward(&scaled(g_real, 0.5));
        let fake_logits = self.discriminator.forward(&concat_channels(x, &fake));
        let (loss_fake, g_fake) = bce_with_logits(&fake_logits, 0.0);
        self.discriminator.backward(&scaled(g_fake, 0.5));
        self.opt_d.step(self.discriminator.params_mut());

        // generator: fool the updated critic and match the target
        let logits = self.discriminator.forward(&concat_channels(x, &fake));
        let (adv, g_logits) = bce_with_logits(&logits, 1.0);
        let g_input = self.discriminator.backward(&g_logits);
        self.discriminator.zero_grad();
        let (_, mut g_out) = split_channels(&g_input, GENERATOR_IN_CHANNELS);
        let (l1, g_l1) = l1_loss(&fake, y);
        let w = self.config.l1_weight;
        g_out.data.iter_mut().zip(&g_l1.data).for_each(|(g, d)| *g += w * d);
        self.generator.backward(&g_out);
        self.opt_g.step(self.generator.params_mut());
        (adv, l1, 0.5 * (loss_real + loss_fake))
    }

    fn batch(&mut self, indices: &[usize]) -> (Tensor, Tensor) {
        let r = self.config.resolution as usize;
        let n = r * r;
        let mut x = Vec::with_capacity(indices.len() * n);
        let mut y = Vec::with_capacity(indices.len() * 4 * n);
        for &i in indices {
            let item = &self.items[i];
            let slack = item.side - r;
            let (ox, oy) = if slack > 0 {
                (self.step_rng.random_range(0..=slack), self.step_rng.random_range(0..=slack))
            } else {
                (0, 0)
            };
            let plane = item.side * item.side;
            let crop = |src: &[u8], out: &mut Vec<f32>| {
                for row in 0..r {
                    let start = (oy + row) * item.side + ox;
                    out.extend(src[start..start + r].iter().map(|&v| v as f32 / 127.5 - 1.0));
                }
            };
            crop(&item.map, &mut x);
            for c in 0..4 {
                crop(&item.rgbd[c * plane..(c + 1) * plane], &mut y);
            }
        }
        (Tensor::from_vec(indices.len(), 1, r, r, x), Tensor::from_vec(indices.len(), 4, r, r, y))
    }

    /// Snapshot of the current generator.
    pub fn weights(&self) -> GeneratorWeights {
        GeneratorWeights {
            descriptor: self.generator.descriptor.clone(),
            provenance: Provenance {
                config_hash: self.config.hash(),
                dataset_hash: self.dataset_hash.clone(),
                epochs: self.epoch,
                identity_seed: self.identity_seed,
            },
            depth_range: self.depth_range,
            face_codes: self.face_codes,
            params: self.generator.flat_params(),
        }
    }
}

fn scaled(mut t: Tensor, s: f32) -> Tensor {
    t.data.iter_mut().for_each(|v| *v *= s);
    t
}

/// Upscales to `side` for random cropping: nearest for the binary map so it
/// stays binary, bilinear for the RGBD target.
fn prepare(map: &[u8], frame: &crate::synth::RgbdFrame, r: usize, side: usize) -> Prepared {
    let n = r * r;
    let mut planes = vec![0u8; 4 * n];
    for i in 0..n {
        for c in 0..3 {
            planes[c * n + i] = frame.rgb[3 * i + c];
        }
        planes[3 * n + i] = frame.depth[i];
    }
    let scale = r as f32 / side as f32;
    let src = |d: usize| ((d as f32 + 0.5) * scale - 0.5).clamp(0.0, (r - 1) as f32);
    let mut map_out = Vec::with_capacity(side * side);
    for y in 0..side {
        let sy = src(y).round() as usize;
        for x in 0..side {
            map_out.push(if map[sy * r + src(x).round() as usize] != 0 { 255 } else { 0 });
        }
    }
    let mut rgbd = Vec::with_capacity(4 * side * side);
    for c in 0..4 {
        let p = &planes[c * n..(c + 1) * n];
        for y in 0..side {
            let fy = src(y);
            let (y0, ty) = (fy.floor() as usize, fy.fract());
            let y1 = (y0 + 1).min(r - 1);
            for x in 0..side {
                let fx = src(x);
                let (x0, tx) = (fx.floor() as usize, fx.fract());
                let x1 = (x0 + 1).min(r - 1);
                let at = |yy: usize, xx: usize| p[yy * r + xx] as f32;
                let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
                let bottom = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
                rgbd.push((top * (1.0 - ty) + bottom * ty).round() as u8);
            }
        }
    }
    Prepared { side, map: map_out, rgbd }
}

/// Trains for `config.epochs_total` epochs.
pub fn train_gan(dataset: &PairedDataset, config: GanConfig) -> Result<(GeneratorWeights, TrainingLog), GanError> {
    let mut trainer = GanTrainer::new(dataset, config)?;
    while !trainer.finished() {
        let e = trainer.run_epoch();
        log::info!(
            "epoch {} lr {:.2e} adv {:.3} l1 {:.4} d {:.3} ({:.1}s)",
            e.epoch,
            e.lr,
            e.g_adv,
            e.l1,
            e.d_loss,
            e.wall_s
        );
    }
    Ok((trainer.weights(), trainer.log))
}
