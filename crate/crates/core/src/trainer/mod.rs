//! Seeded desk-scale training of the two networks.

mod augment;
mod optim;
mod scene;

use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{crop_spatial, pad_spatial, SsimWindow, Tensor, Var};
use crate::error::{Error, Result};
use crate::jpeg::{self, JpegConfig};
use crate::lightfield::{Image, LightField};
use crate::nets::Nets;
use crate::objectives::{loss_terms, loss_total, stack, LossInputs, LossWeights};
use crate::pipeline::padded_len;
use crate::synthesis::{DepthStack, Orientation};

pub use augment::{augment, channel_means, Augment, AugmentProbs};
pub use optim::{checkpoint_bytes, load_checkpoint, mse, Adam, AdamParams, LrSchedule, OPT_MAGIC};
pub use scene::{desk_scenes, plaid_texture, scene_disparity, SyntheticScene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Enhancement net alone, pixel MSE against the uncompressed center.
    HancePretrain,
    /// Disparity net alone under the full loss; enhancement frozen.
    DepthPretrain,
    /// Both nets under the full loss on crops.
    Joint,
    /// Both nets on whole (padded) scenes at a lower rate.
    FinetuneFullres,
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hance_pretrain" => Ok(Phase::HancePretrain),
            "depth_pretrain" => Ok(Phase::DepthPretrain),
            "joint" => Ok(Phase::Joint),
            "finetune_fullres" => Ok(Phase::FinetuneFullres),
            other => Err(Error::InvalidArgument(format!(
                "unknown phase '{other}' (expected hance_pretrain, depth_pretrain, joint or finetune_fullres)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub phase: Phase,
    pub steps: usize,
    pub batch: usize,
    pub steps_per_epoch: usize,
    /// Training crop; ignored by the full-resolution phase.
    pub crop: (usize, usize),
    /// Grid step of the enhancement pre-training crop pool.
    pub crop_stride: usize,
    pub schedule: LrSchedule,
    pub augment: AugmentProbs,
    pub quality: u8,
    pub weights: LossWeights,
    pub adam: AdamParams,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults sized for a CPU and the 64×64 synthetic scenes.
    pub fn desk(phase: Phase) -> Self {
        let base = TrainConfig {
            phase,
            steps: 200,
            batch: 4,
            steps_per_epoch: 4,
            crop: (64, 64),
            crop_stride: 8,
            schedule: LrSchedule::constant(1e-3),
            augment: AugmentProbs::NONE,
            quality: 50,
            weights: LossWeights::default(),
            adam: AdamParams::default(),
            seed: 0,
        };
        match phase {
            Phase::HancePretrain => TrainConfig {
                crop: (32, 32),
                schedule: LrSchedule::constant(4e-4),
                ..base
            },
            Phase::DepthPretrain => TrainConfig {
                augment: AugmentProbs::PRETRAIN,
                ..base
            },
            Phase::Joint => TrainConfig {
                augment: AugmentProbs::JOINT,
                schedule: LrSchedule::geometric(2e-3, 2e-4, 50, 5),
                ..base
            },
            Phase::FinetuneFullres => TrainConfig {
                augment: AugmentProbs::JOINT,
                schedule: LrSchedule::geometric(5e-4, 1e-5, 50, 5),
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.augment.validate()?;
        self.weights.validate()?;
        JpegConfig::with_quality(self.quality).validate()?;
        if self.batch == 0 || self.steps_per_epoch == 0 || self.crop.0 == 0 || self.crop.1 == 0 || self.crop_stride == 0 {
            return Err(Error::InvalidArgument(
                "batch, steps per epoch, crop and crop stride must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub photometric: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub defocus: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consistency: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dof: Option<f64>,
}

impl StepRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("step record serializes")
    }
}

/// `⌊(len − crop)/stride⌋ + 1` crop origins along one axis.
pub fn crop_origins(len: usize, crop: usize, stride: usize) -> Vec<usize> {
    if crop > len {
        return Vec::new();
    }
    (0..=(len - crop) / stride).map(|i| i * stride).collect()
}

fn jpeg_round_trip(img: &Image, quality: u8) -> Result<Image> {
    let bytes = jpeg::encode(img, &JpegConfig::with_quality(quality))?;
    Ok(jpeg::decode(bytes.as_bytes())?)
}

/// Pads `[N,H,W,C]` to the disparity net's alignment, runs it, crops back.
fn depth_forward(nets: &Nets<f32>, x: &Var<f32>) -> Result<Var<f32>> {
    let (_, h, w, _) = x.value().dims4("depth")?;
    let padded = pad_spatial(x, padded_len(h) - h, padded_len(w) - w)?;
    Ok(crop_spatial(&nets.depth.forward(&padded)?, h, w)?)
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub nets: Nets<f32>,
    pub adam: Adam,
    scenes: Vec<SyntheticScene>,
    /// `(scene, top, left)` origins for enhancement pre-training.
    pool: Vec<(usize, usize, usize)>,
    decoded: Vec<Image>,
    offsets: Vec<(f64, f64)>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, nets: Nets<f32>, scenes: Vec<SyntheticScene>) -> Result<Self> {
        Self::resume(cfg, nets, Adam::new(AdamParams::default()), scenes)
    }

    /// Continues from a restored optimizer state; the next step is `adam.step`.
    pub fn resume(cfg: TrainConfig, mut nets: Nets<f32>, mut adam: Adam, scenes: Vec<SyntheticScene>) -> Result<Self> {
        cfg.validate()?;
        adam.params = cfg.adam;
        let first = scenes
            .first()
            .ok_or_else(|| Error::InvalidArgument("no training scenes".into()))?;
        let angular = first.lf.angular();
        let spatial = first.lf.spatial();
        if scenes.iter().any(|s| s.lf.angular() != angular || s.lf.spatial() != spatial) {
            return Err(Error::InvalidArgument("training scenes differ in dimensions".into()));
        }
        let views = angular.0 * angular.1;
        if cfg.phase != Phase::HancePretrain && nets.depth.config().n_views != views {
            return Err(Error::InvalidArgument(format!(
                "disparity net predicts {} views, scenes have {views}",
                nets.depth.config().n_views
            )));
        }
        let (ch, cw) = cfg.crop;
        if cfg.phase != Phase::FinetuneFullres && (ch > spatial.0 || cw > spatial.1) {
            return Err(Error::InvalidArgument(format!(
                "crop {ch}x{cw} larger than scenes {}x{}",
                spatial.0, spatial.1
            )));
        }
        let mut pool = Vec::new();
        if cfg.phase == Phase::HancePretrain {
            for s in 0..scenes.len() {
                for &y in &crop_origins(spatial.0, ch, cfg.crop_stride) {
                    for &x in &crop_origins(spatial.1, cw, cfg.crop_stride) {
                        pool.push((s, y, x));
                    }
                }
            }
        }
        let decoded = scenes
            .iter()
            .map(|s| jpeg_round_trip(&s.center(), cfg.quality))
            .collect::<Result<Vec<_>>>()?;
        match cfg.phase {
            Phase::HancePretrain => nets.set_trainable(true, false),
            Phase::DepthPretrain => nets.set_trainable(false, true),
            Phase::Joint | Phase::FinetuneFullres => nets.set_trainable(true, true),
        }
        Ok(Trainer {
            offsets: Orientation::Standard.offsets(angular),
            cfg,
            nets,
            adam,
            scenes,
            pool,
            decoded,
        })
    }

    pub fn step_index(&self) -> usize {
        self.adam.step as usize
    }

    /// Stream of randomness for step `step`, independent of earlier steps.
    fn step_rng(&self, step: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(step as u64);
        rng
    }

    /// Runs one optimization step and returns its log record.
    pub fn step(&mut self) -> Result<StepRecord> {
        let step = self.step_index();
        let epoch = step / self.cfg.steps_per_epoch;
        let lr = self.cfg.schedule.rate(epoch);
        let mut rng = self.step_rng(step);
        let mut record = match self.cfg.phase {
            Phase::HancePretrain => self.hance_step(&mut rng)?,
            _ => self.lf_step(&mut rng)?,
        };
        if !record.total.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("loss is {}", record.total),
            });
        }
        let (train_hance, train_depth) = match self.cfg.phase {
            Phase::HancePretrain => (true, false),
            Phase::DepthPretrain => (false, true),
            _ => (true, true),
        };
        if train_hance {
            self.adam.update(&mut self.nets.hance, "hance", lr);
        }
        if train_depth {
            self.adam.update(&mut self.nets.depth, "depth", lr);
        }
        self.adam.advance();
        record.step = step;
        record.epoch = epoch;
        record.lr = lr;
        Ok(record)
    }

    /// Runs until `cfg.steps` steps have been taken in total.
    pub fn run(&mut self, mut on_step: impl FnMut(&StepRecord, &mut Self) -> Result<()>) -> Result<Vec<StepRecord>> {
        let mut log = Vec::new();
        while self.step_index() < self.cfg.steps {
            let r = self.step()?;
            on_step(&r, self)?;
            log.push(r);
        }
        Ok(log)
    }

    pub fn checkpoint(&mut self) -> Vec<u8> {
        checkpoint_bytes(&mut self.nets, &self.adam)
    }

    pub fn into_nets(self) -> Nets<f32> {
        self.nets
    }

    fn hance_step(&mut self, rng: &mut ChaCha8Rng) -> Result<StepRecord> {
        let (ch, cw) = self.cfg.crop;
        let picks = sample(rng, self.pool.len(), self.cfg.batch.min(self.pool.len()));
        let (mut inputs, mut targets) = (Vec::new(), Vec::new());
        for i in picks.iter() {
            let (s, y, x) = self.pool[i];
            inputs.push(self.decoded[s].crop(y, x, ch, cw).to_tensor::<f32>());
            targets.push(self.scenes[s].center().crop(y, x, ch, cw).to_tensor::<f32>());
        }
        let x = Var::constant(stack(&inputs)?);
        let target = Var::constant(stack(&targets)?);
        let loss = mse(&self.nets.hance.forward(&x, true)?, &target)?;
        loss.backward()?;
        Ok(StepRecord {
            step: 0,
            epoch: 0,
            lr: 0.0,
            total: f64::from(loss.item()),
            photometric: None,
            defocus: None,
            consistency: None,
            dof: None,
        })
    }

    fn lf_step(&mut self, rng: &mut ChaCha8Rng) -> Result<StepRecord> {
        let n = self.scenes.len();
        let picks = sample(rng, n, self.cfg.batch.min(n));
        let (h, w) = self.scenes[0].lf.spatial();
        let (ch, cw) = match self.cfg.phase {
            Phase::FinetuneFullres => (h, w),
            _ => self.cfg.crop,
        };
        let mut inputs = Vec::new();
        let mut views: Vec<Vec<Tensor<f32>>> = vec![Vec::new(); self.offsets.len()];
        for s in picks.iter() {
            let aug = self.cfg.augment.draw(rng);
            let (top, left) = (rng.random_range(0..=h - ch), rng.random_range(0..=w - cw));
            let cropped = aug.apply_lf(&crop_lf(&self.scenes[s].lf, top, left, ch, cw)?)?;
            inputs.push(jpeg_round_trip(&cropped.center_view(), self.cfg.quality)?.to_tensor::<f32>());
            for (k, v) in cropped.views().iter().enumerate() {
                views[k].push(v.to_tensor());
            }
        }
        let x = Var::constant(stack(&inputs)?);
        let gt: Vec<Var<f32>> = views.iter().map(|v| stack(v).map(Var::constant)).collect::<std::result::Result<_, _>>()?;
        let hance_train = self.cfg.phase != Phase::DepthPretrain;
        let center = self.nets.hance.forward(&x, hance_train)?;
        let depth = depth_forward(&self.nets, &center)?;
        let inp = LossInputs {
            center: &center,
            depth: &depth,
            gt_views: &gt,
            offsets: &self.offsets,
            beta: self.cfg.weights.beta,
            window: SsimWindow::default(),
        };
        let terms = loss_terms(&inp)?;
        let [p, d, c, f] = terms.values();
        let step = self.step_index();
        let total = loss_total(&terms, &self.cfg.weights).map_err(|e| Error::Diverged {
            step,
            detail: e.to_string(),
        })?;
        total.backward()?;
        Ok(StepRecord {
            step: 0,
            epoch: 0,
            lr: 0.0,
            total: f64::from(total.item()),
            photometric: Some(p),
            defocus: Some(d),
            consistency: Some(c),
            dof: Some(f),
        })
    }
}

fn crop_lf(lf: &LightField, top: usize, left: usize, h: usize, w: usize) -> Result<LightField> {
    if (top, left, (h, w)) == (0, 0, lf.spatial()) {
        return Ok(lf.clone());
    }
    let views = lf.views().iter().map(|v| v.crop(top, left, h, w)).collect();
    LightField::new(lf.angular(), views)
}

/// Predicted disparity stack for a scene (JPEG → enhance → disparity).
pub fn predict_depth(nets: &Nets<f32>, scene: &SyntheticScene, quality: u8) -> Result<DepthStack> {
    let x = Var::constant(jpeg_round_trip(&scene.center(), quality)?.to_tensor::<f32>());
    let center = nets.hance.forward(&x, false)?;
    let d = depth_forward(nets, &center)?;
    DepthStack::from_tensor(scene.lf.angular(), d.value())
}

/// Mean absolute disparity error over interior pixels of all views.
pub fn disparity_error(nets: &Nets<f32>, scenes: &[SyntheticScene], quality: u8) -> Result<f64> {
    let mut total = 0.0f64;
    let mut count = 0usize;
    for s in scenes {
        let d = predict_depth(nets, s, quality)?;
        let (h, w) = d.spatial();
        let m = s.interior_margin();
        for k in 0..d.num_views() {
            let map = d.map(k);
            for y in m..h.saturating_sub(m) {
                for x in m..w.saturating_sub(m) {
                    total += f64::from((map[y * w + x] - s.disparity).abs());
                    count += 1;
                }
            }
        }
    }
    Ok(total / count.max(1) as f64)
}

/// `(mse of JPEG-decoded, mse of enhanced)` center views against the originals.
pub fn hance_mse(nets: &Nets<f32>, images: &[Image], quality: u8) -> Result<(f64, f64)> {
    let (mut base, mut enhanced) = (0.0, 0.0);
    for img in images {
        let dec = jpeg_round_trip(img, quality)?;
        let out = nets.hance.forward(&Var::constant(dec.to_tensor::<f32>()), false)?;
        let gt = Var::constant(img.to_tensor::<f32>());
        base += f64::from(mse(&Var::constant(dec.to_tensor::<f32>()), &gt)?.item());
        enhanced += f64::from(mse(&out, &gt)?.item());
    }
    let n = images.len().max(1) as f64;
    Ok((base / n, enhanced / n))
}

/// Mean of the first and last `window` totals of a log.
pub fn smoothed_ends(log: &[StepRecord], window: usize) -> (f64, f64) {
    let w = window.min(log.len()).max(1);
    let mean = |s: &[StepRecord]| s.iter().map(|r| r.total).sum::<f64>() / s.len().max(1) as f64;
    (mean(&log[..w.min(log.len())]), mean(&log[log.len().saturating_sub(w)..]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{DepthConfig, HanceConfig};

    #[test]
    fn crop_pool_size() {
        assert_eq!(crop_origins(540, 128, 8).len(), (540 - 128) / 8 + 1);
        assert_eq!(crop_origins(64, 32, 8), vec![0, 8, 16, 24, 32]);
        assert!(crop_origins(10, 32, 8).is_empty());
    }

    #[test]
    fn phases_parse() {
        assert_eq!("joint".parse::<Phase>().unwrap(), Phase::Joint);
        assert!("warmup".parse::<Phase>().is_err());
    }

    #[test]
    fn resume_reproduces_next_step() {
        let scenes = desk_scenes(4, 32, (3, 3), 1.0, 2).unwrap();
        let mut cfg = TrainConfig::desk(Phase::Joint);
        cfg.crop = (32, 32);
        cfg.batch = 2;
        cfg.steps = 3;
        let nets = Nets::new(HanceConfig::DESK, DepthConfig::desk(9), 4);
        let mut t = Trainer::new(cfg.clone(), nets, scenes.clone()).unwrap();
        t.step().unwrap();
        let ckpt = t.checkpoint();
        let next = t.step().unwrap();
        let (nets, adam) = load_checkpoint(&ckpt, cfg.adam).unwrap();
        let mut resumed = Trainer::resume(cfg, nets, adam, scenes).unwrap();
        assert_eq!(resumed.step().unwrap(), next);
    }
}
