//! Epithelium segmentation from a CK channel.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{at_path, CheckpointKind, Container};
use crate::error::{Error, Result};
use crate::eval::{confusion, metrics, ConfusionCounts};
use crate::nn::{layers::sigmoid_scalar, Adam, AdamConfig, Head, NormKind, Tensor, UNet, UNetSpec};
use crate::phantom::{load_sample, Manifest, Split};
use crate::pipeline::normalize::{model_to_u16_scale, normalize_intensity, DEFAULT_HIGH_PCT, DEFAULT_LOW_PCT};
use crate::pipeline::tiles::TILE_SIZE;
use crate::raster::{Mask, Plane};
use crate::training::{
    append_log_line, center_origin, check_patch_fits, ensure_finite, epoch_rng, shuffled, stack, unstack,
    TrainFailure,
};
use crate::translation::{self, generator_forward};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Dice,
    /// Cross-entropy plus soft dice with equal weights.
    #[default]
    Combined,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegConfig {
    pub input_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    pub norm: NormKind,
    pub loss_kind: LossKind,
    pub threshold: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub augment: bool,
    /// Receives one JSON object per epoch.
    pub log_path: Option<PathBuf>,
}

impl Default for SegConfig {
    fn default() -> Self {
        Self {
            input_channels: 1,
            base_width: 8,
            depth: 5,
            norm: NormKind::None,
            loss_kind: LossKind::Combined,
            threshold: 0.5,
            learning_rate: 1e-3,
            batch_size: 4,
            epochs: 20,
            seed: 0,
            augment: true,
            log_path: None,
        }
    }
}

impl SegConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("segmentation config", reason));
        if self.input_channels != 1 {
            return bad(format!("input_channels must be 1, got {}", self.input_channels));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must lie in (0, 1), got {}", self.threshold));
        }
        if self.depth == 0 || self.depth > 8 || TILE_SIZE % (1 << self.depth) != 0 {
            return bad(format!("depth must satisfy 256 % 2^depth == 0 with depth >= 1, got {}", self.depth));
        }
        if self.base_width == 0 || self.batch_size == 0 {
            return bad("base_width and batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        Ok(())
    }

    pub fn unet_spec(&self) -> UNetSpec {
        UNetSpec {
            in_channels: self.input_channels,
            out_channels: 1,
            base_width: self.base_width,
            depth: self.depth,
            norm: self.norm,
            head: Head::Sigmoid,
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: 0.9, ..AdamConfig::default() }
    }
}

/// CK source used as segmentation input during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelSelector {
    #[default]
    CkTrue,
    CkStained,
    SyntheticFromCheckpoint,
}

pub fn init_segmenter(config: &SegConfig, seed: u64) -> UNet<f32> {
    UNet::new(config.unet_spec(), &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5E6_0000_0000_0001))
}

/// Probability map of a normalized CK patch.
pub fn seg_forward(model: &UNet<f32>, ck: &Plane) -> Result<Plane> {
    let x = Tensor::from_vec([1, 1, ck.height(), ck.width()], ck.data().to_vec());
    model.check_input(x.shape()).map_err(|e| {
        Error::shape(
            "segmentation input",
            format!("1x{0}x{0} (or a multiple of {1})", TILE_SIZE, model.spec().side_multiple()),
            e,
        )
    })?;
    Ok(unstack(&model.forward(&x), 0))
}

/// `mask[p] = probability[p] >= threshold`.
pub fn binarize(probability: &Plane, threshold: f64) -> Mask {
    let t = threshold as f32;
    Mask::new(
        probability.width(),
        probability.height(),
        probability.data().iter().map(|&p| p >= t).collect(),
    )
}

const DICE_SMOOTH: f64 = 1.0;
const PROB_EPS: f64 = 1e-12;

/// Mean binary cross-entropy of probabilities against a 0/1 target.
pub fn cross_entropy_loss(prob: &[f32], target: &[f32]) -> f64 {
    let n = prob.len() as f64;
    prob.iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = (p as f64).clamp(PROB_EPS, 1.0 - PROB_EPS);
            let t = t as f64;
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n
}

/// Soft dice loss `1 - (2 sum(p t) + 1) / (sum(p) + sum(t) + 1)`.
pub fn dice_loss(prob: &[f32], target: &[f32]) -> f64 {
    let (mut inter, mut total) = (0.0, 0.0);
    for (&p, &t) in prob.iter().zip(target) {
        inter += p as f64 * t as f64;
        total += p as f64 + t as f64;
    }
    1.0 - (2.0 * inter + DICE_SMOOTH) / (total + DICE_SMOOTH)
}

/// Loss over a batch and its gradient w.r.t. the pre-sigmoid logits.
pub fn seg_loss_and_grad(kind: LossKind, logits: &Tensor<f32>, target: &Tensor<f32>) -> (f64, Tensor<f32>) {
    let n = logits.len() as f64;
    let probs: Vec<f64> = logits.data().iter().map(|&z| sigmoid_scalar(z as f64)).collect();
    let t = target.data();
    let mut loss = 0.0;
    let mut grad = vec![0.0f64; probs.len()];
    if matches!(kind, LossKind::CrossEntropy | LossKind::Combined) {
        for (i, &z) in logits.data().iter().enumerate() {
            let (z, ti) = (z as f64, t[i] as f64);
            // numerically stable BCE with logits
            loss += (z.max(0.0) - z * ti + (-z.abs()).exp().ln_1p()) / n;
            grad[i] += (probs[i] - ti) / n;
        }
    }
    if matches!(kind, LossKind::Dice | LossKind::Combined) {
        let inter: f64 = probs.iter().zip(t).map(|(p, &ti)| p * ti as f64).sum();
        let total: f64 = probs.iter().sum::<f64>() + t.iter().map(|&v| v as f64).sum::<f64>();
        let (num, den) = (2.0 * inter + DICE_SMOOTH, total + DICE_SMOOTH);
        loss += 1.0 - num / den;
        for (i, &p) in probs.iter().enumerate() {
            let d_p = -(2.0 * t[i] as f64 * den - num) / (den * den);
            grad[i] += d_p * p * (1.0 - p);
        }
    }
    let grad = Tensor::from_vec(logits.shape(), grad.into_iter().map(|g| g as f32).collect());
    (loss, grad)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegEpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when undefined on the validation split.
    pub val_f1: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SegTrainState {
    pub model: UNet<f32>,
    pub optimizer: Adam<f32>,
    pub epochs_completed: usize,
}

#[derive(Clone, Debug)]
pub struct SegCheckpoint {
    pub seg_config: SegConfig,
    pub channel: ChannelSelector,
    pub training_log: Vec<SegEpochRecord>,
    /// Epoch whose parameters `model` holds (highest `val_f1`).
    pub best_epoch: Option<usize>,
    pub model: UNet<f32>,
    pub state: Option<SegTrainState>,
}

#[derive(Serialize, Deserialize)]
struct SegMeta {
    seg_config: SegConfig,
    channel: ChannelSelector,
    training_log: Vec<SegEpochRecord>,
    best_epoch: Option<usize>,
    state: Option<SegStateMeta>,
}

#[derive(Serialize, Deserialize)]
struct SegStateMeta {
    epochs_completed: usize,
    optimizer_step: u64,
}

impl SegCheckpoint {
    pub fn export_inference(&self) -> SegCheckpoint {
        SegCheckpoint { state: None, ..self.clone() }
    }

    pub fn to_container(&self) -> Container {
        let meta = SegMeta {
            seg_config: self.seg_config.clone(),
            channel: self.channel,
            training_log: self.training_log.clone(),
            best_epoch: self.best_epoch,
            state: self.state.as_ref().map(|s| SegStateMeta {
                epochs_completed: s.epochs_completed,
                optimizer_step: s.optimizer.step,
            }),
        };
        let mut c = Container::new(CheckpointKind::Segmentation, serde_json::to_value(meta).expect("meta serializes"));
        c.put_unet("segmenter", &self.model);
        if let Some(s) = &self.state {
            c.put_unet("state/segmenter", &s.model);
            c.put_adam("state/adam_segmenter", &s.optimizer);
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<SegCheckpoint> {
        let bad = |reason: String| Error::Checkpoint { path: PathBuf::new(), reason };
        if c.kind != CheckpointKind::Segmentation {
            return Err(bad(format!("expected a segmentation checkpoint, found {:?}", c.kind)));
        }
        let meta: SegMeta = serde_json::from_value(c.meta.clone()).map_err(|e| bad(format!("malformed metadata: {e}")))?;
        meta.seg_config.validate()?;
        let mut model = init_segmenter(&meta.seg_config, 0);
        c.take_unet("segmenter", &mut model)?;
        let state = match meta.state {
            Some(s) => {
                let mut m = init_segmenter(&meta.seg_config, 0);
                c.take_unet("state/segmenter", &mut m)?;
                Some(SegTrainState {
                    model: m,
                    optimizer: c.take_adam("state/adam_segmenter", meta.seg_config.adam(), s.optimizer_step),
                    epochs_completed: s.epochs_completed,
                })
            }
            None => None,
        };
        Ok(SegCheckpoint {
            seg_config: meta.seg_config,
            channel: meta.channel,
            training_log: meta.training_log,
            best_epoch: meta.best_epoch,
            model,
            state,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<SegCheckpoint> {
        Self::from_container(&Container::load(path)?).map_err(|e| at_path(e, path))
    }

    pub fn identifier(&self) -> String {
        self.to_container().identifier()
    }
}

/// Normalized CK inputs and 0/1 epithelium targets of one split.
#[derive(Clone, Debug)]
pub struct SegSet {
    pub ids: Vec<String>,
    pub ck: Vec<Plane>,
    pub masks: Vec<Mask>,
}

impl SegSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Synthetic CK for a raw DAPI raster of patch size, normalized the same way
/// as in the two-step pipeline.
pub fn synthetic_ck_input(generator: &crate::nn::UNet<f32>, dapi: &Plane) -> Result<Plane> {
    let dapi = normalize_intensity(dapi, DEFAULT_LOW_PCT, DEFAULT_HIGH_PCT);
    let synthetic = generator_forward(generator, &dapi)?.map(model_to_u16_scale);
    Ok(normalize_intensity(&synthetic, DEFAULT_LOW_PCT, DEFAULT_HIGH_PCT))
}

/// Loads one split with the selected CK source.
pub fn load_seg_set(
    manifest: &Manifest,
    split: Split,
    channel: ChannelSelector,
    dapi2ck: Option<&translation::Checkpoint>,
) -> Result<SegSet> {
    if channel == ChannelSelector::SyntheticFromCheckpoint && dapi2ck.is_none() {
        return Err(Error::invalid(
            "dapi2ck_checkpoint",
            "channel_selector synthetic_from_checkpoint requires a dapi2ck checkpoint",
        ));
    }
    let mut set = SegSet { ids: Vec::new(), ck: Vec::new(), masks: Vec::new() };
    for e in manifest.split(split) {
        let s = load_sample(manifest.root(), &e.files)?;
        let ck = match channel {
            ChannelSelector::CkTrue => normalize_intensity(&s.ck_true, DEFAULT_LOW_PCT, DEFAULT_HIGH_PCT),
            ChannelSelector::CkStained => normalize_intensity(&s.ck_stained, DEFAULT_LOW_PCT, DEFAULT_HIGH_PCT),
            ChannelSelector::SyntheticFromCheckpoint => {
                let g = &dapi2ck.expect("checked above").generator;
                check_patch_fits(&s.dapi, TILE_SIZE, "dataset")?;
                let (x, y) = center_origin(&s.dapi, TILE_SIZE);
                let crop = |p: &Plane| p.crop(x, y, TILE_SIZE, TILE_SIZE);
                set.ids.push(e.id.clone());
                set.ck.push(synthetic_ck_input(g, &crop(&s.dapi))?);
                set.masks.push(s.epithelium_mask.crop(x, y, TILE_SIZE, TILE_SIZE));
                continue;
            }
        };
        set.ids.push(e.id.clone());
        set.ck.push(ck);
        set.masks.push(s.epithelium_mask);
    }
    Ok(set)
}

/// Pooled confusion counts of the centered patch of every sample.
pub fn pooled_confusion(model: &UNet<f32>, set: &SegSet, threshold: f64) -> Result<ConfusionCounts> {
    use rayon::prelude::*;
    let counts = (0..set.len())
        .into_par_iter()
        .map(|i| {
            check_patch_fits(&set.ck[i], TILE_SIZE, "evaluation sample")?;
            let (x, y) = center_origin(&set.ck[i], TILE_SIZE);
            let prob = seg_forward(model, &set.ck[i].crop(x, y, TILE_SIZE, TILE_SIZE))?;
            confusion(&binarize(&prob, threshold), &set.masks[i].crop(x, y, TILE_SIZE, TILE_SIZE), None)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(counts.into_iter().sum())
}

fn mask_plane(mask: &Mask) -> Plane {
    Plane::new(mask.width(), mask.height(), mask.data().iter().map(|&b| b as u8 as f32).collect())
}

/// Trains the segmenter on the train split, scoring F1 on the val split.
pub fn train_segmentation(
    manifest: &Manifest,
    config: &SegConfig,
    channel: ChannelSelector,
    dapi2ck: Option<&translation::Checkpoint>,
    resume: Option<SegCheckpoint>,
) -> std::result::Result<SegCheckpoint, TrainFailure<SegCheckpoint>> {
    config.validate()?;
    let train = load_seg_set(manifest, Split::Train, channel, dapi2ck)?;
    let val = load_seg_set(manifest, Split::Val, channel, dapi2ck)?;
    train_seg_sets(&train, &val, config, channel, resume)
}

/// [`train_segmentation`] on preloaded sets.
pub fn train_seg_sets(
    train: &SegSet,
    val: &SegSet,
    config: &SegConfig,
    channel: ChannelSelector,
    resume: Option<SegCheckpoint>,
) -> std::result::Result<SegCheckpoint, TrainFailure<SegCheckpoint>> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid(
            "dataset",
            format!("train and val splits must be nonempty (got {} and {})", train.len(), val.len()),
        )
        .into());
    }
    for p in train.ck.iter().chain(&val.ck) {
        check_patch_fits(p, TILE_SIZE, "dataset")?;
    }
    let mut ckpt = match resume {
        Some(c) => {
            if c.seg_config.unet_spec() != config.unet_spec() {
                return Err(Error::invalid("resume", "network config differs from the checkpoint").into());
            }
            if c.state.is_none() {
                return Err(Error::invalid("resume", "checkpoint has no training state").into());
            }
            SegCheckpoint { seg_config: config.clone(), channel, ..c }
        }
        None => {
            let m = init_segmenter(config, config.seed);
            SegCheckpoint {
                seg_config: config.clone(),
                channel,
                training_log: Vec::new(),
                best_epoch: None,
                model: m.clone(),
                state: Some(SegTrainState { model: m, optimizer: Adam::new(config.adam()), epochs_completed: 0 }),
            }
        }
    };
    let start = ckpt.state.as_ref().expect("state present").epochs_completed;
    let mut best = ckpt
        .best_epoch
        .and_then(|e| ckpt.training_log.iter().find(|r| r.epoch == e))
        .and_then(|r| r.val_f1)
        .unwrap_or(f64::NEG_INFINITY);
    if let Some(path) = &config.log_path {
        if start == 0 {
            std::fs::write(path, b"").map_err(|e| Error::io(path, e))?;
        }
    }
    let targets: Vec<Plane> = train.masks.iter().map(mask_plane).collect();

    for epoch in start + 1..=config.epochs {
        let last_good = ckpt.clone();
        let fail = |error: Error| TrainFailure { error, checkpoint: Some(Box::new(last_good.clone())) };
        let state = ckpt.state.as_mut().expect("state present");
        let mut rng = epoch_rng(config.seed ^ 0x5E6, epoch);
        let order = shuffled(train.len(), &mut rng);
        let (mut loss_sum, mut steps) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let (xs, ys): (Vec<Plane>, Vec<Plane>) = batch
                .iter()
                .map(|&i| {
                    let (ck, t) = (&train.ck[i], &targets[i]);
                    let x = rng.random_range(0..=ck.width() - TILE_SIZE);
                    let y = rng.random_range(0..=ck.height() - TILE_SIZE);
                    let code = if config.augment { rng.random_range(0..8u8) } else { 0 };
                    (
                        ck.crop(x, y, TILE_SIZE, TILE_SIZE).dihedral(code),
                        t.crop(x, y, TILE_SIZE, TILE_SIZE).dihedral(code),
                    )
                })
                .unzip();
            let input = stack(&xs.iter().collect::<Vec<_>>());
            let target = stack(&ys.iter().collect::<Vec<_>>());
            let (_, trace) = state.model.forward_train(&input);
            let (loss, grad) = seg_loss_and_grad(config.loss_kind, state.model.trace_logits(&trace), &target);
            ensure_finite(&[("train_loss", loss)], epoch).map_err(fail)?;
            state.model.backward_logits(&trace, &grad, false);
            state.optimizer.step(state.model.params_mut());
            loss_sum += loss;
            steps += 1;
        }
        let counts = pooled_confusion(&state.model, val, config.threshold).map_err(fail)?;
        let val_f1 = metrics(counts, "val").f1;
        let record = SegEpochRecord { epoch, train_loss: loss_sum / steps as f64, val_f1 };
        log::info!(
            "segmentation epoch {epoch}/{}: train_loss {:.4} val_f1 {}",
            config.epochs,
            record.train_loss,
            val_f1.map_or("undefined".to_string(), |f| format!("{f:.4}"))
        );
        state.epochs_completed = epoch;
        let score = val_f1.unwrap_or(f64::NEG_INFINITY);
        if ckpt.best_epoch.is_none() || score > best {
            best = score;
            ckpt.best_epoch = Some(epoch);
            ckpt.model = state.model.clone();
        }
        ckpt.training_log.push(record);
        if let Some(path) = &config.log_path {
            append_log_line(path, &record, false).map_err(fail)?;
        }
    }
    Ok(ckpt)
}

/// Masks predicted by `model` for every sample of a set, keyed by id.
pub fn predict_masks(model: &UNet<f32>, set: &SegSet, threshold: f64) -> Result<BTreeMap<String, Mask>> {
    set.ids
        .iter()
        .zip(&set.ck)
        .map(|(id, ck)| {
            let (x, y) = center_origin(ck, TILE_SIZE);
            let prob = seg_forward(model, &ck.crop(x, y, TILE_SIZE, TILE_SIZE))?;
            Ok((id.clone(), binarize(&prob, threshold)))
        })
        .collect()
}
