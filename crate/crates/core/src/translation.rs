//! DAPI to CK translation: encoder-decoder generator trained against a
//! patch discriminator with a least-squares adversarial loss plus L1.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{at_path, CheckpointKind, Container};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Head, NormKind, PatchGan, PatchGanSpec, Real, Tensor, UNet, UNetSpec};
use crate::phantom::{load_sample, Manifest, Split};
use crate::pipeline::normalize::{normalize_intensity, DEFAULT_HIGH_PCT, DEFAULT_LOW_PCT, MODEL_RANGE};
use crate::pipeline::tiles::TILE_SIZE;
use crate::raster::Plane;
use crate::training::{
    append_log_line, center_origin, check_patch_fits, ensure_finite, epoch_rng, shuffled, stack, unstack,
    TrainFailure,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub input_channels: usize,
    pub output_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    pub norm: NormKind,
    pub output_range: (f32, f32),
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            input_channels: 1,
            output_channels: 1,
            base_width: 8,
            depth: 7,
            norm: NormKind::Instance,
            output_range: MODEL_RANGE,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("generator config", reason));
        if self.input_channels != 1 || self.output_channels != 1 {
            return bad(format!(
                "input_channels and output_channels must be 1, got {} and {}",
                self.input_channels, self.output_channels
            ));
        }
        if self.base_width == 0 {
            return bad("base_width must be >= 1".into());
        }
        if self.depth == 0 || self.depth > 8 || TILE_SIZE % (1 << self.depth) != 0 {
            return bad(format!("depth must satisfy 256 % 2^depth == 0 with depth >= 1, got {}", self.depth));
        }
        if self.output_range != MODEL_RANGE {
            return bad(format!("output_range must be {MODEL_RANGE:?} (tanh head), got {:?}", self.output_range));
        }
        Ok(())
    }

    pub fn unet_spec(&self) -> UNetSpec {
        UNetSpec {
            in_channels: self.input_channels,
            out_channels: self.output_channels,
            base_width: self.base_width,
            depth: self.depth,
            norm: self.norm,
            head: Head::Tanh,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub input_channels: usize,
    pub n_layers: usize,
    pub base_width: usize,
    pub norm: NormKind,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { input_channels: 2, n_layers: 3, base_width: 8, norm: NormKind::Instance }
    }
}

impl DiscriminatorConfig {
    pub fn spec(&self) -> PatchGanSpec {
        PatchGanSpec {
            in_channels: self.input_channels,
            base_width: self.base_width,
            n_layers: self.n_layers,
            norm: self.norm,
        }
    }

    /// Side of the logit grid for a square input.
    pub fn output_side(&self, input: usize) -> Option<usize> {
        self.spec().output_side(input)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("discriminator config", reason));
        if self.input_channels != 2 {
            return bad(format!("input_channels must be 2 (DAPI + CK), got {}", self.input_channels));
        }
        if self.n_layers == 0 || self.base_width == 0 {
            return bad("n_layers and base_width must be >= 1".into());
        }
        match self.output_side(TILE_SIZE) {
            Some(s) if s > 1 => Ok(()),
            other => bad(format!("logit grid for a 256 px input must be wider than 1, got {other:?}")),
        }
    }
}

/// Which CK raster of a phantom serves as the translation target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CkTarget {
    #[default]
    CkStained,
    CkTrue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_l1: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub patch_size: usize,
    /// Random flips and transposes of training pairs.
    pub augment: bool,
    pub target: CkTarget,
    /// Receives one JSON object per epoch.
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_l1: 100.0,
            learning_rate: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            batch_size: 1,
            epochs: 20,
            seed: 0,
            patch_size: TILE_SIZE,
            augment: true,
            target: CkTarget::CkStained,
            log_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("train config", reason));
        if !(self.lambda_l1 >= 0.0 && self.lambda_l1.is_finite()) {
            return bad(format!("lambda_l1 must be >= 0, got {}", self.lambda_l1));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.patch_size != TILE_SIZE {
            return bad(format!("patch_size must be {TILE_SIZE}, got {}", self.patch_size));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            ..AdamConfig::default()
        }
    }
}

/// Loss values of one adversarial step, accumulated in `f64`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GanLosses {
    pub g_loss: f64,
    pub d_loss: f64,
    pub adv: f64,
    pub l1: f64,
}

impl GanLosses {
    fn check(&self, epoch: usize) -> Result<()> {
        ensure_finite(
            &[("g_loss", self.g_loss), ("d_loss", self.d_loss), ("adv", self.adv), ("l1", self.l1)],
            epoch,
        )
    }
}

/// Mean squared distance of every logit to `label`, and its gradient.
fn lsgan<T: Real>(logits: &Tensor<T>, label: f64) -> (f64, Tensor<T>) {
    let n = logits.len() as f64;
    let loss = logits.data().iter().map(|v| (v.to_f64() - label).powi(2)).sum::<f64>() / n;
    let grad = logits.map(|v| T::from_f64(2.0 * (v.to_f64() - label) / n));
    (loss, grad)
}

/// Mean absolute difference and its (sub)gradient w.r.t. `output`.
fn l1<T: Real>(output: &Tensor<T>, target: &Tensor<T>, weight: f64) -> (f64, Tensor<T>) {
    let n = output.len() as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(output.len());
    for (&o, &t) in output.data().iter().zip(target.data()) {
        let d = o.to_f64() - t.to_f64();
        sum += d.abs();
        let s = if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
        grad.push(T::from_f64(weight * s / n));
    }
    (sum / n, Tensor::from_vec(output.shape(), grad))
}

fn check_pair<T: Real>(dapi: &Tensor<T>, ck: &Tensor<T>) -> Result<()> {
    let [n, c, h, w] = dapi.shape();
    if ck.shape() != [n, 1, h, w] || c != 1 {
        return Err(Error::shape(
            "dapi/ck pair",
            format!("[{n}, 1, {h}, {w}] for both"),
            format!("{:?} and {:?}", dapi.shape(), ck.shape()),
        ));
    }
    Ok(())
}

/// Loss values for a given generator output, without gradients.
pub fn gan_losses_for_output<T: Real>(
    discriminator: &PatchGan<T>,
    dapi: &Tensor<T>,
    fake: &Tensor<T>,
    target: &Tensor<T>,
    lambda_l1: f64,
) -> Result<GanLosses> {
    check_pair(dapi, target)?;
    check_pair(dapi, fake)?;
    let (d_real, _) = lsgan(&discriminator.forward(&dapi.concat_channels(target)), 1.0);
    let fake_logits = discriminator.forward(&dapi.concat_channels(fake));
    let (d_fake, _) = lsgan(&fake_logits, 0.0);
    let (adv, _) = lsgan(&fake_logits, 1.0);
    let (l1_value, _) = l1(fake, target, lambda_l1);
    Ok(GanLosses {
        g_loss: adv + lambda_l1 * l1_value,
        d_loss: 0.5 * (d_real + d_fake),
        adv,
        l1: l1_value,
    })
}

/// Generator and discriminator objectives for one batch of pairs.
pub fn gan_step_losses<T: Real>(
    generator: &UNet<T>,
    discriminator: &PatchGan<T>,
    dapi: &Tensor<T>,
    target: &Tensor<T>,
    lambda_l1: f64,
) -> Result<GanLosses> {
    check_pair(dapi, target)?;
    generator.check_input(dapi.shape()).map_err(|e| Error::shape("generator input", "valid shape", e))?;
    let fake = generator.forward(dapi);
    gan_losses_for_output(discriminator, dapi, &fake, target, lambda_l1)
}

/// Accumulates `d d_loss / d theta_D` for a fixed generator output and
/// returns `d_loss`.
pub fn discriminator_gradients<T: Real>(
    discriminator: &mut PatchGan<T>,
    dapi: &Tensor<T>,
    fake: &Tensor<T>,
    target: &Tensor<T>,
) -> f64 {
    let (real_logits, real_trace) = discriminator.forward_train(&dapi.concat_channels(target));
    let (loss_real, g_real) = lsgan(&real_logits, 1.0);
    discriminator.backward(&real_trace, &g_real.map(|v| v * T::from_f64(0.5)));
    let (fake_logits, fake_trace) = discriminator.forward_train(&dapi.concat_channels(fake));
    let (loss_fake, g_fake) = lsgan(&fake_logits, 0.0);
    discriminator.backward(&fake_trace, &g_fake.map(|v| v * T::from_f64(0.5)));
    0.5 * (loss_real + loss_fake)
}

/// Generator objective `adv + lambda * l1` and its gradient w.r.t. the
/// generator output. Discriminator gradients are left untouched.
fn generator_output_gradient<T: Real>(
    discriminator: &PatchGan<T>,
    dapi: &Tensor<T>,
    fake: &Tensor<T>,
    target: &Tensor<T>,
    lambda_l1: f64,
) -> (f64, f64, Tensor<T>) {
    let (logits, trace) = discriminator.forward_train(&dapi.concat_channels(fake));
    let (adv, g_logits) = lsgan(&logits, 1.0);
    let d_input = discriminator.input_gradient(&trace, &g_logits);
    let (_, d_fake_adv) = d_input.split_channels(1);
    let (l1_value, mut d_fake) = l1(fake, target, lambda_l1);
    d_fake.data_mut().iter_mut().zip(d_fake_adv.data()).for_each(|(a, &b)| *a += b);
    (adv, l1_value, d_fake)
}

/// Accumulates `d g_loss / d theta_G` and returns the loss values
/// (`d_loss` evaluated at the current parameters).
pub fn generator_gradients<T: Real>(
    generator: &mut UNet<T>,
    discriminator: &mut PatchGan<T>,
    dapi: &Tensor<T>,
    target: &Tensor<T>,
    lambda_l1: f64,
) -> GanLosses {
    let (fake, trace) = generator.forward_train(dapi);
    let (adv, l1_value, d_fake) = generator_output_gradient(discriminator, dapi, &fake, target, lambda_l1);
    generator.backward(&trace, &d_fake, false);
    let (d_real, _) = lsgan(&discriminator.forward(&dapi.concat_channels(target)), 1.0);
    let (d_fake_loss, _) = lsgan(&discriminator.forward(&dapi.concat_channels(&fake)), 0.0);
    GanLosses {
        g_loss: adv + lambda_l1 * l1_value,
        d_loss: 0.5 * (d_real + d_fake_loss),
        adv,
        l1: l1_value,
    }
}

fn plane_tensor(plane: &Plane) -> Tensor<f32> {
    Tensor::from_vec([1, 1, plane.height(), plane.width()], plane.data().to_vec())
}

/// Synthesizes a normalized CK patch from a normalized DAPI patch.
pub fn generator_forward(generator: &UNet<f32>, dapi: &Plane) -> Result<Plane> {
    let x = plane_tensor(dapi);
    generator
        .check_input(x.shape())
        .map_err(|e| Error::shape("generator input", format!("1x{0}x{0} (or a multiple of {1})", TILE_SIZE, generator.spec().side_multiple()), e))?;
    Ok(unstack(&generator.forward(&x), 0))
}

/// Logit grid of the discriminator for a DAPI/CK pair.
pub fn discriminator_forward(discriminator: &PatchGan<f32>, dapi: &Plane, ck: &Plane) -> Result<Plane> {
    if dapi.dims() != ck.dims() {
        return Err(Error::shape("discriminator input", format!("{:?}", dapi.dims()), format!("{:?}", ck.dims())));
    }
    let side = |s| discriminator.spec().output_side(s);
    if side(dapi.width()).is_none() || side(dapi.height()).is_none() {
        return Err(Error::shape("discriminator input", "a raster large enough for the logit grid", format!("{:?}", dapi.dims())));
    }
    let x = plane_tensor(dapi).concat_channels(&plane_tensor(ck));
    Ok(unstack(&discriminator.forward(&x), 0))
}

pub fn init_generator(config: &GeneratorConfig, seed: u64) -> UNet<f32> {
    UNet::new(config.unet_spec(), &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn init_discriminator(config: &DiscriminatorConfig, seed: u64) -> PatchGan<f32> {
    PatchGan::new(config.spec(), &mut ChaCha8Rng::seed_from_u64(seed ^ 0xD15C_0000_0000_0001))
}

/// One per-epoch entry of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub g_loss: f64,
    pub d_loss: f64,
    pub adv: f64,
    pub l1: f64,
    pub val_l1: f64,
}

/// Resumable optimizer state.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub generator: UNet<f32>,
    pub discriminator: PatchGan<f32>,
    pub opt_g: Adam<f32>,
    pub opt_d: Adam<f32>,
    pub epochs_completed: usize,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub generator_config: GeneratorConfig,
    /// Absent in inference-only exports.
    pub discriminator_config: Option<DiscriminatorConfig>,
    pub train_config: TrainConfig,
    pub training_log: Vec<EpochRecord>,
    /// Epoch whose parameters `generator` holds (lowest `val_l1`).
    pub best_epoch: Option<usize>,
    pub generator: UNet<f32>,
    pub state: Option<TrainState>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    generator_config: GeneratorConfig,
    discriminator_config: Option<DiscriminatorConfig>,
    train_config: TrainConfig,
    training_log: Vec<EpochRecord>,
    best_epoch: Option<usize>,
    state: Option<StateMeta>,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    epochs_completed: usize,
    opt_g_step: u64,
    opt_d_step: u64,
}

impl Checkpoint {
    /// Copy without discriminator and optimizer state.
    pub fn export_inference(&self) -> Checkpoint {
        Checkpoint { discriminator_config: None, state: None, ..self.clone() }
    }

    pub fn to_container(&self) -> Container {
        let meta = CheckpointMeta {
            generator_config: self.generator_config.clone(),
            discriminator_config: self.discriminator_config.clone(),
            train_config: self.train_config.clone(),
            training_log: self.training_log.clone(),
            best_epoch: self.best_epoch,
            state: self.state.as_ref().map(|s| StateMeta {
                epochs_completed: s.epochs_completed,
                opt_g_step: s.opt_g.step,
                opt_d_step: s.opt_d.step,
            }),
        };
        let mut c = Container::new(CheckpointKind::Dapi2ck, serde_json::to_value(meta).expect("meta serializes"));
        c.put_unet("generator", &self.generator);
        if let Some(s) = &self.state {
            c.put_unet("state/generator", &s.generator);
            c.put_patchgan("state/discriminator", &s.discriminator);
            c.put_adam("state/adam_generator", &s.opt_g);
            c.put_adam("state/adam_discriminator", &s.opt_d);
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Checkpoint> {
        let bad = |reason: String| Error::Checkpoint { path: PathBuf::new(), reason };
        if c.kind != CheckpointKind::Dapi2ck {
            return Err(bad(format!("expected a dapi2ck checkpoint, found {:?}", c.kind)));
        }
        let meta: CheckpointMeta =
            serde_json::from_value(c.meta.clone()).map_err(|e| bad(format!("malformed metadata: {e}")))?;
        meta.generator_config.validate()?;
        let mut generator = init_generator(&meta.generator_config, 0);
        c.take_unet("generator", &mut generator)?;
        let state = match (meta.state, &meta.discriminator_config) {
            (Some(s), Some(dc)) => {
                let mut g = init_generator(&meta.generator_config, 0);
                c.take_unet("state/generator", &mut g)?;
                let mut d = init_discriminator(dc, 0);
                c.take_patchgan("state/discriminator", &mut d)?;
                let adam = meta.train_config.adam();
                Some(TrainState {
                    generator: g,
                    discriminator: d,
                    opt_g: c.take_adam("state/adam_generator", adam, s.opt_g_step),
                    opt_d: c.take_adam("state/adam_discriminator", adam, s.opt_d_step),
                    epochs_completed: s.epochs_completed,
                })
            }
            (Some(_), None) => return Err(bad("training state without discriminator_config".into())),
            (None, _) => None,
        };
        Ok(Checkpoint {
            generator_config: meta.generator_config,
            discriminator_config: meta.discriminator_config,
            train_config: meta.train_config,
            training_log: meta.training_log,
            best_epoch: meta.best_epoch,
            generator,
            state,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Self::from_container(&Container::load(path)?).map_err(|e| at_path(e, path))
    }

    pub fn identifier(&self) -> String {
        self.to_container().identifier()
    }
}

/// Normalized DAPI inputs and CK targets of one split.
#[derive(Clone, Debug)]
pub struct PairSet {
    pub ids: Vec<String>,
    pub dapi: Vec<Plane>,
    pub target: Vec<Plane>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Loads and percentile-normalizes every pair of a split.
pub fn load_pairs(manifest: &Manifest, split: Split, target: CkTarget) -> Result<PairSet> {
    let mut set = PairSet { ids: Vec::new(), dapi: Vec::new(), target: Vec::new() };
    for e in manifest.split(split) {
        let s = load_sample(manifest.root(), &e.files)?;
        let ck = match target {
            CkTarget::CkStained => &s.ck_stained,
            CkTarget::CkTrue => &s.ck_true,
        };
        set.ids.push(e.id.clone());
        set.dapi.push(normalize_intensity(&s.dapi, DEFAULT_LOW_PCT, DEFAULT_HIGH_PCT));
        set.target.push(normalize_intensity(ck, DEFAULT_LOW_PCT, DEFAULT_HIGH_PCT));
    }
    Ok(set)
}

/// Mean absolute error of the generator over the centered patch of every pair.
pub fn mean_absolute_error(generator: &UNet<f32>, pairs: &PairSet, patch_size: usize) -> Result<f64> {
    use rayon::prelude::*;
    if pairs.is_empty() {
        return Err(Error::invalid("evaluation split", "no pairs"));
    }
    let errors = (0..pairs.len())
        .into_par_iter()
        .map(|i| {
            check_patch_fits(&pairs.dapi[i], patch_size, "evaluation pair")?;
            let (x, y) = center_origin(&pairs.dapi[i], patch_size);
            let out = generator_forward(generator, &pairs.dapi[i].crop(x, y, patch_size, patch_size))?;
            let t = pairs.target[i].crop(x, y, patch_size, patch_size);
            let sum: f64 = out.data().iter().zip(t.data()).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum();
            Ok(sum / out.data().len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

/// Draws a training patch (random window, optional symmetry) from pair `i`.
fn draw_patch(pairs: &PairSet, i: usize, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> (Plane, Plane) {
    let p = cfg.patch_size;
    let (dapi, tgt) = (&pairs.dapi[i], &pairs.target[i]);
    let x = rng.random_range(0..=dapi.width() - p);
    let y = rng.random_range(0..=dapi.height() - p);
    let code = if cfg.augment { rng.random_range(0..8u8) } else { 0 };
    (dapi.crop(x, y, p, p).dihedral(code), tgt.crop(x, y, p, p).dihedral(code))
}

/// One optimizer step on each network; returns the step's losses.
fn train_step(state: &mut TrainState, dapi: &Tensor<f32>, target: &Tensor<f32>, lambda_l1: f64) -> GanLosses {
    let (fake, g_trace) = state.generator.forward_train(dapi);
    let d_loss = discriminator_gradients(&mut state.discriminator, dapi, &fake, target);
    state.opt_d.step(state.discriminator.params_mut());
    let (adv, l1_value, d_fake) =
        generator_output_gradient(&state.discriminator, dapi, &fake, target, lambda_l1);
    state.generator.backward(&g_trace, &d_fake, false);
    state.opt_g.step(state.generator.params_mut());
    GanLosses { g_loss: adv + lambda_l1 * l1_value, d_loss, adv, l1: l1_value }
}

/// Trains the translation networks on the train split of `manifest`,
/// validating on the val split after every epoch.
///
/// With `resume`, training continues from the saved state and epoch count
/// up to `train_config.epochs`. On divergence the returned failure carries
/// the checkpoint of the last finite epoch.
pub fn train_dapi2ck(
    manifest: &Manifest,
    train_config: &TrainConfig,
    generator_config: &GeneratorConfig,
    discriminator_config: &DiscriminatorConfig,
    resume: Option<Checkpoint>,
) -> std::result::Result<Checkpoint, TrainFailure<Checkpoint>> {
    train_config.validate()?;
    generator_config.validate()?;
    discriminator_config.validate()?;
    let train = load_pairs(manifest, Split::Train, train_config.target)?;
    let val = load_pairs(manifest, Split::Val, train_config.target)?;
    train_pairs(&train, &val, train_config, generator_config, discriminator_config, resume)
}

/// [`train_dapi2ck`] on preloaded pairs.
pub fn train_pairs(
    train: &PairSet,
    val: &PairSet,
    train_config: &TrainConfig,
    generator_config: &GeneratorConfig,
    discriminator_config: &DiscriminatorConfig,
    resume: Option<Checkpoint>,
) -> std::result::Result<Checkpoint, TrainFailure<Checkpoint>> {
    train_config.validate()?;
    generator_config.validate()?;
    discriminator_config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid(
            "dataset",
            format!("train and val splits must be nonempty (got {} and {})", train.len(), val.len()),
        )
        .into());
    }
    for p in train.dapi.iter().chain(&val.dapi) {
        check_patch_fits(p, train_config.patch_size, "dataset")?;
    }
    let cfg = train_config;
    let mut ckpt = match resume {
        Some(c) => {
            if c.generator_config != *generator_config || c.discriminator_config.as_ref() != Some(discriminator_config) {
                return Err(Error::invalid("resume", "network configs differ from the checkpoint").into());
            }
            if c.state.is_none() {
                return Err(Error::invalid("resume", "checkpoint has no training state").into());
            }
            Checkpoint { train_config: cfg.clone(), ..c }
        }
        None => {
            let g = init_generator(generator_config, cfg.seed);
            Checkpoint {
                generator_config: generator_config.clone(),
                discriminator_config: Some(discriminator_config.clone()),
                train_config: cfg.clone(),
                training_log: Vec::new(),
                best_epoch: None,
                generator: g.clone(),
                state: Some(TrainState {
                    generator: g,
                    discriminator: init_discriminator(discriminator_config, cfg.seed),
                    opt_g: Adam::new(cfg.adam()),
                    opt_d: Adam::new(cfg.adam()),
                    epochs_completed: 0,
                }),
            }
        }
    };
    let start = ckpt.state.as_ref().expect("state present").epochs_completed;
    let mut best = ckpt
        .best_epoch
        .and_then(|e| ckpt.training_log.iter().find(|r| r.epoch == e))
        .map_or(f64::INFINITY, |r| r.val_l1);
    if let Some(path) = &cfg.log_path {
        if start == 0 {
            std::fs::write(path, b"").map_err(|e| Error::io(path, e))?;
        }
    }

    for epoch in start + 1..=cfg.epochs {
        let last_good = ckpt.clone();
        let fail = |error: Error| TrainFailure { error, checkpoint: Some(Box::new(last_good.clone())) };
        let state = ckpt.state.as_mut().expect("state present");
        let mut rng = epoch_rng(cfg.seed, epoch);
        let order = shuffled(train.len(), &mut rng);
        let mut sum = GanLosses::default();
        let mut steps = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let (xs, ys): (Vec<Plane>, Vec<Plane>) = batch.iter().map(|&i| draw_patch(train, i, cfg, &mut rng)).unzip();
            let dapi = stack(&xs.iter().collect::<Vec<_>>());
            let target = stack(&ys.iter().collect::<Vec<_>>());
            let losses = train_step(state, &dapi, &target, cfg.lambda_l1);
            losses.check(epoch).map_err(fail)?;
            sum.g_loss += losses.g_loss;
            sum.d_loss += losses.d_loss;
            sum.adv += losses.adv;
            sum.l1 += losses.l1;
            steps += 1;
        }
        let val_l1 = mean_absolute_error(&state.generator, val, cfg.patch_size).map_err(fail)?;
        ensure_finite(&[("val_l1", val_l1)], epoch).map_err(fail)?;
        let n = steps as f64;
        let record = EpochRecord {
            epoch,
            g_loss: sum.g_loss / n,
            d_loss: sum.d_loss / n,
            adv: sum.adv / n,
            l1: sum.l1 / n,
            val_l1,
        };
        log::info!(
            "dapi2ck epoch {epoch}/{}: g_loss {:.4} d_loss {:.4} adv {:.4} l1 {:.4} val_l1 {:.4}",
            cfg.epochs, record.g_loss, record.d_loss, record.adv, record.l1, record.val_l1
        );
        state.epochs_completed = epoch;
        if val_l1 < best {
            best = val_l1;
            ckpt.best_epoch = Some(epoch);
            ckpt.generator = state.generator.clone();
        }
        ckpt.training_log.push(record);
        if let Some(path) = &cfg.log_path {
            append_log_line(path, &record, false).map_err(fail)?;
        }
    }
    Ok(ckpt)
}
