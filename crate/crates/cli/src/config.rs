//! Experiment configuration: one TOML document plus command-line overrides.
//!
//! Every field has a default, so an empty file (or no file) is a valid
//! configuration. Relative paths are resolved against the working directory.
//!
//! ```toml
//! seed = 0                  # master seed
//! out_dir = "run"           # root of every output directory
//!
//! [phantom]                 # PhantomSpec: width, height, resolution, densities, artifact_config, ...
//! [dataset]                 # n_samples = 100, split = { train = 0.8, val = 0.1, test = 0.1 }, manifest
//! [generator]               # base_width = 8, depth = 7, norm = "instance"
//! [discriminator]           # n_layers = 3, base_width = 8, norm = "instance"
//! [translation]             # lambda_l1 = 100, learning_rate = 2e-4, epochs = 20, target = "ck_stained"
//! [segmentation]            # base_width = 8, depth = 5, loss_kind = "combined", threshold = 0.5, epochs = 20
//! [segmentation_input]      # channel = "ck_true", dapi2ck_checkpoint
//! [pipeline]                # stride = 128, blend = "cosine_ramp", threshold
//! [evaluation]              # split = "test"
//! ```

use std::path::{Path, PathBuf};

use dapi2ck::phantom::{Split, SplitRatios};
use dapi2ck::pipeline::{Blend, TwoStepOptions, DEFAULT_STRIDE};
use dapi2ck::segmentation::ChannelSelector;
use dapi2ck::{DiscriminatorConfig, GeneratorConfig, PhantomSpec, SegConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// File name of the configuration snapshot in every output directory.
pub const SNAPSHOT_FILE: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed. Overrides `phantom.seed`, `translation.seed` and
    /// `segmentation.seed`.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub phantom: PhantomSpec,
    pub dataset: DatasetConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub translation: TrainConfig,
    pub segmentation: SegConfig,
    pub segmentation_input: SegInputConfig,
    pub pipeline: PipelineConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("run"),
            phantom: PhantomSpec::default(),
            dataset: DatasetConfig::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            translation: TrainConfig::default(),
            segmentation: SegConfig::default(),
            segmentation_input: SegInputConfig::default(),
            pipeline: PipelineConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_samples: usize,
    pub split: SplitRatios,
    /// Manifest to train and evaluate on; defaults to `<out_dir>/dataset/manifest.json`.
    pub manifest: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { n_samples: 100, split: SplitRatios::default(), manifest: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegInputConfig {
    pub channel: ChannelSelector,
    /// Required when `channel = "synthetic_from_checkpoint"`.
    pub dapi2ck_checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub stride: usize,
    pub blend: Blend,
    /// Overrides the segmentation checkpoint's threshold.
    pub threshold: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { stride: DEFAULT_STRIDE, blend: Blend::CosineRamp, threshold: None }
    }
}

impl PipelineConfig {
    pub fn options(&self) -> TwoStepOptions {
        TwoStepOptions { stride: self.stride, blend: self.blend, threshold: self.threshold }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Manifest split used by `infer --manifest` and `evaluate`.
    pub split: Split,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { split: Split::Test }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub stride: Option<usize>,
    pub threshold: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::validation("config", e.to_string()))
    }

    /// Reads `path` (or the defaults), applies overrides and validates.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::validation("config", format!("{}: {e}", p.display())).with_path(p))?;
                Self::from_toml(&text).map_err(|e| e.with_path(p))?
            }
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        if let Some(s) = o.stride {
            self.pipeline.stride = s;
        }
        if let Some(t) = o.threshold {
            self.pipeline.threshold = Some(t);
        }
        self.phantom.seed = self.seed;
        self.translation.seed = self.seed;
        self.segmentation.seed = self.seed;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.phantom.validate()?;
        self.dataset.split.validate()?;
        if self.dataset.n_samples == 0 {
            return Err(CliError::validation("dataset.n_samples", "must be >= 1"));
        }
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.translation.validate()?;
        self.segmentation.validate()?;
        if self.pipeline.stride == 0 {
            return Err(CliError::validation("pipeline.stride", "must be >= 1"));
        }
        if let Some(t) = self.pipeline.threshold {
            if !(t > 0.0 && t < 1.0) {
                return Err(CliError::validation("pipeline.threshold", format!("must lie in (0, 1), got {t}")));
            }
        }
        Ok(())
    }

    pub fn dataset_dir(&self) -> PathBuf {
        match &self.dataset.manifest {
            Some(m) => m.parent().map(Path::to_path_buf).unwrap_or_default(),
            None => self.out_dir.join("dataset"),
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dataset
            .manifest
            .clone()
            .unwrap_or_else(|| self.dataset_dir().join(dapi2ck::phantom::MANIFEST_FILE))
    }

    pub fn dapi2ck_dir(&self) -> PathBuf {
        self.out_dir.join("dapi2ck")
    }

    pub fn segmentation_dir(&self) -> PathBuf {
        self.out_dir.join("segmentation")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Writes the snapshot into `dir`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<(), CliError> {
        dapi2ck::raster::write_atomic(&dir.join(SNAPSHOT_FILE), self.to_toml().as_bytes())?;
        Ok(())
    }
}
