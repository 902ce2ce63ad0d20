//! Command-line orchestration of phantom generation, training, inference,
//! evaluation and reporting.
//!
//! Every command reads one [`config::ExperimentConfig`], applies command-line
//! overrides, writes the resolved configuration into its output directory and
//! prints a one-line JSON summary on stdout. Failures print a JSON error
//! record on stderr and exit with code 2 (validation) or 3 (runtime).

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{ExperimentConfig, Overrides};
pub use error::{CliError, EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION};

#[derive(Debug, Parser)]
#[command(name = "dapi2ck", version, about = "Virtual CK staining from DAPI and epithelium segmentation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Root output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Tiling stride for slide inference.
    #[arg(long, global = true)]
    pub stride: Option<usize>,
    /// Segmentation probability threshold.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
}

impl GlobalArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides { seed: self.seed, out_dir: self.out.clone(), stride: self.stride, threshold: self.threshold }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a phantom dataset with a manifest under `<out>/dataset`.
    GeneratePhantoms {
        #[arg(long)]
        n_samples: Option<usize>,
    },
    /// Train the translation or the segmentation network.
    Train {
        #[command(subcommand)]
        which: TrainCommand,
    },
    /// Run the two-step pipeline (or segmentation of a CK raster) on slides.
    Infer(InferArgs),
    /// Score inference outputs and render the comparison table.
    Evaluate(EvaluateArgs),
    /// Render overlays and difference heatmaps of inference outputs.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
pub enum TrainCommand {
    Dapi2ck(TrainArgs),
    Segmentation(SegTrainArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Continue from a checkpoint that carries training state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SegTrainArgs {
    #[command(flatten)]
    pub common: TrainArgs,
    #[arg(long, value_enum)]
    pub channel: Option<ChannelArg>,
    #[arg(long)]
    pub dapi2ck_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ChannelArg {
    CkTrue,
    CkStained,
    SyntheticFromCheckpoint,
}

impl From<ChannelArg> for dapi2ck::segmentation::ChannelSelector {
    fn from(c: ChannelArg) -> Self {
        use dapi2ck::segmentation::ChannelSelector as C;
        match c {
            ChannelArg::CkTrue => C::CkTrue,
            ChannelArg::CkStained => C::CkStained,
            ChannelArg::SyntheticFromCheckpoint => C::SyntheticFromCheckpoint,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum InferMode {
    /// DAPI to synthetic CK, then segmentation of the synthetic CK.
    #[default]
    TwoStep,
    /// Segmentation of a stained CK raster.
    Ck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for dapi2ck::phantom::Split {
    fn from(s: SplitArg) -> Self {
        use dapi2ck::phantom::Split;
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct InferArgs {
    #[arg(long, value_enum, default_value_t)]
    pub mode: InferMode,
    /// Single-channel DAPI image.
    #[arg(long)]
    pub dapi: Option<PathBuf>,
    /// Single-channel CK image (for `--mode ck`).
    #[arg(long)]
    pub ck: Option<PathBuf>,
    /// Multi-page TIFF with one page per channel.
    #[arg(long)]
    pub slide: Option<PathBuf>,
    /// Page names of `--slide`, in order.
    #[arg(long, value_delimiter = ',', default_value = "DAPI,CK")]
    pub channel_names: Vec<String>,
    /// Every sample of a manifest split.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    /// Slide identifier for file inputs; defaults to the file stem.
    #[arg(long)]
    pub id: Option<String>,
    /// Micrometers per pixel for file inputs.
    #[arg(long)]
    pub resolution: Option<f64>,
    #[arg(long)]
    pub dapi2ck_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub seg_checkpoint: Option<PathBuf>,
    /// Output subdirectory of `<out>`; defaults to `infer` or `infer_ck`.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    VsAnnotations,
    SyntheticVsStained,
    /// All three comparisons and the rendered table.
    Table,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_enum)]
    pub mode: EvalMode,
    /// Inference run scored in `vs-annotations` and `synthetic-vs-stained`.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Reference run or annotation directory (`<id>/mask.png`).
    #[arg(long = "ref", id = "ref")]
    pub reference: Option<PathBuf>,
    /// Two-step run for `table`.
    #[arg(long)]
    pub synthetic: Option<PathBuf>,
    /// Stained-CK run for `table`.
    #[arg(long)]
    pub stained: Option<PathBuf>,
    /// Manifest whose epithelium masks serve as annotations.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    /// Restrict counting to annotated artifact regions of this kind.
    #[arg(long)]
    pub roi_kind: Option<String>,
    #[arg(long, default_value = "evaluation")]
    pub name: String,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Inference run directory.
    #[arg(long)]
    pub run: PathBuf,
    /// Second run compared slide by slide (difference heatmaps).
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long, default_value = "report")]
    pub name: String,
}

/// What a successful command prints.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: serde_json::Value,
    /// Human-readable text printed before the summary.
    pub text: Option<String>,
}

pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    let cfg = ExperimentConfig::load(cli.global.config.as_deref(), &cli.global.overrides())?;
    match cli.command {
        Command::GeneratePhantoms { n_samples } => commands::generate::run(cfg, n_samples),
        Command::Train { which: TrainCommand::Dapi2ck(a) } => commands::train::dapi2ck(cfg, a),
        Command::Train { which: TrainCommand::Segmentation(a) } => commands::train::segmentation(cfg, a),
        Command::Infer(a) => commands::infer::run(cfg, a),
        Command::Evaluate(a) => commands::evaluate::run(cfg, a),
        Command::Report(a) => commands::report::run(cfg, a),
    }
}
