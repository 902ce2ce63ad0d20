//! Virtual CK staining from DAPI and epithelium segmentation, with a
//! procedural phantom generator for training and evaluation.

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod nn;
pub mod phantom;
pub mod pipeline;
pub mod raster;
pub mod segmentation;
mod training;
pub mod translation;

pub use error::{Error, Result};
pub use eval::{ConfusionCounts, MetricsReport};
pub use phantom::{generate_phantom, PhantomSample, PhantomSpec};
pub use pipeline::{run_two_step, TilePlan};
pub use raster::{Mask, Plane, SlideRaster};
pub use segmentation::{SegCheckpoint, SegConfig};
pub use training::TrainFailure;
pub use translation::{Checkpoint, DiscriminatorConfig, GeneratorConfig, TrainConfig};
