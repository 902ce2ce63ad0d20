//! Slide-scale machinery: normalization, patch sampling, tiling and the
//! two-step inference pass.

pub mod normalize;
pub mod sampling;
pub mod tiles;
pub mod two_step;

pub use normalize::{normalize_intensity, MODEL_RANGE};
pub use sampling::{sample_patches, SampledPatches, SamplingPolicy};
pub use tiles::{map_tiles, plan_tiles, stitch, Blend, EdgePolicy, StitchAccumulator, TilePlan, TILE_SIZE};
pub use two_step::{
    region_stats, run_two_step, segment_slide, synthesize_slide, Geometry, RegionStats, SegmentationOutput,
    TwoStepOptions, TwoStepOutput, DEFAULT_STRIDE,
};
