//! DAPI slide to synthetic CK to epithelium mask, each step as a tiled pass.

use serde::{Deserialize, Serialize};

use super::normalize::{
    model_to_u16_scale, normalize_with_bounds, percentile_bounds, DEFAULT_HIGH_PCT, DEFAULT_LOW_PCT,
};
use super::tiles::{map_tiles, plan_tiles, Blend, TilePlan, TILE_SIZE};
use crate::error::{Error, Result};
use crate::raster::{Mask, Plane};
use crate::segmentation::{binarize, seg_forward, SegCheckpoint};
use crate::translation::{generator_forward, Checkpoint};

pub const DEFAULT_STRIDE: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoStepOptions {
    pub stride: usize,
    pub blend: Blend,
    /// Overrides the segmentation checkpoint's threshold.
    pub threshold: Option<f64>,
}

impl Default for TwoStepOptions {
    fn default() -> Self {
        Self { stride: DEFAULT_STRIDE, blend: Blend::CosineRamp, threshold: None }
    }
}

/// Tiling geometry echoed into inference sidecars.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub width: usize,
    pub height: usize,
    /// Raster size after reflect-padding to at least one tile.
    pub padded_width: usize,
    pub padded_height: usize,
    pub tile_size: usize,
    pub stride: usize,
    pub blend: Blend,
    pub tiles: usize,
    pub threshold: f64,
}

#[derive(Clone, Debug)]
pub struct SegmentationOutput {
    pub probability: Plane,
    pub mask: Mask,
    pub geometry: Geometry,
}

#[derive(Clone, Debug)]
pub struct TwoStepOutput {
    /// Synthetic CK on the 16-bit intensity scale.
    pub synthetic_ck: Plane,
    pub probability: Plane,
    pub mask: Mask,
    pub geometry: Geometry,
}

/// Percentile-normalizes using statistics of the unpadded raster, then pads.
fn prepare(raster: &Plane) -> Plane {
    let (lo, hi) = percentile_bounds(raster, DEFAULT_LOW_PCT, DEFAULT_HIGH_PCT);
    normalize_with_bounds(raster, lo, hi).reflect_pad(TILE_SIZE, TILE_SIZE)
}

fn plan_for(padded: &Plane, options: &TwoStepOptions) -> Result<TilePlan> {
    plan_tiles(padded.width(), padded.height(), TILE_SIZE, options.stride, options.blend)
}

fn geometry(raster: &Plane, plan: &TilePlan, threshold: f64) -> Geometry {
    Geometry {
        width: raster.width(),
        height: raster.height(),
        padded_width: plan.width,
        padded_height: plan.height,
        tile_size: plan.tile_size,
        stride: plan.stride,
        blend: plan.blend,
        tiles: plan.tiles.len(),
        threshold,
    }
}

fn check_threshold(t: f64) -> Result<f64> {
    if t > 0.0 && t < 1.0 {
        Ok(t)
    } else {
        Err(Error::invalid("threshold", format!("must lie in (0, 1), got {t}")))
    }
}

/// Segments a raw CK raster (stained or synthetic) with a tiled pass.
pub fn segment_slide(ck: &Plane, seg: &SegCheckpoint, options: &TwoStepOptions) -> Result<SegmentationOutput> {
    let threshold = check_threshold(options.threshold.unwrap_or(seg.seg_config.threshold))?;
    let input = prepare(ck);
    let plan = plan_for(&input, options)?;
    let probability = map_tiles(&input, &plan, |t| seg_forward(&seg.model, t))?.crop(0, 0, ck.width(), ck.height());
    let mask = binarize(&probability, threshold);
    Ok(SegmentationOutput { probability, mask, geometry: geometry(ck, &plan, threshold) })
}

/// Synthetic CK (16-bit scale) for a raw DAPI raster.
pub fn synthesize_slide(dapi: &Plane, dapi2ck: &Checkpoint, options: &TwoStepOptions) -> Result<Plane> {
    let input = prepare(dapi);
    let plan = plan_for(&input, options)?;
    let out = map_tiles(&input, &plan, |t| generator_forward(&dapi2ck.generator, t))?;
    Ok(out.crop(0, 0, dapi.width(), dapi.height()).map(model_to_u16_scale))
}

/// Synthesizes CK for the whole slide, then segments the synthetic slide.
pub fn run_two_step(
    dapi: &Plane,
    dapi2ck: &Checkpoint,
    seg: &SegCheckpoint,
    options: &TwoStepOptions,
) -> Result<TwoStepOutput> {
    check_threshold(options.threshold.unwrap_or(seg.seg_config.threshold))?;
    if dapi.width() == 0 || dapi.height() == 0 {
        return Err(Error::invalid("dapi slide", "raster is empty"));
    }
    let synthetic_ck = synthesize_slide(dapi, dapi2ck, options)?;
    let seg_out = segment_slide(&synthetic_ck, seg, options)?;
    Ok(TwoStepOutput {
        synthetic_ck,
        probability: seg_out.probability,
        mask: seg_out.mask,
        geometry: seg_out.geometry,
    })
}

/// Per-region summary of inference outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub id: String,
    pub pixels: usize,
    pub mean_synthetic_ck: Option<f64>,
    pub mean_probability: Option<f64>,
    pub mask_fraction: Option<f64>,
}

pub fn region_stats(id: &str, region: &Mask, synthetic_ck: &Plane, probability: &Plane, mask: &Mask) -> Result<RegionStats> {
    if region.dims() != synthetic_ck.dims() {
        return Err(Error::shape(
            format!("region {id}"),
            format!("{:?}", synthetic_ck.dims()),
            format!("{:?}", region.dims()),
        ));
    }
    let pixels = region.count();
    Ok(RegionStats {
        id: id.to_string(),
        pixels,
        mean_synthetic_ck: synthetic_ck.masked_mean(region),
        mean_probability: probability.masked_mean(region),
        mask_fraction: (pixels > 0).then(|| region.intersection_count(mask) as f64 / pixels as f64),
    })
}
