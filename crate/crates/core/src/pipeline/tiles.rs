//! Tile planning and weighted stitching for sliding-window inference.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Plane;

pub const TILE_SIZE: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgePolicy {
    /// Edge tiles are shifted inward so every tile lies inside the raster.
    ClampToBorder,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Blend {
    UniformAverage,
    /// Separable Hann window; every weight is strictly positive.
    #[default]
    CosineRamp,
}

impl Blend {
    /// Per-axis weights for a tile of side `tile_size`.
    pub fn axis_weights(self, tile_size: usize) -> Vec<f64> {
        match self {
            Blend::UniformAverage => vec![1.0; tile_size],
            Blend::CosineRamp => (0..tile_size)
                .map(|i| {
                    let t = (i as f64 + 0.5) / tile_size as f64;
                    0.5 - 0.5 * (2.0 * std::f64::consts::PI * t).cos()
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TilePlan {
    pub width: usize,
    pub height: usize,
    pub tile_size: usize,
    pub stride: usize,
    /// Top-left corners in row-major order.
    pub tiles: Vec<(usize, usize)>,
    pub edge_policy: EdgePolicy,
    pub blend: Blend,
}

/// Tile origins along one axis: multiples of `stride`, the last clamped to `extent - tile`.
fn axis_origins(extent: usize, tile: usize, stride: usize) -> Vec<usize> {
    let last = extent - tile;
    let count = last.div_ceil(stride) + 1;
    (0..count).map(|i| (i * stride).min(last)).collect()
}

pub fn plan_tiles(width: usize, height: usize, tile_size: usize, stride: usize, blend: Blend) -> Result<TilePlan> {
    if tile_size == 0 {
        return Err(Error::invalid("tile plan", "tile_size must be >= 1"));
    }
    if width < tile_size || height < tile_size {
        return Err(Error::invalid(
            "tile plan",
            format!("raster {width}x{height} is smaller than tile_size {tile_size}; pad it first"),
        ));
    }
    if stride == 0 || stride > tile_size {
        return Err(Error::invalid(
            "tile plan",
            format!("stride must satisfy 1 <= stride <= {tile_size}, got {stride}"),
        ));
    }
    let xs = axis_origins(width, tile_size, stride);
    let ys = axis_origins(height, tile_size, stride);
    let tiles = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
    Ok(TilePlan {
        width,
        height,
        tile_size,
        stride,
        tiles,
        edge_policy: EdgePolicy::ClampToBorder,
        blend,
    })
}

/// Running weighted sums of deposited tiles.
#[derive(Clone, Debug)]
pub struct StitchAccumulator {
    width: usize,
    height: usize,
    tile_size: usize,
    axis_weights: Vec<f64>,
    value_sum: Vec<f64>,
    weight_sum: Vec<f64>,
}

impl StitchAccumulator {
    pub fn new(plan: &TilePlan) -> Self {
        let n = plan.width * plan.height;
        Self {
            width: plan.width,
            height: plan.height,
            tile_size: plan.tile_size,
            axis_weights: plan.blend.axis_weights(plan.tile_size),
            value_sum: vec![0.0; n],
            weight_sum: vec![0.0; n],
        }
    }

    pub fn deposit(&mut self, x: usize, y: usize, tile: &Plane) -> Result<()> {
        let t = self.tile_size;
        if tile.dims() != (t, t) {
            return Err(Error::shape("stitch tile", format!("{t}x{t}"), format!("{}x{}", tile.width(), tile.height())));
        }
        if x + t > self.width || y + t > self.height {
            return Err(Error::TileMismatch(format!("tile at ({x}, {y}) exceeds the raster")));
        }
        for ty in 0..t {
            let wy = self.axis_weights[ty];
            let row = (y + ty) * self.width + x;
            let src = &tile.data()[ty * t..(ty + 1) * t];
            for (tx, &v) in src.iter().enumerate() {
                let w = wy * self.axis_weights[tx];
                self.value_sum[row + tx] += w * v as f64;
                self.weight_sum[row + tx] += w;
            }
        }
        Ok(())
    }

    pub fn weight_sum(&self) -> &[f64] {
        &self.weight_sum
    }

    /// `value_sum / weight_sum`; fails if any pixel received no weight.
    pub fn finish(self) -> Result<Plane> {
        if let Some(i) = self.weight_sum.iter().position(|&w| w <= 0.0) {
            return Err(Error::TileMismatch(format!(
                "pixel ({}, {}) is not covered by any tile",
                i % self.width,
                i / self.width
            )));
        }
        let data = self
            .value_sum
            .iter()
            .zip(&self.weight_sum)
            .map(|(v, w)| (v / w) as f32)
            .collect();
        Ok(Plane::new(self.width, self.height, data))
    }
}

/// Blends tile outputs into a raster; deposits in the order given.
///
/// The tile set must equal the plan's: no missing, extra or repeated tiles.
pub fn stitch(tile_outputs: &[((usize, usize), Plane)], plan: &TilePlan) -> Result<Plane> {
    let mut expected: HashMap<(usize, usize), bool> = plan.tiles.iter().map(|&c| (c, false)).collect();
    for (coords, _) in tile_outputs {
        match expected.get_mut(coords) {
            None => return Err(Error::TileMismatch(format!("tile {coords:?} is not in the plan"))),
            Some(true) => return Err(Error::TileMismatch(format!("tile {coords:?} given twice"))),
            Some(seen) => *seen = true,
        }
    }
    let mut missing: Vec<_> = expected.into_iter().filter(|(_, seen)| !seen).map(|(c, _)| c).collect();
    if !missing.is_empty() {
        missing.sort_unstable();
        return Err(Error::TileMismatch(format!("missing tiles {missing:?}")));
    }
    let mut acc = StitchAccumulator::new(plan);
    for ((x, y), tile) in tile_outputs {
        acc.deposit(*x, *y, tile)?;
    }
    acc.finish()
}

/// Applies `f` to every planned tile of `input` and stitches the results.
///
/// Tiles are evaluated in parallel and deposited in plan order, so the
/// output does not depend on scheduling.
pub fn map_tiles<F>(input: &Plane, plan: &TilePlan, f: F) -> Result<Plane>
where
    F: Fn(&Plane) -> Result<Plane> + Sync,
{
    use rayon::prelude::*;
    if input.dims() != (plan.width, plan.height) {
        return Err(Error::shape(
            "tiled input",
            format!("{}x{}", plan.width, plan.height),
            format!("{}x{}", input.width(), input.height()),
        ));
    }
    let t = plan.tile_size;
    let outputs = plan
        .tiles
        .par_iter()
        .map(|&(x, y)| Ok(((x, y), f(&input.crop(x, y, t, t))?)))
        .collect::<Result<Vec<_>>>()?;
    stitch(&outputs, plan)
}
