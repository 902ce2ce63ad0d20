//! Training patch sampling from aligned rasters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Mask, Plane};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingPolicy {
    #[default]
    Uniform,
    /// Half of the patches are drawn around positive mask pixels.
    MaskBalanced,
}

/// Share of a patch that must be positive to count as positive-rich.
pub const POSITIVE_COVERAGE: f64 = 0.10;
const BALANCED_SHARE: f64 = 0.5;
const BALANCED_ATTEMPTS: usize = 32;

/// Aligned patches cut from every input channel (and the mask, if any).
#[derive(Clone, Debug, PartialEq)]
pub struct SampledPatches {
    pub coords: Vec<(usize, usize)>,
    /// `patches[i][c]` is channel `c` of patch `i`.
    pub patches: Vec<Vec<Plane>>,
    pub masks: Option<Vec<Mask>>,
    /// Set when balancing was requested but the mask has no positives.
    pub fell_back_to_uniform: bool,
}

/// Summed-area table of a mask for O(1) window counts.
struct Integral {
    width: usize,
    sums: Vec<u64>,
}

impl Integral {
    fn new(mask: &Mask) -> Self {
        let (w, h) = mask.dims();
        let mut sums = vec![0u64; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0u64;
            for x in 0..w {
                row += mask.get(x, y) as u64;
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        Self { width: w + 1, sums }
    }

    fn count(&self, x: usize, y: usize, size: usize) -> u64 {
        let s = |x: usize, y: usize| self.sums[y * self.width + x];
        s(x + size, y + size) + s(x, y) - s(x + size, y) - s(x, y + size)
    }
}

pub fn sample_patches(
    channels: &[&Plane],
    mask: Option<&Mask>,
    n: usize,
    policy: SamplingPolicy,
    patch_size: usize,
    seed: u64,
) -> Result<SampledPatches> {
    let first = channels
        .first()
        .ok_or_else(|| Error::invalid("patch sampling", "at least one channel is required"))?;
    let (w, h) = first.dims();
    if channels.iter().any(|c| c.dims() != (w, h)) || mask.is_some_and(|m| m.dims() != (w, h)) {
        return Err(Error::invalid("patch sampling", "channels and mask must share dimensions"));
    }
    if patch_size == 0 || w < patch_size || h < patch_size {
        return Err(Error::invalid(
            "patch sampling",
            format!("raster {w}x{h} cannot hold a {patch_size} px patch"),
        ));
    }
    let mask = match (policy, mask) {
        (SamplingPolicy::MaskBalanced, None) => {
            return Err(Error::invalid("patch sampling", "mask_balanced policy needs a mask"));
        }
        (_, m) => m,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (max_x, max_y) = (w - patch_size, h - patch_size);
    let uniform = |rng: &mut ChaCha8Rng| (rng.random_range(0..=max_x), rng.random_range(0..=max_y));

    let positives: Vec<usize> = match (policy, mask) {
        (SamplingPolicy::MaskBalanced, Some(m)) => {
            (0..m.data().len()).filter(|&i| m.data()[i]).collect()
        }
        _ => Vec::new(),
    };
    let balanced = policy == SamplingPolicy::MaskBalanced && !positives.is_empty();
    let fell_back = policy == SamplingPolicy::MaskBalanced && positives.is_empty();
    if fell_back {
        log::warn!("mask has no positive pixels; falling back to uniform sampling");
    }
    let integral = balanced.then(|| Integral::new(mask.expect("balanced implies mask")));
    let n_positive = (n as f64 * BALANCED_SHARE).ceil() as usize;
    let needed = (POSITIVE_COVERAGE * (patch_size * patch_size) as f64).ceil() as u64;

    let mut coords = Vec::with_capacity(n);
    for i in 0..n {
        let mut c = None;
        if balanced && i < n_positive {
            let integral = integral.as_ref().expect("built when balanced");
            for _ in 0..BALANCED_ATTEMPTS {
                let p = positives[rng.random_range(0..positives.len())];
                let (px, py) = (p % w, p / w);
                let jitter = patch_size / 4;
                let x = (px + rng.random_range(0..=2 * jitter)).saturating_sub(patch_size / 2 + jitter).min(max_x);
                let y = (py + rng.random_range(0..=2 * jitter)).saturating_sub(patch_size / 2 + jitter).min(max_y);
                if integral.count(x, y, patch_size) >= needed {
                    c = Some((x, y));
                    break;
                }
            }
        }
        coords.push(c.unwrap_or_else(|| uniform(&mut rng)));
    }
    let patches = coords
        .iter()
        .map(|&(x, y)| channels.iter().map(|c| c.crop(x, y, patch_size, patch_size)).collect())
        .collect();
    let masks = mask.map(|m| coords.iter().map(|&(x, y)| m.crop(x, y, patch_size, patch_size)).collect());
    Ok(SampledPatches {
        coords,
        patches,
        masks,
        fell_back_to_uniform: fell_back,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_placement_on_minimal_raster() {
        let p = Plane::filled(256, 256, 1.0);
        let s = sample_patches(&[&p], None, 5, SamplingPolicy::Uniform, 256, 3).unwrap();
        assert_eq!(s.coords, vec![(0, 0); 5]);
    }

    #[test]
    fn empty_mask_falls_back() {
        let p = Plane::filled(300, 300, 1.0);
        let m = Mask::empty(300, 300);
        let s = sample_patches(&[&p], Some(&m), 4, SamplingPolicy::MaskBalanced, 256, 3).unwrap();
        assert!(s.fell_back_to_uniform);
        assert_eq!(s.coords.len(), 4);
    }

    #[test]
    fn integral_counts_match_direct_counts() {
        let m = Mask::disk(40, 30, 17.0, 12.0, 9.0);
        let integral = Integral::new(&m);
        for (x, y, s) in [(0, 0, 10), (5, 3, 20), (30, 20, 10), (10, 0, 30)] {
            assert_eq!(integral.count(x, y, s), m.crop(x, y, s, s).count() as u64);
        }
    }
}
