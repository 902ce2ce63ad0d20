//! Pieces shared by the two training loops.

use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::raster::Plane;

/// A failed training run, with the last consistent state when one exists.
#[derive(Debug)]
pub struct TrainFailure<C> {
    pub error: Error,
    /// Checkpoint as of the last fully finite epoch.
    pub checkpoint: Option<Box<C>>,
}

impl<C> fmt::Display for TrainFailure<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl<C: fmt::Debug> std::error::Error for TrainFailure<C> {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl<C> From<Error> for TrainFailure<C> {
    fn from(error: Error) -> Self {
        Self { error, checkpoint: None }
    }
}

/// Independent stream per epoch, so a resumed run replays the same batches.
pub(crate) fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub(crate) fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// Stacks equally sized planes into an `[n, 1, h, w]` tensor.
pub(crate) fn stack(planes: &[&Plane]) -> Tensor<f32> {
    let (w, h) = planes[0].dims();
    let mut data = Vec::with_capacity(planes.len() * w * h);
    for p in planes {
        debug_assert_eq!(p.dims(), (w, h));
        data.extend_from_slice(p.data());
    }
    Tensor::from_vec([planes.len(), 1, h, w], data)
}

/// Single-channel tensor sample `n` as a plane.
pub(crate) fn unstack(t: &Tensor<f32>, n: usize) -> Plane {
    Plane::new(t.width(), t.height(), t.sample(n).to_vec())
}

/// Top-left corner of the centered `size` window.
pub(crate) fn center_origin(plane: &Plane, size: usize) -> (usize, usize) {
    ((plane.width() - size) / 2, (plane.height() - size) / 2)
}

pub(crate) fn check_patch_fits(plane: &Plane, size: usize, what: &str) -> Result<()> {
    if plane.width() < size || plane.height() < size {
        return Err(Error::invalid(
            what,
            format!("sample {}x{} is smaller than patch_size {size}", plane.width(), plane.height()),
        ));
    }
    Ok(())
}

/// Appends one JSON object per line.
pub(crate) fn append_log_line<T: serde::Serialize>(path: &Path, record: &T, truncate: bool) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!truncate)
        .truncate(truncate)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(record).expect("record serializes");
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

pub(crate) fn ensure_finite(values: &[(&str, f64)], epoch: usize) -> Result<()> {
    match values.iter().find(|(_, v)| !v.is_finite()) {
        Some((name, _)) => Err(Error::Divergence { component: name.to_string(), epoch }),
        None => Ok(()),
    }
}
