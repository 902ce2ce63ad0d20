//! Overlays of inference outputs and synthetic-vs-stained difference maps.

use std::path::Path;

use dapi2ck::pipeline::normalize::{percentile_bounds, DEFAULT_HIGH_PCT, DEFAULT_LOW_PCT};
use dapi2ck::raster::{read_intensity, read_mask, write_rgb_png};
use dapi2ck::{Mask, Plane};
use serde_json::json;

use super::{prepare_dir, slide_dirs, CK_FILE, MASK_FILE, SYNTHETIC_CK_FILE};
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::{Outcome, ReportArgs};

pub const OVERLAY_FILE: &str = "overlay.png";
pub const DIFF_FILE: &str = "ck_difference.png";
pub const MASK_DIFF_FILE: &str = "mask_difference.png";
/// Contour color; grayscale pixels never take this value.
pub const CONTOUR_RGB: [u8; 3] = [255, 0, 0];

/// The CK raster of a slide directory (synthetic for two-step runs).
fn read_ck(slide: &Path) -> Result<Plane, CliError> {
    let path = [SYNTHETIC_CK_FILE, CK_FILE]
        .iter()
        .map(|f| slide.join(f))
        .find(|p| p.is_file())
        .ok_or_else(|| {
            CliError::validation("run", format!("{} holds no {SYNTHETIC_CK_FILE} or {CK_FILE}", slide.display()))
                .with_path(slide)
        })?;
    Ok(read_intensity(&path)?)
}

/// Percentile-stretched values in `[0, 1]`.
fn stretch(p: &Plane) -> Vec<f32> {
    let (lo, hi) = percentile_bounds(p, DEFAULT_LOW_PCT, DEFAULT_HIGH_PCT);
    let span = (hi - lo).max(f64::EPSILON);
    p.data().iter().map(|&v| ((v as f64 - lo) / span).clamp(0.0, 1.0) as f32).collect()
}

/// CK in grayscale with the mask boundary drawn in [`CONTOUR_RGB`].
pub fn render_overlay(ck: &Plane, mask: &Mask) -> Vec<u8> {
    let boundary = mask.boundary();
    stretch(ck)
        .into_iter()
        .zip(boundary.data())
        .flat_map(|(v, &edge)| match edge {
            true => CONTOUR_RGB,
            false => [(v * 255.0).round() as u8; 3],
        })
        .collect()
}

/// Diverging map of `a - b`: red where `a` is brighter, blue where `b` is.
pub fn render_difference(a: &Plane, b: &Plane) -> Vec<u8> {
    stretch(a)
        .into_iter()
        .zip(stretch(b))
        .flat_map(|(x, y)| {
            let d = x - y;
            let fade = (255.0 * (1.0 - d.abs())).round() as u8;
            if d >= 0.0 {
                [255, fade, fade]
            } else {
                [fade, fade, 255]
            }
        })
        .collect()
}

/// White where both masks are set, red for `a` only, blue for `b` only.
pub fn render_mask_difference(a: &Mask, b: &Mask) -> Vec<u8> {
    a.data()
        .iter()
        .zip(b.data())
        .flat_map(|(&x, &y)| match (x, y) {
            (true, true) => [255, 255, 255],
            (true, false) => [255, 0, 0],
            (false, true) => [0, 0, 255],
            (false, false) => [0, 0, 0],
        })
        .collect()
}

pub fn run(cfg: ExperimentConfig, args: ReportArgs) -> Result<Outcome, CliError> {
    let slides = slide_dirs(&args.run, "run")?;
    let compare = args.compare.as_deref().map(|c| slide_dirs(c, "compare")).transpose()?;
    let dir = prepare_dir(&cfg.out_dir.join(&args.name))?;
    cfg.write_snapshot(&dir)?;
    let mut rendered = Vec::new();
    let mut compared = Vec::new();
    for (id, slide) in &slides {
        let ck = read_ck(slide)?;
        let mask = read_mask(&slide.join(MASK_FILE))?;
        if mask.dims() != ck.dims() {
            return Err(dapi2ck::Error::shape(format!("slide {id}"), format!("{:?}", ck.dims()), format!("{:?}", mask.dims())).into());
        }
        let (w, h) = ck.dims();
        let out = dir.join(id);
        write_rgb_png(&out.join(OVERLAY_FILE), w, h, render_overlay(&ck, &mask))?;
        rendered.push(id.clone());
        if let Some(other) = compare.as_ref().and_then(|c| c.get(id)) {
            let ck_other = read_ck(other)?;
            let mask_other = read_mask(&other.join(MASK_FILE))?;
            if ck_other.dims() != ck.dims() || mask_other.dims() != mask.dims() {
                return Err(dapi2ck::Error::shape(
                    format!("compared slide {id}"),
                    format!("{:?}", ck.dims()),
                    format!("{:?}", ck_other.dims()),
                )
                .into());
            }
            write_rgb_png(&out.join(DIFF_FILE), w, h, render_difference(&ck, &ck_other))?;
            write_rgb_png(&out.join(MASK_DIFF_FILE), w, h, render_mask_difference(&mask, &mask_other))?;
            compared.push(id.clone());
        }
    }
    Ok(Outcome {
        summary: json!({
            "command": "report",
            "dir": dir.display().to_string(),
            "overlays": rendered,
            "compared": compared,
        }),
        text: None,
    })
}
