//! Pixel-level confusion counts and F1 / precision / sensitivity reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Mask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_, tn: self.tn + o.tn }
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

/// Region of interest inside a raster.
#[derive(Clone, Debug, PartialEq)]
pub enum Roi {
    Rect { x: usize, y: usize, width: usize, height: usize },
    Mask(Mask),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FovRegion {
    pub id: String,
    pub roi: Roi,
}

fn check_dims(pred: &Mask, reference: &Mask) -> Result<()> {
    if pred.dims() != reference.dims() {
        return Err(Error::shape(
            "confusion",
            format!("{:?} (reference)", reference.dims()),
            format!("{:?} (prediction)", pred.dims()),
        ));
    }
    Ok(())
}

/// Confusion counts over the ROI pixels (all pixels without an ROI).
pub fn confusion(pred: &Mask, reference: &Mask, roi: Option<&Roi>) -> Result<ConfusionCounts> {
    check_dims(pred, reference)?;
    let (w, h) = pred.dims();
    let mut c = ConfusionCounts::default();
    let mut tally = |i: usize| match (pred.data()[i], reference.data()[i]) {
        (true, true) => c.tp += 1,
        (true, false) => c.fp += 1,
        (false, true) => c.fn_ += 1,
        (false, false) => c.tn += 1,
    };
    match roi {
        None => (0..w * h).for_each(&mut tally),
        Some(Roi::Rect { x, y, width, height }) => {
            if x + width > w || y + height > h {
                return Err(Error::invalid("roi", format!("rectangle ({x}, {y}, {width}, {height}) exceeds {w}x{h}")));
            }
            for yy in *y..y + height {
                (yy * w + x..yy * w + x + width).for_each(&mut tally);
            }
        }
        Some(Roi::Mask(m)) => {
            if m.dims() != (w, h) {
                return Err(Error::shape("roi mask", format!("{:?}", (w, h)), format!("{:?}", m.dims())));
            }
            (0..w * h).filter(|&i| m.data()[i]).for_each(&mut tally);
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UndefinedPolicy {
    /// A metric with a zero denominator is reported as null and flagged.
    #[default]
    NullAndFlag,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Single,
    /// Counts summed over regions before computing metrics.
    Micro,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub roi_id: String,
    pub counts: ConfusionCounts,
    pub f1: Option<f64>,
    pub precision: Option<f64>,
    pub sensitivity: Option<f64>,
    /// Names of metrics whose denominator was zero.
    pub undefined: Vec<String>,
    pub undefined_policy: UndefinedPolicy,
    pub aggregation: Aggregation,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(counts: ConfusionCounts, roi_id: impl Into<String>) -> MetricsReport {
    let c = counts;
    let precision = ratio(c.tp, c.tp + c.fp);
    let sensitivity = ratio(c.tp, c.tp + c.fn_);
    let f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
    let undefined = [("f1", f1), ("precision", precision), ("sensitivity", sensitivity)]
        .into_iter()
        .filter(|(_, v)| v.is_none())
        .map(|(n, _)| n.to_string())
        .collect();
    MetricsReport {
        roi_id: roi_id.into(),
        counts,
        f1,
        precision,
        sensitivity,
        undefined,
        undefined_policy: UndefinedPolicy::NullAndFlag,
        aggregation: Aggregation::Single,
    }
}

/// Per-region reports plus the micro-averaged pooled report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub per_region: Vec<MetricsReport>,
    pub pooled: MetricsReport,
    /// Which mask set served as reference, for asymmetric comparisons.
    pub reference: String,
}

/// Compares predictions with references keyed by identifier.
///
/// Both maps must have the same keys. An optional ROI per identifier
/// restricts the counted pixels.
pub fn evaluate_against_annotations(
    preds: &BTreeMap<String, Mask>,
    refs: &BTreeMap<String, Mask>,
    rois: Option<&BTreeMap<String, Roi>>,
) -> Result<Evaluation> {
    let missing_pred: Vec<String> = refs.keys().filter(|k| !preds.contains_key(*k)).cloned().collect();
    let missing_ref: Vec<String> = preds.keys().filter(|k| !refs.contains_key(*k)).cloned().collect();
    if !missing_pred.is_empty() || !missing_ref.is_empty() {
        return Err(Error::IdMismatch { missing_pred, missing_ref });
    }
    if preds.is_empty() {
        return Err(Error::invalid("evaluation", "no regions to evaluate"));
    }
    let mut per_region = Vec::with_capacity(preds.len());
    for (id, pred) in preds {
        let roi = rois.and_then(|r| r.get(id));
        let counts = confusion(pred, &refs[id], roi).map_err(|e| match e {
            Error::Shape { expected, actual, .. } => Error::Shape { context: format!("region {id}"), expected, actual },
            other => other,
        })?;
        per_region.push(metrics(counts, id.clone()));
    }
    let mut pooled = metrics(per_region.iter().map(|r| r.counts).sum(), "pooled");
    pooled.aggregation = Aggregation::Micro;
    Ok(Evaluation { per_region, pooled, reference: "annotations".into() })
}

/// Segmentation on synthetic CK scored against segmentation on stained CK,
/// which serves as the reference.
pub fn compare_synthetic_vs_stained(
    seg_on_synthetic: &BTreeMap<String, Mask>,
    seg_on_stained: &BTreeMap<String, Mask>,
) -> Result<Evaluation> {
    let mut e = evaluate_against_annotations(seg_on_synthetic, seg_on_stained, None)?;
    e.reference = "stained".into();
    Ok(e)
}

/// One row of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub report: MetricsReport,
}

pub const ROW_STAINED_VS_ANNOTATIONS: &str = "stained CK vs. annotations";
pub const ROW_SYNTHETIC_VS_ANNOTATIONS: &str = "dapi2ck vs. annotations";
pub const ROW_SYNTHETIC_VS_STAINED: &str = "dapi2ck vs. stained CK";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "undef".to_string(), |v| format!("{v:.2}"))
}

/// Plain-text table with columns F1-score, Precision, Sensitivity.
pub fn render_table(rows: &[TableRow]) -> String {
    let label_w = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(10);
    let mut out = String::new();
    let _ = writeln!(out, "{:<label_w$} | {:>8} | {:>9} | {:>11}", "", "F1-score", "Precision", "Sensitivity");
    let _ = writeln!(out, "{}", "-".repeat(label_w + 37));
    for r in rows {
        let _ = writeln!(
            out,
            "{:<label_w$} | {:>8} | {:>9} | {:>11}",
            r.label,
            cell(r.report.f1),
            cell(r.report.precision),
            cell(r.report.sensitivity)
        );
    }
    out
}
