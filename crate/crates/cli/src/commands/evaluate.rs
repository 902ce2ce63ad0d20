use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dapi2ck::eval::{
    compare_synthetic_vs_stained, evaluate_against_annotations, render_table, Evaluation, Roi, TableRow,
    ROW_STAINED_VS_ANNOTATIONS, ROW_SYNTHETIC_VS_ANNOTATIONS, ROW_SYNTHETIC_VS_STAINED,
};
use dapi2ck::phantom::{ArtifactKind, Split};
use dapi2ck::raster::{read_mask, write_atomic, write_json};
use dapi2ck::Mask;
use serde::Serialize;
use serde_json::json;

use super::infer::{read_index, CheckpointIds};
use super::{load_manifest, prepare_dir, read_masks};
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::{EvalMode, EvaluateArgs, Outcome};

/// Persisted form of one evaluation, with provenance.
#[derive(Serialize)]
struct ReportFile<'a> {
    tool: String,
    split: String,
    roi_kind: Option<&'a str>,
    /// Checkpoint identifiers of each scored run, keyed by role.
    checkpoints: BTreeMap<&'a str, Option<CheckpointIds>>,
    #[serde(flatten)]
    evaluation: &'a Evaluation,
}

/// Annotation masks and per-sample artifact regions of one manifest split.
struct Annotations {
    masks: BTreeMap<String, Mask>,
    artifacts: BTreeMap<String, Vec<(ArtifactKind, Mask)>>,
}

fn annotations(path: &Path, split: Split) -> Result<Annotations, CliError> {
    let manifest = load_manifest(path)?;
    let mut masks = BTreeMap::new();
    let mut artifacts = BTreeMap::new();
    for e in manifest.split(split) {
        masks.insert(e.id.clone(), read_mask(&manifest.resolve(&e.files.epithelium))?);
        let regions = e
            .files
            .artifacts
            .iter()
            .map(|a| Ok((a.kind, read_mask(&manifest.resolve(&a.mask))?)))
            .collect::<Result<Vec<_>, CliError>>()?;
        artifacts.insert(e.id.clone(), regions);
    }
    if masks.is_empty() {
        return Err(CliError::validation("split", format!("split {split} of {} is empty", path.display())));
    }
    Ok(Annotations { masks, artifacts })
}

fn parse_kind(name: &str) -> Result<ArtifactKind, CliError> {
    ArtifactKind::ALL.into_iter().find(|k| k.name() == name).ok_or_else(|| {
        let names: Vec<_> = ArtifactKind::ALL.iter().map(|k| k.name()).collect();
        CliError::validation("roi_kind", format!("unknown kind {name:?}; expected one of {names:?}"))
    })
}

/// Union of the `kind` regions per sample, for samples that have any.
fn artifact_rois(ann: &Annotations, kind: ArtifactKind) -> BTreeMap<String, Roi> {
    ann.artifacts
        .iter()
        .filter_map(|(id, regions)| {
            regions
                .iter()
                .filter(|(k, _)| *k == kind)
                .map(|(_, m)| m.clone())
                .reduce(|a, b| a.or(&b))
                .map(|m| (id.clone(), Roi::Mask(m)))
        })
        .collect()
}

fn restrict(masks: BTreeMap<String, Mask>, rois: Option<&BTreeMap<String, Roi>>) -> BTreeMap<String, Mask> {
    match rois {
        Some(r) => masks.into_iter().filter(|(id, _)| r.contains_key(id)).collect(),
        None => masks,
    }
}

fn need<'a>(value: &'a Option<PathBuf>, flag: &str, mode: &str) -> Result<&'a PathBuf, CliError> {
    value
        .as_ref()
        .ok_or_else(|| CliError::validation(flag, format!("--{flag} is required in {mode} mode")))
}

fn label_for(run: &Path) -> &'static str {
    match read_index(run).map(|i| i.mode) {
        Some(m) if m == "ck" => ROW_STAINED_VS_ANNOTATIONS,
        _ => ROW_SYNTHETIC_VS_ANNOTATIONS,
    }
}

pub fn run(cfg: ExperimentConfig, args: EvaluateArgs) -> Result<Outcome, CliError> {
    let split: Split = args.split.map_or(cfg.evaluation.split, Into::into);
    let needs_annotations = args.manifest.is_some()
        || args.roi_kind.is_some()
        || args.mode == EvalMode::Table
        || (args.mode == EvalMode::VsAnnotations && args.reference.is_none());
    let ann = match needs_annotations {
        true => Some(annotations(&args.manifest.clone().unwrap_or_else(|| cfg.manifest_path()), split)?),
        false => None,
    };
    let rois = match &args.roi_kind {
        Some(k) => {
            let kind = parse_kind(k)?;
            let rois = artifact_rois(ann.as_ref().expect("loaded for roi_kind"), kind);
            if rois.is_empty() {
                return Err(CliError::validation("roi_kind", format!("no {k} regions in split {split}")));
            }
            Some(rois)
        }
        None => None,
    };
    let suffix = args.roi_kind.as_ref().map_or(String::new(), |k| format!(".{k}"));
    let dir = prepare_dir(&cfg.out_dir.join(&args.name))?;
    cfg.write_snapshot(&dir)?;

    let annotation_refs = |ann: &Option<Annotations>| -> Result<BTreeMap<String, Mask>, CliError> {
        match (&args.reference, ann) {
            (Some(r), _) => read_masks(r, "ref"),
            (None, Some(a)) => Ok(a.masks.clone()),
            (None, None) => Err(CliError::validation("ref", "give --ref or --manifest")),
        }
    };
    let score_vs_annotations = |run: &Path, field: &str| -> Result<Evaluation, CliError> {
        let preds = restrict(read_masks(run, field)?, rois.as_ref());
        let refs = restrict(annotation_refs(&ann)?, rois.as_ref());
        Ok(evaluate_against_annotations(&preds, &refs, rois.as_ref())?)
    };
    let score_vs_stained = |synthetic: &Path, stained: &Path| -> Result<Evaluation, CliError> {
        let preds = restrict(read_masks(synthetic, "synthetic")?, rois.as_ref());
        let refs = restrict(read_masks(stained, "stained")?, rois.as_ref());
        let mut e = match &rois {
            Some(r) => evaluate_against_annotations(&preds, &refs, Some(r))?,
            None => compare_synthetic_vs_stained(&preds, &refs)?,
        };
        e.reference = "stained".into();
        Ok(e)
    };

    let runs: BTreeMap<&str, Option<CheckpointIds>> = [
        ("pred", &args.pred),
        ("ref", &args.reference),
        ("synthetic", &args.synthetic),
        ("stained", &args.stained),
    ]
    .into_iter()
    .filter_map(|(role, dir)| dir.as_ref().map(|d| (role, read_index(d).map(|i| i.checkpoints))))
    .collect();
    let mut reports: Vec<(String, String, Evaluation)> = Vec::new();
    match args.mode {
        EvalMode::VsAnnotations => {
            let pred = need(&args.pred, "pred", "vs-annotations")?;
            reports.push(("vs_annotations".into(), label_for(pred).into(), score_vs_annotations(pred, "pred")?));
        }
        EvalMode::SyntheticVsStained => {
            let pred = need(&args.pred, "pred", "synthetic-vs-stained")?;
            let reference = need(&args.reference, "ref", "synthetic-vs-stained")?;
            reports.push(("synthetic_vs_stained".into(), ROW_SYNTHETIC_VS_STAINED.into(), score_vs_stained(pred, reference)?));
        }
        EvalMode::Table => {
            let synthetic = need(&args.synthetic, "synthetic", "table")?;
            let stained = need(&args.stained, "stained", "table")?;
            reports.push(("stained_vs_annotations".into(), ROW_STAINED_VS_ANNOTATIONS.into(), score_vs_annotations(stained, "stained")?));
            reports.push((
                "synthetic_vs_annotations".into(),
                ROW_SYNTHETIC_VS_ANNOTATIONS.into(),
                score_vs_annotations(synthetic, "synthetic")?,
            ));
            reports.push(("synthetic_vs_stained".into(), ROW_SYNTHETIC_VS_STAINED.into(), score_vs_stained(synthetic, stained)?));
        }
    }

    let rows: Vec<TableRow> =
        reports.iter().map(|(_, label, e)| TableRow { label: label.clone(), report: e.pooled.clone() }).collect();
    let table = render_table(&rows);
    let mut files = Vec::new();
    for (name, _, e) in &reports {
        let path = dir.join(format!("{name}{suffix}.json"));
        let file = ReportFile {
            tool: format!("dapi2ck {}", env!("CARGO_PKG_VERSION")),
            split: split.to_string(),
            roi_kind: args.roi_kind.as_deref(),
            checkpoints: runs.clone(),
            evaluation: e,
        };
        write_json(&path, &file)?;
        files.push(path.display().to_string());
    }
    write_json(&dir.join(format!("table{suffix}.json")), &rows)?;
    write_atomic(&dir.join(format!("table{suffix}.txt")), table.as_bytes())?;
    Ok(Outcome {
        summary: json!({
            "command": "evaluate",
            "dir": dir.display().to_string(),
            "split": split.to_string(),
            "roi_kind": args.roi_kind,
            "reports": files,
            "rows": rows,
        }),
        text: Some(table),
    })
}
