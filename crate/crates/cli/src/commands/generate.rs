use dapi2ck::phantom::{build_phantom_dataset, Split, MANIFEST_FILE};
use serde_json::json;

use super::prepare_dir;
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::Outcome;

pub fn run(mut cfg: ExperimentConfig, n_samples: Option<usize>) -> Result<Outcome, CliError> {
    if let Some(n) = n_samples {
        cfg.dataset.n_samples = n;
        cfg.validate()?;
    }
    let manifest_path = cfg.manifest_path();
    if manifest_path.file_name().is_none_or(|n| n != MANIFEST_FILE) {
        return Err(CliError::validation(
            "dataset.manifest",
            format!("generated manifests are named {MANIFEST_FILE}, got {}", manifest_path.display()),
        ));
    }
    let dir = prepare_dir(&cfg.dataset_dir())?;
    cfg.write_snapshot(&dir)?;
    let manifest = build_phantom_dataset(&cfg.phantom, cfg.dataset.n_samples, cfg.dataset.split, &dir)?;
    let count = |s| manifest.split(s).count();
    Ok(Outcome {
        summary: json!({
            "command": "generate-phantoms",
            "manifest": manifest.path().display().to_string(),
            "samples": manifest.samples.len(),
            "train": count(Split::Train),
            "val": count(Split::Val),
            "test": count(Split::Test),
        }),
        text: None,
    })
}
