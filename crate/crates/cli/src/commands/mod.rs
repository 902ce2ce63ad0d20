//! One module per subcommand, plus helpers shared by them.

pub mod evaluate;
pub mod generate;
pub mod infer;
pub mod report;
pub mod train;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dapi2ck::phantom::Manifest;
use dapi2ck::raster::read_mask;
use dapi2ck::Mask;

use crate::error::CliError;

/// Checkpoint file name inside a training output directory.
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
/// Checkpoint of the last finite epoch, written when training fails.
pub const PARTIAL_CHECKPOINT_FILE: &str = "checkpoint.partial.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
/// Run-level summary of an inference directory.
pub const INDEX_FILE: &str = "index.json";
pub const MASK_FILE: &str = "mask.png";
pub const PROBABILITY_FILE: &str = "probability.png";
pub const SYNTHETIC_CK_FILE: &str = "synthetic_ck.png";
pub const CK_FILE: &str = "ck.png";
pub const SIDECAR_FILE: &str = "sidecar.json";

/// Creates `dir` (and parents), reporting failures as validation errors.
pub(crate) fn prepare_dir(dir: &Path) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::validation("out", format!("cannot create {}: {e}", dir.display())).with_path(dir))?;
    let probe = dir.join(".write_probe");
    std::fs::write(&probe, b"")
        .map_err(|e| CliError::validation("out", format!("{} is not writable: {e}", dir.display())).with_path(dir))?;
    let _ = std::fs::remove_file(&probe);
    Ok(dir.to_path_buf())
}

pub(crate) fn require_file(path: &Path, field: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::validation(field, format!("{} does not exist", path.display())).with_path(path))
    }
}

pub(crate) fn require_dir(path: &Path, field: &str) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::validation(field, format!("{} is not a directory", path.display())).with_path(path))
    }
}

pub(crate) fn load_manifest(path: &Path) -> Result<Manifest, CliError> {
    require_file(path, "dataset.manifest")?;
    let m = Manifest::load(path)?;
    if !m.complete {
        return Err(CliError::validation("dataset.manifest", format!("{} is incomplete", path.display())).with_path(path));
    }
    Ok(m)
}

/// Slide directories (`<id>/` holding a mask) of an inference or
/// annotation directory, sorted by id.
pub(crate) fn slide_dirs(dir: &Path, field: &str) -> Result<BTreeMap<String, PathBuf>, CliError> {
    require_dir(dir, field)?;
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::from(dapi2ck::Error::io(dir, e)))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::from(dapi2ck::Error::io(dir, e)))?;
        let path = entry.path();
        if path.join(MASK_FILE).is_file() {
            out.insert(entry.file_name().to_string_lossy().into_owned(), path);
        }
    }
    if out.is_empty() {
        return Err(CliError::validation(field, format!("{} contains no <id>/{MASK_FILE}", dir.display())).with_path(dir));
    }
    Ok(out)
}

pub(crate) fn read_masks(dir: &Path, field: &str) -> Result<BTreeMap<String, Mask>, CliError> {
    slide_dirs(dir, field)?
        .into_iter()
        .map(|(id, p)| Ok((id, read_mask(&p.join(MASK_FILE))?)))
        .collect()
}
