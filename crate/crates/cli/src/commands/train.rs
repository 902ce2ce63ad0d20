use std::path::{Path, PathBuf};

use dapi2ck::segmentation::{self, ChannelSelector, SegCheckpoint};
use dapi2ck::translation::{self, Checkpoint};
use dapi2ck::TrainFailure;
use serde_json::{json, Value};

use super::{load_manifest, prepare_dir, require_file, CHECKPOINT_FILE, PARTIAL_CHECKPOINT_FILE, TRAIN_LOG_FILE};
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::{Outcome, SegTrainArgs, TrainArgs};

fn apply_common(cfg: &mut ExperimentConfig, args: &TrainArgs) {
    if let Some(m) = &args.manifest {
        cfg.dataset.manifest = Some(m.clone());
    }
}

/// Saves the preserved checkpoint of a failed run and names it in the error.
fn preserve<C>(
    failure: TrainFailure<C>,
    dir: &Path,
    save: impl Fn(&C, &Path) -> dapi2ck::Result<()>,
) -> CliError {
    let mut err = CliError::from(failure.error);
    if let Some(c) = failure.checkpoint {
        let path = dir.join(PARTIAL_CHECKPOINT_FILE);
        match save(&c, &path) {
            Ok(()) => err = err.with_detail("checkpoint", json!(path.display().to_string())),
            Err(e) => log::error!("could not preserve the partial checkpoint: {e}"),
        }
    }
    err
}

fn summary(command: &str, path: &Path, identifier: String, epochs: usize, best: Option<usize>, log: &Path) -> Value {
    json!({
        "command": command,
        "checkpoint": path.display().to_string(),
        "identifier": identifier,
        "epochs_completed": epochs,
        "best_epoch": best,
        "log": log.display().to_string(),
    })
}

pub fn dapi2ck(mut cfg: ExperimentConfig, args: TrainArgs) -> Result<Outcome, CliError> {
    apply_common(&mut cfg, &args);
    if let Some(e) = args.epochs {
        cfg.translation.epochs = e;
    }
    let manifest = load_manifest(&cfg.manifest_path())?;
    let resume = match &args.resume {
        Some(p) => {
            require_file(p, "resume")?;
            Some(Checkpoint::load(p)?)
        }
        None => None,
    };
    let dir = prepare_dir(&cfg.dapi2ck_dir())?;
    let log = cfg.translation.log_path.get_or_insert_with(|| dir.join(TRAIN_LOG_FILE)).clone();
    cfg.write_snapshot(&dir)?;
    let ckpt = translation::train_dapi2ck(&manifest, &cfg.translation, &cfg.generator, &cfg.discriminator, resume)
        .map_err(|f| preserve(f, &dir, |c: &Checkpoint, p| c.save(p)))?;
    let path = dir.join(CHECKPOINT_FILE);
    ckpt.save(&path)?;
    let epochs = ckpt.state.as_ref().map_or(0, |s| s.epochs_completed);
    Ok(Outcome {
        summary: summary("train dapi2ck", &path, ckpt.identifier(), epochs, ckpt.best_epoch, &log),
        text: None,
    })
}

pub fn segmentation(mut cfg: ExperimentConfig, args: SegTrainArgs) -> Result<Outcome, CliError> {
    apply_common(&mut cfg, &args.common);
    if let Some(e) = args.common.epochs {
        cfg.segmentation.epochs = e;
    }
    if let Some(c) = args.channel {
        cfg.segmentation_input.channel = c.into();
    }
    if let Some(p) = &args.dapi2ck_checkpoint {
        cfg.segmentation_input.dapi2ck_checkpoint = Some(p.clone());
    }
    let dapi2ck = match (cfg.segmentation_input.channel, &cfg.segmentation_input.dapi2ck_checkpoint) {
        (ChannelSelector::SyntheticFromCheckpoint, None) => {
            return Err(CliError::validation(
                "segmentation_input.dapi2ck_checkpoint",
                "required when channel is synthetic_from_checkpoint",
            ));
        }
        (ChannelSelector::SyntheticFromCheckpoint, Some(p)) => {
            require_file(p, "segmentation_input.dapi2ck_checkpoint")?;
            Some(Checkpoint::load(p)?)
        }
        _ => None,
    };
    let manifest = load_manifest(&cfg.manifest_path())?;
    let resume = match &args.common.resume {
        Some(p) => {
            require_file(p, "resume")?;
            Some(SegCheckpoint::load(p)?)
        }
        None => None,
    };
    let dir: PathBuf = prepare_dir(&cfg.segmentation_dir())?;
    let log = cfg.segmentation.log_path.get_or_insert_with(|| dir.join(TRAIN_LOG_FILE)).clone();
    cfg.write_snapshot(&dir)?;
    let ckpt = segmentation::train_segmentation(
        &manifest,
        &cfg.segmentation,
        cfg.segmentation_input.channel,
        dapi2ck.as_ref(),
        resume,
    )
    .map_err(|f| preserve(f, &dir, |c: &SegCheckpoint, p| c.save(p)))?;
    let path = dir.join(CHECKPOINT_FILE);
    ckpt.save(&path)?;
    let epochs = ckpt.state.as_ref().map_or(0, |s| s.epochs_completed);
    Ok(Outcome {
        summary: summary("train segmentation", &path, ckpt.identifier(), epochs, ckpt.best_epoch, &log),
        text: None,
    })
}
