use std::path::{Path, PathBuf};

use dapi2ck::phantom::{load_sample, ArtifactAnnotation, ManifestEntry, Split};
use dapi2ck::pipeline::{region_stats, run_two_step, segment_slide, Geometry, RegionStats};
use dapi2ck::raster::{write_json, write_mask_png, write_probability_png, write_u16_png};
use dapi2ck::translation::Checkpoint;
use dapi2ck::{Plane, SegCheckpoint, SlideRaster};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    load_manifest, prepare_dir, require_file, CHECKPOINT_FILE, CK_FILE, INDEX_FILE, MASK_FILE, PROBABILITY_FILE,
    SIDECAR_FILE, SYNTHETIC_CK_FILE,
};
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::{InferArgs, InferMode, Outcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointIds {
    pub dapi2ck: Option<String>,
    pub segmentation: String,
}

/// Statistics of one annotated artifact region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRegion {
    pub kind: String,
    pub stats: RegionStats,
}

/// Per-slide JSON written next to the rasters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub id: String,
    pub mode: String,
    pub source: String,
    pub resolution_um: f64,
    pub geometry: Geometry,
    pub checkpoints: CheckpointIds,
    /// Artifact regions of manifest inputs; empty for files.
    pub artifact_regions: Vec<ArtifactRegion>,
}

/// Run-level index of an inference directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunIndex {
    pub mode: String,
    pub slides: Vec<String>,
    pub checkpoints: CheckpointIds,
}

fn mode_name(mode: InferMode) -> &'static str {
    match mode {
        InferMode::TwoStep => "two_step",
        InferMode::Ck => "ck",
    }
}

pub fn read_index(dir: &Path) -> Option<RunIndex> {
    dapi2ck::raster::read_json(&dir.join(INDEX_FILE)).ok()
}

struct SlideInput {
    id: String,
    source: String,
    resolution_um: f64,
    plane: Plane,
    artifacts: Vec<ArtifactAnnotation>,
}

enum Source {
    Manifest { root: PathBuf, entries: Vec<ManifestEntry> },
    File { path: PathBuf, id: Option<String>, resolution: f64 },
    Slide { path: PathBuf, names: Vec<String>, channel: String, id: Option<String>, resolution: f64 },
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "slide".into())
}

impl Source {
    fn new(cfg: &ExperimentConfig, args: &InferArgs) -> Result<Source, CliError> {
        let resolution = args.resolution.unwrap_or(cfg.phantom.resolution);
        if !(resolution > 0.0) {
            return Err(CliError::validation("resolution", format!("must be > 0, got {resolution}")));
        }
        let (file, field, channel) = match args.mode {
            InferMode::TwoStep => (&args.dapi, "dapi", "DAPI"),
            InferMode::Ck => (&args.ck, "ck", "CK"),
        };
        let given = [file.is_some(), args.slide.is_some(), args.manifest.is_some()];
        if given.iter().filter(|&&g| g).count() != 1 {
            return Err(CliError::validation("input", format!("give exactly one of --{field}, --slide or --manifest")));
        }
        if let Some(p) = file {
            require_file(p, field)?;
            return Ok(Source::File { path: p.clone(), id: args.id.clone(), resolution });
        }
        if let Some(p) = &args.slide {
            require_file(p, "slide")?;
            if !args.channel_names.iter().any(|n| n.eq_ignore_ascii_case(channel)) {
                return Err(CliError::validation(
                    "channel_names",
                    format!("no {channel} channel in {:?}", args.channel_names),
                ));
            }
            return Ok(Source::Slide {
                path: p.clone(),
                names: args.channel_names.clone(),
                channel: channel.into(),
                id: args.id.clone(),
                resolution,
            });
        }
        let path = args.manifest.clone().expect("one input given");
        let split: Split = args.split.map_or(cfg.evaluation.split, Into::into);
        let manifest = load_manifest(&path)?;
        let entries: Vec<ManifestEntry> = manifest.split(split).cloned().collect();
        if entries.is_empty() {
            return Err(CliError::validation("split", format!("split {split} of {} is empty", path.display())));
        }
        Ok(Source::Manifest { root: manifest.root().to_path_buf(), entries })
    }

    fn len(&self) -> usize {
        match self {
            Source::Manifest { entries, .. } => entries.len(),
            _ => 1,
        }
    }

    /// Input `i`: DAPI for two-step runs, CK for CK runs.
    fn load(&self, i: usize, mode: InferMode) -> Result<SlideInput, CliError> {
        Ok(match self {
            Source::File { path, id, resolution } => SlideInput {
                id: id.clone().unwrap_or_else(|| stem(path)),
                source: path.display().to_string(),
                resolution_um: *resolution,
                plane: dapi2ck::raster::read_intensity(path)?,
                artifacts: Vec::new(),
            },
            Source::Slide { path, names, channel, id, resolution } => {
                let slide = SlideRaster::load(std::slice::from_ref(path), names, *resolution)?;
                SlideInput {
                    id: id.clone().unwrap_or_else(|| stem(path)),
                    source: path.display().to_string(),
                    resolution_um: slide.resolution_um(),
                    plane: slide.channel(channel).cloned().expect("channel name checked"),
                    artifacts: Vec::new(),
                }
            }
            Source::Manifest { root, entries } => {
                let e = &entries[i];
                let s = load_sample(root, &e.files)?;
                SlideInput {
                    id: e.id.clone(),
                    source: root.join(&e.files.meta).display().to_string(),
                    resolution_um: s.resolution,
                    plane: if mode == InferMode::TwoStep { s.dapi } else { s.ck_stained },
                    artifacts: s.artifacts,
                }
            }
        })
    }
}

fn checkpoint_path(given: &Option<PathBuf>, default: PathBuf, field: &str) -> Result<PathBuf, CliError> {
    let p = given.clone().unwrap_or(default);
    require_file(&p, field)?;
    Ok(p)
}

pub fn run(cfg: ExperimentConfig, args: InferArgs) -> Result<Outcome, CliError> {
    let source = Source::new(&cfg, &args)?;
    let seg_path = checkpoint_path(&args.seg_checkpoint, cfg.segmentation_dir().join(CHECKPOINT_FILE), "seg_checkpoint")?;
    let g_path = match args.mode {
        InferMode::TwoStep => Some(checkpoint_path(
            &args.dapi2ck_checkpoint,
            cfg.dapi2ck_dir().join(CHECKPOINT_FILE),
            "dapi2ck_checkpoint",
        )?),
        InferMode::Ck => None,
    };
    let name = args.name.clone().unwrap_or_else(|| match args.mode {
        InferMode::TwoStep => "infer".into(),
        InferMode::Ck => "infer_ck".into(),
    });
    let dir = prepare_dir(&cfg.out_dir.join(name))?;
    cfg.write_snapshot(&dir)?;

    let seg = SegCheckpoint::load(&seg_path)?;
    let generator = g_path.as_deref().map(Checkpoint::load).transpose()?;
    let checkpoints = CheckpointIds {
        dapi2ck: generator.as_ref().map(Checkpoint::identifier),
        segmentation: seg.identifier(),
    };
    let options = cfg.pipeline.options();
    let mut slides = Vec::new();
    for i in 0..source.len() {
        let input = source.load(i, args.mode)?;
        let slide_dir = dir.join(&input.id);
        let (geometry, probability, mask, regions) = match &generator {
            Some(g) => {
                let out = run_two_step(&input.plane, g, &seg, &options)?;
                write_u16_png(&slide_dir.join(SYNTHETIC_CK_FILE), &out.synthetic_ck)?;
                let regions = input
                    .artifacts
                    .iter()
                    .enumerate()
                    .map(|(i, a)| {
                        let id = format!("artifact_{i:02}_{}", a.kind.name());
                        Ok(ArtifactRegion {
                            kind: a.kind.name().into(),
                            stats: region_stats(&id, &a.region_mask, &out.synthetic_ck, &out.probability, &out.mask)?,
                        })
                    })
                    .collect::<Result<Vec<_>, CliError>>()?;
                (out.geometry, out.probability, out.mask, regions)
            }
            None => {
                let out = segment_slide(&input.plane, &seg, &options)?;
                write_u16_png(&slide_dir.join(CK_FILE), &input.plane)?;
                (out.geometry, out.probability, out.mask, Vec::new())
            }
        };
        write_probability_png(&slide_dir.join(PROBABILITY_FILE), &probability)?;
        write_mask_png(&slide_dir.join(MASK_FILE), &mask)?;
        let sidecar = Sidecar {
            id: input.id.clone(),
            mode: mode_name(args.mode).into(),
            source: input.source,
            resolution_um: input.resolution_um,
            geometry,
            checkpoints: checkpoints.clone(),
            artifact_regions: regions,
        };
        write_json(&slide_dir.join(SIDECAR_FILE), &sidecar)?;
        slides.push(input.id);
    }
    let index = RunIndex { mode: mode_name(args.mode).into(), slides: slides.clone(), checkpoints };
    write_json(&dir.join(INDEX_FILE), &index)?;
    Ok(Outcome {
        summary: json!({
            "command": "infer",
            "mode": index.mode,
            "dir": dir.display().to_string(),
            "slides": slides,
            "checkpoints": index.checkpoints,
        }),
        text: None,
    })
}
