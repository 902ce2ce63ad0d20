//! On-disk phantom datasets with a JSON manifest.
//!
//! Each sample lives in `samples/<id>/`; its `meta.json` is written last and
//! marks the sample complete, so an interrupted build resumes by skipping
//! finished samples. The manifest is rewritten with `complete = true` once
//! every sample exists.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_phantom, ArtifactAnnotation, ArtifactKind, Nucleus, PhantomSample, PhantomSpec};
use crate::error::{Error, Result};
use crate::raster::{read_intensity, read_json, read_mask, write_json, write_mask_png, write_u16_png};

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;
const META_FILE: &str = "meta.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1 }
    }
}

// absorbs representation error in products such as 10 * 0.8
const RATIO_EPS: f64 = 1e-9;

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::invalid("split ratios", format!("ratios must be finite and >= 0, got {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::invalid("split ratios", format!("ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }

    /// Sample counts per split: train takes `floor(n * train)`, the
    /// remainder goes to val (rounded up by its share) and then test.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let train = ((n as f64 * self.train + RATIO_EPS).floor() as usize).min(n);
        let rest = n - train;
        let tail = self.val + self.test;
        let val = if tail <= 0.0 {
            rest
        } else {
            ((rest as f64 * self.val / tail - RATIO_EPS).ceil().max(0.0) as usize).min(rest)
        };
        (train, val, rest - val)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactFile {
    pub kind: ArtifactKind,
    pub mask: PathBuf,
}

/// Paths of one sample's rasters, relative to the dataset root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleFiles {
    pub dapi: PathBuf,
    pub ck_true: PathBuf,
    pub ck_stained: PathBuf,
    pub epithelium: PathBuf,
    pub artifacts: Vec<ArtifactFile>,
    pub meta: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub index: usize,
    pub seed: u64,
    pub split: Split,
    pub files: SampleFiles,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub master_seed: u64,
    pub template: PhantomSpec,
    pub ratios: SplitRatios,
    pub complete: bool,
    pub samples: Vec<ManifestEntry>,
    #[serde(skip)]
    root: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let mut m: Manifest = read_json(path)?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::invalid(
                "manifest",
                format!("{}: unsupported format_version {}", path.display(), m.format_version),
            ));
        }
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    /// Directory that sample paths are relative to.
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.samples.iter().filter(move |e| e.split == split)
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }
}

#[derive(Serialize, Deserialize)]
struct SampleMeta {
    id: String,
    seed: u64,
    resolution: f64,
    width: usize,
    height: usize,
    artifacts: Vec<ArtifactFile>,
    nuclei: Vec<Nucleus>,
}

fn base_files(id: &str) -> SampleFiles {
    let dir = PathBuf::from("samples").join(id);
    SampleFiles {
        dapi: dir.join("dapi.png"),
        ck_true: dir.join("ck_true.png"),
        ck_stained: dir.join("ck_stained.png"),
        epithelium: dir.join("epithelium.png"),
        artifacts: Vec::new(),
        meta: dir.join(META_FILE),
    }
}

/// Writes a sample under `root` and returns its relative file paths.
///
/// The metadata file is written last so its presence marks completion.
pub fn save_sample(root: &Path, id: &str, sample: &PhantomSample) -> Result<SampleFiles> {
    let mut files = base_files(id);
    write_u16_png(&root.join(&files.dapi), &sample.dapi)?;
    write_u16_png(&root.join(&files.ck_true), &sample.ck_true)?;
    write_u16_png(&root.join(&files.ck_stained), &sample.ck_stained)?;
    write_mask_png(&root.join(&files.epithelium), &sample.epithelium_mask)?;
    let dir = files.meta.parent().expect("sample dir").to_path_buf();
    for (i, a) in sample.artifacts.iter().enumerate() {
        let rel = dir.join(format!("artifact_{i:02}_{}.png", a.kind.name()));
        write_mask_png(&root.join(&rel), &a.region_mask)?;
        files.artifacts.push(ArtifactFile { kind: a.kind, mask: rel });
    }
    let (width, height) = sample.dims();
    let meta = SampleMeta {
        id: id.to_string(),
        seed: sample.seed,
        resolution: sample.resolution,
        width,
        height,
        artifacts: files.artifacts.clone(),
        nuclei: sample.nuclei.clone(),
    };
    write_json(&root.join(&files.meta), &meta)?;
    Ok(files)
}

/// Reloads a persisted sample.
pub fn load_sample(root: &Path, files: &SampleFiles) -> Result<PhantomSample> {
    let meta: SampleMeta = read_json(&root.join(&files.meta))?;
    let dapi = read_intensity(&root.join(&files.dapi))?;
    let ck_true = read_intensity(&root.join(&files.ck_true))?;
    let ck_stained = read_intensity(&root.join(&files.ck_stained))?;
    let epithelium_mask = read_mask(&root.join(&files.epithelium))?;
    let expected = (meta.width, meta.height);
    for (name, dims) in [
        ("dapi", dapi.dims()),
        ("ck_true", ck_true.dims()),
        ("ck_stained", ck_stained.dims()),
        ("epithelium", epithelium_mask.dims()),
    ] {
        if dims != expected {
            return Err(Error::shape(format!("sample {} {name}", meta.id), format!("{expected:?}"), format!("{dims:?}")));
        }
    }
    let artifacts = meta
        .artifacts
        .iter()
        .map(|a| {
            Ok(ArtifactAnnotation {
                kind: a.kind,
                region_mask: read_mask(&root.join(&a.mask))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PhantomSample {
        seed: meta.seed,
        resolution: meta.resolution,
        dapi,
        ck_true,
        ck_stained,
        epithelium_mask,
        artifacts,
        nuclei: meta.nuclei,
    })
}

/// Completed sample files if `meta.json` exists and matches the planned seed.
fn finished(root: &Path, id: &str, seed: u64, spec: &PhantomSpec) -> Option<SampleFiles> {
    let mut files = base_files(id);
    let meta: SampleMeta = read_json(&root.join(&files.meta)).ok()?;
    let matches = meta.seed == seed && meta.width == spec.width && meta.height == spec.height;
    let present = [&files.dapi, &files.ck_true, &files.ck_stained, &files.epithelium]
        .into_iter()
        .chain(meta.artifacts.iter().map(|a| &a.mask))
        .all(|p| root.join(p).is_file());
    if !(matches && present) {
        return None;
    }
    files.artifacts = meta.artifacts;
    Some(files)
}

/// Generates `n_samples` phantoms from `template` into `out_dir`.
///
/// Per-sample seeds are drawn in order from a generator seeded with
/// `template.seed`. Samples are generated in parallel, but the manifest only
/// depends on the inputs. Re-running on a partially built directory keeps
/// finished samples.
pub fn build_phantom_dataset(
    template: &PhantomSpec,
    n_samples: usize,
    ratios: SplitRatios,
    out_dir: &Path,
) -> Result<Manifest> {
    if n_samples == 0 {
        return Err(Error::invalid("dataset", "n_samples must be >= 1"));
    }
    template.validate()?;
    ratios.validate()?;
    let (n_train, n_val, _) = ratios.counts(n_samples);
    let mut rng = ChaCha8Rng::seed_from_u64(template.seed);
    let mut samples: Vec<ManifestEntry> = (0..n_samples)
        .map(|index| {
            let split = if index < n_train {
                Split::Train
            } else if index < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            let id = format!("sample_{index:05}");
            ManifestEntry {
                files: base_files(&id),
                id,
                index,
                seed: rng.next_u64(),
                split,
            }
        })
        .collect();
    let mut manifest = Manifest {
        format_version: MANIFEST_VERSION,
        master_seed: template.seed,
        template: template.clone(),
        ratios,
        complete: false,
        samples: Vec::new(),
        root: out_dir.to_path_buf(),
    };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    if let Ok(existing) = Manifest::load(&manifest_path) {
        let same_plan = existing.master_seed == manifest.master_seed
            && existing.template == manifest.template
            && existing.ratios == manifest.ratios
            && existing.samples.len() == n_samples;
        if existing.complete && same_plan {
            return Ok(existing);
        }
    }
    manifest.samples = samples.clone();
    write_json(&manifest_path, &manifest)?;

    let files: Vec<SampleFiles> = samples
        .par_iter()
        .map(|entry| {
            if let Some(done) = finished(out_dir, &entry.id, entry.seed, template) {
                return Ok(done);
            }
            let spec = PhantomSpec { seed: entry.seed, ..template.clone() };
            let sample = generate_phantom(&spec)?;
            save_sample(out_dir, &entry.id, &sample)
        })
        .collect::<Result<_>>()?;
    for (entry, f) in samples.iter_mut().zip(files) {
        entry.files = f;
    }
    manifest.samples = samples;
    manifest.complete = true;
    write_json(&manifest_path, &manifest)?;
    Ok(manifest)
}
