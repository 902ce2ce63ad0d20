//! Staining and DAPI deviations applied on top of a clean phantom.
//!
//! Three kinds perturb only the stained CK channel (or CK plus DAPI for
//! necrosis); `DapiArtifact` corrupts DAPI alone. Every injected region is
//! recorded as an annotation, and `ck_stained` differs from `ck_true` only
//! inside annotated regions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PhantomSample, DAPI_BACKGROUND, FULL_SCALE};
use crate::error::{Error, Result};
use crate::raster::Mask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    /// CK signal in non-epithelial tissue.
    UnspecificCk,
    /// Missing or weak CK in epithelium.
    CkExpressionLoss,
    /// CK-positive necrosis with depleted nuclei.
    NecroticCk,
    /// Saturated or dropped-out DAPI.
    DapiArtifact,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 4] = [
        ArtifactKind::UnspecificCk,
        ArtifactKind::CkExpressionLoss,
        ArtifactKind::NecroticCk,
        ArtifactKind::DapiArtifact,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArtifactKind::UnspecificCk => "unspecific_ck",
            ArtifactKind::CkExpressionLoss => "ck_expression_loss",
            ArtifactKind::NecroticCk => "necrotic_ck",
            ArtifactKind::DapiArtifact => "dapi_artifact",
        }
    }

    fn touches_ck(self) -> bool {
        !matches!(self, ArtifactKind::DapiArtifact)
    }

    fn touches_dapi(self) -> bool {
        matches!(self, ArtifactKind::NecroticCk | ArtifactKind::DapiArtifact)
    }

    /// Two different kinds rewriting the same channel cannot share pixels.
    pub fn contradicts(self, other: ArtifactKind) -> bool {
        self != other
            && ((self.touches_ck() && other.touches_ck()) || (self.touches_dapi() && other.touches_dapi()))
    }
}

/// Per-kind injection parameters.
///
/// `strength` is kind specific: added CK intensity for `unspecific_ck` and
/// `necrotic_ck`, the retained CK fraction for `ck_expression_loss`, and the
/// DAPI level as a fraction of full scale for `dapi_artifact` (1 saturates,
/// 0 drops out to background).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KindConfig {
    pub probability: f64,
    pub max_count: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub strength: f64,
}

impl KindConfig {
    fn off(strength: f64) -> Self {
        Self {
            probability: 0.0,
            max_count: 1,
            radius_min: 20.0,
            radius_max: 40.0,
            strength,
        }
    }
}

impl Default for KindConfig {
    fn default() -> Self {
        Self::off(0.0)
    }
}

/// Fraction of original DAPI signal kept inside necrotic regions.
const NECROTIC_DAPI_RETENTION: f32 = 0.25;
/// Minimum share of a disk that must fall in the kind's compartment.
const MIN_COMPARTMENT_SHARE: f64 = 0.5;
const PLACEMENT_ATTEMPTS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArtifactConfig {
    pub unspecific_ck: KindConfig,
    pub ck_expression_loss: KindConfig,
    pub necrotic_ck: KindConfig,
    pub dapi_artifact: KindConfig,
}

impl Default for ArtifactConfig {
    fn default() -> Self {
        Self {
            unspecific_ck: KindConfig::off(18000.0),
            ck_expression_loss: KindConfig::off(0.1),
            necrotic_ck: KindConfig::off(15000.0),
            dapi_artifact: KindConfig::off(1.0),
        }
    }
}

impl ArtifactConfig {
    pub fn kind(&self, kind: ArtifactKind) -> &KindConfig {
        match kind {
            ArtifactKind::UnspecificCk => &self.unspecific_ck,
            ArtifactKind::CkExpressionLoss => &self.ck_expression_loss,
            ArtifactKind::NecroticCk => &self.necrotic_ck,
            ArtifactKind::DapiArtifact => &self.dapi_artifact,
        }
    }

    pub fn is_disabled(&self) -> bool {
        ArtifactKind::ALL
            .iter()
            .all(|&k| self.kind(k).probability == 0.0 || self.kind(k).max_count == 0)
    }

    pub fn validate(&self, min_side: usize) -> Result<()> {
        for kind in ArtifactKind::ALL {
            let c = self.kind(kind);
            let bad = |reason: String| Err(Error::invalid(format!("artifact config {}", kind.name()), reason));
            if !(0.0..=1.0).contains(&c.probability) {
                return bad(format!("probability must lie in [0, 1], got {}", c.probability));
            }
            if !(c.radius_min > 0.0 && c.radius_min <= c.radius_max) {
                return bad(format!("radius range must satisfy 0 < min <= max, got ({}, {})", c.radius_min, c.radius_max));
            }
            if 2.0 * c.radius_max > min_side as f64 {
                return bad(format!("radius_max {} does not fit a {min_side} px raster", c.radius_max));
            }
            let strength_ok = match kind {
                ArtifactKind::UnspecificCk | ArtifactKind::NecroticCk => c.strength > 0.0,
                ArtifactKind::CkExpressionLoss => (0.0..1.0).contains(&c.strength),
                ArtifactKind::DapiArtifact => (0.0..=1.0).contains(&c.strength),
            };
            if !strength_ok {
                return bad(format!("strength {} out of range", c.strength));
            }
        }
        Ok(())
    }
}

/// A requested artifact disk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactPlacement {
    pub kind: ArtifactKind,
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

/// An injected region, aligned with the sample rasters.
#[derive(Clone, Debug, PartialEq)]
pub struct ArtifactAnnotation {
    pub kind: ArtifactKind,
    pub region_mask: Mask,
}

fn region_for(p: &ArtifactPlacement, epithelium: &Mask) -> Mask {
    let (w, h) = epithelium.dims();
    let disk = Mask::disk(w, h, p.cx, p.cy, p.radius);
    match p.kind {
        ArtifactKind::UnspecificCk => disk.and_not(epithelium),
        ArtifactKind::CkExpressionLoss => disk.and(epithelium),
        ArtifactKind::NecroticCk | ArtifactKind::DapiArtifact => disk,
    }
}

fn find_conflict(regions: &[ArtifactAnnotation]) -> Option<Error> {
    for (i, a) in regions.iter().enumerate() {
        for b in &regions[i + 1..] {
            if a.kind.contradicts(b.kind) {
                let pixels = a.region_mask.intersection_count(&b.region_mask);
                if pixels > 0 {
                    return Some(Error::ArtifactConflict {
                        first: a.kind.name().into(),
                        second: b.kind.name().into(),
                        pixels,
                    });
                }
            }
        }
    }
    None
}

/// Applies explicit artifact placements to a sample.
pub fn apply_artifacts(
    sample: &PhantomSample,
    placements: &[ArtifactPlacement],
    config: &ArtifactConfig,
) -> Result<PhantomSample> {
    let (w, h) = sample.dims();
    let mut new_regions = Vec::with_capacity(placements.len());
    for p in placements {
        let fits = p.radius > 0.0
            && p.cx - p.radius >= 0.0
            && p.cy - p.radius >= 0.0
            && p.cx + p.radius <= w as f64
            && p.cy + p.radius <= h as f64;
        if !fits {
            return Err(Error::invalid(
                "artifact placement",
                format!(
                    "{} disk at ({}, {}) radius {} does not fit within {w}x{h}",
                    p.kind.name(),
                    p.cx,
                    p.cy,
                    p.radius
                ),
            ));
        }
        let region = region_for(p, &sample.epithelium_mask);
        if region.count() == 0 {
            return Err(Error::invalid(
                "artifact placement",
                format!("{} disk at ({}, {}) covers none of its compartment", p.kind.name(), p.cx, p.cy),
            ));
        }
        new_regions.push(ArtifactAnnotation {
            kind: p.kind,
            region_mask: region,
        });
    }
    let mut all = sample.artifacts.clone();
    all.extend(new_regions.iter().cloned());
    if let Some(err) = find_conflict(&all) {
        return Err(err);
    }

    let mut out = sample.clone();
    for ann in &new_regions {
        let cfg = config.kind(ann.kind);
        let strength = cfg.strength as f32;
        let region = ann.region_mask.data();
        let dapi = out.dapi.data_mut();
        match ann.kind {
            ArtifactKind::DapiArtifact => {
                let level = DAPI_BACKGROUND + strength * (FULL_SCALE - DAPI_BACKGROUND);
                for (v, _) in dapi.iter_mut().zip(region).filter(|(_, &m)| m) {
                    *v = level.round();
                }
            }
            ArtifactKind::NecroticCk => {
                for (v, _) in dapi.iter_mut().zip(region).filter(|(_, &m)| m) {
                    let faded = DAPI_BACKGROUND + (*v - DAPI_BACKGROUND) * NECROTIC_DAPI_RETENTION;
                    *v = faded.round().clamp(0.0, FULL_SCALE);
                }
            }
            _ => {}
        }
        let ck = out.ck_stained.data_mut();
        match ann.kind {
            ArtifactKind::UnspecificCk | ArtifactKind::NecroticCk => {
                for (v, _) in ck.iter_mut().zip(region).filter(|(_, &m)| m) {
                    *v = (*v + strength).round().clamp(0.0, FULL_SCALE);
                }
            }
            ArtifactKind::CkExpressionLoss => {
                for (v, _) in ck.iter_mut().zip(region).filter(|(_, &m)| m) {
                    *v = (*v * strength).round();
                }
            }
            ArtifactKind::DapiArtifact => {}
        }
    }
    out.artifacts = all;
    Ok(out)
}

/// Draws artifact placements from `config` and applies them.
///
/// Candidate disks that would contradict an accepted one, or that fall
/// mostly outside the kind's compartment, are redrawn a bounded number of
/// times and then skipped.
pub fn inject_artifacts(sample: &PhantomSample, config: &ArtifactConfig, seed: u64) -> Result<PhantomSample> {
    let (w, h) = sample.dims();
    config.validate(w.min(h))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accepted: Vec<ArtifactAnnotation> = sample.artifacts.clone();
    let mut placements = Vec::new();
    for kind in ArtifactKind::ALL {
        let cfg = config.kind(kind);
        for _ in 0..cfg.max_count {
            if cfg.probability == 0.0 || rng.random::<f64>() >= cfg.probability {
                continue;
            }
            for _ in 0..PLACEMENT_ATTEMPTS {
                let radius = rng.random_range(cfg.radius_min..=cfg.radius_max);
                let p = ArtifactPlacement {
                    kind,
                    cx: rng.random_range(radius..=w as f64 - radius),
                    cy: rng.random_range(radius..=h as f64 - radius),
                    radius,
                };
                let region = region_for(&p, &sample.epithelium_mask);
                let disk_area = std::f64::consts::PI * radius * radius;
                if (region.count() as f64) < MIN_COMPARTMENT_SHARE * disk_area {
                    continue;
                }
                let clashes = accepted.iter().any(|a| {
                    a.kind.contradicts(kind) && a.region_mask.intersection_count(&region) > 0
                });
                if clashes {
                    continue;
                }
                accepted.push(ArtifactAnnotation { kind, region_mask: region });
                placements.push(p);
                break;
            }
        }
    }
    apply_artifacts(sample, &placements, config)
}
