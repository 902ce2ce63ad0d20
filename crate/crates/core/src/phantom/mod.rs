//! Procedural DAPI/CK/epithelium phantoms.
//!
//! Epithelial regions are thresholded low-frequency noise. Nuclei are
//! scattered densely inside them and sparsely outside, and the clean CK
//! channel is an exponential halo around epithelial nuclei only, so CK is a
//! deterministic function of nuclear morphology plus bounded noise.

mod artifacts;
mod dataset;
pub mod geometry;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use artifacts::{
    apply_artifacts, inject_artifacts, ArtifactAnnotation, ArtifactConfig, ArtifactKind,
    ArtifactPlacement, KindConfig,
};
pub use dataset::{
    build_phantom_dataset, load_sample, save_sample, ArtifactFile, Manifest, ManifestEntry, SampleFiles, Split,
    SplitRatios, MANIFEST_FILE,
};

use crate::error::{Error, Result};
use crate::raster::{Mask, Plane, SlideRaster, DEFAULT_RESOLUTION_UM};

/// Side length every phantom must at least have (one training patch).
pub const MIN_SIDE: usize = 256;

pub const DAPI_BACKGROUND: f32 = 1200.0;
pub const CK_BACKGROUND: f32 = 800.0;
/// CK intensity at the surface of an epithelial nucleus.
pub const CK_PEAK: f32 = 28000.0;
/// Intensity units corresponding to `noise_level = 1`.
pub const NOISE_SCALE: f32 = 4000.0;
pub const FULL_SCALE: f32 = 65535.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    /// Micrometers per pixel.
    pub resolution: f64,
    pub epithelial_fraction: f64,
    /// Nuclei per 100x100 px of epithelium.
    pub nucleus_density_epithelial: f64,
    /// Nuclei per 100x100 px of stroma.
    pub nucleus_density_stromal: f64,
    pub nucleus_radius_epithelial: (f64, f64),
    pub nucleus_radius_stromal: (f64, f64),
    pub ck_halo_radius: f64,
    pub noise_level: f64,
    /// Smoothing length of the epithelial-region noise field, in pixels.
    pub region_scale: f64,
    pub artifact_config: ArtifactConfig,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            resolution: DEFAULT_RESOLUTION_UM,
            epithelial_fraction: 0.4,
            nucleus_density_epithelial: 80.0,
            nucleus_density_stromal: 6.0,
            nucleus_radius_epithelial: (4.0, 6.0),
            nucleus_radius_stromal: (2.5, 4.0),
            ck_halo_radius: 5.0,
            noise_level: 0.05,
            region_scale: 16.0,
            artifact_config: ArtifactConfig::default(),
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("phantom spec", reason));
        if self.width < MIN_SIDE || self.height < MIN_SIDE {
            return bad(format!(
                "width and height must be >= {MIN_SIDE}, got {}x{}",
                self.width, self.height
            ));
        }
        if !(0.0..=1.0).contains(&self.epithelial_fraction) {
            return bad(format!(
                "epithelial_fraction must lie in [0, 1], got {}",
                self.epithelial_fraction
            ));
        }
        if !(self.resolution > 0.0) {
            return bad(format!("resolution must be > 0, got {}", self.resolution));
        }
        let (de, ds) = (self.nucleus_density_epithelial, self.nucleus_density_stromal);
        if de < 0.0 || ds < 0.0 || (de == 0.0 && ds == 0.0) {
            return bad("densities must be >= 0 and positive for at least one compartment".into());
        }
        if de <= ds {
            return bad(format!(
                "nucleus_density_epithelial ({de}) must exceed nucleus_density_stromal ({ds})"
            ));
        }
        for (name, (lo, hi)) in [
            ("nucleus_radius_epithelial", self.nucleus_radius_epithelial),
            ("nucleus_radius_stromal", self.nucleus_radius_stromal),
        ] {
            if !(lo > 0.0 && lo <= hi) {
                return bad(format!("{name} must satisfy 0 < min <= max, got ({lo}, {hi})"));
            }
        }
        if !(self.ck_halo_radius > 0.0) {
            return bad(format!("ck_halo_radius must be > 0, got {}", self.ck_halo_radius));
        }
        if !(0.0..1.0).contains(&self.noise_level) {
            return bad(format!("noise_level must lie in [0, 1), got {}", self.noise_level));
        }
        if self.region_scale < 0.0 {
            return bad(format!("region_scale must be >= 0, got {}", self.region_scale));
        }
        self.artifact_config.validate(self.width.min(self.height))
    }
}

/// One rendered nucleus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nucleus {
    pub cx: f64,
    pub cy: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub angle: f64,
    pub intensity: f32,
    pub epithelial: bool,
}

/// Paired phantom channels with ground truth and artifact annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSample {
    pub seed: u64,
    pub resolution: f64,
    pub dapi: Plane,
    /// Clean CK implied by nuclear morphology.
    pub ck_true: Plane,
    /// `ck_true` after artifact injection; stands in for real stained CK.
    pub ck_stained: Plane,
    pub epithelium_mask: Mask,
    pub artifacts: Vec<ArtifactAnnotation>,
    pub nuclei: Vec<Nucleus>,
}

impl PhantomSample {
    pub fn dims(&self) -> (usize, usize) {
        self.dapi.dims()
    }

    /// Union of all annotated artifact regions.
    pub fn artifact_union(&self) -> Mask {
        let (w, h) = self.dims();
        self.artifacts
            .iter()
            .fold(Mask::empty(w, h), |acc, a| acc.or(&a.region_mask))
    }

    /// Union of the regions of one artifact kind.
    pub fn artifact_regions(&self, kind: ArtifactKind) -> Mask {
        let (w, h) = self.dims();
        self.artifacts
            .iter()
            .filter(|a| a.kind == kind)
            .fold(Mask::empty(w, h), |acc, a| acc.or(&a.region_mask))
    }

    /// DAPI, stained CK and clean CK as one slide.
    pub fn to_slide(&self) -> SlideRaster {
        use crate::raster::Channel;
        SlideRaster::new(
            vec![
                Channel { name: "DAPI".into(), plane: self.dapi.clone() },
                Channel { name: "CK".into(), plane: self.ck_stained.clone() },
                Channel { name: "CK_TRUE".into(), plane: self.ck_true.clone() },
            ],
            self.resolution,
            16,
        )
        .expect("phantom channels share dimensions")
    }
}

fn quantize(v: f32) -> f32 {
    v.round().clamp(0.0, FULL_SCALE)
}

/// Epithelial region mask covering `round(fraction * N)` pixels.
fn epithelial_regions(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Mask {
    let (w, h) = (spec.width, spec.height);
    let n = w * h;
    let target = (spec.epithelial_fraction * n as f64).round() as usize;
    if target == 0 {
        return Mask::empty(w, h);
    }
    if target >= n {
        return Mask::full(w, h);
    }
    let white: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let field = geometry::gaussian_blur(&white, w, h, spec.region_scale);
    // the `target` highest field values become epithelium
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| field[b].total_cmp(&field[a]).then(a.cmp(&b)));
    let mut data = vec![false; n];
    for &i in &order[..target] {
        data[i] = true;
    }
    Mask::new(w, h, data)
}

fn place_nuclei(spec: &PhantomSpec, mask: &Mask, rng: &mut ChaCha8Rng) -> Vec<Nucleus> {
    let epi_px: Vec<usize> = (0..mask.data().len()).filter(|&i| mask.data()[i]).collect();
    let str_px: Vec<usize> = (0..mask.data().len()).filter(|&i| !mask.data()[i]).collect();
    let mut nuclei: Vec<Nucleus> = Vec::new();
    let w = spec.width;
    for (epithelial, pixels, density, (rmin, rmax)) in [
        (true, &epi_px, spec.nucleus_density_epithelial, spec.nucleus_radius_epithelial),
        (false, &str_px, spec.nucleus_density_stromal, spec.nucleus_radius_stromal),
    ] {
        if pixels.is_empty() {
            continue;
        }
        let count = (density * pixels.len() as f64 / 10_000.0).round() as usize;
        for _ in 0..count {
            // a few attempts to avoid heavy overlap; the last draw is kept regardless
            let mut candidate = None;
            for attempt in 0..12 {
                let p = pixels[rng.random_range(0..pixels.len())];
                let cx = (p % w) as f64 + rng.random::<f64>();
                let cy = (p / w) as f64 + rng.random::<f64>();
                let r = rng.random_range(rmin..=rmax);
                let crowded = nuclei.iter().any(|o| {
                    let d2 = (o.cx - cx).powi(2) + (o.cy - cy).powi(2);
                    let lim = 0.9 * (r + o.semi_minor);
                    d2 < lim * lim
                });
                candidate = Some((cx, cy, r));
                if !crowded || attempt == 11 {
                    break;
                }
            }
            let (cx, cy, r) = candidate.expect("at least one attempt");
            let elongation: f64 = if epithelial {
                rng.random_range(1.0..1.3)
            } else {
                rng.random_range(1.4..2.0)
            };
            let intensity = if epithelial {
                rng.random_range(0.45..0.65)
            } else {
                rng.random_range(0.55..0.8)
            } * FULL_SCALE;
            nuclei.push(Nucleus {
                cx,
                cy,
                semi_major: r * elongation.sqrt(),
                semi_minor: r / elongation.sqrt(),
                angle: rng.random_range(0.0..std::f64::consts::PI),
                intensity,
                epithelial,
            });
        }
    }
    nuclei
}

/// Anti-aliased coverage of each pixel in the nucleus bounding box.
fn for_each_covered(n: &Nucleus, w: usize, h: usize, mut f: impl FnMut(usize, usize, f32)) {
    let reach = n.semi_major + 1.0;
    let x0 = (n.cx - reach).floor().max(0.0) as usize;
    let y0 = (n.cy - reach).floor().max(0.0) as usize;
    let x1 = ((n.cx + reach).ceil() as usize).min(w - 1);
    let y1 = ((n.cy + reach).ceil() as usize).min(h - 1);
    let (s, c) = n.angle.sin_cos();
    let scale = (n.semi_major * n.semi_minor).sqrt();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dx, dy) = (x as f64 + 0.5 - n.cx, y as f64 + 0.5 - n.cy);
            let u = dx * c + dy * s;
            let v = -dx * s + dy * c;
            let rho = ((u / n.semi_major).powi(2) + (v / n.semi_minor).powi(2)).sqrt();
            let cov = (0.5 - (rho - 1.0) * scale).clamp(0.0, 1.0);
            if cov > 0.0 {
                f(x, y, cov as f32);
            }
        }
    }
}

fn render_dapi(spec: &PhantomSpec, nuclei: &[Nucleus], rng: &mut ChaCha8Rng) -> Plane {
    let (w, h) = (spec.width, spec.height);
    let mut data = vec![DAPI_BACKGROUND; w * h];
    let texture = Normal::new(0.0f32, 0.15).expect("valid std");
    for n in nuclei {
        for_each_covered(n, w, h, |x, y, cov| {
            let grain = 1.0 + texture.sample(rng);
            data[y * w + x] += n.intensity * cov * grain.max(0.0);
        });
    }
    let sigma = spec.noise_level as f32 * NOISE_SCALE;
    if sigma > 0.0 {
        let noise = Normal::new(0.0f32, sigma).expect("valid std");
        for v in data.iter_mut() {
            *v += noise.sample(rng).clamp(-3.0 * sigma, 3.0 * sigma);
        }
    }
    Plane::new(w, h, data.into_iter().map(quantize).collect())
}

fn render_ck(spec: &PhantomSpec, nuclei: &[Nucleus], rng: &mut ChaCha8Rng) -> Plane {
    let (w, h) = (spec.width, spec.height);
    let mut seeds = vec![false; w * h];
    for n in nuclei.iter().filter(|n| n.epithelial) {
        for_each_covered(n, w, h, |x, y, cov| {
            if cov >= 0.5 {
                seeds[y * w + x] = true;
            }
        });
    }
    let dist = geometry::distance_transform(&seeds, w, h);
    let amp = spec.noise_level as f32 * NOISE_SCALE;
    let data = dist
        .into_iter()
        .map(|d| {
            let halo = if d.is_finite() {
                CK_PEAK * (-d / spec.ck_halo_radius).exp() as f32
            } else {
                0.0
            };
            let noise = if amp > 0.0 { rng.random_range(-amp..=amp) } else { 0.0 };
            quantize(CK_BACKGROUND + halo + noise)
        })
        .collect();
    Plane::new(w, h, data)
}

/// Renders the clean phantom and then applies `spec.artifact_config`.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<PhantomSample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mask = epithelial_regions(spec, &mut rng);
    let nuclei = place_nuclei(spec, &mask, &mut rng);
    let dapi = render_dapi(spec, &nuclei, &mut rng);
    let ck_true = render_ck(spec, &nuclei, &mut rng);
    let clean = PhantomSample {
        seed: spec.seed,
        resolution: spec.resolution,
        dapi,
        ck_stained: ck_true.clone(),
        ck_true,
        epithelium_mask: mask,
        artifacts: Vec::new(),
        nuclei,
    };
    if spec.artifact_config.is_disabled() {
        return Ok(clean);
    }
    inject_artifacts(&clean, &spec.artifact_config, artifact_seed(spec.seed))
}

/// Seed of the artifact stream, decorrelated from the rendering stream.
pub fn artifact_seed(seed: u64) -> u64 {
    seed ^ 0xA076_1D64_78BD_642F
}
