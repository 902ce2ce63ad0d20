use dapi2ck::phantom::{apply_artifacts, generate_phantom, ArtifactConfig, ArtifactKind, ArtifactPlacement, PhantomSpec};
use dapi2ck::{Error, Mask};

fn spec(size: usize, seed: u64) -> PhantomSpec {
    PhantomSpec { width: size, height: size, seed, ..PhantomSpec::default() }
}

fn artifact_heavy() -> ArtifactConfig {
    let mut cfg = ArtifactConfig::default();
    for k in [&mut cfg.unspecific_ck, &mut cfg.ck_expression_loss, &mut cfg.necrotic_ck, &mut cfg.dapi_artifact] {
        k.probability = 1.0;
        k.max_count = 3;
    }
    cfg
}

/// Center of the `radius` disk with the largest count of `want` pixels on a coarse grid.
fn best_center(mask: &Mask, radius: f64, want: bool) -> (f64, f64) {
    let (w, h) = mask.dims();
    let mut best = (0, (0.0, 0.0));
    for cy in (radius as usize..=h - radius as usize).step_by(8) {
        for cx in (radius as usize..=w - radius as usize).step_by(8) {
            let disk = Mask::disk(w, h, cx as f64, cy as f64, radius);
            let hits = disk.intersection_count(mask);
            let n = if want { hits } else { disk.count() - hits };
            if n > best.0 {
                best = (n, (cx as f64, cy as f64));
            }
        }
    }
    best.1
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

#[test]
fn same_seed_is_bit_identical() {
    let mut s = spec(256, 7);
    s.artifact_config = artifact_heavy();
    assert_eq!(generate_phantom(&s).unwrap(), generate_phantom(&s).unwrap());
    assert_ne!(generate_phantom(&s).unwrap().dapi, generate_phantom(&spec(256, 8)).unwrap().dapi);
}

#[test]
fn zero_fraction_gives_empty_epithelium_and_background_ck() {
    let s = PhantomSpec { epithelial_fraction: 0.0, ..spec(256, 3) };
    let p = generate_phantom(&s).unwrap();
    assert_eq!(p.epithelium_mask.count(), 0);
    let clean = generate_phantom(&PhantomSpec { epithelial_fraction: 0.4, ..s }).unwrap();
    assert!(p.ck_true.mean() < 0.25 * clean.ck_true.masked_mean(&clean.epithelium_mask).unwrap());
}

#[test]
fn mask_coverage_follows_the_requested_fraction() {
    for seed in 0..5 {
        let p = generate_phantom(&PhantomSpec { epithelial_fraction: 0.4, ..spec(512, seed) }).unwrap();
        let count = p.epithelium_mask.data().iter().filter(|&&m| m).count();
        let coverage = count as f64 / (512.0 * 512.0);
        assert!((0.36..=0.44).contains(&coverage), "seed {seed}: coverage {coverage}");
    }
}

#[test]
fn invalid_specs_name_the_violated_invariant() {
    let cases = [
        (PhantomSpec { width: 200, ..spec(256, 0) }, "width"),
        (PhantomSpec { epithelial_fraction: 1.5, ..spec(256, 0) }, "epithelial_fraction"),
        (PhantomSpec { nucleus_density_epithelial: 2.0, ..spec(256, 0) }, "nucleus_density_epithelial"),
        (PhantomSpec { noise_level: 1.0, ..spec(256, 0) }, "noise_level"),
    ];
    for (s, field) in cases {
        let err = generate_phantom(&s).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains(field), "{err}");
    }
}

#[test]
fn stained_equals_true_outside_artifacts() {
    for seed in 0..6 {
        let mut s = spec(384, seed);
        s.artifact_config = artifact_heavy();
        let p = generate_phantom(&s).unwrap();
        assert!(!p.artifacts.is_empty());
        let union = p.artifact_union();
        for ((a, b), inside) in p.ck_stained.data().iter().zip(p.ck_true.data()).zip(union.data()) {
            if !inside {
                assert_eq!(a, b);
            }
        }
        for a in &p.artifacts {
            assert_eq!(a.region_mask.dims(), p.dims());
        }
    }
}

#[test]
fn epithelial_ck_exceeds_stromal_ck() {
    for seed in 0..5 {
        let p = generate_phantom(&spec(256, seed)).unwrap();
        let inside = p.ck_true.masked_mean(&p.epithelium_mask).unwrap();
        let stroma = Mask::full(256, 256).and_not(&p.epithelium_mask);
        let outside = p.ck_true.masked_mean(&stroma).unwrap();
        assert!(inside > 3.0 * outside, "seed {seed}: {inside} vs {outside}");
    }
}

#[test]
fn disabled_artifacts_leave_the_sample_unchanged() {
    let p = generate_phantom(&spec(256, 11)).unwrap();
    assert!(p.artifacts.is_empty());
    assert_eq!(p.ck_stained, p.ck_true);
    let again = dapi2ck::phantom::inject_artifacts(&p, &ArtifactConfig::default(), 5).unwrap();
    assert_eq!(again, p);
}

#[test]
fn unspecific_blob_differs_exactly_on_its_region() {
    let p = generate_phantom(&spec(512, 21)).unwrap();
    let (cx, cy) = best_center(&p.epithelium_mask, 50.0, false);
    let placement = ArtifactPlacement { kind: ArtifactKind::UnspecificCk, cx, cy, radius: 50.0 };
    let out = apply_artifacts(&p, &[placement], &ArtifactConfig::default()).unwrap();
    assert_eq!(out.artifacts.len(), 1);
    let region = &out.artifacts[0].region_mask;
    assert_eq!(region.intersection_count(&p.epithelium_mask), 0);
    for (i, (a, b)) in out.ck_stained.data().iter().zip(out.ck_true.data()).enumerate() {
        assert_eq!(a != b, region.data()[i], "pixel {i}");
    }
    assert_eq!(out.dapi, p.dapi);
}

#[test]
fn expression_loss_suppresses_ck_inside_epithelium() {
    let p = generate_phantom(&spec(512, 22)).unwrap();
    let (cx, cy) = best_center(&p.epithelium_mask, 40.0, true);
    let placement = ArtifactPlacement { kind: ArtifactKind::CkExpressionLoss, cx, cy, radius: 40.0 };
    let out = apply_artifacts(&p, &[placement], &ArtifactConfig::default()).unwrap();
    let region = &out.artifacts[0].region_mask;
    let stained = out.ck_stained.masked_mean(region).unwrap();
    let truth = out.ck_true.masked_mean(region).unwrap();
    assert!(stained < 0.2 * truth, "{stained} vs {truth}");
    assert_eq!(out.epithelium_mask, p.epithelium_mask);
}

#[test]
fn necrosis_fades_dapi_and_adds_ck() {
    let p = generate_phantom(&spec(256, 23)).unwrap();
    let placement = ArtifactPlacement { kind: ArtifactKind::NecroticCk, cx: 128.0, cy: 128.0, radius: 30.0 };
    let out = apply_artifacts(&p, &[placement], &ArtifactConfig::default()).unwrap();
    let region = &out.artifacts[0].region_mask;
    assert!(out.dapi.masked_mean(region).unwrap() < p.dapi.masked_mean(region).unwrap());
    assert!(out.ck_stained.masked_mean(region).unwrap() > p.ck_true.masked_mean(region).unwrap());
}

#[test]
fn contradictory_placements_are_rejected() {
    let p = generate_phantom(&spec(256, 24)).unwrap();
    let necrotic = ArtifactPlacement { kind: ArtifactKind::NecroticCk, cx: 128.0, cy: 128.0, radius: 40.0 };
    let unspecific = ArtifactPlacement { kind: ArtifactKind::UnspecificCk, ..necrotic };
    let err = apply_artifacts(&p, &[necrotic, unspecific], &ArtifactConfig::default()).unwrap_err();
    assert!(matches!(err, Error::ArtifactConflict { .. }), "{err}");
    let outside = ArtifactPlacement { kind: ArtifactKind::DapiArtifact, cx: 10.0, cy: 10.0, radius: 40.0 };
    assert!(apply_artifacts(&p, &[outside], &ArtifactConfig::default()).is_err());
}

#[test]
fn injected_kinds_never_overlap_contradictorily() {
    for seed in 0..20 {
        let mut s = spec(256, seed);
        s.artifact_config = artifact_heavy();
        let p = generate_phantom(&s).unwrap();
        for (i, a) in p.artifacts.iter().enumerate() {
            for b in &p.artifacts[i + 1..] {
                if a.kind.contradicts(b.kind) {
                    assert_eq!(a.region_mask.intersection_count(&b.region_mask), 0, "seed {seed}");
                }
            }
        }
    }
}

#[test]
fn nucleus_density_predicts_ck_intensity() {
    const WIN: usize = 32;
    let (mut density, mut ck) = (Vec::new(), Vec::new());
    for seed in 0..100 {
        let p = generate_phantom(&spec(256, 1000 + seed)).unwrap();
        let per_side = 256 / WIN;
        let mut counts = vec![0.0; per_side * per_side];
        for n in &p.nuclei {
            let (x, y) = (n.cx as usize, n.cy as usize);
            if x < 256 && y < 256 {
                counts[(y / WIN) * per_side + x / WIN] += 1.0;
            }
        }
        for wy in 0..per_side {
            for wx in 0..per_side {
                density.push(counts[wy * per_side + wx]);
                ck.push(p.ck_true.crop(wx * WIN, wy * WIN, WIN, WIN).mean());
            }
        }
    }
    let r = pearson(&density, &ck);
    assert!(r >= 0.5, "correlation {r}");
}
