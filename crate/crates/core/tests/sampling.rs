use dapi2ck::pipeline::sampling::POSITIVE_COVERAGE;
use dapi2ck::pipeline::{sample_patches, SamplingPolicy};
use dapi2ck::{Mask, Plane};
use proptest::prelude::*;

fn ramp(w: usize, h: usize, offset: f32) -> Plane {
    Plane::new(w, h, (0..w * h).map(|i| i as f32 + offset).collect())
}

#[test]
fn same_seed_gives_same_patches() {
    let a = ramp(300, 280, 0.0);
    let s1 = sample_patches(&[&a], None, 10, SamplingPolicy::Uniform, 64, 5).unwrap();
    let s2 = sample_patches(&[&a], None, 10, SamplingPolicy::Uniform, 64, 5).unwrap();
    assert_eq!(s1, s2);
    let s3 = sample_patches(&[&a], None, 10, SamplingPolicy::Uniform, 64, 6).unwrap();
    assert_ne!(s1.coords, s3.coords);
}

#[test]
fn raster_of_patch_size_yields_the_origin() {
    let a = ramp(256, 256, 0.0);
    let s = sample_patches(&[&a], None, 5, SamplingPolicy::Uniform, 256, 1).unwrap();
    assert!(s.coords.iter().all(|&c| c == (0, 0)));
    assert_eq!(s.patches[0][0], a);
}

#[test]
fn balanced_sampling_favors_positive_patches() {
    let (w, h) = (1024, 1024);
    let mut mask = Mask::new(w, h, vec![false; w * h]);
    // Sparse epithelium: a 200 px band covering a fifth of the raster.
    for y in 0..h {
        for x in 400..600 {
            mask.set(x, y, true);
        }
    }
    let a = ramp(w, h, 0.0);
    let needed = (POSITIVE_COVERAGE * 256.0 * 256.0).ceil() as usize;
    let rich = |s: &dapi2ck::pipeline::SampledPatches| {
        s.masks.as_ref().unwrap().iter().filter(|m| m.count() >= needed).count()
    };
    let balanced = sample_patches(&[&a], Some(&mask), 100, SamplingPolicy::MaskBalanced, 256, 9).unwrap();
    assert!(rich(&balanced) >= 40, "{} positive-rich patches", rich(&balanced));
    assert!(!balanced.fell_back_to_uniform);
}

#[test]
fn balanced_sampling_falls_back_on_an_empty_mask() {
    let a = ramp(300, 300, 0.0);
    let mask = Mask::new(300, 300, vec![false; 300 * 300]);
    let s = sample_patches(&[&a], Some(&mask), 4, SamplingPolicy::MaskBalanced, 128, 2).unwrap();
    assert!(s.fell_back_to_uniform);
    assert!(sample_patches(&[&a], None, 4, SamplingPolicy::MaskBalanced, 128, 2).is_err());
}

#[test]
fn rejects_rasters_smaller_than_the_patch() {
    let a = ramp(100, 300, 0.0);
    assert!(sample_patches(&[&a], None, 1, SamplingPolicy::Uniform, 128, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn patches_stay_inside_and_channels_stay_aligned(
        w in 32usize..200, h in 32usize..200, patch in 8usize..32, n in 1usize..12, seed: u64,
    ) {
        let a = ramp(w, h, 0.0);
        let b = ramp(w, h, 1.0);
        let mask = Mask::new(w, h, (0..w * h).map(|i| i % 3 == 0).collect());
        let s = sample_patches(&[&a, &b], Some(&mask), n, SamplingPolicy::MaskBalanced, patch, seed).unwrap();
        prop_assert_eq!(s.coords.len(), n);
        for (i, &(x, y)) in s.coords.iter().enumerate() {
            prop_assert!(x + patch <= w && y + patch <= h);
            let [pa, pb] = [&s.patches[i][0], &s.patches[i][1]];
            for (va, vb) in pa.data().iter().zip(pb.data()) {
                prop_assert_eq!(*vb, *va + 1.0);
            }
            prop_assert_eq!(pa, &a.crop(x, y, patch, patch));
            prop_assert_eq!(&s.masks.as_ref().unwrap()[i], &mask.crop(x, y, patch, patch));
        }
    }
}
