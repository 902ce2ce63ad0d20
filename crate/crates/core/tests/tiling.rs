use dapi2ck::pipeline::{map_tiles, plan_tiles, stitch, Blend, StitchAccumulator, TILE_SIZE};
use dapi2ck::Plane;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tile origins along one axis from the count/clamp formula.
fn expected_axis(extent: usize, tile: usize, stride: usize) -> Vec<usize> {
    let count = (extent - tile).div_ceil(stride) + 1;
    (0..count).map(|i| (i * stride).min(extent - tile)).collect()
}

fn random_plane(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Plane {
    Plane::new(w, h, (0..w * h).map(|_| rng.random_range(-1.0f32..1.0)).collect())
}

#[test]
fn plan_examples() {
    let p = plan_tiles(256, 256, 256, 256, Blend::UniformAverage).unwrap();
    assert_eq!(p.tiles, vec![(0, 0)]);
    let p = plan_tiles(512, 512, 256, 256, Blend::UniformAverage).unwrap();
    assert_eq!(p.tiles, vec![(0, 0), (256, 0), (0, 256), (256, 256)]);
    let p = plan_tiles(300, 300, 256, 256, Blend::UniformAverage).unwrap();
    assert_eq!(p.tiles, vec![(0, 0), (44, 0), (0, 44), (44, 44)]);
}

#[test]
fn rejects_undersized_raster_and_bad_stride() {
    assert!(plan_tiles(255, 300, 256, 128, Blend::CosineRamp).is_err());
    assert!(plan_tiles(300, 300, 256, 0, Blend::CosineRamp).is_err());
    assert!(plan_tiles(300, 300, 256, 257, Blend::CosineRamp).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn plans_cover_every_pixel_and_follow_the_clamp_formula(
        w in 16usize..90, h in 16usize..90, tile in 8usize..17, stride_frac in 0.05f64..=1.0,
    ) {
        let stride = ((tile as f64 * stride_frac).ceil() as usize).clamp(1, tile);
        let plan = plan_tiles(w, h, tile, stride, Blend::CosineRamp).unwrap();
        let xs = expected_axis(w, tile, stride);
        let ys = expected_axis(h, tile, stride);
        let expected: Vec<_> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
        prop_assert_eq!(&plan.tiles, &expected);
        let mut covered = vec![0u32; w * h];
        for &(x, y) in &plan.tiles {
            prop_assert!(x + tile <= w && y + tile <= h);
            for yy in y..y + tile {
                for xx in x..x + tile {
                    covered[yy * w + xx] += 1;
                }
            }
        }
        prop_assert!(covered.iter().all(|&c| c >= 1));
        let keys: Vec<_> = plan.tiles.iter().map(|&(x, y)| (y, x)).collect();
        prop_assert!(keys.windows(2).all(|p| p[0] < p[1]), "row-major, no duplicates");
    }

    #[test]
    fn constant_tiles_stitch_to_a_constant(
        w in 256usize..420, h in 256usize..420, stride in 64usize..=256, c in -3.0f32..3.0, cosine: bool,
    ) {
        let blend = if cosine { Blend::CosineRamp } else { Blend::UniformAverage };
        let plan = plan_tiles(w, h, TILE_SIZE, stride, blend).unwrap();
        let out = map_tiles(&Plane::filled(w, h, 0.0), &plan, |_| Ok(Plane::filled(TILE_SIZE, TILE_SIZE, c))).unwrap();
        for &v in out.data() {
            if cosine {
                prop_assert!((v - c).abs() <= 1e-6, "{} vs {}", v, c);
            } else {
                prop_assert_eq!(v, c);
            }
        }
    }

    #[test]
    fn stitching_is_independent_of_deposit_order(
        w in 256usize..400, h in 256usize..400, stride in 64usize..200, seed: u64, cosine: bool,
    ) {
        let blend = if cosine { Blend::CosineRamp } else { Blend::UniformAverage };
        let plan = plan_tiles(w, h, TILE_SIZE, stride, blend).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tiles: Vec<_> =
            plan.tiles.iter().map(|&c| (c, random_plane(TILE_SIZE, TILE_SIZE, &mut rng))).collect();
        let reference = stitch(&tiles, &plan).unwrap();
        tiles.shuffle(&mut rng);
        let mut acc = StitchAccumulator::new(&plan);
        for ((x, y), t) in &tiles {
            acc.deposit(*x, *y, t).unwrap();
        }
        let shuffled = acc.finish().unwrap();
        for (a, b) in reference.data().iter().zip(shuffled.data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }
}

#[test]
fn non_overlapping_identity_reconstructs_the_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let input = random_plane(768, 512, &mut rng);
    for blend in [Blend::UniformAverage, Blend::CosineRamp] {
        let plan = plan_tiles(768, 512, TILE_SIZE, TILE_SIZE, blend).unwrap();
        assert_eq!(map_tiles(&input, &plan, |t| Ok(t.clone())).unwrap(), input);
    }
}

#[test]
fn overlapping_identity_reconstructs_the_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let input = random_plane(400, 300, &mut rng);
    let plan = plan_tiles(400, 300, TILE_SIZE, 96, Blend::CosineRamp).unwrap();
    let out = map_tiles(&input, &plan, |t| Ok(t.clone())).unwrap();
    for (a, b) in input.data().iter().zip(out.data()) {
        assert!((a - b).abs() <= 1e-6);
    }
}

#[test]
fn weight_sum_is_positive_everywhere() {
    let plan = plan_tiles(300, 290, TILE_SIZE, 100, Blend::CosineRamp).unwrap();
    let mut acc = StitchAccumulator::new(&plan);
    for &(x, y) in &plan.tiles {
        acc.deposit(x, y, &Plane::filled(TILE_SIZE, TILE_SIZE, 1.0)).unwrap();
    }
    assert!(acc.weight_sum().iter().all(|&w| w > 0.0));
}
