use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use dapi2ck::pipeline::{map_tiles, plan_tiles, stitch, Blend, TILE_SIZE};
use dapi2ck_bench::ramp_plane;

fn tiling(c: &mut Criterion) {
    let slide = ramp_plane(1024, 768);
    let mut group = c.benchmark_group("tiling_1024x768");
    for (name, blend) in [("uniform", Blend::UniformAverage), ("cosine", Blend::CosineRamp)] {
        let plan = plan_tiles(1024, 768, TILE_SIZE, 128, blend).unwrap();
        group.bench_function(format!("map_identity_{name}"), |b| {
            b.iter(|| map_tiles(black_box(&slide), &plan, |t| Ok(t.clone())).unwrap())
        });
        let tiles: Vec<_> = plan
            .tiles
            .iter()
            .map(|&(x, y)| ((x, y), slide.crop(x, y, TILE_SIZE, TILE_SIZE)))
            .collect();
        group.bench_function(format!("stitch_{name}"), |b| b.iter(|| stitch(black_box(&tiles), &plan).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, tiling);
criterion_main!(benches);
