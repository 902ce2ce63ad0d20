use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use dapi2ck::segmentation::{init_segmenter, seg_forward};
use dapi2ck::translation::{discriminator_forward, generator_forward, init_discriminator, init_generator};
use dapi2ck::{DiscriminatorConfig, GeneratorConfig, SegConfig};
use dapi2ck_bench::ramp_plane;

fn forward_passes(c: &mut Criterion) {
    let tile = ramp_plane(256, 256);
    let g = init_generator(&GeneratorConfig::default(), 1);
    let d = init_discriminator(&DiscriminatorConfig::default(), 1);
    let s = init_segmenter(&SegConfig::default(), 1);
    let mut group = c.benchmark_group("forward_256");
    group.sample_size(10);
    group.bench_function("generator", |b| b.iter(|| generator_forward(&g, black_box(&tile)).unwrap()));
    group.bench_function("discriminator", |b| b.iter(|| discriminator_forward(&d, black_box(&tile), &tile).unwrap()));
    group.bench_function("segmenter", |b| b.iter(|| seg_forward(&s, black_box(&tile)).unwrap()));
    group.finish();
}

criterion_group!(benches, forward_passes);
criterion_main!(benches);
