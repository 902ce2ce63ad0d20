//! Benchmarks live in `benches/`; this library only provides fixtures.

use dapi2ck::Plane;

/// Deterministic smooth test raster in the model range.
pub fn ramp_plane(width: usize, height: usize) -> Plane {
    let data = (0..width * height)
        .map(|i| {
            let (x, y) = ((i % width) as f32, (i / width) as f32);
            ((x * 0.05).sin() * (y * 0.03).cos()).clamp(-1.0, 1.0)
        })
        .collect();
    Plane::new(width, height, data)
}
