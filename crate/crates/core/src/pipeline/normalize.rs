//! Percentile intensity normalization into the model input range.

use crate::raster::Plane;

/// Closed interval all network inputs and generator outputs live in.
pub const MODEL_RANGE: (f32, f32) = (-1.0, 1.0);

pub const DEFAULT_LOW_PCT: f64 = 1.0;
pub const DEFAULT_HIGH_PCT: f64 = 99.0;

/// Percentile with linear interpolation between order statistics
/// (rank `p / 100 * (n - 1)`). `sorted` must be ascending and nonempty.
pub fn percentile_sorted(sorted: &[f32], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty set");
    let rank = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] as f64 + (sorted[hi] as f64 - sorted[lo] as f64) * frac
}

/// Low and high percentiles of a plane.
pub fn percentile_bounds(plane: &Plane, low_pct: f64, high_pct: f64) -> (f64, f64) {
    let mut sorted = plane.data().to_vec();
    sorted.sort_unstable_by(f32::total_cmp);
    (percentile_sorted(&sorted, low_pct), percentile_sorted(&sorted, high_pct))
}

/// Maps `[lo, hi]` affinely onto [`MODEL_RANGE`] and clips. A degenerate
/// interval maps everything to the range midpoint.
pub fn normalize_with_bounds(plane: &Plane, lo: f64, hi: f64) -> Plane {
    let (a, b) = (MODEL_RANGE.0 as f64, MODEL_RANGE.1 as f64);
    if !(hi > lo) {
        return Plane::filled(plane.width(), plane.height(), ((a + b) / 2.0) as f32);
    }
    let scale = (b - a) / (hi - lo);
    plane.map(|v| (a + (v as f64 - lo) * scale).clamp(a, b) as f32)
}

/// Percentile normalization of a whole raster.
pub fn normalize_intensity(plane: &Plane, low_pct: f64, high_pct: f64) -> Plane {
    let (lo, hi) = percentile_bounds(plane, low_pct, high_pct);
    normalize_with_bounds(plane, lo, hi)
}

/// Inverse of the generator output mapping used when persisting synthetic
/// CK: [`MODEL_RANGE`] onto `0..=65535`.
pub fn model_to_u16_scale(v: f32) -> f32 {
    let (a, b) = MODEL_RANGE;
    ((v.clamp(a, b) - a) / (b - a) * 65535.0).round()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_raster_maps_to_midpoint() {
        let p = Plane::filled(5, 7, 1234.0);
        assert!(normalize_intensity(&p, 1.0, 99.0).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_value_raster_hits_endpoints() {
        let data = (0..100).map(|i| if i % 2 == 0 { 0.0 } else { 1000.0 }).collect();
        let out = normalize_intensity(&Plane::new(10, 10, data), 1.0, 99.0);
        for (i, &v) in out.data().iter().enumerate() {
            assert_eq!(v, if i % 2 == 0 { -1.0 } else { 1.0 });
        }
    }

    #[test]
    fn percentile_interpolates() {
        let s = [0.0, 10.0, 20.0, 30.0];
        assert_eq!(percentile_sorted(&s, 0.0), 0.0);
        assert_eq!(percentile_sorted(&s, 100.0), 30.0);
        assert!((percentile_sorted(&s, 50.0) - 15.0).abs() < 1e-12);
    }
}
