//! Field helpers for phantom synthesis.

/// Separable Gaussian blur with mirrored borders.
pub fn gaussian_blur(field: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    assert_eq!(field.len(), width * height);
    if sigma <= 0.0 {
        return field.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.into_iter().map(|k| k / norm).collect();

    let mirror = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        // repeated reflection handles kernels wider than the image
        loop {
            if i < 0 {
                i = -i - 1;
            } else if i >= n {
                i = 2 * n - i - 1;
            } else {
                return i as usize;
            }
        }
    };

    let mut tmp = vec![0.0; field.len()];
    for y in 0..height {
        let row = &field[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                acc += k * row[mirror(x as isize + j as isize - radius, width)];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; field.len()];
    for x in 0..width {
        for y in 0..height {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                acc += k * tmp[mirror(y as isize + j as isize - radius, height) * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

// larger than any squared distance on a desk-scale raster
const FAR: f64 = 1e12;

/// Squared distance transform of a sampled 1-D function (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let intersect = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s = intersect(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = intersect(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact Euclidean distance from every pixel to the nearest set pixel.
///
/// Returns `f64::INFINITY` everywhere when no pixel is set.
pub fn distance_transform(features: &[bool], width: usize, height: usize) -> Vec<f64> {
    assert_eq!(features.len(), width * height);
    if !features.iter().any(|&b| b) {
        return vec![f64::INFINITY; features.len()];
    }
    let n = width.max(height);
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut f = vec![0.0f64; n];
    let mut d = vec![0.0f64; n];
    let mut grid: Vec<f64> = features.iter().map(|&b| if b { 0.0 } else { FAR }).collect();
    for x in 0..width {
        for y in 0..height {
            f[y] = grid[y * width + x];
        }
        edt_1d(&f[..height], &mut d[..height], &mut v, &mut z);
        for y in 0..height {
            grid[y * width + x] = d[y];
        }
    }
    for y in 0..height {
        f[..width].copy_from_slice(&grid[y * width..(y + 1) * width]);
        edt_1d(&f[..width], &mut d[..width], &mut v, &mut z);
        grid[y * width..(y + 1) * width].copy_from_slice(&d[..width]);
    }
    grid.into_iter().map(f64::sqrt).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(features: &[bool], w: usize, h: usize) -> Vec<f64> {
        (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                features
                    .iter()
                    .enumerate()
                    .filter(|(_, &b)| b)
                    .map(|(j, _)| {
                        let (fx, fy) = ((j % w) as f64, (j / w) as f64);
                        ((x - fx).powi(2) + (y - fy).powi(2)).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn distance_transform_matches_brute_force(
            w in 1usize..14,
            h in 1usize..14,
            bits in proptest::collection::vec(proptest::bool::weighted(0.1), 196),
        ) {
            let features = &bits[..w * h];
            let fast = distance_transform(features, w, h);
            let slow = brute_force(features, w, h);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a.is_infinite() && b.is_infinite()) || (a - b).abs() < 1e-9, "{} vs {}", a, b);
            }
        }
    }

    #[test]
    fn blur_preserves_constants() {
        let f = vec![3.5; 40 * 30];
        let b = gaussian_blur(&f, 40, 30, 6.0);
        assert!(b.iter().all(|v| (v - 3.5).abs() < 1e-12));
    }
}
