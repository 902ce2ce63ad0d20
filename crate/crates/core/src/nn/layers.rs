//! Convolution, normalization and activation layers with explicit backward passes.
//!
//! Every layer's `forward` takes `&self` and never caches; callers that train
//! keep the layer inputs and hand them back to `backward`, which accumulates
//! parameter gradients and returns the input gradient.

use rand::Rng;

use super::tensor::{matmul, Real, Tensor};

/// A trainable parameter tensor with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn new(shape: Vec<usize>, value: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![T::zero(); value.len()];
        Self { shape, value, grad }
    }

    pub fn filled(shape: Vec<usize>, v: T) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![v; n])
    }

    pub fn normal<R: Rng + ?Sized>(shape: Vec<usize>, std: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let t = Tensor::<T>::randn([n, 1, 1, 1], std, rng);
        Self::new(shape, t.into_vec())
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Kernel/stride/padding of a square convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub const fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self { kernel, stride, pad }
    }

    /// Output extent of a forward convolution, `None` when the kernel does not fit.
    pub fn conv_out(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.pad;
        if padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    /// Output extent of the matching transposed convolution.
    pub fn transposed_out(&self, input: usize) -> usize {
        (input - 1) * self.stride + self.kernel - 2 * self.pad
    }
}

/// Output columns `lo..hi` whose input column `ox * stride + offset - pad`
/// lies inside `0..extent`.
fn valid_range(extent: usize, out: usize, g: ConvGeom, offset: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(offset).div_ceil(g.stride).min(out);
    let hi = match (extent + g.pad).checked_sub(offset + 1) {
        Some(last) => (last / g.stride + 1).min(out),
        None => 0,
    };
    (lo, hi.max(lo))
}

/// Unfolds one `C x H x W` sample into a `(C*k*k) x (Ho*Wo)` column matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let k = g.kernel;
    let hw_out = ho * wo;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            let (y_lo, y_hi) = valid_range(h, ho, g, ki);
            for kj in 0..k {
                let (x_lo, x_hi) = valid_range(w, wo, g, kj);
                let row = (ci * k + ki) * k + kj;
                let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                dst[..y_lo * wo].fill(T::zero());
                dst[y_hi * wo..].fill(T::zero());
                for oy in y_lo..y_hi {
                    let iy = oy * g.stride + ki - g.pad;
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    drow[..x_lo].fill(T::zero());
                    drow[x_hi..].fill(T::zero());
                    if x_lo == x_hi {
                        continue;
                    }
                    let start = iy * w + x_lo * g.stride + kj - g.pad;
                    let src = &plane[start..];
                    if g.stride == 1 {
                        drow[x_lo..x_hi].copy_from_slice(&src[..x_hi - x_lo]);
                    } else {
                        for (d, &v) in drow[x_lo..x_hi].iter_mut().zip(src.iter().step_by(g.stride)) {
                            *d = v;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back and accumulates into `x`.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    ho: usize,
    wo: usize,
    x: &mut [T],
) {
    let k = g.kernel;
    let hw_out = ho * wo;
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            let (y_lo, y_hi) = valid_range(h, ho, g, ki);
            for kj in 0..k {
                let (x_lo, x_hi) = valid_range(w, wo, g, kj);
                if x_lo == x_hi {
                    continue;
                }
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * hw_out..(row + 1) * hw_out];
                for oy in y_lo..y_hi {
                    let iy = oy * g.stride + ki - g.pad;
                    let start = iy * w + x_lo * g.stride + kj - g.pad;
                    let srow = &src[oy * wo + x_lo..oy * wo + x_hi];
                    let dst = &mut plane[start..];
                    if g.stride == 1 {
                        for (d, &v) in dst.iter_mut().zip(srow) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst.iter_mut().step_by(g.stride).zip(srow) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// 2-D convolution, weights laid out `[out, in, k, k]`.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub geom: ConvGeom,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        geom: ConvGeom,
        init_std: f64,
        rng: &mut R,
    ) -> Self {
        let k = geom.kernel;
        Self {
            in_ch,
            out_ch,
            geom,
            weight: Param::normal(vec![out_ch, in_ch, k, k], init_std, rng),
            bias: Param::filled(vec![out_ch], T::zero()),
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let ho = self.geom.conv_out(h).expect("input smaller than kernel");
        let wo = self.geom.conv_out(w).expect("input smaller than kernel");
        (ho, wo)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.in_ch, "conv input channels");
        let (ho, wo) = self.out_hw(h, w);
        let kk = c * self.geom.kernel * self.geom.kernel;
        let mut cols = vec![T::zero(); kk * ho * wo];
        let mut y = Tensor::zeros([n, self.out_ch, ho, wo]);
        for s in 0..n {
            im2col(x.sample(s), c, h, w, self.geom, ho, wo, &mut cols);
            let out = y.sample_mut(s);
            for (o, b) in self.bias.value.iter().enumerate() {
                out[o * ho * wo..(o + 1) * ho * wo].iter_mut().for_each(|v| *v = *b);
            }
            matmul(self.out_ch, kk, ho * wo, &self.weight.value, false, &cols, false, out, true);
        }
        y
    }

    /// Accumulates weight/bias gradients; returns `dx` when `need_dx`.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let [n, c, h, w] = x.shape();
        let (ho, wo) = (dy.height(), dy.width());
        let kk = c * self.geom.kernel * self.geom.kernel;
        let hw = ho * wo;
        let mut cols = vec![T::zero(); kk * hw];
        let mut dcols = vec![T::zero(); kk * hw];
        let mut dx = need_dx.then(|| Tensor::zeros([n, c, h, w]));
        for s in 0..n {
            let g = dy.sample(s);
            for o in 0..self.out_ch {
                let mut acc = T::zero();
                for &v in &g[o * hw..(o + 1) * hw] {
                    acc += v;
                }
                self.bias.grad[o] += acc;
            }
            im2col(x.sample(s), c, h, w, self.geom, ho, wo, &mut cols);
            // dW (out x kk) += dy (out x hw) * cols^T (hw x kk)
            matmul(self.out_ch, hw, kk, g, false, &cols, true, &mut self.weight.grad, true);
            if let Some(dx) = dx.as_mut() {
                // dcols (kk x hw) = W^T (kk x out) * dy (out x hw)
                matmul(kk, self.out_ch, hw, &self.weight.value, true, g, false, &mut dcols, false);
                col2im(&dcols, c, h, w, self.geom, ho, wo, dx.sample_mut(s));
            }
        }
        dx
    }

    /// Gradient w.r.t. an input of shape `x_shape`, leaving parameter
    /// gradients untouched.
    pub fn input_gradient(&self, x_shape: [usize; 4], dy: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x_shape;
        let (ho, wo) = (dy.height(), dy.width());
        let kk = c * self.geom.kernel * self.geom.kernel;
        let mut dcols = vec![T::zero(); kk * ho * wo];
        let mut dx = Tensor::zeros(x_shape);
        for s in 0..n {
            matmul(kk, self.out_ch, ho * wo, &self.weight.value, true, dy.sample(s), false, &mut dcols, false);
            col2im(&dcols, c, h, w, self.geom, ho, wo, dx.sample_mut(s));
        }
        dx
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Transposed 2-D convolution, weights laid out `[in, out, k, k]`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub geom: ConvGeom,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        geom: ConvGeom,
        init_std: f64,
        rng: &mut R,
    ) -> Self {
        let k = geom.kernel;
        Self {
            in_ch,
            out_ch,
            geom,
            weight: Param::normal(vec![in_ch, out_ch, k, k], init_std, rng),
            bias: Param::filled(vec![out_ch], T::zero()),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, hi, wi] = x.shape();
        assert_eq!(c, self.in_ch, "transposed conv input channels");
        let (ho, wo) = (self.geom.transposed_out(hi), self.geom.transposed_out(wi));
        let kk = self.out_ch * self.geom.kernel * self.geom.kernel;
        let hw_in = hi * wi;
        let mut cols = vec![T::zero(); kk * hw_in];
        let mut y = Tensor::zeros([n, self.out_ch, ho, wo]);
        for s in 0..n {
            // cols (kk x hw_in) = W^T (kk x in) * x (in x hw_in)
            matmul(kk, c, hw_in, &self.weight.value, true, x.sample(s), false, &mut cols, false);
            let out = y.sample_mut(s);
            col2im(&cols, self.out_ch, ho, wo, self.geom, hi, wi, out);
            for (o, &b) in self.bias.value.iter().enumerate() {
                out[o * ho * wo..(o + 1) * ho * wo].iter_mut().for_each(|v| *v += b);
            }
        }
        y
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let [n, c, hi, wi] = x.shape();
        let (ho, wo) = (dy.height(), dy.width());
        let kk = self.out_ch * self.geom.kernel * self.geom.kernel;
        let hw_in = hi * wi;
        let hw_out = ho * wo;
        let mut dcols = vec![T::zero(); kk * hw_in];
        let mut dx = need_dx.then(|| Tensor::zeros([n, c, hi, wi]));
        for s in 0..n {
            let g = dy.sample(s);
            for o in 0..self.out_ch {
                let mut acc = T::zero();
                for &v in &g[o * hw_out..(o + 1) * hw_out] {
                    acc += v;
                }
                self.bias.grad[o] += acc;
            }
            im2col(g, self.out_ch, ho, wo, self.geom, hi, wi, &mut dcols);
            // dW (in x kk) += x (in x hw_in) * dcols^T (hw_in x kk)
            matmul(c, hw_in, kk, x.sample(s), false, &dcols, true, &mut self.weight.grad, true);
            if let Some(dx) = dx.as_mut() {
                // dx (in x hw_in) = W (in x kk) * dcols (kk x hw_in)
                matmul(c, kk, hw_in, &self.weight.value, false, &dcols, false, dx.sample_mut(s), false);
            }
        }
        dx
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Per-sample, per-channel normalization with a learned affine map.
#[derive(Clone, Debug)]
pub struct InstanceNorm<T> {
    pub channels: usize,
    pub eps: f64,
    pub gamma: Param<T>,
    pub beta: Param<T>,
}

impl<T: Real> InstanceNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            eps: 1e-5,
            gamma: Param::filled(vec![channels], T::one()),
            beta: Param::filled(vec![channels], T::zero()),
        }
    }

    fn stats(&self, plane: &[T]) -> (T, T) {
        let len = T::from_f64(plane.len() as f64);
        let mut sum = T::zero();
        for &v in plane {
            sum += v;
        }
        let mean = sum / len;
        let mut var = T::zero();
        for &v in plane {
            let d = v - mean;
            var += d * d;
        }
        let inv_std = T::one() / (var / len + T::from_f64(self.eps)).sqrt();
        (mean, inv_std)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.channels);
        let hw = h * w;
        let mut y = x.clone();
        for s in 0..n {
            let out = y.sample_mut(s);
            for ch in 0..c {
                let plane = &mut out[ch * hw..(ch + 1) * hw];
                let (mean, inv_std) = self.stats(plane);
                let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
                plane.iter_mut().for_each(|v| *v = (*v - mean) * inv_std * g + b);
            }
        }
        y
    }

    /// Accumulates `gamma`/`beta` gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (dx, sums) = self.gradients(x, dy);
        for (i, (sum_dy, sum_dy_xhat)) in sums.into_iter().enumerate() {
            let ch = i % self.channels;
            self.beta.grad[ch] += sum_dy;
            self.gamma.grad[ch] += sum_dy_xhat;
        }
        dx
    }

    /// Gradient w.r.t. the input only.
    pub fn input_gradient(&self, x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        self.gradients(x, dy).0
    }

    /// Input gradient plus `(sum dy, sum dy * xhat)` per sample and channel.
    fn gradients(&self, x: &Tensor<T>, dy: &Tensor<T>) -> (Tensor<T>, Vec<(T, T)>) {
        let [n, c, h, w] = x.shape();
        let hw = h * w;
        let len = T::from_f64(hw as f64);
        let mut dx = Tensor::zeros(x.shape());
        let mut sums = Vec::with_capacity(n * c);
        for s in 0..n {
            let xs = x.sample(s);
            let gs = dy.sample(s);
            let dxs = dx.sample_mut(s);
            for ch in 0..c {
                let plane = &xs[ch * hw..(ch + 1) * hw];
                let grad = &gs[ch * hw..(ch + 1) * hw];
                let (mean, inv_std) = self.stats(plane);
                let g = self.gamma.value[ch];
                let mut sum_dy = T::zero();
                let mut sum_dy_xhat = T::zero();
                for (&v, &d) in plane.iter().zip(grad) {
                    let xhat = (v - mean) * inv_std;
                    sum_dy += d;
                    sum_dy_xhat += d * xhat;
                }
                sums.push((sum_dy, sum_dy_xhat));
                // dx = g * inv_std / N * (N dy - sum(dy) - xhat * sum(dy xhat))
                let scale = g * inv_std / len;
                for ((o, &v), &d) in dxs[ch * hw..(ch + 1) * hw].iter_mut().zip(plane).zip(grad) {
                    let xhat = (v - mean) * inv_std;
                    *o = scale * (len * d - sum_dy - xhat * sum_dy_xhat);
                }
            }
        }
        (dx, sums)
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.gamma, &mut self.beta]
    }
}

/// Leaky rectifier; `slope = 0` gives a plain ReLU.
pub fn leaky_relu<T: Real>(x: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::from_f64(slope);
    x.map(|v| if v > T::zero() { v } else { v * s })
}

pub fn leaky_relu_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::from_f64(slope);
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &d)| if v > T::zero() { d } else { d * s })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

pub fn tanh<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

/// Gradient of `tanh` given its output `y`.
pub fn tanh_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&t, &d)| d * (T::one() - t * t))
        .collect();
    Tensor::from_vec(y.shape(), data)
}

#[inline]
pub fn sigmoid_scalar<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Gradient of the logistic function given its output `p`.
pub fn sigmoid_backward<T: Real>(p: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = p
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&q, &d)| d * q * (T::one() - q))
        .collect();
    Tensor::from_vec(p.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(x: &Tensor<f64>, conv: &Conv2d<f64>) -> Tensor<f64> {
        let [n, c, h, w] = x.shape();
        let g = conv.geom;
        let ho = g.conv_out(h).unwrap();
        let wo = g.conv_out(w).unwrap();
        let k = g.kernel;
        let mut y = Tensor::zeros([n, conv.out_ch, ho, wo]);
        for s in 0..n {
            for o in 0..conv.out_ch {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = conv.bias.value[o];
                        for ci in 0..c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let xv = x.sample(s)[ci * h * w + iy as usize * w + ix as usize];
                                    acc += xv * conv.weight.value[((o * c + ci) * k + ki) * k + kj];
                                }
                            }
                        }
                        y.sample_mut(s)[(o * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for geom in [ConvGeom::new(4, 2, 1), ConvGeom::new(3, 1, 1), ConvGeom::new(4, 1, 1)] {
            let mut conv = Conv2d::<f64>::new(3, 5, geom, 0.5, &mut rng);
            conv.bias.value.iter_mut().enumerate().for_each(|(i, b)| *b = i as f64 * 0.1);
            let x = Tensor::randn([2, 3, 9, 8], 1.0, &mut rng);
            let fast = conv.forward(&x);
            let slow = naive_conv(&x, &conv);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    /// Per-element unfold with explicit bounds checks.
    fn naive_im2col(x: &[f64], c: usize, h: usize, w: usize, g: ConvGeom, ho: usize, wo: usize) -> Vec<f64> {
        let k = g.kernel;
        let mut cols = vec![0.0; c * k * k * ho * wo];
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                cols[(((ci * k + ki) * k + kj) * ho + oy) * wo + ox] =
                                    x[(ci * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    #[test]
    fn unfold_matches_per_element_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for kernel in 1..=5 {
            for stride in 1..=3 {
                for pad in 0..=2 {
                    for (h, w) in [(7, 9), (kernel, kernel + 2), (12, 5)] {
                        let g = ConvGeom::new(kernel, stride, pad);
                        let (Some(ho), Some(wo)) = (g.conv_out(h), g.conv_out(w)) else { continue };
                        if ho == 0 || wo == 0 {
                            continue;
                        }
                        let x: Vec<f64> = (0..2 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
                        let mut cols = vec![f64::NAN; 2 * kernel * kernel * ho * wo];
                        im2col(&x, 2, h, w, g, ho, wo, &mut cols);
                        assert_eq!(cols, naive_im2col(&x, 2, h, w, g, ho, wo), "k{kernel} s{stride} p{pad} {h}x{w}");
                        // col2im is the adjoint: <im2col(x), y> == <x, col2im(y)>.
                        let y: Vec<f64> = (0..cols.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                        let mut back = vec![0.0; x.len()];
                        col2im(&y, 2, h, w, g, ho, wo, &mut back);
                        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
                        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
                        assert!((lhs - rhs).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> with shared weights and zero bias.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let geom = ConvGeom::new(4, 2, 1);
        let conv = Conv2d::<f64>::new(3, 4, geom, 0.5, &mut rng);
        let mut convt = ConvTranspose2d::<f64>::new(4, 3, geom, 0.5, &mut rng);
        convt.weight.value = conv.weight.value.clone();
        let x = Tensor::randn([1, 3, 8, 8], 1.0, &mut rng);
        let y = Tensor::randn([1, 4, 4, 4], 1.0, &mut rng);
        let lhs: f64 = conv.forward(&x).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(convt.forward(&y).data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        assert_eq!(convt.forward(&y).shape(), [1, 3, 8, 8]);
    }

    #[test]
    fn instance_norm_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let norm = InstanceNorm::<f64>::new(2);
        let x = Tensor::randn([2, 2, 5, 5], 3.0, &mut rng).map(|v| v + 7.0);
        let y = norm.forward(&x);
        for s in 0..2 {
            for ch in 0..2 {
                let plane = &y.sample(s)[ch * 25..(ch + 1) * 25];
                let mean: f64 = plane.iter().sum::<f64>() / 25.0;
                let var: f64 = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 25.0;
                assert!(mean.abs() < 1e-12);
                assert!((var - 1.0).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn geometry_arithmetic() {
        let g = ConvGeom::new(4, 2, 1);
        assert_eq!(g.conv_out(256), Some(128));
        assert_eq!(g.transposed_out(128), 256);
        assert_eq!(ConvGeom::new(4, 1, 1).conv_out(32), Some(31));
        assert_eq!(ConvGeom::new(4, 1, 0).conv_out(2), None);
    }
}
