//! Encoder-decoder with skip connections.
//!
//! Each encoder level halves the spatial extent with a 4x4 stride-2
//! convolution; each decoder level doubles it with a 4x4 stride-2 transposed
//! convolution and concatenates the mirrored encoder activation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    leaky_relu, leaky_relu_backward, sigmoid, sigmoid_backward, tanh, tanh_backward, Conv2d,
    ConvGeom, ConvTranspose2d, InstanceNorm, Param,
};
use super::tensor::{Real, Tensor};

const DOWN: ConvGeom = ConvGeom::new(4, 2, 1);
const ENCODER_SLOPE: f64 = 0.2;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    None,
    Instance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Outputs in `[-1, 1]`.
    Tanh,
    /// Outputs in `[0, 1]`.
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    pub norm: NormKind,
    pub head: Head,
}

impl UNetSpec {
    /// Feature width at encoder level `i`, capped at 8x the base width.
    pub fn width(&self, level: usize) -> usize {
        self.base_width * (1usize << level.min(3))
    }

    /// Smallest side length the network accepts.
    pub fn side_multiple(&self) -> usize {
        1 << self.depth
    }
}

#[derive(Clone, Debug)]
struct Down<T> {
    conv: Conv2d<T>,
    norm: Option<InstanceNorm<T>>,
    leaky_input: bool,
}

#[derive(Clone, Debug)]
struct Up<T> {
    conv: ConvTranspose2d<T>,
    norm: Option<InstanceNorm<T>>,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug)]
pub struct UNetTrace<T> {
    // per encoder level: block input, conv output (pre-norm), block output
    down_in: Vec<Tensor<T>>,
    down_conv: Vec<Tensor<T>>,
    down_out: Vec<Tensor<T>>,
    // per decoder level, indexed like the encoder
    up_in: Vec<Option<Tensor<T>>>,
    up_conv: Vec<Option<Tensor<T>>>,
    logits: Option<Tensor<T>>,
    output: Option<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct UNet<T> {
    spec: UNetSpec,
    down: Vec<Down<T>>,
    up: Vec<Up<T>>,
}

impl<T: Real> UNet<T> {
    pub fn new<R: Rng + ?Sized>(spec: UNetSpec, rng: &mut R) -> Self {
        assert!(spec.depth >= 1, "depth must be at least 1");
        let d = spec.depth;
        let with_norm = |ch: usize| match spec.norm {
            NormKind::Instance => Some(InstanceNorm::new(ch)),
            NormKind::None => None,
        };
        let mut down = Vec::with_capacity(d);
        for i in 0..d {
            let cin = if i == 0 { spec.in_channels } else { spec.width(i - 1) };
            let cout = spec.width(i);
            let innermost = i == d - 1;
            down.push(Down {
                conv: Conv2d::new(cin, cout, DOWN, INIT_STD, rng),
                norm: if i == 0 || innermost { None } else { with_norm(cout) },
                leaky_input: i > 0,
            });
        }
        // decoder level i maps back to the resolution of encoder input i
        let mut up: Vec<Up<T>> = Vec::with_capacity(d);
        for i in 0..d {
            let cin = if i == d - 1 { spec.width(i) } else { 2 * spec.width(i) };
            let cout = if i == 0 { spec.out_channels } else { spec.width(i - 1) };
            up.push(Up {
                conv: ConvTranspose2d::new(cin, cout, DOWN, INIT_STD, rng),
                norm: if i == 0 { None } else { with_norm(cout) },
            });
        }
        Self { spec, down, up }
    }

    pub fn spec(&self) -> &UNetSpec {
        &self.spec
    }

    /// Checks that `x` has a shape this network maps to the same shape.
    pub fn check_input(&self, shape: [usize; 4]) -> Result<(), String> {
        let [_, c, h, w] = shape;
        let m = self.spec.side_multiple();
        if c != self.spec.in_channels {
            return Err(format!("expected {} input channel(s), got {c}", self.spec.in_channels));
        }
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(format!("spatial dims {h}x{w} must be positive multiples of {m}"));
        }
        Ok(())
    }

    fn run(&self, x: &Tensor<T>, mut trace: Option<&mut UNetTrace<T>>) -> Tensor<T> {
        let d = self.spec.depth;
        let mut skips: Vec<Tensor<T>> = Vec::with_capacity(d);
        let mut cur = x.clone();
        for blk in &self.down {
            let act = if blk.leaky_input { leaky_relu(&cur, ENCODER_SLOPE) } else { cur.clone() };
            let conv = blk.conv.forward(&act);
            let out = match &blk.norm {
                Some(n) => n.forward(&conv),
                None => conv.clone(),
            };
            if let Some(t) = trace.as_deref_mut() {
                t.down_in.push(cur);
                t.down_conv.push(conv);
            }
            skips.push(out.clone());
            cur = out;
        }
        let mut up_in = vec![None; d];
        let mut up_conv = vec![None; d];
        for i in (0..d).rev() {
            let input = if i == d - 1 {
                skips[i].clone()
            } else {
                cur.concat_channels(&skips[i])
            };
            let blk = &self.up[i];
            let conv = blk.conv.forward(&leaky_relu(&input, 0.0));
            cur = match &blk.norm {
                Some(n) => n.forward(&conv),
                None => conv.clone(),
            };
            if trace.is_some() {
                up_in[i] = Some(input);
                up_conv[i] = Some(conv);
            }
        }
        if let Some(t) = trace {
            t.down_out = skips;
            t.up_in = up_in;
            t.up_conv = up_conv;
        }
        cur
    }

    fn head(&self, logits: &Tensor<T>) -> Tensor<T> {
        match self.spec.head {
            Head::Tanh => tanh(logits),
            Head::Sigmoid => sigmoid(logits),
        }
    }

    /// Inference pass: output after the head nonlinearity.
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.head(&self.run(x, None))
    }

    /// Pre-head activations.
    pub fn forward_logits(&self, x: &Tensor<T>) -> Tensor<T> {
        self.run(x, None)
    }

    /// Training pass returning the head output and the trace for `backward`.
    pub fn forward_train(&self, x: &Tensor<T>) -> (Tensor<T>, UNetTrace<T>) {
        let mut trace = UNetTrace {
            down_in: Vec::new(),
            down_conv: Vec::new(),
            down_out: Vec::new(),
            up_in: Vec::new(),
            up_conv: Vec::new(),
            logits: None,
            output: None,
        };
        let logits = self.run(x, Some(&mut trace));
        let out = self.head(&logits);
        trace.logits = Some(logits);
        trace.output = Some(out.clone());
        (out, trace)
    }

    /// Pre-head activations recorded in a training trace.
    pub fn trace_logits<'a>(&self, trace: &'a UNetTrace<T>) -> &'a Tensor<T> {
        trace.logits.as_ref().expect("trace from forward_train")
    }

    /// Backpropagates a gradient w.r.t. the head output.
    pub fn backward(&mut self, trace: &UNetTrace<T>, d_out: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let out = trace.output.as_ref().expect("trace from forward_train");
        let d_logits = match self.spec.head {
            Head::Tanh => tanh_backward(out, d_out),
            Head::Sigmoid => sigmoid_backward(out, d_out),
        };
        self.backward_logits(trace, &d_logits, need_dx)
    }

    /// Backpropagates a gradient w.r.t. the pre-head activations.
    pub fn backward_logits(
        &mut self,
        trace: &UNetTrace<T>,
        d_logits: &Tensor<T>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let d = self.spec.depth;
        // gradients flowing into each encoder output via skip connections
        let mut d_skip: Vec<Option<Tensor<T>>> = vec![None; d];
        let mut grad = d_logits.clone();
        for i in 0..d {
            let blk = &mut self.up[i];
            let conv_out = trace.up_conv[i].as_ref().expect("decoder trace");
            let input = trace.up_in[i].as_ref().expect("decoder trace");
            let d_conv = match blk.norm.as_mut() {
                Some(n) => n.backward(conv_out, &grad),
                None => grad,
            };
            let relu_in = leaky_relu(input, 0.0);
            let d_relu = blk.conv.backward(&relu_in, &d_conv, true).expect("dx requested");
            let d_input = leaky_relu_backward(input, &d_relu, 0.0);
            if i == d - 1 {
                d_skip[i] = Some(d_input);
                grad = Tensor::zeros([0, 0, 0, 0]);
            } else {
                let up_ch = input.channels() - trace.down_out[i].channels();
                let (d_prev, d_enc) = d_input.split_channels(up_ch);
                d_skip[i] = Some(d_enc);
                grad = d_prev;
            }
        }
        // encoder, innermost first; each level receives its skip gradient plus
        // the gradient from the level below
        let mut carry: Option<Tensor<T>> = None;
        for i in (0..d).rev() {
            let mut g = d_skip[i].take().expect("skip gradient");
            if let Some(c) = carry.take() {
                g.data_mut().iter_mut().zip(c.data()).for_each(|(a, &b)| *a += b);
            }
            let blk = &mut self.down[i];
            let conv_out = &trace.down_conv[i];
            let d_conv = match blk.norm.as_mut() {
                Some(n) => n.backward(conv_out, &g),
                None => g,
            };
            let input = &trace.down_in[i];
            let want_dx = i > 0 || need_dx;
            if blk.leaky_input {
                let act = leaky_relu(input, ENCODER_SLOPE);
                let d_act = blk.conv.backward(&act, &d_conv, true).expect("dx requested");
                carry = Some(leaky_relu_backward(input, &d_act, ENCODER_SLOPE));
            } else {
                carry = blk.conv.backward(input, &d_conv, want_dx);
            }
        }
        carry
    }

    /// Parameters in a fixed order with stable names.
    pub fn named_params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.down.iter().enumerate() {
            let [w, bias] = b.conv.params();
            out.push((format!("down{i}.conv.weight"), w));
            out.push((format!("down{i}.conv.bias"), bias));
            if let Some(n) = &b.norm {
                let [g, bt] = n.params();
                out.push((format!("down{i}.norm.gamma"), g));
                out.push((format!("down{i}.norm.beta"), bt));
            }
        }
        for (i, b) in self.up.iter().enumerate() {
            let [w, bias] = b.conv.params();
            out.push((format!("up{i}.conv.weight"), w));
            out.push((format!("up{i}.conv.bias"), bias));
            if let Some(n) = &b.norm {
                let [g, bt] = n.params();
                out.push((format!("up{i}.norm.gamma"), g));
                out.push((format!("up{i}.norm.beta"), bt));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for b in self.down.iter_mut() {
            out.extend(b.conv.params_mut());
            if let Some(n) = b.norm.as_mut() {
                out.extend(n.params_mut());
            }
        }
        for b in self.up.iter_mut() {
            out.extend(b.conv.params_mut());
            if let Some(n) = b.norm.as_mut() {
                out.extend(n.params_mut());
            }
        }
        out
    }
}
