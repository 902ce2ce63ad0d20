//! Convolutional patch discriminator producing a grid of logits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{leaky_relu, leaky_relu_backward, Conv2d, ConvGeom, InstanceNorm, Param};
use super::tensor::{Real, Tensor};
use super::unet::NormKind;

const STRIDED: ConvGeom = ConvGeom::new(4, 2, 1);
const UNSTRIDED: ConvGeom = ConvGeom::new(4, 1, 1);
const SLOPE: f64 = 0.2;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchGanSpec {
    pub in_channels: usize,
    pub base_width: usize,
    pub n_layers: usize,
    pub norm: NormKind,
}

impl PatchGanSpec {
    fn block_geoms(&self) -> Vec<ConvGeom> {
        let mut g = vec![STRIDED; self.n_layers];
        g.push(UNSTRIDED);
        g.push(UNSTRIDED);
        g
    }

    /// Side of the logit grid for a square input of side `input`, from
    /// convolution arithmetic alone. `None` if some layer would not fit.
    pub fn output_side(&self, input: usize) -> Option<usize> {
        self.block_geoms()
            .iter()
            .try_fold(input, |side, g| g.conv_out(side).filter(|&s| s > 0))
    }

    /// Receptive field of one logit, in input pixels.
    pub fn receptive_field(&self) -> usize {
        self.block_geoms()
            .iter()
            .rev()
            .fold(1, |rf, g| (rf - 1) * g.stride + g.kernel)
    }
}

#[derive(Clone, Debug)]
struct Block<T> {
    conv: Conv2d<T>,
    norm: Option<InstanceNorm<T>>,
    activate: bool,
}

#[derive(Debug)]
pub struct PatchGanTrace<T> {
    inputs: Vec<Tensor<T>>,
    convs: Vec<Tensor<T>>,
    normed: Vec<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct PatchGan<T> {
    spec: PatchGanSpec,
    blocks: Vec<Block<T>>,
}

impl<T: Real> PatchGan<T> {
    pub fn new<R: Rng + ?Sized>(spec: PatchGanSpec, rng: &mut R) -> Self {
        assert!(spec.n_layers >= 1);
        let width = |i: usize| spec.base_width * (1usize << i.min(3));
        let geoms = spec.block_geoms();
        let last = geoms.len() - 1;
        let mut blocks = Vec::with_capacity(geoms.len());
        let mut cin = spec.in_channels;
        for (i, g) in geoms.into_iter().enumerate() {
            let cout = if i == last { 1 } else { width(i) };
            let norm = (i > 0 && i < last && spec.norm == NormKind::Instance)
                .then(|| InstanceNorm::new(cout));
            blocks.push(Block {
                conv: Conv2d::new(cin, cout, g, INIT_STD, rng),
                norm,
                activate: i < last,
            });
            cin = cout;
        }
        Self { spec, blocks }
    }

    pub fn spec(&self) -> &PatchGanSpec {
        &self.spec
    }

    fn run(&self, x: &Tensor<T>, mut trace: Option<&mut PatchGanTrace<T>>) -> Tensor<T> {
        let mut cur = x.clone();
        for blk in &self.blocks {
            let conv = blk.conv.forward(&cur);
            let normed = match &blk.norm {
                Some(n) => n.forward(&conv),
                None => conv.clone(),
            };
            let out = if blk.activate { leaky_relu(&normed, SLOPE) } else { normed.clone() };
            if let Some(t) = trace.as_deref_mut() {
                t.inputs.push(cur);
                t.convs.push(conv);
                t.normed.push(normed);
            }
            cur = out;
        }
        cur
    }

    /// Logit grid `[n, 1, S, S]` for a channel-stacked input pair.
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.run(x, None)
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> (Tensor<T>, PatchGanTrace<T>) {
        let mut trace = PatchGanTrace {
            inputs: Vec::new(),
            convs: Vec::new(),
            normed: Vec::new(),
        };
        let y = self.run(x, Some(&mut trace));
        (y, trace)
    }

    /// Accumulates parameter gradients.
    pub fn backward(&mut self, trace: &PatchGanTrace<T>, d_logits: &Tensor<T>) {
        let mut grad = d_logits.clone();
        for (i, blk) in self.blocks.iter_mut().enumerate().rev() {
            if blk.activate {
                grad = leaky_relu_backward(&trace.normed[i], &grad, SLOPE);
            }
            if let Some(n) = blk.norm.as_mut() {
                grad = n.backward(&trace.convs[i], &grad);
            }
            if let Some(dx) = blk.conv.backward(&trace.inputs[i], &grad, i > 0) {
                grad = dx;
            }
        }
    }

    /// Gradient w.r.t. the input pair; parameter gradients are untouched.
    pub fn input_gradient(&self, trace: &PatchGanTrace<T>, d_logits: &Tensor<T>) -> Tensor<T> {
        let mut grad = d_logits.clone();
        for (i, blk) in self.blocks.iter().enumerate().rev() {
            if blk.activate {
                grad = leaky_relu_backward(&trace.normed[i], &grad, SLOPE);
            }
            if let Some(n) = &blk.norm {
                grad = n.input_gradient(&trace.convs[i], &grad);
            }
            grad = blk.conv.input_gradient(trace.inputs[i].shape(), &grad);
        }
        grad
    }

    pub fn named_params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            let [w, bias] = b.conv.params();
            out.push((format!("block{i}.conv.weight"), w));
            out.push((format!("block{i}.conv.bias"), bias));
            if let Some(n) = &b.norm {
                let [g, bt] = n.params();
                out.push((format!("block{i}.norm.gamma"), g));
                out.push((format!("block{i}.norm.beta"), bt));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for b in self.blocks.iter_mut() {
            out.extend(b.conv.params_mut());
            if let Some(n) = b.norm.as_mut() {
                out.extend(n.params_mut());
            }
        }
        out
    }
}
