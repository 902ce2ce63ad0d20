//! Central-difference check of the adversarial + L1 objective on tiny networks.
//!
//! Analytic gradients come from the networks in precision `T`; the reference
//! differences are always taken on an `f64` twin with identical parameters.

use dapi2ck::nn::{flatten_params, load_flat, Head, NormKind, PatchGan, PatchGanSpec, Real, Tensor, UNet, UNetSpec};
use dapi2ck::translation::{discriminator_gradients, gan_losses_for_output, gan_step_losses, generator_gradients};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Gradients below this magnitude are compared absolutely.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct TinyCase {
    pub generator: UNetSpec,
    pub discriminator: PatchGanSpec,
    pub side: usize,
    pub batch: usize,
    pub lambda: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub case: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

pub fn random_case(rng: &mut ChaCha8Rng) -> TinyCase {
    let norm = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { NormKind::Instance } else { NormKind::None };
    let n_layers = rng.random_range(1..=2);
    let side = if n_layers == 1 { 8 } else { 16 };
    let depth = rng.random_range(1..=if side == 8 { 2 } else { 3 });
    TinyCase {
        generator: UNetSpec {
            in_channels: 1,
            out_channels: 1,
            base_width: rng.random_range(1..=3),
            depth,
            norm: norm(rng),
            head: Head::Tanh,
        },
        discriminator: PatchGanSpec { in_channels: 2, base_width: rng.random_range(1..=3), n_layers, norm: norm(rng) },
        side,
        batch: rng.random_range(1..=2),
        lambda: [0.0, 1.0, 10.0, 100.0][rng.random_range(0..4)],
    }
}

fn randomize(params: Vec<&mut dapi2ck::nn::Param<f64>>, rng: &mut ChaCha8Rng) {
    for p in params {
        p.value.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    }
}

fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(REL_FLOOR)
}

/// Central difference along coordinate `i`; `loss_at` loads a parameter
/// vector and evaluates the loss there.
fn central_difference(base: &[f64], i: usize, mut loss_at: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut v = base.to_vec();
    v[i] += FD_STEP;
    let lp = loss_at(&v);
    v[i] -= 2.0 * FD_STEP;
    let lm = loss_at(&v);
    loss_at(base);
    (lp - lm) / (2.0 * FD_STEP)
}

/// Checks `n_generator` generator and `n_discriminator` discriminator
/// parameters drawn at random.
pub fn check_case<T: Real>(case: &TinyCase, n_generator: usize, n_discriminator: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g64 = UNet::<f64>::new(case.generator.clone(), &mut rng);
    let mut d64 = PatchGan::<f64>::new(case.discriminator.clone(), &mut rng);
    randomize(g64.params_mut(), &mut rng);
    randomize(d64.params_mut(), &mut rng);
    let shape = [case.batch, 1, case.side, case.side];
    let dapi64 = Tensor::<f64>::randn(shape, 1.0, &mut rng);
    let target64 = Tensor::<f64>::from_vec(shape, (0..dapi64.len()).map(|_| rng.random_range(-1.0..1.0)).collect());

    let g_flat = flatten_params(g64.named_params().into_iter().map(|(_, p)| p));
    let d_flat = flatten_params(d64.named_params().into_iter().map(|(_, p)| p));
    let mut g = UNet::<T>::new(case.generator.clone(), &mut rng);
    let mut d = PatchGan::<T>::new(case.discriminator.clone(), &mut rng);
    load_flat(g.params_mut(), &g_flat);
    load_flat(d.params_mut(), &d_flat);
    let (dapi, target) = (dapi64.cast::<T>(), target64.cast::<T>());

    g.params_mut().into_iter().for_each(|p| p.zero_grad());
    d.params_mut().into_iter().for_each(|p| p.zero_grad());
    generator_gradients(&mut g, &mut d, &dapi, &target, case.lambda);
    let g_grad: Vec<f64> = g.params_mut().iter().flat_map(|p| p.grad.iter().map(|v| v.to_f64())).collect();
    let fake = g.forward(&dapi);
    d.params_mut().into_iter().for_each(|p| p.zero_grad());
    discriminator_gradients(&mut d, &dapi, &fake, &target);
    let d_grad: Vec<f64> = d.params_mut().iter().flat_map(|p| p.grad.iter().map(|v| v.to_f64())).collect();

    let mut report = GradCheck {
        case: format!("{case:?}"),
        checked: 0,
        max_rel_err: 0.0,
        worst: String::new(),
    };
    let mut record = |what: &str, i: usize, analytic: f64, fd: f64| {
        let e = rel_err(analytic, fd);
        report.checked += 1;
        if e >= report.max_rel_err {
            report.max_rel_err = e;
            report.worst = format!("{what} param {i}: analytic {analytic:e} vs central difference {fd:e}");
        }
    };

    for _ in 0..n_generator {
        let i = rng.random_range(0..g_flat.len());
        let fd = central_difference(&g_flat, i, |v| {
            load_flat(g64.params_mut(), v);
            gan_step_losses(&g64, &d64, &dapi64, &target64, case.lambda).unwrap().g_loss
        });
        record("generator", i, g_grad[i], fd);
    }
    let fake64 = g64.forward(&dapi64);
    for _ in 0..n_discriminator {
        let i = rng.random_range(0..d_flat.len());
        let fd = central_difference(&d_flat, i, |v| {
            load_flat(d64.params_mut(), v);
            gan_losses_for_output(&d64, &dapi64, &fake64, &target64, case.lambda).unwrap().d_loss
        });
        record("discriminator", i, d_grad[i], fd);
    }
    report
}
