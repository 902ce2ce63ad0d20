use dapi2ck::nn::Tensor;
use dapi2ck::phantom::{build_phantom_dataset, generate_phantom, Manifest, PhantomSpec, SplitRatios};
use dapi2ck::pipeline::normalize_intensity;
use dapi2ck::translation::{
    discriminator_forward, gan_losses_for_output, gan_step_losses, generator_forward, init_discriminator,
    init_generator, train_dapi2ck, train_pairs, Checkpoint, PairSet,
};
use dapi2ck::{DiscriminatorConfig, Error, GeneratorConfig, Plane, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_generator() -> GeneratorConfig {
    GeneratorConfig { base_width: 2, depth: 4, ..GeneratorConfig::default() }
}

fn tiny_discriminator() -> DiscriminatorConfig {
    DiscriminatorConfig { base_width: 2, ..DiscriminatorConfig::default() }
}

fn random_plane(side: usize, rng: &mut ChaCha8Rng) -> Plane {
    Plane::new(side, side, (0..side * side).map(|_| rng.random_range(-1.0f32..1.0)).collect())
}

fn phantom_pairs(n: usize, seed: u64) -> PairSet {
    let mut set = PairSet { ids: Vec::new(), dapi: Vec::new(), target: Vec::new() };
    for i in 0..n {
        let p = generate_phantom(&PhantomSpec { seed: seed + i as u64, ..PhantomSpec::default() }).unwrap();
        set.ids.push(format!("p{i}"));
        set.dapi.push(normalize_intensity(&p.dapi, 1.0, 99.0));
        set.target.push(normalize_intensity(&p.ck_true, 1.0, 99.0));
    }
    set
}

fn train_config(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, seed: 17, ..TrainConfig::default() }
}

#[test]
fn generator_preserves_shape_and_range() {
    let g = init_generator(&GeneratorConfig::default(), 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_plane(256, &mut rng);
    let y = generator_forward(&g, &x).unwrap();
    assert_eq!(y.dims(), (256, 256));
    assert!(y.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert_eq!(y, generator_forward(&g, &x).unwrap());
    assert_eq!(g.forward(&Tensor::<f32>::zeros([1, 1, 128, 128])).shape(), [1, 1, 128, 128]);
}

#[test]
fn generator_rejects_bad_shapes_naming_both() {
    let g = init_generator(&GeneratorConfig::default(), 3);
    let err = generator_forward(&g, &Plane::filled(250, 256, 0.0)).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }));
    let msg = err.to_string();
    assert!(msg.contains("256") && msg.contains("250"), "{msg}");
}

#[test]
fn discriminator_grid_follows_convolution_arithmetic() {
    // 4x4 kernels with padding 1: stride 2 gives floor(s / 2), stride 1 gives s - 1.
    let arithmetic = |n_layers: usize| {
        let mut s = 256usize;
        for _ in 0..n_layers {
            s = (s + 2 - 4) / 2 + 1;
        }
        s - 2
    };
    assert_eq!(arithmetic(3), 30);
    for n_layers in 1..=4 {
        let cfg = DiscriminatorConfig { n_layers, base_width: 2, ..DiscriminatorConfig::default() };
        assert_eq!(cfg.output_side(256), Some(arithmetic(n_layers)));
        let d = init_discriminator(&cfg, 1);
        let grid = discriminator_forward(&d, &Plane::filled(256, 256, 0.1), &Plane::filled(256, 256, -0.2)).unwrap();
        assert_eq!(grid.dims(), (arithmetic(n_layers), arithmetic(n_layers)));
    }
    let d = init_discriminator(&DiscriminatorConfig::default(), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (a, b) = (random_plane(256, &mut rng), random_plane(256, &mut rng));
    assert_eq!(discriminator_forward(&d, &a, &b).unwrap(), discriminator_forward(&d, &a, &b).unwrap());
}

/// Largest output change per unit input change along `direction`.
fn gain(g: &dapi2ck::nn::UNet<f32>, base_input: &Plane, direction: &Plane, eps: f32) -> f64 {
    let base = generator_forward(g, base_input).unwrap();
    let moved = Plane::new(256, 256, base_input.data().iter().zip(direction.data()).map(|(a, d)| a + eps * d).collect());
    let y = generator_forward(g, &moved).unwrap();
    let diff = y.data().iter().zip(base.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    diff as f64 / eps as f64
}

#[test]
fn output_perturbation_is_bounded_and_stable() {
    let g = init_generator(&GeneratorConfig::default(), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let direction = random_plane(256, &mut rng);
    // Instance norm rescales a near-constant signal to unit variance, so at
    // all-zeros input the output change saturates instead of scaling with eps.
    let zero = Plane::filled(256, 256, 0.0);
    let at_zero = gain(&g, &zero, &direction, 1e-3) * 1e-3;
    assert!(at_zero.is_finite() && at_zero > 0.0 && at_zero <= 2.0, "{at_zero}");
    assert_eq!(at_zero, gain(&init_generator(&GeneratorConfig::default(), 5), &zero, &direction, 1e-3) * 1e-3);
    // Around a textured input the response is locally linear.
    let textured = random_plane(256, &mut rng).map(|v| 0.5 * v);
    let (g1, g2) = (gain(&g, &textured, &direction, 1e-2), gain(&g, &textured, &direction, 1e-3));
    assert!(g1.is_finite() && g1 > 0.0, "gain {g1}");
    assert!((g1 - g2).abs() <= 0.25 * g1.max(g2), "gain {g1} at 1e-2 vs {g2} at 1e-3");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn loss_decomposes_into_adversarial_and_l1(seed: u64, lambda in 0.0f64..200.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = init_generator(&tiny_generator(), seed);
        let d = init_discriminator(&tiny_discriminator(), seed);
        let dapi = Tensor::<f32>::randn([1, 1, 64, 64], 0.5, &mut rng);
        let target = Tensor::<f32>::randn([1, 1, 64, 64], 0.5, &mut rng);
        let l = gan_step_losses(&g, &d, &dapi, &target, lambda).unwrap();
        prop_assert!((l.g_loss - lambda * l.l1 - l.adv).abs() <= 4.0 * f64::EPSILON * l.g_loss.abs().max(1.0));
        prop_assert!(l.l1 > 0.0 && l.adv >= 0.0 && l.d_loss >= 0.0);
        let exact = gan_losses_for_output(&d, &dapi, &target, &target, lambda).unwrap();
        prop_assert_eq!(exact.l1, 0.0);
        prop_assert_eq!(exact.g_loss, exact.adv);
        let zero = gan_step_losses(&g, &d, &dapi, &target, 0.0).unwrap();
        prop_assert_eq!(zero.g_loss, zero.adv);
    }
}

#[test]
fn checkpoint_round_trip_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = phantom_pairs(2, 40);
    let ck = train_pairs(&pairs, &pairs, &train_config(1), &tiny_generator(), &tiny_discriminator(), None).unwrap();
    let path = dir.path().join("g.ckpt");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.training_log, ck.training_log);
    assert_eq!(back.identifier(), ck.identifier());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let x = random_plane(256, &mut rng);
        assert_eq!(generator_forward(&ck.generator, &x).unwrap(), generator_forward(&back.generator, &x).unwrap());
    }
    let exported = ck.export_inference();
    exported.save(&path).unwrap();
    let slim = Checkpoint::load(&path).unwrap();
    assert!(slim.discriminator_config.is_none() && slim.state.is_none());
}

#[test]
fn training_contract_resume_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let train = phantom_pairs(8, 100);
    let val = phantom_pairs(2, 200);
    let log = dir.path().join("log.jsonl");
    let cfg = TrainConfig { log_path: Some(log.clone()), ..train_config(2) };
    let full = train_pairs(&train, &val, &cfg, &tiny_generator(), &tiny_discriminator(), None).unwrap();
    assert_eq!(full.training_log.len(), 2);
    for r in &full.training_log {
        assert!([r.g_loss, r.d_loss, r.adv, r.l1, r.val_l1].iter().all(|v| v.is_finite()));
    }
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 2);
    let best = full.best_epoch.unwrap();
    let best_val = full.training_log.iter().map(|r| r.val_l1).fold(f64::INFINITY, f64::min);
    assert_eq!(full.training_log[best - 1].val_l1, best_val);

    // A second run with the same seed repeats the losses.
    let again = train_pairs(&train, &val, &train_config(1), &tiny_generator(), &tiny_discriminator(), None).unwrap();
    let (a, b) = (again.training_log[0], full.training_log[0]);
    for (x, y) in [(a.g_loss, b.g_loss), (a.d_loss, b.d_loss), (a.adv, b.adv), (a.l1, b.l1)] {
        assert!((x - y).abs() <= 1e-5 * y.abs(), "{x} vs {y}");
    }

    // Resuming the one-epoch checkpoint from disk continues at epoch 2.
    let path = dir.path().join("partial.ckpt");
    again.save(&path).unwrap();
    let resumed_log = dir.path().join("resumed.jsonl");
    std::fs::write(&resumed_log, std::fs::read_to_string(&log).unwrap().lines().next().unwrap().to_string() + "\n").unwrap();
    let cfg2 = TrainConfig { log_path: Some(resumed_log.clone()), ..train_config(2) };
    let resumed =
        train_pairs(&train, &val, &cfg2, &tiny_generator(), &tiny_discriminator(), Some(Checkpoint::load(&path).unwrap()))
            .unwrap();
    let epochs: Vec<_> = resumed.training_log.iter().map(|r| r.epoch).collect();
    assert_eq!(epochs, vec![1, 2]);
    assert_eq!(resumed.training_log, full.training_log);
    assert_eq!(std::fs::read_to_string(&resumed_log).unwrap(), std::fs::read_to_string(&log).unwrap());
}

#[test]
fn divergence_preserves_the_last_finite_checkpoint() {
    let pairs = phantom_pairs(2, 300);
    let cfg = TrainConfig { learning_rate: 1e30, ..train_config(3) };
    match train_pairs(&pairs, &pairs, &cfg, &tiny_generator(), &tiny_discriminator(), None) {
        Err(failure) => {
            assert!(matches!(failure.error, Error::Divergence { .. }), "{}", failure.error);
            let last = failure.checkpoint.expect("checkpoint preserved");
            assert!(last.training_log.iter().all(|r| r.g_loss.is_finite() && r.val_l1.is_finite()));
        }
        Ok(c) => panic!("expected divergence, got log {:?}", c.training_log),
    }
}

#[test]
fn empty_validation_split_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    build_phantom_dataset(&PhantomSpec::default(), 2, SplitRatios { train: 1.0, val: 0.0, test: 0.0 }, dir.path())
        .unwrap();
    let manifest = Manifest::load(&dir.path().join("manifest.json")).unwrap();
    let err = train_dapi2ck(&manifest, &train_config(1), &tiny_generator(), &tiny_discriminator(), None).unwrap_err();
    assert!(err.error.is_validation(), "{}", err.error);
}

#[test]
fn invalid_configs_are_rejected() {
    let pairs = phantom_pairs(1, 400);
    let bad_patch = TrainConfig { patch_size: 128, ..train_config(1) };
    assert!(train_pairs(&pairs, &pairs, &bad_patch, &tiny_generator(), &tiny_discriminator(), None).is_err());
    let bad_lambda = TrainConfig { lambda_l1: -1.0, ..train_config(1) };
    assert!(train_pairs(&pairs, &pairs, &bad_lambda, &tiny_generator(), &tiny_discriminator(), None).is_err());
    assert!(GeneratorConfig { depth: 9, ..GeneratorConfig::default() }.validate().is_err());
    assert!(DiscriminatorConfig { n_layers: 8, ..DiscriminatorConfig::default() }.validate().is_err());
}
