use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vmbeam_core::array::{build_array, ArrayKind};
use vmbeam_core::rng::derive_seed;
use vmbeam_core::scene::{render_scene, sample_scene, SceneRanges, Task};
use vmbeam_core::sources::SourceMaterial;
use vmbeam_core::StftConfig;
use vmbeam_model::config::{Ablation, GeneratorConfig, LossConfig, PipelineConfig};
use vmbeam_model::discriminator::{adversarial_terms, Discriminator};
use vmbeam_model::generator::Generator;
use vmbeam_model::loss::{composite_loss, snr_db, snr_loss};
use vmbeam_model::pipeline::{Pipeline, PreparedScene, VmSource};
use vmbeam_model::signal::{magnitude, select_channels};
use vmbeam_model::ModelError;
use vmbeam_tensor::{grad_check, Adam, ParamStore, Tape, Tensor};

fn random(seed: u64, shape: Vec<usize>, amp: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-amp..amp))
}

fn scalar_snr_db(est: &[f64], reference: &[f64]) -> f64 {
    let p: f64 = reference.iter().map(|v| v * v).sum();
    let e: f64 = est.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    10.0 * (p / e).log10()
}

#[test]
fn perfect_estimates_hit_the_clip_exactly() {
    let cfg = LossConfig::default();
    let v = random(1, vec![3, 50], 1.0);
    let x = random(2, vec![1, 50], 1.0);
    let tape = Tape::new();
    assert_eq!(snr_loss(tape.constant(v.clone()), &v, cfg.snr_clip_db).unwrap().item(), -30.0);
    let out = composite_loss(&cfg, Some((tape.constant(v.clone()), &v)), Some((tape.constant(x.clone()), &x)), None).unwrap();
    assert_eq!(out.record.vme, -30.0);
    assert_eq!(out.record.bf, -30.0);
    assert!((out.record.gen - (0.3 * -30.0 + 0.7 * -30.0)).abs() < 1e-12);
}

#[test]
fn two_sample_snr_matches_scalar_oracle() {
    let tape = Tape::new();
    let reference = Tensor::new(vec![2, 2], vec![1.0, 2.0, -0.5, 0.25]).unwrap();
    let est = Tensor::new(vec![2, 2], vec![1.5, 1.0, -0.25, 0.0]).unwrap();
    let got = snr_db(tape.constant(est.clone()), &reference).unwrap().value();
    let want = [
        scalar_snr_db(&[1.5, 1.0], &[1.0, 2.0]),
        scalar_snr_db(&[-0.25, 0.0], &[-0.5, 0.25]),
    ];
    assert!((want[0] - 10.0 * 4f64.log10()).abs() < 1e-12);
    for (g, w) in got.data().iter().zip(want) {
        assert!((g - w).abs() < 1e-12, "{g} vs {w}");
    }
    let loss = snr_loss(tape.constant(est), &reference, 30.0).unwrap().item();
    assert!((loss + (want[0] + want[1]) / 2.0).abs() < 1e-12);
}

#[test]
fn snr_gradient_matches_finite_differences_and_vanishes_past_the_clip() {
    let reference = random(3, vec![2, 40], 1.0);
    let noisy = reference.zip_map(&random(4, vec![2, 40], 0.3), |a, b| a + b);
    let err = grad_check(|_, v| snr_loss(v, &reference, 30.0).unwrap(), &noisy, 1e-6).unwrap();
    assert!(err < 1e-6, "{err}");

    let near = reference.zip_map(&random(5, vec![2, 40], 1e-4), |a, b| a + b);
    let tape = Tape::new();
    let v = tape.param(near.clone());
    let g = tape.backward(snr_loss(v, &reference, 30.0).unwrap()).unwrap().wrt(v);
    assert!(g.data().iter().all(|&x| x == 0.0));
}

#[test]
fn zero_power_reference_is_rejected() {
    let tape = Tape::new();
    let reference = Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let err = snr_db(tape.constant(Tensor::zeros(vec![2, 3])), &reference).unwrap_err();
    assert!(matches!(err, ModelError::ZeroReference(_)));
}

#[test]
fn without_gan_ablation_drops_the_adversarial_terms() {
    let mut gen = GeneratorConfig::default();
    let mut loss = LossConfig::default();
    let mut pipe = PipelineConfig::default();
    Ablation::WithoutGan.apply(&mut gen, &mut loss, &mut pipe);
    assert_eq!((loss.w_adv_g, loss.w_adv_d), (0.0, 0.0));
    assert_eq!((loss.w_vme, loss.w_bf), (0.3, 0.7));
    assert!(!loss.adversarial());

    let disc = Discriminator::new(1);
    let params = disc.init(0);
    let tape = Tape::new();
    let p = params.bind(&tape, false);
    let v = random(6, vec![1, 30], 1.0);
    let vh = random(7, vec![1, 30], 1.0);
    let mag = |s| tape.constant(random(s, vec![1, 8, 8], 1.0).map(f64::abs));
    let adv = adversarial_terms(&disc, &p, mag(8), mag(9)).unwrap();
    let with = composite_loss(&loss, Some((tape.constant(vh.clone()), &v)), None, Some(adv)).unwrap();
    let without = composite_loss(&loss, Some((tape.constant(vh), &v)), None, None).unwrap();
    assert_eq!(with.generator.item(), without.generator.item());
    assert_eq!(with.discriminator.unwrap().item(), 0.0);
}

fn short_scene() -> PreparedScene {
    let ranges = SceneRanges {
        clip_seconds: 0.1,
        ..SceneRanges::default()
    };
    let array = build_array(&ArrayKind::default()).unwrap();
    let spec = sample_scene(derive_seed(31, 0), Task::Fov, &ranges).unwrap();
    let scene = render_scene(&spec, &array, &SourceMaterial::Synthetic).unwrap();
    PreparedScene::new(&scene, &StftConfig::default()).unwrap()
}

#[test]
fn end_to_end_composite_gradient_matches_finite_differences() {
    let scene = short_scene();
    let gen_cfg = GeneratorConfig {
        dims: vec![8, 4],
        groups: 4,
        real_channels: scene.rm.len(),
        virtual_channels: scene.vm.len(),
        feature_dim: 2,
        ..GeneratorConfig::default()
    };
    let generator = Generator::new(gen_cfg).unwrap();
    let gen_params = generator.init(3);
    let disc = Discriminator::new(scene.vm.len());
    let disc_params = disc.init(4);
    let stft = StftConfig::default();
    let pipe = Pipeline::new(
        PipelineConfig::default(),
        stft,
        VmSource::Generator {
            model: generator,
            params: gen_params.clone(),
        },
        None,
    )
    .unwrap();
    let loss_cfg = LossConfig::default();
    let loss = |store: &ParamStore, track: bool| {
        let tape = Tape::new();
        let p = store.bind(&tape, track);
        let d = disc_params.bind(&tape, false);
        let trace = pipe.run(&tape, &scene, Some(&p), None).unwrap();
        let est = trace.generated.unwrap();
        let v = select_channels(tape.constant(scene.y.clone()), &scene.vm);
        let adv = adversarial_terms(&disc, &d, magnitude(v, 1e-10), magnitude(est.signals, 1e-10)).unwrap();
        let vm = trace.vm_wave(stft, &scene.interior).unwrap();
        let bf = trace.out_interior(&scene.interior);
        let l = composite_loss(&loss_cfg, Some((vm, &scene.vm_ref)), Some((bf, &scene.x_ref)), Some(adv))
            .unwrap()
            .generator;
        let grads = track.then(|| p.grads(&tape.backward(l).unwrap()));
        (l.item(), grads)
    };
    let grads = loss(&gen_params, true).1.unwrap();
    let eps = 1e-6;
    for name in ["init.w", "s1.dca.kernels", "head_sig.b"] {
        let analytic = &grads[name];
        let scale = analytic.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(scale > 0.0, "{name} has no gradient");
        // error relative to the largest entry: per-entry ratios on entries
        // near 1e-7 are dominated by roundoff in the differences
        let mut worst = 0.0f64;
        for i in 0..analytic.len() {
            let shifted = |d: f64| {
                let mut s = gen_params.clone();
                s.get_mut(name).unwrap().data_mut()[i] += d;
                loss(&s, false).0
            };
            let cd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
            worst = worst.max((cd - analytic.data()[i]).abs() / scale);
        }
        assert!(worst < 1e-4, "{name}: {worst}");
    }
}

#[test]
fn discriminator_is_deterministic_level_invariant_and_finite() {
    let disc = Discriminator::new(2);
    assert_eq!(disc.init(5), disc.init(5));
    let params = disc.init(5);
    let a = random(10, vec![2, 12, 20], 1.0).map(f64::abs);
    let b = random(11, vec![2, 12, 20], 1.0).map(f64::abs);
    let score = |x: &Tensor, y: &Tensor| {
        let tape = Tape::new();
        let p = params.bind(&tape, false);
        disc.forward(&p, tape.constant(x.clone()), tape.constant(y.clone())).unwrap().item()
    };
    assert_eq!(score(&a, &b), score(&a, &b));
    let (a3, b3) = (a.map(|v| v * 1e3), b.map(|v| v * 1e3));
    let big = score(&a3, &b3);
    assert!(big.is_finite());
    assert!((big - score(&a, &b)).abs() < 1e-9);
}

#[test]
fn discriminator_term_does_not_reach_the_estimate() {
    let disc = Discriminator::new(1);
    let params = disc.init(6);
    let tape = Tape::new();
    let p = params.bind(&tape, false);
    let reference = tape.constant(random(12, vec![1, 8, 8], 1.0).map(f64::abs));
    let est = tape.param(random(13, vec![1, 8, 8], 1.0).map(f64::abs));
    let adv = adversarial_terms(&disc, &p, reference, est).unwrap();
    let g = tape.backward(adv.discriminator).unwrap().wrt(est);
    assert!(g.data().iter().all(|&v| v == 0.0));
    let g = tape.backward(adv.generator).unwrap().wrt(est);
    assert!(g.data().iter().any(|&v| v != 0.0));
}

#[test]
fn discriminator_overfit_separates_real_from_fake() {
    let disc = Discriminator::new(1);
    let mut params = disc.init(7);
    let reference = random(14, vec![1, 16, 16], 1.0).map(f64::abs);
    let fake = reference.zip_map(&random(15, vec![1, 16, 16], 0.5), |a, b| (a + b).abs());
    let margin = |params: &ParamStore| {
        let tape = Tape::new();
        let p = params.bind(&tape, false);
        let r = tape.constant(reference.clone());
        let real = disc.forward(&p, r, r).unwrap().item();
        let f = disc.forward(&p, r, tape.constant(fake.clone())).unwrap().item();
        real - f
    };
    let before = margin(&params);
    let mut opt = Adam::new(1e-3);
    for _ in 0..200 {
        let tape = Tape::new();
        let p = params.bind(&tape, true);
        let r = tape.constant(reference.clone());
        let adv = adversarial_terms(&disc, &p, r, tape.constant(fake.clone())).unwrap();
        let grads = p.grads(&tape.backward(adv.discriminator).unwrap());
        opt.step(&mut params, &grads).unwrap();
    }
    let after = margin(&params);
    assert!(after > before + 0.5, "margin {before} -> {after}");
}
