use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vmbeam_model::config::GeneratorConfig;
use vmbeam_model::generator::{dca_attention, selection, Generator};
use vmbeam_tensor::{conv2d, grad_check, mish_scalar, Conv2d, ParamStore, Tape, Tensor};

// textbook form, independent of the library's single-exp evaluation
fn mish_ref(x: f64) -> f64 {
    x * (1.0 + x.exp()).ln().tanh()
}

fn random(seed: u64, shape: Vec<usize>, amp: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-amp..amp))
}

fn tiny() -> GeneratorConfig {
    GeneratorConfig {
        dims: vec![8, 4],
        groups: 4,
        real_channels: 1,
        virtual_channels: 1,
        feature_dim: 3,
        ..GeneratorConfig::default()
    }
}

fn mish_t(t: &Tensor) -> Tensor {
    t.map(mish_scalar)
}

#[test]
fn parameter_count_matches_layer_oracle() {
    let cfg = GeneratorConfig {
        dims: vec![16, 12],
        groups: 4,
        kernel: 3,
        real_channels: 2,
        virtual_channels: 1,
        feature_dim: 8,
        ..GeneratorConfig::default()
    };
    // weights + biases per layer, written out by hand
    let conv = |cout: usize, cin: usize, k: usize, g: usize| cout * (cin / g) * k * k + cout;
    let linear = |i: usize, o: usize| i * o + o;
    let mut want = conv(16, 4, 3, 1);
    for (d, out) in [(16, 12), (12, 12)] {
        want += 2 * conv(d, d, 3, 1) + 2 * conv(d, d, 1, 1);
        want += 2 * conv(d, d, 3, 4) + 2 * conv(d, d, 1, 1);
        let hidden = (d / 4).max(4);
        want += linear(d, hidden) + linear(hidden, 4) + 4 * out * d + 4 * out;
    }
    want += conv(2, 12, 3, 1) + conv(8, 12, 3, 1);
    let g = Generator::new(cfg.clone()).unwrap();
    assert_eq!(g.init(0).num_scalars(), want);

    let no_sel = Generator::new(GeneratorConfig {
        enable_selection: false,
        ..cfg.clone()
    })
    .unwrap();
    let no_dca = Generator::new(GeneratorConfig {
        enable_dca: false,
        ..cfg
    })
    .unwrap();
    assert!(no_sel.init(0).num_scalars() < want);
    assert!(no_dca.init(0).num_scalars() < want);
}

#[test]
fn zero_heads_give_zero_outputs() {
    let g = Generator::new(GeneratorConfig::default()).unwrap();
    let mut params = g.init(5);
    for name in ["head_sig.w", "head_sig.b", "head_feat.w", "head_feat.b"] {
        let t = params.get_mut(name).unwrap();
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let tape = Tape::new();
    let p = params.bind(&tape, false);
    let out = g.forward(&p, tape.constant(random(1, vec![4, 6, 9], 3.0))).unwrap();
    assert!(out.signals.value().data().iter().all(|&v| v == 0.0));
    assert!(out.features.value().data().iter().all(|&v| v == 0.0));
}

fn gate_store(w: Tensor, b: Tensor) -> ParamStore {
    let mut s = ParamStore::new();
    s.insert("g.w", w);
    s.insert("g.b", b);
    s
}

#[test]
fn selection_gate_oracles() {
    let x = random(2, vec![3, 4, 5], 2.0);
    let tape = Tape::new();

    let zero = gate_store(Tensor::zeros(vec![3, 3, 1, 1]), Tensor::zeros(vec![3]));
    let out = selection(&zero.bind(&tape, false), "g", tape.constant(x.clone())).value();
    assert_eq!(out.shape(), x.shape());
    assert!(out.data().iter().all(|&v| v == 0.0));

    // identity pointwise kernel with a large bias: the gate sits on the linear
    // asymptote of mish, compared per element against the scalar definition
    let eye = Tensor::from_fn(vec![3, 3, 1, 1], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
    let big = gate_store(eye, Tensor::full(vec![3], 40.0));
    let out = selection(&big.bind(&tape, false), "g", tape.constant(x.clone())).value();
    for (o, v) in out.data().iter().zip(x.data()) {
        let pre = v + 40.0;
        assert!((o - v * mish_ref(pre)).abs() < 1e-12);
        assert!((o - v * pre).abs() < 1e-9 * pre.abs());
    }
}

#[test]
fn equal_logits_mix_the_plain_mean() {
    let cfg = tiny();
    let g = Generator::new(cfg.clone()).unwrap();
    let mut params = g.init(7);
    for name in ["s0.dca.fc2.w", "s0.dca.fc2.b"] {
        params.get_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let x = random(3, vec![8, 4, 5], 1.0);
    let tape = Tape::new();
    let p = params.bind(&tape, false);
    let attn = dca_attention(&p, "s0.dca", tape.constant(x.clone())).value();
    assert!(attn.data().iter().all(|&a| (a - 0.25).abs() < 1e-15));
    let out = g.allocate(&p, 0, tape.constant(x.clone())).value();

    let k = params.get("s0.dca.kernels").unwrap();
    let b = params.get("s0.dca.bias").unwrap();
    let (slots, kw) = (k.shape()[0], k.shape()[1]);
    let mean_k = Tensor::from_fn(vec![4, 8, 1, 1], |i| (0..slots).map(|s| k.data()[s * kw + i]).sum::<f64>() / slots as f64);
    let mean_b = Tensor::from_fn(vec![4], |i| (0..slots).map(|s| b.data()[s * 4 + i]).sum::<f64>() / slots as f64);
    let want = conv2d(&x, &mean_k, Some(&mean_b), Conv2d::default()).unwrap();
    assert!(out.max_abs_diff(&want) < 1e-12);
}

#[test]
fn single_slot_is_a_static_pointwise_conv() {
    let g = Generator::new(GeneratorConfig { dca_slots: 1, ..tiny() }).unwrap();
    let params = g.init(8);
    let x = random(4, vec![8, 3, 6], 1.0);
    let tape = Tape::new();
    let out = g.allocate(&params.bind(&tape, false), 0, tape.constant(x.clone())).value();
    let k = params.get("s0.dca.kernels").unwrap().clone().reshape(vec![4, 8, 1, 1]).unwrap();
    let b = params.get("s0.dca.bias").unwrap().clone().reshape(vec![4]).unwrap();
    let want = conv2d(&x, &k, Some(&b), Conv2d::default()).unwrap();
    assert!(out.max_abs_diff(&want) < 1e-12);
}

#[test]
fn blocks_without_selection_match_hand_composition() {
    let g = Generator::new(GeneratorConfig {
        enable_selection: false,
        ..tiny()
    })
    .unwrap();
    let params = g.init(9);
    let x = random(5, vec![8, 4, 5], 1.0);
    let tape = Tape::new();
    let p = params.bind(&tape, false);
    for (name, down, groups) in [("s0.up", false, 1), ("s0.down", true, 4)] {
        let geom = Conv2d::same(3).with_groups(groups);
        let w = |s: &str| params.get(&format!("{name}.{s}")).unwrap();
        let proj = mish_t(&conv2d(&x, w("p.w"), Some(w("p.b")), geom).unwrap());
        let back = mish_t(&conv2d(&proj, w("q.w"), Some(w("q.b")), geom).unwrap());
        let want = x.zip_map(&back, |a, b| if down { a - b } else { a + b });
        let got = g.block(&p, name, tape.constant(x.clone()), down).value();
        assert!(got.max_abs_diff(&want) < 1e-12, "{name}");
    }
}

#[test]
fn zero_gates_silence_a_block() {
    let g = Generator::new(tiny()).unwrap();
    let mut params = g.init(10);
    // identity projections
    for s in ["p", "q"] {
        let w = params.get_mut(&format!("s0.up.{s}.w")).unwrap();
        let eye = Tensor::from_fn(vec![8, 8, 3, 3], |i| {
            let (o, r) = (i / 72, i % 72);
            if r / 9 == o && r % 9 == 4 {
                1.0
            } else {
                0.0
            }
        });
        *w = eye;
    }
    for s in ["sa", "sb"] {
        for t in ["w", "b"] {
            params.get_mut(&format!("s0.up.{s}.{t}")).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let tape = Tape::new();
    let out = g.block(&params.bind(&tape, false), "s0.up", tape.constant(random(6, vec![8, 3, 4], 1.0)), false);
    assert!(out.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn stage_gradients_match_finite_differences() {
    let g = Generator::new(tiny()).unwrap();
    let params = g.init(11);
    let x = random(7, vec![8, 3, 4], 1.0);
    let err = grad_check(
        |tape, v| {
            let p = params.bind(tape, false);
            g.stage(&p, 0, v)
        },
        &x,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-5, "input gradient error {err}");
    // and with respect to the attention MLP and the mixed kernels
    for name in ["s0.dca.fc1.w", "s0.dca.kernels", "s0.down.q.w", "s0.up.sa.w"] {
        let err = grad_check(
            |tape, v| {
                let mut p = params.bind(tape, false);
                p.insert(name, v);
                g.stage(&p, 0, tape.constant(x.clone()))
            },
            params.get(name).unwrap(),
            // attention gradients are ~1e-7, so a smaller step is roundoff-bound
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-5, "{name}: {err}");
    }
}

#[test]
fn mish_matches_textbook_form() {
    for i in -400..=400 {
        let x = i as f64 * 0.05;
        assert!((mish_scalar(x) - mish_ref(x)).abs() < 1e-14 * (1.0 + x.abs()), "{x}");
    }
}

#[test]
fn forward_gradients_include_the_input_normalization() {
    let g = Generator::new(tiny()).unwrap();
    let params = g.init(13);
    let x = random(14, vec![2, 3, 4], 1.0);
    let err = grad_check(|tape, v| g.forward(&params.bind(tape, false), v).unwrap().signals, &x, 1e-6).unwrap();
    assert!(err < 1e-5, "input gradient error {err}");
}

#[test]
fn gain_commutes_with_the_generator() {
    let g = Generator::new(tiny()).unwrap();
    let params = g.init(15);
    let x = random(16, vec![2, 3, 4], 1.0);
    let tape = Tape::new();
    let p = params.bind(&tape, false);
    let a = g.forward(&p, tape.constant(x.clone())).unwrap().signals.value();
    let b = g.forward(&p, tape.constant(x.map(|v| 7.5 * v))).unwrap().signals.value();
    assert!(a.map(|v| 7.5 * v).max_abs_diff(&b) < 1e-12 * b.data().iter().fold(1.0f64, |m, v| m.max(v.abs())));
}

#[test]
fn generator_is_deterministic() {
    let g = Generator::new(GeneratorConfig::default()).unwrap();
    let params = g.init(12);
    let x = random(8, vec![4, 5, 9], 1.0);
    let run = || {
        let tape = Tape::new();
        let out = g.forward(&params.bind(&tape, false), tape.constant(x.clone())).unwrap();
        (out.signals.value(), out.features.value())
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn attention_sums_to_one(seed in 0u64..10_000, amp in 0.01f64..100.0) {
        let g = Generator::new(tiny()).unwrap();
        let params = g.init(seed);
        let tape = Tape::new();
        let x = tape.constant(random(seed + 1, vec![8, 3, 4], amp));
        let a = dca_attention(&params.bind(&tape, false), "s0.dca", x).value();
        prop_assert!((a.sum() - 1.0).abs() < 1e-12);
        prop_assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
