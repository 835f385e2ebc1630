use fdl_core::loss::{self, LossKind};
use fdl_core::model::{
    Architecture, GraphBuilder, ModelGraph, ModelSpec, ParamRole, Phase, Preset,
};
use fdl_core::{gradcheck, nn, ConvSpec, Shape4, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_input(shape: Shape4, seed: u64) -> Tensor4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0)).unwrap()
}

fn built(arch: Architecture, size: usize, seed: u64) -> ModelGraph<f64> {
    let spec = ModelSpec::preset(arch, Preset::Tiny, size, size);
    let mut m = ModelGraph::build(&spec).unwrap();
    m.init_params(&mut ChaCha8Rng::seed_from_u64(seed));
    m
}

fn node_channels(m: &ModelGraph<f64>, name: &str) -> usize {
    m.nodes().iter().find(|n| n.name == name).unwrap().shape.c
}

#[test]
fn densenet_tiny_channel_arithmetic() {
    let m = built(Architecture::DensenetMini, 32, 0);
    assert_eq!(node_channels(&m, "stem.conv"), 8);
    assert_eq!(node_channels(&m, "block1.layer2.concat"), 8 + 2 * 4);
    assert_eq!(node_channels(&m, "transition1.pool"), 8);
    let gap = m
        .nodes()
        .iter()
        .find(|n| n.name == "head.gap")
        .unwrap()
        .shape
        .c;
    let dense = m
        .summary_rows()
        .into_iter()
        .find(|r| r.name == "head.dense")
        .unwrap();
    assert_eq!(dense.params, gap * 5 + 5);
}

#[test]
fn dense_head_on_eight_features_has_45_params() {
    let (mut b, x) = GraphBuilder::<f64>::new(8, 1, 1).unwrap();
    b.dense(x, 5, "fc");
    let m = b.finish(None);
    let row = &m.summary_rows()[1];
    assert_eq!(row.params, 45);
    assert!(m.summary().contains("Total trainable params: 45"));
}

#[test]
fn conv_row_param_formula() {
    let (mut b, x) = GraphBuilder::<f64>::new(3, 8, 8).unwrap();
    b.conv(x, 8, ConvSpec::same(3), true, "conv").unwrap();
    let m = b.finish(None);
    assert_eq!(m.summary_rows()[1].params, 3 * 3 * 3 * 8 + 8);
    assert_eq!(m.summary_rows()[1].params, 224);
}

#[test]
fn summary_total_equals_row_sum_and_registry() {
    for arch in Architecture::ALL {
        let m = built(arch, 16, 1);
        let rows: usize = m.summary_rows().iter().map(|r| r.params).sum();
        let registry: usize = m
            .params()
            .iter()
            .map(|p| p.dims.iter().product::<usize>())
            .sum();
        assert_eq!(rows, registry);
        assert_eq!(m.param_count(), registry);
        let text = m.summary();
        assert!(text.ends_with(&format!("Total trainable params: {registry}\n")));
        assert_eq!(text.lines().count(), m.nodes().len() + 4);
    }
}

#[test]
fn forward_rows_are_distributions() {
    for arch in Architecture::ALL {
        let mut m = built(arch, 32, 2);
        let x = random_input(Shape4::new(2, 3, 32, 32), 3);
        for y in [
            m.predict(&x).unwrap(),
            m.forward(&x, Phase::TRAIN, &mut ChaCha8Rng::seed_from_u64(4))
                .unwrap(),
        ] {
            assert_eq!(y.shape(), Shape4::new(2, 5, 1, 1));
            for i in 0..2 {
                let s: f64 = y.sample(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-12, "{arch}: row sum {s}");
                assert!(y.sample(i).iter().all(|&p| p > 0.0));
            }
        }
    }
}

#[test]
fn identity_block_preserves_shape() {
    let (mut b, x) = GraphBuilder::<f64>::new(16, 8, 8).unwrap();
    let y = b.identity_block(x, "id").unwrap();
    assert_eq!(b.shape(y), Shape4::new(1, 16, 8, 8));
}

#[test]
fn identity_block_with_zero_branch_is_relu() {
    let (mut b, x) = GraphBuilder::<f64>::new(16, 8, 8).unwrap();
    b.identity_block(x, "id").unwrap();
    let mut m = b.finish(None);
    for p in m.params_mut() {
        let v = if p.role == ParamRole::Gamma { 1.0 } else { 0.0 };
        p.value.iter_mut().for_each(|x| *x = v);
    }
    let input = random_input(Shape4::new(1, 16, 8, 8), 5);
    let out = m
        .forward(&input, Phase::TRAIN, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    assert_eq!(out, nn::relu(&input));
}

#[test]
fn conv_block_halves_and_widens() {
    let (mut b, x) = GraphBuilder::<f64>::new(16, 8, 8).unwrap();
    let y = b.conv_block(x, 32, 2, "cb").unwrap();
    assert_eq!(b.shape(y), Shape4::new(1, 32, 4, 4));
    let m = b.finish(None);
    let shape = |name: &str| m.nodes().iter().find(|n| n.name == name).unwrap().shape;
    assert_eq!(shape("cb.bn2"), shape("cb.proj_bn"));
    assert_eq!(shape("cb.bn2"), Shape4::new(1, 32, 4, 4));
}

#[test]
fn geometry_underflow_is_rejected() {
    for arch in Architecture::ALL {
        let spec = ModelSpec::preset(arch, Preset::Small, 2, 2);
        assert!(ModelGraph::<f64>::build(&spec).is_err(), "{arch}");
    }
    let (mut b, x) = GraphBuilder::<f64>::new(4, 1, 1).unwrap();
    assert!(b.transition(x, "t").is_err());
}

#[test]
fn input_shape_is_checked() {
    let m = built(Architecture::ResnetMini, 16, 0);
    assert!(m
        .predict(&Tensor4::zeros(Shape4::new(1, 3, 8, 8)).unwrap())
        .is_err());
}

#[test]
fn init_is_deterministic_with_zero_biases() {
    for arch in Architecture::ALL {
        let a = built(arch, 16, 42);
        let b = built(arch, 16, 42);
        let c = built(arch, 16, 43);
        assert_eq!(a.flat_params(), b.flat_params());
        assert_ne!(a.flat_params(), c.flat_params());
        for p in a.params() {
            match p.role {
                ParamRole::Bias | ParamRole::Beta => {
                    assert!(p.value.iter().all(|&v| v == 0.0), "{}", p.name)
                }
                ParamRole::Gamma => assert!(p.value.iter().all(|&v| v == 1.0)),
                ParamRole::Weight => {
                    let bound = (6.0 / p.fan_in as f64).sqrt();
                    assert!(p.value.iter().all(|v| v.abs() <= bound));
                }
            }
        }
    }
}

#[test]
fn init_weight_mean_is_centered() {
    let (mut b, x) = GraphBuilder::<f64>::new(1, 1, 1).unwrap();
    b.dense(x, 100_000, "wide");
    let mut m = b.finish(None);
    m.init_params(&mut ChaCha8Rng::seed_from_u64(9));
    let w = &m.params()[0].value;
    assert_eq!(w.len(), 100_000);
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    assert!(mean.abs() < 0.01, "{mean}");
}

#[test]
fn serialization_round_trip() {
    for arch in Architecture::ALL {
        let mut m = built(arch, 16, 6);
        let x = random_input(Shape4::new(3, 3, 16, 16), 7);
        m.forward(&x, Phase::TRAIN, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let bytes = m.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"FDL1");
        let back = ModelGraph::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(back.flat_params(), m.flat_params());
        assert_eq!(back.batchnorm_states(), m.batchnorm_states());
        assert_eq!(back.predict(&x).unwrap(), m.predict(&x).unwrap());
        assert!(ModelGraph::<f64>::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ModelGraph::<f64>::from_bytes(&bad).is_err());
    }
}

#[test]
fn predict_leaves_running_moments_alone() {
    let m = built(Architecture::DensenetMini, 16, 8);
    let before = m.batchnorm_states().to_vec();
    m.predict(&random_input(Shape4::new(2, 3, 16, 16), 1))
        .unwrap();
    assert_eq!(m.batchnorm_states(), &before[..]);
}

#[test]
fn identical_seeds_give_identical_trajectories() {
    let run = || {
        let mut m = built(Architecture::ResnetMini, 16, 10);
        let mut adam = fdl_core::Adam::new(Default::default(), m.param_lengths());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_input(Shape4::new(4, 3, 16, 16), 12);
        let targets: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..5).map(|c| (c == i) as u8 as f64).collect())
            .collect();
        for _ in 0..3 {
            m.forward_backward(&x, &targets, LossKind::Bce, Phase::TRAIN, &mut rng)
                .unwrap();
            m.apply_adam(&mut adam).unwrap();
        }
        m.flat_params()
    };
    assert_eq!(run(), run());
}

#[test]
fn conv_relu_bce_micro_net_gradient() {
    let (mut b, x) = GraphBuilder::<f64>::new(2, 5, 5).unwrap();
    let c = b.conv(x, 3, ConvSpec::same(3), true, "conv").unwrap();
    let r = b.relu(c, "relu");
    let g = b.global_avg_pool(r, "gap");
    let d = b.dense(g, 4, "fc");
    b.softmax(d, "softmax");
    let mut m = b.finish(None);
    m.init_params(&mut ChaCha8Rng::seed_from_u64(13));
    let x = random_input(Shape4::new(2, 2, 5, 5), 14);
    let targets = vec![vec![0.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]];
    let phase = Phase::EVAL;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    m.forward_backward(&x, &targets, LossKind::Bce, phase, &mut rng)
        .unwrap();
    let analytic = m.flat_grads();
    let mut probe = m.clone();
    let report = gradcheck::check_all(&m.flat_params(), &analytic, gradcheck::DEFAULT_STEP, |p| {
        probe.set_flat_params(p).unwrap();
        let y = probe
            .forward(&x, phase, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        loss::batch_loss(LossKind::Bce, &targets, &y).unwrap().0
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn linear_probe_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let w: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let p = nn::DenseParams::new(4, 3, w, b).unwrap();
    let xs = Shape4::new(1, 4, 1, 1);
    let x = random_input(xs, 16);
    for unit in 0..3 {
        let mut probe = Tensor4::zeros(Shape4::new(1, 3, 1, 1)).unwrap();
        probe.data_mut()[unit] = 1.0;
        let g = nn::dense_backward(&x, &p, &probe).unwrap();
        let r = gradcheck::check_all(x.data(), g.input.data(), gradcheck::DEFAULT_STEP, |v| {
            nn::dense_forward(&Tensor4::from_vec(xs, v.to_vec()).unwrap(), &p)
                .unwrap()
                .data()[unit]
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }
}
