use brainage::cnn::{
    build_model, count_parameters, mirror_augment, predict_age, predict_ages, train_cnn, CnnConfig,
};
use brainage::tensor::{
    dropout_forward, maxpool2x2, reverse_gradients, shape_chain, ActivationKind, LayerSpec, Mode,
    Network, Tensor,
};
use brainage::{LabeledImage, Modality, Raster};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Shape and parameter arithmetic of the reference stack, written out
/// independently of the layer implementation.
fn count_oracle(side: usize) -> (usize, usize, usize, usize) {
    let (mut s, mut c) = (side, 1);
    let (mut trainable, mut frozen) = (0, 0);
    for f in [16, 32, 64] {
        trainable += 9 * c * f + f; // conv
        trainable += 2 * f; // gamma, beta
        frozen += 2 * f; // running mean, var
        s = (s - 2) / 2;
        c = f;
    }
    let flat = s * s * c;
    trainable += flat * 16 + 16 + 2 * 16 + 16 * 4 + 4 + 4 + 1;
    frozen += 2 * 16;
    (flat, trainable + frozen, trainable, frozen)
}

#[test]
fn reference_counts_at_512_and_64() {
    assert_eq!(count_oracle(512), (246016, 3_960_153, 3_959_897, 256));
    assert_eq!(count_oracle(64), (2304, 60_761, 60_505, 256));
    for side in [512, 64, 22, 100] {
        let (flat, total, trainable, frozen) = count_oracle(side);
        let config = CnnConfig::with_side(side);
        let c = count_parameters(&build_model(&config, Modality::FlairAc).unwrap());
        assert_eq!(
            (c.total, c.trainable, c.non_trainable),
            (total, trainable, frozen),
            "side {side}"
        );
        let flatten = config
            .summary()
            .unwrap()
            .into_iter()
            .find(|l| l.kind == "flatten")
            .unwrap();
        assert_eq!(flatten.output_shape, vec![flat]);
    }
}

#[test]
fn shape_chain_of_the_reference_input() {
    let chain = shape_chain(&[512, 512, 1], &CnnConfig::default().layer_specs()).unwrap();
    let sides: Vec<usize> = chain
        .iter()
        .filter(|s| s.len() == 3)
        .map(|s| s[0])
        .collect();
    let mut distinct = sides.clone();
    distinct.dedup();
    assert_eq!(distinct, vec![510, 255, 253, 126, 124, 62]);
    assert!(chain.contains(&vec![246016]));
}

#[test]
fn side_16_underflows() {
    assert!(build_model(&CnnConfig::with_side(16), Modality::T2Ac).is_err());
    assert!(build_model(&CnnConfig::with_side(22), Modality::T2Ac).is_ok());
}

#[test]
fn pooling_keeps_constants() {
    let x = Tensor::new(vec![1, 5, 7, 2], vec![0.25; 70]).unwrap();
    let y = maxpool2x2(&x).unwrap();
    assert_eq!(y.shape(), &[1, 2, 3, 2]);
    assert!(y.data().iter().all(|&v| v == 0.25));
}

#[test]
fn dropout_preserves_expectation() {
    let x = Tensor::new(vec![1_000_000], vec![1.0; 1_000_000]).unwrap();
    let y = dropout_forward(&x, 0.5, Mode::Train, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let mean = y.data().iter().sum::<f64>() / 1e6;
    assert!((0.99..=1.01).contains(&mean), "{mean}");
}

fn micro(side: usize, seed: u64) -> Network {
    let specs = vec![
        LayerSpec::Conv2d {
            filters: 3,
            kernel_side: 3,
        },
        LayerSpec::Batchnorm {
            epsilon: 1e-3,
            momentum: 0.9,
        },
        LayerSpec::Activation {
            function: ActivationKind::Relu,
        },
        LayerSpec::Maxpool2,
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 4 },
        LayerSpec::Activation {
            function: ActivationKind::Relu,
        },
        LayerSpec::Dense { units: 1 },
    ];
    Network::new(
        &[side, side, 1],
        specs,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap()
}

#[test]
fn micro_cnn_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let net = micro(12, 1);
    let x = Tensor::new(
        vec![3, 12, 12, 1],
        (0..432).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let y = [0.3, -0.7, 1.1];
    let loss = |n: &Network| {
        reverse_gradients(&mut n.clone(), &x, &y, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    };

    let mut analytic = net.clone();
    reverse_gradients(&mut analytic, &x, &y, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let grads: Vec<Vec<f64>> = analytic
        .trainable()
        .iter()
        .map(|t| t.grad().unwrap().to_vec())
        .collect();
    let names: Vec<String> = net
        .named_tensors()
        .into_iter()
        .map(|(n, _)| n)
        .filter(|n| !n.contains("running"))
        .collect();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (ti, name) in names.iter().enumerate() {
        for i in 0..grads[ti].len() {
            let at = |d: f64| {
                let mut n = net.clone();
                for (nm, t) in n.named_tensors_mut() {
                    if &nm == name {
                        t.data_mut()[i] += d;
                    }
                }
                loss(&n)
            };
            let numeric = (at(h) - at(-h)) / (2.0 * h);
            let a = grads[ti][i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
    }
    assert!(worst <= 1e-4, "max relative error {worst:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn forward_is_pure_given_seed(seed in any::<u64>(), data_seed in any::<u64>()) {
        let mut net = micro(8, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
        let x = Tensor::new(vec![2, 8, 8, 1], (0..128).map(|_| rng.random::<f64>()).collect()).unwrap();
        let a = net.clone().forward(&x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = net.forward(&x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        prop_assert_eq!(a.data(), b.data());
        let (i1, i2) = (net.infer(&x).unwrap(), net.infer(&x).unwrap());
        prop_assert_eq!(i1.data(), i2.data());
    }
}

/// Bright disc whose radius grows with age on a dark background.
fn disc(side: usize, age: f64, rng: &mut ChaCha8Rng) -> Raster {
    let r = side as f64 * (0.1 + 0.3 * (age - 20.0) / 60.0);
    let c = (side as f64 - 1.0) / 2.0;
    let pixels = (0..side * side)
        .map(|i| {
            let (x, y) = ((i % side) as f64 - c, (i / side) as f64 - c);
            let v = if x * x + y * y <= r * r { 0.9 } else { 0.1 };
            v + rng.random_range(-0.02..0.02)
        })
        .collect();
    Raster::new(side, side, pixels).unwrap()
}

fn disc_set(n: usize, side: usize, seed: u64) -> Vec<LabeledImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let age = rng.random_range(20.0..80.0);
            LabeledImage {
                image: disc(side, age, &mut rng),
                age,
            }
        })
        .collect()
}

#[test]
fn learnable_set_loss_decreases() {
    let config = CnnConfig {
        epochs: 10,
        seed: 4,
        ..CnnConfig::with_side(64)
    };
    let model = train_cnn(
        build_model(&config, Modality::T2Lv).unwrap(),
        &disc_set(300, 64, 1),
    )
    .unwrap();
    assert_eq!(model.history.len(), 10);
    assert!(model.history[9] < model.history[0], "{:?}", model.history);
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let config = CnnConfig {
        epochs: 3,
        learning_rate: 0.0,
        dropout_rate: 0.0,
        ..CnnConfig::with_side(32)
    };
    let start = build_model(&config, Modality::FlairAc).unwrap();
    let trained = train_cnn(start.clone(), &disc_set(40, 32, 2)).unwrap();
    let trainable = |m: &brainage::cnn::CnnModel| -> Vec<Vec<f64>> {
        m.network
            .trainable()
            .iter()
            .map(|t| t.data().to_vec())
            .collect()
    };
    assert_eq!(trainable(&start), trainable(&trained));
    let h = &trained.history;
    let spread =
        h.iter().cloned().fold(f64::MIN, f64::max) - h.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread <= 0.05 * h[0], "{h:?}");
}

#[test]
fn same_seed_same_parameters() {
    let config = CnnConfig {
        epochs: 2,
        seed: 8,
        ..CnnConfig::with_side(32)
    };
    let data = disc_set(30, 32, 3);
    let a = train_cnn(build_model(&config, Modality::FlairLv).unwrap(), &data).unwrap();
    let b = train_cnn(build_model(&config, Modality::FlairLv).unwrap(), &data).unwrap();
    assert_eq!(a, b);
}

#[test]
fn untrained_model_on_zero_image_is_finite() {
    let model = build_model(&CnnConfig::with_side(64), Modality::T2Ac).unwrap();
    assert!(predict_age(&model, &Raster::filled(64, 64, 0.0))
        .unwrap()
        .is_finite());
}

#[test]
fn mirroring() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let asym = Raster::new(5, 4, (0..20).map(|_| rng.random::<f64>()).collect()).unwrap();
    assert_ne!(asym.mirrored(), asym);
    assert_eq!(asym.mirrored().mirrored(), asym);

    let set = vec![LabeledImage {
        image: asym.clone(),
        age: 33.5,
    }];
    let aug = mirror_augment(&set);
    assert_eq!(aug.len(), 2);
    assert_eq!(aug[0].image, asym);
    assert_eq!(aug[1].image, asym.mirrored());
    assert_eq!(aug[1].age, 33.5);

    // a left-right symmetric image and its flip predict identically
    let config = CnnConfig {
        epochs: 1,
        ..CnnConfig::with_side(32)
    };
    let model = train_cnn(
        build_model(&config, Modality::T2Ac).unwrap(),
        &disc_set(20, 32, 4),
    )
    .unwrap();
    let sym = disc(32, 50.0, &mut ChaCha8Rng::seed_from_u64(0));
    let sym = Raster::new(32, 32, {
        let mut p = sym.pixels().to_vec();
        for y in 0..32 {
            for x in 16..32 {
                p[y * 32 + x] = p[y * 32 + 31 - x];
            }
        }
        p
    })
    .unwrap();
    assert_eq!(sym.mirrored(), sym);
    let p = predict_ages(&model, &[sym.clone(), sym.mirrored()]).unwrap();
    assert_eq!(p[0].to_bits(), p[1].to_bits());
}
