use dss_core::checkpoint::{read_manifest, Checkpoint};
use dss_core::data::{generate_scene, scene_seed, Difficulty, Split, SynthConfig};
use dss_core::kernels::conv::{conv2d, ConvSpec};
use dss_core::kernels::pool::{pool2d, PoolKind, PoolSpec};
use dss_core::kernels::resize::resize_bilinear;
use dss_core::kernels::Padding;
use dss_core::metrics::{max_f, pr_curve, Averaging, EvalRecord};
use dss_core::selfcheck::oracle;
use dss_core::train::TrainState;
use dss_core::{DssNet, Error, ModelConfig, RunConfig, Tensor};
use proptest::prelude::*;

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-2.0f64..2.0, n).prop_map(move |d| Tensor::from_vec(shape.clone(), d).unwrap())
}

fn padding() -> impl Strategy<Value = Padding> {
    prop_oneof![Just(Padding::Zero), Just(Padding::Reflect), Just(Padding::Replicate)]
}

fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Input, weight, and spec for a grouped convolution with odd square kernels.
fn conv_case() -> impl Strategy<Value = (Tensor<f64>, Tensor<f64>, ConvSpec)> {
    (1usize..=2, 1usize..=3, 1usize..=2, 1usize..=8, 1usize..=8, 0usize..3, 1usize..=2, padding())
        .prop_flat_map(|(groups, cin_g, cout_g, h, w, k, stride, padding)| {
            let k = 2 * k + 1;
            let x = tensor(vec![1, groups * cin_g, h, w]);
            let wt = tensor(vec![groups * cout_g, cin_g, k, k]);
            let spec = ConvSpec {
                stride,
                padding,
                groups,
            };
            (x, wt, Just(spec))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv2d_matches_the_loop_oracle((x, w, spec) in conv_case()) {
        prop_assume!(spec.padding != Padding::Reflect || (x.shape()[2] > w.shape()[2] / 2 && x.shape()[3] > w.shape()[3] / 2));
        match conv2d(&x, &w, None, &spec) {
            Ok(got) => {
                let want = oracle::conv2d(&x, &w, None, spec.stride, spec.padding, spec.groups);
                prop_assert!(max_diff(&got, &want) <= 1e-9);
            }
            Err(e) => prop_assert!(matches!(e, Error::Config(_)), "{e}"),
        }
    }

    #[test]
    fn pooling_matches_the_loop_oracle(
        x in (1usize..=3, 1usize..=7, 1usize..=7).prop_flat_map(|(c, h, w)| tensor(vec![1, c, h, w])),
        max in any::<bool>(),
        k in 0usize..3,
        stride in 1usize..=2,
    ) {
        let kernel = 2 * k + 1;
        let kind = if max { PoolKind::Max } else { PoolKind::Avg };
        let spec = PoolSpec { kind, kernel, stride, padding: Padding::Zero };
        let (got, _) = pool2d(&x, &spec).unwrap();
        let want = oracle::pool(&x, max, kernel, stride, Padding::Zero);
        prop_assert!(max_diff(&got, &want) <= 1e-12);
    }

    #[test]
    fn bilinear_resize_matches_the_loop_oracle(
        x in (1usize..=6, 1usize..=6).prop_flat_map(|(h, w)| tensor(vec![1, 2, h, w])),
        oh in 1usize..=12,
        ow in 1usize..=12,
    ) {
        let got = resize_bilinear(&x, oh, ow).unwrap();
        prop_assert!(max_diff(&got, &oracle::resize(&x, oh, ow)) <= 1e-12);
    }

    #[test]
    fn pr_curve_is_monotone_in_recall_and_bounded(
        pairs in prop::collection::vec((0.0f32..=1.0, any::<bool>()), 1..64),
        macro_avg in any::<bool>(),
    ) {
        let n = pairs.len();
        let pred = Tensor::from_vec(vec![1, 1, 1, n], pairs.iter().map(|p| p.0).collect()).unwrap();
        let mask = Tensor::from_vec(vec![1, 1, 1, n], pairs.iter().map(|p| if p.1 { 1.0 } else { 0.0 }).collect()).unwrap();
        let records = vec![EvalRecord::new(&pred, &mask).unwrap()];
        let averaging = if macro_avg { Averaging::Macro } else { Averaging::Micro };
        let curve = pr_curve(&records, averaging).unwrap();
        prop_assert_eq!(curve.len(), 256);
        prop_assert_eq!(curve[0].recall, 1.0);
        for pair in curve.windows(2) {
            prop_assert!(pair[1].threshold > pair[0].threshold);
            prop_assert!(pair[1].recall <= pair[0].recall);
        }
        prop_assert!(curve.iter().all(|p| (0.0..=1.0).contains(&p.precision) && (0.0..=1.0).contains(&p.recall)));
        let f = max_f(&records, 0.3, averaging).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        let perfect = vec![EvalRecord::new(&mask, &mask).unwrap()];
        if pairs.iter().any(|p| p.1) {
            prop_assert_eq!(max_f(&perfect, 0.3, averaging).unwrap(), 1.0);
        }
    }

    #[test]
    fn config_overrides_survive_a_toml_round_trip(
        steps in 0usize..10_000,
        lr in 1e-6f64..1e-2,
        lambda in 0.0f64..8.0,
        region in any::<bool>(),
    ) {
        let mut cfg = RunConfig::default();
        cfg.set("steps", &steps.to_string()).unwrap();
        cfg.set("lr_max", &format!("{lr:e}")).unwrap();
        cfg.set("lambda_bs", &format!("{lambda:?}")).unwrap();
        if region {
            cfg.set("branches", "region").unwrap();
        }
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.steps, steps);
        prop_assert_eq!(back.lr_max, lr);
        let changed = back.diff(&RunConfig::default()).unwrap();
        prop_assert!(changed.iter().all(|k| ["steps", "lr_max", "lambda_bs", "branches"].contains(&k.as_str())));
    }

    #[test]
    fn train_and_val_seeds_never_collide(seed in any::<u64>(), i in 0usize..1 << 20, j in 0usize..1 << 20) {
        let train = scene_seed(seed, Split::Train, i).unwrap();
        let val = scene_seed(seed, Split::Val, j).unwrap();
        prop_assert_ne!(train, val);
        prop_assert_eq!(scene_seed(seed, Split::Train, i).unwrap(), train);
    }
}

#[test]
fn scenes_have_binary_masks_and_images_in_range() {
    for seed in 0..6 {
        for difficulty in [Difficulty::Easy, Difficulty::Hard] {
            let s = generate_scene(seed, 64, 96, difficulty, &SynthConfig::default()).unwrap().sample;
            assert_eq!(s.image.shape(), &[1, 3, 64, 96]);
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(s.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
            let fg = s.foreground_fraction();
            assert!(fg > 0.0 && fg < 1.0, "seed {seed}: foreground {fg}");
        }
    }
}

#[test]
fn checkpoint_bytes_round_trip_and_reject_damage() {
    let (_, store) = DssNet::new(ModelConfig::tiny(), 3).unwrap();
    let state = TrainState::new(store.cast::<f32>());
    let config = serde_json::json!({ "note": "fixture" });
    let ckpt = Checkpoint::from_state(&state, config.clone());
    let bytes = ckpt.to_bytes().unwrap();
    assert_eq!(Checkpoint::<f32>::from_bytes(&bytes).unwrap(), ckpt);
    let manifest = read_manifest(&bytes).unwrap();
    assert_eq!(manifest.config, config);
    assert_eq!(manifest.optimizer_step, 0);

    let truncated = &bytes[..bytes.len() - 3];
    assert!(matches!(Checkpoint::<f32>::from_bytes(truncated), Err(Error::Checkpoint(_))));
    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 0xff;
    assert!(matches!(Checkpoint::<f32>::from_bytes(&bad_magic), Err(Error::Checkpoint(_))));
}

#[test]
fn checkpoint_audit_names_mismatched_parameters() {
    let (_, tiny) = DssNet::new(ModelConfig::tiny(), 3).unwrap();
    let (_, default) = DssNet::new(ModelConfig::default(), 3).unwrap();
    let ckpt = Checkpoint::from_state(&TrainState::new(tiny.cast::<f32>()), serde_json::Value::Null);
    assert!(ckpt.audit(&tiny).is_ok());
    let msg = ckpt.audit(&default).unwrap_err().to_string();
    assert!(msg.contains("has shape"), "{msg}");
}
