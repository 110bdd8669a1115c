mod common;

use common::*;
use rand::Rng;
use rpk::dataset::PairGenConfig;
use rpk::geom::{norm3, Quaternion};
use rpk::model::checkpoint;
use rpk::model::*;
use rpk::Error;

fn randomized(variant: HeadVariant, cfg: BackboneConfig, seed: u64) -> Network<f64> {
    let mut net = Network::new(variant, cfg, seed).unwrap();
    let mut r = rng(seed);
    for p in net.params_mut().iter_mut().filter(|p| p.name.ends_with(".bias")) {
        p.value.data_mut().iter_mut().for_each(|b| *b = r.random_range(-0.5..0.5));
    }
    net
}

fn input(r: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// Maximum violation of `estimate(b, a) == estimate(a, b)^-1` over random draws.
pub fn swap_violation(variant: HeadVariant, instances: usize, seed: u64) -> f64 {
    let cfg = BackboneConfig { input_dim: 24, hidden: vec![32], embedding_dim: 16, head_width: 16 };
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let net = randomized(variant, cfg.clone(), seed + i as u64);
        let (a, b) = (input(&mut r, 24), input(&mut r, 24));
        let ab = net.estimate(&a, &b).unwrap();
        let ba = net.estimate(&b, &a).unwrap();
        let q_ab = ab.relative_q.normalize().unwrap();
        let q_ba = ba.relative_q.normalize().unwrap();
        let inv_q = aligned(q_ab.conj(), q_ba);
        let inv_t = q_ab.rotate_inverse(ab.relative_t).map(|v| -v);
        let dq = q_ba.to_array().iter().zip(inv_q.to_array()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let dt = (0..3).map(|k| (ba.relative_t[k] - inv_t[k]).abs()).fold(0.0, f64::max);
        worst = worst.max(dq).max(dt / (1.0 + norm3(inv_t)));
    }
    worst
}

#[test]
fn swapping_inputs_inverts_the_relative_pose() {
    for variant in [HeadVariant::RPNet, HeadVariant::RPNetPlus] {
        let err = swap_violation(variant, 100, 3);
        assert!(err <= 1e-6, "{variant}: {err:.3e}");
    }
}

#[test]
fn identical_inputs_give_the_identity() {
    let mut r = rng(1);
    for variant in [HeadVariant::RPNet, HeadVariant::RPNetPlus] {
        let net = randomized(variant, BackboneConfig::new(10), 7);
        for _ in 0..20 {
            let x = input(&mut r, 10);
            let est = net.estimate(&x, &x).unwrap();
            let q = est.relative_q.normalize().unwrap();
            assert!((q.w.abs() - 1.0).abs() <= 1e-12 && q.x.abs().max(q.y.abs()).max(q.z.abs()) <= 1e-12);
            assert!(norm3(est.relative_t) <= 1e-12);
        }
    }
}

#[test]
fn both_branches_share_one_parameter_set() {
    for variant in HeadVariant::ALL {
        let net = Network::<f64>::new(variant, BackboneConfig::new(10), 0).unwrap();
        let (a, b) = (net.branch_params(Branch::A), net.branch_params(Branch::B));
        assert!(std::ptr::eq(a, b));
        assert!(!a.is_empty());
    }
}

#[test]
fn zero_output_layer_surfaces_zero_norm() {
    for variant in HeadVariant::ALL {
        let mut net = Network::<f64>::new(variant, BackboneConfig::new(6), 2).unwrap();
        let last = net.params().len() - 2;
        for p in &mut net.params_mut()[last..] {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let inputs = vec![vec![0.3; 6], vec![-0.2; 6]];
        assert!(matches!(predict(&net, &inputs, &[(0, 1)]), Err(Error::ZeroNorm(_))), "{variant}");
    }
}

#[test]
fn predictions_are_unit_quaternions() {
    let net = randomized(HeadVariant::RPNetFC, BackboneConfig::new(6), 4);
    let mut r = rng(2);
    let inputs: Vec<_> = (0..10).map(|_| input(&mut r, 6)).collect();
    let pairs: Vec<_> = (0..9).map(|i| (i, i + 1)).collect();
    for e in predict(&net, &inputs, &pairs).unwrap() {
        assert!((e.rotation.norm() - 1.0).abs() <= 1e-12);
    }
    assert!(matches!(predict(&net, &inputs, &[(0, 10)]), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn checkpoints_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    for variant in HeadVariant::ALL {
        let mut net = randomized(variant, BackboneConfig { input_dim: 5, hidden: vec![7], embedding_dim: 8, head_width: 9 }, 1);
        net.set_input_normalization(vec![0.1, 0.2, 0.3, 0.4, 0.5], vec![2.0; 5]).unwrap();
        let path = dir.path().join(format!("{variant}.bin"));
        checkpoint::save(&net, &path).unwrap();
        let back: Network<f64> = checkpoint::load(&path).unwrap();
        assert_eq!(back, net);
        let x = [0.1, -0.4, 0.9, 0.0, 0.3];
        let y = [0.5, 0.2, -0.1, 0.7, -0.6];
        assert_eq!(back.estimate(&x, &y).unwrap(), net.estimate(&x, &y).unwrap());
    }
    assert!(matches!(checkpoint::from_bytes::<f64>(b"not a checkpoint"), Err(Error::Checkpoint(_))));
}

fn short_cfg(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig { epochs, seed, batch_size: 16, ..TrainConfig::default() }
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let problem = build_problem(&small_spec(3), &PairGenConfig::default());
    let bb = BackboneConfig { input_dim: problem.train.inputs[0].len(), hidden: vec![32], embedding_dim: 16, head_width: 16 };
    let run = |seed: u64| {
        let mut net = Network::new(HeadVariant::RPNetPlus, bb.clone(), 5).unwrap();
        net.fit_input_normalization(&problem.train.inputs).unwrap();
        train(net, &problem.train, &short_cfg(3, seed)).unwrap()
    };
    let (a, b, c) = (run(1), run(1), run(2));
    assert_eq!(a.loss_curve, b.loss_curve);
    assert_eq!(a.network, b.network);
    assert_ne!(a.loss_curve, c.loss_curve);
    assert_eq!(a.loss_curve.len(), 3);
}

#[test]
fn training_reduces_the_loss_for_every_variant() {
    let problem = build_problem(&small_spec(6), &PairGenConfig::default());
    let d = problem.train.inputs[0].len();
    for variant in HeadVariant::ALL {
        let bb = BackboneConfig { input_dim: d, hidden: vec![64], embedding_dim: 32, head_width: 32 };
        let mut net = Network::new(variant, bb, 1).unwrap();
        net.fit_input_normalization(&problem.train.inputs).unwrap();
        let out = train(net, &problem.train, &short_cfg(30, 0)).unwrap();
        let (first, last) = (out.loss_curve[0], *out.loss_curve.last().unwrap());
        assert!(last < 0.5 * first, "{variant}: {first} -> {last}");
    }
}

#[test]
fn gradient_clipping_bounds_each_step() {
    let problem = build_problem(&small_spec(2), &PairGenConfig::default());
    let bb = BackboneConfig { input_dim: problem.train.inputs[0].len(), hidden: vec![16], embedding_dim: 8, head_width: 8 };
    let net = Network::new(HeadVariant::RPNet, bb, 0).unwrap();
    let cfg = TrainConfig { epochs: 1, batch_size: 1_000_000, momentum: 0.0, learning_rate: 0.1, grad_clip: Some(1e-3), ..TrainConfig::default() };
    let out = train(net.clone(), &problem.train, &cfg).unwrap();
    let step: f64 = out
        .network
        .params()
        .iter()
        .zip(net.params())
        .flat_map(|(a, b)| a.value.data().iter().zip(b.value.data()).map(|(x, y)| (x - y).powi(2)))
        .sum::<f64>()
        .sqrt();
    assert!(step <= 0.1 * 1e-3 * (1.0 + 1e-9), "step {step}");
}

#[test]
fn runaway_learning_rate_is_reported_as_divergence() {
    let problem = build_problem(&small_spec(2), &PairGenConfig::default());
    let bb = BackboneConfig { input_dim: problem.train.inputs[0].len(), hidden: vec![16], embedding_dim: 8, head_width: 8 };
    let net = Network::new(HeadVariant::RPNetFC, bb, 0).unwrap();
    let cfg = TrainConfig { epochs: 50, learning_rate: 1e150, ..TrainConfig::default() };
    assert!(matches!(train(net, &problem.train, &cfg), Err(Error::Divergence { .. })));
}

#[test]
fn training_config_is_validated() {
    for cfg in [
        TrainConfig { beta: 0.0, ..TrainConfig::default() },
        TrainConfig { learning_rate: -1.0, ..TrainConfig::default() },
        TrainConfig { momentum: 1.0, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
    ] {
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }
}

#[test]
fn unknown_frames_are_reported() {
    let problem = build_problem(&small_spec(1), &PairGenConfig::default());
    let mut pairs = problem.train_pairs.clone();
    pairs[0].frame_b = "seq9/missing.png".into();
    let obs: Vec<Vec<f64>> = problem.train.inputs.clone();
    let err = TrainingData::<f64>::from_dataset(&problem.scene.train, &obs, &pairs, Default::default()).unwrap_err();
    assert!(matches!(err, Error::UnknownFrame(id) if id == "seq9/missing.png"));
}

#[test]
fn single_precision_networks_run() {
    let net = Network::<f32>::new(HeadVariant::RPNet, BackboneConfig::new(4), 0).unwrap();
    let est = net.estimate(&[0.1, 0.2, 0.3, 0.4], &[0.4, 0.3, 0.2, 0.1]).unwrap();
    assert!(est.relative_q.norm() > 0.0);
    let _: Quaternion<f64> = est.relative_q.cast();
}

#[test]
fn variant_names_parse() {
    for v in HeadVariant::ALL {
        assert_eq!(v.as_str().parse::<HeadVariant>().unwrap(), v);
    }
    assert_eq!("rpnet+".parse::<HeadVariant>().unwrap(), HeadVariant::RPNetPlus);
    assert!("resnet".parse::<HeadVariant>().is_err());
}
