#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpk::diff::{d_loss, d_quat_conj, d_quat_mul, d_relative_pose, LossOptions, Tape, Tensor, Var};
use rpk::geom::{Pose, Quaternion, Vec3};
use rpk::model::{BackboneConfig, BatchTargets, HeadVariant, Network, TrainConfig};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Gradients smaller than this are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-2;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a - n| / max(|a|, |n|, FD_FLOOR)`
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + FD_STEP;
            let up = f(&p);
            p[i] = x[i] - FD_STEP;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic.iter().zip(numeric).map(|(a, n)| rel_err(*a, *n)).fold(0.0, f64::max)
}

/// A scalar function built on the tape from a list of input tensors.
pub type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Var;

/// Backpropagated gradient of `build` with respect to every input, flattened.
pub fn tape_gradient(inputs: &[Tensor<f64>], build: &Build) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let root = build(&mut tape, &vars);
    let value = tape.value(root).get(0, 0);
    let grads = tape.backward(root).unwrap();
    let flat = vars
        .iter()
        .zip(inputs)
        .flat_map(|(v, t)| grads.get_or_zeros(*v, t.shape()).into_vec())
        .collect();
    (value, flat)
}

/// Forward value of `build` at a flattened input vector.
pub fn tape_value(shapes: &[(usize, usize)], flat: &[f64], build: &Build) -> f64 {
    let mut tape = Tape::new();
    let mut offset = 0;
    let vars: Vec<Var> = shapes
        .iter()
        .map(|&(r, c)| {
            let t = Tensor::from_vec(r, c, flat[offset..offset + r * c].to_vec()).unwrap();
            offset += r * c;
            tape.var(t)
        })
        .collect();
    let root = build(&mut tape, &vars);
    tape.value(root).get(0, 0)
}

/// Worst relative error between backprop and central differences.
pub fn gradcheck(inputs: &[Tensor<f64>], build: &Build) -> f64 {
    let (_, analytic) = tape_gradient(inputs, build);
    let shapes: Vec<_> = inputs.iter().map(Tensor::shape).collect();
    let flat: Vec<f64> = inputs.iter().flat_map(|t| t.data().to_vec()).collect();
    let numeric = numeric_gradient(&flat, |x| tape_value(&shapes, x, build));
    max_rel_err(&analytic, &numeric)
}

/// `sum_ij w_ij x_ij`, one `1 x rows` by `rows x 1` product per column.
/// Random weights probe every output direction of `x`.
pub fn project(tape: &mut Tape<f64>, x: Var, weights: &Tensor<f64>) -> Var {
    let (rows, cols) = tape.shape(x);
    assert_eq!((rows, cols), weights.shape());
    let mut total: Option<Var> = None;
    for j in 0..cols {
        let col = tape.slice_cols(x, j, 1).unwrap();
        let wj: Vec<f64> = (0..rows).map(|i| weights.get(i, j)).collect();
        let wt = tape.constant(Tensor::from_vec(1, rows, wj).unwrap());
        let s = tape.matmul(wt, col).unwrap();
        total = Some(match total {
            Some(t) => tape.add(t, s).unwrap(),
            None => s,
        });
    }
    total.unwrap()
}

pub fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor<f64> {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

pub fn random_vec3(rng: &mut impl Rng, scale: f64) -> Vec3<f64> {
    std::array::from_fn(|_| rng.random_range(-scale..scale))
}

/// Uniform random unit quaternion (Shoemake).
pub fn random_unit_quat(rng: &mut impl Rng) -> Quaternion<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    Quaternion::new(b * (tau * u3).cos(), a * (tau * u2).sin(), a * (tau * u2).cos(), b * (tau * u3).sin())
}

/// A raw, non-unit quaternion kept away from zero.
pub fn random_raw_quat(rng: &mut impl Rng) -> Quaternion<f64> {
    let q = random_unit_quat(rng);
    let s = rng.random_range(0.5..2.0);
    Quaternion::new(q.w * s, q.x * s, q.y * s, q.z * s)
}

pub fn random_pose(rng: &mut impl Rng, scale: f64) -> Pose<f64> {
    Pose::new(random_unit_quat(rng), random_vec3(rng, scale))
}

pub fn quat_tensor(qs: &[Quaternion<f64>]) -> Tensor<f64> {
    let rows: Vec<[f64; 4]> = qs.iter().map(|q| q.to_array()).collect();
    Tensor::from_rows(&rows).unwrap()
}

pub fn vec_tensor(vs: &[Vec3<f64>]) -> Tensor<f64> {
    Tensor::from_rows(vs).unwrap()
}

/// Naive 3x3 product, independent of the library's matrix code.
pub fn mat3_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

pub fn mat3_transpose(a: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| a[j][i]))
}

/// Rotation matrix of a unit quaternion from the textbook closed form.
pub fn oracle_rotation(q: Quaternion<f64>) -> [[f64; 3]; 3] {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn mat3_vec(a: &[[f64; 3]; 3], v: Vec3<f64>) -> Vec3<f64> {
    std::array::from_fn(|i| (0..3).map(|k| a[i][k] * v[k]).sum())
}

pub fn max_abs_diff3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> f64 {
    (0..3).flat_map(|i| (0..3).map(move |j| (a[i][j] - b[i][j]).abs())).fold(0.0, f64::max)
}

/// Hamilton product written out component by component.
pub fn oracle_quat_mul(a: Quaternion<f64>, b: Quaternion<f64>) -> Quaternion<f64> {
    Quaternion::new(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )
}

/// Small network for parameter gradient checks; at most 200 parameters.
pub fn tiny_backbone() -> BackboneConfig {
    BackboneConfig { input_dim: 6, hidden: vec![4], embedding_dim: 8, head_width: 4 }
}

/// Worst gradient error per differentiable operation over `instances`
/// random draws each.
pub fn gradient_suite(instances: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let rows = 2;
    let mut worst = vec![
        ("d_quat_mul", 0.0f64),
        ("d_quat_mul(q, q)", 0.0),
        ("d_quat_conj", 0.0),
        ("rotate", 0.0),
        ("d_relative_pose", 0.0),
        ("d_loss", 0.0),
    ];
    for _ in 0..instances {
        let qa: Vec<_> = (0..rows).map(|_| random_raw_quat(&mut r)).collect();
        let qb: Vec<_> = (0..rows).map(|_| random_raw_quat(&mut r)).collect();
        let ta: Vec<_> = (0..rows).map(|_| random_vec3(&mut r, 5.0)).collect();
        let tb: Vec<_> = (0..rows).map(|_| random_vec3(&mut r, 5.0)).collect();
        let w4 = random_tensor(&mut r, rows, 4, 1.0);
        let w3 = random_tensor(&mut r, rows, 3, 1.0);
        let (a, b, ua, ub) = (quat_tensor(&qa), quat_tensor(&qb), vec_tensor(&ta), vec_tensor(&tb));

        let (w, w_) = (w4.clone(), w4.clone());
        let mul: Box<Build> = Box::new(move |t, v| {
            let out = d_quat_mul(t, v[0], v[1]).unwrap();
            project(t, out, &w)
        });
        worst[0].1 = worst[0].1.max(gradcheck(&[a.clone(), b.clone()], &*mul));
        let square: Box<Build> = Box::new(move |t, v| {
            let out = d_quat_mul(t, v[0], v[0]).unwrap();
            project(t, out, &w_)
        });
        worst[1].1 = worst[1].1.max(gradcheck(&[a.clone()], &*square));
        let w = w4.clone();
        let conj: Box<Build> = Box::new(move |t, v| {
            let out = d_quat_conj(t, v[0]).unwrap();
            project(t, out, &w)
        });
        worst[2].1 = worst[2].1.max(gradcheck(&[a.clone()], &*conj));
        let w = w3.clone();
        let rot: Box<Build> = Box::new(move |t, v| {
            let out = t.rotate(v[0], v[1]).unwrap();
            project(t, out, &w)
        });
        worst[3].1 = worst[3].1.max(gradcheck(&[a.clone(), ua.clone()], &*rot));
        let (w, wt) = (w4.clone(), w3.clone());
        let rel: Box<Build> = Box::new(move |t, v| {
            let (q, tr) = d_relative_pose(t, v[0], v[1], v[2], v[3]).unwrap();
            let lq = project(t, q, &w);
            let lt = project(t, tr, &wt);
            t.add(lq, lt).unwrap()
        });
        worst[4].1 = worst[4].1.max(gradcheck(&[a.clone(), ua.clone(), b.clone(), ub.clone()], &*rel));
        let gt_q: Vec<_> = (0..rows).map(|_| random_unit_quat(&mut r)).collect();
        let gt_t: Vec<_> = (0..rows).map(|_| random_vec3(&mut r, 5.0)).collect();
        let beta = r.random_range(0.1..3.0);
        let loss: Box<Build> = Box::new(move |t, v| d_loss(t, v[0], v[1], &gt_q, &gt_t, beta, LossOptions::default()).unwrap());
        worst[5].1 = worst[5].1.max(gradcheck(&[a, ua], &*loss));
    }
    worst
}

fn flat_params(net: &Network<f64>) -> Vec<f64> {
    net.params().iter().flat_map(|p| p.value.data().to_vec()).collect()
}

fn with_params(net: &Network<f64>, flat: &[f64]) -> Network<f64> {
    let mut out = net.clone();
    let mut off = 0;
    for p in out.params_mut() {
        let n = p.value.data().len();
        p.value.data_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    }
    out
}

/// Training loss of `net` on one random batch, and its parameter gradient.
pub fn network_loss(net: &Network<f64>, batch: &NetBatch, cfg: &TrainConfig) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let a: Vec<&[f64]> = batch.a.iter().map(Vec::as_slice).collect();
    let b: Vec<&[f64]> = batch.b.iter().map(Vec::as_slice).collect();
    let pass = net.forward(&mut tape, &a, &b).unwrap();
    let loss = net.loss(&mut tape, &pass, &batch.targets, cfg).unwrap();
    let value = tape.value(loss).get(0, 0);
    let grads = tape.backward(loss).unwrap();
    let flat = pass
        .params
        .iter()
        .zip(net.params())
        .flat_map(|(v, p)| grads.get_or_zeros(*v, p.value.shape()).into_vec())
        .collect();
    (value, flat)
}

pub struct NetBatch {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub targets: BatchTargets<f64>,
}

pub fn random_batch(r: &mut ChaCha8Rng, rows: usize, dim: usize) -> NetBatch {
    let input = |r: &mut ChaCha8Rng| (0..dim).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let a = (0..rows).map(|_| input(r)).collect();
    let b = (0..rows).map(|_| input(r)).collect();
    let side = |r: &mut ChaCha8Rng| {
        let q = (0..rows).map(|_| random_unit_quat(r)).collect::<Vec<_>>();
        let t = (0..rows).map(|_| random_vec3(r, 3.0)).collect::<Vec<_>>();
        (q, t)
    };
    let (relative_q, relative_t) = side(r);
    let absolute = Some([side(r), side(r)]);
    NetBatch { a, b, targets: BatchTargets { relative_q, relative_t, absolute } }
}

/// Worst parameter-gradient error of the full training loss, per variant.
pub fn network_gradient_suite(instances: usize, seed: u64) -> Vec<(HeadVariant, usize, f64)> {
    let mut r = rng(seed);
    let cfg = TrainConfig { beta: 1.7, ..TrainConfig::default() };
    HeadVariant::ALL
        .iter()
        .map(|&variant| {
            let mut worst = 0.0f64;
            let mut count = 0;
            for i in 0..instances {
                let mut net = Network::<f64>::new(variant, tiny_backbone(), seed ^ (i as u64 * 7919)).unwrap();
                // Zero biases can leave every unit dead and the output
                // quaternion exactly zero, where the loss has a kink.
                for p in net.params_mut().iter_mut().filter(|p| p.name.ends_with(".bias")) {
                    p.value.data_mut().iter_mut().for_each(|b| *b = r.random_range(-0.5..0.5));
                }
                count = net.parameter_count();
                let batch = random_batch(&mut r, 2, tiny_backbone().input_dim);
                let (_, analytic) = network_loss(&net, &batch, &cfg);
                let x0 = flat_params(&net);
                let numeric = numeric_gradient(&x0, |x| network_loss(&with_params(&net, x), &batch, &cfg).0);
                worst = worst.max(max_rel_err(&analytic, &numeric));
            }
            (variant, count, worst)
        })
        .collect()
}

/// A synthetic scene with its pairs and training data, train and test.
pub struct Problem {
    pub scene: rpk::synth::SyntheticScene,
    pub train_pairs: Vec<rpk::dataset::PosePair>,
    pub test_pairs: Vec<rpk::dataset::PosePair>,
    pub train: rpk::model::TrainingData<f64>,
    pub test: rpk::model::TrainingData<f64>,
}

pub fn build_problem(spec: &rpk::synth::SceneSpec, pair_cfg: &rpk::dataset::PairGenConfig) -> Problem {
    use rpk::dataset::{generate_pairs, Split};
    use rpk::model::TrainingData;
    use rpk::synth::{generate_scene, observe_frames};
    let scene = generate_scene(spec).unwrap();
    let values = |o: Vec<rpk::synth::Observation>| o.into_iter().map(|o| o.values).collect::<Vec<_>>();
    let obs_train = values(observe_frames(&scene.train, &scene.landmarks, spec.noise_sigma, spec.seed));
    let obs_test = values(observe_frames(&scene.test, &scene.landmarks, spec.noise_sigma, spec.seed + 1));
    let train_pairs = generate_pairs(&scene.train, pair_cfg, Split::Train).unwrap().pairs;
    let test_pairs = generate_pairs(&scene.test, pair_cfg, Split::Test).unwrap().pairs;
    let train = TrainingData::from_dataset(&scene.train, &obs_train, &train_pairs, pair_cfg.convention).unwrap();
    let test = TrainingData::from_dataset(&scene.test, &obs_test, &test_pairs, pair_cfg.convention).unwrap();
    Problem { scene, train_pairs, test_pairs, train, test }
}

pub fn small_spec(seed: u64) -> rpk::synth::SceneSpec {
    rpk::synth::SceneSpec { landmarks: 12, sequences: 2, frames_per_sequence: 16, test_frames_per_sequence: 4, seed, ..Default::default() }
}

/// Raw quaternion with the sign chosen to match `reference`.
pub fn aligned(q: Quaternion<f64>, reference: Quaternion<f64>) -> Quaternion<f64> {
    if q.dot(reference) < 0.0 {
        -q
    } else {
        q
    }
}
