use super::Network;
use crate::dataset::{frame_to_pose, Convention, FrameRecord, PosePair};
use crate::diff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::geom::{Pose, Quaternion, RelativePose, Vec3};
use crate::scalar::Real;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the quaternion term.
    pub beta: f64,
    /// Weights of the two absolute pose losses (RPNetPlus only).
    pub lambda_abs: [f64; 2],
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub align_gt_sign: bool,
    /// Rescales the batch gradient to at most this global norm.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            lambda_abs: [0.3, 0.3],
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 32,
            epochs: 200,
            seed: 0,
            align_gt_sign: true,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.beta > 0.0) {
            return bad("beta must be positive");
        }
        if !self.lambda_abs.iter().all(|l| *l >= 0.0) {
            return bad("auxiliary loss weights must be nonnegative");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("gradient clip must be positive");
        }
        Ok(())
    }
}

/// A training pair by frame index, with its ground-truth relative pose.
#[derive(Clone, Debug, PartialEq)]
pub struct PairIndex<T> {
    pub a: usize,
    pub b: usize,
    pub gt: RelativePose<T>,
}

/// Observations and absolute poses per frame, plus the pairs over them.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingData<T> {
    pub inputs: Vec<Vec<T>>,
    pub poses: Vec<Pose<T>>,
    pub pairs: Vec<PairIndex<T>>,
}

impl<T: Real> TrainingData<T> {
    /// Joins pairs to frames by frame id. `observations[i]` belongs to `frames[i]`.
    pub fn from_dataset(
        frames: &[FrameRecord],
        observations: &[Vec<f64>],
        pairs: &[PosePair],
        convention: Convention,
    ) -> Result<Self> {
        if frames.len() != observations.len() {
            return Err(Error::DimensionMismatch { expected: frames.len(), actual: observations.len() });
        }
        let index: HashMap<&str, usize> = frames.iter().enumerate().map(|(i, f)| (f.frame.as_str(), i)).collect();
        let lookup = |id: &str| index.get(id).copied().ok_or_else(|| Error::UnknownFrame(id.to_string()));
        let c = |v: f64| T::lit(v);
        let cq = |q: Quaternion<f64>| q.cast::<T>();
        let cv = |v: Vec3<f64>| [c(v[0]), c(v[1]), c(v[2])];
        let pairs = pairs
            .iter()
            .map(|p| {
                Ok(PairIndex {
                    a: lookup(&p.frame_a)?,
                    b: lookup(&p.frame_b)?,
                    gt: RelativePose::new(cq(p.gt_relative.rotation), cv(p.gt_relative.translation)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let poses = frames
            .iter()
            .map(|f| {
                let p = frame_to_pose(f, convention);
                Pose::new(cq(p.rotation), cv(p.translation))
            })
            .collect();
        let inputs = observations.iter().map(|o| o.iter().map(|v| c(*v)).collect()).collect();
        Ok(Self { inputs, poses, pairs })
    }

    pub fn targets(&self, batch: &[usize]) -> BatchTargets<T> {
        let pairs: Vec<&PairIndex<T>> = batch.iter().map(|&i| &self.pairs[i]).collect();
        let side = |pick: fn(&PairIndex<T>) -> usize| {
            let q = pairs.iter().map(|p| self.poses[pick(p)].rotation).collect();
            let t = pairs.iter().map(|p| self.poses[pick(p)].translation).collect();
            (q, t)
        };
        BatchTargets {
            relative_q: pairs.iter().map(|p| p.gt.rotation).collect(),
            relative_t: pairs.iter().map(|p| p.gt.translation).collect(),
            absolute: Some([side(|p| p.a), side(|p| p.b)]),
        }
    }
}

/// Ground truth for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchTargets<T> {
    pub relative_q: Vec<Quaternion<T>>,
    pub relative_t: Vec<Vec3<T>>,
    /// World-frame absolute poses of frames A and B.
    pub absolute: Option<[(Vec<Quaternion<T>>, Vec<Vec3<T>>); 2]>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub network: Network<T>,
    /// Mean per-pair loss for each epoch, accumulated during that epoch.
    pub loss_curve: Vec<f64>,
}

/// Minibatch SGD with momentum (`v = mu v + g; p -= lr v`) on the mean batch
/// loss. Deterministic for a fixed seed.
pub fn train<T: Real>(mut network: Network<T>, data: &TrainingData<T>, cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if data.pairs.is_empty() {
        return Err(Error::EmptyInput("no training pairs"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.pairs.len()).collect();
    let mut velocity: Vec<Tensor<T>> =
        network.params().iter().map(|p| Tensor::zeros(p.value.rows(), p.value.cols())).collect();
    let lr = T::lit(cfg.learning_rate);
    let mu = T::lit(cfg.momentum);
    let mut tape = Tape::new();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            tape.clear();
            let a: Vec<&[T]> = batch.iter().map(|&i| data.inputs[data.pairs[i].a].as_slice()).collect();
            let b: Vec<&[T]> = batch.iter().map(|&i| data.inputs[data.pairs[i].b].as_slice()).collect();
            let pass = network.forward(&mut tape, &a, &b)?;
            let targets = data.targets(batch);
            let loss = network.loss(&mut tape, &pass, &targets, cfg)?;
            let batch_loss = tape.value(loss).get(0, 0).to_f64().unwrap_or(f64::NAN);
            if !batch_loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            total += batch_loss;
            let root = tape.scale(loss, T::one() / T::lit(batch.len() as f64));
            let mut grads = tape.backward(root)?;
            let mut scale = T::one();
            if let Some(clip) = cfg.grad_clip {
                let norm: T = pass
                    .params
                    .iter()
                    .filter_map(|v| grads.get(*v))
                    .flat_map(|g| g.data().iter().map(|x| *x * *x))
                    .sum::<T>()
                    .sqrt();
                if norm > T::lit(clip) {
                    scale = T::lit(clip) / norm;
                }
            }
            for ((param, var), vel) in network.params_mut().iter_mut().zip(&pass.params).zip(velocity.iter_mut()) {
                let Some(g) = grads.take(*var) else { continue };
                for ((p, v), g) in param.value.data_mut().iter_mut().zip(vel.data_mut()).zip(g.data()) {
                    *v = mu * *v + *g * scale;
                    *p = *p - lr * *v;
                }
            }
        }
        let mean = total / data.pairs.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        log::debug!("epoch {epoch}: mean loss {mean:.6}");
        curve.push(mean);
    }
    Ok(TrainOutcome { network, loss_curve: curve })
}

/// Test-time relative pose: unit quaternion, raw metric translation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate<T> {
    pub rotation: Quaternion<T>,
    pub translation: Vec3<T>,
}

const PREDICT_BATCH: usize = 256;

/// Relative pose estimates for `pairs`, with normalized quaternions.
pub fn predict<T: Real>(network: &Network<T>, inputs: &[Vec<T>], pairs: &[(usize, usize)]) -> Result<Vec<PoseEstimate<T>>> {
    let mut out = Vec::with_capacity(pairs.len());
    let mut tape = Tape::new();
    for chunk in pairs.chunks(PREDICT_BATCH) {
        tape.clear();
        let input = |i: usize| inputs.get(i).map(Vec::as_slice).ok_or(Error::DimensionMismatch { expected: inputs.len(), actual: i + 1 });
        let a = chunk.iter().map(|p| input(p.0)).collect::<Result<Vec<_>>>()?;
        let b = chunk.iter().map(|p| input(p.1)).collect::<Result<Vec<_>>>()?;
        let pass = network.forward(&mut tape, &a, &b)?;
        let (q, t) = (tape.value(pass.relative_q), tape.value(pass.relative_t));
        for i in 0..chunk.len() {
            out.push(PoseEstimate { rotation: q.quat(i).normalize()?, translation: t.vec3(i) });
        }
    }
    Ok(out)
}
