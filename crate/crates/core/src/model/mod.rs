//! Siamese pose network with three relative pose heads.
//!
//! Both branches run through one parameter set: the two observation batches
//! are stacked row-wise and pushed through the backbone in a single pass.
//!
//! * [`HeadVariant::RPNet`]: a 7-output pose head per branch, combined by the
//!   parameter-free relative pose layer.
//! * [`HeadVariant::RPNetPlus`]: as above, plus absolute pose losses on both
//!   branch outputs.
//! * [`HeadVariant::RPNetFC`]: the two embeddings are concatenated and
//!   regressed by two ReLU layers (128 wide by default) and a 7-output layer.

pub mod checkpoint;
mod train;

pub use train::{predict, train, BatchTargets, PairIndex, PoseEstimate, TrainConfig, TrainOutcome, TrainingData};

use crate::diff::{self, LossOptions, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::{Quaternion, Vec3};
use crate::scalar::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Default width of the two hidden layers of the fully connected relative head.
pub const FC_HEAD_WIDTH: usize = 128;
/// Quaternion (4) followed by translation (3).
pub const POSE_OUTPUTS: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadVariant {
    #[serde(rename = "rpnet")]
    RPNet,
    #[serde(rename = "rpnet-plus")]
    RPNetPlus,
    #[serde(rename = "rpnet-fc")]
    RPNetFC,
}

impl HeadVariant {
    pub const ALL: [HeadVariant; 3] = [HeadVariant::RPNet, HeadVariant::RPNetPlus, HeadVariant::RPNetFC];

    pub fn as_str(self) -> &'static str {
        match self {
            HeadVariant::RPNet => "rpnet",
            HeadVariant::RPNetPlus => "rpnet-plus",
            HeadVariant::RPNetFC => "rpnet-fc",
        }
    }

    /// Whether the head produces one absolute pose per branch.
    pub fn has_branch_poses(self) -> bool {
        !matches!(self, HeadVariant::RPNetFC)
    }
}

impl fmt::Display for HeadVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeadVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rpnet" => Ok(HeadVariant::RPNet),
            "rpnet-plus" | "rpnet+" | "rpnetplus" => Ok(HeadVariant::RPNetPlus),
            "rpnet-fc" | "rpnetfc" => Ok(HeadVariant::RPNetFC),
            other => Err(Error::InvalidConfig(format!("unknown variant '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    /// Hidden width of the RPNetFC relative head.
    #[serde(default = "default_head_width")]
    pub head_width: usize,
}

fn default_head_width() -> usize {
    FC_HEAD_WIDTH
}

impl BackboneConfig {
    pub fn new(input_dim: usize) -> Self {
        Self { input_dim, hidden: vec![256, 256], embedding_dim: 256, head_width: FC_HEAD_WIDTH }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig("input dimension must be positive".into()));
        }
        if self.embedding_dim < 8 {
            return Err(Error::InvalidConfig(format!("embedding dimension {} below 8", self.embedding_dim)));
        }
        if self.hidden.contains(&0) || self.head_width == 0 {
            return Err(Error::InvalidConfig("hidden layer sizes must be positive".into()));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(self.embedding_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Named layer shapes `(fan_in, fan_out)` in parameter order.
fn layer_layout(variant: HeadVariant, cfg: &BackboneConfig) -> Vec<(String, usize, usize)> {
    let mut layers: Vec<(String, usize, usize)> = cfg
        .layer_dims()
        .into_iter()
        .enumerate()
        .map(|(i, (a, b))| (format!("backbone.{i}"), a, b))
        .collect();
    let e = cfg.embedding_dim;
    match variant {
        HeadVariant::RPNet | HeadVariant::RPNetPlus => layers.push(("pose".into(), e, POSE_OUTPUTS)),
        HeadVariant::RPNetFC => {
            let w = cfg.head_width;
            layers.push(("fc.0".into(), 2 * e, w));
            layers.push(("fc.1".into(), w, w));
            layers.push(("fc.out".into(), w, POSE_OUTPUTS));
        }
    }
    layers
}

/// Trainable parameter count without building the network.
pub fn parameter_count(variant: HeadVariant, cfg: &BackboneConfig) -> usize {
    layer_layout(variant, cfg).iter().map(|(_, a, b)| a * b + b).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    A,
    B,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    variant: HeadVariant,
    backbone: BackboneConfig,
    params: Vec<Param<T>>,
    /// Per-feature standardization `(x - shift) * scale`, applied outside the graph.
    input_shift: Vec<T>,
    input_scale: Vec<T>,
}

/// Tape handles produced by [`Network::forward`].
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// One handle per parameter, in [`Network::params`] order.
    pub params: Vec<Var>,
    pub relative_q: Var,
    pub relative_t: Var,
    /// Per-branch `(q, t)` for the heads that have them.
    pub branches: Option<[(Var, Var); 2]>,
}

/// Network outputs for one pair, before any normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct RawEstimate<T> {
    pub relative_q: Quaternion<T>,
    pub relative_t: Vec3<T>,
    pub branches: Option<[(Quaternion<T>, Vec3<T>); 2]>,
}

impl<T: Real> Network<T> {
    /// He-style uniform initialization, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`,
    /// zero biases.
    pub fn new(variant: HeadVariant, backbone: BackboneConfig, seed: u64) -> Result<Self> {
        backbone.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for (name, fan_in, fan_out) in layer_layout(variant, &backbone) {
            let limit = (6.0 / fan_in as f64).sqrt();
            let w: Vec<T> = (0..fan_in * fan_out).map(|_| T::lit(rng.random_range(-limit..limit))).collect();
            params.push(Param { name: format!("{name}.weight"), value: Tensor::from_vec(fan_in, fan_out, w)? });
            params.push(Param { name: format!("{name}.bias"), value: Tensor::zeros(1, fan_out) });
        }
        let d = backbone.input_dim;
        Ok(Self { variant, backbone, params, input_shift: vec![T::zero(); d], input_scale: vec![T::one(); d] })
    }

    pub fn variant(&self) -> HeadVariant {
        self.variant
    }

    pub fn backbone(&self) -> &BackboneConfig {
        &self.backbone
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.data().len()).sum()
    }

    /// Parameters applied to one branch. Both branches get the same slice.
    pub fn branch_params(&self, _branch: Branch) -> &[Param<T>] {
        let shared = match self.variant {
            HeadVariant::RPNet | HeadVariant::RPNetPlus => self.params.len(),
            HeadVariant::RPNetFC => 2 * self.backbone.layer_dims().len(),
        };
        &self.params[..shared]
    }

    pub fn input_normalization(&self) -> (&[T], &[T]) {
        (&self.input_shift, &self.input_scale)
    }

    pub fn set_input_normalization(&mut self, shift: Vec<T>, scale: Vec<T>) -> Result<()> {
        let d = self.backbone.input_dim;
        for len in [shift.len(), scale.len()] {
            if len != d {
                return Err(Error::DimensionMismatch { expected: d, actual: len });
            }
        }
        self.input_shift = shift;
        self.input_scale = scale;
        Ok(())
    }

    /// Standardizes every feature to zero mean and unit variance over `inputs`.
    /// Constant features keep scale 1.
    pub fn fit_input_normalization(&mut self, inputs: &[Vec<T>]) -> Result<()> {
        let d = self.backbone.input_dim;
        if inputs.is_empty() {
            return Err(Error::EmptyInput("no inputs to fit normalization"));
        }
        let n = T::lit(inputs.len() as f64);
        let mut mean = vec![T::zero(); d];
        for x in inputs {
            if x.len() != d {
                return Err(Error::DimensionMismatch { expected: d, actual: x.len() });
            }
            for (m, v) in mean.iter_mut().zip(x) {
                *m = *m + *v;
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / n);
        let mut var = vec![T::zero(); d];
        for x in inputs {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                *s = *s + (*v - *m) * (*v - *m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > T::lit(1e-8) { T::one() / sd } else { T::one() }
            })
            .collect();
        self.set_input_normalization(mean, scale)
    }

    fn normalized_stack(&self, a: &[&[T]], b: &[&[T]]) -> Result<Tensor<T>> {
        let d = self.backbone.input_dim;
        let mut data = Vec::with_capacity((a.len() + b.len()) * d);
        for x in a.iter().chain(b) {
            if x.len() != d {
                return Err(Error::DimensionMismatch { expected: d, actual: x.len() });
            }
            data.extend(x.iter().zip(&self.input_shift).zip(&self.input_scale).map(|((v, s), k)| (*v - *s) * *k));
        }
        Tensor::from_vec(a.len() + b.len(), d, data)
    }

    /// Records the network on `tape` for a batch of `(a[i], b[i])` pairs.
    pub fn forward(&self, tape: &mut Tape<T>, a: &[&[T]], b: &[&[T]]) -> Result<ForwardPass> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch { expected: a.len(), actual: b.len() });
        }
        if a.is_empty() {
            return Err(Error::EmptyInput("empty batch"));
        }
        let rows = a.len();
        let stacked = self.normalized_stack(a, b)?;
        let params: Vec<Var> = self.params.iter().map(|p| tape.var(p.value.clone())).collect();
        let mut h = tape.constant(stacked);
        let backbone_layers = self.backbone.layer_dims().len();
        for l in 0..backbone_layers {
            h = dense(tape, h, params[2 * l], params[2 * l + 1])?;
            h = tape.relu(h);
        }
        let head = &params[2 * backbone_layers..];
        match self.variant {
            HeadVariant::RPNet | HeadVariant::RPNetPlus => {
                let out = dense(tape, h, head[0], head[1])?;
                let q = tape.slice_cols(out, 0, 4)?;
                let t = tape.slice_cols(out, 4, 3)?;
                let (qa, qb) = (tape.slice_rows(q, 0, rows)?, tape.slice_rows(q, rows, rows)?);
                let (ta, tb) = (tape.slice_rows(t, 0, rows)?, tape.slice_rows(t, rows, rows)?);
                let (relative_q, relative_t) = diff::d_relative_pose(tape, qa, ta, qb, tb)?;
                Ok(ForwardPass { params, relative_q, relative_t, branches: Some([(qa, ta), (qb, tb)]) })
            }
            HeadVariant::RPNetFC => {
                let ea = tape.slice_rows(h, 0, rows)?;
                let eb = tape.slice_rows(h, rows, rows)?;
                let mut z = tape.concat_cols(ea, eb)?;
                for layer in head[..4].chunks(2) {
                    z = dense(tape, z, layer[0], layer[1])?;
                    z = tape.relu(z);
                }
                let out = dense(tape, z, head[4], head[5])?;
                let relative_q = tape.slice_cols(out, 0, 4)?;
                let relative_t = tape.slice_cols(out, 4, 3)?;
                Ok(ForwardPass { params, relative_q, relative_t, branches: None })
            }
        }
    }

    /// Raw outputs for a single pair.
    pub fn estimate(&self, a: &[T], b: &[T]) -> Result<RawEstimate<T>> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, &[a], &[b])?;
        let pose = |q: Var, t: Var| (tape.value(q).quat(0), tape.value(t).vec3(0));
        let (relative_q, relative_t) = pose(pass.relative_q, pass.relative_t);
        let branches = pass.branches.map(|[x, y]| [pose(x.0, x.1), pose(y.0, y.1)]);
        Ok(RawEstimate { relative_q, relative_t, branches })
    }

    /// Training objective summed over the batch.
    pub fn loss(&self, tape: &mut Tape<T>, pass: &ForwardPass, targets: &BatchTargets<T>, cfg: &TrainConfig) -> Result<Var> {
        let opts = LossOptions { align_gt_sign: cfg.align_gt_sign };
        let beta = T::lit(cfg.beta);
        let mut total = diff::d_loss(tape, pass.relative_q, pass.relative_t, &targets.relative_q, &targets.relative_t, beta, opts)?;
        if self.variant == HeadVariant::RPNetPlus {
            let (branches, abs) = match (&pass.branches, &targets.absolute) {
                (Some(b), Some(a)) => (b, a),
                _ => return Err(Error::InvalidConfig("rpnet-plus needs absolute pose targets".into())),
            };
            for ((q, t), ((gq, gt), lambda)) in branches.iter().zip(abs.iter().zip(cfg.lambda_abs)) {
                let aux = diff::d_loss(tape, *q, *t, gq, gt, beta, opts)?;
                let aux = tape.scale(aux, T::lit(lambda));
                total = tape.add(total, aux)?;
            }
        }
        Ok(total)
    }
}

fn dense<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_bias(y, b)
}
