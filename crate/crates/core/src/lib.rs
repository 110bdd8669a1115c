//! Relative camera pose toolkit.
//!
//! Quaternion and rigid-transform arithmetic, a small reverse-mode tape with
//! differentiable geometry ops, Cambridge-style pose file handling and pair
//! generation, a synthetic scene generator, the Siamese pose network with its
//! three relative pose heads, and the evaluation metrics.
//!
//! The numeric core ([`geom`], [`diff`], [`eval`] helpers and [`model`]) is
//! generic over [`Real`]; the aliases below fix it to `f64`, which is what the
//! dataset and file formats use.

pub mod dataset;
pub mod diff;
pub mod error;
pub mod eval;
pub mod geom;
pub mod model;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Quat = geom::Quaternion<f64>;
pub type Quatf = geom::Quaternion<f32>;
pub type Rot3 = geom::Rotation3<f64>;
pub type Rot3f = geom::Rotation3<f32>;
pub type Pose3 = geom::Pose<f64>;
pub type Pose3f = geom::Pose<f32>;
pub type RelPose3 = geom::RelativePose<f64>;
pub type RelPose3f = geom::RelativePose<f32>;
pub type Tensor64 = diff::Tensor<f64>;
pub type Tape64 = diff::Tape<f64>;
pub type Network64 = model::Network<f64>;

