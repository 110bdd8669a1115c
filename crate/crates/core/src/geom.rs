//! Quaternion and rigid-transform arithmetic.
//!
//! Quaternions are scalar-first `(w, x, y, z)` with the Hamilton product
//! (`i * j = k`). A [`Pose`] maps world points into the camera frame,
//! `X_cam = R * X_world + t`. Relative poses are expressed in the frame of the
//! second camera.

use crate::error::{Error, Result};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use std::ops::{Mul, Neg};

/// Tolerance for calling a quaternion unit.
pub const UNIT_TOLERANCE: f64 = 1e-9;
/// Norms at or below this cannot be normalized.
pub const ZERO_NORM: f64 = 1e-15;
/// Vectors at or below this norm have no direction.
pub const DEGENERATE_NORM: f64 = 1e-12;
/// Maximum `|R^T R - I|` entry accepted as a rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

pub type Vec3<T> = [T; 3];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quaternion<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Quaternion<T> {
    pub const fn new(w: T, x: T, y: T, z: T) -> Self {
        Self { w, x, y, z }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    pub fn from_array(a: [T; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation of `angle` radians about `axis` (need not be unit).
    pub fn from_axis_angle(axis: Vec3<T>, angle: T) -> Self {
        let n = norm3(axis);
        if n == T::zero() {
            return Self::identity();
        }
        let half = angle / T::lit(2.0);
        let s = half.sin() / n;
        Self::new(half.cos(), axis[0] * s, axis[1] * s, axis[2] * s)
    }

    /// Exponential map of a rotation vector (axis scaled by angle in radians).
    pub fn from_rotation_vector(v: Vec3<T>) -> Self {
        Self::from_axis_angle(v, norm3(v))
    }

    #[inline]
    pub fn conj(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn norm_squared(self) -> T {
        self.dot(self)
    }

    pub fn norm(self) -> T {
        self.norm_squared().sqrt()
    }

    pub fn is_unit(self) -> bool {
        (self.norm_squared() - T::one()).abs() <= T::lit(UNIT_TOLERANCE)
    }

    pub fn normalize(self) -> Result<Self> {
        let n = self.norm();
        if !(n > T::lit(ZERO_NORM)) {
            return Err(Error::ZeroNorm(n.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(Self::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    /// Representative of `{q, -q}` with `w >= 0`; when `w == 0` the first
    /// nonzero vector component is made positive.
    pub fn canonical(self) -> Self {
        let z = T::zero();
        let flip = if self.w != z {
            self.w < z
        } else if self.x != z {
            self.x < z
        } else if self.y != z {
            self.y < z
        } else {
            self.z < z
        };
        if flip {
            -self
        } else {
            self
        }
    }

    pub fn to_rotation(self) -> Rotation3<T> {
        Rotation3 { m: rotation_matrix(self) }
    }

    /// Rotates `v` by this quaternion; the result does not depend on `|q|`.
    pub fn rotate(self, v: Vec3<T>) -> Vec3<T> {
        mat_vec(&rotation_matrix(self), v)
    }

    /// Applies the inverse rotation.
    pub fn rotate_inverse(self, v: Vec3<T>) -> Vec3<T> {
        self.conj().rotate(v)
    }

    pub fn cast<U: Real>(self) -> Quaternion<U> {
        let c = |v: T| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or_else(U::nan);
        Quaternion::new(c(self.w), c(self.x), c(self.y), c(self.z))
    }
}

impl<T: Real> Mul for Quaternion<T> {
    type Output = Self;

    /// Hamilton product.
    #[inline]
    fn mul(self, b: Self) -> Self {
        let a = self;
        Self::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }
}

impl<T: Real> Neg for Quaternion<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.w, -self.x, -self.y, -self.z)
    }
}

pub fn quat_mul<T: Real>(a: Quaternion<T>, b: Quaternion<T>) -> Quaternion<T> {
    a * b
}

pub fn quat_conj<T: Real>(q: Quaternion<T>) -> Quaternion<T> {
    q.conj()
}

pub fn quat_normalize<T: Real>(q: Quaternion<T>) -> Result<Quaternion<T>> {
    q.normalize()
}

/// Scale `2 / |q|^2` used by [`rotation_matrix`]; zero for the zero quaternion,
/// which then maps to the identity.
#[inline]
pub fn rotation_scale<T: Real>(q: Quaternion<T>) -> T {
    let n = q.norm_squared();
    if n == T::zero() {
        T::zero()
    } else {
        T::lit(2.0) / n
    }
}

/// Rotation matrix of `q / |q|`, computed without taking a square root.
pub fn rotation_matrix<T: Real>(q: Quaternion<T>) -> [[T; 3]; 3] {
    let s = rotation_scale(q);
    let one = T::one();
    let Quaternion { w, x, y, z } = q;
    [
        [one - s * (y * y + z * z), s * (x * y - w * z), s * (x * z + w * y)],
        [s * (x * y + w * z), one - s * (x * x + z * z), s * (y * z - w * x)],
        [s * (x * z - w * y), s * (y * z + w * x), one - s * (x * x + y * y)],
    ]
}

#[inline]
pub fn mat_vec<T: Real>(m: &[[T; 3]; 3], v: Vec3<T>) -> Vec3<T> {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

#[inline]
pub fn add3<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub3<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn neg3<T: Real>(a: Vec3<T>) -> Vec3<T> {
    [-a[0], -a[1], -a[2]]
}

#[inline]
pub fn scale3<T: Real>(a: Vec3<T>, s: T) -> Vec3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot3<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross3<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm3<T: Real>(a: Vec3<T>) -> T {
    dot3(a, a).sqrt()
}

/// Proper rotation matrix, row-major.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation3<T> {
    m: [[T; 3]; 3],
}

impl<T: Real> Rotation3<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self { m: [[o, z, z], [z, o, z], [z, z, o]] }
    }

    /// Validates orthonormality and orientation.
    pub fn from_matrix(m: [[T; 3]; 3]) -> Result<Self> {
        let r = Self { m };
        let residual = r.orthonormality_residual();
        let det = r.determinant();
        let tol = T::lit(ROTATION_TOLERANCE);
        if !(residual <= tol) || !((det - T::one()).abs() <= tol) {
            let worst = residual.max((det - T::one()).abs());
            return Err(Error::InvalidRotation(worst.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(r)
    }

    /// Skips validation; callers guarantee a rotation.
    pub fn from_matrix_unchecked(m: [[T; 3]; 3]) -> Self {
        Self { m }
    }

    pub fn matrix(&self) -> &[[T; 3]; 3] {
        &self.m
    }

    pub fn transpose(&self) -> Self {
        let m = &self.m;
        Self {
            m: [
                [m[0][0], m[1][0], m[2][0]],
                [m[0][1], m[1][1], m[2][1]],
                [m[0][2], m[1][2], m[2][2]],
            ],
        }
    }

    pub fn apply(&self, v: Vec3<T>) -> Vec3<T> {
        mat_vec(&self.m, v)
    }

    pub fn determinant(&self) -> T {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Largest entry of `|R^T R - I|`.
    pub fn orthonormality_residual(&self) -> T {
        let p = self.transpose() * *self;
        let mut worst = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { T::one() } else { T::zero() };
                let d = (p.m[i][j] - target).abs();
                if !(d <= worst) {
                    worst = d;
                }
            }
        }
        worst
    }

    /// Quaternion on the `w >= 0` hemisphere (see [`Quaternion::canonical`]).
    pub fn to_quaternion(&self) -> Quaternion<T> {
        let m = &self.m;
        let one = T::one();
        let two = T::lit(2.0);
        let quarter = T::lit(0.25);
        let trace = m[0][0] + m[1][1] + m[2][2];
        // Largest-pivot branch keeps the square root away from zero.
        let q = if trace > m[0][0].max(m[1][1]).max(m[2][2]) {
            let s = (one + trace).sqrt() * two;
            Quaternion::new(
                quarter * s,
                (m[2][1] - m[1][2]) / s,
                (m[0][2] - m[2][0]) / s,
                (m[1][0] - m[0][1]) / s,
            )
        } else if m[0][0] >= m[1][1] && m[0][0] >= m[2][2] {
            let s = (one + m[0][0] - m[1][1] - m[2][2]).sqrt() * two;
            Quaternion::new(
                (m[2][1] - m[1][2]) / s,
                quarter * s,
                (m[0][1] + m[1][0]) / s,
                (m[0][2] + m[2][0]) / s,
            )
        } else if m[1][1] >= m[2][2] {
            let s = (one + m[1][1] - m[0][0] - m[2][2]).sqrt() * two;
            Quaternion::new(
                (m[0][2] - m[2][0]) / s,
                (m[0][1] + m[1][0]) / s,
                quarter * s,
                (m[1][2] + m[2][1]) / s,
            )
        } else {
            let s = (one + m[2][2] - m[0][0] - m[1][1]).sqrt() * two;
            Quaternion::new(
                (m[1][0] - m[0][1]) / s,
                (m[0][2] + m[2][0]) / s,
                (m[1][2] + m[2][1]) / s,
                quarter * s,
            )
        };
        // Renormalize away the rounding of the branch formulas.
        q.normalize().unwrap_or(q).canonical()
    }
}

impl<T: Real> Mul for Rotation3<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut m = [[T::zero(); 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.m[i][0] * o.m[0][j] + self.m[i][1] * o.m[1][j] + self.m[i][2] * o.m[2][j];
            }
        }
        Self { m }
    }
}

pub fn quat_to_rot<T: Real>(q: Quaternion<T>) -> Rotation3<T> {
    q.to_rotation()
}

pub fn rot_to_quat<T: Real>(r: &Rotation3<T>) -> Result<Quaternion<T>> {
    Rotation3::from_matrix(*r.matrix()).map(|r| r.to_quaternion())
}

/// World-to-camera rigid transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose<T> {
    pub rotation: Quaternion<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> Pose<T> {
    pub fn new(rotation: Quaternion<T>, translation: Vec3<T>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Quaternion::identity(), [T::zero(); 3])
    }

    /// Pose of a camera with the given world-to-camera rotation and center.
    pub fn from_center(rotation: Quaternion<T>, center: Vec3<T>) -> Self {
        Self::new(rotation, neg3(rotation.rotate(center)))
    }

    pub fn transform_point(&self, x: Vec3<T>) -> Vec3<T> {
        add3(self.rotation.rotate(x), self.translation)
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn center(&self) -> Vec3<T> {
        neg3(self.rotation.rotate_inverse(self.translation))
    }

    /// Camera `+z` expressed in world coordinates.
    pub fn optical_axis(&self) -> Vec3<T> {
        let (z, o) = (T::zero(), T::one());
        self.rotation.rotate_inverse([z, z, o])
    }
}

/// Transform from camera-1 coordinates into camera-2 coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativePose<T> {
    pub rotation: Quaternion<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> RelativePose<T> {
    pub fn new(rotation: Quaternion<T>, translation: Vec3<T>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Quaternion::identity(), [T::zero(); 3])
    }

    pub fn transfer(&self, x1: Vec3<T>) -> Vec3<T> {
        add3(self.rotation.rotate(x1), self.translation)
    }

    /// `other` after `self`: maps camera-1 points through `self`, then `other`.
    pub fn then(&self, other: &Self) -> Self {
        Self::new(
            other.rotation * self.rotation,
            add3(other.rotation.rotate(self.translation), other.translation),
        )
    }

    pub fn inverse(&self) -> Self {
        let r = self.rotation.conj();
        Self::new(r, neg3(r.rotate(self.translation)))
    }
}

/// `q = q2 * conj(q1)`, `T = R2 (-R1^T t1) + t2`.
pub fn relative_pose<T: Real>(p1: &Pose<T>, p2: &Pose<T>) -> RelativePose<T> {
    let q1 = p1.rotation;
    let q2 = p2.rotation;
    let rotation = q2 * q1.conj();
    let back = neg3(q1.conj().rotate(p1.translation));
    let translation = add3(q2.rotate(back), p2.translation);
    RelativePose::new(rotation, translation)
}

/// Angle in degrees between the rotations of two unit quaternions,
/// `2 acos |<a, b>|`, evaluated through `atan2` so small angles keep their
/// precision.
pub fn rotation_angle_deg<T: Real>(a: Quaternion<T>, b: Quaternion<T>) -> T {
    let d = a.conj() * b;
    let v = (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
    (T::lit(2.0) * v.atan2(d.w.abs())).to_degrees()
}

/// Angle in degrees between two nonzero vectors.
pub fn direction_angle_deg<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Result<T> {
    let (na, nb) = (norm3(a), norm3(b));
    let eps = T::lit(DEGENERATE_NORM);
    if !(na > eps) {
        return Err(Error::DegenerateVector(na.to_f64().unwrap_or(f64::NAN)));
    }
    if !(nb > eps) {
        return Err(Error::DegenerateVector(nb.to_f64().unwrap_or(f64::NAN)));
    }
    let c = (dot3(a, b) / (na * nb)).max(-T::one()).min(T::one());
    Ok(c.acos().to_degrees())
}
