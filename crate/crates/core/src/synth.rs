//! Synthetic scenes: landmarks in a box, smooth camera trajectories, and
//! pinhole observations that stand in for images.
//!
//! Each sequence lives inside a narrow cone around a random axis through the
//! landmark centroid. Camera centers follow a uniform cubic B-spline through
//! waypoints sampled in that cone, and every camera looks at the centroid up
//! to a rotation perturbation that follows its own B-spline. Both splines are
//! convex combinations of their control points, so centers stay in the box
//! and in the cone, and perturbations never exceed the configured bound.

use crate::dataset::FrameRecord;
use crate::error::{Error, Result};
use crate::geom::{self, Pose, Quaternion, Rotation3, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Landmarks closer than this along the optical axis are marked invalid.
pub const MIN_DEPTH: f64 = 0.1;
/// Sequence axes are drawn with elevation within this many degrees.
const MAX_AXIS_ELEVATION_DEG: f64 = 20.0;
/// Waypoint radius as a fraction of the distance to the box boundary.
const RADIUS_FRACTION: (f64, f64) = (0.4, 0.9);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub name: String,
    /// Box side lengths in meters, centered on the origin.
    pub extent: Vec3<f64>,
    pub landmarks: usize,
    pub sequences: usize,
    pub frames_per_sequence: usize,
    /// Held-out frames per sequence, sampled between the training frames.
    pub test_frames_per_sequence: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub waypoints: usize,
    pub cone_half_angle_deg: f64,
    pub max_perturbation_deg: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            name: "Synthetic".into(),
            extent: [40.0, 30.0, 10.0],
            landmarks: 32,
            sequences: 4,
            frames_per_sequence: 50,
            test_frames_per_sequence: 12,
            noise_sigma: 0.0,
            seed: 0,
            waypoints: 6,
            cone_half_angle_deg: 10.0,
            max_perturbation_deg: 20.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !self.extent.iter().all(|e| *e > 0.0 && e.is_finite()) {
            return bad(format!("extents must be positive, got {:?}", self.extent));
        }
        if self.landmarks < 8 {
            return bad(format!("need at least 8 landmarks, got {}", self.landmarks));
        }
        if !(self.noise_sigma >= 0.0) {
            return bad(format!("noise sigma must be nonnegative, got {}", self.noise_sigma));
        }
        if self.waypoints < 4 {
            return bad("need at least 4 waypoints per sequence".into());
        }
        if !(self.cone_half_angle_deg >= 0.0 && self.cone_half_angle_deg < 90.0) {
            return bad("cone half angle must lie in [0, 90)".into());
        }
        if !(self.max_perturbation_deg >= 0.0 && self.max_perturbation_deg < 180.0) {
            return bad("perturbation bound must lie in [0, 180)".into());
        }
        Ok(())
    }

    pub fn diagonal(&self) -> f64 {
        geom::norm3(self.extent)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub landmarks: Vec<Vec3<f64>>,
    pub centroid: Vec3<f64>,
    pub train: Vec<FrameRecord>,
    pub test: Vec<FrameRecord>,
}

/// Projections `(u_1, v_1, ..., u_L, v_L)` followed by `L` validity bits.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub values: Vec<f64>,
}

impl Observation {
    pub fn landmarks(&self) -> usize {
        self.values.len() / 3
    }

    pub fn uv(&self, i: usize) -> (f64, f64) {
        (self.values[2 * i], self.values[2 * i + 1])
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.values[2 * self.landmarks() + i] != 0.0
    }
}

fn bspline_basis(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    let u = 1.0 - t;
    [u * u * u / 6.0, (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0, (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0, t3 / 6.0]
}

/// Uniform cubic B-spline over `ctrl`, parameter in `[0, 1]`.
fn bspline(ctrl: &[Vec3<f64>], u: f64) -> Vec3<f64> {
    let segments = ctrl.len() - 3;
    let s = (u.clamp(0.0, 1.0) * segments as f64).min(segments as f64 - 1e-12);
    let seg = s.floor() as usize;
    let b = bspline_basis(s - seg as f64);
    let mut p = [0.0; 3];
    for (k, w) in b.iter().enumerate() {
        p = geom::add3(p, geom::scale3(ctrl[seg + k], *w));
    }
    p
}

/// Distance from `origin` (inside the box) to the box boundary along `dir`.
fn ray_box_distance(origin: Vec3<f64>, dir: Vec3<f64>, half: Vec3<f64>) -> f64 {
    let mut best = f64::INFINITY;
    for k in 0..3 {
        if dir[k] > 0.0 {
            best = best.min((half[k] - origin[k]) / dir[k]);
        } else if dir[k] < 0.0 {
            best = best.min((-half[k] - origin[k]) / dir[k]);
        }
    }
    best
}

/// Two unit vectors orthogonal to `a` and each other.
fn orthonormal_basis(a: Vec3<f64>) -> (Vec3<f64>, Vec3<f64>) {
    let helper = if a[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let b = geom::cross3(a, helper);
    let b = geom::scale3(b, 1.0 / geom::norm3(b));
    (b, geom::cross3(a, b))
}

/// Uniform direction on the spherical cap of half-angle `alpha` around `axis`.
fn sample_cap(rng: &mut ChaCha8Rng, axis: Vec3<f64>, alpha: f64) -> Vec3<f64> {
    let cos_t = rng.random_range(alpha.cos()..=1.0);
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let (b, c) = orthonormal_basis(axis);
    let mut d = geom::scale3(axis, cos_t);
    d = geom::add3(d, geom::scale3(b, sin_t * phi.cos()));
    geom::add3(d, geom::scale3(c, sin_t * phi.sin()))
}

/// World-to-camera rotation whose `+z` points along `dir`, `+y` roughly down.
pub fn look_rotation(dir: Vec3<f64>) -> Quaternion<f64> {
    let z = geom::scale3(dir, 1.0 / geom::norm3(dir));
    let up = if z[2].abs() < 0.99 { [0.0, 0.0, 1.0] } else { [0.0, 1.0, 0.0] };
    let x = geom::cross3(z, up);
    let x = geom::scale3(x, 1.0 / geom::norm3(x));
    let y = geom::cross3(z, x);
    Rotation3::from_matrix_unchecked([x, y, z]).to_quaternion()
}

pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let half = geom::scale3(spec.extent, 0.5);
    let landmarks: Vec<Vec3<f64>> = (0..spec.landmarks)
        .map(|_| std::array::from_fn(|k| rng.random_range(-half[k]..=half[k])))
        .collect();
    let centroid = geom::scale3(
        landmarks.iter().fold([0.0; 3], |acc, l| geom::add3(acc, *l)),
        1.0 / landmarks.len() as f64,
    );

    let alpha = spec.cone_half_angle_deg.to_radians();
    let max_pert = spec.max_perturbation_deg.to_radians();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for s in 0..spec.sequences {
        let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
        let elevation = rng.random_range(-MAX_AXIS_ELEVATION_DEG..=MAX_AXIS_ELEVATION_DEG).to_radians();
        let axis = [elevation.cos() * azimuth.cos(), elevation.cos() * azimuth.sin(), elevation.sin()];
        let mut centers = Vec::with_capacity(spec.waypoints);
        let mut perturb = Vec::with_capacity(spec.waypoints);
        for _ in 0..spec.waypoints {
            let dir = sample_cap(&mut rng, axis, alpha);
            let reach = ray_box_distance(centroid, dir, half);
            let r = reach * rng.random_range(RADIUS_FRACTION.0..=RADIUS_FRACTION.1);
            centers.push(geom::add3(centroid, geom::scale3(dir, r)));
            let pdir = sample_cap(&mut rng, [0.0, 0.0, 1.0], std::f64::consts::PI);
            perturb.push(geom::scale3(pdir, rng.random_range(0.0..=max_pert)));
        }
        let sequence = format!("seq{}", s + 1);
        let frame_at = |u: f64, id: usize| {
            let c = bspline(&centers, u);
            let omega = bspline(&perturb, u);
            let q_look = look_rotation(geom::sub3(centroid, c));
            let orientation = (q_look * Quaternion::from_rotation_vector(omega).conj()).normalize().unwrap_or(q_look).canonical();
            FrameRecord {
                scene: spec.name.clone(),
                sequence: sequence.clone(),
                frame: format!("{sequence}/frame{id:05}.png"),
                position: c,
                orientation,
            }
        };
        let n = spec.frames_per_sequence;
        for i in 0..n {
            let u = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
            train.push(frame_at(u, i + 1));
        }
        let m = spec.test_frames_per_sequence;
        for j in 0..m {
            test.push(frame_at((j as f64 + 0.5) / m as f64, n + j + 1));
        }
    }
    Ok(SyntheticScene { spec: spec.clone(), landmarks, centroid, train, test })
}

/// Pinhole projection with unit focal length and zero principal point, plus
/// Gaussian pixel noise of standard deviation `sigma` on valid entries.
pub fn observe<R: Rng + ?Sized>(pose: &Pose<f64>, landmarks: &[Vec3<f64>], sigma: f64, rng: &mut R) -> Observation {
    let l = landmarks.len();
    let mut values = vec![0.0; 3 * l];
    let noise = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"));
    for (i, x) in landmarks.iter().enumerate() {
        let xc = pose.transform_point(*x);
        if xc[2] <= MIN_DEPTH {
            continue;
        }
        let (mut u, mut v) = (xc[0] / xc[2], xc[1] / xc[2]);
        if let Some(n) = &noise {
            u += n.sample(rng);
            v += n.sample(rng);
        }
        values[2 * i] = u;
        values[2 * i + 1] = v;
        values[2 * l + i] = 1.0;
    }
    Observation { values }
}

/// Observes every frame in order from a single seeded stream.
pub fn observe_frames(frames: &[FrameRecord], landmarks: &[Vec3<f64>], sigma: f64, seed: u64) -> Vec<Observation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    frames
        .iter()
        .map(|f| observe(&crate::dataset::frame_to_pose(f, crate::dataset::Convention::Center), landmarks, sigma, &mut rng))
        .collect()
}

/// One line per observation, whitespace-separated reals.
pub fn format_observations(obs: &[Observation]) -> String {
    let mut out = String::new();
    for o in obs {
        let mut first = true;
        for v in &o.values {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_observations(text: &str) -> Result<Vec<Observation>> {
    let mut obs = Vec::new();
    let mut width = None;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::Parse { line: idx + 1, message: format!("non-numeric value '{t}'") }))
            .collect::<Result<Vec<f64>>>()?;
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Parse { line: idx + 1, message: format!("expected {w} values, found {}", values.len()) })
            }
            _ => {}
        }
        obs.push(Observation { values });
    }
    Ok(obs)
}

pub fn format_landmarks(landmarks: &[Vec3<f64>]) -> String {
    landmarks.iter().map(|l| format!("{} {} {}\n", l[0], l[1], l[2])).collect()
}
