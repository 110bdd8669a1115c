//! Error metrics, medians, cumulative histograms and the metrics report.

use crate::dataset::{gt_translation_stats, PosePair, TranslationStats};
use crate::error::{Error, Result};
use crate::geom::{self, RelativePose};
use crate::model::PoseEstimate;
use crate::scalar::Real;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairErrors {
    pub trans_err_m: f64,
    pub rot_err_deg: f64,
    /// `None` when either translation is too short to have a direction.
    pub trans_dir_err_deg: Option<f64>,
}

pub fn pair_errors(est: &PoseEstimate<f64>, gt: &RelativePose<f64>) -> PairErrors {
    let trans_err_m = geom::norm3(geom::sub3(est.translation, gt.translation));
    let rot_err_deg = geom::rotation_angle_deg(est.rotation, gt.rotation);
    let trans_dir_err_deg = geom::direction_angle_deg(est.translation, gt.translation).ok();
    PairErrors { trans_err_m, rot_err_deg, trans_dir_err_deg }
}

/// Per-pair errors; the work is spread over the rayon pool, output order
/// matches input order.
pub fn batch_errors(estimates: &[PoseEstimate<f64>], pairs: &[PosePair]) -> Result<Vec<PairErrors>> {
    if estimates.len() != pairs.len() {
        return Err(Error::DimensionMismatch { expected: pairs.len(), actual: estimates.len() });
    }
    Ok(estimates.par_iter().zip(pairs).map(|(e, p)| pair_errors(e, &p.gt_relative)).collect())
}

fn cmp<T: Real>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

/// Median; even counts average the two central order statistics.
pub fn median<T: Real>(values: &[T]) -> Result<T> {
    if values.is_empty() {
        return Err(Error::EmptyInput("median of no values"));
    }
    let mut v = values.to_vec();
    let n = v.len();
    let mid = n / 2;
    let (lower, upper, _) = v.select_nth_unstable_by(mid, cmp);
    let upper = *upper;
    if n % 2 == 1 {
        return Ok(upper);
    }
    let below = lower.iter().copied().fold(T::neg_infinity(), |a, b| if cmp(&b, &a) == Ordering::Greater { b } else { a });
    Ok((below + upper) / T::lit(2.0))
}

/// Fraction of `errors` at or below each threshold.
pub fn cumulative_hist<T: Real>(errors: &[T], thresholds: &[T]) -> Result<Vec<f64>> {
    if errors.is_empty() {
        return Err(Error::EmptyInput("histogram of no errors"));
    }
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidConfig("histogram thresholds must be strictly increasing".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(cmp);
    let n = sorted.len() as f64;
    Ok(thresholds
        .iter()
        .map(|t| sorted.partition_point(|e| *e <= *t) as f64 / n)
        .collect())
}

/// Threshold grid `start, start + step, ...` up to and including `stop`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl HistogramGrid {
    pub const ROTATION_DEG: HistogramGrid = HistogramGrid { start: 0.0, stop: 60.0, step: 1.0 };
    pub const TRANSLATION_M: HistogramGrid = HistogramGrid { start: 0.0, stop: 20.0, step: 0.25 };
    pub const DIRECTION_DEG: HistogramGrid = HistogramGrid { start: 0.0, stop: 180.0, step: 1.0 };

    pub fn thresholds(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || !(self.stop >= self.start) {
            return Err(Error::InvalidConfig(format!("bad histogram grid {self:?}")));
        }
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..count).map(|i| self.start + i as f64 * self.step).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub thresholds: Vec<f64>,
    pub fractions: Vec<f64>,
}

impl Histogram {
    pub fn build(errors: &[f64], grid: &HistogramGrid) -> Result<Self> {
        let thresholds = grid.thresholds()?;
        let fractions = cumulative_hist(errors, &thresholds)?;
        Ok(Self { thresholds, fractions })
    }

    /// `threshold,fraction` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fraction\n");
        for (t, f) in self.thresholds.iter().zip(&self.fractions) {
            let _ = writeln!(out, "{t},{f}");
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramGrids {
    pub rotation_deg: HistogramGrid,
    pub translation_m: HistogramGrid,
    pub direction_deg: HistogramGrid,
}

impl Default for HistogramGrids {
    fn default() -> Self {
        Self {
            rotation_deg: HistogramGrid::ROTATION_DEG,
            translation_m: HistogramGrid::TRANSLATION_M,
            direction_deg: HistogramGrid::DIRECTION_DEG,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub evaluated: usize,
    pub undefined_direction: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Medians {
    pub translation_m: f64,
    pub rotation_deg: f64,
    /// `None` if no pair had a defined direction error.
    pub direction_deg: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histograms {
    pub rotation_deg: Histogram,
    pub translation_m: Histogram,
    pub direction_deg: Option<Histogram>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub counts: Counts,
    pub medians: Medians,
    pub histograms: Histograms,
    pub gt_translation: TranslationStats,
}

/// JSON layout: `{"overall": SceneReport, "scenes": {name: SceneReport}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall: SceneReport,
    pub scenes: BTreeMap<String, SceneReport>,
}

fn scene_report(errors: &[&PairErrors], pairs: &[&PosePair], grids: &HistogramGrids) -> Result<SceneReport> {
    let trans: Vec<f64> = errors.iter().map(|e| e.trans_err_m).collect();
    let rot: Vec<f64> = errors.iter().map(|e| e.rot_err_deg).collect();
    let dir: Vec<f64> = errors.iter().filter_map(|e| e.trans_dir_err_deg).collect();
    let owned: Vec<PosePair> = pairs.iter().map(|p| (*p).clone()).collect();
    Ok(SceneReport {
        counts: Counts { evaluated: errors.len(), undefined_direction: errors.len() - dir.len() },
        medians: Medians {
            translation_m: median(&trans)?,
            rotation_deg: median(&rot)?,
            direction_deg: if dir.is_empty() { None } else { Some(median(&dir)?) },
        },
        histograms: Histograms {
            rotation_deg: Histogram::build(&rot, &grids.rotation_deg)?,
            translation_m: Histogram::build(&trans, &grids.translation_m)?,
            direction_deg: if dir.is_empty() { None } else { Some(Histogram::build(&dir, &grids.direction_deg)?) },
        },
        gt_translation: gt_translation_stats(&owned)?,
    })
}

/// Aggregates aligned per-pair errors overall and per scene.
pub fn report(errors: &[PairErrors], pairs: &[PosePair], grids: &HistogramGrids) -> Result<MetricsReport> {
    if errors.len() != pairs.len() {
        return Err(Error::DimensionMismatch { expected: pairs.len(), actual: errors.len() });
    }
    if errors.is_empty() {
        return Err(Error::EmptyInput("no pairs to evaluate"));
    }
    let all_e: Vec<&PairErrors> = errors.iter().collect();
    let all_p: Vec<&PosePair> = pairs.iter().collect();
    let overall = scene_report(&all_e, &all_p, grids)?;
    let mut grouped: BTreeMap<&str, (Vec<&PairErrors>, Vec<&PosePair>)> = BTreeMap::new();
    for (e, p) in errors.iter().zip(pairs) {
        let g = grouped.entry(p.scene.as_str()).or_default();
        g.0.push(e);
        g.1.push(p);
    }
    let scenes = grouped
        .into_iter()
        .map(|(name, (e, p))| Ok((name.to_string(), scene_report(&e, &p, grids)?)))
        .collect::<Result<_>>()?;
    Ok(MetricsReport { overall, scenes })
}
