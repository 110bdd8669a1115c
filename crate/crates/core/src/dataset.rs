//! Cambridge-Landmarks-style pose files and overlap-constrained pair generation.
//!
//! Pose files hold one frame per line, `<image-path> X Y Z W P Q R`, where
//! `X Y Z` is the stored camera position and `W P Q R` the orientation
//! quaternion. Leading header lines are skipped.

use crate::error::{Error, Result};
use crate::geom::{self, Pose, Quaternion, RelativePose, Vec3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

pub const POSE_FILE_HEADER: &str = "Visual Landmark Dataset V1\nImageFile, Camera Position [X Y Z W P Q R]\n\n";

/// The scene excluded from pair generation unless asked for.
pub const EXCLUDED_SCENE: &str = "Street";

/// Published spatial extents in meters for the four evaluated scenes.
pub const SCENE_EXTENTS: [(&str, f64, f64); 4] = [
    ("KingsCollege", 140.0, 40.0),
    ("OldHospital", 50.0, 40.0),
    ("ShopFacade", 35.0, 25.0),
    ("StMarysChurch", 80.0, 60.0),
];

pub fn scene_extent(scene: &str) -> Option<(f64, f64)> {
    SCENE_EXTENTS.iter().find(|(name, ..)| *name == scene).map(|&(_, a, b)| (a, b))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub scene: String,
    pub sequence: String,
    /// Image path relative to the scene directory, e.g. `seq1/frame00001.png`.
    pub frame: String,
    pub position: Vec3<f64>,
    pub orientation: Quaternion<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// How the stored position relates to the projection translation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    /// Position is the camera center: `t = -R c`.
    #[default]
    Center,
    /// Position is the translation itself.
    Direct,
}

impl FromStr for Convention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "center" => Ok(Convention::Center),
            "direct" => Ok(Convention::Direct),
            other => Err(Error::InvalidConfig(format!("unknown convention '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosePair {
    pub scene: String,
    pub sequence: String,
    pub frame_a: String,
    pub frame_b: String,
    /// Maps camera-A coordinates into camera-B coordinates.
    pub gt_relative: RelativePose<f64>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairGenConfig {
    pub pairs_per_image: usize,
    pub theta_max_deg: f64,
    /// `None` derives the distance limit per scene, see [`default_d_max`].
    pub d_max: Option<f64>,
    pub seed: u64,
    pub convention: Convention,
}

impl Default for PairGenConfig {
    fn default() -> Self {
        Self { pairs_per_image: 8, theta_max_deg: 60.0, d_max: None, seed: 0, convention: Convention::Center }
    }
}

impl PairGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pairs_per_image < 1 {
            return Err(Error::InvalidConfig("pairs per image must be at least 1".into()));
        }
        if !(self.theta_max_deg > 0.0 && self.theta_max_deg <= 180.0) {
            return Err(Error::InvalidConfig(format!("theta-max {} outside (0, 180]", self.theta_max_deg)));
        }
        if let Some(d) = self.d_max {
            if !(d > 0.0) {
                return Err(Error::InvalidConfig(format!("d-max {d} must be positive")));
            }
        }
        Ok(())
    }
}

/// Sequence id of an image path: its parent directory, or `default`.
pub fn sequence_of(frame: &str) -> String {
    match frame.rsplit_once('/') {
        Some((dir, _)) if !dir.is_empty() => dir.to_string(),
        _ => "default".to_string(),
    }
}

pub fn parse_pose_file(path: &Path, scene: &str) -> Result<Vec<FrameRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_pose_str(&text, scene).map_err(|e| match e {
        Error::EmptyFile(_) => Error::EmptyFile(path.display().to_string()),
        other => other,
    })
}

/// Header lines may only precede the first data line; a header is a line
/// whose second token is not a number. Blank lines are ignored everywhere.
pub fn parse_pose_str(text: &str, scene: &str) -> Result<Vec<FrameRecord>> {
    let mut frames = Vec::new();
    let mut in_header = true;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if in_header {
            let numeric = tokens.get(1).is_some_and(|t| t.parse::<f64>().is_ok());
            if !numeric {
                continue;
            }
            in_header = false;
        }
        if tokens.len() != 8 {
            return Err(Error::Parse { line: line_no, message: format!("expected 8 fields, found {}", tokens.len()) });
        }
        let mut v = [0.0; 7];
        for (slot, tok) in v.iter_mut().zip(&tokens[1..]) {
            *slot = tok.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("non-numeric field '{tok}'"),
            })?;
        }
        let orientation = Quaternion::new(v[3], v[4], v[5], v[6])
            .normalize()
            .map_err(|_| Error::Parse { line: line_no, message: "zero quaternion".into() })?;
        let frame = tokens[0].to_string();
        frames.push(FrameRecord {
            scene: scene.to_string(),
            sequence: sequence_of(&frame),
            frame,
            position: [v[0], v[1], v[2]],
            orientation,
        });
    }
    if frames.is_empty() {
        return Err(Error::EmptyFile("<input>".into()));
    }
    Ok(frames)
}

/// Pose file text for `frames`, with the standard header.
pub fn format_pose_file(frames: &[FrameRecord]) -> String {
    let mut out = String::from(POSE_FILE_HEADER);
    for f in frames {
        let q = f.orientation;
        let p = f.position;
        let _ = writeln!(out, "{} {} {} {} {} {} {} {}", f.frame, p[0], p[1], p[2], q.w, q.x, q.y, q.z);
    }
    out
}

pub fn frame_to_pose(f: &FrameRecord, convention: Convention) -> Pose<f64> {
    match convention {
        Convention::Center => Pose::from_center(f.orientation, f.position),
        Convention::Direct => Pose::new(f.orientation, f.position),
    }
}

/// Optical axes within `theta_max_deg` and camera centers within `d_max`.
pub fn overlap_predicate(a: &Pose<f64>, b: &Pose<f64>, theta_max_deg: f64, d_max: f64) -> bool {
    let axis_angle = match geom::direction_angle_deg(a.optical_axis(), b.optical_axis()) {
        Ok(angle) => angle,
        Err(_) => return false,
    };
    let dist = geom::norm3(geom::sub3(a.center(), b.center()));
    axis_angle <= theta_max_deg && dist <= d_max
}

/// Half the larger published extent side, or half the larger horizontal side
/// of the camera-center bounding box for scenes without a published extent.
pub fn default_d_max(scene: &str, poses: &[Pose<f64>]) -> f64 {
    if let Some((a, b)) = scene_extent(scene) {
        return a.max(b) / 2.0;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in poses {
        let c = p.center();
        for k in 0..3 {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    let side = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    if side.is_finite() && side > 0.0 {
        side / 2.0
    } else {
        f64::INFINITY
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub frames: usize,
    pub pairs: usize,
    /// Frames with fewer eligible partners than requested.
    pub frames_short: usize,
    /// Frames with no eligible partner at all.
    pub frames_isolated: usize,
}

impl PairCounts {
    fn merge(&mut self, o: &PairCounts) {
        self.frames += o.frames;
        self.pairs += o.pairs;
        self.frames_short += o.frames_short;
        self.frames_isolated += o.frames_isolated;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairSet {
    pub pairs: Vec<PosePair>,
    /// Counts keyed by scene.
    pub counts: BTreeMap<String, PairCounts>,
}

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Stable per-sequence seed so sequences can be processed in any order.
fn sequence_seed(seed: u64, scene: &str, sequence: &str) -> u64 {
    let mut h = fnv1a(0xcbf2_9ce4_8422_2325, &seed.to_le_bytes());
    h = fnv1a(h, scene.as_bytes());
    h = fnv1a(h, &[0xff]);
    fnv1a(h, sequence.as_bytes())
}

/// Pairs each frame with up to `k` distinct same-sequence partners that pass
/// [`overlap_predicate`], sampled uniformly without replacement. Output is
/// ordered by (scene, sequence, frame) and depends only on the inputs.
pub fn generate_pairs(frames: &[FrameRecord], cfg: &PairGenConfig, split: Split) -> Result<PairSet> {
    cfg.validate()?;
    let mut groups: BTreeMap<(&str, &str), Vec<&FrameRecord>> = BTreeMap::new();
    for f in frames {
        groups.entry((f.scene.as_str(), f.sequence.as_str())).or_default().push(f);
    }
    for g in groups.values_mut() {
        g.sort_by(|a, b| a.frame.cmp(&b.frame));
    }
    let mut d_max_by_scene: BTreeMap<&str, f64> = BTreeMap::new();
    for f in frames {
        if !d_max_by_scene.contains_key(f.scene.as_str()) {
            let d = match cfg.d_max {
                Some(d) => d,
                None => {
                    let poses: Vec<_> = frames
                        .iter()
                        .filter(|g| g.scene == f.scene)
                        .map(|g| frame_to_pose(g, cfg.convention))
                        .collect();
                    default_d_max(&f.scene, &poses)
                }
            };
            d_max_by_scene.insert(f.scene.as_str(), d);
        }
    }

    let groups: Vec<_> = groups.into_iter().collect();
    let per_group: Vec<(String, Vec<PosePair>, PairCounts)> = groups
        .par_iter()
        .map(|((scene, sequence), members)| {
            let d_max = d_max_by_scene[scene];
            let (pairs, counts) = pair_sequence(members, cfg, d_max, split, sequence_seed(cfg.seed, scene, sequence));
            (scene.to_string(), pairs, counts)
        })
        .collect();

    let mut pairs = Vec::new();
    let mut counts: BTreeMap<String, PairCounts> = BTreeMap::new();
    for (scene, p, c) in per_group {
        counts.entry(scene).or_default().merge(&c);
        pairs.extend(p);
    }
    Ok(PairSet { pairs, counts })
}

fn pair_sequence(
    members: &[&FrameRecord],
    cfg: &PairGenConfig,
    d_max: f64,
    split: Split,
    seed: u64,
) -> (Vec<PosePair>, PairCounts) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let poses: Vec<Pose<f64>> = members.iter().map(|f| frame_to_pose(f, cfg.convention)).collect();
    let mut counts = PairCounts { frames: members.len(), ..Default::default() };
    let mut pairs = Vec::new();
    for (i, fa) in members.iter().enumerate() {
        let eligible: Vec<usize> = (0..members.len())
            .filter(|&j| j != i && overlap_predicate(&poses[i], &poses[j], cfg.theta_max_deg, d_max))
            .collect();
        let take = cfg.pairs_per_image.min(eligible.len());
        if take < cfg.pairs_per_image {
            counts.frames_short += 1;
        }
        if eligible.is_empty() {
            counts.frames_isolated += 1;
            continue;
        }
        for pick in sample(&mut rng, eligible.len(), take).into_iter() {
            let j = eligible[pick];
            pairs.push(PosePair {
                scene: fa.scene.clone(),
                sequence: fa.sequence.clone(),
                frame_a: fa.frame.clone(),
                frame_b: members[j].frame.clone(),
                gt_relative: geom::relative_pose(&poses[i], &poses[j]),
                split,
            });
        }
    }
    counts.pairs = pairs.len();
    (pairs, counts)
}

/// `sceneId seqId frameA frameB qw qx qy qz tx ty tz` per line.
pub fn format_pairs(pairs: &[PosePair]) -> String {
    let mut out = String::new();
    for p in pairs {
        let q = p.gt_relative.rotation;
        let t = p.gt_relative.translation;
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {} {} {} {}",
            p.scene, p.sequence, p.frame_a, p.frame_b, q.w, q.x, q.y, q.z, t[0], t[1], t[2]
        );
    }
    out
}

pub fn parse_pairs(text: &str, split: Split) -> Result<Vec<PosePair>> {
    let mut pairs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != 11 {
            return Err(Error::Parse { line: idx + 1, message: format!("expected 11 fields, found {}", tokens.len()) });
        }
        let mut v = [0.0; 7];
        for (slot, tok) in v.iter_mut().zip(&tokens[4..]) {
            *slot = tok.parse::<f64>().map_err(|_| Error::Parse {
                line: idx + 1,
                message: format!("non-numeric field '{tok}'"),
            })?;
        }
        pairs.push(PosePair {
            scene: tokens[0].to_string(),
            sequence: tokens[1].to_string(),
            frame_a: tokens[2].to_string(),
            frame_b: tokens[3].to_string(),
            gt_relative: RelativePose::new(Quaternion::new(v[0], v[1], v[2], v[3]), [v[4], v[5], v[6]]),
            split,
        });
    }
    Ok(pairs)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslationStats {
    pub count: usize,
    pub x: AxisStats,
    pub y: AxisStats,
    pub z: AxisStats,
}

/// Per-axis statistics of the ground-truth relative translations.
pub fn gt_translation_stats(pairs: &[PosePair]) -> Result<TranslationStats> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no pairs for translation statistics"));
    }
    let axis = |k: usize| {
        let n = pairs.len() as f64;
        let vals = pairs.iter().map(|p| p.gt_relative.translation[k]);
        let min = vals.clone().fold(f64::INFINITY, f64::min);
        let max = vals.clone().fold(f64::NEG_INFINITY, f64::max);
        let mean = vals.clone().sum::<f64>() / n;
        let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        AxisStats { min, max, mean, std: var.sqrt() }
    };
    Ok(TranslationStats { count: pairs.len(), x: axis(0), y: axis(1), z: axis(2) })
}

/// Reads `dataset_train.txt` / `dataset_test.txt` from a scene directory.
pub fn load_scene_split(scene_dir: &Path, split: Split) -> Result<Vec<FrameRecord>> {
    let scene = scene_dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());
    parse_pose_file(&scene_dir.join(format!("dataset_{}.txt", split.as_str())), &scene)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(seq: &str, id: usize, c: Vec3<f64>, q: Quaternion<f64>) -> FrameRecord {
        let frame = format!("{seq}/frame{id:05}.png");
        FrameRecord { scene: "Synthetic".into(), sequence: seq.into(), frame, position: c, orientation: q }
    }

    #[test]
    fn parses_identity_line_and_skips_headers() {
        let text = format!("{POSE_FILE_HEADER}seq1/frame00001.png 0 0 0 1 0 0 0\nseq2/frame00002.png 1 2 3 2 0 0 0\n");
        let frames = parse_pose_str(&text, "Kings").unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].orientation, Quaternion::identity());
        assert_eq!(frames[0].position, [0.0; 3]);
        assert_eq!(frames[0].sequence, "seq1");
        assert_eq!(frames[1].orientation, Quaternion::identity());
        assert_eq!(frames[1].scene, "Kings");
    }

    #[test]
    fn malformed_lines_name_the_line() {
        let text = format!("{POSE_FILE_HEADER}seq1/a.png 0 0 0 1 0 0 0\nseq1/b.png 0 0 0 1 0 0\n");
        match parse_pose_str(&text, "s") {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 5);
                assert!(message.contains("7"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = "seq1/a.png 0 x 0 1 0 0 0\n";
        assert!(matches!(parse_pose_str(text, "s"), Err(Error::Parse { line: 1, .. })));
        let text = "seq1/a.png 0 0 0 1 0 0 0\nnot a header anymore\n";
        assert!(matches!(parse_pose_str(text, "s"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(parse_pose_str(POSE_FILE_HEADER, "s"), Err(Error::EmptyFile(_))));
        assert!(matches!(parse_pose_str("", "s"), Err(Error::EmptyFile(_))));
    }

    #[test]
    fn conventions() {
        let f = frame("s", 0, [0.0, 0.0, 5.0], Quaternion::identity());
        assert_eq!(frame_to_pose(&f, Convention::Center).translation, [0.0, 0.0, -5.0]);
        assert_eq!(frame_to_pose(&f, Convention::Direct).translation, [0.0, 0.0, 5.0]);
        let o = frame("s", 0, [0.0; 3], Quaternion::identity());
        for c in [Convention::Center, Convention::Direct] {
            let p = frame_to_pose(&o, c);
            assert_eq!(p.rotation, Quaternion::identity());
            assert!(p.translation.iter().all(|v| *v == 0.0));
        }
        assert_eq!("direct".parse::<Convention>().unwrap(), Convention::Direct);
        assert!("weird".parse::<Convention>().is_err());
    }

    #[test]
    fn overlap_predicate_checks_both_limits() {
        let a = Pose::from_center(Quaternion::identity(), [0.0; 3]);
        let b = Pose::from_center(Quaternion::from_axis_angle([0.0, 1.0, 0.0], 50f64.to_radians()), [3.0, 0.0, 0.0]);
        assert!(overlap_predicate(&a, &b, 60.0, 5.0));
        assert!(!overlap_predicate(&a, &b, 40.0, 5.0));
        assert!(!overlap_predicate(&a, &b, 60.0, 2.0));
    }

    #[test]
    fn singleton_sequence_gives_no_pairs() {
        let frames = vec![frame("s", 0, [0.0; 3], Quaternion::identity())];
        let set = generate_pairs(&frames, &PairGenConfig::default(), Split::Train).unwrap();
        assert!(set.pairs.is_empty());
        assert_eq!(set.counts["Synthetic"].frames_isolated, 1);
    }

    #[test]
    fn full_overlap_gives_exactly_k_pairs() {
        let frames: Vec<_> = (0..12).map(|i| frame("s", i, [i as f64 * 0.1, 0.0, 0.0], Quaternion::identity())).collect();
        let cfg = PairGenConfig { d_max: Some(10.0), ..Default::default() };
        let set = generate_pairs(&frames, &cfg, Split::Train).unwrap();
        assert_eq!(set.pairs.len(), 12 * 8);
        for f in &frames {
            let partners: Vec<_> = set.pairs.iter().filter(|p| p.frame_a == f.frame).map(|p| &p.frame_b).collect();
            assert_eq!(partners.len(), 8);
            let mut uniq = partners.clone();
            uniq.sort();
            uniq.dedup();
            assert_eq!(uniq.len(), 8);
            assert!(!partners.contains(&&f.frame));
        }
    }

    #[test]
    fn sequences_are_never_mixed() {
        let mut frames: Vec<_> = (0..5).map(|i| frame("a", i, [0.0; 3], Quaternion::identity())).collect();
        frames.extend((0..5).map(|i| frame("b", i, [0.0; 3], Quaternion::identity())));
        let cfg = PairGenConfig { d_max: Some(1.0), ..Default::default() };
        let set = generate_pairs(&frames, &cfg, Split::Test).unwrap();
        assert_eq!(set.pairs.len(), 10 * 4);
        assert!(set.pairs.iter().all(|p| sequence_of(&p.frame_a) == sequence_of(&p.frame_b)));
        assert!(set.pairs.iter().all(|p| p.split == Split::Test));
        assert_eq!(set.counts["Synthetic"].frames_short, 10);
    }

    #[test]
    fn pairs_text_round_trip() {
        let q = Quaternion::from_axis_angle([0.2, 0.3, 0.9], 0.4);
        let frames: Vec<_> = (0..4).map(|i| frame("s", i, [i as f64, 0.1 * i as f64, 0.0], q)).collect();
        let cfg = PairGenConfig { d_max: Some(10.0), ..Default::default() };
        let set = generate_pairs(&frames, &cfg, Split::Train).unwrap();
        let text = format_pairs(&set.pairs);
        assert_eq!(parse_pairs(&text, Split::Train).unwrap(), set.pairs);
        assert!(matches!(parse_pairs("a b c\n", Split::Train), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn stats_of_empty_input_fail() {
        assert!(matches!(gt_translation_stats(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn published_extents_set_default_distance() {
        assert_eq!(default_d_max("KingsCollege", &[]), 70.0);
        assert_eq!(default_d_max("StMarysChurch", &[]), 40.0);
        let poses = [Pose::from_center(Quaternion::identity(), [0.0; 3]), Pose::from_center(Quaternion::identity(), [10.0, 4.0, 30.0])];
        assert_eq!(default_d_max("Other", &poses), 5.0);
    }
}
