//! Pixel-overlap scores and skeleton distances.
//!
//! The pixel scores (F1, IoU, Dice) come from a [`ConfusionCounts`] table.
//! Their `-SK` variants compute the same score after both masks have been
//! thinned. Distances between skeletons are the classical Hausdorff distance
//! and the Perceptual Hausdorff Distance (PHD): the sum of the two directed
//! mean nearest-neighbour distances, where any distance `d <= t` is replaced
//! by zero.
//!
//! Nearest distances are read from exact distance fields rather than by
//! pairwise search. Zeroing a pair distance before taking the minimum gives
//! the same value as zeroing the minimum afterwards, since the threshold map
//! is non-decreasing, so one field per direction serves every tolerance.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distance::{exact_edt, sample_min_distances, DistanceError};
use crate::mask::{BinaryMask, Shape};
use crate::skeleton::{skeleton_to_mask, thin, Skeleton};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    First,
    Second,
    Both,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::First => "first",
            Side::Second => "second",
            Side::Both => "both",
        })
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetricError {
    #[error("mask shapes differ: {0} vs {1}")]
    ShapeMismatch(Shape, Shape),
    #[error("{0} skeleton is empty")]
    EmptySkeleton(Side),
    #[error("tolerance must be a non-negative finite number, got {0}")]
    InvalidTolerance(f64),
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
    #[error(transparent)]
    Distance(#[from] DistanceError),
}

fn same_shape(a: &BinaryMask, b: &BinaryMask) -> Result<(), MetricError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(MetricError::ShapeMismatch(a.shape(), b.shape()))
    }
}

/// Pixel counts of a prediction against a ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts, MetricError> {
    same_shape(pred, gt)?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// A metric value. `degenerate` is set when the value comes from a
/// convention rather than the formula (both inputs empty).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: f64,
    pub degenerate: bool,
}

impl Score {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            degenerate: false,
        }
    }

    pub fn degenerate(value: f64) -> Self {
        Self {
            value,
            degenerate: true,
        }
    }
}

fn overlap_ratio(num: u64, den: u64) -> Score {
    if den == 0 {
        Score::degenerate(1.0)
    } else {
        Score::exact(num as f64 / den as f64)
    }
}

/// `2tp / (2tp + fp + fn)`; 1.0 (degenerate) when both masks are empty.
pub fn f1(c: &ConfusionCounts) -> Score {
    overlap_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
}

/// `tp / (tp + fp + fn)`; 1.0 (degenerate) when both masks are empty.
pub fn iou(c: &ConfusionCounts) -> Score {
    overlap_ratio(c.tp, c.tp + c.fp + c.fn_)
}

/// Sorensen-Dice coefficient. For binary masks this is the same quantity
/// as [`f1`].
pub fn dice(c: &ConfusionCounts) -> Score {
    overlap_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
}

/// Pixel radius under which an offset is ignored.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Tolerance(f64);

impl Tolerance {
    pub const ZERO: Tolerance = Tolerance(0.0);

    pub fn new(t: f64) -> Result<Self, MetricError> {
        if t.is_finite() && t >= 0.0 {
            // normalise -0.0
            Ok(Self(t + 0.0))
        } else {
            Err(MetricError::InvalidTolerance(t))
        }
    }

    pub fn get(&self) -> f64 {
        self.0
    }

    /// Distance contribution after thresholding: `d` if `d > t`, else 0.
    #[inline]
    pub fn apply(&self, d: f64) -> f64 {
        if d > self.0 {
            d
        } else {
            0.0
        }
    }
}

impl TryFrom<f64> for Tolerance {
    type Error = MetricError;
    fn try_from(t: f64) -> Result<Self, Self::Error> {
        Tolerance::new(t)
    }
}

impl From<Tolerance> for f64 {
    fn from(t: Tolerance) -> f64 {
        t.0
    }
}

impl fmt::Display for Tolerance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Nearest-neighbour distances between two skeletons in both directions.
/// Evaluating PHD at any tolerance from here costs one pass over the points.
#[derive(Debug, Clone, PartialEq)]
pub struct PhdProfile {
    /// For each point of the first set, the distance to the second set.
    pub forward: Vec<f64>,
    /// For each point of the second set, the distance to the first set.
    pub backward: Vec<f64>,
}

impl PhdProfile {
    /// Fails when exactly one side is empty. Both sides empty yields
    /// `Ok(None)`.
    pub fn new(x: &Skeleton, y: &Skeleton) -> Result<Option<Self>, MetricError> {
        if x.shape() != y.shape() {
            return Err(MetricError::ShapeMismatch(x.shape(), y.shape()));
        }
        match (x.is_empty(), y.is_empty()) {
            (true, true) => return Ok(None),
            (true, false) => return Err(MetricError::EmptySkeleton(Side::First)),
            (false, true) => return Err(MetricError::EmptySkeleton(Side::Second)),
            (false, false) => {}
        }
        let forward = {
            let field = exact_edt(&skeleton_to_mask(y))?;
            sample_min_distances(&field, x)?
        };
        let backward = {
            let field = exact_edt(&skeleton_to_mask(x))?;
            sample_min_distances(&field, y)?
        };
        Ok(Some(Self { forward, backward }))
    }

    pub fn phd(&self, tol: Tolerance) -> f64 {
        let directed = |d: &[f64]| d.iter().map(|&v| tol.apply(v)).sum::<f64>() / d.len() as f64;
        directed(&self.forward) + directed(&self.backward)
    }

    pub fn hausdorff(&self) -> f64 {
        self.forward
            .iter()
            .chain(&self.backward)
            .copied()
            .fold(0.0, f64::max)
    }
}

/// Classical Hausdorff distance between two non-empty point sets.
pub fn hausdorff(x: &Skeleton, y: &Skeleton) -> Result<f64, MetricError> {
    match PhdProfile::new(x, y)? {
        Some(profile) => Ok(profile.hausdorff()),
        None => Err(MetricError::EmptySkeleton(Side::Both)),
    }
}

/// Perceptual Hausdorff Distance at tolerance `tol`. Two empty skeletons
/// score 0 with the degenerate flag set.
pub fn phd(x: &Skeleton, y: &Skeleton, tol: Tolerance) -> Result<Score, MetricError> {
    Ok(match PhdProfile::new(x, y)? {
        Some(profile) => Score::exact(profile.phd(tol)),
        None => Score::degenerate(0.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    HigherIsBetter,
    LowerIsBetter,
}

impl Orientation {
    pub fn arrow(&self) -> &'static str {
        match self {
            Orientation::HigherIsBetter => "↑",
            Orientation::LowerIsBetter => "↓",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preprocess {
    None,
    SkeletonizeBoth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "tolerance")]
pub enum MetricKind {
    F1,
    Iou,
    Dice,
    Hausdorff,
    Phd(Tolerance),
}

/// A named, oriented metric configuration such as `F1`, `IoU-SK` or `PHD-3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDescriptor {
    pub name: String,
    pub orientation: Orientation,
    pub preprocess: Preprocess,
    pub kind: MetricKind,
}

impl MetricDescriptor {
    pub fn f1() -> Self {
        Self::pixel(MetricKind::F1, "F1", Preprocess::None)
    }

    pub fn iou() -> Self {
        Self::pixel(MetricKind::Iou, "IoU", Preprocess::None)
    }

    pub fn dice() -> Self {
        Self::pixel(MetricKind::Dice, "Dice", Preprocess::None)
    }

    pub fn hausdorff() -> Self {
        Self {
            name: "HD".into(),
            orientation: Orientation::LowerIsBetter,
            preprocess: Preprocess::SkeletonizeBoth,
            kind: MetricKind::Hausdorff,
        }
    }

    pub fn phd(tol: Tolerance) -> Self {
        Self {
            name: format!("PHD-{tol}"),
            orientation: Orientation::LowerIsBetter,
            preprocess: Preprocess::SkeletonizeBoth,
            kind: MetricKind::Phd(tol),
        }
    }

    fn pixel(kind: MetricKind, name: &str, preprocess: Preprocess) -> Self {
        let name = match preprocess {
            Preprocess::None => name.to_string(),
            Preprocess::SkeletonizeBoth => format!("{name}-SK"),
        };
        Self {
            name,
            orientation: Orientation::HigherIsBetter,
            preprocess,
            kind,
        }
    }

    /// The `-SK` variant of a pixel metric; `None` for distance metrics,
    /// which always work on skeletons.
    pub fn skeletonized(&self) -> Option<Self> {
        match self.kind {
            MetricKind::F1 => Some(Self::pixel(MetricKind::F1, "F1", Preprocess::SkeletonizeBoth)),
            MetricKind::Iou => Some(Self::pixel(MetricKind::Iou, "IoU", Preprocess::SkeletonizeBoth)),
            MetricKind::Dice => Some(Self::pixel(MetricKind::Dice, "Dice", Preprocess::SkeletonizeBoth)),
            MetricKind::Hausdorff | MetricKind::Phd(_) => None,
        }
    }

    pub fn tolerance(&self) -> Option<Tolerance> {
        match self.kind {
            MetricKind::Phd(t) => Some(t),
            _ => None,
        }
    }

    /// Parses a comma-separated list like `f1,iou,dice-sk,phd:0,phd:2.5`.
    pub fn parse_list(spec: &str) -> Result<Vec<Self>, MetricError> {
        spec.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl FromStr for MetricDescriptor {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        if let Some(t) = lower.strip_prefix("phd:").or_else(|| lower.strip_prefix("phd-")) {
            let t: f64 = t.parse().map_err(|_| MetricError::UnknownMetric(s.to_string()))?;
            return Ok(Self::phd(Tolerance::new(t)?));
        }
        let (base, sk) = match lower.strip_suffix("-sk") {
            Some(b) => (b, true),
            None => (lower.as_str(), false),
        };
        let d = match base {
            "f1" => Self::f1(),
            "iou" => Self::iou(),
            "dice" => Self::dice(),
            "hd" | "hausdorff" if !sk => Self::hausdorff(),
            _ => return Err(MetricError::UnknownMetric(s.to_string())),
        };
        Ok(if sk { d.skeletonized().expect("pixel metric") } else { d })
    }
}

/// One metric's outcome for one image pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub name: String,
    pub orientation: Orientation,
    #[serde(flatten)]
    pub outcome: MetricOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricOutcome {
    Ok(Score),
    Failed(String),
}

impl MetricOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            MetricOutcome::Ok(s) => Some(s.value),
            MetricOutcome::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub entries: Vec<MetricEntry>,
}

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<&MetricOutcome> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.outcome)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(MetricOutcome::value)
    }

    pub fn failures(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().filter_map(|e| match &e.outcome {
            MetricOutcome::Failed(msg) => Some((e.name.as_str(), msg.as_str())),
            MetricOutcome::Ok(_) => None,
        })
    }
}

/// Lazily computed per-pair intermediates shared across descriptors.
struct PairCache<'a> {
    pred: &'a BinaryMask,
    gt: &'a BinaryMask,
    raw: Option<ConfusionCounts>,
    skeletons: Option<(Skeleton, Skeleton)>,
    skeleton_counts: Option<ConfusionCounts>,
    profile: Option<Result<Option<PhdProfile>, MetricError>>,
}

impl<'a> PairCache<'a> {
    fn skeletons(&mut self) -> &(Skeleton, Skeleton) {
        let (pred, gt) = (self.pred, self.gt);
        self.skeletons.get_or_insert_with(|| rayon::join(|| thin(pred), || thin(gt)))
    }

    fn counts(&mut self, pre: Preprocess) -> Result<ConfusionCounts, MetricError> {
        match pre {
            Preprocess::None => {
                if self.raw.is_none() {
                    self.raw = Some(confusion(self.pred, self.gt)?);
                }
                Ok(self.raw.expect("just set"))
            }
            Preprocess::SkeletonizeBoth => {
                if self.skeleton_counts.is_none() {
                    let (p, g) = self.skeletons();
                    let c = confusion(&skeleton_to_mask(p), &skeleton_to_mask(g))?;
                    self.skeleton_counts = Some(c);
                }
                Ok(self.skeleton_counts.expect("just set"))
            }
        }
    }

    fn profile(&mut self) -> Result<Option<&PhdProfile>, MetricError> {
        if self.profile.is_none() {
            let (p, g) = self.skeletons();
            let computed = PhdProfile::new(p, g);
            self.profile = Some(computed);
        }
        match self.profile.as_ref().expect("just set") {
            Ok(p) => Ok(p.as_ref()),
            Err(e) => Err(e.clone()),
        }
    }
}

/// Scores `pred` against `gt` under every descriptor.
///
/// Each mask is thinned at most once and the two distance fields are built
/// at most once, whatever the number of skeleton metrics and tolerances. A
/// metric that cannot be computed (for instance PHD with one empty
/// skeleton) is recorded as a failed entry; only a shape mismatch aborts.
pub fn evaluate_pair(
    pred: &BinaryMask,
    gt: &BinaryMask,
    metrics: &[MetricDescriptor],
) -> Result<MetricReport, MetricError> {
    same_shape(pred, gt)?;
    let mut cache = PairCache {
        pred,
        gt,
        raw: None,
        skeletons: None,
        skeleton_counts: None,
        profile: None,
    };
    let entries = metrics
        .iter()
        .map(|desc| {
            let outcome = match score_one(&mut cache, desc) {
                Ok(s) => MetricOutcome::Ok(s),
                Err(e) => MetricOutcome::Failed(e.to_string()),
            };
            MetricEntry {
                name: desc.name.clone(),
                orientation: desc.orientation,
                outcome,
            }
        })
        .collect();
    Ok(MetricReport { entries })
}

fn score_one(cache: &mut PairCache<'_>, desc: &MetricDescriptor) -> Result<Score, MetricError> {
    match desc.kind {
        MetricKind::F1 => Ok(f1(&cache.counts(desc.preprocess)?)),
        MetricKind::Iou => Ok(iou(&cache.counts(desc.preprocess)?)),
        MetricKind::Dice => Ok(dice(&cache.counts(desc.preprocess)?)),
        MetricKind::Hausdorff => match cache.profile()? {
            Some(p) => Ok(Score::exact(p.hausdorff())),
            None => Err(MetricError::EmptySkeleton(Side::Both)),
        },
        MetricKind::Phd(t) => Ok(match cache.profile()? {
            Some(p) => Score::exact(p.phd(t)),
            None => Score::degenerate(0.0),
        }),
    }
}
