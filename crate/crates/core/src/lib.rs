//! Evaluation of thin-structure segmentations (cell membranes in electron
//! microscopy) with the Perceptual Hausdorff Distance and classic pixel
//! metrics, plus the tooling to measure how well each metric agrees with
//! human preference votes.
//!
//! The pipeline for one image pair is: binarize ([`mask`]), thin both masks
//! with Zhang-Suen ([`skeleton`]), build exact distance fields
//! ([`distance`]) and read off the scores ([`metrics`]). The
//! [`consistency`] module turns a log of three-way votes into per-metric
//! agreement ratios.

pub mod consistency;
pub mod distance;
pub mod mask;
pub mod metrics;
pub mod skeleton;

pub use distance::{brute_force_edt, exact_edt, sample_min_distances, DistanceError, DistanceField};
pub use mask::{assert_same_shape, load_mask, write_mask, BinarizationPolicy, BinaryMask, MaskError, Polarity, Shape};
pub use metrics::{
    confusion, dice, evaluate_pair, f1, hausdorff, iou, phd, ConfusionCounts, MetricDescriptor, MetricEntry, MetricError,
    MetricKind, MetricOutcome, MetricReport, Orientation, PhdProfile, Preprocess, Score, Tolerance,
};
pub use skeleton::{skeleton_to_mask, thin, Point, Skeleton};
