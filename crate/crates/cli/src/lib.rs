//! Operator commands built on `phd-eval`.
//!
//! Each subcommand of the `phd` binary is a plain function here so the
//! test suites can drive it without spawning processes.

pub mod analysis;
pub mod evaluate;
pub mod study;

use std::path::Path;

use phd_eval::{load_mask, thin, write_mask, skeleton_to_mask, BinarizationPolicy, MaskError};

/// Thins the mask at `input` and writes the skeleton as a mask image.
/// Returns the number of skeleton pixels.
pub fn cmd_skeletonize(input: &Path, output: &Path, policy: BinarizationPolicy) -> Result<usize, MaskError> {
    let mask = load_mask(input, policy)?;
    let skeleton = thin(&mask);
    write_mask(&skeleton_to_mask(&skeleton), output)?;
    Ok(skeleton.len())
}

/// Lowercase hex of a byte slice.
pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
