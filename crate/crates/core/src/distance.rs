//! Exact Euclidean distance transform.
//!
//! [`exact_edt`] is the separable two-pass transform: a linear scan per
//! column gives the vertical distance to the nearest foreground pixel, then
//! each row takes the lower envelope of the parabolas `(x - q)^2 + g(q)^2`.
//! Every quantity is an integer; intersections of parabolas are compared by
//! cross-multiplication rather than division, so the result is exact.
//!
//! [`brute_force_edt`] checks every pixel against every foreground pixel and
//! exists to verify the fast path.

use rayon::prelude::*;
use thiserror::Error;

use crate::mask::{BinaryMask, Shape};
use crate::skeleton::Skeleton;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum DistanceError {
    #[error("mask has no foreground pixel")]
    EmptyMask,
    #[error("squared distances of a {0} raster do not fit in 32 bits")]
    TooLarge(Shape),
    #[error("point ({x}, {y}) lies outside the {shape} distance field")]
    OutOfBounds { x: u32, y: u32, shape: Shape },
}

/// Squared distance from every pixel to the nearest foreground pixel.
#[derive(Clone, PartialEq, Eq)]
pub struct DistanceField {
    shape: Shape,
    dist2: Vec<u32>,
}

impl std::fmt::Debug for DistanceField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DistanceField").field("shape", &self.shape).finish_non_exhaustive()
    }
}

impl DistanceField {
    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// Row-major squared distances.
    pub fn squared(&self) -> &[u32] {
        &self.dist2
    }

    pub fn squared_at(&self, x: u32, y: u32) -> Option<u32> {
        if x >= self.shape.width || y >= self.shape.height {
            return None;
        }
        Some(self.dist2[y as usize * self.shape.width as usize + x as usize])
    }

    pub fn distance_at(&self, x: u32, y: u32) -> Option<f64> {
        self.squared_at(x, y).map(|d| (d as f64).sqrt())
    }
}

const UNREACHED: u32 = u32::MAX;

fn check(mask: &BinaryMask) -> Result<(), DistanceError> {
    let w = mask.width() as u64 - 1;
    let h = mask.height() as u64 - 1;
    if w * w + h * h > (u32::MAX - 1) as u64 {
        return Err(DistanceError::TooLarge(mask.shape()));
    }
    if !mask.bits().iter().any(|b| *b) {
        return Err(DistanceError::EmptyMask);
    }
    Ok(())
}

/// Exact squared EDT in `O(width * height)`.
pub fn exact_edt(mask: &BinaryMask) -> Result<DistanceField, DistanceError> {
    check(mask)?;
    let w = mask.width() as usize;
    let h = mask.height() as usize;
    let bits = mask.bits();

    // Column pass: vertical distance to the nearest foreground pixel.
    let mut g = vec![UNREACHED; w * h];
    for x in 0..w {
        if bits[x] {
            g[x] = 0;
        }
    }
    for y in 1..h {
        let (above, rest) = g.split_at_mut(y * w);
        let above = &above[(y - 1) * w..];
        let row = &mut rest[..w];
        let src = &bits[y * w..(y + 1) * w];
        for x in 0..w {
            row[x] = if src[x] { 0 } else { above[x].saturating_add(1) };
        }
    }
    for y in (0..h.saturating_sub(1)).rev() {
        let (head, below) = g.split_at_mut((y + 1) * w);
        let row = &mut head[y * w..];
        let below = &below[..w];
        for x in 0..w {
            let candidate = below[x].saturating_add(1);
            if candidate < row[x] {
                row[x] = candidate;
            }
        }
    }
    // Square in place; UNREACHED stays a sentinel.
    g.par_iter_mut().for_each(|v| {
        if *v != UNREACHED {
            *v *= *v;
        }
    });

    // Row pass: lower envelope of parabolas.
    g.par_chunks_mut(w).for_each_init(
        || (Vec::with_capacity(w), Vec::with_capacity(w)),
        |(sites, scratch), row| {
            scratch.clear();
            scratch.extend_from_slice(row);
            row_envelope(scratch, row, sites);
        },
    );

    Ok(DistanceField {
        shape: mask.shape(),
        dist2: g,
    })
}

/// `out[q] = min_p (q - p)^2 + f[p]` over the finite entries of `f`.
fn row_envelope(f: &[u32], out: &mut [u32], sites: &mut Vec<usize>) {
    // Height of parabola p at q, and the (rational) abscissa where parabola
    // b starts to undercut parabola a for a < b: num / den with den > 0.
    let at = |p: usize, q: usize| -> i64 {
        let d = q as i64 - p as i64;
        d * d + f[p] as i64
    };
    let crossing = |a: usize, b: usize| -> (i64, i64) {
        let (ai, bi) = (a as i64, b as i64);
        (f[b] as i64 + bi * bi - f[a] as i64 - ai * ai, 2 * (bi - ai))
    };

    sites.clear();
    for q in 0..f.len() {
        if f[q] == UNREACHED {
            continue;
        }
        while sites.len() >= 2 {
            let p = sites[sites.len() - 1];
            let r = sites[sites.len() - 2];
            let (n1, d1) = crossing(p, q);
            let (n2, d2) = crossing(r, p);
            // q overtakes p no later than p overtakes r: p never wins.
            if n1 * d2 <= n2 * d1 {
                sites.pop();
            } else {
                break;
            }
        }
        sites.push(q);
    }

    if sites.is_empty() {
        out.fill(UNREACHED);
        return;
    }
    let mut k = 0;
    for (q, slot) in out.iter_mut().enumerate() {
        while k + 1 < sites.len() && at(sites[k + 1], q) <= at(sites[k], q) {
            k += 1;
        }
        *slot = at(sites[k], q) as u32;
    }
}

/// Reference EDT by exhaustive search; quadratic, meant for small masks.
pub fn brute_force_edt(mask: &BinaryMask) -> Result<DistanceField, DistanceError> {
    check(mask)?;
    let sources: Vec<(i64, i64)> = mask.foreground().map(|(x, y)| (x as i64, y as i64)).collect();
    let w = mask.width() as i64;
    let dist2 = (0..mask.shape().len() as i64)
        .map(|i| {
            let (px, py) = (i % w, i / w);
            sources
                .iter()
                .map(|&(qx, qy)| (px - qx) * (px - qx) + (py - qy) * (py - qy))
                .min()
                .expect("non-empty") as u32
        })
        .collect();
    Ok(DistanceField {
        shape: mask.shape(),
        dist2,
    })
}

/// Euclidean distance from each skeleton point to the field's source set,
/// in the skeleton's point order.
pub fn sample_min_distances(field: &DistanceField, points: &Skeleton) -> Result<Vec<f64>, DistanceError> {
    points
        .points()
        .iter()
        .map(|p| {
            field.distance_at(p.x, p.y).ok_or(DistanceError::OutOfBounds {
                x: p.x,
                y: p.y,
                shape: field.shape(),
            })
        })
        .collect()
}
