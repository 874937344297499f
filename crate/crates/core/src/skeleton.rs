//! Zhang-Suen thinning.
//!
//! Neighbours of a pixel `P1` are labelled clockwise from north:
//!
//! ```text
//! P9 P2 P3
//! P8 P1 P4
//! P7 P6 P5
//! ```
//!
//! A foreground pixel is deleted in the first sub-iteration when
//! `2 <= B <= 6`, `A == 1`, `P2*P4*P6 == 0` and `P4*P6*P8 == 0`, where `B`
//! counts foreground neighbours and `A` counts 0->1 transitions around the
//! cyclic sequence `P2..P9,P2`. The second sub-iteration swaps the last two
//! conditions for `P2*P4*P8 == 0` and `P2*P6*P8 == 0`. Deletions within a
//! sub-iteration are applied together, and the image is thinned until a full
//! iteration removes nothing. Pixels outside the image read as background.
//!
//! The implementation keeps a padded byte plane and, after the first
//! iteration, only re-examines pixels whose neighbourhood changed since they
//! were last tested under the same sub-iteration rule. Candidate tests run
//! in parallel; the outcome is independent of thread count because every
//! test in a sub-iteration reads the pre-sub-iteration state.

use rayon::prelude::*;

use crate::mask::{BinaryMask, Shape};

/// Integer pixel coordinate; `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Point {
    pub x: u32,
    pub y: u32,
}

impl Point {
    pub fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.distance_squared(other) as f64).sqrt()
    }

    pub fn distance_squared(&self, other: &Point) -> u64 {
        let dx = self.x.abs_diff(other.x) as u64;
        let dy = self.y.abs_diff(other.y) as u64;
        dx * dx + dy * dy
    }
}

/// A set of pixel coordinates inside a raster of known shape.
///
/// Points are kept sorted in row-major order without duplicates, so two
/// skeletons holding the same set compare equal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skeleton {
    shape: Shape,
    points: Vec<Point>,
}

#[derive(Debug, thiserror::Error)]
#[error("point ({x}, {y}) lies outside a {shape} raster")]
pub struct PointOutOfBounds {
    pub x: u32,
    pub y: u32,
    pub shape: Shape,
}

impl Skeleton {
    /// Builds a point set, dropping duplicates.
    pub fn new(shape: Shape, points: impl IntoIterator<Item = Point>) -> Result<Self, PointOutOfBounds> {
        let mut points: Vec<Point> = points.into_iter().collect();
        if let Some(p) = points.iter().find(|p| p.x >= shape.width || p.y >= shape.height) {
            return Err(PointOutOfBounds {
                x: p.x,
                y: p.y,
                shape,
            });
        }
        points.sort_unstable_by_key(|p| (p.y, p.x));
        points.dedup();
        Ok(Self { shape, points })
    }

    /// Every foreground pixel of `mask`, without thinning.
    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            shape: mask.shape(),
            points: mask.foreground().map(|(x, y)| Point::new(x, y)).collect(),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, p: Point) -> bool {
        self.points
            .binary_search_by_key(&(p.y, p.x), |q| (q.y, q.x))
            .is_ok()
    }
}

/// Mask of `skeleton.shape()` whose foreground is exactly the skeleton points.
pub fn skeleton_to_mask(skeleton: &Skeleton) -> BinaryMask {
    let shape = skeleton.shape();
    let w = shape.width as usize;
    let mut bits = vec![false; shape.len()];
    for p in skeleton.points() {
        bits[p.y as usize * w + p.x as usize] = true;
    }
    BinaryMask::from_bits(shape.width, shape.height, bits).expect("shape is valid")
}

const FOREGROUND: u8 = 1;
const QUEUED: u8 = 2;

/// Deletion tables indexed by the 8-bit neighbourhood code, bit `k` holding
/// neighbour `P(k+2)`.
struct RuleTables {
    step: [[bool; 256]; 2],
}

impl RuleTables {
    fn build() -> Self {
        let mut step = [[false; 256]; 2];
        for code in 0..256usize {
            let n: [u8; 8] = std::array::from_fn(|k| ((code >> k) & 1) as u8);
            let b: u8 = n.iter().sum();
            let a = (0..8).filter(|&k| n[k] == 0 && n[(k + 1) % 8] == 1).count();
            if !(2..=6).contains(&b) || a != 1 {
                continue;
            }
            let (p2, p4, p6, p8) = (n[0], n[2], n[4], n[6]);
            step[0][code] = p2 * p4 * p6 == 0 && p4 * p6 * p8 == 0;
            step[1][code] = p2 * p4 * p8 == 0 && p2 * p6 * p8 == 0;
        }
        Self { step }
    }
}

struct Plane {
    stride: usize,
    cells: Vec<u8>,
    offsets: [isize; 8],
}

impl Plane {
    fn new(mask: &BinaryMask) -> Self {
        let w = mask.width() as usize;
        let h = mask.height() as usize;
        let stride = w + 2;
        let mut cells = vec![0u8; stride * (h + 2)];
        for (row, src) in mask.bits().chunks_exact(w).enumerate() {
            let dst = &mut cells[(row + 1) * stride + 1..(row + 1) * stride + 1 + w];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s as u8;
            }
        }
        let s = stride as isize;
        // P2, P3, P4, P5, P6, P7, P8, P9
        let offsets = [-s, -s + 1, 1, s + 1, s, s - 1, -1, -s - 1];
        Self {
            stride,
            cells,
            offsets,
        }
    }

    #[inline]
    fn code(&self, i: usize) -> usize {
        let mut code = 0usize;
        for (k, off) in self.offsets.iter().enumerate() {
            let v = self.cells[(i as isize + off) as usize] & FOREGROUND;
            code |= (v as usize) << k;
        }
        code
    }

    fn foreground_indices(&self) -> Vec<usize> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| **c & FOREGROUND != 0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Foreground neighbours of the given (deleted) cells, deduplicated.
    fn neighbours_of(&mut self, lists: [&[usize]; 2]) -> Vec<usize> {
        let mut out = Vec::new();
        for list in lists {
            for &i in list {
                for off in self.offsets {
                    let j = (i as isize + off) as usize;
                    let c = &mut self.cells[j];
                    if *c == FOREGROUND {
                        *c |= QUEUED;
                        out.push(j);
                    }
                }
            }
        }
        for &j in &out {
            self.cells[j] &= !QUEUED;
        }
        out
    }
}

/// Thins `mask` to a one-pixel-wide skeleton.
pub fn thin(mask: &BinaryMask) -> Skeleton {
    let tables = RuleTables::build();
    let mut plane = Plane::new(mask);

    let mut candidates = plane.foreground_indices();
    let mut previous: Vec<usize> = Vec::new();
    let mut quiet = 0;
    let mut step = 0usize;
    let mut tick = 0usize;
    loop {
        let deleted: Vec<usize> = {
            let plane = &plane;
            let table = &tables.step[step];
            candidates
                .par_iter()
                .copied()
                .filter(|&i| plane.cells[i] & FOREGROUND != 0 && table[plane.code(i)])
                .collect()
        };
        for &i in &deleted {
            plane.cells[i] = 0;
        }

        quiet = if deleted.is_empty() { quiet + 1 } else { 0 };
        // Two consecutive empty sub-iterations leave every rule satisfied
        // on an unchanged image, so a full iteration would delete nothing.
        if quiet >= 2 {
            break;
        }

        candidates = if tick == 0 {
            // The second rule has not seen any pixel yet.
            candidates.retain(|&i| plane.cells[i] & FOREGROUND != 0);
            candidates
        } else {
            plane.neighbours_of([&previous, &deleted])
        };
        previous = deleted;
        step ^= 1;
        tick += 1;
    }

    let stride = plane.stride;
    let points = plane
        .cells
        .iter()
        .enumerate()
        .filter(|(_, c)| **c & FOREGROUND != 0)
        .map(|(i, _)| Point::new((i % stride - 1) as u32, (i / stride - 1) as u32))
        .collect();
    Skeleton {
        shape: mask.shape(),
        points,
    }
}
