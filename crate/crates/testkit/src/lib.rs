//! Fixtures and slow reference implementations for the test suites.
//!
//! Everything here is written for clarity over speed: distances are
//! computed pair by pair, components are flood-filled, and the threshold is
//! applied to every pair before taking minima.

use std::collections::VecDeque;

use phd_eval::{thin, BinaryMask, Point, Shape, Skeleton};
use rand::Rng;

/// Uniform noise: every pixel is foreground with probability `density`.
pub fn random_mask(rng: &mut impl Rng, width: u32, height: u32, density: f64) -> BinaryMask {
    BinaryMask::from_fn(width, height, |_, _| rng.random_bool(density))
}

/// Stamps a disc of radius `r` at every step along the segment.
pub fn stroke(bits: &mut [bool], shape: Shape, from: (f64, f64), to: (f64, f64), r: f64) {
    let (w, h) = (shape.width as i64, shape.height as i64);
    let len = ((to.0 - from.0).powi(2) + (to.1 - from.1).powi(2)).sqrt();
    let steps = (len * 2.0).ceil().max(1.0) as usize;
    let ri = r.ceil() as i64;
    for s in 0..=steps {
        let f = s as f64 / steps as f64;
        let cx = from.0 + f * (to.0 - from.0);
        let cy = from.1 + f * (to.1 - from.1);
        let (bx, by) = (cx.round() as i64, cy.round() as i64);
        for y in by - ri..=by + ri {
            for x in bx - ri..=bx + ri {
                if x < 0 || y < 0 || x >= w || y >= h {
                    continue;
                }
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy <= r * r + 1e-9 {
                    bits[(y * w + x) as usize] = true;
                }
            }
        }
    }
}

/// A handful of random thick line segments.
pub fn random_strokes(rng: &mut impl Rng, width: u32, height: u32, strokes: usize, max_radius: f64) -> BinaryMask {
    let shape = Shape::new(width, height);
    let mut bits = vec![false; shape.len()];
    for _ in 0..strokes {
        let p = |rng: &mut _| point_in(rng, width, height);
        let (a, b) = (p(rng), p(rng));
        let r = rng.random_range(0.0..=max_radius);
        stroke(&mut bits, shape, a, b, r);
    }
    BinaryMask::from_bits(width, height, bits).expect("length matches shape")
}

fn point_in(rng: &mut impl Rng, width: u32, height: u32) -> (f64, f64) {
    (
        rng.random_range(0.0..width as f64),
        rng.random_range(0.0..height as f64),
    )
}

/// `n` uniformly drawn points (duplicates collapse, so the result may be
/// smaller); never empty when `n > 0`.
pub fn random_points(rng: &mut impl Rng, shape: Shape, n: usize) -> Skeleton {
    let pts: Vec<Point> = (0..n)
        .map(|_| Point::new(rng.random_range(0..shape.width), rng.random_range(0..shape.height)))
        .collect();
    Skeleton::new(shape, pts).expect("points drawn inside the shape")
}

/// A non-empty point set: either scattered points or the thinned image of
/// random strokes.
pub fn random_skeleton(rng: &mut impl Rng, shape: Shape) -> Skeleton {
    if rng.random_bool(0.5) {
        let strokes = rng.random_range(1..4);
        let s = thin(&random_strokes(rng, shape.width, shape.height, strokes, 3.0));
        if !s.is_empty() {
            return s;
        }
    }
    let n = rng.random_range(1..=40);
    random_points(rng, shape, n)
}

/// A pair of non-empty point sets sharing one random shape.
pub fn random_skeleton_pair(rng: &mut impl Rng, max_side: u32) -> (Skeleton, Skeleton) {
    let shape = Shape::new(rng.random_range(1..=max_side), rng.random_range(1..=max_side));
    (random_skeleton(rng, shape), random_skeleton(rng, shape))
}

fn threshold(d: f64, t: f64) -> f64 {
    if d > t {
        d
    } else {
        0.0
    }
}

/// Mean over `x` of the minimum over `y` of the thresholded pair distance.
pub fn brute_directed(x: &Skeleton, y: &Skeleton, t: f64) -> f64 {
    let sum: f64 = x
        .points()
        .iter()
        .map(|p| {
            y.points()
                .iter()
                .map(|q| threshold(p.distance(q), t))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    sum / x.len() as f64
}

pub fn brute_phd(x: &Skeleton, y: &Skeleton, t: f64) -> f64 {
    brute_directed(x, y, t) + brute_directed(y, x, t)
}

/// Largest nearest-neighbour distance from `x` to `y`.
pub fn brute_directed_max(x: &Skeleton, y: &Skeleton) -> f64 {
    x.points()
        .iter()
        .map(|p| y.points().iter().map(|q| p.distance(q)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

pub fn brute_hausdorff(x: &Skeleton, y: &Skeleton) -> f64 {
    brute_directed_max(x, y).max(brute_directed_max(y, x))
}

pub fn has_2x2_block(m: &BinaryMask) -> bool {
    (0..m.height() as i64 - 1).any(|y| {
        (0..m.width() as i64 - 1).any(|x| m.get(x, y) && m.get(x + 1, y) && m.get(x, y + 1) && m.get(x + 1, y + 1))
    })
}

/// Number of 8-connected foreground components.
pub fn components8(m: &BinaryMask) -> usize {
    let (w, h) = (m.width() as i64, m.height() as i64);
    let mut seen = vec![false; m.shape().len()];
    let mut count = 0;
    let mut queue = VecDeque::new();
    for (sx, sy) in m.foreground() {
        let start = (sy as i64 * w + sx as i64) as usize;
        if seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        queue.push_back((sx as i64, sy as i64));
        while let Some((x, y)) = queue.pop_front() {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h || !m.get(nx, ny) {
                        continue;
                    }
                    let i = (ny * w + nx) as usize;
                    if !seen[i] {
                        seen[i] = true;
                        queue.push_back((nx, ny));
                    }
                }
            }
        }
    }
    count
}

fn polylines(width: u32, height: u32, r: f64, lines: &[&[(f64, f64)]]) -> BinaryMask {
    let shape = Shape::new(width, height);
    let mut bits = vec![false; shape.len()];
    for line in lines {
        for seg in line.windows(2) {
            stroke(&mut bits, shape, seg[0], seg[1], r);
        }
    }
    BinaryMask::from_bits(width, height, bits).expect("length matches shape")
}

fn annulus(size: u32, inner: f64, outer: f64) -> BinaryMask {
    let c = (size as f64 - 1.0) / 2.0;
    BinaryMask::from_fn(size, size, |x, y| {
        let d = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
        d >= inner && d <= outer
    })
}

fn arc(cx: f64, cy: f64, r: f64, from_deg: f64, to_deg: f64) -> Vec<(f64, f64)> {
    (0..=24)
        .map(|i| {
            let a = (from_deg + (to_deg - from_deg) * i as f64 / 24.0).to_radians();
            (cx + r * a.cos(), cy + r * a.sin())
        })
        .collect()
}

/// Hand-picked shapes: lines, rings, bars and letter-like strokes.
pub fn curated_corpus() -> Vec<(&'static str, BinaryMask)> {
    let s_curve = {
        let mut top = arc(20.0, 14.0, 8.0, 0.0, -270.0);
        top.extend(arc(20.0, 30.0, 8.0, -90.0, 180.0));
        top
    };
    vec![
        ("horizontal line", BinaryMask::from_fn(40, 9, |_, y| y == 4)),
        ("vertical line", BinaryMask::from_fn(9, 40, |x, _| x == 4)),
        ("diagonal line", BinaryMask::from_fn(30, 30, |x, y| x == y)),
        ("thick diagonal", polylines(40, 40, 2.5, &[&[(4.0, 4.0), (35.0, 33.0)]])),
        ("bar 3x20", BinaryMask::from_fn(24, 7, |x, y| (2..22).contains(&x) && (2..5).contains(&y))),
        ("bar 9x40", BinaryMask::from_fn(48, 15, |x, y| (4..44).contains(&x) && (3..12).contains(&y))),
        ("bar touching border", BinaryMask::from_fn(30, 5, |_, y| y < 5)),
        ("thin ring", annulus(32, 10.0, 12.0)),
        ("thick ring", annulus(48, 9.0, 20.0)),
        ("two rings", {
            let a = annulus(30, 8.0, 11.0);
            BinaryMask::from_fn(70, 30, |x, y| {
                let (lx, ly) = (x as i64 % 35, y as i64);
                lx < 30 && a.get(lx, ly)
            })
        }),
        ("plus", polylines(40, 40, 2.0, &[&[(5.0, 20.0), (35.0, 20.0)], &[(20.0, 5.0), (20.0, 35.0)]])),
        ("letter L", polylines(30, 40, 2.0, &[&[(8.0, 5.0), (8.0, 33.0), (24.0, 33.0)]])),
        ("letter T", polylines(36, 40, 2.0, &[&[(5.0, 6.0), (30.0, 6.0)], &[(17.5, 6.0), (17.5, 34.0)]])),
        ("letter H", polylines(36, 40, 1.5, &[&[(7.0, 5.0), (7.0, 34.0)], &[(28.0, 5.0), (28.0, 34.0)], &[(7.0, 19.0), (28.0, 19.0)]])),
        ("letter S", polylines(42, 46, 2.0, &[&s_curve])),
        ("letter O", polylines(40, 40, 2.5, &[&arc(20.0, 20.0, 12.0, 0.0, 360.0)])),
        ("membrane mesh", polylines(
            64,
            64,
            2.0,
            &[
                &[(3.0, 10.0), (60.0, 14.0)],
                &[(3.0, 40.0), (30.0, 36.0), (60.0, 44.0)],
                &[(15.0, 3.0), (18.0, 60.0)],
                &[(45.0, 3.0), (40.0, 30.0), (48.0, 60.0)],
            ],
        )),
    ]
}

/// Membrane-like raster: `lines` long random strokes crossing the image,
/// each with its own half-width in `1.5..=radius`. Returns the mask and the
/// stroke endpoints so a perturbed copy can be drawn.
pub fn membrane(rng: &mut impl Rng, width: u32, height: u32, lines: usize, radius: f64) -> (BinaryMask, Vec<Stroke>) {
    let shape = Shape::new(width, height);
    let strokes: Vec<Stroke> = (0..lines)
        .map(|_| {
            let (w, h) = (width as f64, height as f64);
            let (from, to) = if rng.random_bool(0.5) {
                ((0.0, rng.random_range(0.0..h)), (w - 1.0, rng.random_range(0.0..h)))
            } else {
                ((rng.random_range(0.0..w), 0.0), (rng.random_range(0.0..w), h - 1.0))
            };
            Stroke {
                from,
                to,
                radius: rng.random_range(1.5..=radius.max(1.5)),
            }
        })
        .collect();
    (draw(shape, &strokes), strokes)
}

#[derive(Debug, Clone, Copy)]
pub struct Stroke {
    pub from: (f64, f64),
    pub to: (f64, f64),
    pub radius: f64,
}

pub fn draw(shape: Shape, strokes: &[Stroke]) -> BinaryMask {
    let mut bits = vec![false; shape.len()];
    for s in strokes {
        stroke(&mut bits, shape, s.from, s.to, s.radius);
    }
    BinaryMask::from_bits(shape.width, shape.height, bits).expect("length matches shape")
}

/// Moves every endpoint by up to `jitter` pixels and drops each stroke with
/// probability `drop`.
pub fn perturb(rng: &mut impl Rng, strokes: &[Stroke], jitter: f64, drop: f64) -> Vec<Stroke> {
    let mut out = Vec::with_capacity(strokes.len());
    for s in strokes {
        let mut j = |v: f64| v + rng.random_range(-jitter..=jitter);
        let moved = Stroke {
            from: (j(s.from.0), j(s.from.1)),
            to: (j(s.to.0), j(s.to.1)),
            radius: s.radius,
        };
        if !rng.random_bool(drop) {
            out.push(moved);
        }
    }
    out
}
