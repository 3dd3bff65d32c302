//! Crack-following boundary tracer.
//!
//! Boundaries run along pixel edges, so a traced loop rasterized at pixel
//! centers reproduces its region exactly. Loops keep the inside on the
//! right-hand side (y pointing down), which makes outer loops positive and
//! holes negative under the shoelace formula. Diagonal-only contacts are
//! kept apart: the inside is treated as 4-connected.

use super::Point;

/// Binary raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Mask {
        Mask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Mask {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Mask {
            width,
            height,
            data,
        }
    }

    /// `false` outside the raster.
    pub fn get(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.data[y as usize * self.width + x as usize]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

// E, S, W, N in y-down coordinates.
const STEPS: [(i64, i64); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

/// All boundary loops as unit-step lattice vertices.
pub fn trace_loops(mask: &Mask) -> Vec<Vec<(i64, i64)>> {
    let (w, h) = (mask.width, mask.height);
    let stride = w + 1;
    let vid = |x: i64, y: i64| y as usize * stride + x as usize;
    let mut out = vec![0u8; (w + 1) * (h + 1)];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            if !mask.get(x, y) {
                continue;
            }
            if !mask.get(x, y - 1) {
                out[vid(x, y)] |= 1 << 0;
            }
            if !mask.get(x + 1, y) {
                out[vid(x + 1, y)] |= 1 << 1;
            }
            if !mask.get(x, y + 1) {
                out[vid(x + 1, y + 1)] |= 1 << 2;
            }
            if !mask.get(x - 1, y) {
                out[vid(x, y + 1)] |= 1 << 3;
            }
        }
    }

    let mut used = vec![0u8; out.len()];
    let mut loops = Vec::new();
    for start in 0..out.len() {
        while out[start] & !used[start] != 0 {
            let free = out[start] & !used[start];
            let d0 = free.trailing_zeros() as usize;
            let (sx, sy) = ((start % stride) as i64, (start / stride) as i64);
            let mut ring = Vec::new();
            let (mut x, mut y, mut d) = (sx, sy, d0);
            loop {
                ring.push((x, y));
                used[vid(x, y)] |= 1 << d;
                x += STEPS[d].0;
                y += STEPS[d].1;
                let here = out[vid(x, y)];
                // right turn first, then straight, then left
                d = [(d + 1) % 4, d, (d + 3) % 4]
                    .into_iter()
                    .find(|&nd| here & (1 << nd) != 0)
                    .expect("boundary edges always continue");
                if (x, y) == (sx, sy) && d == d0 {
                    break;
                }
            }
            loops.push(ring);
        }
    }
    loops
}

/// Twice the signed area of a lattice loop.
fn double_area(ring: &[(i64, i64)]) -> i64 {
    let n = ring.len();
    (0..n)
        .map(|i| {
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum()
}

/// Drops vertices where the boundary continues straight.
fn corners(ring: &[(i64, i64)]) -> Vec<(i64, i64)> {
    let n = ring.len();
    (0..n)
        .filter(|&i| {
            let (p, c, q) = (ring[(i + n - 1) % n], ring[i], ring[(i + 1) % n]);
            (c.0 - p.0, c.1 - p.1) != (q.0 - c.0, q.1 - c.1)
        })
        .map(|i| ring[i])
        .collect()
}

/// Outer boundary (corners only) of the largest piece of the mask, offset by
/// `origin`. Holes are ignored.
pub fn outer_boundary(mask: &Mask, origin: (f64, f64)) -> Option<Vec<Point>> {
    trace_loops(mask)
        .into_iter()
        .map(|l| (double_area(&l), l))
        .filter(|(a, _)| *a > 0)
        .max_by_key(|(a, _)| *a)
        .map(|(_, l)| {
            corners(&l)
                .into_iter()
                .map(|(x, y)| Point::new(x as f64 + origin.0, y as f64 + origin.1))
                .collect()
        })
}

/// Outer loops only, as raw unit-step lattice vertices.
pub(crate) fn outer_loops(mask: &Mask) -> Vec<Vec<(i64, i64)>> {
    trace_loops(mask)
        .into_iter()
        .filter(|l| double_area(l) > 0)
        .collect()
}
