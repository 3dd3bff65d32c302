//! Alpha-shape union of fragmented regions.
//!
//! The region is sampled (boundary corners every `stride` steps plus interior
//! pixel centers on a `stride` grid) and Delaunay-triangulated. Triangles
//! with circumradius up to `radius` bridge gaps between fragments; the kept
//! triangles are painted over the original mask and the result traced.

use delaunator::{triangulate, EMPTY};
use petgraph::unionfind::UnionFind;

use super::trace::{outer_loops, Mask};
use super::Point;

fn to_dpoint(p: Point) -> delaunator::Point {
    delaunator::Point { x: p.x, y: p.y }
}

/// Convex hull in triangulation order; empty for fewer than 3 points.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    if points.len() < 3 {
        return Vec::new();
    }
    let pts: Vec<_> = points.iter().copied().map(to_dpoint).collect();
    triangulate(&pts).hull.into_iter().map(|i| points[i]).collect()
}

fn circumradius(a: Point, b: Point, c: Point) -> f64 {
    let (ab, bc, ca) = (a.dist(b), b.dist(c), c.dist(a));
    let area2 = ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y)).abs();
    if area2 == 0.0 {
        return f64::INFINITY;
    }
    ab * bc * ca / (2.0 * area2)
}

fn samples(mask: &Mask, stride: usize) -> Vec<Point> {
    let mut pts = Vec::new();
    for ring in outer_loops(mask) {
        for (i, &(x, y)) in ring.iter().enumerate() {
            if i % stride == 0 {
                pts.push(Point::new(x as f64, y as f64));
            }
        }
    }
    for y in (0..mask.height).step_by(stride) {
        for x in (0..mask.width).step_by(stride) {
            if mask.get(x as i64, y as i64) {
                pts.push(Point::new(x as f64 + 0.5, y as f64 + 0.5));
            }
        }
    }
    pts
}

fn paint_triangle(mask: &mut Mask, t: [Point; 3]) {
    let x0 = t.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let x1 = t.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let y0 = t.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let y1 = t.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let cross = |a: Point, b: Point, p: Point| (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    let orient = cross(t[0], t[1], t[2]).signum();
    let px0 = (x0 - 0.5).ceil().max(0.0) as usize;
    let py0 = (y0 - 0.5).ceil().max(0.0) as usize;
    let px1 = ((x1 - 0.5).floor() as i64).min(mask.width as i64 - 1);
    let py1 = ((y1 - 0.5).floor() as i64).min(mask.height as i64 - 1);
    for y in py0 as i64..=py1 {
        for x in px0 as i64..=px1 {
            let c = Point::new(x as f64 + 0.5, y as f64 + 0.5);
            let inside = (0..3).all(|k| cross(t[k], t[(k + 1) % 3], c) * orient >= 0.0);
            if inside {
                mask.set(x as usize, y as usize, true);
            }
        }
    }
}

/// Single outline covering every piece of `mask`, offset by `origin`.
///
/// Falls back to the convex hull of the samples when the kept triangles do
/// not form one connected piece that covers every sample.
pub fn alpha_outline(
    mask: &Mask,
    origin: (f64, f64),
    stride: usize,
    radius: f64,
) -> Option<Vec<Point>> {
    let stride = stride.max(1);
    let pts = samples(mask, stride);
    if pts.is_empty() {
        return None;
    }
    let shift = |p: Point| Point::new(p.x + origin.0, p.y + origin.1);
    let hull = || {
        let h = convex_hull(&pts);
        (h.len() >= 3).then(|| h.into_iter().map(shift).collect())
    };

    let dpts: Vec<_> = pts.iter().copied().map(to_dpoint).collect();
    let tri = triangulate(&dpts);
    let n_tri = tri.triangles.len() / 3;
    let kept: Vec<bool> = (0..n_tri)
        .map(|t| {
            let v = &tri.triangles[3 * t..3 * t + 3];
            circumradius(pts[v[0]], pts[v[1]], pts[v[2]]) <= radius
        })
        .collect();

    let mut uf = UnionFind::<usize>::new(n_tri);
    let mut covered = vec![false; pts.len()];
    for t in (0..n_tri).filter(|&t| kept[t]) {
        for e in 3 * t..3 * t + 3 {
            covered[tri.triangles[e]] = true;
            let opp = tri.halfedges[e];
            if opp != EMPTY && kept[opp / 3] {
                uf.union(t, opp / 3);
            }
        }
    }
    let mut roots: Vec<usize> = (0..n_tri).filter(|&t| kept[t]).map(|t| uf.find(t)).collect();
    roots.sort_unstable();
    roots.dedup();
    if pts.len() > 1 && (roots.len() != 1 || covered.iter().any(|c| !c)) {
        return hull();
    }

    let mut union = mask.clone();
    for t in (0..n_tri).filter(|&t| kept[t]) {
        let v = &tri.triangles[3 * t..3 * t + 3];
        paint_triangle(&mut union, [pts[v[0]], pts[v[1]], pts[v[2]]]);
    }
    let loops = outer_loops(&union);
    if loops.len() != 1 {
        return hull();
    }
    super::trace::outer_boundary(&union, origin)
}
