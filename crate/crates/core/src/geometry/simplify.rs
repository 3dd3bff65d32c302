//! Farthest-point (Ramer-Douglas-Peucker) simplification of closed rings.

use super::{GeometryError, Point};

pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.dist(Point::new(a.x + t * dx, a.y + t * dy))
}

/// Marks which vertices of the open chain `pts[lo..=hi]` survive.
fn rdp(pts: &[Point], lo: usize, hi: usize, epsilon: f64, keep: &mut [bool]) {
    let mut stack = vec![(lo, hi)];
    while let Some((a, b)) = stack.pop() {
        if b <= a + 1 {
            continue;
        }
        let (mut far, mut far_d) = (a, -1.0);
        for i in a + 1..b {
            let d = point_segment_distance(pts[i], pts[a], pts[b]);
            if d > far_d {
                far = i;
                far_d = d;
            }
        }
        if far_d > epsilon {
            keep[far] = true;
            stack.push((a, far));
            stack.push((far, b));
        }
    }
}

/// Simplifies a closed ring so every dropped vertex lies within `epsilon` of
/// the simplified boundary. `epsilon <= 0` returns the ring unchanged.
pub fn simplify_ring(ring: &[Point], epsilon: f64) -> Result<Vec<Point>, GeometryError> {
    let n = ring.len();
    if n < 3 {
        return Err(GeometryError::DegenerateRing);
    }
    if epsilon <= 0.0 {
        return Ok(ring.to_vec());
    }

    // Anchor at vertex 0 and the vertex farthest from it; the closed ring
    // becomes two open chains over a doubled index space.
    let far = (1..n)
        .max_by(|&i, &j| ring[0].dist(ring[i]).total_cmp(&ring[0].dist(ring[j])))
        .unwrap();
    let mut ext: Vec<Point> = ring.to_vec();
    ext.push(ring[0]);
    let mut keep = vec![false; n + 1];
    keep[0] = true;
    keep[far] = true;
    keep[n] = true;
    rdp(&ext, 0, far, epsilon, &mut keep);
    rdp(&ext, far, n, epsilon, &mut keep);
    let mut kept: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();

    // Vertex 0 was kept only as an anchor; drop it when everything between
    // its neighbors still lies within epsilon of their chord.
    if kept.len() > 3 {
        let prev = *kept.last().unwrap();
        let next = kept[1];
        let chain_ok = (prev + 1..=n + next - 1)
            .map(|i| ring[i % n])
            .all(|p| point_segment_distance(p, ring[prev], ring[next]) <= epsilon);
        if chain_ok {
            kept.remove(0);
        }
    }

    if kept.len() < 3 {
        // Too flat for epsilon: keep the vertex farthest from the chord.
        let (a, b) = (ring[kept[0]], ring[*kept.last().unwrap()]);
        let (idx, d) = (0..n)
            .filter(|i| !kept.contains(i))
            .map(|i| (i, point_segment_distance(ring[i], a, b)))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .ok_or(GeometryError::DegenerateRing)?;
        if d == 0.0 {
            return Err(GeometryError::DegenerateRing);
        }
        kept.push(idx);
        kept.sort_unstable();
    }
    Ok(kept.into_iter().map(|i| ring[i]).collect())
}
