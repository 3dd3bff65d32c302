//! Polygon edits: move, resize, rotate and vertex drags.

use serde::{Deserialize, Serialize};

use super::{ComponentPolygon, GeometryError, Point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Transform {
    Translate { dx: f64, dy: f64 },
    /// About the polygon centroid.
    Scale { sx: f64, sy: f64 },
    /// Clockwise on screen (y down), about the polygon centroid.
    Rotate { degrees: f64 },
    MoveVertex { index: usize, x: f64, y: f64 },
}

impl Transform {
    /// The transform undoing `self`, when one exists without extra state.
    pub fn inverse(&self) -> Option<Transform> {
        match *self {
            Transform::Translate { dx, dy } => Some(Transform::Translate { dx: -dx, dy: -dy }),
            Transform::Scale { sx, sy } if sx != 0.0 && sy != 0.0 => Some(Transform::Scale {
                sx: 1.0 / sx,
                sy: 1.0 / sy,
            }),
            Transform::Rotate { degrees } => Some(Transform::Rotate { degrees: -degrees }),
            _ => None,
        }
    }
}

/// Shoelace area; positive for clockwise-on-screen rings.
pub fn signed_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    (0..n)
        .map(|i| {
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        / 2.0
}

/// Area centroid, or the vertex mean for zero-area rings.
pub fn centroid(ring: &[Point]) -> Point {
    let n = ring.len();
    if n == 0 {
        return Point::new(0.0, 0.0);
    }
    // Relative to the first vertex to limit cancellation.
    let o = ring[0];
    let (mut a2, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (p, q) = (ring[i], ring[(i + 1) % n]);
        let (px, py, qx, qy) = (p.x - o.x, p.y - o.y, q.x - o.x, q.y - o.y);
        let cross = px * qy - qx * py;
        a2 += cross;
        cx += (px + qx) * cross;
        cy += (py + qy) * cross;
    }
    if a2.abs() < 1e-12 {
        let sx: f64 = ring.iter().map(|p| p.x).sum();
        let sy: f64 = ring.iter().map(|p| p.y).sum();
        return Point::new(sx / n as f64, sy / n as f64);
    }
    Point::new(o.x + cx / (3.0 * a2), o.y + cy / (3.0 * a2))
}

fn distinct_vertices(ring: &[Point]) -> usize {
    let mut v: Vec<(u64, u64)> = ring
        .iter()
        .map(|p| ((p.x + 0.0).to_bits(), (p.y + 0.0).to_bits()))
        .collect();
    v.sort_unstable();
    v.dedup();
    v.len()
}

pub fn transform_polygon(
    p: &ComponentPolygon,
    t: &Transform,
) -> Result<ComponentPolygon, GeometryError> {
    if p.ring.len() < 3 {
        return Err(GeometryError::DegenerateRing);
    }
    let finite = |vals: &[f64]| vals.iter().all(|v| v.is_finite());
    let ring: Vec<Point> = match *t {
        Transform::Translate { dx, dy } => {
            if !finite(&[dx, dy]) {
                return Err(GeometryError::InvalidTransform("offset must be finite".into()));
            }
            p.ring
                .iter()
                .map(|v| Point::new(v.x + dx, v.y + dy))
                .collect()
        }
        Transform::Scale { sx, sy } => {
            if !finite(&[sx, sy]) || sx == 0.0 || sy == 0.0 {
                return Err(GeometryError::InvalidTransform(
                    "scale factors must be finite and non-zero".into(),
                ));
            }
            let c = centroid(&p.ring);
            p.ring
                .iter()
                .map(|v| Point::new(c.x + (v.x - c.x) * sx, c.y + (v.y - c.y) * sy))
                .collect()
        }
        Transform::Rotate { degrees } => {
            if !finite(&[degrees]) {
                return Err(GeometryError::InvalidTransform("angle must be finite".into()));
            }
            let c = centroid(&p.ring);
            let (s, co) = degrees.to_radians().sin_cos();
            p.ring
                .iter()
                .map(|v| {
                    let (dx, dy) = (v.x - c.x, v.y - c.y);
                    Point::new(c.x + dx * co - dy * s, c.y + dx * s + dy * co)
                })
                .collect()
        }
        Transform::MoveVertex { index, x, y } => {
            if index >= p.ring.len() {
                return Err(GeometryError::VertexOutOfRange {
                    index,
                    len: p.ring.len(),
                });
            }
            if !finite(&[x, y]) {
                return Err(GeometryError::InvalidTransform("vertex must be finite".into()));
            }
            let mut ring = p.ring.clone();
            ring[index] = Point::new(x, y);
            ring
        }
    };
    if distinct_vertices(&ring) < 3 {
        return Err(GeometryError::DegenerateRing);
    }
    Ok(ComponentPolygon {
        ring,
        ..p.clone()
    })
}
