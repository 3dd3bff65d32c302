//! Editable polygon scenes.
//!
//! Fused scenes become z-ordered component polygons ([`extract_polygons`]);
//! edited polygon scenes paint back into class maps ([`rasterize`]) to serve
//! as search references.
//!
//! Coordinates are in source-image pixel space with pixel `(x, y)` covering
//! the unit square `[x, x + 1) x [y, y + 1)`; its center is `(x + 0.5, y + 0.5)`.

mod alpha;
mod extract;
mod raster;
mod simplify;
mod trace;
mod transform;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::ClassId;

pub use alpha::{alpha_outline, convex_hull};
pub use extract::{extract_polygons, extract_polygons_with, ExtractConfig};
pub use raster::{fill_mask, rasterize, rasterize_with};
pub use simplify::{point_segment_distance, simplify_ring};
pub use trace::{outer_boundary, trace_loops, Mask};
pub use transform::{centroid, signed_area, transform_polygon, Transform};

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("ring has fewer than 3 distinct vertices")]
    DegenerateRing,
    #[error("vertex index {index} is out of range for a ring of {len}")]
    VertexOutOfRange { index: usize, len: usize },
    #[error("invalid transform: {0}")]
    InvalidTransform(String),
    #[error("{path}: {reason}")]
    InvalidScene { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Point {
        Point { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Point {
        Point { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> [f64; 2] {
        [p.x, p.y]
    }
}

/// Paint order of the editable classes, bottom first.
pub const Z_ORDER: [ClassId; 6] = [
    ClassId::LIVER,
    ClassId::GALLBLADDER,
    ClassId::FAT,
    ClassId::GI_TRACT,
    ClassId::BLOOD,
    ClassId::TOOL,
];

/// Position of `class` in [`Z_ORDER`], or `None` for backdrop classes.
pub fn z_rank(class: ClassId) -> Option<usize> {
    Z_ORDER.iter().position(|&c| c == class)
}

/// Classes whose sections are unioned into one polygon.
pub fn is_unioned_class(class: ClassId) -> bool {
    class == ClassId::LIVER || class == ClassId::GALLBLADDER
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PieceMode {
    #[default]
    Separate,
    Unioned,
}

fn is_separate(m: &PieceMode) -> bool {
    *m == PieceMode::Separate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentPolygon {
    pub class: ClassId,
    #[serde(rename = "vertices")]
    pub ring: Vec<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_section: Option<u32>,
    #[serde(default, skip_serializing_if = "is_separate")]
    pub mode: PieceMode,
}

impl ComponentPolygon {
    pub fn new(class: ClassId, ring: Vec<Point>) -> ComponentPolygon {
        ComponentPolygon {
            class,
            ring,
            source_section: None,
            mode: PieceMode::Separate,
        }
    }
}

/// Canvas dimensions plus polygons in paint order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonScene {
    pub width: u32,
    pub height: u32,
    pub polygons: Vec<ComponentPolygon>,
}

impl PolygonScene {
    pub fn empty(width: u32, height: u32) -> PolygonScene {
        PolygonScene {
            width,
            height,
            polygons: Vec::new(),
        }
    }

    /// Stable sort by z-rank; backdrop classes sort last.
    pub fn sort_by_z(&mut self) {
        self.polygons
            .sort_by_key(|p| z_rank(p.class).unwrap_or(usize::MAX));
    }

    /// Checks canvas size, editable classes, vertex count and the off-canvas
    /// margin (half a canvas on every side). Errors name the offending path.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |path: String, reason: &str| GeometryError::InvalidScene {
            path,
            reason: reason.to_string(),
        };
        if self.width == 0 || self.height == 0 {
            return Err(bad("width".into(), "canvas must be non-empty"));
        }
        let (w, h) = (f64::from(self.width), f64::from(self.height));
        let mut last_rank = 0;
        for (i, p) in self.polygons.iter().enumerate() {
            let Some(rank) = z_rank(p.class) else {
                return Err(bad(format!("polygons[{i}].class"), "class is not editable"));
            };
            if rank < last_rank {
                return Err(bad(format!("polygons[{i}].class"), "polygons are out of z-order"));
            }
            last_rank = rank;
            if p.ring.len() < 3 {
                return Err(bad(format!("polygons[{i}].vertices"), "need at least 3 vertices"));
            }
            for (j, v) in p.ring.iter().enumerate() {
                let ok = v.x.is_finite()
                    && v.y.is_finite()
                    && (-0.5 * w..=1.5 * w).contains(&v.x)
                    && (-0.5 * h..=1.5 * h).contains(&v.y);
                if !ok {
                    return Err(bad(
                        format!("polygons[{i}].vertices[{j}]"),
                        "vertex is non-finite or too far off canvas",
                    ));
                }
            }
        }
        Ok(())
    }
}
