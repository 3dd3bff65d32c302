//! Fused scene to editable polygon scene.

use log::debug;

use super::alpha::alpha_outline;
use super::simplify::simplify_ring;
use super::trace::{outer_boundary, Mask};
use super::{is_unioned_class, z_rank, ComponentPolygon, PieceMode, Point, PolygonScene, Z_ORDER};
use crate::exec::Exec;
use crate::scene::{BBox, ClassId, FusedScene};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractConfig {
    /// Simplification tolerance in pixels.
    pub epsilon: f64,
    /// Sections below this fraction of the frame are dropped.
    pub min_area_fraction: f64,
    pub alpha_stride: usize,
    pub alpha_radius: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            epsilon: 2.0,
            min_area_fraction: 0.001,
            alpha_stride: 4,
            alpha_radius: 8.0,
        }
    }
}

enum Job {
    Section(u32, ClassId, BBox),
    Union(ClassId, Vec<u32>, BBox),
}

fn crop(scene: &FusedScene, bbox: BBox, ids: &[u32]) -> Mask {
    let (w, h) = ((bbox.x1 - bbox.x0 + 1) as usize, (bbox.y1 - bbox.y0 + 1) as usize);
    let sm = scene.section_mask();
    Mask::from_fn(w, h, |x, y| {
        ids.contains(&sm.get(bbox.x0 + x as u32, bbox.y0 + y as u32))
    })
}

fn finish(
    ring: Option<Vec<Point>>,
    cfg: &ExtractConfig,
    class: ClassId,
    section: Option<u32>,
) -> Option<ComponentPolygon> {
    let ring = match simplify_ring(&ring?, cfg.epsilon) {
        Ok(r) => r,
        Err(e) => {
            debug!("dropping {} outline: {e}", class.name());
            return None;
        }
    };
    Some(ComponentPolygon {
        class,
        ring,
        source_section: section,
        mode: if section.is_some() {
            PieceMode::Separate
        } else {
            PieceMode::Unioned
        },
    })
}

pub fn extract_polygons(scene: &FusedScene, cfg: &ExtractConfig) -> PolygonScene {
    extract_polygons_with(Exec::default(), scene, cfg)
}

/// One polygon per section for separate classes, one alpha-shape union for
/// Liver and Gallbladder; output in z-order, then by section id.
pub fn extract_polygons_with(exec: Exec, scene: &FusedScene, cfg: &ExtractConfig) -> PolygonScene {
    let min_area = cfg.min_area_fraction * scene.width() as f64 * scene.height() as f64;
    let big: Vec<_> = scene
        .sections()
        .iter()
        .filter(|s| z_rank(s.class).is_some() && s.pixel_count as f64 >= min_area)
        .collect();

    let mut jobs = Vec::new();
    for class in Z_ORDER {
        let of_class: Vec<_> = big.iter().filter(|s| s.class == class).collect();
        if of_class.is_empty() {
            continue;
        }
        if is_unioned_class(class) {
            let ids = of_class.iter().map(|s| s.id).collect();
            let bbox = of_class.iter().skip(1).fold(of_class[0].bbox, |b, s| BBox {
                x0: b.x0.min(s.bbox.x0),
                y0: b.y0.min(s.bbox.y0),
                x1: b.x1.max(s.bbox.x1),
                y1: b.y1.max(s.bbox.y1),
            });
            jobs.push(Job::Union(class, ids, bbox));
        } else {
            jobs.extend(of_class.iter().map(|s| Job::Section(s.id, class, s.bbox)));
        }
    }

    let polygons = exec.map(&jobs, |job| match job {
        Job::Section(id, class, bbox) => {
            let mask = crop(scene, *bbox, &[*id]);
            let origin = (bbox.x0 as f64, bbox.y0 as f64);
            finish(outer_boundary(&mask, origin), cfg, *class, Some(*id))
        }
        Job::Union(class, ids, bbox) => {
            let mask = crop(scene, *bbox, ids);
            let origin = (bbox.x0 as f64, bbox.y0 as f64);
            let ring = alpha_outline(&mask, origin, cfg.alpha_stride, cfg.alpha_radius);
            finish(ring, cfg, *class, None)
        }
    });

    PolygonScene {
        width: scene.width(),
        height: scene.height(),
        polygons: polygons.into_iter().flatten().collect(),
    }
}
