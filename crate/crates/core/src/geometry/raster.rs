//! Scanline polygon fill at pixel centers.

use super::{Mask, Point, PolygonScene};
use crate::exec::Exec;
use crate::scene::{ClassId, ClassMap};

struct Edges {
    segs: Vec<(Point, Point)>,
    y_min: f64,
    y_max: f64,
}

impl Edges {
    fn new(ring: &[Point]) -> Edges {
        let n = ring.len();
        let segs: Vec<_> = (0..n).map(|i| (ring[i], ring[(i + 1) % n])).collect();
        let y_min = ring.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let y_max = ring.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        Edges { segs, y_min, y_max }
    }

    /// Pixel spans `[x0, x1)` of row `y` whose centers are inside (even-odd).
    fn spans(&self, y: usize, width: usize, xs: &mut Vec<f64>, out: &mut Vec<(usize, usize)>) {
        out.clear();
        let yc = y as f64 + 0.5;
        if yc < self.y_min || yc > self.y_max {
            return;
        }
        xs.clear();
        for &(p, q) in &self.segs {
            if (p.y > yc) != (q.y > yc) {
                xs.push(p.x + (yc - p.y) * (q.x - p.x) / (q.y - p.y));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let x0 = (pair[0] - 0.5).ceil().clamp(0.0, width as f64) as usize;
            let x1 = (pair[1] - 0.5).ceil().clamp(0.0, width as f64) as usize;
            if x0 < x1 {
                out.push((x0, x1));
            }
        }
    }
}

/// Pixels whose centers fall inside `ring` (even-odd rule).
pub fn fill_mask(ring: &[Point], width: usize, height: usize) -> Mask {
    let mut mask = Mask::new(width, height);
    if ring.len() < 3 || width == 0 {
        return mask;
    }
    let edges = Edges::new(ring);
    let (mut xs, mut spans) = (Vec::new(), Vec::new());
    for y in 0..height {
        edges.spans(y, width, &mut xs, &mut spans);
        for &(x0, x1) in &spans {
            mask.data[y * width + x0..y * width + x1].fill(true);
        }
    }
    mask
}

pub fn rasterize(scene: &PolygonScene) -> ClassMap {
    rasterize_with(Exec::default(), scene)
}

/// Paints polygons in list order over a Background canvas.
pub fn rasterize_with(exec: Exec, scene: &PolygonScene) -> ClassMap {
    let (w, h) = (scene.width as usize, scene.height as usize);
    let polys: Vec<(u8, Edges)> = scene
        .polygons
        .iter()
        .filter(|p| p.ring.len() >= 3)
        .map(|p| (p.class.get(), Edges::new(&p.ring)))
        .collect();
    let mut labels = vec![ClassId::BACKGROUND.get(); w * h];
    exec.for_each_chunk_mut(&mut labels, w.max(1), |y, row| {
        let (mut xs, mut spans) = (Vec::new(), Vec::new());
        for (class, edges) in &polys {
            edges.spans(y, w, &mut xs, &mut spans);
            for &(x0, x1) in &spans {
                row[x0..x1].fill(*class);
            }
        }
    });
    ClassMap::from_raw(scene.width, scene.height, labels).expect("labels sized to canvas")
}
