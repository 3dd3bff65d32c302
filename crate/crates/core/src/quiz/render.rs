//! Region highlights composited over frame images.

use image::{Rgb, RgbImage};

use super::{Anchor, HighlightStyle, QuizError};
use crate::geometry::{fill_mask, Mask};
use crate::scene::PALETTE;
use crate::scene::FusedScene;

/// Tint used for polygon anchors, which carry no class.
const POLYGON_TINT: [u8; 3] = [255, 215, 0];
const FILL_ALPHA: f32 = 0.4;
const OUTLINE_WIDTH: i64 = 2;
const LABEL_W: i64 = 24;
const LABEL_H: i64 = 14;

#[derive(Debug, Clone, PartialEq)]
pub struct HighlightRegion {
    pub mask: Mask,
    pub color: [u8; 3],
}

/// Pixels of a section or polygon anchor on the scene's canvas.
pub fn resolve_anchor(scene: &FusedScene, anchor: &Anchor) -> Result<HighlightRegion, QuizError> {
    let (w, h) = (scene.width() as usize, scene.height() as usize);
    let region = match anchor {
        Anchor::Section { id } => {
            let rec = scene.section(*id).ok_or(QuizError::DanglingSection {
                frame: String::new(),
                section: *id,
            })?;
            let ids = scene.section_mask().as_raw();
            HighlightRegion {
                mask: Mask {
                    width: w,
                    height: h,
                    data: ids.iter().map(|&s| u32::from(s) == *id).collect(),
                },
                color: PALETTE[rec.class.index()],
            }
        }
        Anchor::Polygon { ring } => HighlightRegion {
            mask: fill_mask(ring, w, h),
            color: POLYGON_TINT,
        },
    };
    if region.mask.count() == 0 {
        return Err(QuizError::EmptyRegion);
    }
    Ok(region)
}

/// Composited image plus the set of pixels the style is allowed to touch.
#[derive(Debug, Clone)]
pub struct Highlight {
    pub image: RgbImage,
    pub footprint: Mask,
}

fn blend(src: Rgb<u8>, color: [u8; 3]) -> Rgb<u8> {
    let mix = |s: u8, c: u8| ((1.0 - FILL_ALPHA) * f32::from(s) + FILL_ALPHA * f32::from(c)).round() as u8;
    Rgb([mix(src[0], color[0]), mix(src[1], color[1]), mix(src[2], color[2])])
}

fn centroid(mask: &Mask) -> (i64, i64) {
    let (mut sx, mut sy, mut n) = (0u64, 0u64, 0u64);
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.data[y * mask.width + x] {
                sx += x as u64;
                sy += y as u64;
                n += 1;
            }
        }
    }
    ((sx / n) as i64, (sy / n) as i64)
}

fn plot(img: &mut RgbImage, fp: &mut Mask, x: i64, y: i64, c: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb(c));
        fp.set(x as usize, y as usize, true);
    }
}

fn line(img: &mut RgbImage, fp: &mut Mask, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = ((x1 - x0).signum(), (y1 - y0).signum());
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        plot(img, fp, x, y, c);
        plot(img, fp, x + 1, y, c);
        if (x, y) == (x1, y1) {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Draws `region` onto a copy of `image`.
///
/// `Fill` tints exactly the region at 40% opacity; `Outline` paints the
/// region's inner 2 px boundary band; `Arrow` draws a label box and a shaft
/// ending at the region centroid.
pub fn render_highlight(image: &RgbImage, region: &HighlightRegion, style: HighlightStyle) -> Highlight {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut out = image.clone();
    let mut fp = Mask::new(w, h);
    let m = &region.mask;
    match style {
        HighlightStyle::Fill => {
            for y in 0..h.min(m.height) {
                for x in 0..w.min(m.width) {
                    if m.data[y * m.width + x] {
                        let p = out.get_pixel_mut(x as u32, y as u32);
                        *p = blend(*p, region.color);
                        fp.set(x, y, true);
                    }
                }
            }
        }
        HighlightStyle::Outline => {
            for y in 0..h.min(m.height) as i64 {
                for x in 0..w.min(m.width) as i64 {
                    if !m.get(x, y) {
                        continue;
                    }
                    let edge = (-OUTLINE_WIDTH..=OUTLINE_WIDTH).any(|dy| {
                        (-OUTLINE_WIDTH..=OUTLINE_WIDTH).any(|dx| !m.get(x + dx, y + dy))
                    });
                    if edge {
                        plot(&mut out, &mut fp, x, y, region.color);
                    }
                }
            }
        }
        HighlightStyle::Arrow => {
            let (cx, cy) = centroid(m);
            // label box up and to the left of the target, kept on canvas
            let bx = (cx - 60).clamp(0, (w as i64 - LABEL_W).max(0));
            let by = (cy - 60).clamp(0, (h as i64 - LABEL_H).max(0));
            for y in by..by + LABEL_H {
                for x in bx..bx + LABEL_W {
                    let border = y == by || y == by + LABEL_H - 1 || x == bx || x == bx + LABEL_W - 1;
                    plot(&mut out, &mut fp, x, y, if border { [20, 20, 20] } else { region.color });
                }
            }
            let start = (bx + LABEL_W / 2, by + LABEL_H / 2);
            line(&mut out, &mut fp, start, (cx, cy), region.color);
            // head: two short strokes back along the shaft, rotated +-30 degrees
            let (vx, vy) = ((start.0 - cx) as f64, (start.1 - cy) as f64);
            let len = vx.hypot(vy);
            if len > 0.0 {
                for a in [30f64.to_radians(), -30f64.to_radians()] {
                    let (s, c) = a.sin_cos();
                    let hx = (vx * c - vy * s) / len * 8.0;
                    let hy = (vx * s + vy * c) / len * 8.0;
                    line(&mut out, &mut fp, (cx, cy), (cx + hx.round() as i64, cy + hy.round() as i64), region.color);
                }
            }
        }
    }
    Highlight { image: out, footprint: fp }
}
