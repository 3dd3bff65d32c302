//! Inpainting backends.

use image::{Rgb, RgbImage};
use log::warn;
use thiserror::Error;

use crate::geometry::Mask;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InpaintError {
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("inpaint backend unavailable: {0}")]
    BackendUnavailable(String),
}

pub trait Inpainter: Send + Sync {
    fn name(&self) -> &str;

    /// Replaces masked pixels; unmasked pixels must come back unchanged.
    fn inpaint(&self, image: &RgbImage, mask: &Mask) -> Result<RgbImage, InpaintError>;
}

pub(crate) fn check_mask(image: &RgbImage, mask: &Mask) -> Result<(), InpaintError> {
    if (mask.width, mask.height) != (image.width() as usize, image.height() as usize) {
        return Err(InpaintError::InvalidMask(format!(
            "mask is {}x{}, image is {}x{}",
            mask.width,
            mask.height,
            image.width(),
            image.height()
        )));
    }
    Ok(())
}

/// Offline diffusion fill: masked pixels start at the mean of the pixels
/// bordering the mask, then relax toward the mean of their 4 neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalInpainter {
    pub sweeps: usize,
}

impl Default for LocalInpainter {
    fn default() -> Self {
        LocalInpainter { sweeps: 64 }
    }
}

impl Inpainter for LocalInpainter {
    fn name(&self) -> &str {
        "local"
    }

    fn inpaint(&self, image: &RgbImage, mask: &Mask) -> Result<RgbImage, InpaintError> {
        check_mask(image, mask)?;
        let (w, h) = (mask.width, mask.height);
        let holes: Vec<usize> = (0..w * h).filter(|&i| mask.data[i]).collect();
        if holes.is_empty() {
            return Ok(image.clone());
        }
        let neighbours = |i: usize| {
            let (x, y) = (i % w, i / w);
            [
                (x > 0).then(|| i - 1),
                (x + 1 < w).then(|| i + 1),
                (y > 0).then(|| i - w),
                (y + 1 < h).then(|| i + w),
            ]
            .into_iter()
            .flatten()
        };
        let mut px: Vec<[f32; 3]> = image
            .pixels()
            .map(|p| [f32::from(p[0]), f32::from(p[1]), f32::from(p[2])])
            .collect();

        let (mut sum, mut n) = ([0f64; 3], 0usize);
        let mut seen = vec![false; w * h];
        for &i in &holes {
            for j in neighbours(i) {
                if !mask.data[j] && !seen[j] {
                    seen[j] = true;
                    for c in 0..3 {
                        sum[c] += f64::from(px[j][c]);
                    }
                    n += 1;
                }
            }
        }
        let init = if n == 0 {
            [128.0; 3]
        } else {
            sum.map(|s| (s / n as f64) as f32)
        };
        for &i in &holes {
            px[i] = init;
        }

        let mut next = vec![[0f32; 3]; holes.len()];
        for _ in 0..self.sweeps {
            for (k, &i) in holes.iter().enumerate() {
                let (mut acc, mut cnt) = ([0f32; 3], 0f32);
                for j in neighbours(i) {
                    for c in 0..3 {
                        acc[c] += px[j][c];
                    }
                    cnt += 1.0;
                }
                next[k] = acc.map(|a| a / cnt);
            }
            for (k, &i) in holes.iter().enumerate() {
                px[i] = next[k];
            }
        }

        let mut out = image.clone();
        for &i in &holes {
            let v = px[i].map(|c| c.round().clamp(0.0, 255.0) as u8);
            out.put_pixel((i % w) as u32, (i / w) as u32, Rgb(v));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct InpaintOutcome {
    pub image: RgbImage,
    pub backend: String,
    pub fell_back: bool,
}

/// Tries `primary`; when it is unavailable, logs a warning and fills locally.
pub struct FallbackInpainter {
    pub primary: Option<Box<dyn Inpainter>>,
    pub local: LocalInpainter,
}

impl FallbackInpainter {
    pub fn new(primary: Option<Box<dyn Inpainter>>) -> FallbackInpainter {
        FallbackInpainter {
            primary,
            local: LocalInpainter::default(),
        }
    }

    pub fn run(&self, image: &RgbImage, mask: &Mask) -> Result<InpaintOutcome, InpaintError> {
        check_mask(image, mask)?;
        if let Some(p) = &self.primary {
            match p.inpaint(image, mask) {
                Ok(img) => {
                    return Ok(InpaintOutcome {
                        image: img,
                        backend: p.name().to_string(),
                        fell_back: false,
                    })
                }
                Err(InpaintError::BackendUnavailable(e)) => {
                    warn!("inpaint backend {} unavailable ({e}); using local fill", p.name());
                }
                Err(e) => return Err(e),
            }
        }
        Ok(InpaintOutcome {
            image: self.local.inpaint(image, mask)?,
            backend: self.local.name().to_string(),
            fell_back: self.primary.is_some(),
        })
    }
}

impl Inpainter for FallbackInpainter {
    fn name(&self) -> &str {
        "fallback"
    }

    fn inpaint(&self, image: &RgbImage, mask: &Mask) -> Result<RgbImage, InpaintError> {
        self.run(image, mask).map(|o| o.image)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Down;

    impl Inpainter for Down {
        fn name(&self) -> &str {
            "down"
        }

        fn inpaint(&self, _: &RgbImage, _: &Mask) -> Result<RgbImage, InpaintError> {
            Err(InpaintError::BackendUnavailable("connection refused".into()))
        }
    }

    #[test]
    fn single_pixel_takes_surrounding_color() {
        let img = RgbImage::from_pixel(5, 5, Rgb([10, 200, 30]));
        let mut src = img.clone();
        src.put_pixel(2, 2, Rgb([255, 0, 255]));
        let mask = Mask::from_fn(5, 5, |x, y| (x, y) == (2, 2));
        assert_eq!(LocalInpainter::default().inpaint(&src, &mask).unwrap(), img);
    }

    #[test]
    fn unmasked_pixels_untouched() {
        let src = RgbImage::from_fn(20, 12, |x, y| Rgb([(x * 11) as u8, (y * 17) as u8, (x * y) as u8]));
        let mask = Mask::from_fn(20, 12, |x, y| (5..9).contains(&x) && (3..8).contains(&y));
        let out = LocalInpainter::default().inpaint(&src, &mask).unwrap();
        for (x, y, p) in src.enumerate_pixels() {
            if !mask.get(x as i64, y as i64) {
                assert_eq!(out.get_pixel(x, y), p);
            }
        }
        assert!(LocalInpainter::default().inpaint(&src, &Mask::new(3, 3)).is_err());
        assert_eq!(LocalInpainter::default().inpaint(&src, &Mask::new(20, 12)).unwrap(), src);
    }

    #[test]
    fn falls_back_when_backend_is_down() {
        let src = RgbImage::from_pixel(6, 6, Rgb([40, 40, 40]));
        let mask = Mask::from_fn(6, 6, |x, y| x == 3 && y < 3);
        let f = FallbackInpainter::new(Some(Box::new(Down)));
        let out = f.run(&src, &mask).unwrap();
        assert!(out.fell_back);
        assert_eq!(out.backend, "local");
        assert_eq!(out.image, src);
    }
}
