//! HTTP inpainting backend.
//!
//! The request body is an RGBA PNG of the frame whose alpha is 0 on the
//! pixels to fill; the backend answers with a PNG of the same size.

use std::io::Cursor;
use std::time::Duration;

use image::{ImageFormat, Rgba, RgbaImage, RgbImage};
use surgq_core::geometry::Mask;
use surgq_core::quiz::{InpaintError, Inpainter};

pub struct RemoteInpainter {
    pub url: String,
    pub timeout: Duration,
}

impl RemoteInpainter {
    pub fn new(url: impl Into<String>) -> RemoteInpainter {
        RemoteInpainter {
            url: url.into(),
            timeout: Duration::from_secs(30),
        }
    }
}

fn encode_request(image: &RgbImage, mask: &Mask) -> Vec<u8> {
    let rgba = RgbaImage::from_fn(image.width(), image.height(), |x, y| {
        let p = image.get_pixel(x, y);
        let a = if mask.get(i64::from(x), i64::from(y)) { 0 } else { 255 };
        Rgba([p[0], p[1], p[2], a])
    });
    let mut out = Vec::new();
    rgba.write_to(&mut Cursor::new(&mut out), ImageFormat::Png)
        .expect("encoding to memory succeeds");
    out
}

impl Inpainter for RemoteInpainter {
    fn name(&self) -> &str {
        "remote"
    }

    fn inpaint(&self, image: &RgbImage, mask: &Mask) -> Result<RgbImage, InpaintError> {
        if (mask.width, mask.height) != (image.width() as usize, image.height() as usize) {
            return Err(InpaintError::InvalidMask("mask and image sizes differ".into()));
        }
        let down = |m: String| InpaintError::BackendUnavailable(m);
        // Built per call: the blocking client must not live on an async thread.
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| down(e.to_string()))?;
        let resp = client
            .post(&self.url)
            .header("content-type", "image/png")
            .body(encode_request(image, mask))
            .send()
            .map_err(|e| down(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(down(format!("backend answered {}", resp.status())));
        }
        let bytes = resp.bytes().map_err(|e| down(e.to_string()))?;
        let filled = image::load_from_memory(&bytes)
            .map_err(|e| down(format!("bad image from backend: {e}")))?
            .to_rgb8();
        if filled.dimensions() != image.dimensions() {
            return Err(down("backend returned a different size".into()));
        }
        let mut out = image.clone();
        for (x, y, p) in out.enumerate_pixels_mut() {
            if mask.get(i64::from(x), i64::from(y)) {
                *p = *filled.get_pixel(x, y);
            }
        }
        Ok(out)
    }
}
