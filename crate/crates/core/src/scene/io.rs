//! PNG encodings: class maps as 8-bit gray, section masks as 16-bit gray.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, ImageFormat, Luma, Rgb, RgbImage};

use super::{ClassMap, Result, SceneError, SectionMask, NUM_CLASSES};

/// Overlay colors per class id. Presentation only.
pub const PALETTE: [[u8; 3]; NUM_CLASSES] = [
    [0, 0, 0],       // Background
    [210, 140, 140], // Abdominal Wall
    [255, 114, 114], // Liver
    [231, 70, 156],  // Gastrointestinal Tract
    [186, 183, 75],  // Fat
    [170, 255, 0],   // Tool
    [255, 85, 0],    // Blood
    [255, 255, 255], // Connected Tissue
    [255, 160, 165], // Gallbladder
];

fn encode(img: DynamicImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn encode_class_map_png(map: &ClassMap) -> Result<Vec<u8>> {
    let img = GrayImage::from_raw(map.width(), map.height(), map.as_raw().to_vec())
        .expect("buffer length checked at construction");
    encode(DynamicImage::ImageLuma8(img))
}

fn class_map_from_image(img: DynamicImage) -> Result<ClassMap> {
    match img {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            ClassMap::from_raw(w, h, g.into_raw())
        }
        other => Err(SceneError::UnsupportedImage(format!(
            "class maps must be 8-bit single-channel, got {:?}",
            other.color()
        ))),
    }
}

pub fn decode_class_map_png(bytes: &[u8]) -> Result<ClassMap> {
    class_map_from_image(image::load_from_memory_with_format(bytes, ImageFormat::Png)?)
}

pub fn read_class_map(path: impl AsRef<Path>) -> Result<ClassMap> {
    class_map_from_image(image::open(path)?)
}

pub fn write_class_map(path: impl AsRef<Path>, map: &ClassMap) -> Result<()> {
    std::fs::write(path, encode_class_map_png(map)?)?;
    Ok(())
}

pub fn encode_section_mask_png(mask: &SectionMask) -> Result<Vec<u8>> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(mask.width(), mask.height(), mask.as_raw().to_vec())
            .expect("buffer length checked at construction");
    encode(DynamicImage::ImageLuma16(img))
}

fn section_mask_from_image(img: DynamicImage) -> Result<SectionMask> {
    match img {
        DynamicImage::ImageLuma16(g) => {
            let (w, h) = g.dimensions();
            SectionMask::new(w, h, g.into_raw())
        }
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            SectionMask::new(w, h, g.into_raw().into_iter().map(u16::from).collect())
        }
        other => Err(SceneError::UnsupportedImage(format!(
            "section masks must be single-channel, got {:?}",
            other.color()
        ))),
    }
}

pub fn decode_section_mask_png(bytes: &[u8]) -> Result<SectionMask> {
    section_mask_from_image(image::load_from_memory_with_format(bytes, ImageFormat::Png)?)
}

pub fn read_section_mask(path: impl AsRef<Path>) -> Result<SectionMask> {
    section_mask_from_image(image::open(path)?)
}

pub fn write_section_mask(path: impl AsRef<Path>, mask: &SectionMask) -> Result<()> {
    std::fs::write(path, encode_section_mask_png(mask)?)?;
    Ok(())
}

/// Paints a class map with [`PALETTE`].
pub fn render_class_map(map: &ClassMap) -> RgbImage {
    RgbImage::from_fn(map.width(), map.height(), |x, y| {
        Rgb(PALETTE[map.get(x, y).index()])
    })
}
