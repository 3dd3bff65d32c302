//! Labeled scene value types shared by every other module.
//!
//! A [`ClassMap`] holds one of nine categories per pixel, a [`SectionMask`]
//! partitions the frame into unlabeled regions, and a [`FusedScene`] pairs the
//! two so that every section is class-pure.

mod io;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{
    decode_class_map_png, decode_section_mask_png, encode_class_map_png,
    encode_section_mask_png, read_class_map, read_section_mask, render_class_map,
    write_class_map, write_section_mask, PALETTE,
};

pub const NUM_CLASSES: usize = 9;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error("invalid class id {value} at ({x}, {y})")]
    InvalidClassId { value: u32, x: u32, y: u32 },
    #[error("section ids are not contiguous: id {missing} never occurs")]
    NonContiguousSectionIds { missing: u32 },
    #[error("too many sections ({0}); at most 65535 are supported")]
    TooManySections(usize),
    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: u32, height: u32 },
    #[error("grid {grid_w}x{grid_h} is invalid for a {width}x{height} map")]
    InvalidGrid {
        grid_w: u32,
        grid_h: u32,
        width: u32,
        height: u32,
    },
    #[error("buffer length {found} does not match {width}x{height}")]
    LengthMismatch { width: u32, height: u32, found: usize },
    #[error("section {section} mixes classes {a} and {b}")]
    ImpureSection { section: u32, a: ClassId, b: ClassId },
    #[error("adjacent sections {a} and {b} share class {class}")]
    UnmergedSections { a: u32, b: u32, class: ClassId },
    #[error("unsupported image layout: {0}")]
    UnsupportedImage(String),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SceneError> = std::result::Result<T, E>;

/// One of the nine scene categories, in fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ClassId(u8);

impl ClassId {
    pub const BACKGROUND: ClassId = ClassId(0);
    pub const ABDOMINAL_WALL: ClassId = ClassId(1);
    pub const LIVER: ClassId = ClassId(2);
    pub const GI_TRACT: ClassId = ClassId(3);
    pub const FAT: ClassId = ClassId(4);
    pub const TOOL: ClassId = ClassId(5);
    pub const BLOOD: ClassId = ClassId(6);
    pub const CONNECTED_TISSUE: ClassId = ClassId(7);
    pub const GALLBLADDER: ClassId = ClassId(8);

    pub const ALL: [ClassId; NUM_CLASSES] = [
        ClassId(0),
        ClassId(1),
        ClassId(2),
        ClassId(3),
        ClassId(4),
        ClassId(5),
        ClassId(6),
        ClassId(7),
        ClassId(8),
    ];

    pub fn new(id: u8) -> Option<ClassId> {
        (usize::from(id) < NUM_CLASSES).then_some(ClassId(id))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        usize::from(self.0)
    }

    pub fn name(self) -> &'static str {
        CLASS_NAMES[self.index()]
    }

    /// Case-insensitive lookup by display name or a few common aliases.
    pub fn from_name(name: &str) -> Option<ClassId> {
        let key: String = name
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        let id = match key.as_str() {
            "background" | "bg" => 0,
            "abdominalwall" => 1,
            "liver" => 2,
            "gastrointestinaltract" | "gitract" | "gi" => 3,
            "fat" => 4,
            "tool" | "tools" | "grasper" | "instrument" => 5,
            "blood" => 6,
            "connectedtissue" | "connectivetissue" => 7,
            "gallbladder" => 8,
            _ => return None,
        };
        Some(ClassId(id))
    }
}

const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "Background",
    "Abdominal Wall",
    "Liver",
    "Gastrointestinal Tract",
    "Fat",
    "Tool",
    "Blood",
    "Connected Tissue",
    "Gallbladder",
];

impl TryFrom<u8> for ClassId {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        ClassId::new(v).ok_or_else(|| format!("class id {v} is outside [0, 8]"))
    }
}

impl From<ClassId> for u8 {
    fn from(c: ClassId) -> u8 {
        c.0
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.0, self.name())
    }
}

fn check_dims(width: u32, height: u32, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(SceneError::InvalidDimensions { width, height });
    }
    if width as usize * height as usize != len {
        return Err(SceneError::LengthMismatch {
            width,
            height,
            found: len,
        });
    }
    Ok(())
}

/// Per-pixel category labels, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClassMap {
    width: u32,
    height: u32,
    labels: Vec<u8>,
}

impl ClassMap {
    pub fn from_raw(width: u32, height: u32, labels: Vec<u8>) -> Result<ClassMap> {
        check_dims(width, height, labels.len())?;
        if let Some(pos) = labels.iter().position(|&v| usize::from(v) >= NUM_CLASSES) {
            return Err(SceneError::InvalidClassId {
                value: u32::from(labels[pos]),
                x: (pos % width as usize) as u32,
                y: (pos / width as usize) as u32,
            });
        }
        Ok(ClassMap {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: u32, height: u32, class: ClassId) -> Result<ClassMap> {
        let n = width as usize * height as usize;
        check_dims(width, height, n)?;
        Ok(ClassMap {
            width,
            height,
            labels: vec![class.0; n],
        })
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> ClassId,
    ) -> Result<ClassMap> {
        let mut labels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                labels.push(f(x, y).0);
            }
        }
        check_dims(width, height, labels.len())?;
        Ok(ClassMap {
            width,
            height,
            labels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, x: u32, y: u32) -> ClassId {
        ClassId(self.labels[y as usize * self.width as usize + x as usize])
    }

    pub fn at(&self, idx: usize) -> ClassId {
        ClassId(self.labels[idx])
    }

    pub fn set(&mut self, x: u32, y: u32, class: ClassId) {
        self.labels[y as usize * self.width as usize + x as usize] = class.0;
    }

    /// Raw label bytes; every value is a valid class id.
    pub fn as_raw(&self) -> &[u8] {
        &self.labels
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.labels.iter().map(|&v| ClassId(v))
    }

    /// Center-sampled resize to a `grid_w` x `grid_h` grid.
    ///
    /// Output cell `(i, j)` takes the label of source pixel
    /// `(floor((i + 0.5) * width / grid_w), floor((j + 0.5) * height / grid_h))`.
    pub fn downsample(&self, grid_w: u32, grid_h: u32) -> Result<ClassMap> {
        if grid_w == 0 || grid_h == 0 || grid_w > self.width || grid_h > self.height {
            return Err(SceneError::InvalidGrid {
                grid_w,
                grid_h,
                width: self.width,
                height: self.height,
            });
        }
        let (w, h) = (u64::from(self.width), u64::from(self.height));
        let xs: Vec<usize> = (0..u64::from(grid_w))
            .map(|i| ((2 * i + 1) * w / (2 * u64::from(grid_w))) as usize)
            .collect();
        let mut labels = Vec::with_capacity(grid_w as usize * grid_h as usize);
        for j in 0..u64::from(grid_h) {
            let sy = ((2 * j + 1) * h / (2 * u64::from(grid_h))) as usize;
            let row = &self.labels[sy * self.width as usize..(sy + 1) * self.width as usize];
            labels.extend(xs.iter().map(|&sx| row[sx]));
        }
        Ok(ClassMap {
            width: grid_w,
            height: grid_h,
            labels,
        })
    }

    pub fn class_histogram(&self) -> [u64; NUM_CLASSES] {
        let mut counts = [0u64; NUM_CLASSES];
        for &v in &self.labels {
            counts[usize::from(v)] += 1;
        }
        counts
    }
}

/// Per-pixel section ids in `[0, N)`, every id present at least once.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SectionMask {
    width: u32,
    height: u32,
    ids: Vec<u16>,
    n_sections: u32,
}

impl SectionMask {
    /// Wraps an id grid, requiring ids to be contiguous from zero.
    pub fn new(width: u32, height: u32, ids: Vec<u16>) -> Result<SectionMask> {
        check_dims(width, height, ids.len())?;
        let n = ids.iter().copied().max().map_or(0, |m| u32::from(m) + 1);
        let mut seen = vec![false; n as usize];
        for &id in &ids {
            seen[usize::from(id)] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(SceneError::NonContiguousSectionIds {
                missing: missing as u32,
            });
        }
        Ok(SectionMask {
            width,
            height,
            ids,
            n_sections: n,
        })
    }

    /// Renumbers arbitrary ids to `[0, N)` in row-major first-occurrence order.
    pub fn renumbered<T>(width: u32, height: u32, raw: &[T]) -> Result<SectionMask>
    where
        T: Copy + Eq + std::hash::Hash,
    {
        check_dims(width, height, raw.len())?;
        let mut map = std::collections::HashMap::new();
        let mut ids = Vec::with_capacity(raw.len());
        for &v in raw {
            let next = map.len();
            let id = *map.entry(v).or_insert(next);
            if id > usize::from(u16::MAX - 1) {
                return Err(SceneError::TooManySections(id + 1));
            }
            ids.push(id as u16);
        }
        Ok(SectionMask {
            width,
            height,
            ids,
            n_sections: map.len() as u32,
        })
    }

    /// Single section covering the whole frame.
    pub fn single(width: u32, height: u32) -> Result<SectionMask> {
        SectionMask::new(width, height, vec![0; width as usize * height as usize])
    }

    pub(crate) fn from_parts_unchecked(
        width: u32,
        height: u32,
        ids: Vec<u16>,
        n_sections: u32,
    ) -> SectionMask {
        debug_assert_eq!(ids.len(), width as usize * height as usize);
        SectionMask {
            width,
            height,
            ids,
            n_sections,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn n_sections(&self) -> u32 {
        self.n_sections
    }

    pub fn get(&self, x: u32, y: u32) -> u32 {
        u32::from(self.ids[y as usize * self.width as usize + x as usize])
    }

    pub fn as_raw(&self) -> &[u16] {
        &self.ids
    }

    /// Pixel count per section.
    pub fn section_sizes(&self) -> Vec<u64> {
        let mut sizes = vec![0u64; self.n_sections as usize];
        for &id in &self.ids {
            sizes[usize::from(id)] += 1;
        }
        sizes
    }
}

/// Checks that a class map and a section mask can be used together.
pub fn validate_pair(class_map: &ClassMap, section_mask: &SectionMask) -> Result<()> {
    if class_map.dims() != section_mask.dims() {
        return Err(SceneError::DimensionMismatch {
            expected: class_map.dims(),
            found: section_mask.dims(),
        });
    }
    Ok(())
}

/// 4-connected components of equal labels, numbered in row-major
/// first-occurrence order.
pub fn label_components(map: &ClassMap) -> Result<SectionMask> {
    let (w, h) = (map.width as usize, map.height as usize);
    let mut ids = vec![u16::MAX; w * h];
    let mut next: usize = 0;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if ids[start] != u16::MAX {
            continue;
        }
        if next >= usize::from(u16::MAX) {
            return Err(SceneError::TooManySections(next + 1));
        }
        let label = map.labels[start];
        let id = next as u16;
        next += 1;
        ids[start] = id;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (x, y) = (p % w, p / w);
            let mut visit = |q: usize| {
                if ids[q] == u16::MAX && map.labels[q] == label {
                    ids[q] = id;
                    stack.push(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
    }
    Ok(SectionMask::from_parts_unchecked(
        map.width,
        map.height,
        ids,
        next as u32,
    ))
}

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    fn point(x: u32, y: u32) -> BBox {
        BBox {
            x0: x,
            y0: y,
            x1: x,
            y1: y,
        }
    }

    fn include(&mut self, x: u32, y: u32) {
        self.x0 = self.x0.min(x);
        self.y0 = self.y0.min(y);
        self.x1 = self.x1.max(x);
        self.y1 = self.y1.max(y);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionRecord {
    pub id: u32,
    pub class: ClassId,
    pub pixel_count: u64,
    pub bbox: BBox,
}

/// A class map paired with class-pure, fully merged sections.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedScene {
    class_map: ClassMap,
    section_mask: SectionMask,
    sections: Vec<SectionRecord>,
}

impl FusedScene {
    /// Builds the section table, checking purity and that no two 4-adjacent
    /// sections share a class.
    pub fn new(class_map: ClassMap, section_mask: SectionMask) -> Result<FusedScene> {
        validate_pair(&class_map, &section_mask)?;
        let n = section_mask.n_sections as usize;
        let mut table: Vec<Option<SectionRecord>> = vec![None; n];
        let w = class_map.width as usize;
        for (i, (&s, &c)) in section_mask.ids.iter().zip(&class_map.labels).enumerate() {
            let (x, y) = ((i % w) as u32, (i / w) as u32);
            let class = ClassId(c);
            match &mut table[usize::from(s)] {
                slot @ None => {
                    *slot = Some(SectionRecord {
                        id: u32::from(s),
                        class,
                        pixel_count: 1,
                        bbox: BBox::point(x, y),
                    })
                }
                Some(rec) => {
                    if rec.class != class {
                        return Err(SceneError::ImpureSection {
                            section: rec.id,
                            a: rec.class,
                            b: class,
                        });
                    }
                    rec.pixel_count += 1;
                    rec.bbox.include(x, y);
                }
            }
        }
        let sections: Vec<SectionRecord> = table.into_iter().map(|r| r.expect("contiguous ids")).collect();
        if let Some((a, b)) = find_mergeable_pair(&section_mask, |s| sections[s as usize].class) {
            return Err(SceneError::UnmergedSections {
                a,
                b,
                class: sections[a as usize].class,
            });
        }
        Ok(FusedScene {
            class_map,
            section_mask,
            sections,
        })
    }

    /// Scene whose sections are the 4-connected components of `class_map`.
    pub fn from_class_map(class_map: ClassMap) -> Result<FusedScene> {
        let mask = label_components(&class_map)?;
        FusedScene::new(class_map, mask)
    }

    pub(crate) fn from_parts_unchecked(
        class_map: ClassMap,
        section_mask: SectionMask,
        sections: Vec<SectionRecord>,
    ) -> FusedScene {
        FusedScene {
            class_map,
            section_mask,
            sections,
        }
    }

    pub fn class_map(&self) -> &ClassMap {
        &self.class_map
    }

    pub fn section_mask(&self) -> &SectionMask {
        &self.section_mask
    }

    pub fn sections(&self) -> &[SectionRecord] {
        &self.sections
    }

    pub fn section(&self, id: u32) -> Option<&SectionRecord> {
        self.sections.get(id as usize)
    }

    pub fn width(&self) -> u32 {
        self.class_map.width
    }

    pub fn height(&self) -> u32 {
        self.class_map.height
    }

    pub fn into_parts(self) -> (ClassMap, SectionMask) {
        (self.class_map, self.section_mask)
    }
}

/// First pair of distinct 4-adjacent sections with equal class, if any.
pub(crate) fn find_mergeable_pair(
    mask: &SectionMask,
    class_of: impl Fn(u32) -> ClassId,
) -> Option<(u32, u32)> {
    let w = mask.width as usize;
    for (i, &s) in mask.ids.iter().enumerate() {
        let s = u32::from(s);
        let right = (i % w + 1 < w).then(|| mask.ids[i + 1]);
        let down = mask.ids.get(i + w).copied();
        for t in [right, down].into_iter().flatten() {
            let t = u32::from(t);
            if t != s && class_of(s) == class_of(t) {
                return Some((s.min(t), s.max(t)));
            }
        }
    }
    None
}

/// Identifies one frame of one video.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameRef {
    pub video_id: String,
    pub frame_index: u64,
    pub timestamp_ms: u64,
}

impl FrameRef {
    pub fn new(video_id: impl Into<String>, frame_index: u64, timestamp_ms: u64) -> FrameRef {
        FrameRef {
            video_id: video_id.into(),
            frame_index,
            timestamp_ms,
        }
    }

    /// Stable identifier used for file names and URLs.
    pub fn key(&self) -> String {
        format!("{}-{:06}", self.video_id, self.frame_index)
    }
}

/// Checks that frame indices and timestamps increase together within each video.
pub fn check_frame_order(frames: &[FrameRef]) -> bool {
    let mut sorted: Vec<&FrameRef> = frames.iter().collect();
    sorted.sort();
    sorted.windows(2).all(|p| {
        p[0].video_id != p[1].video_id
            || (p[0].frame_index < p[1].frame_index && p[0].timestamp_ms < p[1].timestamp_ms)
    })
}
