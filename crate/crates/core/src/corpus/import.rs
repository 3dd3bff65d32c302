//! Importing annotated datasets laid out like CholecSeg8k.
//!
//! Every file under the source directory ending in the mapping's mask
//! suffix is one frame. Its video id is the first directory below the
//! source root, its frame index the first number in the file name, and
//! its still (when present) the file with the mask suffix replaced by the
//! image suffix.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use log::warn;
use serde::Deserialize;
use walkdir::WalkDir;

use super::{CorpusError, NewFrame, Project, Result};
use crate::exec::Exec;
use crate::scene::{label_components, ClassId, ClassMap, FrameRef};

pub const DEFAULT_CHOLECSEG_MAPPING: &str = include_str!("../../config/cholecseg8k.toml");

const BATCH: usize = 64;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMapping {
    name: String,
    mask_suffix: String,
    #[serde(default = "default_image_suffix")]
    image_suffix: String,
    fps: u32,
    classes: BTreeMap<String, toml::Value>,
}

fn default_image_suffix() -> String {
    ".png".into()
}

/// Source pixel value to class table plus file naming rules.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMapping {
    pub name: String,
    pub mask_suffix: String,
    pub image_suffix: String,
    pub fps: u32,
    table: HashMap<[u8; 3], ClassId>,
}

fn parse_key(key: &str) -> Option<[u8; 3]> {
    if let Some(hex) = key.strip_prefix('#') {
        if hex.len() != 6 || !hex.is_ascii() {
            return None;
        }
        let c = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).ok();
        return Some([c(0)?, c(2)?, c(4)?]);
    }
    let v: u8 = key.trim().parse().ok()?;
    Some([v, v, v])
}

fn key_name(rgb: [u8; 3]) -> String {
    if rgb[0] == rgb[1] && rgb[1] == rgb[2] {
        rgb[0].to_string()
    } else {
        format!("#{:02x}{:02x}{:02x}", rgb[0], rgb[1], rgb[2])
    }
}

impl ClassMapping {
    pub fn from_toml(text: &str) -> Result<ClassMapping> {
        let bad = |m: String| CorpusError::InvalidMapping(m);
        let raw: RawMapping = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        if raw.mask_suffix.is_empty() || raw.fps == 0 {
            return Err(bad("mask_suffix must be non-empty and fps positive".into()));
        }
        if raw.image_suffix == raw.mask_suffix {
            return Err(bad("image_suffix must differ from mask_suffix".into()));
        }
        let mut table = HashMap::new();
        for (k, v) in &raw.classes {
            let key = parse_key(k).ok_or_else(|| bad(format!("bad source value {k:?}")))?;
            let class = match v {
                toml::Value::String(s) => ClassId::from_name(s),
                toml::Value::Integer(i) => u8::try_from(*i).ok().and_then(ClassId::new),
                _ => None,
            }
            .ok_or_else(|| bad(format!("bad class for {k:?}: {v}")))?;
            if table.insert(key, class).is_some() {
                return Err(bad(format!("source value {k:?} mapped twice")));
            }
        }
        Ok(ClassMapping {
            name: raw.name,
            mask_suffix: raw.mask_suffix,
            image_suffix: raw.image_suffix,
            fps: raw.fps,
            table,
        })
    }

    pub fn load(path: &Path) -> Result<ClassMapping> {
        let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        ClassMapping::from_toml(&text)
    }

    pub fn cholecseg8k() -> ClassMapping {
        ClassMapping::from_toml(DEFAULT_CHOLECSEG_MAPPING).expect("shipped mapping parses")
    }

    pub fn lookup(&self, rgb: [u8; 3]) -> Option<ClassId> {
        self.table.get(&rgb).copied()
    }

    /// Maps a decoded mask; unmapped values become Background and are
    /// tallied in `unmapped` by their key spelling.
    pub fn apply(&self, mask: &image::RgbImage, unmapped: &mut BTreeMap<String, u64>) -> Result<ClassMap> {
        let mut labels = Vec::with_capacity(mask.len() / 3);
        for p in mask.pixels() {
            labels.push(match self.lookup(p.0) {
                Some(c) => c.get(),
                None => {
                    *unmapped.entry(key_name(p.0)).or_default() += 1;
                    ClassId::BACKGROUND.get()
                }
            });
        }
        Ok(ClassMap::from_raw(mask.width(), mask.height(), labels)?)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ImportOptions {
    /// Fail on source values missing from the mapping.
    pub strict: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImportReport {
    pub frames: usize,
    /// Unmapped source values and how many pixels carried each.
    pub unmapped: BTreeMap<String, u64>,
}

impl ImportReport {
    pub fn unmapped_pixels(&self) -> u64 {
        self.unmapped.values().sum()
    }
}

fn sanitize(s: &str) -> String {
    let out: String = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    if out.is_empty() {
        "video".into()
    } else {
        out
    }
}

fn first_number(s: &str) -> Option<u64> {
    let start = s.find(|c: char| c.is_ascii_digit())?;
    let digits: String = s[start..].chars().take_while(|c| c.is_ascii_digit()).collect();
    digits.parse().ok()
}

struct SourceFrame {
    frame: FrameRef,
    mask: PathBuf,
    image: Option<PathBuf>,
}

fn discover(src: &Path, mapping: &ClassMapping) -> Result<Vec<SourceFrame>> {
    let root_name = src
        .canonicalize()
        .ok()
        .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_default();
    let mut out = Vec::new();
    for entry in WalkDir::new(src).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(src).to_path_buf();
            CorpusError::io(&path, e.into())
        })?;
        let name = entry.file_name().to_string_lossy();
        let Some(stem) = name.strip_suffix(&mapping.mask_suffix) else {
            continue;
        };
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(src).unwrap_or(entry.path());
        let video = match rel.components().count() {
            0 | 1 => sanitize(&root_name),
            _ => sanitize(&rel.components().next().unwrap().as_os_str().to_string_lossy()),
        };
        let index = first_number(stem).ok_or_else(|| CorpusError::InvalidAsset {
            path: entry.path().to_path_buf(),
            reason: "no frame number in file name".into(),
        })?;
        let image = entry.path().with_file_name(format!("{stem}{}", mapping.image_suffix));
        out.push(SourceFrame {
            frame: FrameRef::new(video, index, index * 1000 / u64::from(mapping.fps)),
            mask: entry.path().to_path_buf(),
            image: image.is_file().then_some(image),
        });
    }
    out.sort_by(|a, b| a.frame.cmp(&b.frame));
    if let Some(w) = out.windows(2).find(|w| w[0].frame == w[1].frame) {
        return Err(CorpusError::DuplicateFrame(w[0].frame.key()));
    }
    Ok(out)
}

fn load_frame(
    src: &SourceFrame,
    mapping: &ClassMapping,
    opts: ImportOptions,
) -> Result<(NewFrame, BTreeMap<String, u64>)> {
    let mask = image::open(&src.mask)?.to_rgb8();
    let mut unmapped = BTreeMap::new();
    let class_map = mapping.apply(&mask, &mut unmapped)?;
    if opts.strict {
        if let Some(value) = unmapped.keys().next() {
            return Err(CorpusError::UnknownSourceClass {
                value: value.clone(),
                file: src.mask.clone(),
            });
        }
    }
    let image = match &src.image {
        Some(p) => {
            let img = image::open(p)?.to_rgb8();
            if img.dimensions() != class_map.dims() {
                return Err(CorpusError::InvalidAsset {
                    path: p.clone(),
                    reason: "image and mask sizes differ".into(),
                });
            }
            Some(img)
        }
        None => None,
    };
    let section_mask = label_components(&class_map)?;
    Ok((
        NewFrame {
            frame: src.frame.clone(),
            image,
            class_map,
            section_mask,
            truth: None,
        },
        unmapped,
    ))
}

/// Imports every annotated frame under `src`, fuses the new frames and
/// recomputes features for the whole project, then saves the manifest.
/// Sections are the connected components of the mapped annotation.
pub fn import_cholecseg(
    project: &mut Project,
    src: &Path,
    mapping: &ClassMapping,
    opts: ImportOptions,
    exec: Exec,
) -> Result<ImportReport> {
    let sources = discover(src, mapping)?;
    let mut report = ImportReport::default();
    for batch in sources.chunks(BATCH) {
        let loaded = exec.map(batch, |s| load_frame(s, mapping, opts));
        let mut frames = Vec::with_capacity(batch.len());
        for r in loaded {
            let (frame, unmapped) = r?;
            for (k, n) in unmapped {
                *report.unmapped.entry(k).or_default() += n;
            }
            frames.push(frame);
        }
        report.frames += frames.len();
        project.add_frames(exec, frames)?;
    }
    if report.unmapped_pixels() > 0 {
        warn!(
            "{} pixels with unmapped source values became Background: {:?}",
            report.unmapped_pixels(),
            report.unmapped
        );
    }
    project.fuse_all(exec)?;
    project.recompute_features(exec)?;
    project.save()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    fn write_mask(path: &Path, f: impl Fn(u32, u32) -> u8) {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        RgbImage::from_fn(40, 20, |x, y| {
            let v = f(x, y);
            Rgb([v, v, v])
        })
        .save(path)
        .unwrap();
    }

    #[test]
    fn default_table() {
        let m = ClassMapping::cholecseg8k();
        assert_eq!(m.lookup([31, 31, 31]), Some(ClassId::TOOL));
        assert_eq!(m.lookup([32, 32, 32]), Some(ClassId::TOOL));
        assert_eq!(m.lookup([50, 50, 50]), Some(ClassId::BACKGROUND));
        assert_eq!(m.lookup([22, 22, 22]), Some(ClassId::GALLBLADDER));
        assert_eq!(m.lookup([99, 99, 99]), None);
        assert_eq!(m.fps, 25);
    }

    #[test]
    fn mapping_config_errors() {
        let base = "name='x'\nmask_suffix='_m.png'\nfps=25\n[classes]\n";
        assert!(ClassMapping::from_toml(&format!("{base}\"#ff0000\" = 2\n")).is_ok());
        for bad in ["\"300\" = 2", "\"#ff00\" = 2", "\"1\" = \"Spleen\"", "\"1\" = 9"] {
            assert!(
                matches!(ClassMapping::from_toml(&format!("{base}{bad}\n")), Err(CorpusError::InvalidMapping(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn imports_and_maps() {
        let src = tempfile::tempdir().unwrap();
        let clip = src.path().join("video01").join("video01_00080");
        // grasper on the left, background elsewhere, one unknown column
        write_mask(&clip.join("frame_80_endo_watershed_mask.png"), |x, _| match x {
            0..10 => 31,
            39 => 99,
            _ => 50,
        });
        RgbImage::from_pixel(40, 20, Rgb([9, 9, 9]))
            .save(clip.join("frame_80_endo.png"))
            .unwrap();
        write_mask(&clip.join("frame_81_endo_watershed_mask.png"), |_, y| if y < 10 { 21 } else { 22 });

        let dir = tempfile::tempdir().unwrap();
        let mut p = Project::init(dir.path(), "imp").unwrap();
        let mapping = ClassMapping::cholecseg8k();
        let strict = ImportOptions { strict: true };
        assert!(matches!(
            import_cholecseg(&mut p, src.path(), &mapping, strict, Exec::default()),
            Err(CorpusError::UnknownSourceClass { ref value, .. }) if value == "99"
        ));

        let mut p = Project::load(dir.path()).unwrap();
        let report = import_cholecseg(&mut p, src.path(), &mapping, ImportOptions::default(), Exec::default()).unwrap();
        assert_eq!(report.frames, 2);
        assert_eq!(report.unmapped, BTreeMap::from([("99".to_string(), 20)]));

        let p = Project::load(dir.path()).unwrap();
        let f0 = &p.frames()[0];
        assert_eq!(f0.frame, FrameRef::new("video01", 80, 3200));
        assert!(f0.image.is_some());
        let (map, _) = p.read_raw(&f0.frame).unwrap();
        assert_eq!(map.get(0, 0), ClassId::TOOL);
        assert_eq!(map.get(20, 5), ClassId::BACKGROUND);
        assert_eq!(map.get(39, 5), ClassId::BACKGROUND);
        let f1 = p.read_fused(&p.frames()[1].frame).unwrap();
        assert_eq!(f1.sections().len(), 2);
        assert_eq!(f1.class_map().get(0, 19), ClassId::GALLBLADDER);
        assert!(p.frames()[1].image.is_none());
        assert_eq!(p.feature_series().unwrap()[0].len(), 2);
    }
}
