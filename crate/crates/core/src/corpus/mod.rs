//! Project directories: manifest, frame assets, features, index and quizzes.
//!
//! ```text
//! manifest.json      schema "surgproj/1"
//! frames/            source stills (PNG) and 320 px thumbnails (JPEG)
//! classmaps/         raw, fused and truth class maps
//! sections/          raw and fused section masks
//! features.sfv       per-frame feature rows, in manifest order
//! index.sfi          search index
//! quizzes/           one JSON document per quiz
//! assets/            content-addressed uploads
//! ```
//!
//! Every file write goes through a temp file and a rename, and manifest
//! writes hold the project lock.

mod import;
mod lock;
mod synthetic;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use image::codecs::jpeg::JpegEncoder;
use image::{imageops, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exec::Exec;
use crate::fusion::{fuse, FusionError};
use crate::keyframes::{self, FeatureSeries, Keyframe, KeyframeConfig, KeyframeError};
use crate::quiz::{self, FrameInfo, Quiz, QuizContext, ValidationErrors};
use crate::scene::{self, validate_pair, ClassMap, FrameRef, FusedScene, SceneError, SectionMask};
use crate::search::{self, FrameIndex, SearchError};

pub use import::{
    import_cholecseg, ClassMapping, ImportOptions, ImportReport, DEFAULT_CHOLECSEG_MAPPING,
};
pub use lock::{ProjectLock, LOCK_FILE};
pub use synthetic::{
    composition_features, generate_synthetic, generate_synthetic_with, SyntheticCorpus,
    SyntheticFrame, SyntheticSpec, FEATURE_DIM,
};

pub const PROJECT_SCHEMA: &str = "surgproj/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const THUMB_WIDTH: u32 = 320;
const DIRS: [&str; 5] = ["frames", "classmaps", "sections", "quizzes", "assets"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),
    #[error("missing asset {0}")]
    MissingAsset(PathBuf),
    #[error("invalid asset {path}: {reason}")]
    InvalidAsset { path: PathBuf, reason: String },
    #[error("a project already exists at {0}")]
    AlreadyExists(PathBuf),
    #[error("frame {0} is already in the project")]
    DuplicateFrame(String),
    #[error("unknown frame {0}")]
    UnknownFrame(String),
    #[error("frame {0} has not been fused")]
    NotFused(String),
    #[error("project has no features")]
    NoFeatures,
    #[error("project has no search index")]
    NoIndex,
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("invalid class mapping: {0}")]
    InvalidMapping(String),
    #[error("{file}: source class {value} has no mapping")]
    UnknownSourceClass { value: String, file: PathBuf },
    #[error("invalid quiz: {0}")]
    InvalidQuiz(ValidationErrors),
    #[error("unknown quiz {0}")]
    QuizNotFound(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Keyframe(#[from] KeyframeError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> CorpusError {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusedEntry {
    pub class_map: String,
    pub section_mask: String,
    pub n_sections: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub frame: FrameRef,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thumb: Option<String>,
    pub class_map: String,
    pub section_mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fused: Option<FusedEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_class_map: Option<String>,
}

impl FrameEntry {
    fn paths(&self) -> Vec<&str> {
        let mut v = vec![self.class_map.as_str(), self.section_mask.as_str()];
        v.extend(self.image.as_deref());
        v.extend(self.thumb.as_deref());
        v.extend(self.truth_class_map.as_deref());
        if let Some(f) = &self.fused {
            v.push(&f.class_map);
            v.push(&f.section_mask);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturesInfo {
    pub path: String,
    pub dim: usize,
    pub frames_revision: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexInfo {
    pub path: String,
    pub grid_w: u32,
    pub grid_h: u32,
    pub fingerprint: String,
    pub frames_revision: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub name: String,
    /// Bumped whenever the frame inventory or its fused maps change.
    pub frames_revision: u64,
    pub frames: Vec<FrameEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeaturesInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<IndexInfo>,
    #[serde(default)]
    pub quizzes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

impl Manifest {
    pub fn new(name: &str) -> Manifest {
        Manifest {
            schema: PROJECT_SCHEMA.into(),
            name: name.into(),
            frames_revision: 0,
            frames: Vec::new(),
            features: None,
            index: None,
            quizzes: Vec::new(),
            synthetic: None,
        }
    }

    /// Structural checks that need no file access.
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(CorpusError::CorruptManifest(m));
        if self.schema != PROJECT_SCHEMA {
            return bad(format!("schema {:?}, expected {PROJECT_SCHEMA:?}", self.schema));
        }
        for w in self.frames.windows(2) {
            if w[0].frame >= w[1].frame {
                return bad(format!("frames out of order at {}", w[1].frame.key()));
            }
        }
        let refs: Vec<FrameRef> = self.frames.iter().map(|f| f.frame.clone()).collect();
        if !scene::check_frame_order(&refs) {
            return bad("frame index and timestamp disagree in order".into());
        }
        for f in &self.frames {
            if f.width == 0 || f.height == 0 {
                return bad(format!("frame {} has zero size", f.frame.key()));
            }
            for p in f.paths() {
                check_rel(p)?;
            }
        }
        for q in &self.quizzes {
            if !quiz::is_valid_quiz_id(q) {
                return bad(format!("invalid quiz id {q:?}"));
            }
        }
        let mut ids = self.quizzes.clone();
        ids.sort();
        ids.dedup();
        if ids.len() != self.quizzes.len() {
            return bad("duplicate quiz id".into());
        }
        Ok(())
    }
}

fn check_rel(p: &str) -> Result<()> {
    let path = Path::new(p);
    if p.is_empty()
        || path.is_absolute()
        || path.components().any(|c| !matches!(c, std::path::Component::Normal(_)))
    {
        return Err(CorpusError::CorruptManifest(format!("path {p:?} escapes the project")));
    }
    Ok(())
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes `bytes` next to `path` and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = dir.join(format!(
        ".{name}.{}.{}.tmp",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    res.map_err(|e| CorpusError::io(path, e))
}

pub fn encode_thumbnail(image: &RgbImage) -> Result<Vec<u8>> {
    let w = THUMB_WIDTH.min(image.width());
    let h = ((u64::from(image.height()) * u64::from(w)) / u64::from(image.width())).max(1) as u32;
    let small = imageops::resize(image, w, h, imageops::FilterType::Triangle);
    let mut out = Vec::new();
    JpegEncoder::new_with_quality(&mut out, 85).encode_image(&small)?;
    Ok(out)
}

/// A frame to add to a project.
#[derive(Debug, Clone)]
pub struct NewFrame {
    pub frame: FrameRef,
    pub image: Option<RgbImage>,
    pub class_map: ClassMap,
    pub section_mask: SectionMask,
    pub truth: Option<ClassMap>,
}

#[derive(Debug, Clone)]
pub struct Project {
    root: PathBuf,
    manifest: Manifest,
}

impl Project {
    /// Creates the directory layout and an empty manifest.
    pub fn init(root: impl AsRef<Path>, name: &str) -> Result<Project> {
        let root = root.as_ref().to_path_buf();
        if root.join(MANIFEST_FILE).exists() {
            return Err(CorpusError::AlreadyExists(root));
        }
        for d in DIRS {
            let p = root.join(d);
            fs::create_dir_all(&p).map_err(|e| CorpusError::io(&p, e))?;
        }
        let mut p = Project {
            root,
            manifest: Manifest::new(name),
        };
        p.save()?;
        Ok(p)
    }

    /// Opens a project and validates it deeply: every referenced file must
    /// exist and parse, raw and fused pairs must agree in size, and the
    /// feature and index files must match the manifest.
    pub fn load(root: impl AsRef<Path>) -> Result<Project> {
        let p = Project::load_manifest_only(root)?;
        p.validate()?;
        Ok(p)
    }

    /// Opens a project checking only the manifest structure and that the
    /// referenced files exist.
    pub fn load_manifest_only(root: impl AsRef<Path>) -> Result<Project> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CorpusError::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| CorpusError::CorruptManifest(e.to_string()))?;
        manifest.check()?;
        let p = Project { root, manifest };
        for f in &p.manifest.frames {
            for rel in f.paths() {
                p.require(rel)?;
            }
        }
        if let Some(fi) = &p.manifest.features {
            check_rel(&fi.path)?;
            p.require(&fi.path)?;
        }
        if let Some(ii) = &p.manifest.index {
            check_rel(&ii.path)?;
            p.require(&ii.path)?;
        }
        for q in &p.manifest.quizzes {
            p.require(&quiz_rel(q))?;
        }
        Ok(p)
    }

    fn require(&self, rel: &str) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if !path.is_file() {
            return Err(CorpusError::MissingAsset(path));
        }
        Ok(path)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with(Exec::default())
    }

    pub fn validate_with(&self, exec: Exec) -> Result<()> {
        let checks = exec.map(&self.manifest.frames, |f| self.validate_frame(f));
        checks.into_iter().collect::<Result<Vec<_>>>()?;
        if let Some(fi) = &self.manifest.features {
            let (dim, data) = self.read_feature_rows()?;
            if dim != fi.dim || data.len() % dim != 0 {
                return Err(self.invalid(&fi.path, "feature file does not match the manifest"));
            }
        }
        if let Some(ii) = &self.manifest.index {
            let idx = search::read_index_file(&self.root.join(&ii.path))
                .map_err(|e| self.invalid(&ii.path, &e.to_string()))?;
            if idx.fingerprint_hex() != ii.fingerprint || idx.grid() != (ii.grid_w, ii.grid_h) {
                return Err(self.invalid(&ii.path, "index does not match the manifest fingerprint"));
            }
        }
        for id in &self.manifest.quizzes {
            let q = self.get_quiz(id)?;
            if q.id != *id {
                return Err(self.invalid(&quiz_rel(id), "quiz id does not match its file name"));
            }
        }
        Ok(())
    }

    fn validate_frame(&self, f: &FrameEntry) -> Result<()> {
        let key = f.frame.key();
        let dims = (f.width, f.height);
        let map = self.read_class_map_at(&f.class_map)?;
        let sections = self.read_section_mask_at(&f.section_mask)?;
        validate_pair(&map, &sections).map_err(|e| self.invalid(&f.class_map, &e.to_string()))?;
        if map.dims() != dims {
            return Err(self.invalid(&f.class_map, &format!("{key}: size differs from manifest")));
        }
        if let Some(t) = &f.truth_class_map {
            if self.read_class_map_at(t)?.dims() != dims {
                return Err(self.invalid(t, "truth map size differs"));
            }
        }
        if let Some(img) = &f.image {
            let size = image::image_dimensions(self.root.join(img)).map_err(|e| self.invalid(img, &e.to_string()))?;
            if size != dims {
                return Err(self.invalid(img, "image size differs from manifest"));
            }
        }
        if let Some(t) = &f.thumb {
            image::image_dimensions(self.root.join(t)).map_err(|e| self.invalid(t, &e.to_string()))?;
        }
        if let Some(fused) = &f.fused {
            let scene = FusedScene::new(
                self.read_class_map_at(&fused.class_map)?,
                self.read_section_mask_at(&fused.section_mask)?,
            )
            .map_err(|e| self.invalid(&fused.class_map, &e.to_string()))?;
            if scene.section_mask().n_sections() != fused.n_sections || scene.class_map().dims() != dims {
                return Err(self.invalid(&fused.section_mask, "fused scene does not match manifest"));
            }
        }
        Ok(())
    }

    fn invalid(&self, rel: &str, reason: &str) -> CorpusError {
        CorpusError::InvalidAsset {
            path: self.root.join(rel),
            reason: reason.to_string(),
        }
    }

    /// Writes the manifest atomically under the project lock.
    pub fn save(&mut self) -> Result<()> {
        let _lock = ProjectLock::acquire(&self.root)?;
        self.save_locked()
    }

    fn save_locked(&self) -> Result<()> {
        self.manifest.check()?;
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        write_atomic(&self.root.join(MANIFEST_FILE), text.as_bytes())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn path_of(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn frames(&self) -> &[FrameEntry] {
        &self.manifest.frames
    }

    pub fn frame(&self, frame: &FrameRef) -> Option<&FrameEntry> {
        self.manifest
            .frames
            .binary_search_by(|f| f.frame.cmp(frame))
            .ok()
            .map(|i| &self.manifest.frames[i])
    }

    /// Looks a frame up by its `video-000123` key.
    pub fn frame_by_key(&self, key: &str) -> Option<&FrameEntry> {
        self.manifest.frames.iter().find(|f| f.frame.key() == key)
    }

    fn entry(&self, frame: &FrameRef) -> Result<&FrameEntry> {
        self.frame(frame).ok_or_else(|| CorpusError::UnknownFrame(frame.key()))
    }

    fn read_class_map_at(&self, rel: &str) -> Result<ClassMap> {
        let path = self.require(rel)?;
        scene::read_class_map(&path).map_err(|e| self.invalid(rel, &e.to_string()))
    }

    fn read_section_mask_at(&self, rel: &str) -> Result<SectionMask> {
        let path = self.require(rel)?;
        scene::read_section_mask(&path).map_err(|e| self.invalid(rel, &e.to_string()))
    }

    pub fn read_raw(&self, frame: &FrameRef) -> Result<(ClassMap, SectionMask)> {
        let e = self.entry(frame)?;
        Ok((self.read_class_map_at(&e.class_map)?, self.read_section_mask_at(&e.section_mask)?))
    }

    pub fn read_fused(&self, frame: &FrameRef) -> Result<FusedScene> {
        let e = self.entry(frame)?;
        let f = e.fused.as_ref().ok_or_else(|| CorpusError::NotFused(frame.key()))?;
        Ok(FusedScene::new(
            self.read_class_map_at(&f.class_map)?,
            self.read_section_mask_at(&f.section_mask)?,
        )?)
    }

    pub fn read_truth(&self, frame: &FrameRef) -> Result<Option<ClassMap>> {
        let e = self.entry(frame)?;
        e.truth_class_map.as_deref().map(|t| self.read_class_map_at(t)).transpose()
    }

    /// The frame still, or the fused (else raw) class map rendered in the
    /// palette when the project has no still for it.
    pub fn read_image(&self, frame: &FrameRef) -> Result<RgbImage> {
        let e = self.entry(frame)?;
        if let Some(img) = &e.image {
            let path = self.require(img)?;
            return Ok(image::open(&path).map_err(|err| self.invalid(img, &err.to_string()))?.to_rgb8());
        }
        let map = match &e.fused {
            Some(f) => self.read_class_map_at(&f.class_map)?,
            None => self.read_class_map_at(&e.class_map)?,
        };
        Ok(scene::render_class_map(&map))
    }

    /// Writes the frames' files and adds them to the inventory. The manifest
    /// is not saved.
    pub fn add_frames(&mut self, exec: Exec, frames: Vec<NewFrame>) -> Result<()> {
        for f in &frames {
            if self.frame(&f.frame).is_some() {
                return Err(CorpusError::DuplicateFrame(f.frame.key()));
            }
        }
        let mut keys: Vec<&FrameRef> = frames.iter().map(|f| &f.frame).collect();
        keys.sort();
        if let Some(w) = keys.windows(2).find(|w| w[0] == w[1]) {
            return Err(CorpusError::DuplicateFrame(w[0].key()));
        }
        let entries = exec.map(&frames, |f| self.write_frame(f));
        let entries = entries.into_iter().collect::<Result<Vec<_>>>()?;
        self.manifest.frames.extend(entries);
        self.manifest.frames.sort_by(|a, b| a.frame.cmp(&b.frame));
        self.manifest.frames_revision += 1;
        Ok(())
    }

    fn write_frame(&self, f: &NewFrame) -> Result<FrameEntry> {
        validate_pair(&f.class_map, &f.section_mask)?;
        let (width, height) = f.class_map.dims();
        let key = f.frame.key();
        let class_map = format!("classmaps/{key}.png");
        let section_mask = format!("sections/{key}.png");
        write_atomic(&self.root.join(&class_map), &scene::encode_class_map_png(&f.class_map)?)?;
        write_atomic(&self.root.join(&section_mask), &scene::encode_section_mask_png(&f.section_mask)?)?;
        let truth_class_map = match &f.truth {
            Some(t) => {
                if t.dims() != (width, height) {
                    return Err(SceneError::DimensionMismatch {
                        expected: (width, height),
                        found: t.dims(),
                    }
                    .into());
                }
                let rel = format!("classmaps/{key}.truth.png");
                write_atomic(&self.root.join(&rel), &scene::encode_class_map_png(t)?)?;
                Some(rel)
            }
            None => None,
        };
        let (image, thumb) = match &f.image {
            Some(img) => {
                if img.dimensions() != (width, height) {
                    return Err(SceneError::DimensionMismatch {
                        expected: (width, height),
                        found: img.dimensions(),
                    }
                    .into());
                }
                let rel = format!("frames/{key}.png");
                let mut png = Vec::new();
                img.write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)?;
                write_atomic(&self.root.join(&rel), &png)?;
                let thumb = format!("frames/{key}.thumb.jpg");
                write_atomic(&self.root.join(&thumb), &encode_thumbnail(img)?)?;
                (Some(rel), Some(thumb))
            }
            None => (None, None),
        };
        Ok(FrameEntry {
            frame: f.frame.clone(),
            width,
            height,
            image,
            thumb,
            class_map,
            section_mask,
            fused: None,
            truth_class_map,
        })
    }

    /// Fuses every frame that has no fused scene yet. Returns how many were
    /// fused. The manifest is not saved.
    pub fn fuse_all(&mut self, exec: Exec) -> Result<usize> {
        let todo: Vec<usize> = (0..self.manifest.frames.len())
            .filter(|&i| self.manifest.frames[i].fused.is_none())
            .collect();
        let results = exec.map(&todo, |&i| {
            let e = &self.manifest.frames[i];
            let (map, sections) = self.read_raw(&e.frame)?;
            let scene = fuse(&map, &sections)?;
            let key = e.frame.key();
            let class_map = format!("classmaps/{key}.fused.png");
            let section_mask = format!("sections/{key}.fused.png");
            write_atomic(&self.root.join(&class_map), &scene::encode_class_map_png(scene.class_map())?)?;
            write_atomic(&self.root.join(&section_mask), &scene::encode_section_mask_png(scene.section_mask())?)?;
            Ok(FusedEntry {
                class_map,
                section_mask,
                n_sections: scene.section_mask().n_sections(),
            })
        });
        let fused = results.into_iter().collect::<Result<Vec<_>>>()?;
        for (&i, f) in todo.iter().zip(fused) {
            self.manifest.frames[i].fused = Some(f);
        }
        if !todo.is_empty() {
            self.manifest.frames_revision += 1;
        }
        Ok(todo.len())
    }

    /// Stores one feature row per frame, in inventory order.
    pub fn set_features(&mut self, dim: usize, data: &[f32]) -> Result<()> {
        if dim == 0 || data.len() != dim * self.manifest.frames.len() {
            return Err(CorpusError::InvalidAsset {
                path: self.root.join("features.sfv"),
                reason: format!(
                    "{} values do not form {} rows of {dim}",
                    data.len(),
                    self.manifest.frames.len()
                ),
            });
        }
        let mut bytes = Vec::new();
        keyframes::write_sfv(&mut bytes, dim, data)?;
        write_atomic(&self.root.join("features.sfv"), &bytes)?;
        self.manifest.features = Some(FeaturesInfo {
            path: "features.sfv".into(),
            dim,
            frames_revision: self.manifest.frames_revision,
        });
        Ok(())
    }

    /// Replaces the features with composition features of each frame's
    /// fused (else raw) class map.
    pub fn recompute_features(&mut self, exec: Exec) -> Result<()> {
        let rows = exec.map(&self.manifest.frames, |e| {
            let rel = e.fused.as_ref().map_or(&e.class_map, |f| &f.class_map);
            self.read_class_map_at(rel).map(|m| composition_features(&m))
        });
        let mut data = Vec::with_capacity(rows.len() * FEATURE_DIM);
        for r in rows {
            data.extend_from_slice(&r?);
        }
        self.set_features(FEATURE_DIM, &data)
    }

    /// True when frames were added after the features were computed.
    pub fn features_are_stale(&self) -> bool {
        self.read_feature_rows()
            .is_ok_and(|(dim, data)| data.len() != dim * self.manifest.frames.len())
    }

    fn read_feature_rows(&self) -> Result<(usize, Vec<f32>)> {
        let fi = self.manifest.features.as_ref().ok_or(CorpusError::NoFeatures)?;
        let path = self.require(&fi.path)?;
        keyframes::read_sfv_file(&path).map_err(|e| self.invalid(&fi.path, &e.to_string()))
    }

    /// Feature series per video, in video order.
    pub fn feature_series(&self) -> Result<Vec<FeatureSeries>> {
        let (dim, data) = self.read_feature_rows()?;
        if data.len() != dim * self.manifest.frames.len() {
            return Err(CorpusError::NoFeatures);
        }
        let mut by_video: BTreeMap<&str, (Vec<f32>, Vec<FrameRef>)> = BTreeMap::new();
        for (i, f) in self.manifest.frames.iter().enumerate() {
            let e = by_video.entry(&f.frame.video_id).or_default();
            e.0.extend_from_slice(&data[i * dim..(i + 1) * dim]);
            e.1.push(f.frame.clone());
        }
        by_video
            .into_values()
            .map(|(rows, frames)| FeatureSeries::new(dim, rows, frames).map_err(Into::into))
            .collect()
    }

    pub fn keyframes(&self, config: &KeyframeConfig) -> Result<Vec<Keyframe>> {
        let mut out = Vec::new();
        for series in self.feature_series()? {
            out.extend(keyframes::keyframes(&series, config)?);
        }
        Ok(out)
    }

    /// Builds the search index over the fused class maps and records it in
    /// the manifest. The manifest is not saved.
    pub fn build_index(&mut self, exec: Exec, grid: (u32, u32)) -> Result<FrameIndex> {
        let maps = exec.map(&self.manifest.frames, |e| {
            self.read_fused(&e.frame).map(|s| s.into_parts().0)
        });
        let maps = maps.into_iter().collect::<Result<Vec<_>>>()?;
        let pairs: Vec<(FrameRef, &ClassMap)> = self
            .manifest
            .frames
            .iter()
            .map(|e| e.frame.clone())
            .zip(maps.iter())
            .collect();
        let index = search::build_index_with(exec, &pairs, grid)?;
        let mut bytes = Vec::new();
        search::write_index(&index, &mut bytes)?;
        write_atomic(&self.root.join("index.sfi"), &bytes)?;
        self.manifest.index = Some(IndexInfo {
            path: "index.sfi".into(),
            grid_w: grid.0,
            grid_h: grid.1,
            fingerprint: index.fingerprint_hex(),
            frames_revision: self.manifest.frames_revision,
        });
        Ok(index)
    }

    pub fn load_index(&self) -> Result<FrameIndex> {
        let info = self.manifest.index.as_ref().ok_or(CorpusError::NoIndex)?;
        let index = search::read_index_file(&self.require(&info.path)?)?;
        if index.fingerprint_hex() != info.fingerprint {
            return Err(self.invalid(&info.path, "index does not match the manifest fingerprint"));
        }
        Ok(index)
    }

    /// True when there is no index or frames changed since it was built.
    pub fn index_is_stale(&self) -> bool {
        self.manifest
            .index
            .as_ref()
            .is_none_or(|i| i.frames_revision != self.manifest.frames_revision)
    }

    /// Stores `bytes` under its content hash and returns the asset name.
    pub fn put_asset(&self, bytes: &[u8], ext: &str) -> Result<String> {
        if ext.is_empty() || !ext.chars().all(|c| c.is_ascii_alphanumeric()) {
            return Err(CorpusError::InvalidAsset {
                path: self.root.join("assets"),
                reason: format!("bad extension {ext:?}"),
            });
        }
        let digest = Sha256::digest(bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        let name = format!("{hex}.{}", ext.to_ascii_lowercase());
        let path = self.asset_path(&name).expect("generated names are valid");
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        Ok(name)
    }

    /// Path of an asset by name; `None` for names that would leave `assets/`.
    pub fn asset_path(&self, name: &str) -> Option<PathBuf> {
        let ok = !name.is_empty()
            && !name.starts_with('.')
            && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_');
        ok.then(|| self.root.join("assets").join(name))
    }

    pub fn quiz_ids(&self) -> &[String] {
        &self.manifest.quizzes
    }

    pub fn get_quiz(&self, id: &str) -> Result<Quiz> {
        if !self.manifest.quizzes.iter().any(|q| q == id) {
            return Err(CorpusError::QuizNotFound(id.to_string()));
        }
        let rel = quiz_rel(id);
        let path = self.require(&rel)?;
        let text = fs::read_to_string(&path).map_err(|e| CorpusError::io(&path, e))?;
        quiz::quiz_from_json(&text).map_err(|e| self.invalid(&rel, &e.to_string()))
    }

    /// Validates and stores a quiz, creating or replacing it, and saves the
    /// manifest.
    pub fn put_quiz(&mut self, q: &Quiz) -> Result<()> {
        quiz::validate_quiz(q, self).map_err(CorpusError::InvalidQuiz)?;
        let _lock = ProjectLock::acquire(&self.root)?;
        write_atomic(&self.root.join(quiz_rel(&q.id)), quiz::quiz_to_json(q).as_bytes())?;
        if !self.manifest.quizzes.contains(&q.id) {
            self.manifest.quizzes.push(q.id.clone());
            self.manifest.quizzes.sort();
        }
        self.save_locked()
    }

    pub fn delete_quiz(&mut self, id: &str) -> Result<()> {
        let pos = self
            .manifest
            .quizzes
            .iter()
            .position(|q| q == id)
            .ok_or_else(|| CorpusError::QuizNotFound(id.to_string()))?;
        let _lock = ProjectLock::acquire(&self.root)?;
        self.manifest.quizzes.remove(pos);
        self.save_locked()?;
        let path = self.root.join(quiz_rel(id));
        fs::remove_file(&path).map_err(|e| CorpusError::io(&path, e))
    }

    pub fn set_synthetic_spec(&mut self, spec: Option<SyntheticSpec>) {
        self.manifest.synthetic = spec;
    }
}

fn quiz_rel(id: &str) -> String {
    format!("quizzes/{id}.json")
}

impl QuizContext for Project {
    fn frame_info(&self, frame: &FrameRef) -> Option<FrameInfo> {
        self.frame(frame).map(|e| FrameInfo {
            width: e.width,
            height: e.height,
            n_sections: e.fused.as_ref().map_or(0, |f| f.n_sections),
        })
    }

    fn has_asset(&self, name: &str) -> bool {
        self.asset_path(name).is_some_and(|p| p.is_file())
    }
}

/// Generates a synthetic corpus and writes it as a fused project with
/// truth maps, features and a search index at the default grid.
pub fn write_synthetic_project(
    root: impl AsRef<Path>,
    spec: &SyntheticSpec,
    exec: Exec,
) -> Result<(Project, SyntheticCorpus)> {
    let corpus = generate_synthetic_with(exec, spec)?;
    let mut project = Project::init(root, &format!("synthetic-{}", spec.seed))?;
    let frames = corpus
        .frames
        .iter()
        .map(|f| NewFrame {
            frame: f.frame.clone(),
            image: Some(scene::render_class_map(&f.truth)),
            class_map: f.noisy.clone(),
            section_mask: f.truth_sections.clone(),
            truth: Some(f.truth.clone()),
        })
        .collect();
    project.add_frames(exec, frames)?;
    project.fuse_all(exec)?;
    project.set_features(FEATURE_DIM, &corpus.features)?;
    project.build_index(exec, search::DEFAULT_GRID)?;
    project.set_synthetic_spec(Some(spec.clone()));
    project.save()?;
    Ok((project, corpus))
}
