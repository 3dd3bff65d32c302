//! Quiz documents: multiple choice, extract-a-component and draw-a-path
//! questions with feedback anchored to image regions.

mod grade;
mod inpaint;
mod render;

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{fill_mask, Point};
use crate::scene::{ClassId, FrameRef};

pub use grade::{
    grade_extract, grade_mcq, grade_path, path_distance, resample_path, ExtractGrade, McqGrade, PathGrade,
    RESAMPLE_POINTS,
};
pub use inpaint::{FallbackInpainter, InpaintError, InpaintOutcome, Inpainter, LocalInpainter};
pub use render::{render_highlight, resolve_anchor, Highlight, HighlightRegion};

pub const QUIZ_SCHEMA: &str = "surgquiz/1";
pub const DEFAULT_PATH_TOLERANCE: f64 = 30.0;

#[derive(Debug, Error, PartialEq)]
pub enum QuizError {
    #[error("option {0} does not exist")]
    UnknownOption(usize),
    #[error("path needs at least 2 points, got {0}")]
    PathTooShort(usize),
    #[error("section {section} does not exist in frame {frame}")]
    DanglingSection { frame: String, section: u32 },
    #[error("region is empty")]
    EmptyRegion,
    #[error("tolerance must be positive and finite")]
    InvalidTolerance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HighlightStyle {
    Fill,
    Outline,
    Arrow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Anchor {
    Section { id: u32 },
    Polygon { ring: Vec<Point> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionFeedback {
    pub frame: FrameRef,
    pub anchor: Anchor,
    pub text: String,
    pub style: HighlightStyle,
}

/// Text with optional image asset references.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RichText {
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct McqOption {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default)]
    pub feedback: Vec<RegionFeedback>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqQuestion {
    pub stem: RichText,
    pub options: Vec<McqOption>,
    pub correct: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractAnswer {
    pub tool_class: ClassId,
    /// Option indices accepted as a correct tool choice.
    pub acceptable_options: BTreeSet<usize>,
    /// Where the tool belongs on the frame.
    pub placement: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractQuestion {
    pub frame: FrameRef,
    pub removed_section: u32,
    pub inpainted_asset: String,
    pub prompt: String,
    /// Candidate images from the project asset bank.
    pub options: Vec<String>,
    pub answer_key: ExtractAnswer,
}

fn default_tolerance() -> f64 {
    DEFAULT_PATH_TOLERANCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathQuestion {
    pub frame: FrameRef,
    pub target_section: u32,
    pub prompt: String,
    pub author_path: Vec<Point>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Question {
    Mcq(McqQuestion),
    Extract(ExtractQuestion),
    Path(PathQuestion),
}

fn default_schema() -> String {
    QUIZ_SCHEMA.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quiz {
    #[serde(default = "default_schema")]
    pub schema: String,
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub author: String,
    pub created: DateTime<Utc>,
    pub modified: DateTime<Utc>,
    #[serde(default)]
    pub source_videos: Vec<String>,
    pub questions: Vec<Question>,
}

/// What validation needs to know about one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameInfo {
    pub width: u32,
    pub height: u32,
    pub n_sections: u32,
}

/// Lookup of project frames and assets during validation.
pub trait QuizContext {
    fn frame_info(&self, frame: &FrameRef) -> Option<FrameInfo>;
    fn has_asset(&self, name: &str) -> bool;
}

/// In-memory context, handy for tests and previews.
#[derive(Debug, Clone, Default)]
pub struct StaticContext {
    pub frames: HashMap<FrameRef, FrameInfo>,
    pub assets: BTreeSet<String>,
}

impl QuizContext for StaticContext {
    fn frame_info(&self, frame: &FrameRef) -> Option<FrameInfo> {
        self.frames.get(frame).copied()
    }

    fn has_asset(&self, name: &str) -> bool {
        self.assets.contains(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    Schema,
    InvalidId,
    EmptyText,
    NoQuestions,
    OptionCount,
    EmptyCorrectSet,
    UnknownOption,
    DanglingFrameRef,
    DanglingSection,
    DanglingAsset,
    EmptyRegion,
    PathTooShort,
    PathOutOfBounds,
    InvalidTolerance,
    NotATool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub path: String,
    pub kind: IssueKind,
    pub message: String,
}

#[derive(Debug, Error, PartialEq)]
#[error("{} validation issue(s), first at {}: {}", .0.len(), .0[0].path, .0[0].message)]
pub struct ValidationErrors(pub Vec<ValidationIssue>);

struct Checker<'a> {
    ctx: &'a dyn QuizContext,
    issues: Vec<ValidationIssue>,
}

impl Checker<'_> {
    fn push(&mut self, path: String, kind: IssueKind, message: impl Into<String>) {
        self.issues.push(ValidationIssue {
            path,
            kind,
            message: message.into(),
        });
    }

    fn frame(&mut self, path: &str, frame: &FrameRef) -> Option<FrameInfo> {
        let info = self.ctx.frame_info(frame);
        if info.is_none() {
            self.push(
                format!("{path}.frame"),
                IssueKind::DanglingFrameRef,
                format!("frame {} is not in the project", frame.key()),
            );
        }
        info
    }

    fn section(&mut self, path: String, info: Option<FrameInfo>, frame: &FrameRef, id: u32) {
        if let Some(info) = info {
            if id >= info.n_sections {
                self.push(
                    path,
                    IssueKind::DanglingSection,
                    format!("frame {} has {} sections, no section {id}", frame.key(), info.n_sections),
                );
            }
        }
    }

    fn asset(&mut self, path: String, name: &str) {
        if !self.ctx.has_asset(name) {
            self.push(path, IssueKind::DanglingAsset, format!("asset {name:?} not found"));
        }
    }

    fn text(&mut self, path: String, s: &str) {
        if s.trim().is_empty() {
            self.push(path, IssueKind::EmptyText, "text must not be empty");
        }
    }

    fn ring_region(&mut self, path: String, info: Option<FrameInfo>, ring: &[Point]) {
        if ring.len() < 3 || ring.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            self.push(path, IssueKind::EmptyRegion, "polygon needs at least 3 finite vertices");
            return;
        }
        if let Some(info) = info {
            if fill_mask(ring, info.width as usize, info.height as usize).count() == 0 {
                self.push(path, IssueKind::EmptyRegion, "polygon covers no pixels of the frame");
            }
        }
    }

    fn feedback(&mut self, path: &str, fb: &RegionFeedback) {
        let info = self.frame(path, &fb.frame);
        match &fb.anchor {
            Anchor::Section { id } => {
                self.section(format!("{path}.anchor.id"), info, &fb.frame, *id)
            }
            Anchor::Polygon { ring } => self.ring_region(format!("{path}.anchor.ring"), info, ring),
        }
        self.text(format!("{path}.text"), &fb.text);
    }

    fn path_points(&mut self, path: String, info: Option<FrameInfo>, pts: &[Point]) {
        if pts.len() < 2 {
            self.push(path, IssueKind::PathTooShort, format!("path needs at least 2 points, got {}", pts.len()));
            return;
        }
        if let Some(info) = info {
            let (w, h) = (f64::from(info.width), f64::from(info.height));
            for (i, p) in pts.iter().enumerate() {
                let inside = p.x.is_finite() && p.y.is_finite() && (0.0..=w).contains(&p.x) && (0.0..=h).contains(&p.y);
                if !inside {
                    self.push(format!("{path}[{i}]"), IssueKind::PathOutOfBounds, "point lies outside the frame");
                }
            }
        }
    }

    fn question(&mut self, p: &str, q: &Question) {
        match q {
            Question::Mcq(m) => {
                if m.stem.text.trim().is_empty() && m.stem.images.is_empty() {
                    self.push(format!("{p}.stem"), IssueKind::EmptyText, "stem needs text or an image");
                }
                for (i, img) in m.stem.images.iter().enumerate() {
                    self.asset(format!("{p}.stem.images[{i}]"), img);
                }
                if !(2..=6).contains(&m.options.len()) {
                    self.push(
                        format!("{p}.options"),
                        IssueKind::OptionCount,
                        format!("need 2 to 6 options, got {}", m.options.len()),
                    );
                }
                for (i, o) in m.options.iter().enumerate() {
                    let op = format!("{p}.options[{i}]");
                    let has_text = o.text.as_deref().is_some_and(|t| !t.trim().is_empty());
                    if !has_text && o.image.is_none() {
                        self.push(op.clone(), IssueKind::EmptyText, "option needs text or an image");
                    }
                    if let Some(img) = &o.image {
                        self.asset(format!("{op}.image"), img);
                    }
                    for (j, fb) in o.feedback.iter().enumerate() {
                        self.feedback(&format!("{op}.feedback[{j}]"), fb);
                    }
                }
                if m.correct.is_empty() {
                    self.push(format!("{p}.correct"), IssueKind::EmptyCorrectSet, "at least one option must be correct");
                }
                for &c in &m.correct {
                    if c >= m.options.len() {
                        self.push(format!("{p}.correct"), IssueKind::UnknownOption, format!("option {c} does not exist"));
                    }
                }
            }
            Question::Extract(e) => {
                let info = self.frame(p, &e.frame);
                self.section(format!("{p}.removed_section"), info, &e.frame, e.removed_section);
                self.asset(format!("{p}.inpainted_asset"), &e.inpainted_asset);
                self.text(format!("{p}.prompt"), &e.prompt);
                if e.options.is_empty() {
                    self.push(format!("{p}.options"), IssueKind::OptionCount, "the image bank selection is empty");
                }
                for (i, a) in e.options.iter().enumerate() {
                    self.asset(format!("{p}.options[{i}]"), a);
                }
                let key = &e.answer_key;
                if key.tool_class != ClassId::TOOL {
                    self.push(format!("{p}.answer_key.tool_class"), IssueKind::NotATool, "expected the Tool class");
                }
                if key.acceptable_options.is_empty() {
                    self.push(
                        format!("{p}.answer_key.acceptable_options"),
                        IssueKind::EmptyCorrectSet,
                        "at least one option must be acceptable",
                    );
                }
                for &c in &key.acceptable_options {
                    if c >= e.options.len() {
                        self.push(
                            format!("{p}.answer_key.acceptable_options"),
                            IssueKind::UnknownOption,
                            format!("option {c} does not exist"),
                        );
                    }
                }
                self.ring_region(format!("{p}.answer_key.placement"), info, &key.placement);
            }
            Question::Path(q) => {
                let info = self.frame(p, &q.frame);
                self.section(format!("{p}.target_section"), info, &q.frame, q.target_section);
                self.text(format!("{p}.prompt"), &q.prompt);
                self.path_points(format!("{p}.author_path"), info, &q.author_path);
                if !(q.tolerance.is_finite() && q.tolerance > 0.0) {
                    self.push(format!("{p}.tolerance"), IssueKind::InvalidTolerance, "tolerance must be positive");
                }
            }
        }
    }
}

fn finish(issues: Vec<ValidationIssue>) -> Result<(), ValidationErrors> {
    if issues.is_empty() {
        Ok(())
    } else {
        Err(ValidationErrors(issues))
    }
}

/// Checks one question; issue paths are relative to the question.
pub fn validate_question(q: &Question, ctx: &dyn QuizContext) -> Result<(), ValidationErrors> {
    let mut c = Checker { ctx, issues: Vec::new() };
    c.question("", q);
    for i in &mut c.issues {
        i.path = i.path.trim_start_matches('.').to_string();
    }
    finish(c.issues)
}

/// Quiz ids double as file names.
pub fn is_valid_quiz_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// Checks the whole document against the project; every issue is reported.
pub fn validate_quiz(quiz: &Quiz, ctx: &dyn QuizContext) -> Result<(), ValidationErrors> {
    let mut c = Checker { ctx, issues: Vec::new() };
    if quiz.schema != QUIZ_SCHEMA {
        c.push("schema".into(), IssueKind::Schema, format!("expected {QUIZ_SCHEMA:?}"));
    }
    if !is_valid_quiz_id(&quiz.id) {
        c.push("id".into(), IssueKind::InvalidId, "id must be 1-128 characters of [A-Za-z0-9_-]");
    }
    c.text("title".into(), &quiz.title);
    if quiz.questions.is_empty() {
        c.push("questions".into(), IssueKind::NoQuestions, "a quiz needs at least one question");
    }
    for (i, q) in quiz.questions.iter().enumerate() {
        c.question(&format!("questions[{i}]"), q);
    }
    finish(c.issues)
}

pub fn quiz_to_json(quiz: &Quiz) -> String {
    serde_json::to_string_pretty(quiz).expect("quiz serializes")
}

pub fn quiz_from_json(s: &str) -> Result<Quiz, serde_json::Error> {
    serde_json::from_str(s)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceStarters {
    pub starters: Vec<String>,
}

const DEFAULT_STARTERS: &str = r#"
starters = [
    "Notice how the",
    "Look closely at the region where",
    "This is a common mistake because",
    "Before clipping, confirm that",
    "The highlighted structure is",
    "Compare the position of the tool with",
]
"#;

impl Default for SentenceStarters {
    fn default() -> Self {
        toml::from_str(DEFAULT_STARTERS).expect("built-in starters parse")
    }
}

impl SentenceStarters {
    /// Reads `starters = [...]` from a TOML file.
    pub fn load(path: &Path) -> Result<SentenceStarters, String> {
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        toml::from_str(&text).map_err(|e| e.to_string())
    }
}
