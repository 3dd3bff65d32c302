//! Engine for fusing pre-computed surgical scene segmentations, retrieving
//! frames by edited polygon compositions, and authoring image-based quizzes.
//!
//! The crate is organised by subsystem:
//!
//! - [`scene`]: class maps, section masks, fused scenes and their file formats
//! - [`fusion`]: per-section majority voting and same-class section merging
//! - [`keyframes`]: banded cosine-similarity signal and peak picking
//! - [`geometry`]: polygon extraction, simplification, transforms, rasterization
//! - [`search`]: the search-by-mask index and A@n evaluation
//! - [`metrics`]: dice coefficient reports
//! - [`quiz`]: question model, validation, grading, highlights and inpainting
//! - [`corpus`]: project persistence, dataset import and the synthetic generator
//!
//! Data-parallel loops go through [`exec::Exec`]; building without the
//! `parallel` feature runs everything sequentially.

pub mod corpus;
pub mod exec;
pub mod fusion;
pub mod geometry;
pub mod keyframes;
pub mod metrics;
pub mod quiz;
pub mod scene;
pub mod search;

pub use exec::Exec;
pub use scene::{ClassId, ClassMap, FrameRef, FusedScene, SceneError, SectionMask};
