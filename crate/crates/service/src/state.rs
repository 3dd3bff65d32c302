use std::collections::BTreeSet;
use std::path::Path;
use std::sync::{Arc, RwLock};

use surgq_core::corpus::{CorpusError, Project};
use surgq_core::keyframes::{Keyframe, KeyframeConfig};
use surgq_core::quiz::{FallbackInpainter, Inpainter};
use surgq_core::search::FrameIndex;
use surgq_core::FrameRef;

use crate::remote::RemoteInpainter;

/// Everything a request handler needs. Reads take snapshots; mutations
/// hold `writer` for their whole duration.
pub struct AppState {
    project: RwLock<Arc<Project>>,
    index: RwLock<Option<Arc<FrameIndex>>>,
    keyframes: Vec<Keyframe>,
    keyframe_set: BTreeSet<FrameRef>,
    pub(crate) writer: tokio::sync::Mutex<()>,
    pub(crate) inpainter: FallbackInpainter,
}

pub type SharedState = Arc<AppState>;

impl AppState {
    /// Loads and validates the project. A missing or stale index leaves
    /// search unavailable until `POST /index/rebuild`.
    pub fn open(root: &Path, inpaint_url: Option<&str>) -> Result<AppState, CorpusError> {
        let project = Project::load(root)?;
        let primary = inpaint_url.map(|u| Box::new(RemoteInpainter::new(u)) as Box<dyn Inpainter>);
        AppState::new(project, FallbackInpainter::new(primary))
    }

    pub fn new(project: Project, inpainter: FallbackInpainter) -> Result<AppState, CorpusError> {
        let index = if project.index_is_stale() {
            None
        } else {
            Some(Arc::new(project.load_index()?))
        };
        let keyframes = match project.keyframes(&KeyframeConfig::default()) {
            Ok(k) => k,
            Err(CorpusError::NoFeatures) => Vec::new(),
            Err(e) => return Err(e),
        };
        let keyframe_set = keyframes.iter().map(|k| k.frame.clone()).collect();
        Ok(AppState {
            project: RwLock::new(Arc::new(project)),
            index: RwLock::new(index),
            keyframes,
            keyframe_set,
            writer: tokio::sync::Mutex::new(()),
            inpainter,
        })
    }

    pub fn shared(self) -> SharedState {
        Arc::new(self)
    }

    /// Snapshot of the project as of now.
    pub fn project(&self) -> Arc<Project> {
        self.project.read().expect("project lock poisoned").clone()
    }

    pub(crate) fn replace_project(&self, p: Project) {
        *self.project.write().expect("project lock poisoned") = Arc::new(p);
    }

    /// The current index, or `None` when it is missing or stale.
    pub fn index(&self) -> Option<Arc<FrameIndex>> {
        self.index.read().expect("index lock poisoned").clone()
    }

    pub(crate) fn swap_index(&self, index: FrameIndex) {
        *self.index.write().expect("index lock poisoned") = Some(Arc::new(index));
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    pub fn is_keyframe(&self, frame: &FrameRef) -> bool {
        self.keyframe_set.contains(frame)
    }
}
