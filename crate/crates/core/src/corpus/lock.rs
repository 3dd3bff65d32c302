//! Advisory single-writer lock on a project directory.

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use super::CorpusError;

pub const LOCK_FILE: &str = ".lock";

/// Held while a writer mutates the project; released on drop.
#[derive(Debug)]
pub struct ProjectLock {
    file: File,
    path: PathBuf,
}

impl ProjectLock {
    /// Blocks until no other writer holds the lock.
    pub fn acquire(root: &Path) -> Result<ProjectLock, CorpusError> {
        let path = root.join(LOCK_FILE);
        let file = open(&path)?;
        file.lock().map_err(|e| CorpusError::io(&path, e))?;
        Ok(ProjectLock { file, path })
    }

    /// Returns `None` instead of blocking when another writer holds the lock.
    pub fn try_acquire(root: &Path) -> Result<Option<ProjectLock>, CorpusError> {
        let path = root.join(LOCK_FILE);
        let file = open(&path)?;
        match file.try_lock() {
            Ok(()) => Ok(Some(ProjectLock { file, path })),
            Err(std::fs::TryLockError::WouldBlock) => Ok(None),
            Err(std::fs::TryLockError::Error(e)) => Err(CorpusError::io(&path, e)),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Drop for ProjectLock {
    fn drop(&mut self) {
        let _ = self.file.unlock();
    }
}

fn open(path: &Path) -> Result<File, CorpusError> {
    OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(path)
        .map_err(|e| CorpusError::io(path, e))
}
