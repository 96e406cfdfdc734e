//! All-or-nothing file and directory output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

fn parent_of(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

fn file_name(path: &Path) -> Result<String> {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| Error::config(format!("{} has no file name", path.display())))
}

/// Writes `bytes` to a temporary sibling of `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = parent_of(path);
    let mut tmp = tempfile::Builder::new()
        .prefix(&format!(".{}.", file_name(path)?))
        .tempfile_in(dir)
        .map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// A directory filled in a hidden sibling and moved to its target on commit.
///
/// Dropping without [`StagedDir::commit`] removes the staging directory and
/// leaves the target untouched.
#[derive(Debug)]
pub struct StagedDir {
    staging: tempfile::TempDir,
    target: PathBuf,
}

impl StagedDir {
    pub fn new(target: impl Into<PathBuf>) -> Result<Self> {
        let target = target.into();
        let dir = parent_of(&target);
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let staging = tempfile::Builder::new()
            .prefix(&format!(".{}.staging.", file_name(&target)?))
            .tempdir_in(dir)
            .map_err(|e| Error::io(dir, e))?;
        Ok(Self { staging, target })
    }

    pub fn path(&self) -> &Path {
        self.staging.path()
    }

    pub fn target(&self) -> &Path {
        &self.target
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path().join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    /// Replaces the target with the staged contents.
    pub fn commit(self) -> Result<PathBuf> {
        let Self { staging, target } = self;
        let staged = staging.keep();
        let old = if target.exists() {
            let old = parent_of(&target).join(format!(
                ".{}.old.{}",
                file_name(&target)?,
                std::process::id()
            ));
            fs::rename(&target, &old).map_err(|e| Error::io(&target, e))?;
            Some(old)
        } else {
            None
        };
        if let Err(e) = fs::rename(&staged, &target) {
            if let Some(old) = &old {
                let _ = fs::rename(old, &target);
            }
            let _ = fs::remove_dir_all(&staged);
            return Err(Error::io(&target, e));
        }
        if let Some(old) = old {
            let removed = if old.is_dir() {
                fs::remove_dir_all(&old)
            } else {
                fs::remove_file(&old)
            };
            removed.map_err(|e| Error::io(&old, e))?;
        }
        Ok(target)
    }
}
