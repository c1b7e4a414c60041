use std::io::Write;
use std::path::{Path, PathBuf};

use tempfile::{NamedTempFile, TempDir};

use crate::error::{CliError, CliResult};

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::data(format!("{}: {e}", path.display()))
}

/// Output directory that appears on disk only once every file is written.
///
/// A fresh directory is staged next to its final location and renamed into
/// place by [`OutputDir::commit`]. An existing directory is written in
/// place, one file at a time, each file replaced atomically.
pub struct OutputDir {
    target: PathBuf,
    staging: Option<TempDir>,
}

impl OutputDir {
    pub fn open(target: &Path) -> CliResult<Self> {
        if target.exists() {
            if !target.is_dir() {
                return Err(io_error(target, "exists and is not a directory"));
            }
            return Ok(Self {
                target: target.to_path_buf(),
                staging: None,
            });
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&parent).map_err(|e| io_error(&parent, e))?;
        let staging = tempfile::Builder::new()
            .prefix(".wrcp-out-")
            .tempdir_in(&parent)
            .map_err(|e| io_error(&parent, e))?;
        Ok(Self {
            target: target.to_path_buf(),
            staging: Some(staging),
        })
    }

    fn dir(&self) -> &Path {
        self.staging.as_ref().map_or(&self.target, |s| s.path())
    }

    /// Path a file will have once committed.
    pub fn final_path(&self, name: &str) -> PathBuf {
        self.target.join(name)
    }

    pub fn write<F>(&self, name: &str, body: F) -> CliResult<()>
    where
        F: FnOnce(&mut dyn Write) -> CliResult<()>,
    {
        write_atomic(&self.dir().join(name), body)
    }

    pub fn commit(self) -> CliResult<PathBuf> {
        if let Some(staging) = self.staging {
            let tmp = staging.keep();
            std::fs::rename(&tmp, &self.target).map_err(|e| io_error(&self.target, e))?;
        }
        Ok(self.target)
    }
}

/// Writes through a sibling temporary file, then renames over `path`.
pub fn write_atomic<F>(path: &Path, body: F) -> CliResult<()>
where
    F: FnOnce(&mut dyn Write) -> CliResult<()>,
{
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| io_error(dir, e))?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        body(&mut buf)?;
        buf.flush().map_err(|e| io_error(path, e))?;
    }
    tmp.persist(path).map_err(|e| io_error(path, e.error))?;
    Ok(())
}
