//! Outputs are written into a hidden staging folder next to the destination
//! and moved into place only once everything succeeded.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{CliError, Result};

static COUNTER: AtomicUsize = AtomicUsize::new(0);

pub struct Staging {
    dest: PathBuf,
    dir: PathBuf,
    committed: bool,
}

impl Staging {
    pub fn new(dest: &Path) -> Result<Self> {
        let name = dest
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into());
        let parent = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| CliError::io(&parent, e))?;
        let n = COUNTER.fetch_add(1, Ordering::Relaxed);
        let dir = parent.join(format!(".{name}.partial-{}-{n}", std::process::id()));
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(Self {
            dest: dest.to_path_buf(),
            dir,
            committed: false,
        })
    }

    /// Path inside the staging folder.
    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn write(&self, rel: impl AsRef<Path>, bytes: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))
    }

    /// Move every staged entry into the destination, replacing entries of the
    /// same name.
    pub fn commit(mut self) -> Result<PathBuf> {
        fs::create_dir_all(&self.dest).map_err(|e| CliError::io(&self.dest, e))?;
        let entries = fs::read_dir(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| CliError::io(&self.dir, e))?;
            let target = self.dest.join(entry.file_name());
            if target.is_dir() {
                fs::remove_dir_all(&target).map_err(|e| CliError::io(&target, e))?;
            } else if target.exists() {
                fs::remove_file(&target).map_err(|e| CliError::io(&target, e))?;
            }
            fs::rename(entry.path(), &target).map_err(|e| CliError::io(&target, e))?;
        }
        fs::remove_dir(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        self.committed = true;
        Ok(self.dest.clone())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_moves_and_drop_cleans() {
        let tmp = tempfile::tempdir().unwrap();
        let dest = tmp.path().join("out");
        let s = Staging::new(&dest).unwrap();
        s.write("a/b.txt", "hi").unwrap();
        s.commit().unwrap();
        assert_eq!(fs::read_to_string(dest.join("a/b.txt")).unwrap(), "hi");

        let s = Staging::new(&dest).unwrap();
        s.write("c.txt", "x").unwrap();
        drop(s);
        assert!(!dest.join("c.txt").exists());
        let left: Vec<_> = fs::read_dir(tmp.path()).unwrap().collect();
        assert_eq!(left.len(), 1);
    }
}
