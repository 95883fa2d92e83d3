use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

enum Created {
    File(PathBuf),
    Dir { path: PathBuf, existed: bool },
}

/// Tracks everything a command writes and removes it again unless the
/// command reaches `commit`.
#[derive(Default)]
pub struct Outputs {
    created: Vec<Created>,
    committed: bool,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    /// Checked before any work starts: the parent directory must exist.
    pub fn check_file_target(path: &Path) -> CliResult<()> {
        check_parent(path)?;
        if path.is_dir() {
            return Err(CliError::Validation(format!("{} is a directory", path.display())));
        }
        Ok(())
    }

    /// A directory output must be absent or empty.
    pub fn check_dir_target(path: &Path) -> CliResult<()> {
        if path.exists() {
            let empty = path.is_dir()
                && fs::read_dir(path)
                    .map_err(|e| CliError::io(path, e))?
                    .next()
                    .is_none();
            if !empty {
                return Err(CliError::Validation(format!(
                    "{} already exists and is not an empty directory",
                    path.display()
                )));
            }
        }
        check_parent(path)
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> CliResult<()> {
        self.created.push(Created::File(path.to_path_buf()));
        fs::write(path, bytes).map_err(|e| CliError::io(path, e))
    }

    /// Registers a directory about to be filled by someone else. A directory
    /// that already existed (empty) is emptied again rather than removed.
    pub fn claim_dir(&mut self, path: &Path) {
        self.created.push(Created::Dir {
            path: path.to_path_buf(),
            existed: path.exists(),
        });
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

fn check_parent(path: &Path) -> CliResult<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !parent.is_dir() {
        return Err(CliError::Validation(format!(
            "output directory {} does not exist",
            parent.display()
        )));
    }
    Ok(())
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for c in self.created.iter().rev() {
            let res = match c {
                Created::File(p) => fs::remove_file(p),
                Created::Dir { path, existed } => {
                    fs::remove_dir_all(path).and_then(|_| if *existed { fs::create_dir(path) } else { Ok(()) })
                }
            };
            if let Err(e) = res {
                if e.kind() != std::io::ErrorKind::NotFound {
                    log::warn!("could not remove partial output: {e}");
                }
            }
        }
    }
}
