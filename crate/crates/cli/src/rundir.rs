use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::checkpoint::write_atomic;
use crate::error::{CliError, CliResult};

pub const LOCK_FILE: &str = ".lock";

/// Exclusive handle on a run directory. The lock file is removed on drop.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn open(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root.join("checkpoints")).map_err(CliError::io(format!("creating {}", root.display())))?;
        let lock = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(CliError::Usage(format!(
                    "run directory {} is in use (remove {} if no other process is running)",
                    root.display(),
                    lock.display()
                )))
            }
            Err(e) => return Err(CliError::io(format!("locking {}", root.display()))(e)),
        }
        Ok(RunDir { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}.ckpt"))
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(self.root.join(LOCK_FILE));
    }
}

/// Append-only CSV with a header row. Opening keeps the header and the
/// first `keep` data rows of an existing file, so a resumed run continues
/// the log where its checkpoint left off.
pub struct CsvLog {
    path: PathBuf,
}

impl CsvLog {
    pub fn open(path: PathBuf, header: &str, keep: usize) -> CliResult<Self> {
        let existing = std::fs::read_to_string(&path).unwrap_or_default();
        let mut lines = existing.lines();
        let mut text = format!("{header}\n");
        if lines.next() == Some(header) {
            for l in lines.take(keep) {
                text.push_str(l);
                text.push('\n');
            }
        }
        write_atomic(&path, text.as_bytes())?;
        Ok(CsvLog { path })
    }

    pub fn append(&self, row: &str) -> CliResult<()> {
        let mut f = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(CliError::io(format!("opening {}", self.path.display())))?;
        writeln!(f, "{row}").map_err(CliError::io(format!("writing {}", self.path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_open_is_refused_until_drop() {
        let dir = tempfile::tempdir().unwrap();
        let a = RunDir::open(dir.path()).unwrap();
        assert!(matches!(RunDir::open(dir.path()), Err(CliError::Usage(_))));
        drop(a);
        RunDir::open(dir.path()).unwrap();
    }

    #[test]
    fn csv_keeps_requested_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let log = CsvLog::open(p.clone(), "a,b", 0).unwrap();
        for i in 0..4 {
            log.append(&format!("{i},{i}")).unwrap();
        }
        CsvLog::open(p.clone(), "a,b", 2).unwrap().append("9,9").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "a,b\n0,0\n1,1\n9,9\n");
        CsvLog::open(p.clone(), "x", 5).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "x\n");
    }
}
