//! Append-only JSONL session logs, one file per session.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use npchunk_core::session::{LogEntry, SessionState};

use crate::{io::sha256_hex, Error, Result};

#[derive(Debug, Clone)]
pub struct LogStore {
    dir: PathBuf,
}

impl LogStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<LogStore> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| Error::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(LogStore { dir })
    }

    pub fn path_for(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.jsonl"))
    }

    /// Appends one entry and syncs it to disk before returning.
    pub fn append(&self, id: &str, entry: &LogEntry) -> Result<()> {
        let path = self.path_for(id);
        let err = |source| Error::Io {
            path: path.clone(),
            source,
        };
        let mut line = serde_json::to_string(entry).expect("log entries serialize");
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(entry.seq == 0)
            .create_new(entry.seq == 0)
            .append(true)
            .open(&path)
            .map_err(err)?;
        f.write_all(line.as_bytes()).map_err(err)?;
        f.sync_data().map_err(err)
    }

    /// Every stored session id with its log, sorted by id.
    pub fn load_all(&self) -> Result<Vec<(String, Vec<LogEntry>)>> {
        let err = |source| Error::Io {
            path: self.dir.clone(),
            source,
        };
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(err)? {
            let path = entry.map_err(err)?.path();
            if path.extension().is_some_and(|e| e == "jsonl") {
                let id = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                out.push((id, read_log(&path)?));
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }
}

/// Reads a JSONL log. A torn final line, left by a crash mid-append, is
/// dropped with a warning; damage anywhere else is an error.
pub fn read_log(path: &Path) -> Result<Vec<LogEntry>> {
    let f = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let lines: Vec<String> = BufReader::new(f)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LogEntry>(line) {
            Ok(e) => out.push(e),
            Err(e) if i + 1 == lines.len() => {
                log::warn!("{}: dropping torn last line: {e}", path.display());
            }
            Err(e) => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    msg: format!("line {}: {e}", i + 1),
                })
            }
        }
    }
    Ok(out)
}

pub fn log_to_jsonl(entries: &[LogEntry]) -> String {
    entries
        .iter()
        .map(|e| serde_json::to_string(e).expect("log entries serialize") + "\n")
        .collect()
}

/// Hex SHA-256 of the state's JSON form.
pub fn state_hash(state: &SessionState) -> String {
    sha256_hex(&serde_json::to_vec(state).expect("session state serializes"))
}
