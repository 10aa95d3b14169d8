//! Atomic file helpers for the session directory.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::SessionError;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SessionError + '_ {
    move |source| SessionError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write `bytes` to a sibling temp file and rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), SessionError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let tmp = temp_path(path);
    {
        let mut f = std::fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp"))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("session types serialize") + "\n"
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SessionError> {
    write_atomic(path, to_json(value).as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, SessionError> {
    let body = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&body).map_err(|source| SessionError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// One JSON object per line.
pub fn read_ndjson<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, SessionError> {
    let body = match std::fs::read_to_string(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    body.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|source| SessionError::Json {
                path: path.to_path_buf(),
                source,
            })
        })
        .collect()
}

pub fn append_ndjson<T: Serialize>(path: &Path, items: &[T]) -> Result<(), SessionError> {
    if items.is_empty() {
        return Ok(());
    }
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let mut buf = String::new();
    for item in items {
        buf.push_str(&serde_json::to_string(item).expect("session types serialize"));
        buf.push('\n');
    }
    f.write_all(buf.as_bytes()).map_err(io_err(path))?;
    f.sync_all().map_err(io_err(path))
}
