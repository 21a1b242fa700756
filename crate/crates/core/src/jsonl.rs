//! Line-delimited JSON helpers shared by every file format in the crate.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("serialize: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl JsonlError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        JsonlError::Io { path: path.into(), source }
    }

    /// Line number of a parse failure, if any.
    pub fn line(&self) -> Option<usize> {
        match self {
            JsonlError::Parse { line, .. } => Some(*line),
            _ => None,
        }
    }
}

/// One parsed line plus its 1-based line number. Blank lines are skipped.
pub fn parse_lines<T, R>(reader: R) -> Result<Vec<(usize, T)>, JsonlError>
where
    T: DeserializeOwned,
    R: BufRead,
{
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| JsonlError::Parse { line: lineno, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|e| JsonlError::Parse { line: lineno, message: e.to_string() })?;
        out.push((lineno, value));
    }
    Ok(out)
}

pub fn read_numbered<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, JsonlError> {
    let file = File::open(path).map_err(|e| JsonlError::io(path, e))?;
    parse_lines(BufReader::new(file))
}

pub fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    Ok(read_numbered(path)?.into_iter().map(|(_, v)| v).collect())
}

pub fn to_string<'a, T, I>(items: I) -> Result<String, JsonlError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

/// Write `contents` through a sibling temp file and rename it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), JsonlError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| JsonlError::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut file = File::create(&tmp).map_err(|e| JsonlError::io(&tmp, e))?;
        file.write_all(contents).map_err(|e| JsonlError::io(&tmp, e))?;
        file.sync_all().map_err(|e| JsonlError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| JsonlError::io(path, e))
}

pub fn write<'a, T, I>(path: &Path, items: I) -> Result<(), JsonlError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    write_atomic(path, to_string(items)?.as_bytes())
}

/// Read an append-only journal, repairing its tail. A final line without a
/// newline is either kept (and terminated) when it parses, or truncated away
/// when a crash cut it short. A missing file reads as empty.
pub fn read_journal<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(JsonlError::io(path, e)),
    };
    let mut out = Vec::new();
    let mut offset = 0u64;
    for (idx, line) in text.split_inclusive('\n').enumerate() {
        if !line.ends_with('\n') {
            // only the final line can lack its newline
            let mut file = OpenOptions::new().append(true).open(path).map_err(|e| JsonlError::io(path, e))?;
            match serde_json::from_str::<T>(line) {
                Ok(v) => {
                    out.push(v);
                    file.write_all(b"\n").map_err(|e| JsonlError::io(path, e))?;
                }
                Err(_) => {
                    log::warn!("{}: dropping torn final line", path.display());
                    file.set_len(offset).map_err(|e| JsonlError::io(path, e))?;
                }
            }
            file.sync_all().map_err(|e| JsonlError::io(path, e))?;
            break;
        }
        if !line.trim().is_empty() {
            let v = serde_json::from_str(line).map_err(|e| JsonlError::Parse { line: idx + 1, message: e.to_string() })?;
            out.push(v);
        }
        offset += line.len() as u64;
    }
    Ok(out)
}

/// Append-only writer that flushes (and optionally fsyncs) every line.
pub struct LineAppender {
    path: PathBuf,
    file: File,
    sync: bool,
}

impl LineAppender {
    pub fn open(path: &Path, sync: bool) -> Result<Self, JsonlError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| JsonlError::io(parent, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| JsonlError::io(path, e))?;
        Ok(LineAppender { path: path.to_path_buf(), file, sync })
    }

    pub fn append<T: Serialize>(&mut self, item: &T) -> Result<(), JsonlError> {
        let mut line = serde_json::to_vec(item)?;
        line.push(b'\n');
        self.file.write_all(&line).map_err(|e| JsonlError::io(&self.path, e))?;
        self.file.flush().map_err(|e| JsonlError::io(&self.path, e))?;
        if self.sync {
            self.file.sync_data().map_err(|e| JsonlError::io(&self.path, e))?;
        }
        Ok(())
    }
}
