//! Line-delimited JSON helpers shared by every loader and dataset writer.
//!
//! Writers stage output in a temporary file next to the destination and
//! rename it into place, so a reader never observes a half-written file.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("serializing record {index}: {source}")]
    Serialize {
        index: usize,
        #[source]
        source: serde_json::Error,
    },
}

impl JsonlError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        JsonlError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Reads every non-blank line of `path` as one `T`. Line numbers in errors are 1-based.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let file = File::open(path).map_err(|e| JsonlError::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| JsonlError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| JsonlError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Serializes records to a `\n`-terminated JSONL string.
pub fn to_jsonl_string<'a, T, I>(records: I) -> Result<String, JsonlError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let mut out = String::new();
    for (index, record) in records.into_iter().enumerate() {
        let line =
            serde_json::to_string(record).map_err(|source| JsonlError::Serialize { index, source })?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

/// Writes records to `path`, one object per line. Returns the number of records written.
pub fn write_jsonl<'a, T, I>(path: &Path, records: I) -> Result<usize, JsonlError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let staged = stage_file(path)?;
    let mut writer = BufWriter::new(staged.as_file());
    let mut count = 0;
    for record in records {
        serde_json::to_writer(&mut writer, record)
            .map_err(|source| JsonlError::Serialize { index: count, source })?;
        writer.write_all(b"\n").map_err(|e| JsonlError::io(path, e))?;
        count += 1;
    }
    writer.flush().map_err(|e| JsonlError::io(path, e))?;
    drop(writer);
    commit(staged, path)?;
    Ok(count)
}

/// Atomically replaces `path` with `contents`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), JsonlError> {
    let mut staged = stage_file(path)?;
    staged
        .write_all(contents)
        .map_err(|e| JsonlError::io(path, e))?;
    commit(staged, path)
}

fn stage_file(path: &Path) -> Result<tempfile::NamedTempFile, JsonlError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| JsonlError::io(dir, e))?;
    tempfile::NamedTempFile::new_in(dir).map_err(|e| JsonlError::io(dir, e))
}

fn commit(staged: tempfile::NamedTempFile, path: &Path) -> Result<(), JsonlError> {
    staged
        .persist(path)
        .map(|_| ())
        .map_err(|e| JsonlError::io(path, e.error))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        a: u32,
        b: String,
    }

    #[test]
    fn round_trips_and_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.jsonl");
        let rows = vec![
            Row { a: 1, b: "x".into() },
            Row { a: 2, b: "y".into() },
        ];
        assert_eq!(write_jsonl(&path, &rows).unwrap(), 2);
        let back: Vec<Row> = read_jsonl(&path).unwrap();
        assert_eq!(back, rows);

        std::fs::write(&path, "{\"a\":1,\"b\":\"x\"}\n\nnot json\n").unwrap();
        match read_jsonl::<Row>(&path) {
            Err(JsonlError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_input_writes_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        let rows: Vec<Row> = Vec::new();
        assert_eq!(write_jsonl(&path, &rows).unwrap(), 0);
        assert_eq!(std::fs::read(&path).unwrap(), b"");
    }
}
