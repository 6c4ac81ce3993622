//! Labeled documents and the JSON-lines dataset format.

use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// One labeled, pre-segmented document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub label: u32,
    pub tokens: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path} line {line}: {source}")]
    Json { path: String, line: usize, source: serde_json::Error },
}

/// Reads a dataset of one JSON document per line.
pub fn read_jsonl(path: &Path) -> Result<Vec<Document>, DataError> {
    let file = fs::File::open(path).map_err(|source| DataError::Io { path: display(path), source })?;
    let mut docs = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| DataError::Io { path: display(path), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = serde_json::from_str(&line)
            .map_err(|source| DataError::Json { path: display(path), line: idx + 1, source })?;
        docs.push(doc);
    }
    Ok(docs)
}

/// Writes one JSON document per line, atomically.
pub fn write_jsonl(path: &Path, docs: &[Document]) -> Result<(), DataError> {
    let mut buf = Vec::new();
    for doc in docs {
        serde_json::to_writer(&mut buf, doc)
            .map_err(|source| DataError::Json { path: display(path), line: 0, source })?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf).map_err(|source| DataError::Io { path: display(path), source })
}

/// Writes through a sibling temp file and renames it into place, so readers
/// never observe a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let stem = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{stem}.tmp.{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    match fs::rename(&tmp, path) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("docs.jsonl");
        let docs = vec![
            Document { label: 0, tokens: vec!["你好".into(), "世界".into()] },
            Document { label: 1, tokens: vec![] },
        ];
        write_jsonl(&path, &docs).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), docs);
    }

    #[test]
    fn malformed_line_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(&path, "{\"label\":0,\"tokens\":[]}\nnot json\n").unwrap();
        let err = read_jsonl(&path).unwrap_err();
        assert!(matches!(err, DataError::Json { line: 2, .. }));
    }

    #[test]
    fn atomic_write_replaces_existing_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"second");
        // No temp files left behind.
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
