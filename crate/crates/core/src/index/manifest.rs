use std::collections::HashSet;
use std::path::Path;

use super::{DocumentRecord, IndexError};

/// Parses a JSONL corpus manifest. Relative `image_uri` paths are resolved
/// against `base_dir`.
pub fn parse_manifest(text: &str, base_dir: Option<&Path>) -> Result<Vec<DocumentRecord>, IndexError> {
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let mut record: DocumentRecord = serde_json::from_str(line).map_err(|e| IndexError::Manifest {
            line: line_no,
            message: e.to_string(),
        })?;
        if record.doc_id.is_empty() {
            return Err(IndexError::Manifest {
                line: line_no,
                message: "empty doc_id".into(),
            });
        }
        if !seen.insert(record.doc_id.clone()) {
            return Err(IndexError::DuplicateDocId(record.doc_id));
        }
        if let Some(base) = base_dir {
            if !record.image_uri.contains("://") && Path::new(&record.image_uri).is_relative() {
                record.image_uri = base.join(&record.image_uri).display().to_string();
            }
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<DocumentRecord>, IndexError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| IndexError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_manifest(&text, path.parent())
}

/// Reads image bytes from a filesystem path, a `file://` URI, or an
/// `http(s)://` URL.
pub fn read_image_uri(uri: &str) -> Result<Vec<u8>, IndexError> {
    let io = |source| IndexError::Io {
        path: uri.to_owned(),
        source,
    };
    if uri.starts_with("http://") || uri.starts_with("https://") {
        let resp = reqwest::blocking::get(uri)
            .and_then(|r| r.error_for_status())
            .map_err(|e| io(std::io::Error::other(e)))?;
        return resp.bytes().map(|b| b.to_vec()).map_err(|e| io(std::io::Error::other(e)));
    }
    let path = uri.strip_prefix("file://").unwrap_or(uri);
    std::fs::read(path).map_err(io)
}
