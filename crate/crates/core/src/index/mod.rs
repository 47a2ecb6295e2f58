//! The offline corpus index: one embedding per document under a single
//! backend, stored sorted by `doc_id`.

mod format;
mod manifest;

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embedding::{decode_image, BackendDescriptor, EmbedError, EmbeddingBackend, EmbeddingVector};
use crate::ErrorCode;

pub use format::{load_index, read_index, save_index, write_index, FORMAT_VERSION, MAGIC};
pub use manifest::{load_manifest, parse_manifest, read_image_uri};

/// One corpus document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub image_uri: String,
    /// Ground-truth attributes, when the corpus is labeled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<BTreeSet<String>>,
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("every document failed to embed ({} failures)", .0.failures.len())]
    AllDocumentsFailed(BuildReport),
    #[error("duplicate doc_id `{0}`")]
    DuplicateDocId(String),
    #[error("empty doc_id")]
    EmptyDocId,
    #[error("entry `{doc_id}`: {reason}")]
    InvalidEntry { doc_id: String, reason: String },
    #[error("I/O failure on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error("unsupported index format version {0}")]
    VersionUnsupported(u32),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
}

impl ErrorCode for IndexError {
    fn code(&self) -> &'static str {
        match self {
            IndexError::EmptyCorpus => "EmptyCorpus",
            IndexError::AllDocumentsFailed(_) => "AllDocumentsFailed",
            IndexError::DuplicateDocId(_) => "DuplicateDocId",
            IndexError::EmptyDocId => "EmptyDocId",
            IndexError::InvalidEntry { .. } => "InvalidEntry",
            IndexError::Io { .. } => "IoFailure",
            IndexError::CorruptIndex(_) => "CorruptIndex",
            IndexError::VersionUnsupported(_) => "VersionUnsupported",
            IndexError::Manifest { .. } => "InvalidManifest",
        }
    }
}

/// Hex SHA-256 over the sorted doc ids, each prefixed by its byte length.
pub fn corpus_fingerprint<'a>(doc_ids: impl IntoIterator<Item = &'a str>) -> String {
    let mut ids: Vec<&str> = doc_ids.into_iter().collect();
    ids.sort_unstable();
    let mut hasher = Sha256::new();
    for id in ids {
        hasher.update((id.len() as u64).to_le_bytes());
        hasher.update(id.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Immutable `(doc_id, vector)` table. Vectors are stored contiguously,
/// `dim` floats per document, in ascending `doc_id` order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureIndex {
    descriptor: BackendDescriptor,
    doc_ids: Vec<String>,
    vectors: Vec<f32>,
    build_timestamp: i64,
    corpus_fingerprint: String,
}

impl FeatureIndex {
    /// Sorts `entries` by doc id and checks every invariant.
    /// `build_timestamp` is milliseconds since the Unix epoch.
    pub fn from_entries(
        descriptor: BackendDescriptor,
        mut entries: Vec<(String, Vec<f32>)>,
        build_timestamp: i64,
    ) -> Result<Self, IndexError> {
        descriptor
            .validate()
            .map_err(|e| IndexError::CorruptIndex(e.to_string()))?;
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let dim = descriptor.embedding_dim;
        let mut doc_ids = Vec::with_capacity(entries.len());
        let mut vectors = Vec::with_capacity(entries.len() * dim);
        for (doc_id, values) in entries {
            if doc_id.is_empty() {
                return Err(IndexError::EmptyDocId);
            }
            if doc_ids.last() == Some(&doc_id) {
                return Err(IndexError::DuplicateDocId(doc_id));
            }
            if values.len() != dim {
                return Err(IndexError::InvalidEntry {
                    doc_id,
                    reason: format!("dimension {} != {dim}", values.len()),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(IndexError::InvalidEntry {
                    doc_id,
                    reason: "non-finite component".into(),
                });
            }
            vectors.extend_from_slice(&values);
            doc_ids.push(doc_id);
        }
        let corpus_fingerprint = corpus_fingerprint(doc_ids.iter().map(String::as_str));
        Ok(Self {
            descriptor,
            doc_ids,
            vectors,
            build_timestamp,
            corpus_fingerprint,
        })
    }

    pub fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    pub fn backend_id(&self) -> &str {
        &self.descriptor.backend_id
    }

    pub fn dim(&self) -> usize {
        self.descriptor.embedding_dim
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    /// All vectors, row-major.
    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim()..(i + 1) * self.dim()]
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.doc_ids.binary_search_by(|d| d.as_str().cmp(doc_id)).ok()
    }

    pub fn get(&self, doc_id: &str) -> Option<&[f32]> {
        self.position(doc_id).map(|i| self.vector(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.doc_ids
            .iter()
            .map(String::as_str)
            .zip(self.vectors.chunks_exact(self.dim()))
    }

    pub fn build_timestamp(&self) -> i64 {
        self.build_timestamp
    }

    pub fn corpus_fingerprint(&self) -> &str {
        &self.corpus_fingerprint
    }
}

/// Documents that could not be embedded while building an index.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub indexed: usize,
    pub failures: Vec<BuildFailure>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildFailure {
    pub doc_id: String,
    pub code: String,
    pub message: String,
}

/// Embeds every document whose image can be read from its `image_uri`.
pub fn build_index(
    corpus: &[DocumentRecord],
    backend: &dyn EmbeddingBackend,
) -> Result<(FeatureIndex, BuildReport), IndexError> {
    build_index_with(corpus, backend, |record| read_image_uri(&record.image_uri))
}

/// As [`build_index`], reading image bytes through `load`.
///
/// Per-document failures are collected in the report; the build fails
/// only when the corpus is empty, has duplicate ids, or nothing embeds.
pub fn build_index_with<F>(
    corpus: &[DocumentRecord],
    backend: &dyn EmbeddingBackend,
    load: F,
) -> Result<(FeatureIndex, BuildReport), IndexError>
where
    F: Fn(&DocumentRecord) -> Result<Vec<u8>, IndexError> + Sync + Send,
{
    if corpus.is_empty() {
        return Err(IndexError::EmptyCorpus);
    }
    let mut seen = HashSet::with_capacity(corpus.len());
    for record in corpus {
        if record.doc_id.is_empty() {
            return Err(IndexError::EmptyDocId);
        }
        if !seen.insert(record.doc_id.as_str()) {
            return Err(IndexError::DuplicateDocId(record.doc_id.clone()));
        }
    }

    let outcomes = crate::par::map(corpus, |record| -> Result<EmbeddingVector, (String, String)> {
        let bytes = load(record).map_err(|e| (e.code().to_owned(), e.to_string()))?;
        let image = decode_image(&bytes).map_err(|e| (e.code().to_owned(), e.to_string()))?;
        backend
            .embed_image(&image)
            .map_err(|e: EmbedError| (e.code().to_owned(), e.to_string()))
    });

    let mut report = BuildReport::default();
    let mut entries = Vec::with_capacity(corpus.len());
    for (record, outcome) in corpus.iter().zip(outcomes) {
        match outcome {
            Ok(vector) => entries.push((record.doc_id.clone(), vector.into_values())),
            Err((code, message)) => {
                tracing::warn!(doc_id = %record.doc_id, "skipping document: {message}");
                report.failures.push(BuildFailure {
                    doc_id: record.doc_id.clone(),
                    code,
                    message,
                });
            }
        }
    }
    if entries.is_empty() {
        return Err(IndexError::AllDocumentsFailed(report));
    }
    report.indexed = entries.len();
    report.failures.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    let timestamp = chrono::Utc::now().timestamp_millis();
    let index = FeatureIndex::from_entries(backend.descriptor().clone(), entries, timestamp)?;
    Ok((index, report))
}

/// Which identity field differs between a query vector and an index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MismatchField {
    Dimension,
    BackendId,
    Weights,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct BackendMismatch {
    pub field: MismatchField,
    pub index_value: String,
    pub query_value: String,
}

impl fmt::Display for BackendMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.field {
            MismatchField::Dimension => "dimension",
            MismatchField::BackendId => "backend id",
            MismatchField::Weights => "weights fingerprint",
        };
        write!(f, "{what} mismatch: index has {}, query has {}", self.index_value, self.query_value)
    }
}

/// Checks that `query` was produced by the backend that built `index`.
pub fn validate_compatibility(index: &FeatureIndex, query: &EmbeddingVector) -> Result<(), BackendMismatch> {
    let d = &index.descriptor;
    if query.dim() != d.embedding_dim {
        return Err(BackendMismatch {
            field: MismatchField::Dimension,
            index_value: d.embedding_dim.to_string(),
            query_value: query.dim().to_string(),
        });
    }
    if query.backend_id != d.backend_id {
        return Err(BackendMismatch {
            field: MismatchField::BackendId,
            index_value: d.backend_id.clone(),
            query_value: query.backend_id.clone(),
        });
    }
    if query.weights_fingerprint != d.weights_fingerprint {
        return Err(BackendMismatch {
            field: MismatchField::Weights,
            index_value: d.weights_fingerprint.clone(),
            query_value: query.weights_fingerprint.clone(),
        });
    }
    Ok(())
}
