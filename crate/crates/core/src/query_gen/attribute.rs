use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ErrorCode;

/// A visual attribute a document either exhibits or not.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    /// Short identifier, e.g. `has_wax_seal`.
    pub name: String,
    /// Fragment used when the attribute is requested, e.g. `has a wax seal`.
    pub phrase: String,
    /// Fragment used in the negative prompt when the attribute must be
    /// absent, e.g. `wax seal`. Falls back to `phrase` when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_phrase: Option<String>,
}

impl Attribute {
    pub fn new(name: impl Into<String>, phrase: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            phrase: phrase.into(),
            negative_phrase: None,
        }
    }

    pub fn with_negative(mut self, phrase: impl Into<String>) -> Self {
        self.negative_phrase = Some(phrase.into());
        self
    }

    pub fn negative_text(&self) -> &str {
        self.negative_phrase.as_deref().unwrap_or(&self.phrase)
    }
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("attribute `{0}` is both positive and negative")]
    Contradictory(String),
    #[error("query `{0}` names no attributes")]
    EmptyQuery(String),
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("invalid query set: {0}")]
    InvalidQuerySet(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl ErrorCode for QueryError {
    fn code(&self) -> &'static str {
        match self {
            QueryError::UnknownAttribute(_) => "UnknownAttribute",
            QueryError::Contradictory(_) | QueryError::EmptyQuery(_) => "InvalidQuery",
            QueryError::InvalidVocabulary(_) => "InvalidVocabulary",
            QueryError::InvalidQuerySet(_) => "InvalidQuerySet",
            QueryError::Io { .. } => "IoFailure",
        }
    }
}

/// The set of attributes a deployment knows about, keyed by name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    attributes: BTreeMap<String, Attribute>,
}

impl Vocabulary {
    pub fn new(attributes: impl IntoIterator<Item = Attribute>) -> Result<Self, QueryError> {
        let mut map = BTreeMap::new();
        for attr in attributes {
            if attr.name.is_empty() || attr.name.chars().any(char::is_whitespace) {
                return Err(QueryError::InvalidVocabulary(format!(
                    "attribute name `{}` must be non-empty and contain no whitespace",
                    attr.name
                )));
            }
            if attr.phrase.trim().is_empty() {
                return Err(QueryError::InvalidVocabulary(format!(
                    "attribute `{}` has an empty phrase",
                    attr.name
                )));
            }
            if matches!(&attr.negative_phrase, Some(p) if p.trim().is_empty()) {
                return Err(QueryError::InvalidVocabulary(format!(
                    "attribute `{}` has an empty negative phrase",
                    attr.name
                )));
            }
            if map.contains_key(&attr.name) {
                return Err(QueryError::InvalidVocabulary(format!(
                    "duplicate attribute `{}`",
                    attr.name
                )));
            }
            map.insert(attr.name.clone(), attr);
        }
        Ok(Self { attributes: map })
    }

    /// Parses a JSON array of `{name, phrase, negative_phrase?}` objects.
    pub fn from_json(bytes: &[u8]) -> Result<Self, QueryError> {
        let attrs: Vec<Attribute> = serde_json::from_slice(bytes)
            .map_err(|e| QueryError::InvalidVocabulary(e.to_string()))?;
        Self::new(attrs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, QueryError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| QueryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&bytes)
    }

    pub fn get(&self, name: &str) -> Option<&Attribute> {
        self.attributes.get(name)
    }

    /// Attributes in ascending name order.
    pub fn iter(&self) -> impl Iterator<Item = &Attribute> {
        self.attributes.values()
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn to_json(&self) -> Vec<u8> {
        let attrs: Vec<&Attribute> = self.iter().collect();
        serde_json::to_vec_pretty(&attrs).expect("vocabulary serializes")
    }
}

/// Attributes that must be present (`positives`) or absent (`negatives`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeQuery {
    pub query_id: String,
    #[serde(default)]
    pub positives: BTreeSet<String>,
    #[serde(default)]
    pub negatives: BTreeSet<String>,
}

impl AttributeQuery {
    pub fn new<P, N>(query_id: impl Into<String>, positives: P, negatives: N) -> Self
    where
        P: IntoIterator,
        P::Item: Into<String>,
        N: IntoIterator,
        N::Item: Into<String>,
    {
        Self {
            query_id: query_id.into(),
            positives: positives.into_iter().map(Into::into).collect(),
            negatives: negatives.into_iter().map(Into::into).collect(),
        }
    }

    /// Checks the structural invariants that do not need a vocabulary.
    pub fn check_shape(&self) -> Result<(), QueryError> {
        if self.positives.is_empty() && self.negatives.is_empty() {
            return Err(QueryError::EmptyQuery(self.query_id.clone()));
        }
        if let Some(name) = self.positives.intersection(&self.negatives).next() {
            return Err(QueryError::Contradictory(name.clone()));
        }
        Ok(())
    }

    pub fn validate(&self, vocabulary: &Vocabulary) -> Result<(), QueryError> {
        self.check_shape()?;
        for name in self.positives.iter().chain(&self.negatives) {
            if vocabulary.get(name).is_none() {
                return Err(QueryError::UnknownAttribute(name.clone()));
            }
        }
        Ok(())
    }
}

/// Parses a JSONL query set, one [`AttributeQuery`] per non-blank line.
pub fn parse_query_set(text: &str) -> Result<Vec<AttributeQuery>, QueryError> {
    let mut seen = HashSet::new();
    let mut queries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let query: AttributeQuery = serde_json::from_str(line)
            .map_err(|e| QueryError::InvalidQuerySet(format!("line {}: {e}", lineno + 1)))?;
        if query.query_id.is_empty() {
            return Err(QueryError::InvalidQuerySet(format!(
                "line {}: empty query_id",
                lineno + 1
            )));
        }
        query.check_shape()?;
        if !seen.insert(query.query_id.clone()) {
            return Err(QueryError::InvalidQuerySet(format!(
                "duplicate query_id `{}`",
                query.query_id
            )));
        }
        queries.push(query);
    }
    Ok(queries)
}

pub fn load_query_set(path: impl AsRef<Path>) -> Result<Vec<AttributeQuery>, QueryError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| QueryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_query_set(&text)
}
