//! Dissimilarity measures and exact least-to-most-dissimilar ranking.
//!
//! Components are stored as `f32`; every measure accumulates in `f64`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embedding::EmbeddingVector;
use crate::index::{validate_compatibility, BackendMismatch, FeatureIndex, MismatchField};
use crate::ErrorCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    L1,
    L2,
    Cosine,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::L1, Measure::L2, Measure::Cosine];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::L1 => "l1",
            Measure::L2 => "l2",
            Measure::Cosine => "cosine",
        }
    }

    /// Human label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Measure::L1 => "L1",
            Measure::L2 => "L2",
            Measure::Cosine => "Cosine",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l1" | "manhattan" => Ok(Measure::L1),
            "l2" | "euclidean" => Ok(Measure::L2),
            "cosine" | "cos" => Ok(Measure::Cosine),
            other => Err(format!("unknown measure `{other}` (expected l1, l2 or cosine)")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SimilarityError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("vectors must have at least one component")]
    EmptyVector,
    #[error("cosine distance is undefined for a zero vector{}", .0.as_ref().map(|d| format!(" (document `{d}`)")).unwrap_or_default())]
    ZeroVector(Option<String>),
    #[error("backend mismatch: {0}")]
    BackendMismatch(BackendMismatch),
    #[error("k = {k} exceeds index size {size}")]
    KTooLarge { k: usize, size: usize },
    #[error("no query vectors given")]
    EmptyQuerySet,
}

impl ErrorCode for SimilarityError {
    fn code(&self) -> &'static str {
        match self {
            SimilarityError::DimensionMismatch { .. } => "DimensionMismatch",
            SimilarityError::EmptyVector => "EmptyVector",
            SimilarityError::ZeroVector(_) => "ZeroVector",
            SimilarityError::BackendMismatch(_) => "BackendMismatch",
            SimilarityError::KTooLarge { .. } => "KTooLarge",
            SimilarityError::EmptyQuerySet => "EmptyQuerySet",
        }
    }
}

impl From<BackendMismatch> for SimilarityError {
    fn from(m: BackendMismatch) -> Self {
        match m.field {
            MismatchField::Dimension => SimilarityError::DimensionMismatch {
                left: m.index_value.parse().unwrap_or(0),
                right: m.query_value.parse().unwrap_or(0),
            },
            _ => SimilarityError::BackendMismatch(m),
        }
    }
}

fn check_dims(a: &[f32], b: &[f32]) -> Result<(), SimilarityError> {
    if a.len() != b.len() {
        return Err(SimilarityError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(SimilarityError::EmptyVector);
    }
    Ok(())
}

/// Σ |aᵢ − bᵢ|
pub fn l1(a: &[f32], b: &[f32]) -> Result<f64, SimilarityError> {
    check_dims(a, b)?;
    Ok(l1_unchecked(a, b))
}

/// √Σ (aᵢ − bᵢ)²
pub fn l2(a: &[f32], b: &[f32]) -> Result<f64, SimilarityError> {
    check_dims(a, b)?;
    Ok(l2_unchecked(a, b))
}

/// 1 − a·b / (‖a‖‖b‖), clamped to [0, 2].
pub fn cosine_distance(a: &[f32], b: &[f32]) -> Result<f64, SimilarityError> {
    check_dims(a, b)?;
    cosine_unchecked(a, b).ok_or(SimilarityError::ZeroVector(None))
}

pub fn dissimilarity(measure: Measure, a: &[f32], b: &[f32]) -> Result<f64, SimilarityError> {
    match measure {
        Measure::L1 => l1(a, b),
        Measure::L2 => l2(a, b),
        Measure::Cosine => cosine_distance(a, b),
    }
}

fn l1_unchecked(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).abs())
        .sum()
}

fn l2_unchecked(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = f64::from(*x) - f64::from(*y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// `None` when either vector has zero norm.
fn cosine_unchecked(a: &[f32], b: &[f32]) -> Option<f64> {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let (ra, rb) = (na.sqrt(), nb.sqrt());
    let similarity = dot / (ra * rb);
    let distance = if similarity > 0.5 {
        // 1 − cos θ cancels badly for small angles; ‖â − b̂‖² / 2 does not.
        let (ia, ib) = (1.0 / ra, 1.0 / rb);
        a.iter()
            .zip(b)
            .map(|(x, y)| {
                let d = f64::from(*x) * ia - f64::from(*y) * ib;
                d * d
            })
            .sum::<f64>()
            / 2.0
    } else {
        1.0 - similarity
    };
    Some(distance.clamp(0.0, 2.0))
}

/// How per-query dissimilarities are combined for multi-image queries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMode {
    #[default]
    Mean,
    Min,
}

impl FromStr for AggregationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(AggregationMode::Mean),
            "min" => Ok(AggregationMode::Min),
            other => Err(format!("unknown aggregation mode `{other}` (expected mean or min)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub doc_id: String,
    pub dissimilarity: f64,
}

/// Documents ordered from least to most dissimilar; ties broken by
/// ascending `doc_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub measure: Measure,
    pub query_fingerprint: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
    }
}

fn query_fingerprint(queries: &[EmbeddingVector], mode: Option<AggregationMode>) -> String {
    let mut h = Sha256::new();
    if let Some(mode) = mode {
        h.update(format!("{mode:?}").as_bytes());
    }
    for q in queries {
        h.update((q.backend_id.len() as u64).to_le_bytes());
        h.update(q.backend_id.as_bytes());
        for v in q.values() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Dissimilarity of `query` to every index entry, in index order.
fn scan(query: &EmbeddingVector, index: &FeatureIndex, measure: Measure) -> Result<Vec<f64>, SimilarityError> {
    validate_compatibility(index, query)?;
    let q = query.values();
    if measure == Measure::Cosine && q.iter().all(|v| *v == 0.0) {
        return Err(SimilarityError::ZeroVector(None));
    }
    let scores = crate::par::map_chunks(index.vectors(), index.dim(), |v| match measure {
        Measure::L1 => Some(l1_unchecked(q, v)),
        Measure::L2 => Some(l2_unchecked(q, v)),
        Measure::Cosine => cosine_unchecked(q, v),
    });
    scores
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| SimilarityError::ZeroVector(Some(index.doc_ids()[i].clone()))))
        .collect()
}

/// Orders index positions by score. Index storage is doc_id-sorted, so
/// breaking ties by position is breaking them by doc_id.
fn order(index: &FeatureIndex, scores: &[f64], k: Option<usize>) -> Result<Vec<RankedEntry>, SimilarityError> {
    let n = scores.len();
    let k = match k {
        Some(k) if k > n => return Err(SimilarityError::KTooLarge { k, size: n }),
        Some(k) => k,
        None => n,
    };
    let cmp = |a: &usize, b: &usize| -> Ordering { scores[*a].total_cmp(&scores[*b]).then(a.cmp(b)) };
    let mut positions: Vec<usize> = (0..n).collect();
    if k == 0 {
        positions.clear();
    } else if k < n {
        positions.select_nth_unstable_by(k - 1, cmp);
        positions.truncate(k);
    }
    positions.sort_unstable_by(cmp);
    Ok(positions
        .into_iter()
        .map(|i| RankedEntry {
            doc_id: index.doc_ids()[i].clone(),
            dissimilarity: scores[i],
        })
        .collect())
}

/// Ranks the whole index against `query`; keeps the first `k` when given.
pub fn rank(
    query: &EmbeddingVector,
    index: &FeatureIndex,
    measure: Measure,
    k: Option<usize>,
) -> Result<RankedList, SimilarityError> {
    let scores = scan(query, index, measure)?;
    Ok(RankedList {
        measure,
        query_fingerprint: query_fingerprint(std::slice::from_ref(query), None),
        entries: order(index, &scores, k)?,
    })
}

/// Ranks by the mean or minimum dissimilarity over several query vectors.
/// A single query gives exactly the result of [`rank`].
pub fn aggregate_multi_query(
    queries: &[EmbeddingVector],
    index: &FeatureIndex,
    measure: Measure,
    mode: AggregationMode,
    k: Option<usize>,
) -> Result<RankedList, SimilarityError> {
    let (first, rest) = queries.split_first().ok_or(SimilarityError::EmptyQuerySet)?;
    if rest.is_empty() {
        return rank(first, index, measure, k);
    }
    let mut combined = scan(first, index, measure)?;
    for query in rest {
        let scores = scan(query, index, measure)?;
        for (acc, s) in combined.iter_mut().zip(scores) {
            *acc = match mode {
                AggregationMode::Mean => *acc + s,
                AggregationMode::Min => acc.min(s),
            };
        }
    }
    if mode == AggregationMode::Mean {
        let n = queries.len() as f64;
        combined.iter_mut().for_each(|s| *s /= n);
    }
    Ok(RankedList {
        measure,
        query_fingerprint: query_fingerprint(queries, Some(mode)),
        entries: order(index, &combined, k)?,
    })
}
