use std::collections::{BTreeSet, HashMap};

use super::metrics::{aggregate_mean_std, precision_at_k, r_precision, GroundTruth};
use super::report::{AggregateRow, CellFailure, EvaluationReport, MetricsRow};
use super::EvalError;
use crate::embedding::{embed, EmbeddingBackend, EmbeddingVector};
use crate::index::{build_index, DocumentRecord, FeatureIndex};
use crate::query_gen::{AttributeQuery, GeneratedImage};
use crate::similarity::{aggregate_multi_query, AggregationMode, Measure};
use crate::ErrorCode;

/// One backend together with the index it built over the corpus.
#[derive(Clone, Copy)]
pub struct GridBackend<'a> {
    pub backend: &'a dyn EmbeddingBackend,
    pub index: &'a FeatureIndex,
}

/// Everything except the backends.
#[derive(Clone, Copy)]
pub struct GridInputs<'a> {
    pub truth: &'a GroundTruth,
    pub queries: &'a [AttributeQuery],
    /// Query images per `query_id`; several images are combined with
    /// `aggregation`.
    pub query_images: &'a HashMap<String, Vec<GeneratedImage>>,
    pub measures: &'a [Measure],
    pub aggregation: AggregationMode,
}

fn failure(backend_id: &str, measure: Measure, code: &str, message: impl Into<String>) -> CellFailure {
    CellFailure {
        backend_id: backend_id.to_owned(),
        measure,
        code: code.to_owned(),
        message: message.into(),
    }
}

fn validate(inputs: &GridInputs<'_>, backend_ids: &[&str]) -> Result<Vec<Measure>, EvalError> {
    if backend_ids.is_empty() {
        return Err(EvalError::InvalidGrid("no backends".into()));
    }
    let unique: BTreeSet<&str> = backend_ids.iter().copied().collect();
    if unique.len() != backend_ids.len() {
        return Err(EvalError::InvalidGrid("duplicate backend ids".into()));
    }
    if inputs.queries.is_empty() {
        return Err(EvalError::InvalidGrid("no queries".into()));
    }
    let measures: Vec<Measure> = inputs.measures.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if measures.is_empty() {
        return Err(EvalError::InvalidGrid("no measures".into()));
    }
    for q in inputs.queries {
        if inputs.query_images.get(&q.query_id).is_none_or(Vec::is_empty) {
            return Err(EvalError::InvalidGrid(format!("query `{}` has no query image", q.query_id)));
        }
    }
    Ok(measures)
}

/// Builds one index per backend over `corpus`, then evaluates the grid.
/// A backend whose index cannot be built fails all of its cells.
pub fn run_grid(
    corpus: &[DocumentRecord],
    inputs: GridInputs<'_>,
    backends: &[&dyn EmbeddingBackend],
) -> Result<EvaluationReport, EvalError> {
    let ids: Vec<&str> = backends.iter().map(|b| b.descriptor().backend_id.as_str()).collect();
    let measures = validate(&inputs, &ids)?;

    let mut built = Vec::new();
    let mut failures = Vec::new();
    for backend in backends {
        match build_index(corpus, *backend) {
            Ok((index, _report)) => built.push((*backend, index)),
            Err(e) => {
                for m in &measures {
                    failures.push(failure(&backend.descriptor().backend_id, *m, e.code(), e.to_string()));
                }
            }
        }
    }
    let cells: Vec<GridBackend<'_>> = built
        .iter()
        .map(|(backend, index)| GridBackend { backend: *backend, index })
        .collect();
    let mut report = evaluate(&cells, &inputs, &measures)?;
    report.failures.extend(failures);
    report.failures.sort_by(|a, b| (&a.backend_id, a.measure).cmp(&(&b.backend_id, b.measure)));
    Ok(report)
}

/// Evaluates every (backend, measure) combination against prebuilt indexes.
///
/// Each query image is embedded by each backend, the corpus is ranked with
/// [`aggregate_multi_query`], and every query is scored with precision@3,
/// @10, @25 and R-precision. Output rows are sorted by backend id, then
/// measure, then query order, whatever order cells finish in.
pub fn run_grid_indexed(backends: &[GridBackend<'_>], inputs: GridInputs<'_>) -> Result<EvaluationReport, EvalError> {
    let ids: Vec<&str> = backends.iter().map(|b| b.backend.descriptor().backend_id.as_str()).collect();
    let measures = validate(&inputs, &ids)?;
    evaluate(backends, &inputs, &measures)
}

type QueryVectors = Vec<Vec<EmbeddingVector>>;

fn embed_queries(backend: &dyn EmbeddingBackend, inputs: &GridInputs<'_>) -> Result<QueryVectors, (String, String)> {
    let jobs: Vec<(&str, &GeneratedImage)> = inputs
        .queries
        .iter()
        .flat_map(|q| inputs.query_images[&q.query_id].iter().map(move |img| (q.query_id.as_str(), img)))
        .collect();
    let vectors = crate::par::map(&jobs, |(qid, img)| {
        embed(&img.image_bytes, backend).map_err(|e| (e.code().to_owned(), format!("query `{qid}`: {e}")))
    });
    let mut vectors = vectors.into_iter();
    inputs
        .queries
        .iter()
        .map(|q| {
            (0..inputs.query_images[&q.query_id].len())
                .map(|_| vectors.next().expect("one vector per image"))
                .collect()
        })
        .collect()
}

fn evaluate(
    backends: &[GridBackend<'_>],
    inputs: &GridInputs<'_>,
    measures: &[Measure],
) -> Result<EvaluationReport, EvalError> {
    let mut order: Vec<&GridBackend<'_>> = backends.iter().collect();
    order.sort_by(|a, b| a.backend.descriptor().backend_id.cmp(&b.backend.descriptor().backend_id));

    let embedded: Vec<Result<QueryVectors, (String, String)>> =
        order.iter().map(|b| embed_queries(b.backend, inputs)).collect();

    let cells: Vec<(usize, Measure)> = (0..order.len())
        .flat_map(|b| measures.iter().map(move |m| (b, *m)))
        .collect();
    let results = crate::par::map(&cells, |(b, measure)| {
        let grid = order[*b];
        let backend_id = grid.backend.descriptor().backend_id.as_str();
        let vectors = embedded[*b]
            .as_ref()
            .map_err(|(code, msg)| failure(backend_id, *measure, code, msg.clone()))?;
        score_cell(grid, inputs, *measure, vectors)
    });

    let mut per_query = Vec::new();
    let mut aggregates = Vec::new();
    let mut failures = Vec::new();
    for ((b, measure), result) in cells.iter().zip(results) {
        let descriptor = order[*b].backend.descriptor();
        match result.and_then(|rows| {
            aggregate(&rows, descriptor.architecture_name.as_str(), *measure, &descriptor.backend_id).map(|agg| (rows, agg))
        }) {
            Ok((rows, agg)) => {
                per_query.extend(rows);
                aggregates.push(agg);
            }
            Err(f) => failures.push(f),
        }
    }

    Ok(EvaluationReport {
        corpus_fingerprint: order
            .first()
            .map(|b| b.index.corpus_fingerprint().to_owned())
            .unwrap_or_default(),
        created_at: chrono::Utc::now(),
        per_query,
        aggregates,
        failures,
    })
}

fn score_cell(
    grid: &GridBackend<'_>,
    inputs: &GridInputs<'_>,
    measure: Measure,
    vectors: &QueryVectors,
) -> Result<Vec<MetricsRow>, CellFailure> {
    let backend_id = grid.backend.descriptor().backend_id.as_str();
    let fail = |code: &str, msg: String| failure(backend_id, measure, code, msg);
    inputs
        .queries
        .iter()
        .zip(vectors)
        .map(|(query, qv)| {
            let ranked = aggregate_multi_query(qv, grid.index, measure, inputs.aggregation, None)
                .map_err(|e| fail(e.code(), format!("query `{}`: {e}", query.query_id)))?;
            let score = |k| {
                precision_at_k(&ranked, inputs.truth, query, k)
                    .map_err(|e| fail(e.code(), format!("query `{}`: {e}", query.query_id)))
            };
            Ok(MetricsRow {
                query_id: query.query_id.clone(),
                backend_id: backend_id.to_owned(),
                measure,
                precision_at_3: score(3)?,
                precision_at_10: score(10)?,
                precision_at_25: score(25)?,
                r_precision: r_precision(&ranked, inputs.truth, query)
                    .map_err(|e| fail(e.code(), format!("query `{}`: {e}", query.query_id)))?,
                relevant_count: inputs.truth.relevant_count(query),
            })
        })
        .collect()
}

fn aggregate(rows: &[MetricsRow], architecture: &str, measure: Measure, backend_id: &str) -> Result<AggregateRow, CellFailure> {
    let stat = |f: fn(&MetricsRow) -> f64| {
        let values: Vec<f64> = rows.iter().map(f).collect();
        aggregate_mean_std(&values).map_err(|e| failure(backend_id, measure, e.code(), e.to_string()))
    };
    Ok(AggregateRow {
        backend_id: backend_id.to_owned(),
        architecture_name: architecture.to_owned(),
        measure,
        query_count: rows.len(),
        precision_at_3: stat(|r| r.precision_at_3)?,
        precision_at_10: stat(|r| r.precision_at_10)?,
        precision_at_25: stat(|r| r.precision_at_25)?,
        r_precision: stat(|r| r.r_precision)?,
    })
}
