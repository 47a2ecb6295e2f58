use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::index::DocumentRecord;
use crate::query_gen::AttributeQuery;
use crate::similarity::RankedList;

/// Attribute labels per document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    labels: HashMap<String, BTreeSet<String>>,
}

impl GroundTruth {
    pub fn new(labels: HashMap<String, BTreeSet<String>>) -> Self {
        Self { labels }
    }

    /// Labels of every record that carries an `attributes` field.
    pub fn from_records(records: &[DocumentRecord]) -> Self {
        Self {
            labels: records
                .iter()
                .filter_map(|r| r.attributes.clone().map(|a| (r.doc_id.clone(), a)))
                .collect(),
        }
    }

    pub fn labels(&self, doc_id: &str) -> Option<&BTreeSet<String>> {
        self.labels.get(doc_id)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// R: how many labeled documents satisfy `query`.
    pub fn relevant_count(&self, query: &AttributeQuery) -> usize {
        self.labels.values().filter(|a| is_relevant(a, query)).count()
    }

    fn judge(&self, doc_id: &str, query: &AttributeQuery) -> Result<bool, EvalError> {
        self.labels
            .get(doc_id)
            .map(|a| is_relevant(a, query))
            .ok_or_else(|| EvalError::UnlabeledDocument(doc_id.to_owned()))
    }
}

/// All positives present and no negative present.
pub fn is_relevant(doc_attributes: &BTreeSet<String>, query: &AttributeQuery) -> bool {
    query.positives.is_subset(doc_attributes) && query.negatives.is_disjoint(doc_attributes)
}

/// Fraction of the first `k` ranked documents that are relevant.
pub fn precision_at_k(
    ranked: &RankedList,
    truth: &GroundTruth,
    query: &AttributeQuery,
    k: usize,
) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if k > ranked.len() {
        return Err(EvalError::KTooLarge { k, len: ranked.len() });
    }
    let mut hits = 0usize;
    for doc_id in ranked.doc_ids().take(k) {
        if truth.judge(doc_id, query)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / k as f64)
}

/// Precision at R, with R counted over the whole ground truth.
pub fn r_precision(ranked: &RankedList, truth: &GroundTruth, query: &AttributeQuery) -> Result<f64, EvalError> {
    let r = truth.relevant_count(query);
    if r == 0 {
        return Err(EvalError::NoRelevantDocuments(query.query_id.clone()));
    }
    if ranked.len() < r {
        return Err(EvalError::RankedListTooShort { r, len: ranked.len() });
    }
    precision_at_k(ranked, truth, query, r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 for one value.
    pub std: f64,
}

/// Arithmetic mean and sample standard deviation.
pub fn aggregate_mean_std(values: &[f64]) -> Result<MeanStd, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok(MeanStd { mean, std: 0.0 });
    }
    // Corrected two-pass: the second term removes the rounding error left
    // in `mean`.
    let (sq, lin) = values.iter().fold((0.0, 0.0), |(sq, lin), v| {
        let d = v - mean;
        (sq + d * d, lin + d)
    });
    let var = ((sq - lin * lin / n) / (n - 1.0)).max(0.0);
    Ok(MeanStd { mean, std: var.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::{Measure, RankedEntry};

    fn ranked(ids: &[&str]) -> RankedList {
        RankedList {
            measure: Measure::L2,
            query_fingerprint: String::new(),
            entries: ids
                .iter()
                .enumerate()
                .map(|(i, id)| RankedEntry {
                    doc_id: id.to_string(),
                    dissimilarity: i as f64,
                })
                .collect(),
        }
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn truth(pairs: &[(&str, &[&str])]) -> GroundTruth {
        GroundTruth::new(pairs.iter().map(|(d, a)| (d.to_string(), set(a))).collect())
    }

    fn query() -> AttributeQuery {
        AttributeQuery::new("q", ["deterioration"], ["wax_seal"])
    }

    #[test]
    fn relevance_definition() {
        assert!(is_relevant(&set(&["deterioration", "book"]), &query()));
        assert!(!is_relevant(&set(&["deterioration", "wax_seal"]), &query()));
        assert!(!is_relevant(&set(&["book"]), &query()));
    }

    #[test]
    fn precision_examples() {
        let t = truth(&[("a", &["deterioration"]), ("b", &["deterioration"]), ("c", &[]), ("d", &[])]);
        let r = ranked(&["a", "b", "c", "d"]);
        assert_eq!(precision_at_k(&r, &t, &query(), 3).unwrap(), 2.0 / 3.0);
        assert_eq!(precision_at_k(&r, &t, &query(), 2).unwrap(), 1.0);
        assert_eq!(precision_at_k(&r, &t, &query(), 5), Err(EvalError::KTooLarge { k: 5, len: 4 }));
        assert_eq!(precision_at_k(&r, &t, &query(), 0), Err(EvalError::ZeroK));

        let none = truth(&[("a", &[]), ("b", &["wax_seal"])]);
        let r2 = ranked(&["a", "b"]);
        for k in 1..=2 {
            assert_eq!(precision_at_k(&r2, &none, &query(), k).unwrap(), 0.0);
        }
    }

    #[test]
    fn unlabeled_documents_are_errors() {
        let t = truth(&[("a", &["deterioration"])]);
        assert_eq!(
            precision_at_k(&ranked(&["a", "ghost"]), &t, &query(), 2),
            Err(EvalError::UnlabeledDocument("ghost".into()))
        );
    }

    #[test]
    fn r_precision_examples() {
        let t = truth(&[("a", &["deterioration"]), ("b", &[]), ("c", &["deterioration"])]);
        assert_eq!(r_precision(&ranked(&["a", "b", "c"]), &t, &query()).unwrap(), 0.5);
        assert_eq!(r_precision(&ranked(&["c", "a", "b"]), &t, &query()).unwrap(), 1.0);
        assert_eq!(
            r_precision(&ranked(&["a"]), &t, &query()),
            Err(EvalError::RankedListTooShort { r: 2, len: 1 })
        );
        let all = truth(&[("a", &["deterioration"]), ("b", &["deterioration"])]);
        assert_eq!(r_precision(&ranked(&["b", "a"]), &all, &query()).unwrap(), 1.0);
        let none = truth(&[("a", &[])]);
        assert_eq!(
            r_precision(&ranked(&["a"]), &none, &query()),
            Err(EvalError::NoRelevantDocuments("q".into()))
        );
    }

    #[test]
    fn mean_std_examples() {
        let ms = aggregate_mean_std(&[1.0, 1.0, 1.0, 1.0, 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]).unwrap();
        assert!((ms.mean - 6.0 / 7.0).abs() < 1e-15);
        // Σ(x − 6/7)² = 4/49 + 3·16/441 = 84/441; / 6 → √(14/441).
        assert!((ms.std - (14.0f64 / 441.0).sqrt()).abs() < 1e-15);

        assert_eq!(aggregate_mean_std(&[0.375; 5]).unwrap(), MeanStd { mean: 0.375, std: 0.0 });
        let two = aggregate_mean_std(&[0.0, 1.0]).unwrap();
        assert_eq!(two.mean, 0.5);
        assert!((two.std - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(aggregate_mean_std(&[0.7]).unwrap().std, 0.0);
        assert_eq!(aggregate_mean_std(&[]), Err(EvalError::EmptyInput));
    }
}
