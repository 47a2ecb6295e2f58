//! Brute-force ranking and relevance counting.

use std::collections::BTreeSet;

/// Ids ordered by ascending score, ties by id, via insertion sort.
pub fn reference_order(scored: &[(String, f64)]) -> Vec<String> {
    let mut out: Vec<&(String, f64)> = Vec::with_capacity(scored.len());
    for item in scored {
        let mut at = out.len();
        while at > 0 {
            let prev = out[at - 1];
            let before = prev.1 < item.1 || (prev.1 == item.1 && prev.0 < item.0);
            if before {
                break;
            }
            at -= 1;
        }
        out.insert(at, item);
    }
    out.into_iter().map(|(id, _)| id.clone()).collect()
}

/// True when every positive is present and no negative is.
pub fn relevant(labels: &BTreeSet<String>, positives: &BTreeSet<String>, negatives: &BTreeSet<String>) -> bool {
    for p in positives {
        if !labels.contains(p) {
            return false;
        }
    }
    for n in negatives {
        if labels.contains(n) {
            return false;
        }
    }
    true
}

/// Number of relevant ids among the first `k`.
pub fn hits_at(ranked: &[String], is_relevant: impl Fn(&str) -> bool, k: usize) -> usize {
    let mut hits = 0;
    for id in ranked.iter().take(k) {
        if is_relevant(id) {
            hits += 1;
        }
    }
    hits
}

/// Textbook distance formulas in f64, for brute-force nearest neighbours.
pub fn naive_distance(measure: attriq_core::similarity::Measure, a: &[f32], b: &[f32]) -> f64 {
    use attriq_core::similarity::Measure;
    let pairs = a.iter().zip(b).map(|(x, y)| (f64::from(*x), f64::from(*y)));
    match measure {
        Measure::L1 => pairs.map(|(x, y)| (x - y).abs()).sum(),
        Measure::L2 => pairs.map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        Measure::Cosine => {
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for (x, y) in pairs {
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
            1.0 - dot / (na.sqrt() * nb.sqrt())
        }
    }
}

/// Index of the smallest value; panics on an empty slice.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}
