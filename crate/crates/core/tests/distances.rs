use attriq_core::embedding::{EmbeddingVector, TestBackend};
use attriq_core::index::FeatureIndex;
use attriq_core::similarity::{cosine_distance, dissimilarity, l1, l2, rank, Measure, SimilarityError};
use attriq_testkit::{exact, rank::{naive_distance, reference_order}};
use proptest::prelude::*;
use rand::Rng;

const REL_TOL: f64 = 1e-12;

fn check(measure: &str, got: f64, want: f64, a: &[f32], b: &[f32]) {
    let err = exact::relative_error(got, want);
    assert!(
        err <= REL_TOL,
        "{measure}: got {got:e}, want {want:e}, rel {err:e}, dim {}\na={a:?}\nb={b:?}",
        a.len()
    );
}

#[test]
fn ten_thousand_pairs_match_exact_reference() {
    let mut rng = attriq_testkit::rng(0x5eed);
    for i in 0..10_000 {
        let dim = rng.random_range(2..=512);
        let a = exact::vector(&mut rng, dim);
        let b = if i % 3 == 0 {
            // Mostly shared components exercise the small-angle branch.
            let mut b = a.clone();
            for _ in 0..rng.random_range(1..=3) {
                let j = rng.random_range(0..dim);
                b[j] = exact::component(&mut rng);
            }
            b
        } else {
            exact::vector(&mut rng, dim)
        };
        check("l1", l1(&a, &b).unwrap(), exact::l1(&a, &b), &a, &b);
        check("l2", l2(&a, &b).unwrap(), exact::l2(&a, &b), &a, &b);
        match exact::cosine_distance(&a, &b) {
            Some(want) => check("cosine", cosine_distance(&a, &b).unwrap(), want, &a, &b),
            None => assert!(matches!(cosine_distance(&a, &b), Err(SimilarityError::ZeroVector(_)))),
        }
    }
}

#[test]
fn errors() {
    assert!(matches!(l1(&[1.0], &[1.0, 2.0]), Err(SimilarityError::DimensionMismatch { left: 1, right: 2 })));
    assert!(matches!(l2(&[], &[]), Err(SimilarityError::EmptyVector)));
    assert!(matches!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), Err(SimilarityError::ZeroVector(None))));
}

fn triple(seed: u64, dim: usize) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let mut rng = attriq_testkit::rng(seed);
    (
        exact::vector(&mut rng, dim),
        exact::vector(&mut rng, dim),
        exact::vector(&mut rng, dim),
    )
}

proptest! {
    #[test]
    fn symmetry_and_identity(seed: u64, dim in 1usize..96) {
        let (a, b, _) = triple(seed, dim);
        for m in Measure::ALL {
            if let (Ok(ab), Ok(ba)) = (dissimilarity(m, &a, &b), dissimilarity(m, &b, &a)) {
                prop_assert_eq!(ab, ba);
                prop_assert!(ab >= 0.0);
            }
            if a.iter().any(|v| *v != 0.0) {
                prop_assert_eq!(dissimilarity(m, &a, &a).unwrap(), 0.0);
            }
        }
        if a != b {
            prop_assert!(l1(&a, &b).unwrap() > 0.0);
            prop_assert!(l2(&a, &b).unwrap() > 0.0);
        }
    }

    #[test]
    fn triangle_inequality(seed: u64, dim in 1usize..96) {
        let (a, b, c) = triple(seed, dim);
        for m in [Measure::L1, Measure::L2] {
            let ac = dissimilarity(m, &a, &c).unwrap();
            let via = dissimilarity(m, &a, &b).unwrap() + dissimilarity(m, &b, &c).unwrap();
            prop_assert!(ac <= via * (1.0 + 1e-12), "{m}: {ac} > {via}");
        }
    }

    #[test]
    fn cosine_scale_invariance(seed: u64, dim in 1usize..96, shift in -8i32..8, s in 0.01f32..100.0) {
        let (a, b, _) = triple(seed, dim);
        prop_assume!(a.iter().any(|v| *v != 0.0) && b.iter().any(|v| *v != 0.0));
        let base = cosine_distance(&a, &b).unwrap();
        prop_assert!((0.0..=2.0).contains(&base));
        // Power-of-two scaling is exact in f32, so the distance is too.
        let pow2 = 2f32.powi(shift);
        let scaled: Vec<f32> = b.iter().map(|v| v * pow2).collect();
        prop_assert_eq!(cosine_distance(&a, &scaled).unwrap(), base);
        // Any other factor rounds each component once.
        let scaled: Vec<f32> = b.iter().map(|v| v * s).collect();
        prop_assert!((cosine_distance(&a, &scaled).unwrap() - base).abs() < 1e-6);
    }
}

fn descriptor(dim: usize) -> attriq_core::embedding::BackendDescriptor {
    let mut d = TestBackend::descriptor_template();
    d.backend_id = "synthetic".into();
    d.embedding_dim = dim;
    d
}

fn unit(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.iter().map(|x| (x / n) as f32).collect();
        }
    }
}

#[test]
fn cosine_and_l2_orderings_agree_on_unit_vectors() {
    let mut rng = attriq_testkit::rng(200);
    let mut corpora = 0;
    while corpora < 200 {
        let dim = rng.random_range(2..=64);
        let n = rng.random_range(5..=80);
        let query = unit(&mut rng, dim);
        let entries: Vec<(String, Vec<f32>)> = (0..n).map(|i| (format!("d{i:03}"), unit(&mut rng, dim))).collect();

        let mut dists: Vec<f64> = entries.iter().map(|(_, v)| naive_distance(Measure::L2, v, &query)).collect();
        dists.sort_by(f64::total_cmp);
        if dists.windows(2).any(|w| w[1] - w[0] < 1e-5) {
            continue;
        }
        corpora += 1;

        let index = FeatureIndex::from_entries(descriptor(dim), entries, 0).unwrap();
        let q = EmbeddingVector::for_descriptor(index.descriptor(), query).unwrap();
        let by_l2: Vec<String> = rank(&q, &index, Measure::L2, None).unwrap().doc_ids().map(str::to_owned).collect();
        let by_cos: Vec<String> = rank(&q, &index, Measure::Cosine, None).unwrap().doc_ids().map(str::to_owned).collect();
        assert_eq!(by_l2, by_cos);
    }
}

/// Small nonzero integers, so ties between documents are common.
fn small_vector(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    (0..dim)
        .map(|_| {
            let v = rng.random_range(1i8..=3) as f32;
            if rng.random_bool(0.5) { -v } else { v }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rank_matches_sorted_scan(seed: u64, n in 1usize..60, dim in 1usize..12, dupes in 0usize..5, k in 1usize..70) {
        let mut rng = attriq_testkit::rng(seed);
        let mut entries: Vec<(String, Vec<f32>)> = (0..n)
            .map(|i| (format!("doc{i:02}"), small_vector(&mut rng, dim)))
            .collect();
        // Exact duplicates force ties.
        for d in 0..dupes {
            let v = entries[rng.random_range(0..n)].1.clone();
            entries.push((format!("dup{d}"), v));
        }
        let query: Vec<f32> = small_vector(&mut rng, dim);
        let index = FeatureIndex::from_entries(descriptor(dim), entries.clone(), 0).unwrap();
        let q = EmbeddingVector::for_descriptor(index.descriptor(), query.clone()).unwrap();
        for m in Measure::ALL {
            let scored: Vec<(String, f64)> = entries
                .iter()
                .map(|(id, v)| (id.clone(), dissimilarity(m, &query, v).unwrap()))
                .collect();
            let expected = reference_order(&scored);
            let full = rank(&q, &index, m, None).unwrap();
            prop_assert_eq!(full.doc_ids().collect::<Vec<_>>(), expected.iter().map(String::as_str).collect::<Vec<_>>());
            prop_assert!(full.entries.windows(2).all(|w| w[0].dissimilarity <= w[1].dissimilarity));
            if k <= index.len() {
                let top = rank(&q, &index, m, Some(k)).unwrap();
                prop_assert_eq!(&top.entries[..], &full.entries[..k]);
            } else {
                let too_large = matches!(rank(&q, &index, m, Some(k)), Err(SimilarityError::KTooLarge { .. }));
                prop_assert!(too_large);
            }
        }
    }
}
