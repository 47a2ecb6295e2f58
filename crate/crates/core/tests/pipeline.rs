use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use attriq_core::embedding::{embed, EmbeddingBackend, TestBackend};
use attriq_core::index::{build_index, load_manifest, FeatureIndex};
use attriq_core::pipeline::{CandidateCache, Engine, RetrievalRequest, Step};
use attriq_core::query_gen::{
    Attribute, AttributeQuery, GeneratedImage, GenerationError, GenerationProvider, GenerationSettings, MockProvider,
    PromptSpec, Vocabulary,
};
use attriq_core::similarity::{AggregationMode, Measure};
use attriq_core::ErrorCode;
use attriq_testkit::rank::{argmin, naive_distance};
use attriq_testkit::synth::{self, Page};

const W: u32 = 128;
const H: u32 = 192;

fn vocabulary() -> Vocabulary {
    Vocabulary::new([
        Attribute::new(synth::ILLUMINATED, "is illuminated"),
        Attribute::new(synth::SEAL, "has a wax seal").with_negative("wax seal"),
        Attribute::new(synth::STAINED, "has marked deterioration"),
    ])
    .unwrap()
}

fn settings() -> GenerationSettings {
    GenerationSettings {
        width: W,
        height: H,
        seed: Some(11),
        ..Default::default()
    }
}

fn stained_not_sealed() -> AttributeQuery {
    AttributeQuery::new("q-stained", [synth::STAINED], [synth::SEAL])
}

struct Planted {
    _dir: tempfile::TempDir,
    pages: Vec<Page>,
    index: Arc<FeatureIndex>,
    engine: Engine,
}

/// 199 random pages plus `planted`, a lightly perturbed copy of the mock
/// render for [`stained_not_sealed`].
fn planted_corpus() -> Planted {
    let mut rng = attriq_testkit::rng(2024);
    let mut pages = synth::labeled_corpus(&mut rng, 199, W, H);
    let probe = Engine::new(
        Arc::new(FeatureIndex::from_entries(TestBackend::descriptor_template(), vec![("x".into(), vec![1.0; 64])], 0).unwrap()),
        Arc::new(TestBackend::new()),
    )
    .unwrap()
    .with_vocabulary(vocabulary())
    .with_settings(settings());
    let spec = probe.prompt_for(&stained_not_sealed(), 1).unwrap();
    let rendered = MockProvider.request(&spec).unwrap()[0].decode().unwrap().to_rgb8();
    pages.push(Page {
        doc_id: "planted".into(),
        attributes: BTreeSet::from([synth::STAINED.to_string()]),
        image: synth::perturb(&rendered, &mut rng, 3),
    });

    let dir = tempfile::tempdir().unwrap();
    let manifest = synth::write_corpus(dir.path(), &pages).unwrap();
    let records = load_manifest(&manifest).unwrap();
    let backend = Arc::new(TestBackend::new());
    let (index, report) = build_index(&records, backend.as_ref()).unwrap();
    assert_eq!((report.indexed, report.failures.len()), (200, 0));
    let index = Arc::new(index);
    let engine = Engine::new(Arc::clone(&index), backend)
        .unwrap()
        .with_provider(Arc::new(MockProvider))
        .with_vocabulary(vocabulary())
        .with_settings(settings())
        .with_documents(&records);
    Planted {
        _dir: dir,
        pages,
        index,
        engine,
    }
}

#[test]
fn duplicate_and_mock_queries_hit_rank_one() {
    let p = planted_corpus();
    for doc in [0usize, 57, 123, 198] {
        let page = &p.pages[doc];
        for m in Measure::ALL {
            let resp = p.engine.retrieve(&RetrievalRequest::from_image(page.png(), m, 5)).unwrap();
            let top = &resp.ranked.entries[0];
            assert_eq!((top.doc_id.as_str(), top.dissimilarity), (page.doc_id.as_str(), 0.0), "{m}");
            assert!(top.image_uri.as_deref().unwrap().ends_with(&format!("{}.png", page.doc_id)));
            assert!(resp.generated_candidates.is_empty() && resp.prompt_used.is_none());
        }
    }

    let spec = p.engine.prompt_for(&stained_not_sealed(), 1).unwrap();
    let query_img = MockProvider.request(&spec).unwrap().remove(0);
    let q = embed(&query_img.image_bytes, &TestBackend::new()).unwrap();
    for m in Measure::ALL {
        let dists: Vec<f64> = p.index.iter().map(|(_, v)| naive_distance(m, q.values(), v)).collect();
        assert_eq!(p.index.doc_ids()[argmin(&dists)], "planted", "{m}");

        let mut req = RetrievalRequest::from_query(stained_not_sealed(), m, 10);
        req.num_candidates = 1;
        let resp = p.engine.retrieve(&req).unwrap();
        assert_eq!(resp.ranked.entries[0].doc_id, "planted", "{m}");
        assert_eq!(resp.ranked.entries.len(), 10);
        assert_eq!(resp.prompt_used.as_ref(), Some(&spec));
        assert_eq!(resp.generated_candidates.len(), 1);
        assert!(resp.generated_candidates[0].selected);
    }
}

#[test]
fn prompt_text_for_query() {
    let p = planted_corpus();
    let spec = p.engine.prompt_for(&stained_not_sealed(), 2).unwrap();
    assert_eq!(
        spec.positive_text,
        "a full page of a historical document that is full of handwritten text and has marked deterioration"
    );
    assert_eq!(spec.negative_text.as_deref(), Some("wax seal"));
    assert_eq!(spec.settings.num_images, 2);
}

struct Counting {
    calls: AtomicUsize,
}

impl GenerationProvider for Counting {
    fn provider_id(&self) -> &str {
        "counting"
    }

    fn request(&self, spec: &PromptSpec) -> Result<Vec<GeneratedImage>, GenerationError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        MockProvider.request(spec)
    }
}

#[test]
fn multi_candidate_selection_and_cache() {
    let p = planted_corpus();
    let dir = tempfile::tempdir().unwrap();
    let provider = Arc::new(Counting { calls: AtomicUsize::new(0) });
    let engine = Engine::new(Arc::clone(&p.index), Arc::new(TestBackend::new()))
        .unwrap()
        .with_provider(provider.clone())
        .with_vocabulary(vocabulary())
        .with_settings(settings())
        .with_cache(CandidateCache::new(dir.path()).unwrap());

    let mut req = RetrievalRequest::from_query(stained_not_sealed(), Measure::L2, 7);
    req.num_candidates = 3;
    req.candidate_selection = Some(vec![2, 0]);
    req.aggregation_mode = AggregationMode::Min;
    let first = engine.retrieve(&req).unwrap();
    let second = engine.retrieve(&req).unwrap();
    assert_eq!(provider.calls.load(Ordering::SeqCst), 1);
    assert_eq!(first.ranked, second.ranked);
    assert_eq!(first.generated_candidates, second.generated_candidates);

    let c = &first.generated_candidates;
    assert_eq!(c.len(), 3);
    assert_eq!(c.iter().map(|c| c.selected).collect::<Vec<_>>(), [true, false, true]);
    assert_eq!(c.iter().map(|c| c.seed).collect::<Vec<_>>(), [Some(11), Some(12), Some(13)]);
    let cache = engine.cache().unwrap();
    for cand in c {
        let img = cache.candidate(&cand.candidate_id).unwrap();
        assert_eq!(img.seed, cand.seed);
    }

    // Min over candidates {0, 2} equals the element-wise minimum of their
    // single-image rankings.
    let images = cache.get(&engine.prompt_for(&stained_not_sealed(), 3).unwrap()).unwrap();
    let backend = TestBackend::new();
    let qs: Vec<_> = [0, 2].iter().map(|i| embed(&images[*i].image_bytes, &backend).unwrap()).collect();
    for entry in &first.ranked.entries {
        let v = p.index.get(&entry.doc_id).unwrap();
        let want = qs
            .iter()
            .map(|q| attriq_core::similarity::l2(q.values(), v).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(entry.dissimilarity, want);
    }
}

#[test]
fn single_selection_equals_that_image_alone() {
    let p = planted_corpus();
    for measure in [Measure::L1, Measure::L2, Measure::Cosine] {
        for mode in [AggregationMode::Mean, AggregationMode::Min] {
            let mut req = RetrievalRequest::from_query(stained_not_sealed(), measure, 15);
            req.num_candidates = 3;
            req.candidate_selection = Some(vec![1]);
            req.aggregation_mode = mode;
            let multi = p.engine.retrieve(&req).unwrap();

            let spec = multi.prompt_used.clone().unwrap();
            let candidate = &p.engine.generate_candidates(&spec).unwrap()[1];
            let single = p
                .engine
                .retrieve(&RetrievalRequest::from_image(candidate.image_bytes.clone(), measure, 15))
                .unwrap();
            assert_eq!(multi.ranked.entries, single.ranked.entries);
            assert_eq!(multi.ranked.query_fingerprint, single.ranked.query_fingerprint);
        }
    }
}

#[test]
fn step_tagged_errors() {
    let p = planted_corpus();
    let bad = |req: RetrievalRequest| p.engine.retrieve(&req).unwrap_err();

    let e = bad(RetrievalRequest::from_query(AttributeQuery::new("q", ["gilded"], Vec::<String>::new()), Measure::L1, 3));
    assert_eq!((e.step, e.code()), (Step::Prompt, "UnknownAttribute"));

    let e = bad(RetrievalRequest::from_image(b"junk".to_vec(), Measure::L1, 3));
    assert_eq!((e.step, e.code()), (Step::Embedding, "UndecodableImage"));

    let e = bad(RetrievalRequest::from_image(p.pages[0].png(), Measure::L1, 201));
    assert_eq!((e.step, e.code()), (Step::Scan, "KTooLarge"));

    let e = bad(RetrievalRequest::from_image(p.pages[0].png(), Measure::L1, 0));
    assert_eq!((e.step, e.code()), (Step::Request, "InvalidRequest"));

    let mut odd = settings();
    odd.width = 100;
    let spec = PromptSpec {
        positive_text: "x".into(),
        negative_text: None,
        settings: odd,
    };
    let e = bad(RetrievalRequest::from_prompt(spec, Measure::L1, 3));
    assert_eq!(e.step, Step::Prompt);

    let bare = Engine::new(Arc::clone(&p.index), Arc::new(TestBackend::new()))
        .unwrap()
        .with_vocabulary(vocabulary());
    let e = bare
        .retrieve(&RetrievalRequest::from_query(stained_not_sealed(), Measure::L1, 3))
        .unwrap_err();
    assert_eq!((e.step, e.code()), (Step::Generation, "ProviderNotConfigured"));
}

#[test]
fn engine_rejects_foreign_backend() {
    let p = planted_corpus();
    let other = attriq_testkit::backend::ChannelMeanBackend::default();
    assert_ne!(other.descriptor().embedding_dim, p.index.dim());
    let err = Engine::new(Arc::clone(&p.index), Arc::new(other)).unwrap_err();
    assert_eq!(err.code(), "DimensionMismatch");

    let mut renamed = TestBackend::descriptor_template();
    renamed.backend_id = "renamed".into();
    let index = FeatureIndex::from_entries(renamed, vec![("a".into(), vec![1.0; 64])], 0).unwrap();
    let err = Engine::new(Arc::new(index), Arc::new(TestBackend::new())).unwrap_err();
    assert_eq!(err.code(), "BackendMismatch");
}
