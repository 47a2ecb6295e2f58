//! End-to-end retrieval: query source → (prompt → generation) → embedding
//! → ranking.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embedding::{embed, EmbedError, EmbeddingBackend, EmbeddingVector};
use crate::index::{DocumentRecord, FeatureIndex};
use crate::query_gen::{
    build_prompt, generate, AttributeQuery, GeneratedImage, GenerationError, GenerationProvider, GenerationSettings,
    PromptBuildError, PromptSpec, RetryPolicy, Vocabulary, DEFAULT_PREAMBLE,
};
use crate::similarity::{aggregate_multi_query, AggregationMode, Measure, SimilarityError};
use crate::ErrorCode;

/// Serde adapter storing bytes as standard base64 text.
pub mod base64_bytes {
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD
            .decode(text.as_bytes())
            .map_err(serde::de::Error::custom)
    }
}

mod option_base64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match bytes {
            Some(b) => super::base64_bytes::serialize(b, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        #[derive(Deserialize)]
        struct Wrapped(#[serde(with = "super::base64_bytes")] Vec<u8>);
        Ok(Option::<Wrapped>::deserialize(d)?.map(|w| w.0))
    }
}

fn one() -> u32 {
    1
}

/// A retrieval call. Exactly one of `attribute_query`, `prompt_override`
/// and `query_image` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute_query: Option<AttributeQuery>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_override: Option<PromptSpec>,
    /// Encoded image bytes (base64 in JSON).
    #[serde(default, skip_serializing_if = "Option::is_none", with = "option_base64")]
    pub query_image: Option<Vec<u8>>,
    pub measure: Measure,
    pub k: usize,
    #[serde(default = "one")]
    pub num_candidates: u32,
    #[serde(default)]
    pub aggregation_mode: AggregationMode,
    /// 0-based indices of generated candidates to use; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_selection: Option<Vec<usize>>,
}

impl RetrievalRequest {
    fn base(measure: Measure, k: usize) -> Self {
        Self {
            attribute_query: None,
            prompt_override: None,
            query_image: None,
            measure,
            k,
            num_candidates: 1,
            aggregation_mode: AggregationMode::Mean,
            candidate_selection: None,
        }
    }

    /// Classic query-by-example with an image the caller already has.
    pub fn from_image(bytes: Vec<u8>, measure: Measure, k: usize) -> Self {
        Self {
            query_image: Some(bytes),
            ..Self::base(measure, k)
        }
    }

    pub fn from_query(query: AttributeQuery, measure: Measure, k: usize) -> Self {
        Self {
            attribute_query: Some(query),
            ..Self::base(measure, k)
        }
    }

    pub fn from_prompt(spec: PromptSpec, measure: Measure, k: usize) -> Self {
        Self {
            prompt_override: Some(spec),
            ..Self::base(measure, k)
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let sources = [
            self.attribute_query.is_some(),
            self.prompt_override.is_some(),
            self.query_image.is_some(),
        ]
        .iter()
        .filter(|s| **s)
        .count();
        if sources != 1 {
            return Err(format!(
                "exactly one of attribute_query, prompt_override, query_image is required (got {sources})"
            ));
        }
        if self.k == 0 {
            return Err("k must be at least 1".into());
        }
        if self.num_candidates == 0 {
            return Err("num_candidates must be at least 1".into());
        }
        if let Some(sel) = &self.candidate_selection {
            let available = if self.query_image.is_some() { 1 } else { self.num_candidates as usize };
            if sel.is_empty() {
                return Err("candidate_selection is empty".into());
            }
            if let Some(bad) = sel.iter().find(|i| **i >= available) {
                return Err(format!("candidate index {bad} out of range (have {available})"));
            }
            let mut sorted = sel.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != sel.len() {
                return Err("candidate_selection has duplicates".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedDocument {
    pub doc_id: String,
    pub dissimilarity: f64,
    pub image_uri: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub measure: Measure,
    pub query_fingerprint: String,
    pub entries: Vec<RetrievedDocument>,
}

/// Reference to a generated candidate image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRef {
    pub index: usize,
    /// Key under which the image can be fetched back from the cache.
    pub candidate_id: String,
    pub prompt_fingerprint: String,
    pub provider_id: String,
    pub seed: Option<u64>,
    pub content_sha256: String,
    pub selected: bool,
}

/// Wall-clock milliseconds per pipeline step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub generation_ms: f64,
    pub embedding_ms: f64,
    pub scan_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResponse {
    pub ranked: RankedResult,
    pub generated_candidates: Vec<CandidateRef>,
    pub prompt_used: Option<PromptSpec>,
    pub timings: Timings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Step {
    Request,
    Prompt,
    Generation,
    Embedding,
    Scan,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Step::Request => "request",
            Step::Prompt => "prompt",
            Step::Generation => "generation",
            Step::Embedding => "embedding",
            Step::Scan => "scan",
        })
    }
}

#[derive(Debug, Error)]
pub enum PipelineErrorKind {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Prompt(#[from] PromptBuildError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error("candidate cache: {0}")]
    Cache(std::io::Error),
}

/// A component failure tagged with the pipeline step it came from.
#[derive(Debug, Error)]
#[error("{step} step failed: {kind}")]
pub struct PipelineError {
    pub step: Step,
    pub kind: PipelineErrorKind,
}

impl PipelineError {
    fn at(step: Step) -> impl FnOnce(PipelineErrorKind) -> Self {
        move |kind| Self { step, kind }
    }

    fn request(msg: impl Into<String>) -> Self {
        Self {
            step: Step::Request,
            kind: PipelineErrorKind::InvalidRequest(msg.into()),
        }
    }
}

impl ErrorCode for PipelineError {
    fn code(&self) -> &'static str {
        match &self.kind {
            PipelineErrorKind::InvalidRequest(_) => "InvalidRequest",
            PipelineErrorKind::Prompt(e) => e.code(),
            PipelineErrorKind::Generation(e) => e.code(),
            PipelineErrorKind::Embed(e) => e.code(),
            PipelineErrorKind::Similarity(e) => e.code(),
            PipelineErrorKind::Cache(_) => "CacheFailure",
        }
    }
}

/// On-disk store of generated candidates keyed by prompt fingerprint and
/// seed, so re-running a prompt does not call the provider again.
#[derive(Debug, Clone)]
pub struct CandidateCache {
    dir: PathBuf,
}

impl CandidateCache {
    pub fn new(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(spec: &PromptSpec) -> String {
        match spec.settings.seed {
            Some(seed) => format!("{}_{seed}", spec.fingerprint()),
            None => format!("{}_noseed", spec.fingerprint()),
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        key.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_')
            .then(|| self.dir.join(format!("{key}.json")))
    }

    fn read(&self, key: &str) -> Option<Vec<GeneratedImage>> {
        let bytes = std::fs::read(self.path(key)?).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    pub fn get(&self, spec: &PromptSpec) -> Option<Vec<GeneratedImage>> {
        self.read(&Self::key(spec))
            .filter(|images| images.len() == spec.settings.num_images as usize)
    }

    pub fn put(&self, spec: &PromptSpec, images: &[GeneratedImage]) -> std::io::Result<()> {
        let path = self.path(&Self::key(spec)).expect("fingerprint keys are path-safe");
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec(images).map_err(std::io::Error::other)?)?;
        std::fs::rename(tmp, path)
    }

    /// Looks up one image by the `candidate_id` of a [`CandidateRef`].
    pub fn candidate(&self, candidate_id: &str) -> Option<GeneratedImage> {
        let (key, index) = candidate_id.rsplit_once('-')?;
        let index: usize = index.parse().ok()?;
        self.read(key)?.into_iter().nth(index)
    }
}

/// A loaded index with the backend that built it, plus everything needed
/// to turn attribute queries into query images.
pub struct Engine {
    index: Arc<FeatureIndex>,
    backend: Arc<dyn EmbeddingBackend>,
    provider: Option<Arc<dyn GenerationProvider>>,
    vocabulary: Vocabulary,
    preamble: String,
    settings: GenerationSettings,
    retry: RetryPolicy,
    cache: Option<CandidateCache>,
    documents: HashMap<String, String>,
    generation_gate: Mutex<()>,
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine")
            .field("backend", &self.backend.descriptor().backend_id)
            .field("index_docs", &self.index.len())
            .field("provider", &self.provider.as_ref().map(|p| p.provider_id().to_owned()))
            .finish_non_exhaustive()
    }
}

impl Engine {
    /// Fails when `backend` is not the backend that built `index`.
    pub fn new(index: Arc<FeatureIndex>, backend: Arc<dyn EmbeddingBackend>) -> Result<Self, PipelineError> {
        let probe = EmbeddingVector::new(
            &backend.descriptor().backend_id,
            &backend.descriptor().weights_fingerprint,
            vec![0.0; backend.descriptor().embedding_dim.max(1)],
        )
        .map_err(|e| PipelineError::at(Step::Embedding)(e.into()))?;
        crate::index::validate_compatibility(&index, &probe)
            .map_err(|m| PipelineError::at(Step::Scan)(SimilarityError::from(m).into()))?;
        Ok(Self {
            index,
            backend,
            provider: None,
            vocabulary: Vocabulary::default(),
            preamble: DEFAULT_PREAMBLE.to_owned(),
            settings: GenerationSettings::default(),
            retry: RetryPolicy::default(),
            cache: None,
            documents: HashMap::new(),
            generation_gate: Mutex::new(()),
        })
    }

    pub fn with_provider(mut self, provider: Arc<dyn GenerationProvider>) -> Self {
        self.provider = Some(provider);
        self
    }

    pub fn with_vocabulary(mut self, vocabulary: Vocabulary) -> Self {
        self.vocabulary = vocabulary;
        self
    }

    pub fn with_preamble(mut self, preamble: impl Into<String>) -> Self {
        self.preamble = preamble.into();
        self
    }

    pub fn with_settings(mut self, settings: GenerationSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_cache(mut self, cache: CandidateCache) -> Self {
        self.cache = Some(cache);
        self
    }

    /// Records image URIs so responses can point at document images.
    pub fn with_documents(mut self, records: &[DocumentRecord]) -> Self {
        self.documents = records
            .iter()
            .map(|r| (r.doc_id.clone(), r.image_uri.clone()))
            .collect();
        self
    }

    pub fn index(&self) -> &FeatureIndex {
        &self.index
    }

    pub fn backend(&self) -> &dyn EmbeddingBackend {
        self.backend.as_ref()
    }

    pub fn provider(&self) -> Option<&dyn GenerationProvider> {
        self.provider.as_deref()
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn preamble(&self) -> &str {
        &self.preamble
    }

    pub fn settings(&self) -> &GenerationSettings {
        &self.settings
    }

    pub fn cache(&self) -> Option<&CandidateCache> {
        self.cache.as_ref()
    }

    pub fn document_uri(&self, doc_id: &str) -> Option<&str> {
        self.documents.get(doc_id).map(String::as_str)
    }

    /// The prompt this engine would send for `query`.
    pub fn prompt_for(&self, query: &AttributeQuery, num_images: u32) -> Result<PromptSpec, PipelineError> {
        let settings = GenerationSettings {
            num_images,
            ..self.settings.clone()
        };
        build_prompt(query, &self.vocabulary, &self.preamble, Some(settings))
            .map_err(|e| PipelineError::at(Step::Prompt)(e.into()))
    }

    /// Generates (or loads from cache) the candidates for `spec`. Calls to
    /// the provider go through a single gate.
    pub fn generate_candidates(&self, spec: &PromptSpec) -> Result<Vec<GeneratedImage>, PipelineError> {
        let err = PipelineError::at(Step::Generation);
        let provider = self
            .provider
            .as_deref()
            .ok_or_else(|| err(GenerationError::NotConfigured("no generation provider".into()).into()))?;
        let _gate = self.generation_gate.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(spec)) {
            return Ok(hit);
        }
        let images = generate(spec, provider, &self.retry).map_err(|e| PipelineError::at(Step::Generation)(e.into()))?;
        if let Some(cache) = &self.cache {
            cache
                .put(spec, &images)
                .map_err(|e| PipelineError::at(Step::Generation)(PipelineErrorKind::Cache(e)))?;
        }
        Ok(images)
    }

    /// Describes generated `images` for `spec`; `selected` holds the
    /// indices used for retrieval.
    pub fn candidate_refs<B: AsRef<[u8]>>(&self, spec: &PromptSpec, images: &[B], selected: &[usize]) -> Vec<CandidateRef> {
        let key = CandidateCache::key(spec);
        let fingerprint = spec.fingerprint().to_string();
        let provider_id = self.provider.as_ref().map(|p| p.provider_id().to_owned()).unwrap_or_default();
        images
            .iter()
            .enumerate()
            .map(|(i, bytes)| CandidateRef {
                index: i,
                candidate_id: format!("{key}-{i}"),
                prompt_fingerprint: fingerprint.clone(),
                provider_id: provider_id.clone(),
                seed: spec.settings.seed.map(|s| s.wrapping_add(i as u64)),
                content_sha256: hex::encode(Sha256::digest(bytes.as_ref())),
                selected: selected.contains(&i),
            })
            .collect()
    }

    /// Runs the four-step pipeline for `request`.
    pub fn retrieve(&self, request: &RetrievalRequest) -> Result<RetrievalResponse, PipelineError> {
        request.validate().map_err(PipelineError::request)?;
        let mut timings = Timings::default();

        let started = Instant::now();
        let (prompt_used, images): (Option<PromptSpec>, Vec<Vec<u8>>) = if let Some(bytes) = &request.query_image {
            (None, vec![bytes.clone()])
        } else {
            let spec = match (&request.attribute_query, &request.prompt_override) {
                (Some(query), _) => self.prompt_for(query, request.num_candidates)?,
                (None, Some(spec)) => {
                    let spec = spec.clone().with_num_images(request.num_candidates);
                    spec.validate()
                        .map_err(|e| PipelineError::at(Step::Prompt)(PromptBuildError::from(e).into()))?;
                    spec
                }
                (None, None) => unreachable!("validated above"),
            };
            let generated = self.generate_candidates(&spec)?;
            let bytes = generated.iter().map(|g| g.image_bytes.clone()).collect();
            (Some(spec), bytes)
        };
        timings.generation_ms = started.elapsed().as_secs_f64() * 1e3;

        let selected: Vec<usize> = match &request.candidate_selection {
            Some(sel) => sel.clone(),
            None => (0..images.len()).collect(),
        };
        let generated_candidates = match &prompt_used {
            Some(spec) => self.candidate_refs(spec, &images, &selected),
            None => Vec::new(),
        };

        let started = Instant::now();
        let chosen: Vec<&Vec<u8>> = selected.iter().map(|i| &images[*i]).collect();
        let vectors = crate::par::map(&chosen, |bytes| embed(bytes, self.backend.as_ref()))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| PipelineError::at(Step::Embedding)(e.into()))?;
        timings.embedding_ms = started.elapsed().as_secs_f64() * 1e3;

        let started = Instant::now();
        let ranked = aggregate_multi_query(&vectors, &self.index, request.measure, request.aggregation_mode, Some(request.k))
            .map_err(|e| PipelineError::at(Step::Scan)(e.into()))?;
        timings.scan_ms = started.elapsed().as_secs_f64() * 1e3;

        Ok(RetrievalResponse {
            ranked: RankedResult {
                measure: ranked.measure,
                query_fingerprint: ranked.query_fingerprint,
                entries: ranked
                    .entries
                    .into_iter()
                    .map(|e| RetrievedDocument {
                        image_uri: self.document_uri(&e.doc_id).map(str::to_owned),
                        doc_id: e.doc_id,
                        dissimilarity: e.dissimilarity,
                    })
                    .collect(),
            },
            generated_candidates,
            prompt_used,
            timings,
        })
    }
}
