use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use attriq_core::embedding::{
    load_backend, load_backend_from_path, BackendDescriptorFile, EmbeddingBackend, TestBackend, TEST_BACKEND_ID,
};
use attriq_core::evaluation::{emit_report, run_grid_indexed, GridBackend, GridInputs, GroundTruth, ReportFormat};
use attriq_core::index::{build_index, load_index, load_manifest, save_index, FeatureIndex, MAGIC};
use attriq_core::pipeline::{CandidateCache, CandidateRef, Engine, RankedResult, RetrievalRequest};
use attriq_core::query_gen::{
    build_prompt, generate, load_query_set, AttributeQuery, GeneratedImage, GenerationProvider, GenerationSettings,
    HttpProvider, MockProvider, PromptSpec, RetryPolicy, Vocabulary, DEFAULT_PREAMBLE,
};
use serde::Serialize;

use crate::args::{BuildArgs, EvalArgs, GenerateArgs, GenerationArgs, InspectArgs, OutputFormat, PromptSource, QueryArgs};
use crate::config::{Config, ProviderKind};
use crate::error::CliError;

type Out<'a> = &'a mut dyn Write;

fn write_out(out: Out<'_>, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::new("IoFailure", format!("stdout: {e}")))
}

fn required(value: Option<PathBuf>, fallback: &Option<PathBuf>, flag: &str, key: &str) -> Result<PathBuf, CliError> {
    value
        .or_else(|| fallback.clone())
        .ok_or_else(|| CliError::usage(format!("{flag} is required (or set `{key}` in the config)")))
}

/// `test`, a descriptor path, or the `backend_id` of a configured
/// descriptor.
pub fn resolve_backend(spec: &str, config: &Config) -> Result<Arc<dyn EmbeddingBackend>, CliError> {
    if spec == TEST_BACKEND_ID {
        return Ok(Arc::new(TestBackend::new()));
    }
    let path = Path::new(spec);
    if path.is_file() {
        return Ok(load_backend_from_path(path)?);
    }
    for desc in &config.backends {
        let file = BackendDescriptorFile::load(desc)?;
        if file.backend_id == spec {
            return Ok(load_backend(&file, desc.parent().unwrap_or(Path::new(".")))?);
        }
    }
    Err(CliError::new(
        "BackendLoadFailure",
        format!("unknown backend `{spec}`: not `test`, not a descriptor file, not a configured backend id"),
    ))
}

/// The backend that built `index`, among `explicit` or else by id.
pub fn backend_for_index(
    index: &FeatureIndex,
    explicit: &[String],
    config: &Config,
) -> Result<Arc<dyn EmbeddingBackend>, CliError> {
    if explicit.is_empty() {
        return resolve_backend(index.backend_id(), config);
    }
    for spec in explicit {
        let backend = resolve_backend(spec, config)?;
        if backend.descriptor().backend_id == index.backend_id() {
            return Ok(backend);
        }
    }
    Err(CliError::new(
        "BackendMismatch",
        format!("none of the given backends built the index (backend_id `{}`)", index.backend_id()),
    ))
}

pub fn provider(kind: Option<ProviderKind>, config: &Config) -> Result<Arc<dyn GenerationProvider>, CliError> {
    match kind.unwrap_or(config.provider.kind) {
        ProviderKind::Mock => Ok(Arc::new(MockProvider)),
        ProviderKind::Http => Ok(Arc::new(HttpProvider::from_env(config.provider.http_config()?)?)),
    }
}

pub fn retry_policy(config: &Config) -> RetryPolicy {
    let mut policy = RetryPolicy::default();
    if let Some(n) = config.provider.max_retries {
        policy.max_retries = n;
    }
    policy
}

pub fn vocabulary(args: &GenerationArgs, config: &Config) -> Result<Vocabulary, CliError> {
    match args.vocabulary.as_ref().or(config.vocabulary.as_ref()) {
        Some(path) => Ok(Vocabulary::load(path)?),
        None => Ok(Vocabulary::default()),
    }
}

fn require_vocabulary(vocab: &Vocabulary) -> Result<(), CliError> {
    if vocab.is_empty() {
        return Err(CliError::usage(
            "attribute queries need a vocabulary: pass --vocabulary or set `vocabulary` in the config",
        ));
    }
    Ok(())
}

pub fn preamble(args: &GenerationArgs, config: &Config) -> String {
    args.preamble
        .clone()
        .or_else(|| config.preamble.clone())
        .unwrap_or_else(|| DEFAULT_PREAMBLE.to_owned())
}

pub fn settings(args: &GenerationArgs, config: &Config) -> GenerationSettings {
    let mut s = config.generation_settings();
    if args.seed.is_some() {
        s.seed = args.seed;
    }
    if let Some(w) = args.width {
        s.width = w;
    }
    if let Some(h) = args.height {
        s.height = h;
    }
    s
}

pub fn cache(args: &GenerationArgs, config: &Config) -> Result<Option<CandidateCache>, CliError> {
    match args.cache_dir.as_ref().or(config.cache.dir.as_ref()) {
        Some(dir) => Ok(Some(CandidateCache::new(dir).map_err(|e| CliError::io(dir, e))?)),
        None => Ok(None),
    }
}

enum Source {
    Attributes(AttributeQuery),
    Prompt(PromptSpec),
}

fn sources(src: &PromptSource, settings: &GenerationSettings) -> Result<Vec<Source>, CliError> {
    let given = [!src.positives.is_empty() || !src.negatives.is_empty(), src.query_file.is_some(), src.prompt.is_some()]
        .iter()
        .filter(|g| **g)
        .count();
    if given > 1 {
        return Err(CliError::usage(
            "use only one of --positive/--negative, --query-file, --prompt",
        ));
    }
    if let Some(path) = &src.query_file {
        let mut queries = load_query_set(path)?;
        if let Some(id) = &src.query_id {
            queries.retain(|q| &q.query_id == id);
            if queries.is_empty() {
                return Err(CliError::usage(format!("no query `{id}` in {}", path.display())));
            }
        }
        return Ok(queries.into_iter().map(Source::Attributes).collect());
    }
    if let Some(text) = &src.prompt {
        return Ok(vec![Source::Prompt(PromptSpec {
            positive_text: text.clone(),
            negative_text: src.negative_prompt.clone(),
            settings: settings.clone(),
        })]);
    }
    if !src.positives.is_empty() || !src.negatives.is_empty() {
        return Ok(vec![Source::Attributes(AttributeQuery::new(
            "query",
            src.positives.clone(),
            src.negatives.clone(),
        ))]);
    }
    Ok(Vec::new())
}

pub fn index_build(args: BuildArgs, config: &Config, out: Out<'_>) -> Result<(), CliError> {
    let manifest = required(args.corpus, &config.manifest, "--corpus", "manifest")?;
    let dest = required(args.out, &config.index, "--out", "index")?;
    let backend = resolve_backend(&args.backend, config)?;
    let records = load_manifest(&manifest)?;
    let (index, report) = build_index(&records, backend.as_ref())?;
    for f in &report.failures {
        eprintln!("skipped {}: code={} message={:?}", f.doc_id, f.code, f.message);
    }
    save_index(&index, &dest)?;
    write_out(
        out,
        &format!(
            "indexed {} of {} documents with backend `{}` (dim {}) -> {}\n",
            report.indexed,
            records.len(),
            index.backend_id(),
            index.dim(),
            dest.display()
        ),
    )
}

#[derive(Serialize)]
struct IndexSummary<'a> {
    path: String,
    documents: usize,
    build_timestamp: i64,
    corpus_fingerprint: &'a str,
    descriptor: &'a attriq_core::embedding::BackendDescriptor,
}

pub fn index_inspect(args: InspectArgs, config: &Config, out: Out<'_>) -> Result<(), CliError> {
    let path = required(args.index, &config.index, "--index", "index")?;
    let index = load_index(&path)?;
    let summary = IndexSummary {
        path: path.display().to_string(),
        documents: index.len(),
        build_timestamp: index.build_timestamp(),
        corpus_fingerprint: index.corpus_fingerprint(),
        descriptor: index.descriptor(),
    };
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    write_out(out, &text)
}

pub fn generate_cmd(args: GenerateArgs, config: &Config, out: Out<'_>) -> Result<(), CliError> {
    if args.n == 0 {
        return Err(CliError::usage("--n must be at least 1"));
    }
    let mut settings = settings(&args.generation, config);
    settings.num_images = args.n;
    let srcs = sources(&args.source, &settings)?;
    if srcs.is_empty() {
        return Err(CliError::usage("give --positive/--negative, --query-file or --prompt"));
    }
    let vocab = vocabulary(&args.generation, config)?;
    let preamble = preamble(&args.generation, config);
    let provider = provider(args.generation.provider, config)?;
    let policy = retry_policy(config);
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;

    let mut listing = String::new();
    for src in srcs {
        let (id, spec) = match src {
            Source::Attributes(q) => {
                require_vocabulary(&vocab)?;
                let spec = build_prompt(&q, &vocab, &preamble, Some(settings.clone()))?;
                (q.query_id, spec)
            }
            Source::Prompt(spec) => {
                spec.validate()?;
                ("prompt".to_owned(), spec)
            }
        };
        tracing::info!(query = %id, prompt = %spec.positive_text, "generating");
        let images = generate(&spec, provider.as_ref(), &policy)?;
        for (i, img) in images.iter().enumerate() {
            let path = args.out.join(format!("{id}-{i}.{}", img.extension()));
            std::fs::write(&path, &img.image_bytes).map_err(|e| CliError::io(&path, e))?;
            listing.push_str(&format!("{}\n", path.display()));
        }
    }
    write_out(out, &listing)
}

/// `attriq query` JSON output: the response minus timings.
#[derive(Serialize)]
struct QueryOutput<'a> {
    ranked: &'a RankedResult,
    generated_candidates: &'a [CandidateRef],
    prompt_used: &'a Option<PromptSpec>,
}

pub fn query_cmd(args: QueryArgs, config: &Config, out: Out<'_>) -> Result<(), CliError> {
    let path = required(args.index, &config.index, "--index", "index")?;
    let index = Arc::new(load_index(&path)?);
    let explicit: Vec<String> = args.backend.into_iter().collect();
    let backend = backend_for_index(&index, &explicit, config)?;
    let settings = settings(&args.generation, config);
    let mut srcs = sources(&args.source, &settings)?;
    if srcs.len() > 1 {
        return Err(CliError::usage("the query file holds several queries; pick one with --query-id"));
    }
    let vocab = vocabulary(&args.generation, config)?;

    let mut engine = Engine::new(index, backend)?
        .with_preamble(preamble(&args.generation, config))
        .with_settings(settings)
        .with_retry(retry_policy(config));
    if let Some(manifest) = args.manifest.as_ref().or(config.manifest.as_ref()) {
        engine = engine.with_documents(&load_manifest(manifest)?);
    }
    if let Some(cache) = cache(&args.generation, config)? {
        engine = engine.with_cache(cache);
    }

    let mut request = match (args.image, srcs.pop()) {
        (Some(_), Some(_)) => return Err(CliError::usage("--image cannot be combined with a prompt source")),
        (Some(img), None) => {
            let bytes = std::fs::read(&img).map_err(|e| CliError::io(&img, e))?;
            RetrievalRequest::from_image(bytes, args.measure, args.k)
        }
        (None, Some(Source::Attributes(q))) => {
            require_vocabulary(&vocab)?;
            engine = engine.with_vocabulary(vocab).with_provider(provider(args.generation.provider, config)?);
            RetrievalRequest::from_query(q, args.measure, args.k)
        }
        (None, Some(Source::Prompt(spec))) => {
            engine = engine.with_provider(provider(args.generation.provider, config)?);
            RetrievalRequest::from_prompt(spec, args.measure, args.k)
        }
        (None, None) => return Err(CliError::usage("give --image, --positive/--negative, --query-file or --prompt")),
    };
    request.num_candidates = args.num_candidates;
    request.aggregation_mode = args.aggregation.into();
    request.candidate_selection = args.select;

    let resp = engine.retrieve(&request)?;
    if args.timings {
        let t = resp.timings;
        eprintln!(
            "timings_ms generation={:.3} embedding={:.3} scan={:.3}",
            t.generation_ms, t.embedding_ms, t.scan_ms
        );
    }
    let text = match args.format {
        OutputFormat::Text => resp
            .ranked
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| format!("{}\t{}\t{}\n", i + 1, e.doc_id, e.dissimilarity))
            .collect::<String>(),
        OutputFormat::Json => {
            let body = QueryOutput {
                ranked: &resp.ranked,
                generated_candidates: &resp.generated_candidates,
                prompt_used: &resp.prompt_used,
            };
            serde_json::to_string_pretty(&body).expect("response serializes") + "\n"
        }
    };
    write_out(out, &text)
}

fn index_files(args: &EvalArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut files = args.indexes.clone();
    if let Some(dir) = &args.index_dir {
        let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
        let mut found = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| CliError::io(dir, e))?.path();
            if path.is_file() && has_index_magic(&path) {
                found.push(path);
            }
        }
        found.sort();
        files.extend(found);
    }
    if files.is_empty() {
        return Err(CliError::usage("no index files: give --index-dir or --index"));
    }
    Ok(files)
}

fn has_index_magic(path: &Path) -> bool {
    use std::io::Read;
    let mut head = [0u8; 8];
    std::fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut head))
        .is_ok()
        && &head == MAGIC
}

/// `<query_id>-<n>.<ext>` files from `dir`, ordered by `n`.
fn images_from_dir(dir: &Path, queries: &[AttributeQuery]) -> Result<HashMap<String, Vec<GeneratedImage>>, CliError> {
    let mut listing: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    listing.sort();
    let mut out = HashMap::new();
    for q in queries {
        let prefix = format!("{}-", q.query_id);
        let mut numbered: Vec<(u32, &PathBuf)> = listing
            .iter()
            .filter_map(|p| {
                let stem = p.file_stem()?.to_str()?;
                let n = stem.strip_prefix(&prefix)?.parse().ok()?;
                Some((n, p))
            })
            .collect();
        numbered.sort();
        if numbered.is_empty() {
            return Err(CliError::usage(format!(
                "no images for query `{}` in {} (expected {prefix}<n>.<ext>)",
                q.query_id,
                dir.display()
            )));
        }
        let images = numbered
            .into_iter()
            .map(|(_, p)| {
                let bytes = std::fs::read(p).map_err(|e| CliError::io(p, e))?;
                Ok(GeneratedImage::external(bytes, "file"))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        out.insert(q.query_id.clone(), images);
    }
    Ok(out)
}

pub fn eval_cmd(args: EvalArgs, config: &Config, out: Out<'_>) -> Result<(), CliError> {
    let files = index_files(&args)?;
    let indexes: Vec<FeatureIndex> = files.iter().map(load_index).collect::<Result<_, _>>()?;
    let backends: Vec<Arc<dyn EmbeddingBackend>> = indexes
        .iter()
        .map(|ix| backend_for_index(ix, &args.backends, config))
        .collect::<Result<_, _>>()?;
    let records = load_manifest(&args.truth)?;
    let truth = GroundTruth::from_records(&records);
    let queries = load_query_set(&args.queries)?;

    let images = match &args.query_images {
        Some(dir) => images_from_dir(dir, &queries)?,
        None => {
            let vocab = vocabulary(&args.generation, config)?;
            require_vocabulary(&vocab)?;
            let preamble = preamble(&args.generation, config);
            let mut settings = settings(&args.generation, config);
            settings.num_images = args.num_candidates;
            let provider = provider(args.generation.provider, config)?;
            let policy = retry_policy(config);
            let mut map = HashMap::new();
            for q in &queries {
                let spec = build_prompt(q, &vocab, &preamble, Some(settings.clone()))?;
                map.insert(q.query_id.clone(), generate(&spec, provider.as_ref(), &policy)?);
            }
            map
        }
    };

    let grid: Vec<GridBackend<'_>> = backends
        .iter()
        .zip(&indexes)
        .map(|(b, index)| GridBackend {
            backend: b.as_ref(),
            index,
        })
        .collect();
    let report = run_grid_indexed(
        &grid,
        GridInputs {
            truth: &truth,
            queries: &queries,
            query_images: &images,
            measures: &args.measures,
            aggregation: args.aggregation.into(),
        },
    )?;
    for f in &report.failures {
        eprintln!("cell failed backend={} measure={}: code={} message={:?}", f.backend_id, f.measure, f.code, f.message);
    }

    match &args.report {
        Some(path) => {
            let format = ReportFormat::from_path(path)
                .ok_or_else(|| CliError::usage(format!("{}: use a .csv, .md or .json extension", path.display())))?;
            std::fs::write(path, emit_report(&report, format)?).map_err(|e| CliError::io(path, e))?;
            write_out(
                out,
                &format!(
                    "wrote {} ({} rows, {} failed cells)\n",
                    path.display(),
                    report.aggregates.len(),
                    report.failures.len()
                ),
            )
        }
        None => write_out(out, &String::from_utf8_lossy(&emit_report(&report, ReportFormat::Markdown)?)),
    }
}

/// Builds the engine synchronously, then runs the service on its own
/// runtime.
pub fn serve_cmd(args: crate::args::ServeArgs, config: &Config) -> Result<(), CliError> {
    let path = required(args.index, &config.index, "--index", "index")?;
    let index = Arc::new(load_index(&path)?);
    let explicit: Vec<String> = args.backend.into_iter().collect();
    let backend = backend_for_index(&index, &explicit, config)?;
    let cache_dir = args
        .generation
        .cache_dir
        .clone()
        .or_else(|| config.cache.dir.clone())
        .unwrap_or_else(|| std::env::temp_dir().join("attriq-candidates"));
    let cache = CandidateCache::new(&cache_dir).map_err(|e| CliError::io(&cache_dir, e))?;
    let mut engine = Engine::new(index, backend)?
        .with_vocabulary(vocabulary(&args.generation, config)?)
        .with_preamble(preamble(&args.generation, config))
        .with_settings(settings(&args.generation, config))
        .with_retry(retry_policy(config))
        .with_cache(cache)
        .with_provider(provider(args.generation.provider, config)?);
    let mut truth = None;
    if let Some(manifest) = args.manifest.as_ref().or(config.manifest.as_ref()) {
        let records = load_manifest(manifest)?;
        engine = engine.with_documents(&records);
        truth = Some(GroundTruth::from_records(&records));
    }
    let state = crate::server::AppState::new(engine, truth);

    let host = args.host.unwrap_or_else(|| config.server.host.clone());
    let port = args.port.unwrap_or(config.server.port);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::new("IoFailure", format!("runtime: {e}")))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host.as_str(), port))
            .await
            .map_err(|e| CliError::new("IoFailure", format!("bind {host}:{port}: {e}")))?;
        crate::server::serve(state, listener)
            .await
            .map_err(|e| CliError::new("IoFailure", format!("server: {e}")))
    })
}
