//! The experiment grid: every configured model × strategy × corpus note ×
//! repetition, run sequentially against the backend. Results are appended
//! and flushed record by record, so a killed run leaves a valid prefix, and
//! a failing cell is recorded and skipped, never fatal.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{load_catalog, IcdCatalog};
use crate::client::{
    assert_local_endpoint, EgressError, GenerationRequest, GenerationResult, GenerationStatus,
    InferenceClient,
};
use crate::config::{
    config_issues, resolved_toml, ExperimentConfig, QueryMode, ScorerSetting, StrategyKind,
    StrategySpec,
};
use crate::corpus::{gold_response_json, load_corpus, validate_corpus, CaseNote, Corpus};
use crate::eval::{aggregate, score_response_with_threshold, ResponseScore, RunAggregate};
use crate::prompt::{
    default_exemplars, BuiltPrompt, PromptEngine, PromptStrategy, DEFAULT_EXEMPLAR_IDS,
};
use crate::report::{write_aggregate_csv, write_plot_data, write_summary, TeeLog};
use crate::retrieval::{
    assemble_context, build_index, chunk_catalog, chunk_lines, diagnosis_section, retrieve, Index,
    RetrievalError, ScorerKind,
};
use crate::schema::constraint_document;

/// One problem found before the run started.
#[derive(Debug, Clone, Error)]
pub enum PreflightError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Egress(EgressError),
    #[error("backend: {0}")]
    Backend(String),
    #[error("model {0:?} is not available on the backend")]
    ModelMissing(String),
    #[error("catalog {path:?}: {detail}")]
    Catalog { path: PathBuf, detail: String },
    #[error("corpus {path:?}: {detail}")]
    Corpus { path: PathBuf, detail: String },
    #[error("note {note_id}: gold code {code} is not in the catalog")]
    GoldCodeMissing { note_id: u32, code: String },
    #[error("few-shot exemplar note {0} is not in the corpus")]
    ExemplarMissing(u32),
}

/// Check everything the run will rely on, collecting every problem rather
/// than stopping at the first: config sanity, endpoint locality, backend
/// reachability and model availability, catalog, corpus, and gold codes.
pub fn preflight(config: &ExperimentConfig) -> Result<(), Vec<PreflightError>> {
    let mut errors: Vec<PreflightError> =
        config_issues(config).into_iter().map(PreflightError::Config).collect();

    match assert_local_endpoint(&config.endpoint) {
        Err(e) => errors.push(PreflightError::Egress(e)),
        Ok(()) => match InferenceClient::new(config.endpoint.clone()) {
            Err(e) => errors.push(PreflightError::Backend(e.to_string())),
            Ok(client) => match client.list_models() {
                Err(e) => errors.push(PreflightError::Backend(e.to_string())),
                Ok(available) => {
                    for model in &config.models {
                        if !available.contains(model) {
                            errors.push(PreflightError::ModelMissing(model.clone()));
                        }
                    }
                    let rag_embeds = config.retrieval.scorer == ScorerSetting::Embedding
                        && config.strategies.iter().any(|s| s.kind == StrategyKind::Rag);
                    if rag_embeds && !available.contains(&config.retrieval.embedding_model) {
                        errors.push(PreflightError::ModelMissing(
                            config.retrieval.embedding_model.clone(),
                        ));
                    }
                }
            },
        },
    }

    let catalog = match load_catalog(&config.catalog_path) {
        Err(e) => {
            errors.push(PreflightError::Catalog {
                path: config.catalog_path.clone(),
                detail: e.to_string(),
            });
            None
        }
        Ok((catalog, parse_errors)) => {
            if catalog.is_empty() {
                errors.push(PreflightError::Catalog {
                    path: config.catalog_path.clone(),
                    detail: format!("no usable entries ({} rejected lines)", parse_errors.len()),
                });
                None
            } else {
                Some(catalog)
            }
        }
    };

    match load_corpus(&config.corpus_path) {
        Err(e) => errors.push(PreflightError::Corpus {
            path: config.corpus_path.clone(),
            detail: e.to_string(),
        }),
        Ok(corpus) => {
            if corpus.is_empty() {
                errors.push(PreflightError::Corpus {
                    path: config.corpus_path.clone(),
                    detail: "contains no notes".to_string(),
                });
            }
            if let Some(catalog) = &catalog {
                for miss in validate_corpus(&corpus, catalog).missing {
                    errors.push(PreflightError::GoldCodeMissing {
                        note_id: miss.note_id,
                        code: miss.code,
                    });
                }
            }
            for spec in &config.strategies {
                if spec.kind == StrategyKind::FewShot {
                    let default_ids = DEFAULT_EXEMPLAR_IDS.to_vec();
                    let ids = spec.exemplar_note_ids.as_ref().unwrap_or(&default_ids);
                    for id in ids {
                        if corpus.note(*id).is_none() {
                            errors.push(PreflightError::ExemplarMissing(*id));
                        }
                    }
                }
            }
        }
    }

    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("preflight found {} problem(s)", .0.len())]
    Preflight(Vec<PreflightError>),
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("run setup failed: {0}")]
    Setup(String),
    #[error("nothing was scored")]
    Empty,
}

/// One raw response as appended to `responses.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub model: String,
    pub strategy: String,
    pub note_id: u32,
    pub repetition: u32,
    /// True when the target note also appeared as a prompt exemplar.
    pub leakage_flag: bool,
    pub status: GenerationStatus,
    pub duration_s: f64,
    pub text: String,
}

/// Where a finished run put its files.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub run_dir: PathBuf,
    pub responses_path: PathBuf,
    pub scores_path: PathBuf,
    pub aggregate_path: PathBuf,
    pub summary_path: PathBuf,
    pub log_path: PathBuf,
    pub config_path: PathBuf,
    pub plots_dir: PathBuf,
    pub scores: Vec<ResponseScore>,
}

fn setup<E: std::fmt::Display>(e: E) -> RunError {
    RunError::Setup(e.to_string())
}

fn resolve_strategy(
    spec: &StrategySpec,
    corpus: &Corpus,
    config: &ExperimentConfig,
) -> Result<PromptStrategy, RunError> {
    Ok(match spec.kind {
        StrategyKind::ZeroShot => PromptStrategy::ZeroShot,
        StrategyKind::FewShot => {
            let exemplars = match &spec.exemplar_note_ids {
                None => default_exemplars(corpus),
                Some(ids) => ids
                    .iter()
                    .map(|id| {
                        corpus
                            .note(*id)
                            .map(|n| (n.clone(), gold_response_json(n)))
                            .ok_or_else(|| setup(format!("exemplar note {id} is not in the corpus")))
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            };
            if exemplars.is_empty() {
                return Err(setup("few-shot strategy resolved to zero exemplars"));
            }
            PromptStrategy::FewShot { exemplars }
        }
        StrategyKind::Rag => PromptStrategy::Rag {
            k: spec.k.unwrap_or(config.retrieval.k),
            token_budget: spec.token_budget.unwrap_or(config.retrieval.token_budget),
        },
    })
}

/// Index the catalog (plus any extra reference documents, in name order)
/// with the configured chunking and scorer.
fn build_run_index(
    config: &ExperimentConfig,
    catalog: &IcdCatalog,
    client: &InferenceClient,
) -> Result<Index, RunError> {
    let mut chunks = chunk_catalog(catalog, config.retrieval.lines_per_chunk).map_err(setup)?;
    if let Some(dir) = &config.context_docs_dir {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|entry| entry.ok())
            .map(|entry| entry.path())
            .filter(|p| p.extension().is_some_and(|ext| ext == "txt"))
            .collect();
        paths.sort();
        for path in paths {
            let text = fs::read_to_string(&path)?;
            let label = path.file_name().unwrap_or_default().to_string_lossy().to_string();
            match chunk_lines(&label, &text, config.retrieval.lines_per_chunk) {
                Ok(more) => chunks.extend(more),
                Err(RetrievalError::EmptyDocument(_)) => {}
                Err(e) => return Err(setup(e)),
            }
        }
    }
    let scorer = match config.retrieval.scorer {
        ScorerSetting::Lexical => ScorerKind::Lexical,
        ScorerSetting::Embedding => {
            ScorerKind::Embedding { model: config.retrieval.embedding_model.clone() }
        }
    };
    build_index(chunks, scorer, Some(client)).map_err(setup)
}

/// Build the prompt for one cell. Per-cell failures (e.g. an embedding error
/// while retrieving) come back as a message, to be recorded, not raised.
fn build_cell_prompt(
    engine: &PromptEngine,
    strategy: &PromptStrategy,
    note: &CaseNote,
    config: &ExperimentConfig,
    index: Option<&Index>,
    client: &InferenceClient,
) -> Result<BuiltPrompt, String> {
    match strategy {
        PromptStrategy::ZeroShot => Ok(engine.zero_shot(note, config.schema_variant)),
        PromptStrategy::FewShot { exemplars } => {
            engine.few_shot(note, exemplars).map_err(|e| e.to_string())
        }
        PromptStrategy::Rag { k, token_budget } => {
            let index = index.ok_or("no retrieval index was built")?;
            let query = match config.retrieval.query_mode {
                QueryMode::FullNote => note.note_text.clone(),
                QueryMode::DiagnosisLines => {
                    diagnosis_section(&note.note_text).unwrap_or_else(|| note.note_text.clone())
                }
            };
            let hits = retrieve(index, &query, *k, Some(client)).map_err(|e| e.to_string())?;
            let context = assemble_context(&hits, *token_budget);
            Ok(engine.rag(note, config.schema_variant, &context))
        }
    }
}

fn create_run_dir(output_dir: &Path) -> std::io::Result<PathBuf> {
    fs::create_dir_all(output_dir)?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
    let mut attempt = 0u32;
    loop {
        let name = if attempt == 0 {
            format!("run-{stamp}")
        } else {
            format!("run-{stamp}-{}", attempt + 1)
        };
        let dir = output_dir.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => attempt += 1,
            Err(e) => return Err(e),
        }
    }
}

fn append_jsonl<T: Serialize>(file: &mut File, value: &T) -> std::io::Result<()> {
    let mut line = serde_json::to_string(value).expect("record serializes");
    line.push('\n');
    file.write_all(line.as_bytes())?;
    file.flush()
}

/// Run the whole grid. Requires a clean preflight. Generation failures
/// (timeouts, server errors, empty replies) are recorded per cell and the
/// grid continues; only setup and I/O problems abort.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArtifacts, RunError> {
    preflight(config).map_err(RunError::Preflight)?;

    let (catalog, _) = load_catalog(&config.catalog_path)?;
    let corpus = load_corpus(&config.corpus_path).map_err(setup)?;
    let client = InferenceClient::new(config.endpoint.clone()).map_err(setup)?;
    let engine =
        PromptEngine { style: config.template_style, schema_in_prompt: config.schema_in_prompt };
    let strategies: Vec<PromptStrategy> = config
        .strategies
        .iter()
        .map(|spec| resolve_strategy(spec, &corpus, config))
        .collect::<Result<_, _>>()?;
    let index = if strategies.iter().any(|s| matches!(s, PromptStrategy::Rag { .. })) {
        Some(build_run_index(config, &catalog, &client)?)
    } else {
        None
    };

    let run_dir = create_run_dir(&config.output_dir)?;
    let responses_path = run_dir.join("responses.jsonl");
    let scores_path = run_dir.join("scores.jsonl");
    let aggregate_path = run_dir.join("aggregate.csv");
    let summary_path = run_dir.join("summary.md");
    let log_path = run_dir.join("run.log");
    let config_path = run_dir.join("config.resolved");
    let plots_dir = run_dir.join("plots");

    fs::write(&config_path, resolved_toml(config))?;
    let mut log = TeeLog::create(&log_path)?;
    let mut responses_file = File::create(&responses_path)?;
    let mut scores_file = File::create(&scores_path)?;

    let constraint =
        if config.use_constraint { Some(constraint_document(config.schema_variant)) } else { None };
    let mut scores: Vec<ResponseScore> = Vec::new();

    for model in &config.models {
        for strategy in &strategies {
            for note in &corpus.notes {
                for repetition in 1..=config.repetitions {
                    log.line("==========================")?;
                    log.line(&format!("Starting query using model {model} please wait..."))?;

                    let (leakage_flag, mut result) = match build_cell_prompt(
                        &engine, strategy, note, config, index.as_ref(), &client,
                    ) {
                        Ok(built) => {
                            let request = GenerationRequest {
                                model: model.clone(),
                                prompt: built.text,
                                constraint: constraint.clone(),
                                temperature: config.generation.temperature,
                                seed: config.generation.seed,
                            };
                            (built.leakage_flag, client.generate(&request))
                        }
                        Err(detail) => (
                            false,
                            GenerationResult {
                                text: String::new(),
                                duration_s: 0.0,
                                status: GenerationStatus::ServerError {
                                    detail: format!("prompt construction failed: {detail}"),
                                },
                            },
                        ),
                    };
                    if !config.record_timings {
                        result.duration_s = 0.0;
                    }

                    log.line(&result.text)?;
                    log.line("")?;
                    log.line("Time to completion")?;
                    log.line(&format!("Time: {:.6} seconds", result.duration_s))?;

                    let record = ResponseRecord {
                        model: model.clone(),
                        strategy: strategy.label().to_string(),
                        note_id: note.id,
                        repetition,
                        leakage_flag,
                        status: result.status.clone(),
                        duration_s: result.duration_s,
                        text: result.text.clone(),
                    };
                    append_jsonl(&mut responses_file, &record)?;

                    let mut score = score_response_with_threshold(
                        &result,
                        note,
                        config.schema_variant,
                        &catalog,
                        config.eval.diagnosis_match_threshold,
                    );
                    score.model = model.clone();
                    score.strategy = strategy.label().to_string();
                    score.repetition = repetition;
                    append_jsonl(&mut scores_file, &score)?;
                    scores.push(score);
                }
            }
        }
    }

    let agg = aggregate(&scores).map_err(|_| RunError::Empty)?;
    write_aggregate_csv(&agg, &aggregate_path)?;
    write_summary(&agg, config.eval.diagnosis_match_threshold, &summary_path)?;
    write_plot_data(&agg, &plots_dir)?;
    log.line(&format!("Run complete: {} responses in {}", scores.len(), run_dir.display()))?;

    Ok(RunArtifacts {
        run_dir,
        responses_path,
        scores_path,
        aggregate_path,
        summary_path,
        log_path,
        config_path,
        plots_dir,
        scores,
    })
}

/// Artifacts produced by scoring an existing responses file.
#[derive(Debug, Clone)]
pub struct ScoreArtifacts {
    pub scores_path: PathBuf,
    pub aggregate_path: PathBuf,
    pub summary_path: PathBuf,
    pub plots_dir: PathBuf,
    pub scores: Vec<ResponseScore>,
}

/// Re-score a `responses.jsonl` (from any run) against the configured corpus
/// and catalog, writing fresh score artifacts into `out_dir`.
pub fn rescore(
    config: &ExperimentConfig,
    responses_path: &Path,
    out_dir: &Path,
) -> Result<ScoreArtifacts, RunError> {
    let (catalog, _) = load_catalog(&config.catalog_path)?;
    if catalog.is_empty() {
        return Err(setup(format!("catalog {:?} has no usable entries", config.catalog_path)));
    }
    let corpus = load_corpus(&config.corpus_path).map_err(setup)?;
    let text = fs::read_to_string(responses_path)?;

    let mut scores = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ResponseRecord = serde_json::from_str(line)
            .map_err(|e| setup(format!("responses line {}: {e}", idx + 1)))?;
        let note = corpus.note(record.note_id).ok_or_else(|| {
            setup(format!("responses line {}: unknown note id {}", idx + 1, record.note_id))
        })?;
        let generation = GenerationResult {
            text: record.text,
            duration_s: record.duration_s,
            status: record.status,
        };
        let mut score = score_response_with_threshold(
            &generation,
            note,
            config.schema_variant,
            &catalog,
            config.eval.diagnosis_match_threshold,
        );
        score.model = record.model;
        score.strategy = record.strategy;
        score.repetition = record.repetition;
        scores.push(score);
    }

    fs::create_dir_all(out_dir)?;
    let scores_path = out_dir.join("scores.jsonl");
    let aggregate_path = out_dir.join("aggregate.csv");
    let summary_path = out_dir.join("summary.md");
    let plots_dir = out_dir.join("plots");
    let mut scores_file = File::create(&scores_path)?;
    for score in &scores {
        append_jsonl(&mut scores_file, score)?;
    }
    let agg = aggregate(&scores).map_err(|_| RunError::Empty)?;
    write_aggregate_csv(&agg, &aggregate_path)?;
    write_summary(&agg, config.eval.diagnosis_match_threshold, &summary_path)?;
    write_plot_data(&agg, &plots_dir)?;
    Ok(ScoreArtifacts { scores_path, aggregate_path, summary_path, plots_dir, scores })
}

/// Rebuild aggregate.csv, summary.md, and the plot files of an existing run
/// directory from its scores.jsonl. Returns the aggregate it wrote.
pub fn regenerate_reports(
    run_dir: &Path,
    diagnosis_threshold: f64,
) -> Result<RunAggregate, RunError> {
    let text = fs::read_to_string(run_dir.join("scores.jsonl"))?;
    let mut scores = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let score: ResponseScore = serde_json::from_str(line)
            .map_err(|e| setup(format!("scores line {}: {e}", idx + 1)))?;
        scores.push(score);
    }
    let agg = aggregate(&scores).map_err(|_| RunError::Empty)?;
    write_aggregate_csv(&agg, &run_dir.join("aggregate.csv"))?;
    write_summary(&agg, diagnosis_threshold, &run_dir.join("summary.md"))?;
    write_plot_data(&agg, &run_dir.join("plots"))?;
    Ok(agg)
}
