//! Local retrieval over the code catalog and any extra reference documents:
//! line-oriented chunking, lexical-overlap or embedding-cosine scoring over a
//! flat exact scan, and budgeted context assembly.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::IcdCatalog;
use crate::client::{EmbedError, InferenceClient};

/// Where a chunk came from: document name and 1-based inclusive line span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkSource {
    pub document: String,
    pub line_start: usize,
    pub line_end: usize,
}

/// One retrievable unit of text, with its vector once embedded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub text: String,
    pub source: ChunkSource,
    pub vector: Option<Vec<f64>>,
}

/// How chunks are scored against a query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScorerKind {
    /// Fraction of the query's distinct tokens that the chunk covers.
    Lexical,
    /// Cosine over embeddings from the named model.
    Embedding { model: String },
}

/// A searchable chunk collection. Exact and flat: retrieval scans everything.
#[derive(Debug, Clone)]
pub struct Index {
    pub chunks: Vec<Chunk>,
    pub scorer: ScorerKind,
    /// Vector dimension, fixed by the first embedded chunk. None for lexical.
    pub dimension: Option<usize>,
}

/// One retrieval hit: the chunk, its score, and its position in the index.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredChunk {
    pub chunk: Chunk,
    pub score: f64,
    pub index: usize,
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("document {0:?} has no content to chunk")]
    EmptyDocument(String),
    #[error("lines_per_chunk must be at least 1")]
    ZeroChunkSize,
    #[error("cannot build an index over zero chunks")]
    EmptyIndex,
    #[error("embedding retrieval needs an inference client")]
    MissingClient,
    #[error("chunk at position {0} has no vector; the index was not embedded")]
    MissingVector(usize),
    #[error("vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Split a document into consecutive runs of `lines_per_chunk` lines.
/// Whitespace-only chunks are dropped; line spans refer to the original text.
pub fn chunk_lines(
    document: &str,
    text: &str,
    lines_per_chunk: usize,
) -> Result<Vec<Chunk>, RetrievalError> {
    if lines_per_chunk == 0 {
        return Err(RetrievalError::ZeroChunkSize);
    }
    let lines: Vec<&str> = text.lines().collect();
    let mut chunks = Vec::new();
    for (group_idx, group) in lines.chunks(lines_per_chunk).enumerate() {
        let chunk_text = group.join("\n");
        if chunk_text.trim().is_empty() {
            continue;
        }
        let line_start = group_idx * lines_per_chunk + 1;
        chunks.push(Chunk {
            text: chunk_text,
            source: ChunkSource {
                document: document.to_string(),
                line_start,
                line_end: line_start + group.len() - 1,
            },
            vector: None,
        });
    }
    if chunks.is_empty() {
        return Err(RetrievalError::EmptyDocument(document.to_string()));
    }
    Ok(chunks)
}

/// Chunk the catalog as a document of `RAWCODE description` lines, one line
/// per entry, in catalog order.
pub fn chunk_catalog(
    catalog: &IcdCatalog,
    lines_per_chunk: usize,
) -> Result<Vec<Chunk>, RetrievalError> {
    let text: String = catalog
        .entries
        .iter()
        .map(|e| format!("{} {}", e.raw_code, e.description))
        .collect::<Vec<_>>()
        .join("\n");
    chunk_lines("catalog", &text, lines_per_chunk)
}

/// Distinct case-folded word tokens (split on non-alphanumerics).
fn token_set(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Query-coverage overlap: |query tokens ∩ chunk tokens| / |query tokens|.
/// An empty query scores zero everywhere.
pub fn lexical_score(query: &str, chunk_text: &str) -> f64 {
    let query_tokens = token_set(query);
    if query_tokens.is_empty() {
        return 0.0;
    }
    let chunk_tokens = token_set(chunk_text);
    let hits = query_tokens.intersection(&chunk_tokens).count();
    hits as f64 / query_tokens.len() as f64
}

/// Cosine similarity; zero-magnitude vectors score 0.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let norm_a: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_b: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm_a == 0.0 || norm_b == 0.0 {
        Ok(0.0)
    } else {
        Ok(dot / (norm_a * norm_b))
    }
}

/// Build an index over the chunks. Embedding indexes embed every chunk up
/// front through the client (which caches); lexical indexes are free.
pub fn build_index(
    mut chunks: Vec<Chunk>,
    scorer: ScorerKind,
    client: Option<&InferenceClient>,
) -> Result<Index, RetrievalError> {
    if chunks.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    let mut dimension = None;
    if let ScorerKind::Embedding { model } = &scorer {
        let client = client.ok_or(RetrievalError::MissingClient)?;
        for chunk in &mut chunks {
            let vector = client.embed(model, &chunk.text)?;
            match dimension {
                None => dimension = Some(vector.len()),
                Some(d) if d != vector.len() => {
                    return Err(RetrievalError::DimensionMismatch(d, vector.len()))
                }
                _ => {}
            }
            chunk.vector = Some(vector);
        }
    }
    Ok(Index { chunks, scorer, dimension })
}

/// Top-`k` chunks for a query, best first; ties broken by chunk order.
pub fn retrieve(
    index: &Index,
    query: &str,
    k: usize,
    client: Option<&InferenceClient>,
) -> Result<Vec<ScoredChunk>, RetrievalError> {
    let scores: Vec<f64> = match &index.scorer {
        ScorerKind::Lexical => {
            index.chunks.iter().map(|c| lexical_score(query, &c.text)).collect()
        }
        ScorerKind::Embedding { model } => {
            let client = client.ok_or(RetrievalError::MissingClient)?;
            let query_vector = client.embed(model, query)?;
            let mut scores = Vec::with_capacity(index.chunks.len());
            for (i, chunk) in index.chunks.iter().enumerate() {
                let vector =
                    chunk.vector.as_ref().ok_or(RetrievalError::MissingVector(i))?;
                scores.push(cosine(&query_vector, vector)?);
            }
            scores
        }
    };
    let mut order: Vec<usize> = (0..index.chunks.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    Ok(order
        .into_iter()
        .take(k)
        .map(|i| ScoredChunk { chunk: index.chunks[i].clone(), score: scores[i], index: i })
        .collect())
}

/// Whitespace-token count, the unit of the context budget.
pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Concatenate whole chunks in the given order, newline-separated, stopping
/// before the first chunk that would push the total past the budget. Chunks
/// are never split.
pub fn assemble_context(scored: &[ScoredChunk], token_budget: usize) -> String {
    let mut parts: Vec<&str> = Vec::new();
    let mut used = 0usize;
    for hit in scored {
        let cost = token_count(&hit.chunk.text);
        if used + cost > token_budget {
            break;
        }
        used += cost;
        parts.push(&hit.chunk.text);
    }
    parts.join("\n")
}

/// The note's trailing diagnosis section (lines after the last `Diagnosis`
/// heading), for retrieval queries focused on the stated diagnoses rather
/// than the whole note. None when the note has no such heading.
pub fn diagnosis_section(note_text: &str) -> Option<String> {
    let lines: Vec<&str> = note_text.lines().collect();
    let is_heading = |line: &str| {
        let striped = line.trim().trim_end_matches([':', '.']).to_lowercase();
        striped == "diagnosis" || striped == "diagnoses"
    };
    let heading_idx = lines.iter().rposition(|l| is_heading(l))?;
    let section: Vec<&str> =
        lines[heading_idx + 1..].iter().copied().filter(|l| !l.trim().is_empty()).collect();
    if section.is_empty() {
        None
    } else {
        Some(section.join("\n"))
    }
}
