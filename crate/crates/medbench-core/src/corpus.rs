//! The benchmark corpus: de-identified clinical notes, each paired with its
//! gold diagnoses and acceptable codes, stored as one JSON object per line.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{display_code, normalize_code, IcdCatalog};

/// One gold diagnosis with its primary code and any equally acceptable
/// alternates. Codes are held in raw (undotted) form in memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldLabel {
    pub diagnosis: String,
    pub primary_code: String,
    pub alternate_codes: Vec<String>,
}

impl GoldLabel {
    /// Every code that satisfies this label: primary first, then alternates.
    pub fn acceptable_codes(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.primary_code.as_str())
            .chain(self.alternate_codes.iter().map(String::as_str))
    }

    /// The code a perfect answer would use: the most specific alternate when
    /// one exists, otherwise the primary.
    pub fn preferred_code(&self) -> &str {
        self.alternate_codes.last().map(String::as_str).unwrap_or(&self.primary_code)
    }
}

/// One benchmark case: the note text a model must transcribe and the labels
/// its answer is judged against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseNote {
    pub id: u32,
    pub title: String,
    pub note_text: String,
    pub gold: Vec<GoldLabel>,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub notes: Vec<CaseNote>,
    pub source_label: String,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn note(&self, id: u32) -> Option<&CaseNote> {
        self.notes.iter().find(|n| n.id == id)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line_no}: record does not parse: {detail}")]
    BadRecord { line_no: usize, detail: String },
    #[error("note {id}: duplicate id")]
    DuplicateId { id: u32 },
    #[error("note {id}: note text is empty")]
    EmptyText { id: u32 },
    #[error("note {id}: gold label list is empty")]
    MissingGold { id: u32 },
    #[error("note {id}: gold diagnosis text is empty")]
    EmptyDiagnosis { id: u32 },
    #[error("note {id}: gold code {code:?} is not code-shaped")]
    BadCode { id: u32, code: String },
}

/// On-disk record shapes. Codes are stored dotted for readability and
/// converted to raw form on load.
#[derive(Serialize, Deserialize)]
struct GoldRecord {
    diagnosis: String,
    primary_code: String,
    #[serde(default)]
    alternate_codes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct NoteRecord {
    id: u32,
    title: String,
    note_text: String,
    gold: Vec<GoldRecord>,
}

fn note_from_record(rec: NoteRecord) -> Result<CaseNote, CorpusError> {
    let id = rec.id;
    if rec.note_text.is_empty() {
        return Err(CorpusError::EmptyText { id });
    }
    if rec.gold.is_empty() {
        return Err(CorpusError::MissingGold { id });
    }
    let mut gold = Vec::with_capacity(rec.gold.len());
    for g in rec.gold {
        if g.diagnosis.trim().is_empty() {
            return Err(CorpusError::EmptyDiagnosis { id });
        }
        let to_raw = |code: &str| {
            normalize_code(code).map_err(|_| CorpusError::BadCode { id, code: code.to_string() })
        };
        gold.push(GoldLabel {
            diagnosis: g.diagnosis,
            primary_code: to_raw(&g.primary_code)?,
            alternate_codes: g
                .alternate_codes
                .iter()
                .map(|c| to_raw(c))
                .collect::<Result<Vec<_>, _>>()?,
        });
    }
    Ok(CaseNote { id, title: rec.title, note_text: rec.note_text, gold })
}

fn record_from_note(note: &CaseNote) -> NoteRecord {
    NoteRecord {
        id: note.id,
        title: note.title.clone(),
        note_text: note.note_text.clone(),
        gold: note
            .gold
            .iter()
            .map(|g| GoldRecord {
                diagnosis: g.diagnosis.clone(),
                primary_code: display_code(&g.primary_code),
                alternate_codes: g.alternate_codes.iter().map(|c| display_code(c)).collect(),
            })
            .collect(),
    }
}

/// Parse corpus text (one JSON record per line; blank lines allowed).
/// Record-level schema violations abort with the offending note id.
pub fn parse_corpus(text: &str, source_label: &str) -> Result<Corpus, CorpusError> {
    let mut notes: Vec<CaseNote> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: NoteRecord = serde_json::from_str(line).map_err(|e| CorpusError::BadRecord {
            line_no: idx + 1,
            detail: e.to_string(),
        })?;
        let note = note_from_record(rec)?;
        if notes.iter().any(|n| n.id == note.id) {
            return Err(CorpusError::DuplicateId { id: note.id });
        }
        notes.push(note);
    }
    Ok(Corpus { notes, source_label: source_label.to_string() })
}

pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    parse_corpus(&text, &path.display().to_string())
}

/// Serialize the corpus back to its line-oriented form (dotted codes).
/// `parse_corpus(corpus_to_jsonl(c))` reproduces `c` exactly.
pub fn corpus_to_jsonl(corpus: &Corpus) -> String {
    let mut out = String::new();
    for note in &corpus.notes {
        // In-memory records contain no non-string keys, so this cannot fail.
        out.push_str(&serde_json::to_string(&record_from_note(note)).expect("serializable record"));
        out.push('\n');
    }
    out
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, corpus_to_jsonl(corpus))
}

/// A gold code that the catalog does not contain — either a typo in the
/// corpus or a catalog from a different code-set year.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingGoldCode {
    pub note_id: u32,
    pub diagnosis: String,
    /// Dotted form, for reporting.
    pub code: String,
}

#[derive(Debug, Clone, Default)]
pub struct CorpusValidation {
    pub missing: Vec<MissingGoldCode>,
}

impl CorpusValidation {
    pub fn is_clean(&self) -> bool {
        self.missing.is_empty()
    }
}

/// Cross-check every gold code (primary and alternates) against the catalog.
/// Report-valued: absences are findings, not failures.
pub fn validate_corpus(corpus: &Corpus, catalog: &IcdCatalog) -> CorpusValidation {
    let mut missing = Vec::new();
    for note in &corpus.notes {
        for label in &note.gold {
            for code in label.acceptable_codes() {
                if !catalog.contains(code) {
                    missing.push(MissingGoldCode {
                        note_id: note.id,
                        diagnosis: label.diagnosis.clone(),
                        code: display_code(code),
                    });
                }
            }
        }
    }
    CorpusValidation { missing }
}

/// The answer a perfect model would return for a note: the flat minimal
/// structure with the note transcribed verbatim, the preferred code for each
/// gold label, and the gold diagnoses. Used for exemplars and test oracles.
pub fn gold_response_json(note: &CaseNote) -> String {
    let json_str = |s: &str| serde_json::to_string(s).expect("string serializes");
    let codes: Vec<String> =
        note.gold.iter().map(|g| json_str(&display_code(g.preferred_code()))).collect();
    let diagnoses: Vec<String> = note.gold.iter().map(|g| json_str(&g.diagnosis)).collect();
    format!(
        "{{\n    \"original_document\": {},\n    \"diagnostic_codes\": [{}],\n    \"diagnoses\": [{}]\n}}",
        json_str(&note.note_text),
        codes.join(", "),
        diagnoses.join(", ")
    )
}
