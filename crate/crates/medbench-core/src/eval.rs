//! Scoring: judge predicted codes against gold labels, match predicted
//! diagnoses to gold diagnoses, and fold per-response scores into per-cell
//! aggregates.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::catalog::{normalize_code, IcdCatalog};
use crate::client::{GenerationResult, GenerationStatus};
use crate::corpus::{CaseNote, GoldLabel};
use crate::schema::{validate_response, SchemaVariant, ValidationResult};
use crate::similarity::string_similarity;

/// Threshold above which two normalized diagnosis strings count as a match.
pub const DEFAULT_DIAGNOSIS_MATCH_THRESHOLD: f64 = 0.8;

/// How one predicted code relates to the gold labels and the catalog.
/// Ordered from best to worst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeVerdict {
    /// Exactly a gold primary or alternate.
    ExactGold,
    /// Same three-character category as a gold code, but not the code itself.
    CategoryGold,
    /// A real catalog code that no gold label accepts.
    InCatalogNotGold,
    /// Looks like a code but the catalog has no such entry.
    ShapedNotInCatalog,
    /// Not even code-shaped.
    NotShaped,
}

/// A single predicted code with its verdict and the flags behind it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgedCode {
    /// The prediction as given (trimmed).
    pub predicted: String,
    pub verdict: CodeVerdict,
    pub shaped: bool,
    pub in_catalog: bool,
    pub exact_gold: bool,
}

/// Response-level verdict on the whole predicted code list.
/// The classes are mutually exclusive and cover every response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeClass {
    /// Every gold label satisfied and every prediction exactly gold.
    Correct,
    /// At least one prediction exactly gold, but not fully correct.
    PartiallyCorrect,
    /// No gold hits, yet at least one real catalog code.
    ValidButWrong,
    /// No catalog hits, yet at least one code-shaped string.
    LooksLikeCode,
    /// Predictions present but none even code-shaped.
    NotCodeLike,
    /// No predictions at all.
    Blank,
}

impl CodeClass {
    pub fn name(self) -> &'static str {
        match self {
            CodeClass::Correct => "correct",
            CodeClass::PartiallyCorrect => "partially_correct",
            CodeClass::ValidButWrong => "valid_but_wrong",
            CodeClass::LooksLikeCode => "looks_like_code",
            CodeClass::NotCodeLike => "not_code_like",
            CodeClass::Blank => "blank",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeJudgment {
    pub class: CodeClass,
    pub per_code: Vec<JudgedCode>,
}

/// Judge a predicted code list against a note's gold labels.
///
/// Set semantics: duplicates neither help nor hurt beyond their first
/// occurrence, and entries that trim to empty are dropped before judging.
pub fn judge_codes(predicted: &[String], gold: &[GoldLabel], catalog: &IcdCatalog) -> CodeJudgment {
    let entries: Vec<&str> =
        predicted.iter().map(|s| s.trim()).filter(|s| !s.is_empty()).collect();
    if entries.is_empty() {
        return CodeJudgment { class: CodeClass::Blank, per_code: Vec::new() };
    }

    let acceptable: Vec<HashSet<&str>> =
        gold.iter().map(|g| g.acceptable_codes().collect()).collect();
    let all_gold: HashSet<&str> = acceptable.iter().flatten().copied().collect();
    let gold_categories: HashSet<&str> = all_gold.iter().map(|c| &c[..3]).collect();

    let mut per_code = Vec::with_capacity(entries.len());
    let mut normalized: Vec<Option<String>> = Vec::with_capacity(entries.len());
    for entry in &entries {
        match normalize_code(entry) {
            Ok(raw) => {
                let exact_gold = all_gold.contains(raw.as_str());
                let in_catalog = catalog.contains(&raw);
                let category_gold = gold_categories.contains(&raw[..3]);
                let verdict = if exact_gold {
                    CodeVerdict::ExactGold
                } else if category_gold {
                    CodeVerdict::CategoryGold
                } else if in_catalog {
                    CodeVerdict::InCatalogNotGold
                } else {
                    CodeVerdict::ShapedNotInCatalog
                };
                per_code.push(JudgedCode {
                    predicted: entry.to_string(),
                    verdict,
                    shaped: true,
                    in_catalog,
                    exact_gold,
                });
                normalized.push(Some(raw));
            }
            Err(_) => {
                per_code.push(JudgedCode {
                    predicted: entry.to_string(),
                    verdict: CodeVerdict::NotShaped,
                    shaped: false,
                    in_catalog: false,
                    exact_gold: false,
                });
                normalized.push(None);
            }
        }
    }

    let predicted_raw: HashSet<&str> =
        normalized.iter().flatten().map(String::as_str).collect();
    let every_label_satisfied =
        acceptable.iter().all(|set| set.iter().any(|c| predicted_raw.contains(c)));
    let all_exact = per_code.iter().all(|j| j.exact_gold);
    let any_exact = per_code.iter().any(|j| j.exact_gold);
    let any_in_catalog = per_code.iter().any(|j| j.in_catalog);
    let any_shaped = per_code.iter().any(|j| j.shaped);

    let class = if every_label_satisfied && all_exact {
        CodeClass::Correct
    } else if any_exact {
        CodeClass::PartiallyCorrect
    } else if any_in_catalog {
        CodeClass::ValidButWrong
    } else if any_shaped {
        CodeClass::LooksLikeCode
    } else {
        CodeClass::NotCodeLike
    };
    CodeJudgment { class, per_code }
}

/// Lowercase, squash every non-alphanumeric run to a single space, trim.
pub fn normalize_diagnosis(s: &str) -> String {
    let lowered = s.to_lowercase();
    let mapped: String =
        lowered.chars().map(|c| if c.is_alphanumeric() { c } else { ' ' }).collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Outcome of matching predicted diagnoses to gold diagnoses one-to-one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisMatches {
    /// (gold diagnosis, predicted string) pairs.
    pub matched: Vec<(String, String)>,
    /// Gold diagnoses nothing was matched to.
    pub missed: Vec<String>,
    /// Predicted strings that matched nothing.
    pub spurious: Vec<String>,
}

fn diagnosis_pair_matches(pred_norm: &str, gold_norm: &str, threshold: f64) -> bool {
    if pred_norm.is_empty() {
        return false;
    }
    pred_norm == gold_norm
        || pred_norm.contains(gold_norm)
        || gold_norm.contains(pred_norm)
        || string_similarity(pred_norm, gold_norm) >= threshold
}

/// Greedy one-to-one assignment in gold order: each gold diagnosis takes the
/// first still-unused predicted string that matches it.
pub fn judge_diagnoses_with_threshold(
    predicted: &[String],
    gold: &[GoldLabel],
    threshold: f64,
) -> DiagnosisMatches {
    let pred_norm: Vec<String> = predicted.iter().map(|p| normalize_diagnosis(p)).collect();
    let mut used = vec![false; predicted.len()];
    let mut result = DiagnosisMatches::default();
    for label in gold {
        let gold_norm = normalize_diagnosis(&label.diagnosis);
        let hit = (0..predicted.len())
            .find(|&i| !used[i] && diagnosis_pair_matches(&pred_norm[i], &gold_norm, threshold));
        match hit {
            Some(i) => {
                used[i] = true;
                result.matched.push((label.diagnosis.clone(), predicted[i].clone()));
            }
            None => result.missed.push(label.diagnosis.clone()),
        }
    }
    for (i, p) in predicted.iter().enumerate() {
        if !used[i] {
            result.spurious.push(p.clone());
        }
    }
    result
}

pub fn judge_diagnoses(predicted: &[String], gold: &[GoldLabel]) -> DiagnosisMatches {
    judge_diagnoses_with_threshold(predicted, gold, DEFAULT_DIAGNOSIS_MATCH_THRESHOLD)
}

/// Answer fields salvaged from a parsed response document, tolerating the
/// presentation wrapper and the singular/plural field-name drift seen in
/// model output. Non-string array elements are kept as their JSON text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtractedFields {
    pub original_document: Option<String>,
    pub codes: Vec<String>,
    pub diagnoses: Vec<String>,
}

fn values_as_strings(v: &Value) -> Vec<String> {
    match v {
        Value::Array(items) => items
            .iter()
            .map(|item| match item {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect(),
        Value::String(s) => vec![s.clone()],
        _ => Vec::new(),
    }
}

pub fn extract_fields(value: &Value) -> ExtractedFields {
    // Unwrap a single-key presentation wrapper if the response kept it.
    let v = match value.as_object() {
        Some(map) if map.len() == 1 && map.contains_key("medical_record") => &map["medical_record"],
        _ => value,
    };

    let original_document = v.get("original_document").and_then(Value::as_str).map(str::to_string);

    let codes = [&v["diagnostic_codes"], &v["diagnostic_code"], &v["codes"]["diagnostic_codes"]]
        .into_iter()
        .map(values_as_strings)
        .find(|c| !c.is_empty())
        .unwrap_or_default();

    let diagnoses = [&v["diagnoses"], &v["diagnosis"], &v["assessment"]["working_diagnosis"]]
        .into_iter()
        .map(values_as_strings)
        .find(|d| !d.is_empty())
        .unwrap_or_default();

    ExtractedFields { original_document, codes, diagnoses }
}

/// Everything measured about one model response to one note.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseScore {
    pub note_id: u32,
    pub model: String,
    pub strategy: String,
    pub repetition: u32,
    pub status: GenerationStatus,
    pub validation: ValidationResult,
    /// Similarity of the transcribed document to the note text; None when no
    /// document was recovered.
    pub transcription_similarity: Option<f64>,
    pub code_judgment: CodeJudgment,
    pub diagnosis_matches: DiagnosisMatches,
    pub duration_s: f64,
}

/// Score one generation against its note. The grid coordinates (model,
/// strategy, repetition) are left empty for the runner to fill in.
pub fn score_response(
    raw: &GenerationResult,
    note: &CaseNote,
    variant: SchemaVariant,
    catalog: &IcdCatalog,
) -> ResponseScore {
    score_response_with_threshold(raw, note, variant, catalog, DEFAULT_DIAGNOSIS_MATCH_THRESHOLD)
}

pub fn score_response_with_threshold(
    raw: &GenerationResult,
    note: &CaseNote,
    variant: SchemaVariant,
    catalog: &IcdCatalog,
    threshold: f64,
) -> ResponseScore {
    let validation = validate_response(&raw.text, variant);
    let fields = validation.parsed.as_ref().map(|v| extract_fields(v)).unwrap_or_default();
    let transcription_similarity = fields
        .original_document
        .as_ref()
        .map(|doc| string_similarity(doc, &note.note_text));
    let code_judgment = judge_codes(&fields.codes, &note.gold, catalog);
    let diagnosis_matches = judge_diagnoses_with_threshold(&fields.diagnoses, &note.gold, threshold);
    ResponseScore {
        note_id: note.id,
        model: String::new(),
        strategy: String::new(),
        repetition: 0,
        status: raw.status.clone(),
        validation,
        transcription_similarity,
        code_judgment,
        diagnosis_matches,
        duration_s: raw.duration_s,
    }
}

/// Aggregated measurements for one (model, strategy) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAggregate {
    pub model: String,
    pub strategy: String,
    pub responses: usize,
    /// Fraction of responses that were strictly valid JSON documents.
    pub strict_json_rate: f64,
    /// Fraction valid only after fence-stripping.
    pub recovered_rate: f64,
    /// Mean transcription similarity over responses that produced a document.
    pub mean_similarity: Option<f64>,
    pub similarity_n: usize,
    pub class_counts: BTreeMap<String, usize>,
    pub correct_rate: f64,
    pub diag_matched: usize,
    pub diag_missed: usize,
    pub diag_spurious: usize,
    /// Micro-averaged: matched / (matched + spurious).
    pub diag_precision: Option<f64>,
    /// Micro-averaged: matched / (matched + missed).
    pub diag_recall: Option<f64>,
    pub runtime_mean_s: f64,
    pub runtime_min_s: f64,
    pub runtime_max_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    /// One row per (model, strategy), sorted by model then strategy.
    pub cells: Vec<CellAggregate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no scores to aggregate")]
pub struct EmptyRun;

/// Fold scores into per-cell aggregates. Counts are conserved: each score
/// lands in exactly one cell and each cell's class counts sum to its total.
pub fn aggregate(scores: &[ResponseScore]) -> Result<RunAggregate, EmptyRun> {
    if scores.is_empty() {
        return Err(EmptyRun);
    }
    let mut groups: BTreeMap<(String, String), Vec<&ResponseScore>> = BTreeMap::new();
    for s in scores {
        groups.entry((s.model.clone(), s.strategy.clone())).or_default().push(s);
    }
    let mut cells = Vec::with_capacity(groups.len());
    for ((model, strategy), group) in groups {
        let n = group.len();
        let strict = group.iter().filter(|s| s.validation.strict_valid).count();
        let recovered = group.iter().filter(|s| s.validation.recovered).count();
        let sims: Vec<f64> = group.iter().filter_map(|s| s.transcription_similarity).collect();
        let mut class_counts: BTreeMap<String, usize> = BTreeMap::new();
        for s in &group {
            *class_counts.entry(s.code_judgment.class.name().to_string()).or_insert(0) += 1;
        }
        let correct = class_counts.get(CodeClass::Correct.name()).copied().unwrap_or(0);
        let matched: usize = group.iter().map(|s| s.diagnosis_matches.matched.len()).sum();
        let missed: usize = group.iter().map(|s| s.diagnosis_matches.missed.len()).sum();
        let spurious: usize = group.iter().map(|s| s.diagnosis_matches.spurious.len()).sum();
        let durations: Vec<f64> = group.iter().map(|s| s.duration_s).collect();
        let ratio = |num: usize, den: usize| if den == 0 { None } else { Some(num as f64 / den as f64) };
        cells.push(CellAggregate {
            model,
            strategy,
            responses: n,
            strict_json_rate: strict as f64 / n as f64,
            recovered_rate: recovered as f64 / n as f64,
            mean_similarity: if sims.is_empty() {
                None
            } else {
                Some(sims.iter().sum::<f64>() / sims.len() as f64)
            },
            similarity_n: sims.len(),
            class_counts,
            correct_rate: correct as f64 / n as f64,
            diag_matched: matched,
            diag_missed: missed,
            diag_spurious: spurious,
            diag_precision: ratio(matched, matched + spurious),
            diag_recall: ratio(matched, matched + missed),
            runtime_mean_s: durations.iter().sum::<f64>() / n as f64,
            runtime_min_s: durations.iter().copied().fold(f64::INFINITY, f64::min),
            runtime_max_s: durations.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
    }
    Ok(RunAggregate { cells })
}
