//! Prompt construction for the three querying strategies. The wording lives
//! in `templates/` as data, spelling quirks and all, so a diff against the
//! deployed prompts is a one-file diff; substitution happens here.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{gold_response_json, CaseNote, Corpus};
use crate::schema::{schema_text, SchemaVariant};

/// The instruction sentence block shared by every strategy.
pub const DIRECTIVE_TEXT: &str = include_str!("../templates/directive.txt");
const ZERO_SHOT_TEMPLATE: &str = include_str!("../templates/zero_shot.txt");
const FEW_SHOT_TEMPLATE: &str = include_str!("../templates/few_shot.txt");
const EXEMPLAR_TEMPLATE: &str = include_str!("../templates/few_shot_exemplar.txt");
const RAG_TEMPLATE: &str = include_str!("../templates/rag.txt");

/// Marker that precedes the target note in every built prompt.
const NOTE_MARKER: &str = "Doctors note:";
const RAG_SUFFIX: &str = "\n\nPlease answer the question based on the context provided above.";

/// Whether to reproduce the deployed prompt text exactly (misspellings
/// included) or with the two known typos corrected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateStyle {
    #[default]
    Faithful,
    Normalized,
}

/// One of the three querying strategies, carrying what it needs to build.
#[derive(Debug, Clone)]
pub enum PromptStrategy {
    ZeroShot,
    FewShot { exemplars: Vec<(CaseNote, String)> },
    Rag { k: usize, token_budget: usize },
}

impl PromptStrategy {
    pub fn label(&self) -> &'static str {
        match self {
            PromptStrategy::ZeroShot => "zero_shot",
            PromptStrategy::FewShot { .. } => "few_shot",
            PromptStrategy::Rag { .. } => "rag",
        }
    }
}

/// A finished prompt plus the audit facts about how it was built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuiltPrompt {
    pub text: String,
    pub strategy_label: &'static str,
    pub target_note_id: u32,
    /// True when the target note itself appears among the exemplars, so the
    /// measurement is an upper bound, not a generalization result.
    pub leakage_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("few-shot prompting needs at least one exemplar")]
    EmptyExemplars,
}

/// Builds prompts; construction is deterministic and the target note text is
/// always embedded verbatim after the note marker.
#[derive(Debug, Clone)]
pub struct PromptEngine {
    pub style: TemplateStyle,
    /// Inline the structure text into zero-shot and retrieval prompts. Off,
    /// the structure is expected to arrive via the constraint parameter.
    pub schema_in_prompt: bool,
}

impl Default for PromptEngine {
    fn default() -> Self {
        PromptEngine { style: TemplateStyle::Faithful, schema_in_prompt: true }
    }
}

fn normalize_typos(text: &str) -> String {
    text.replace("verbatum", "verbatim").replace("ouput", "output")
}

fn indent_four(text: &str) -> String {
    text.lines().map(|l| format!("    {l}")).collect::<Vec<_>>().join("\n")
}

impl PromptEngine {
    fn directive(&self) -> String {
        match self.style {
            TemplateStyle::Faithful => DIRECTIVE_TEXT.to_string(),
            TemplateStyle::Normalized => normalize_typos(DIRECTIVE_TEXT),
        }
    }

    /// The strategy-independent core: directive, optional inline structure,
    /// then the note after the marker.
    fn zero_shot_body(&self, note: &CaseNote, variant: SchemaVariant) -> String {
        if self.schema_in_prompt {
            ZERO_SHOT_TEMPLATE
                .replace("<<DIRECTIVE>>", &self.directive())
                .replace("<<SCHEMA>>", &indent_four(schema_text(variant)))
                .replace("<<NOTE>>", &note.note_text)
        } else {
            format!("{} {}{}", self.directive(), NOTE_MARKER, note.note_text)
        }
    }

    pub fn zero_shot(&self, note: &CaseNote, variant: SchemaVariant) -> BuiltPrompt {
        BuiltPrompt {
            text: self.zero_shot_body(note, variant),
            strategy_label: "zero_shot",
            target_note_id: note.id,
            leakage_flag: false,
        }
    }

    /// Few-shot never inlines the structure text: the exemplar outputs carry
    /// the shape, and runs pass the constraint parameter alongside.
    pub fn few_shot(
        &self,
        note: &CaseNote,
        exemplars: &[(CaseNote, String)],
    ) -> Result<BuiltPrompt, PromptError> {
        if exemplars.is_empty() {
            return Err(PromptError::EmptyExemplars);
        }
        let exemplar_template = match self.style {
            TemplateStyle::Faithful => EXEMPLAR_TEMPLATE.to_string(),
            TemplateStyle::Normalized => normalize_typos(EXEMPLAR_TEMPLATE),
        };
        let blocks: Vec<String> = exemplars
            .iter()
            .map(|(exemplar_note, gold_output)| {
                exemplar_template
                    .replace("<<NOTE>>", &exemplar_note.note_text)
                    .replace("<<GOLD>>", gold_output)
            })
            .collect();
        let text = FEW_SHOT_TEMPLATE
            .replace("<<DIRECTIVE>>", &self.directive())
            .replace("<<EXEMPLARS>>", &blocks.join("\n\n"))
            .replace("<<NOTE>>", &note.note_text);
        Ok(BuiltPrompt {
            text,
            strategy_label: "few_shot",
            target_note_id: note.id,
            leakage_flag: exemplars.iter().any(|(n, _)| n.id == note.id),
        })
    }

    /// Retrieval-augmented: the assembled context, then the zero-shot body as
    /// the question.
    pub fn rag(&self, note: &CaseNote, variant: SchemaVariant, context: &str) -> BuiltPrompt {
        let question = self.zero_shot_body(note, variant);
        let text = RAG_TEMPLATE.replace("<<CONTEXT>>", context).replace("<<QUESTION>>", &question);
        BuiltPrompt { text, strategy_label: "rag", target_note_id: note.id, leakage_flag: false }
    }
}

/// Recover the target note text from a built prompt: everything after the
/// last note marker, minus the retrieval closing line when present. This is
/// the exact inverse of how every strategy embeds the note.
pub fn extract_note_slot(prompt: &str) -> Option<&str> {
    let idx = prompt.rfind(NOTE_MARKER)?;
    let after = &prompt[idx + NOTE_MARKER.len()..];
    Some(after.strip_suffix(RAG_SUFFIX).unwrap_or(after))
}

/// Note ids used as exemplars when a few-shot strategy does not name its own.
pub const DEFAULT_EXEMPLAR_IDS: [u32; 2] = [4, 2];

/// The standard exemplar pair: notes 4 and 2, in that order, each with its
/// perfect answer. Notes absent from the corpus are skipped.
pub fn default_exemplars(corpus: &Corpus) -> Vec<(CaseNote, String)> {
    DEFAULT_EXEMPLAR_IDS
        .iter()
        .filter_map(|id| corpus.note(*id))
        .map(|n| (n.clone(), gold_response_json(n)))
        .collect()
}
