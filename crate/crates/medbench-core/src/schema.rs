//! The three output document shapes, at three levels of structure, plus the
//! response validator. Each variant exists in two forms: the prompt text
//! shown to models (verbatim, wrapper and quirks included) and the canonical
//! flat shape used for constrained decoding and validation.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

/// Which output structure a run asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaVariant {
    /// Transcription, codes, and diagnoses only.
    Trivial,
    /// One level of SOAP-style sectioning.
    Simple,
    /// Full sectioning with nested histories, per-system review, and plans.
    Complex,
}

impl SchemaVariant {
    pub const ALL: [SchemaVariant; 3] = [SchemaVariant::Trivial, SchemaVariant::Simple, SchemaVariant::Complex];

    pub fn name(self) -> &'static str {
        match self {
            SchemaVariant::Trivial => "trivial",
            SchemaVariant::Simple => "simple",
            SchemaVariant::Complex => "complex",
        }
    }
}

impl std::str::FromStr for SchemaVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trivial" => Ok(SchemaVariant::Trivial),
            "simple" => Ok(SchemaVariant::Simple),
            "complex" => Ok(SchemaVariant::Complex),
            other => Err(format!("unknown schema variant {other:?} (trivial|simple|complex)")),
        }
    }
}

// The structure texts shown to models inside prompts. These are presentation
// artifacts, not parseable JSON: they carry an outer "medical_record" label
// and, in two variants, trailing commas. Preserved character for character.

const TRIVIAL_TEXT: &str = r#""medical_record": {
    "original_document": "",
    "diagnostic_codes": [],
    "diagnoses": [],
}"#;

const SIMPLE_TEXT: &str = r#""medical_record": {
    "original_document": "",
    "codes": {
        "diagnostic_codes": [],
    },
    "subjective": {
        "chief_complaint": "",
    },
    "objective": {
        "vital_signs": {
            "temperature_celsius": "",
            "blood_pressure_mmHg": "",
            "heart_rate_bpm": "",
            "respiratory_rate_bpm": "",
            "oxygen_saturation_percent": ""
        },
        "physical_exam": "",
        "lab_results": [],
        "imaging": [],
        "diagnostic_procedures": [],
    },
    "assessment": {
        "summary": "",
        "differential_diagnosis": "",
        "working_diagnosis": "",
    },
    "plan": {
        "expected_follow_up": "",
        "management_plan": "",
    },
    "orders": {
        "referrals_made": [],
    }
}"#;

const COMPLEX_TEXT: &str = r#""medical_record": {
    "original_document": "",
    "codes": {
        "diagnostic_codes": [],
        "procedure_codes": [],
        "billing_codes": []
    },
    "subjective": {
        "chief_complaint": "",
        "history_of_present_illness": "",
        "past_medical_history": "",
        "surgical_history": "",
        "pregnancy_history": "",
        "menstrual_history": "",
        "social_history": {
            "sexual_activity": "",
            "drug_use": "",
            "lifestyle": ""
        },
        "alcohol_use": "",
        "current_medications": [],
        "allergies": [],
        "review_of_systems": {
            "systems_reviewed": [
            {
                "system_name": "cardiovascular",
                "findings": ""
            },
            {
                "system_name": "respiratory",
                "findings": ""
            }
            ]
        }
    },
    "objective": {
        "vital_signs": {
            "temperature_celsius": "",
            "blood_pressure_mmHg": "",
            "heart_rate_bpm": "",
            "respiratory_rate_bpm": "",
            "oxygen_saturation_percent": ""
        },
        "physical_exam": [],
        "lab_results": [],
        "imaging": [],
        "diagnostic_procedures": []
    },
    "assessment": {
        "summary": "",
        "differential_diagnosis": [],
        "working_diagnosis": ""
    },
    "plan": {
        "expected_follow_up": "",
        "management_plan": [
            {
            "organ_system": "",
            "actions": []
            }
        ]
    },
    "orders": {
        "medications_ordered": [],
        "referrals_made": [],
        "labs_ordered": [],
        "imaging_ordered": []
    }
}"#;

/// The structure text inlined into prompts, exactly as presented to models.
pub fn schema_text(variant: SchemaVariant) -> &'static str {
    match variant {
        SchemaVariant::Trivial => TRIVIAL_TEXT,
        SchemaVariant::Simple => SIMPLE_TEXT,
        SchemaVariant::Complex => COMPLEX_TEXT,
    }
}

/// The canonical machine shape of a response document. The presentation
/// wrapper is dropped: answers are the record itself, top-level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldShape {
    Text,
    TextArray,
    Record(Vec<(&'static str, FieldShape)>),
    RecordArray(Vec<(&'static str, FieldShape)>),
}

fn vital_signs_shape() -> FieldShape {
    FieldShape::Record(vec![
        ("temperature_celsius", FieldShape::Text),
        ("blood_pressure_mmHg", FieldShape::Text),
        ("heart_rate_bpm", FieldShape::Text),
        ("respiratory_rate_bpm", FieldShape::Text),
        ("oxygen_saturation_percent", FieldShape::Text),
    ])
}

/// Canonical flat shape for a variant: every field required, value kinds as
/// declared, no extras permitted.
pub fn canonical_shape(variant: SchemaVariant) -> FieldShape {
    match variant {
        SchemaVariant::Trivial => FieldShape::Record(vec![
            ("original_document", FieldShape::Text),
            ("diagnostic_codes", FieldShape::TextArray),
            ("diagnoses", FieldShape::TextArray),
        ]),
        SchemaVariant::Simple => FieldShape::Record(vec![
            ("original_document", FieldShape::Text),
            ("codes", FieldShape::Record(vec![("diagnostic_codes", FieldShape::TextArray)])),
            ("subjective", FieldShape::Record(vec![("chief_complaint", FieldShape::Text)])),
            (
                "objective",
                FieldShape::Record(vec![
                    ("vital_signs", vital_signs_shape()),
                    ("physical_exam", FieldShape::Text),
                    ("lab_results", FieldShape::TextArray),
                    ("imaging", FieldShape::TextArray),
                    ("diagnostic_procedures", FieldShape::TextArray),
                ]),
            ),
            (
                "assessment",
                FieldShape::Record(vec![
                    ("summary", FieldShape::Text),
                    ("differential_diagnosis", FieldShape::Text),
                    ("working_diagnosis", FieldShape::Text),
                ]),
            ),
            (
                "plan",
                FieldShape::Record(vec![
                    ("expected_follow_up", FieldShape::Text),
                    ("management_plan", FieldShape::Text),
                ]),
            ),
            ("orders", FieldShape::Record(vec![("referrals_made", FieldShape::TextArray)])),
        ]),
        SchemaVariant::Complex => FieldShape::Record(vec![
            ("original_document", FieldShape::Text),
            (
                "codes",
                FieldShape::Record(vec![
                    ("diagnostic_codes", FieldShape::TextArray),
                    ("procedure_codes", FieldShape::TextArray),
                    ("billing_codes", FieldShape::TextArray),
                ]),
            ),
            (
                "subjective",
                FieldShape::Record(vec![
                    ("chief_complaint", FieldShape::Text),
                    ("history_of_present_illness", FieldShape::Text),
                    ("past_medical_history", FieldShape::Text),
                    ("surgical_history", FieldShape::Text),
                    ("pregnancy_history", FieldShape::Text),
                    ("menstrual_history", FieldShape::Text),
                    (
                        "social_history",
                        FieldShape::Record(vec![
                            ("sexual_activity", FieldShape::Text),
                            ("drug_use", FieldShape::Text),
                            ("lifestyle", FieldShape::Text),
                        ]),
                    ),
                    ("alcohol_use", FieldShape::Text),
                    ("current_medications", FieldShape::TextArray),
                    ("allergies", FieldShape::TextArray),
                    (
                        "review_of_systems",
                        FieldShape::Record(vec![(
                            "systems_reviewed",
                            FieldShape::RecordArray(vec![
                                ("system_name", FieldShape::Text),
                                ("findings", FieldShape::Text),
                            ]),
                        )]),
                    ),
                ]),
            ),
            (
                "objective",
                FieldShape::Record(vec![
                    ("vital_signs", vital_signs_shape()),
                    ("physical_exam", FieldShape::TextArray),
                    ("lab_results", FieldShape::TextArray),
                    ("imaging", FieldShape::TextArray),
                    ("diagnostic_procedures", FieldShape::TextArray),
                ]),
            ),
            (
                "assessment",
                FieldShape::Record(vec![
                    ("summary", FieldShape::Text),
                    ("differential_diagnosis", FieldShape::TextArray),
                    ("working_diagnosis", FieldShape::Text),
                ]),
            ),
            (
                "plan",
                FieldShape::Record(vec![
                    ("expected_follow_up", FieldShape::Text),
                    (
                        "management_plan",
                        FieldShape::RecordArray(vec![
                            ("organ_system", FieldShape::Text),
                            ("actions", FieldShape::TextArray),
                        ]),
                    ),
                ]),
            ),
            (
                "orders",
                FieldShape::Record(vec![
                    ("medications_ordered", FieldShape::TextArray),
                    ("referrals_made", FieldShape::TextArray),
                    ("labs_ordered", FieldShape::TextArray),
                    ("imaging_ordered", FieldShape::TextArray),
                ]),
            ),
        ]),
    }
}

fn shape_to_constraint(shape: &FieldShape) -> Value {
    match shape {
        FieldShape::Text => json!({ "type": "string" }),
        FieldShape::TextArray => json!({ "type": "array", "items": { "type": "string" } }),
        FieldShape::Record(fields) => {
            let mut properties = Map::new();
            let mut required = Vec::new();
            for (name, sub) in fields {
                properties.insert((*name).to_string(), shape_to_constraint(sub));
                required.push(Value::String((*name).to_string()));
            }
            json!({
                "type": "object",
                "properties": Value::Object(properties),
                "required": Value::Array(required),
                "additionalProperties": false,
            })
        }
        FieldShape::RecordArray(fields) => {
            json!({ "type": "array", "items": shape_to_constraint(&FieldShape::Record(fields.clone())) })
        }
    }
}

/// Machine-readable constraint for the backend's structured-output parameter:
/// a strict JSON Schema subset (type / properties / required / items /
/// additionalProperties) over the canonical flat shape.
pub fn constraint_document(variant: SchemaVariant) -> Value {
    shape_to_constraint(&canonical_shape(variant))
}

fn shape_to_empty(shape: &FieldShape) -> Value {
    match shape {
        FieldShape::Text => Value::String(String::new()),
        FieldShape::TextArray | FieldShape::RecordArray(_) => Value::Array(Vec::new()),
        FieldShape::Record(fields) => {
            let mut map = Map::new();
            for (name, sub) in fields {
                map.insert((*name).to_string(), shape_to_empty(sub));
            }
            Value::Object(map)
        }
    }
}

/// A canonical instance with every field present and empty. Always valid.
pub fn empty_instance(variant: SchemaVariant) -> Value {
    shape_to_empty(&canonical_shape(variant))
}

/// What a response document got wrong, anchored to a JSONPath-style location.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// The text is not parseable JSON at all.
    ParseFailure,
    MissingField,
    ExtraField,
    WrongType,
    NonStringElement,
}

/// Verdict on one response text against one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationResult {
    /// The text as sent parses as JSON and matches the canonical shape.
    pub strict_valid: bool,
    /// Valid only after stripping one leading/trailing markdown code fence.
    pub recovered: bool,
    pub violations: Vec<Violation>,
    /// The parsed document whenever a syntactic parse succeeded (directly or
    /// after fence-stripping), even if the shape is wrong. Not persisted.
    #[serde(skip)]
    pub parsed: Option<Value>,
}

/// Strip one markdown code fence (``` or ''') from each end, tolerating an
/// optional `json` language tag. Returns None when there is nothing to strip.
fn strip_fence(text: &str) -> Option<&str> {
    let t = text.trim();
    let (fence, rest) = if let Some(r) = t.strip_prefix("```") {
        ("```", r)
    } else if let Some(r) = t.strip_prefix("'''") {
        ("'''", r)
    } else {
        return None;
    };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    let rest = rest.strip_suffix(fence)?;
    Some(rest.trim())
}

fn check_shape(value: &Value, shape: &FieldShape, path: &str, out: &mut Vec<Violation>) {
    match shape {
        FieldShape::Text => {
            if !value.is_string() {
                out.push(Violation { path: path.to_string(), kind: ViolationKind::WrongType });
            }
        }
        FieldShape::TextArray => match value.as_array() {
            None => out.push(Violation { path: path.to_string(), kind: ViolationKind::WrongType }),
            Some(items) => {
                for (i, item) in items.iter().enumerate() {
                    if !item.is_string() {
                        out.push(Violation {
                            path: format!("{path}[{i}]"),
                            kind: ViolationKind::NonStringElement,
                        });
                    }
                }
            }
        },
        FieldShape::Record(fields) => match value.as_object() {
            None => out.push(Violation { path: path.to_string(), kind: ViolationKind::WrongType }),
            Some(map) => {
                for (name, sub) in fields {
                    match map.get(*name) {
                        None => out.push(Violation {
                            path: format!("{path}.{name}"),
                            kind: ViolationKind::MissingField,
                        }),
                        Some(v) => check_shape(v, sub, &format!("{path}.{name}"), out),
                    }
                }
                for key in map.keys() {
                    if !fields.iter().any(|(name, _)| name == key) {
                        out.push(Violation {
                            path: format!("{path}.{key}"),
                            kind: ViolationKind::ExtraField,
                        });
                    }
                }
            }
        },
        FieldShape::RecordArray(fields) => match value.as_array() {
            None => out.push(Violation { path: path.to_string(), kind: ViolationKind::WrongType }),
            Some(items) => {
                let record = FieldShape::Record(fields.clone());
                for (i, item) in items.iter().enumerate() {
                    check_shape(item, &record, &format!("{path}[{i}]"), out);
                }
            }
        },
    }
}

/// Check a response text against a variant's canonical shape.
///
/// Exactly one of three regimes holds: strictly valid (violations empty),
/// recovered (valid once one code fence is stripped; violations empty), or
/// invalid (at least one violation). `parsed` is populated whenever any
/// syntactic parse succeeded, so downstream scoring can still salvage fields
/// from shape-invalid documents.
pub fn validate_response(text: &str, variant: SchemaVariant) -> ValidationResult {
    let shape = canonical_shape(variant);
    match serde_json::from_str::<Value>(text) {
        Ok(value) => {
            let mut violations = Vec::new();
            check_shape(&value, &shape, "$", &mut violations);
            ValidationResult {
                strict_valid: violations.is_empty(),
                recovered: false,
                violations,
                parsed: Some(value),
            }
        }
        Err(_) => {
            if let Some(stripped) = strip_fence(text) {
                if let Ok(value) = serde_json::from_str::<Value>(stripped) {
                    let mut violations = Vec::new();
                    check_shape(&value, &shape, "$", &mut violations);
                    let recovered = violations.is_empty();
                    if !recovered {
                        // The un-stripped text never parsed; keep that on record.
                        violations.insert(
                            0,
                            Violation { path: "$".to_string(), kind: ViolationKind::ParseFailure },
                        );
                    }
                    return ValidationResult {
                        strict_valid: false,
                        recovered,
                        violations,
                        parsed: Some(value),
                    };
                }
            }
            ValidationResult {
                strict_valid: false,
                recovered: false,
                violations: vec![Violation {
                    path: "$".to_string(),
                    kind: ViolationKind::ParseFailure,
                }],
                parsed: None,
            }
        }
    }
}
