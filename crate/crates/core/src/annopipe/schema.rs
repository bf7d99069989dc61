//! Response schemas and local validation of raw model output.

use jsonschema::error::ValidationErrorKind;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::partdata::{validate_assignment, PartDecomposition, PathAssignment, ViolationCode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemaErrorKind {
    MalformedJson,
    Type,
    MinItems,
    MaxItems,
    RequiredKey,
    Enum,
    Totality,
    Surjectivity,
    UnexpectedKey,
    EmptyText,
    Other,
}

impl SchemaErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::MalformedJson => "malformed-json",
            Self::Type => "type",
            Self::MinItems => "min-items",
            Self::MaxItems => "max-items",
            Self::RequiredKey => "required-key",
            Self::Enum => "enum",
            Self::Totality => "totality",
            Self::Surjectivity => "surjectivity",
            Self::UnexpectedKey => "unexpected-key",
            Self::EmptyText => "empty-text",
            Self::Other => "other",
        }
    }
}

impl std::fmt::Display for SchemaErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{kind}: {detail}")]
pub struct SchemaViolation {
    pub kind: SchemaErrorKind,
    pub detail: String,
}

impl SchemaViolation {
    pub fn new(kind: SchemaErrorKind, detail: impl Into<String>) -> Self {
        Self { kind, detail: detail.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<Severity>,
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggested_fix: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CritiqueReport {
    pub issues: Vec<Issue>,
    pub summary: String,
    pub should_revise: bool,
}

/// Array of `min..=max` part descriptions.
pub fn parts_schema(min_parts: usize, max_parts: usize) -> Value {
    json!({
        "type": "array",
        "items": {"type": "string"},
        "minItems": min_parts,
        "maxItems": max_parts,
    })
}

pub fn critique_schema() -> Value {
    json!({
        "type": "object",
        "properties": {
            "issues": {
                "type": "array",
                "items": {
                    "type": "object",
                    "properties": {
                        "type": {"type": "string"},
                        "severity": {"type": "string", "enum": ["low", "medium", "high"]},
                        "reason": {"type": "string"},
                        "suggested_fix": {"type": "string"},
                    },
                    "required": ["type", "reason"],
                },
            },
            "summary": {"type": "string"},
            "should_revise": {"type": "boolean"},
        },
        "required": ["issues", "summary", "should_revise"],
    })
}

/// Object with required keys `Path1..PathK`, each an enum over
/// `Part1..PartN`.
pub fn assignment_schema(num_paths: usize, num_parts: usize) -> Value {
    let labels: Vec<String> = (1..=num_parts).map(|i| format!("Part{i}")).collect();
    let props: serde_json::Map<String, Value> =
        (1..=num_paths).map(|i| (format!("Path{i}"), json!({"type": "string", "enum": labels}))).collect();
    let required: Vec<String> = (1..=num_paths).map(|i| format!("Path{i}")).collect();
    json!({"type": "object", "properties": props, "required": required})
}

/// Whether a value is a usable response schema.
pub fn check_schema(schema: &Value) -> Result<(), String> {
    jsonschema::validator_for(schema).map(|_| ()).map_err(|e| e.to_string())
}

/// Extracts JSON from a raw response, tolerating one surrounding markdown
/// code fence.
pub fn parse_json(raw: &str) -> Result<Value, SchemaViolation> {
    let mut text = raw.trim();
    if let Some(rest) = text.strip_prefix("```") {
        let rest = rest.trim_start_matches(|c: char| c.is_ascii_alphanumeric());
        text = rest.strip_suffix("```").unwrap_or(rest).trim();
    }
    serde_json::from_str(text).map_err(|e| SchemaViolation::new(SchemaErrorKind::MalformedJson, e.to_string()))
}

fn classify(kind: &ValidationErrorKind) -> SchemaErrorKind {
    match kind {
        ValidationErrorKind::Type { .. } => SchemaErrorKind::Type,
        ValidationErrorKind::MinItems { .. } => SchemaErrorKind::MinItems,
        ValidationErrorKind::MaxItems { .. } => SchemaErrorKind::MaxItems,
        ValidationErrorKind::Required { .. } => SchemaErrorKind::RequiredKey,
        ValidationErrorKind::Enum { .. } => SchemaErrorKind::Enum,
        ValidationErrorKind::AdditionalProperties { .. } => SchemaErrorKind::UnexpectedKey,
        _ => SchemaErrorKind::Other,
    }
}

/// First schema violation of `instance`, if any.
pub fn validate(schema: &Value, instance: &Value) -> Result<(), SchemaViolation> {
    let validator = jsonschema::validator_for(schema)
        .map_err(|e| SchemaViolation::new(SchemaErrorKind::Other, format!("bad schema: {e}")))?;
    let first = validator
        .iter_errors(instance)
        .next()
        .map(|e| SchemaViolation::new(classify(&e.kind), format!("{e} at {}", e.instance_path)));
    match first {
        None => Ok(()),
        Some(v) => Err(v),
    }
}

pub fn parse_parts(raw: &str, min_parts: usize, max_parts: usize) -> Result<PartDecomposition, SchemaViolation> {
    let v = parse_json(raw)?;
    validate(&parts_schema(min_parts, max_parts), &v)?;
    let descriptions: Vec<String> =
        serde_json::from_value(v).map_err(|e| SchemaViolation::new(SchemaErrorKind::Type, e.to_string()))?;
    if let Some(i) = descriptions.iter().position(|d| d.trim().is_empty()) {
        return Err(SchemaViolation::new(SchemaErrorKind::EmptyText, format!("part {} is empty", i + 1)));
    }
    Ok(PartDecomposition::from_descriptions(descriptions))
}

pub fn parse_critique(raw: &str) -> Result<CritiqueReport, SchemaViolation> {
    let v = parse_json(raw)?;
    validate(&critique_schema(), &v)?;
    serde_json::from_value(v).map_err(|e| SchemaViolation::new(SchemaErrorKind::Type, e.to_string()))
}

/// Schema check followed by the totality and surjectivity checks that the
/// schema cannot express.
pub fn parse_assignment(
    raw: &str,
    num_paths: usize,
    parts: &PartDecomposition,
) -> Result<PathAssignment, SchemaViolation> {
    let v = parse_json(raw)?;
    validate(&assignment_schema(num_paths, parts.len()), &v).map_err(|mut e| {
        if e.kind == SchemaErrorKind::RequiredKey {
            e.kind = SchemaErrorKind::Totality;
        }
        e
    })?;
    let assignment: PathAssignment =
        serde_json::from_value(v).map_err(|e| SchemaViolation::new(SchemaErrorKind::UnexpectedKey, e.to_string()))?;
    if let Some(first) = validate_assignment(parts, &assignment, num_paths).into_iter().next() {
        let kind = match first.code {
            ViolationCode::Surjectivity => SchemaErrorKind::Surjectivity,
            ViolationCode::UnknownLabel => SchemaErrorKind::Enum,
            _ => SchemaErrorKind::Totality,
        };
        return Err(SchemaViolation::new(kind, first.detail));
    }
    Ok(assignment)
}
