use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::labels::{PartDecomposition, PartLabel, PathAssignment};
use crate::stroke::{emit_strokes, parse_strokes, CanvasConfig, FormatError, Rounding, Sketch, StrokeSequence};

pub const MIN_PARTS: usize = 2;
pub const MAX_PARTS: usize = 5;
pub const MAX_CAPTION_WORDS: usize = 25;

/// A sketch enriched with a caption, part descriptions and a path-to-part
/// assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSketch {
    pub id: String,
    pub sketch: Sketch,
    pub caption: String,
    pub parts: PartDecomposition,
    pub assignment: PathAssignment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationCode {
    PartCount,
    LabelContiguity,
    EmptyDescription,
    Totality,
    UnknownLabel,
    Surjectivity,
    CaptionLength,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub detail: String,
}

impl Violation {
    fn new(code: ViolationCode, detail: impl Into<String>) -> Self {
        Self { code, detail: detail.into() }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", serde_json::to_value(self.code).unwrap().as_str().unwrap_or("?"), self.detail)
    }
}

pub fn caption_word_count(caption: &str) -> usize {
    caption.split_whitespace().count()
}

/// Checks the part list alone: count bounds, `Part1..PartK` labelling and
/// non-empty descriptions.
pub fn validate_parts(parts: &PartDecomposition, min_parts: usize, max_parts: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    let k = parts.len();
    if !(min_parts..=max_parts).contains(&k) {
        out.push(Violation::new(ViolationCode::PartCount, format!("{k} parts, expected {min_parts}..={max_parts}")));
    }
    for (i, p) in parts.parts.iter().enumerate() {
        let expected = PartLabel::from_index(i);
        if p.label != expected {
            out.push(Violation::new(
                ViolationCode::LabelContiguity,
                format!("position {} is labelled {}, expected {expected}", i + 1, p.label),
            ));
        }
        if p.description.trim().is_empty() {
            out.push(Violation::new(ViolationCode::EmptyDescription, format!("{} has no description", p.label)));
        }
    }
    out
}

/// Checks that `assignment` covers exactly paths `1..=path_count` with known
/// labels and that every part receives at least one path.
pub fn validate_assignment(
    parts: &PartDecomposition,
    assignment: &PathAssignment,
    path_count: usize,
) -> Vec<Violation> {
    let mut out = Vec::new();
    for i in 1..=path_count {
        if assignment.get(i).is_none() {
            out.push(Violation::new(ViolationCode::Totality, format!("Path{i} is not assigned")));
        }
    }
    for (i, _) in assignment.iter().filter(|&(i, _)| i > path_count) {
        out.push(Violation::new(
            ViolationCode::Totality,
            format!("Path{i} does not exist (sketch has {path_count} paths)"),
        ));
    }
    let known: BTreeSet<PartLabel> = parts.labels().into_iter().collect();
    for (i, label) in assignment.iter() {
        if !known.contains(&label) {
            out.push(Violation::new(ViolationCode::UnknownLabel, format!("Path{i} is assigned to unknown {label}")));
        }
    }
    let used: BTreeSet<PartLabel> = assignment.iter().map(|(_, l)| l).collect();
    for label in &known {
        if !used.contains(label) {
            out.push(Violation::new(ViolationCode::Surjectivity, format!("{label} receives no paths")));
        }
    }
    out
}

/// Every violated record invariant; empty when the record is well-formed.
pub fn validate_annotation(a: &AnnotatedSketch) -> Vec<Violation> {
    let mut out = validate_parts(&a.parts, MIN_PARTS, MAX_PARTS);
    out.extend(validate_assignment(&a.parts, &a.assignment, a.sketch.len()));
    let words = caption_word_count(&a.caption);
    if words > MAX_CAPTION_WORDS {
        out.push(Violation::new(
            ViolationCode::CaptionLength,
            format!("caption has {words} words, limit {MAX_CAPTION_WORDS}"),
        ));
    }
    out
}

impl AnnotatedSketch {
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let v = validate_annotation(self);
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    /// Strokes of one part, in original path order.
    pub fn part_strokes(&self, label: PartLabel) -> StrokeSequence {
        self.assignment.paths_of(label).into_iter().filter_map(|i| self.sketch.path(i).copied()).collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("malformed record: {0}")]
    Json(#[from] serde_json::Error),
    #[error("Path{index}: {source}")]
    Stroke { index: usize, source: FormatError },
    #[error("Path{index}: expected exactly one stroke, found {found}")]
    StrokeCount { index: usize, found: usize },
    #[error("invalid canvas {0}x{1}")]
    Canvas(u32, u32),
    #[error("record violates invariants: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invariant(Vec<Violation>),
}

#[derive(Serialize, Deserialize)]
struct CanvasRepr {
    width: u32,
    height: u32,
}

#[derive(Serialize, Deserialize)]
struct RecordRepr {
    id: String,
    canvas: CanvasRepr,
    paths: Vec<String>,
    caption: String,
    parts: PartDecomposition,
    assignment: PathAssignment,
}

fn stroke_line(s: &crate::CubicStroke) -> String {
    let mut line = emit_strokes(&StrokeSequence(vec![*s]), Rounding::None);
    line.pop();
    line
}

impl RecordRepr {
    fn from_record(a: &AnnotatedSketch) -> Self {
        Self {
            id: a.id.clone(),
            canvas: CanvasRepr { width: a.sketch.canvas.width, height: a.sketch.canvas.height },
            paths: a.sketch.paths.iter().map(stroke_line).collect(),
            caption: a.caption.clone(),
            parts: a.parts.clone(),
            assignment: a.assignment.clone(),
        }
    }

    fn into_record(self) -> Result<AnnotatedSketch, DecodeError> {
        let canvas = CanvasConfig::with_size(self.canvas.width, self.canvas.height);
        if !canvas.is_valid() {
            return Err(DecodeError::Canvas(self.canvas.width, self.canvas.height));
        }
        let mut paths = Vec::with_capacity(self.paths.len());
        for (i, text) in self.paths.iter().enumerate() {
            let seq = parse_strokes(text).map_err(|source| DecodeError::Stroke { index: i + 1, source })?;
            if seq.len() != 1 {
                return Err(DecodeError::StrokeCount { index: i + 1, found: seq.len() });
            }
            paths.push(seq.0[0]);
        }
        let rec = AnnotatedSketch {
            id: self.id,
            sketch: Sketch::new(paths, canvas),
            caption: self.caption,
            parts: self.parts,
            assignment: self.assignment,
        };
        rec.validate().map_err(DecodeError::Invariant)?;
        Ok(rec)
    }
}

/// Record as a compact single-line JSON object.
pub fn serialize_record(a: &AnnotatedSketch) -> Vec<u8> {
    serde_json::to_vec(&RecordRepr::from_record(a)).expect("record serializes")
}

pub fn record_to_json(a: &AnnotatedSketch) -> serde_json::Value {
    serde_json::to_value(RecordRepr::from_record(a)).expect("record serializes")
}

/// Parses and validates a record.
pub fn deserialize_record(bytes: &[u8]) -> Result<AnnotatedSketch, DecodeError> {
    serde_json::from_slice::<RecordRepr>(bytes)?.into_record()
}

/// Reads either a single JSON object or JSON-Lines (one record per
/// non-blank line).
pub fn read_records(text: &str) -> Result<Vec<AnnotatedSketch>, (usize, DecodeError)> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    if let Ok(rec) = deserialize_record(trimmed.as_bytes()) {
        return Ok(vec![rec]);
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| deserialize_record(l.as_bytes()).map_err(|e| (i + 1, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partdata::fixtures::three_part_record;

    fn codes(a: &AnnotatedSketch) -> Vec<ViolationCode> {
        validate_annotation(a).into_iter().map(|v| v.code).collect()
    }

    #[test]
    fn well_formed_record_is_ok() {
        assert!(validate_annotation(&three_part_record()).is_empty());
    }

    #[test]
    fn empty_part_violates_surjectivity() {
        let mut a = three_part_record();
        for i in a.assignment.paths_of(PartLabel::from_index(1)) {
            a.assignment.insert(i, PartLabel::from_index(0));
        }
        assert_eq!(codes(&a), vec![ViolationCode::Surjectivity]);
    }

    #[test]
    fn six_parts_violate_part_count() {
        let mut a = three_part_record();
        a.parts = PartDecomposition::from_descriptions(["a", "b", "c", "d", "e", "f"]);
        a.sketch.paths = vec![crate::CubicStroke::default(); 6];
        a.assignment = PathAssignment::from_labels((0..6).map(PartLabel::from_index));
        assert_eq!(codes(&a), vec![ViolationCode::PartCount]);
    }

    #[test]
    fn other_violations() {
        let mut a = three_part_record();
        a.assignment.remove(1);
        a.caption = "word ".repeat(26);
        a.parts.parts[2].label = PartLabel::new(7).unwrap();
        let c = codes(&a);
        for expected in [
            ViolationCode::Totality,
            ViolationCode::CaptionLength,
            ViolationCode::LabelContiguity,
            ViolationCode::UnknownLabel,
        ] {
            assert!(c.contains(&expected), "{expected:?} missing from {c:?}");
        }
    }

    #[test]
    fn serialization_round_trip_and_shape() {
        let a = three_part_record();
        let bytes = serialize_record(&a);
        assert_eq!(deserialize_record(&bytes).unwrap(), a);
        let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(v["canvas"], serde_json::json!({"width": 512, "height": 512}));
        assert_eq!(v["paths"][0], "M 100 40 C 120 20 140 20 160 40");
        assert_eq!(v["parts"][0]["label"], "Part1");
        assert_eq!(v["assignment"]["Path1"], "Part1");
    }

    #[test]
    fn truncated_bytes_fail() {
        let bytes = serialize_record(&three_part_record());
        assert!(matches!(deserialize_record(&bytes[..bytes.len() / 2]), Err(DecodeError::Json(_))));
    }

    #[test]
    fn invariant_violation_fails_decode() {
        let mut v = record_to_json(&three_part_record());
        v["assignment"]["Path3"] = "Part1".into();
        v["assignment"]["Path4"] = "Part1".into();
        let err = deserialize_record(v.to_string().as_bytes()).unwrap_err();
        match err {
            DecodeError::Invariant(vs) => assert!(vs.iter().any(|v| v.code == ViolationCode::Surjectivity)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn jsonl_reading() {
        let a = three_part_record();
        let line = String::from_utf8(serialize_record(&a)).unwrap();
        let text = format!("{line}\n\n{line}\n");
        assert_eq!(read_records(&text).unwrap().len(), 2);
        assert_eq!(read_records(&line).unwrap().len(), 1);
        assert_eq!(read_records("{}\n").unwrap_err().0, 1);
    }
}
