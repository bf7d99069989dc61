//! Seven-stage part annotation over a vision-language model.
//!
//! Stages run strictly in order for one sketch:
//! decompose, critique parts, refine parts (only when the critique asks for
//! it), assign paths, critique the assignment with a diagnostic image,
//! refine the assignment (again only on request), caption. Every response is
//! validated locally; a rejected response is re-requested with the same
//! prompt up to `max_retries` times.

mod client;
mod schema;
mod template;

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub use client::{
    encode_parts, ClientError, HttpVlmClient, ReplayClient, RequestPart, ScriptedClient, VlmClient, VlmRequest,
    AUTO_RESPONSE,
};
pub use schema::{
    assignment_schema, check_schema, critique_schema, parse_assignment, parse_critique, parse_json, parse_parts,
    parts_schema, validate as validate_schema, CritiqueReport, Issue, SchemaErrorKind, SchemaViolation, Severity,
};
pub use template::{
    fill, instruction_text, placeholders, required_placeholders, ImageSlot, Segment, TemplateError, Templates,
};

use crate::partdata::{
    caption_word_count, AnnotatedSketch, PartDecomposition, PathAssignment, Violation, MAX_CAPTION_WORDS,
};
use crate::raster::{diagnostic_panel, rasterize, AssignmentError, Bitmap, Palette};
use crate::stroke::{export_svg, Sketch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Decompose,
    CritiqueParts,
    RefineParts,
    Assign,
    CritiqueAssignment,
    RefineAssignment,
    Caption,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Decompose,
        Stage::CritiqueParts,
        Stage::RefineParts,
        Stage::Assign,
        Stage::CritiqueAssignment,
        Stage::RefineAssignment,
        Stage::Caption,
    ];

    /// 1-based position in the pipeline.
    pub fn number(self) -> usize {
        self as usize + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Decompose => "decompose",
            Stage::CritiqueParts => "critique-parts",
            Stage::RefineParts => "refine-parts",
            Stage::Assign => "assign",
            Stage::CritiqueAssignment => "critique-assignment",
            Stage::RefineAssignment => "refine-assignment",
            Stage::Caption => "caption",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "step{}", self.number())
    }
}

impl FromStr for Stage {
    type Err = String;

    /// Accepts `step3`, `3` or `refine-parts`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let n = s.strip_prefix("step").unwrap_or(s);
        if let Ok(n) = n.parse::<usize>() {
            if (1..=7).contains(&n) {
                return Ok(Stage::ALL[n - 1]);
            }
        }
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

impl Serialize for Stage {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Stage {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub min_parts: usize,
    pub max_parts: usize,
    pub max_retries: usize,
    /// Sketches annotated in parallel by [`annotate_batch`].
    pub concurrency: usize,
    pub templates: Templates,
    pub palette: Palette,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            min_parts: 2,
            max_parts: 5,
            max_retries: 2,
            concurrency: 4,
            templates: Templates::default(),
            palette: Palette::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("part bounds {0}..={1} are invalid")]
    PartBounds(usize, usize),
    #[error("concurrency must be at least 1")]
    Concurrency,
    #[error("palette has {0} colors but up to {1} parts are allowed")]
    Palette(usize, usize),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.min_parts < 1 || self.min_parts > self.max_parts {
            return Err(ConfigError::PartBounds(self.min_parts, self.max_parts));
        }
        if self.concurrency < 1 {
            return Err(ConfigError::Concurrency);
        }
        if self.palette.len() < self.max_parts {
            return Err(ConfigError::Palette(self.palette.len(), self.max_parts));
        }
        self.templates.check()?;
        Ok(())
    }
}

/// One request/response exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub stage: Stage,
    pub attempt: usize,
    pub request_digest: String,
    pub prompt_text: String,
    pub image_digests: Vec<String>,
    pub raw_response: Option<String>,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection: Option<String>,
    /// Images sent with the request; kept in memory only.
    #[serde(skip)]
    pub images: Vec<Bitmap>,
}

/// Audit log of every model call made for one sketch, serialized as a JSON
/// array of entries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StageTrace {
    pub entries: Vec<TraceEntry>,
}

impl StageTrace {
    pub fn stages_called(&self) -> Vec<Stage> {
        self.entries.iter().map(|e| e.stage).collect()
    }

    pub fn accepted(&self, stage: Stage) -> Option<&TraceEntry> {
        self.entries.iter().rev().find(|e| e.stage == stage && e.accepted)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("{stage}: response rejected after {attempts} attempts: {violation}")]
    Schema { stage: Stage, violation: SchemaViolation, attempts: usize },
    #[error("caption has {words} words after {attempts} attempts (limit {MAX_CAPTION_WORDS})")]
    CaptionTooLong { words: usize, attempts: usize },
    #[error("{stage}: {source}")]
    Client { stage: Stage, source: ClientError },
    #[error("sketch has no paths")]
    EmptySketch,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("diagnostic rendering failed: {0}")]
    Diagnostic(#[from] AssignmentError),
    #[error("annotation does not validate: {0:?}")]
    Invalid(Vec<Violation>),
}

impl PipelineError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Schema { stage, .. } | PipelineError::Client { stage, .. } => Some(*stage),
            PipelineError::CaptionTooLong { .. } => Some(Stage::Caption),
            _ => None,
        }
    }
}

enum Rejection {
    Schema(SchemaViolation),
    CaptionTooLong(usize),
}

impl From<SchemaViolation> for Rejection {
    fn from(v: SchemaViolation) -> Self {
        Rejection::Schema(v)
    }
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rejection::Schema(v) => v.fmt(f),
            Rejection::CaptionTooLong(w) => write!(f, "caption-too-long: {w} words"),
        }
    }
}

fn build_request(
    stage: Stage,
    cfg: &PipelineConfig,
    vars: &[(&str, &str)],
    rendering: &Bitmap,
    diag: Option<&Bitmap>,
    schema: Option<serde_json::Value>,
) -> VlmRequest {
    let parts = fill(cfg.templates.get(stage), vars)
        .into_iter()
        .filter_map(|seg| match seg {
            Segment::Text(t) => Some(RequestPart::Text(t)),
            Segment::Image(ImageSlot::Rendering) => Some(RequestPart::Image(rendering.clone())),
            Segment::Image(ImageSlot::Diagnostic) => diag.map(|d| RequestPart::Image(d.clone())),
        })
        .collect();
    VlmRequest { stage, parts, schema }
}

fn run_stage<T>(
    client: &dyn VlmClient,
    cfg: &PipelineConfig,
    trace: &mut StageTrace,
    req: VlmRequest,
    parse: impl Fn(&str) -> Result<T, Rejection>,
) -> Result<T, PipelineError> {
    let stage = req.stage;
    let digest = req.digest();
    let prompt = req.prompt_text();
    let images: Vec<Bitmap> = req.image_parts().into_iter().cloned().collect();
    let image_digests = req.image_digests();
    let attempts = cfg.max_retries + 1;
    let mut last = None;
    for attempt in 1..=attempts {
        let mut entry = TraceEntry {
            stage,
            attempt,
            request_digest: digest.clone(),
            prompt_text: prompt.clone(),
            image_digests: image_digests.clone(),
            raw_response: None,
            accepted: false,
            rejection: None,
            images: images.clone(),
        };
        let raw = match client.request(&req) {
            Ok(raw) => raw,
            Err(source) => {
                entry.rejection = Some(source.to_string());
                trace.entries.push(entry);
                return Err(PipelineError::Client { stage, source });
            }
        };
        entry.raw_response = Some(raw.clone());
        match parse(&raw) {
            Ok(v) => {
                entry.accepted = true;
                trace.entries.push(entry);
                return Ok(v);
            }
            Err(r) => {
                entry.rejection = Some(r.to_string());
                trace.entries.push(entry);
                last = Some(r);
            }
        }
    }
    Err(match last.expect("at least one attempt") {
        Rejection::Schema(violation) => PipelineError::Schema { stage, violation, attempts },
        Rejection::CaptionTooLong(words) => PipelineError::CaptionTooLong { words, attempts },
    })
}

fn parts_json(parts: &PartDecomposition) -> String {
    serde_json::to_string(&parts.descriptions()).expect("strings serialize")
}

fn step1_instruction(cfg: &PipelineConfig) -> String {
    let (min, max) = (cfg.min_parts.to_string(), cfg.max_parts.to_string());
    instruction_text(cfg.templates.get(Stage::Decompose), &[("min_parts", &min), ("max_parts", &max)])
}

struct AssignVars {
    svg_text: String,
    joined_parts: String,
    num_paths: String,
}

impl AssignVars {
    fn new(sketch: &Sketch, parts: &PartDecomposition) -> Self {
        Self { svg_text: export_svg(sketch), joined_parts: parts.joined(), num_paths: sketch.len().to_string() }
    }

    fn vars(&self) -> [(&str, &str); 3] {
        [("svg_text", &self.svg_text), ("joined_parts", &self.joined_parts), ("num_paths", &self.num_paths)]
    }
}

fn step4_instruction(cfg: &PipelineConfig, sketch: &Sketch, parts: &PartDecomposition) -> String {
    instruction_text(cfg.templates.get(Stage::Assign), &AssignVars::new(sketch, parts).vars())
}

pub fn stage1_decompose(
    client: &dyn VlmClient,
    rendering: &Bitmap,
    cfg: &PipelineConfig,
    trace: &mut StageTrace,
) -> Result<PartDecomposition, PipelineError> {
    let (min, max) = (cfg.min_parts.to_string(), cfg.max_parts.to_string());
    let req = build_request(
        Stage::Decompose,
        cfg,
        &[("min_parts", &min), ("max_parts", &max)],
        rendering,
        None,
        Some(parts_schema(cfg.min_parts, cfg.max_parts)),
    );
    run_stage(client, cfg, trace, req, |raw| Ok(parse_parts(raw, cfg.min_parts, cfg.max_parts)?))
}

pub fn stage2_critique_parts(
    client: &dyn VlmClient,
    rendering: &Bitmap,
    parts: &PartDecomposition,
    cfg: &PipelineConfig,
    trace: &mut StageTrace,
) -> Result<CritiqueReport, PipelineError> {
    let instr = step1_instruction(cfg);
    let old = parts_json(parts);
    let req = build_request(
        Stage::CritiqueParts,
        cfg,
        &[("step1_instruction", &instr), ("old_parts_json", &old)],
        rendering,
        None,
        Some(critique_schema()),
    );
    run_stage(client, cfg, trace, req, |raw| Ok(parse_critique(raw)?))
}

pub fn stage3_refine_parts(
    client: &dyn VlmClient,
    rendering: &Bitmap,
    parts: &PartDecomposition,
    critique: &CritiqueReport,
    cfg: &PipelineConfig,
    trace: &mut StageTrace,
) -> Result<PartDecomposition, PipelineError> {
    let (min, max) = (cfg.min_parts.to_string(), cfg.max_parts.to_string());
    let old = parts_json(parts);
    let crit = serde_json::to_string(critique).expect("critique serializes");
    let instr = step1_instruction(cfg);
    let req = build_request(
        Stage::RefineParts,
        cfg,
        &[
            ("old_parts_json", &old),
            ("critique_json", &crit),
            ("min_parts", &min),
            ("max_parts", &max),
            ("step1_instruction", &instr),
        ],
        rendering,
        None,
        Some(parts_schema(cfg.min_parts, cfg.max_parts)),
    );
    run_stage(client, cfg, trace, req, |raw| Ok(parse_parts(raw, cfg.min_parts, cfg.max_parts)?))
}

pub fn stage4_assign(
    client: &dyn VlmClient,
    rendering: &Bitmap,
    sketch: &Sketch,
    parts: &PartDecomposition,
    cfg: &PipelineConfig,
    trace: &mut StageTrace,
) -> Result<PathAssignment, PipelineError> {
    if sketch.is_empty() {
        return Err(PipelineError::EmptySketch);
    }
    let av = AssignVars::new(sketch, parts);
    let req = build_request(
        Stage::Assign,
        cfg,
        &av.vars(),
        rendering,
        None,
        Some(assignment_schema(sketch.len(), parts.len())),
    );
    run_stage(client, cfg, trace, req, |raw| Ok(parse_assignment(raw, sketch.len(), parts)?))
}

#[allow(clippy::too_many_arguments)]
pub fn stage5_critique_assignment(
    client: &dyn VlmClient,
    rendering: &Bitmap,
    diag: &Bitmap,
    sketch: &Sketch,
    assignment: &PathAssignment,
    parts: &PartDecomposition,
    cfg: &PipelineConfig,
    trace: &mut StageTrace,
) -> Result<CritiqueReport, PipelineError> {
    let instr = step4_instruction(cfg, sketch, parts);
    let old = assignment.to_json().to_string();
    let req = build_request(
        Stage::CritiqueAssignment,
        cfg,
        &[("step4_instruction", &instr), ("old_assignments_json", &old)],
        rendering,
        Some(diag),
        Some(critique_schema()),
    );
    run_stage(client, cfg, trace, req, |raw| Ok(parse_critique(raw)?))
}

#[allow(clippy::too_many_arguments)]
pub fn stage6_refine_assignment(
    client: &dyn VlmClient,
    rendering: &Bitmap,
    sketch: &Sketch,
    parts: &PartDecomposition,
    assignment: &PathAssignment,
    critique: &CritiqueReport,
    cfg: &PipelineConfig,
    trace: &mut StageTrace,
) -> Result<PathAssignment, PipelineError> {
    let instr = step4_instruction(cfg, sketch, parts);
    let old = assignment.to_json().to_string();
    let crit = serde_json::to_string(critique).expect("critique serializes");
    let av = AssignVars::new(sketch, parts);
    let mut vars = vec![
        ("step4_instruction", instr.as_str()),
        ("old_assignments_json", old.as_str()),
        ("critique_json", crit.as_str()),
    ];
    vars.extend(av.vars());
    let req = build_request(
        Stage::RefineAssignment,
        cfg,
        &vars,
        rendering,
        None,
        Some(assignment_schema(sketch.len(), parts.len())),
    );
    run_stage(client, cfg, trace, req, |raw| Ok(parse_assignment(raw, sketch.len(), parts)?))
}

pub fn stage7_caption(
    client: &dyn VlmClient,
    rendering: &Bitmap,
    parts: &PartDecomposition,
    cfg: &PipelineConfig,
    trace: &mut StageTrace,
) -> Result<String, PipelineError> {
    let joined = parts.joined();
    let req = build_request(Stage::Caption, cfg, &[("joined_parts", &joined)], rendering, None, None);
    run_stage(client, cfg, trace, req, |raw| {
        let caption = raw.trim();
        let words = caption_word_count(caption);
        if words == 0 {
            Err(SchemaViolation::new(SchemaErrorKind::EmptyText, "empty caption").into())
        } else if words > MAX_CAPTION_WORDS {
            Err(Rejection::CaptionTooLong(words))
        } else {
            Ok(caption.to_string())
        }
    })
}

#[derive(Debug, Clone)]
pub struct Annotation {
    pub record: AnnotatedSketch,
    pub trace: StageTrace,
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("{error}")]
pub struct AnnotationFailure {
    pub error: PipelineError,
    pub trace: StageTrace,
}

/// Runs all stages for one sketch and returns the validated record with its
/// trace. Refinement outputs replace the initial ones only when the matching
/// critique asked for revision.
pub fn annotate_sketch(
    client: &dyn VlmClient,
    id: &str,
    sketch: &Sketch,
    cfg: &PipelineConfig,
) -> Result<Annotation, AnnotationFailure> {
    let mut trace = StageTrace::default();
    match run_pipeline(client, id, sketch, cfg, &mut trace) {
        Ok(record) => Ok(Annotation { record, trace }),
        Err(error) => Err(AnnotationFailure { error, trace }),
    }
}

fn run_pipeline(
    client: &dyn VlmClient,
    id: &str,
    sketch: &Sketch,
    cfg: &PipelineConfig,
    trace: &mut StageTrace,
) -> Result<AnnotatedSketch, PipelineError> {
    cfg.validate()?;
    if sketch.is_empty() {
        return Err(PipelineError::EmptySketch);
    }
    let rendering = rasterize(sketch);

    let mut parts = stage1_decompose(client, &rendering, cfg, trace)?;
    let critique = stage2_critique_parts(client, &rendering, &parts, cfg, trace)?;
    if critique.should_revise {
        parts = stage3_refine_parts(client, &rendering, &parts, &critique, cfg, trace)?;
    }

    let mut assignment = stage4_assign(client, &rendering, sketch, &parts, cfg, trace)?;
    let diag = diagnostic_panel(&parts, &assignment, sketch, &cfg.palette)?;
    let critique = stage5_critique_assignment(client, &rendering, &diag, sketch, &assignment, &parts, cfg, trace)?;
    if critique.should_revise {
        assignment = stage6_refine_assignment(client, &rendering, sketch, &parts, &assignment, &critique, cfg, trace)?;
    }

    let caption = stage7_caption(client, &rendering, &parts, cfg, trace)?;
    let record = AnnotatedSketch { id: id.to_string(), sketch: sketch.clone(), caption, parts, assignment };
    record.validate().map_err(PipelineError::Invalid)?;
    Ok(record)
}

/// Annotates many sketches with up to `cfg.concurrency` in flight. Each
/// sketch gets its own client from `make_client`; results keep input order.
pub fn annotate_batch<C, F>(
    items: &[(String, Sketch)],
    cfg: &PipelineConfig,
    make_client: F,
) -> Vec<Result<Annotation, AnnotationFailure>>
where
    C: VlmClient,
    F: Fn(&str) -> C + Sync,
{
    let next = AtomicUsize::new(0);
    let results: Mutex<BTreeMap<usize, Result<Annotation, AnnotationFailure>>> = Mutex::default();
    let workers = cfg.concurrency.max(1).min(items.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((id, sketch)) = items.get(i) else { break };
                let client = make_client(id);
                let r = annotate_sketch(&client, id, sketch, cfg);
                results.lock().unwrap().insert(i, r);
            });
        }
    });
    results.into_inner().unwrap().into_values().collect()
}
