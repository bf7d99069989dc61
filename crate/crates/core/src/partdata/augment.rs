use std::collections::{BTreeSet, HashSet};

use base64::Engine as _;
use serde::Serialize;

use super::labels::{PartLabel, PartSpec};
use super::record::{AnnotatedSketch, Violation};
use crate::raster::{rasterize, Bitmap, BitmapError};
use crate::stroke::{emit_strokes, Rounding, Sketch, SketchRng, StrokeSequence};

/// Default cap on sampled part permutations per record.
pub const DEFAULT_MAX_PERMUTATIONS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OrderError {
    #[error("order is not a permutation of the record's part labels")]
    NotPermutation,
    #[error("step {t} is outside 0..={k}")]
    StepOutOfRange { t: usize, k: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AugmentError {
    #[error("record does not validate: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Violation>),
}

fn check_order(a: &AnnotatedSketch, order: &[PartLabel]) -> Result<(), OrderError> {
    let labels: BTreeSet<PartLabel> = a.parts.labels().into_iter().collect();
    let given: BTreeSet<PartLabel> = order.iter().copied().collect();
    if order.len() != a.parts.len() || labels.len() != a.parts.len() || given != labels {
        return Err(OrderError::NotPermutation);
    }
    Ok(())
}

/// Paths of the first `t` parts of `order`, in original path order.
pub fn assemble_partial_gt(a: &AnnotatedSketch, order: &[PartLabel], t: usize) -> Result<Sketch, OrderError> {
    check_order(a, order)?;
    if t > order.len() {
        return Err(OrderError::StepOutOfRange { t, k: order.len() });
    }
    let drawn: HashSet<PartLabel> = order[..t].iter().copied().collect();
    let paths = a
        .sketch
        .paths
        .iter()
        .enumerate()
        .filter(|(i, _)| a.assignment.get(i + 1).is_some_and(|l| drawn.contains(&l)))
        .map(|(_, s)| *s)
        .collect();
    Ok(Sketch::new(paths, a.sketch.canvas))
}

/// Up to `max_perms` distinct permutations of `0..k`, each drawn by a
/// Fisher-Yates shuffle and rejected when already seen. When `max_perms`
/// reaches `k!`, every permutation is returned in draw order.
pub fn sample_permutations(k: usize, max_perms: usize, seed: u64) -> Vec<Vec<usize>> {
    let total = (1..=k).try_fold(1usize, |acc, n| acc.checked_mul(n)).unwrap_or(usize::MAX);
    let want = max_perms.min(total);
    let mut rng = SketchRng::new(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(want);
    while out.len() < want {
        let mut p: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            let j = rng.below_inclusive(i as u64) as usize;
            p.swap(i, j);
        }
        if seen.insert(p.clone()) {
            out.push(p);
        }
    }
    out
}

/// One supervised turn: the model sees the canvas so far and must draw
/// `next_part`.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnExample {
    pub canvas_render: Bitmap,
    pub caption: String,
    pub next_part: PartSpec,
    pub drawn_parts: Vec<(PartSpec, StrokeSequence)>,
    pub remaining_after: usize,
    pub target: StrokeSequence,
    /// Part order this turn belongs to.
    pub order: Vec<PartLabel>,
    /// 1-based turn number within `order`.
    pub turn: usize,
}

#[derive(Serialize)]
pub struct SftDrawnPart {
    pub label: PartLabel,
    pub description: String,
    pub paths: String,
}

/// JSON form of a [`TurnExample`] with stroke text rounded to the nearest
/// ten.
#[derive(Serialize)]
pub struct SftRecord {
    pub record_id: String,
    pub order: Vec<PartLabel>,
    pub turn: usize,
    pub caption: String,
    pub next_part: PartSpec,
    pub drawn_parts: Vec<SftDrawnPart>,
    pub remaining_after: usize,
    pub target: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub canvas_png_base64: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub canvas_png: Option<String>,
}

impl TurnExample {
    /// `image_ref` names an external PNG file; without it the render is
    /// embedded as base64.
    pub fn to_sft(&self, record_id: &str, image_ref: Option<String>) -> Result<SftRecord, BitmapError> {
        let embedded = match image_ref {
            Some(_) => None,
            None => Some(base64::engine::general_purpose::STANDARD.encode(self.canvas_render.to_png()?)),
        };
        Ok(SftRecord {
            record_id: record_id.to_string(),
            order: self.order.clone(),
            turn: self.turn,
            caption: self.caption.clone(),
            next_part: self.next_part.clone(),
            drawn_parts: self
                .drawn_parts
                .iter()
                .map(|(spec, strokes)| SftDrawnPart {
                    label: spec.label,
                    description: spec.description.clone(),
                    paths: emit_strokes(strokes, Rounding::NearestTen),
                })
                .collect(),
            remaining_after: self.remaining_after,
            target: emit_strokes(&self.target, Rounding::NearestTen),
            canvas_png_base64: embedded,
            canvas_png: image_ref,
        })
    }
}

/// Turn examples for one part order.
pub fn turn_examples(a: &AnnotatedSketch, order: &[PartLabel]) -> Result<Vec<TurnExample>, OrderError> {
    check_order(a, order)?;
    let k = order.len();
    let mut drawn: Vec<(PartSpec, StrokeSequence)> = Vec::with_capacity(k);
    let mut out = Vec::with_capacity(k);
    for (t, &label) in order.iter().enumerate() {
        let spec = a.parts.get(label).cloned().ok_or(OrderError::NotPermutation)?;
        let canvas = assemble_partial_gt(a, order, t)?;
        let target = a.part_strokes(label);
        out.push(TurnExample {
            canvas_render: rasterize(&canvas),
            caption: a.caption.clone(),
            next_part: spec.clone(),
            drawn_parts: drawn.clone(),
            remaining_after: k - t - 1,
            target: target.clone(),
            order: order.to_vec(),
            turn: t + 1,
        });
        drawn.push((spec, target));
    }
    Ok(out)
}

/// Expands a record into `min(max_perms, K!)` part orders times `K` turns.
pub fn permute_augment(a: &AnnotatedSketch, max_perms: usize, seed: u64) -> Result<Vec<TurnExample>, AugmentError> {
    a.validate().map_err(AugmentError::Validation)?;
    let labels = a.parts.labels();
    let mut out = Vec::new();
    for perm in sample_permutations(labels.len(), max_perms, seed) {
        let order: Vec<PartLabel> = perm.iter().map(|&i| labels[i]).collect();
        out.extend(turn_examples(a, &order).expect("validated record has a consistent order"));
    }
    Ok(out)
}
