//! Interactive part-by-part sketching sessions with branching edits.
//!
//! A session holds a caption, an ordered queue of parts and the turns drawn
//! so far, one per part. Edits either act in place (`remove_part`,
//! `replace_part`) or fork a new session (`regenerate`), leaving the
//! original untouched.

mod backend;
mod store;

pub use backend::{
    Backend, BackendError, BackendSpec, RandomBackend, ReplayBackend, Transport, TurnInput, VlmBackend,
    NEXT_PART_TEMPLATE,
};
pub use store::{SessionStore, StoreError};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::partdata::{AnnotatedSketch, PartDecomposition, PartLabel, PartSpec, MAX_PARTS, MIN_PARTS};
use crate::raster::{draw_strokes, hex_lower, Bitmap, Palette, DEFAULT_TOLERANCE, INK};
use crate::stroke::{emit_strokes, parse_strokes, CanvasConfig, CubicStroke, Rounding, Sketch, StrokeSequence};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub part: PartSpec,
    /// Stroke text, one stroke per line.
    pub paths: String,
    /// Backend that produced the strokes.
    pub origin: String,
}

impl Turn {
    pub fn strokes(&self) -> StrokeSequence {
        parse_strokes(&self.paths).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub session: String,
    pub turn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub caption: String,
    pub parts: Vec<PartSpec>,
    pub turns: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<BranchPoint>,
    pub canvas: CanvasConfig,
    /// Backend calls made in this session's history; varies random draws.
    #[serde(default)]
    pub generations: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("invalid session: {0}")]
    Validation(String),
    #[error("every part has been drawn")]
    Exhausted,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("turn {index} does not exist (session has {len} turns)")]
    Index { index: usize, len: usize },
    #[error("no drawn part {0}")]
    UnknownPart(String),
}

fn check_text(text: &str) -> Result<StrokeSequence, BackendError> {
    match parse_strokes(text) {
        Ok(s) if !s.is_empty() => Ok(s),
        Ok(_) => Err(BackendError::Invalid { attempts: 1, detail: "empty response".into() }),
        Err(e) => Err(BackendError::Invalid { attempts: 1, detail: e.to_string() }),
    }
}

impl Session {
    /// New session with `2..=5` non-empty part descriptions.
    pub fn new(
        id: impl Into<String>,
        caption: impl Into<String>,
        descriptions: &[String],
    ) -> Result<Self, SessionError> {
        if !(MIN_PARTS..=MAX_PARTS).contains(&descriptions.len()) {
            return Err(SessionError::Validation(format!(
                "need {MIN_PARTS} to {MAX_PARTS} parts, got {}",
                descriptions.len()
            )));
        }
        if let Some(i) = descriptions.iter().position(|d| d.trim().is_empty()) {
            return Err(SessionError::Validation(format!("part {} has an empty description", i + 1)));
        }
        Ok(Self {
            id: id.into(),
            caption: caption.into(),
            parts: PartDecomposition::from_descriptions(descriptions.iter().cloned()).parts,
            turns: Vec::new(),
            parent: None,
            canvas: CanvasConfig::default(),
            generations: 0,
        })
    }

    /// Empty session with a record's caption, parts and canvas.
    pub fn from_record(id: impl Into<String>, record: &AnnotatedSketch) -> Result<Self, SessionError> {
        let mut s = Self::new(id, record.caption.clone(), &record.parts.descriptions())?;
        s.canvas = record.sketch.canvas;
        Ok(s)
    }

    pub fn turn_of(&self, label: PartLabel) -> Option<usize> {
        self.turns.iter().position(|t| t.part.label == label)
    }

    /// First queued part without a turn.
    pub fn next_part(&self) -> Option<&PartSpec> {
        self.parts.iter().find(|p| self.turn_of(p.label).is_none())
    }

    pub fn is_complete(&self) -> bool {
        self.next_part().is_none()
    }

    pub fn sketch(&self) -> Sketch {
        Sketch::new(self.turns.iter().flat_map(|t| t.strokes().0).collect(), self.canvas)
    }

    fn canvas_of(&self, turns: &[Turn]) -> Bitmap {
        let c = self.canvas;
        let mut bmp = Bitmap::gray(c.width, c.height, c.background);
        for t in turns {
            draw_strokes(&mut bmp, &t.strokes().0, c.stroke_width, DEFAULT_TOLERANCE, &[INK]);
        }
        bmp
    }

    /// Turn inputs for drawing `part` after `before`.
    fn input(&self, part: &PartSpec, before: &[Turn]) -> TurnInput {
        let drawn_labels: Vec<PartLabel> = before.iter().map(|t| t.part.label).collect();
        let remaining = self.parts.iter().filter(|p| p.label != part.label && !drawn_labels.contains(&p.label)).count();
        TurnInput {
            canvas: self.canvas_of(before),
            caption: self.caption.clone(),
            next_part: part.clone(),
            drawn: before.iter().map(|t| (t.part.clone(), t.strokes())).collect(),
            remaining,
        }
    }

    fn generate(&mut self, part: &PartSpec, before: usize, backend: &dyn Backend) -> Result<Turn, SessionError> {
        let input = self.input(part, &self.turns[..before]);
        let text = backend.next_part(&input)?;
        let strokes = check_text(&text)?;
        self.generations += 1;
        Ok(Turn { part: part.clone(), paths: emit_strokes(&strokes, Rounding::None), origin: backend.name() })
    }

    /// Draws the next queued part. Nothing changes on error.
    pub fn step(&mut self, backend: &dyn Backend) -> Result<&Turn, SessionError> {
        let part = self.next_part().cloned().ok_or(SessionError::Exhausted)?;
        let mut next = self.clone();
        let turn = next.generate(&part, self.turns.len(), backend)?;
        self.generations = next.generations;
        self.turns.push(turn);
        Ok(self.turns.last().expect("just pushed"))
    }

    /// A new session `id` that keeps turns before `index`, redraws turn
    /// `index` and drops the rest.
    pub fn regenerate(
        &self,
        id: impl Into<String>,
        index: usize,
        backend: &dyn Backend,
    ) -> Result<Session, SessionError> {
        if index >= self.turns.len() {
            return Err(SessionError::Index { index, len: self.turns.len() });
        }
        let mut branch = self.clone();
        branch.id = id.into();
        branch.parent = Some(BranchPoint { session: self.id.clone(), turn: index });
        let part = self.turns[index].part.clone();
        let turn = branch.generate(&part, index, backend)?;
        branch.turns.truncate(index);
        branch.turns.push(turn);
        Ok(branch)
    }

    /// Deletes a drawn part's strokes and drops it from the queue.
    pub fn remove_part(&mut self, label: PartLabel) -> Result<Turn, SessionError> {
        let i = self.turn_of(label).ok_or_else(|| SessionError::UnknownPart(label.to_string()))?;
        self.parts.retain(|p| p.label != label);
        Ok(self.turns.remove(i))
    }

    /// Redraws a drawn part in place under a new description; other turns
    /// are kept as they are.
    pub fn replace_part(
        &mut self,
        label: PartLabel,
        description: &str,
        backend: &dyn Backend,
    ) -> Result<&Turn, SessionError> {
        let i = self.turn_of(label).ok_or_else(|| SessionError::UnknownPart(label.to_string()))?;
        if description.trim().is_empty() {
            return Err(SessionError::Validation("empty description".into()));
        }
        let part = PartSpec::new(label, description);
        let mut next = self.clone();
        let turn = next.generate(&part, i, backend)?;
        self.generations = next.generations;
        if let Some(p) = self.parts.iter_mut().find(|p| p.label == label) {
            p.description = description.to_string();
        }
        self.turns[i] = turn;
        Ok(&self.turns[i])
    }

    /// Colored render, one palette color per part label.
    pub fn render(&self, palette: &Palette) -> Bitmap {
        let c = self.canvas;
        let mut bmp = Bitmap::rgb(c.width, c.height, [c.background; 3]);
        for t in &self.turns {
            let color = palette.color(t.part.label).unwrap_or([0, 0, 0]);
            draw_strokes(&mut bmp, &t.strokes().0, c.stroke_width, DEFAULT_TOLERANCE, &color);
        }
        bmp
    }

    /// SVG with one group per turn, stroked in the part's palette color.
    pub fn to_svg(&self, palette: &Palette) -> String {
        let CanvasConfig { width, height, stroke_width, .. } = self.canvas;
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
        );
        for t in &self.turns {
            let color =
                palette.color(t.part.label).map_or_else(|| "#000000".to_string(), |c| format!("#{}", hex_lower(&c)));
            let _ = writeln!(
                out,
                r#"<g data-part="{}" fill="none" stroke="{color}" stroke-width="{stroke_width}" stroke-linecap="round" stroke-linejoin="round">"#,
                t.part.label
            );
            for s in t.strokes().iter() {
                let [a, b, c, d, e, f, g, h] = s.coords();
                let _ = writeln!(out, r#"<path d="M {a} {b} C {c} {d} {e} {f} {g} {h}"/>"#);
            }
            out.push_str("</g>\n");
        }
        out.push_str("</svg>\n");
        out
    }

    pub fn view(&self, palette: &Palette) -> SessionView {
        let parts = self
            .parts
            .iter()
            .map(|p| {
                let turn = self.turn_of(p.label).map(|i| &self.turns[i]);
                PartView {
                    label: p.label,
                    description: p.description.clone(),
                    status: if turn.is_some() { PartStatus::Drawn } else { PartStatus::Pending },
                    color: palette.color(p.label).map(|c| format!("#{}", hex_lower(&c))),
                    paths: turn.map(|t| t.paths.clone()),
                    origin: turn.map(|t| t.origin.clone()),
                }
            })
            .collect();
        SessionView {
            id: self.id.clone(),
            caption: self.caption.clone(),
            parts,
            turn_order: self.turns.iter().map(|t| t.part.label).collect(),
            complete: self.is_complete(),
            parent: self.parent.clone(),
            canvas: self.canvas,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartStatus {
    Pending,
    Drawn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartView {
    pub label: PartLabel,
    pub description: String,
    pub status: PartStatus,
    pub color: Option<String>,
    pub paths: Option<String>,
    pub origin: Option<String>,
}

/// Client-facing state of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub caption: String,
    pub parts: Vec<PartView>,
    pub turn_order: Vec<PartLabel>,
    pub complete: bool,
    pub parent: Option<BranchPoint>,
    pub canvas: CanvasConfig,
}

/// Strokes of every turn, for multiset comparisons.
pub fn path_multiset(strokes: impl IntoIterator<Item = CubicStroke>) -> Vec<[i32; 8]> {
    let mut v: Vec<[i32; 8]> = strokes.into_iter().map(|s| s.coords()).collect();
    v.sort_unstable();
    v
}
