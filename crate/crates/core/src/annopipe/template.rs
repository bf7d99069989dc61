//! Stage prompt templates and placeholder filling.
//!
//! A placeholder is `<name>` with `name` made of lowercase letters, digits
//! and underscores. `<rendering>` and `<diagnostic_vis>` mark where images go
//! in the request; every other known placeholder is replaced by text.
//! Unknown `<...>` sequences are left untouched, and substituted text is
//! never rescanned.

use std::collections::BTreeMap;
use std::path::Path;

use super::Stage;

pub const RENDERING: &str = "rendering";
pub const DIAGNOSTIC_VIS: &str = "diagnostic_vis";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageSlot {
    Rendering,
    Diagnostic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Text(String),
    Image(ImageSlot),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template for {stage} lacks placeholder <{placeholder}>")]
    MissingPlaceholder { stage: Stage, placeholder: &'static str },
    #[error("cannot read template {path}: {message}")]
    Io { path: String, message: String },
}

/// Placeholders a stage's template must contain.
pub fn required_placeholders(stage: Stage) -> &'static [&'static str] {
    match stage {
        Stage::Decompose => &[RENDERING, "min_parts", "max_parts"],
        Stage::CritiqueParts => &[RENDERING, "step1_instruction", "old_parts_json"],
        Stage::RefineParts => &[RENDERING, "old_parts_json", "critique_json", "min_parts", "max_parts"],
        Stage::Assign => &[RENDERING, "svg_text", "joined_parts"],
        Stage::CritiqueAssignment => &[RENDERING, DIAGNOSTIC_VIS, "step4_instruction", "old_assignments_json"],
        Stage::RefineAssignment => &[RENDERING, "step4_instruction", "old_assignments_json", "critique_json"],
        Stage::Caption => &[RENDERING, "joined_parts"],
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates(BTreeMap<Stage, String>);

impl Default for Templates {
    fn default() -> Self {
        let texts = [
            include_str!("../../prompts/step1.txt"),
            include_str!("../../prompts/step2.txt"),
            include_str!("../../prompts/step3.txt"),
            include_str!("../../prompts/step4.txt"),
            include_str!("../../prompts/step5.txt"),
            include_str!("../../prompts/step6.txt"),
            include_str!("../../prompts/step7.txt"),
        ];
        Self(Stage::ALL.into_iter().zip(texts).map(|(s, t)| (s, t.to_string())).collect())
    }
}

impl Templates {
    pub fn get(&self, stage: Stage) -> &str {
        &self.0[&stage]
    }

    pub fn set(&mut self, stage: Stage, text: impl Into<String>) {
        self.0.insert(stage, text.into());
    }

    /// Defaults overridden by any `step1.txt` .. `step7.txt` found in `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut t = Self::default();
        for stage in Stage::ALL {
            let path = dir.join(format!("{stage}.txt"));
            if path.exists() {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| TemplateError::Io { path: path.display().to_string(), message: e.to_string() })?;
                t.set(stage, text);
            }
        }
        Ok(t)
    }

    pub fn check(&self) -> Result<(), TemplateError> {
        for stage in Stage::ALL {
            let names = placeholders(self.get(stage));
            for &p in required_placeholders(stage) {
                if !names.iter().any(|n| n == p) {
                    return Err(TemplateError::MissingPlaceholder { stage, placeholder: p });
                }
            }
        }
        Ok(())
    }
}

/// Splits `template` into `(literal, Some(name))` runs.
fn scan(template: &str) -> Vec<(&str, Option<&str>)> {
    let bytes = template.as_bytes();
    let mut out = Vec::new();
    let (mut lit_start, mut i) = (0, 0);
    while i < bytes.len() {
        if bytes[i] == b'<' {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_lowercase() || bytes[j].is_ascii_digit() || bytes[j] == b'_') {
                j += 1;
            }
            if j > i + 1 && bytes.get(j) == Some(&b'>') {
                out.push((&template[lit_start..i], Some(&template[i + 1..j])));
                i = j + 1;
                lit_start = i;
                continue;
            }
        }
        i += 1;
    }
    out.push((&template[lit_start..], None));
    out
}

/// Names of all `<name>` tokens in the template.
pub fn placeholders(template: &str) -> Vec<String> {
    scan(template).into_iter().filter_map(|(_, n)| n.map(str::to_string)).collect()
}

/// Fills text placeholders from `vars` and turns image placeholders into
/// image segments. Text segments are trimmed of surrounding blank lines and
/// dropped when empty.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> Vec<Segment> {
    let mut segments = Vec::new();
    let mut text = String::new();
    let flush = |text: &mut String, segments: &mut Vec<Segment>| {
        let t = text.trim_matches('\n');
        if !t.trim().is_empty() {
            segments.push(Segment::Text(t.to_string()));
        }
        text.clear();
    };
    for (lit, name) in scan(template) {
        text.push_str(lit);
        let Some(name) = name else { continue };
        let slot = match name {
            RENDERING => Some(ImageSlot::Rendering),
            DIAGNOSTIC_VIS => Some(ImageSlot::Diagnostic),
            _ => None,
        };
        if let Some(slot) = slot {
            flush(&mut text, &mut segments);
            segments.push(Segment::Image(slot));
        } else if let Some((_, v)) = vars.iter().find(|(k, _)| *k == name) {
            text.push_str(v);
        } else {
            text.push('<');
            text.push_str(name);
            text.push('>');
        }
    }
    flush(&mut text, &mut segments);
    segments
}

/// Filled template with image placeholders removed, used where one stage's
/// full instruction is quoted inside another stage's prompt.
pub fn instruction_text(template: &str, vars: &[(&str, &str)]) -> String {
    fill(template, vars)
        .into_iter()
        .filter_map(|s| match s {
            Segment::Text(t) => Some(t),
            Segment::Image(_) => None,
        })
        .collect::<Vec<_>>()
        .join("\n")
}
