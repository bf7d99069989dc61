//! Restricted SVG import/export: `<path>` elements with absolute `M`/`C` data.

use std::fmt::Write as _;

use super::{CanvasConfig, CubicStroke, Point, Sketch};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SvgError {
    #[error("malformed xml: {0}")]
    MalformedXml(String),
    #[error("unsupported path command '{0}' (only absolute M and C are accepted)")]
    UnsupportedCommand(char),
    #[error("unsupported element <{0}>")]
    UnsupportedElement(String),
    #[error("malformed path data: {0}")]
    MalformedPath(String),
}

/// Elements that carry no geometry and are skipped with their subtrees.
const IGNORED_ELEMENTS: &[&str] = &["title", "desc", "metadata", "defs", "style"];

/// Reads every `<path>` in document order. Presentation attributes are
/// ignored; the canvas size comes from `width`/`height` (or `viewBox`) when
/// present and falls back to the default canvas otherwise. Fractional
/// coordinates are rounded to the nearest integer.
pub fn import_svg(svg_text: &str) -> Result<Sketch, SvgError> {
    let doc = roxmltree::Document::parse(svg_text).map_err(|e| SvgError::MalformedXml(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "svg" {
        return Err(SvgError::UnsupportedElement(root.tag_name().name().to_string()));
    }
    let mut canvas = CanvasConfig::default();
    if let Some((w, h)) = root_size(&root) {
        canvas.width = w;
        canvas.height = h;
    }
    let mut paths = Vec::new();
    collect_paths(root, &mut paths)?;
    Ok(Sketch::new(paths, canvas))
}

fn collect_paths(node: roxmltree::Node<'_, '_>, out: &mut Vec<CubicStroke>) -> Result<(), SvgError> {
    for child in node.children().filter(|n| n.is_element()) {
        match child.tag_name().name() {
            "g" | "svg" => collect_paths(child, out)?,
            "path" => {
                let d = child.attribute("d").unwrap_or("");
                out.extend(parse_path_data(d)?);
            }
            name if IGNORED_ELEMENTS.contains(&name) => {}
            name => return Err(SvgError::UnsupportedElement(name.to_string())),
        }
    }
    Ok(())
}

fn parse_length(v: &str) -> Option<u32> {
    let v = v.trim().trim_end_matches("px");
    let f: f64 = v.parse().ok()?;
    (f.is_finite() && f >= 1.0).then(|| f.round() as u32)
}

fn root_size(root: &roxmltree::Node<'_, '_>) -> Option<(u32, u32)> {
    let w = root.attribute("width").and_then(parse_length);
    let h = root.attribute("height").and_then(parse_length);
    if let (Some(w), Some(h)) = (w, h) {
        return Some((w, h));
    }
    let vb: Vec<f64> = root
        .attribute("viewBox")?
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<_, _>>()
        .ok()?;
    match vb.as_slice() {
        [_, _, w, h] if *w >= 1.0 && *h >= 1.0 => Some((w.round() as u32, h.round() as u32)),
        _ => None,
    }
}

enum PathToken {
    Command(char),
    Number(f64),
}

fn tokenize_path(d: &str) -> Result<Vec<PathToken>, SvgError> {
    let bytes = d.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() || c == ',' {
            i += 1;
        } else if c.is_ascii_alphabetic() && c != 'e' && c != 'E' {
            out.push(PathToken::Command(c));
            i += 1;
        } else if c.is_ascii_digit() || matches!(c, '-' | '+' | '.') {
            let start = i;
            i += 1;
            let mut seen_exp = false;
            while i < bytes.len() {
                let b = bytes[i] as char;
                let prev = bytes[i - 1] as char;
                if b.is_ascii_digit() || b == '.' {
                    i += 1;
                } else if (b == 'e' || b == 'E') && !seen_exp {
                    seen_exp = true;
                    i += 1;
                } else if (b == '-' || b == '+') && (prev == 'e' || prev == 'E') {
                    i += 1;
                } else {
                    break;
                }
            }
            let text = &d[start..i];
            let v: f64 = text.parse().map_err(|_| SvgError::MalformedPath(format!("bad number '{text}'")))?;
            if !v.is_finite() {
                return Err(SvgError::MalformedPath(format!("non-finite number '{text}'")));
            }
            out.push(PathToken::Number(v));
        } else {
            return Err(SvgError::MalformedPath(format!("unexpected character '{c}'")));
        }
    }
    Ok(out)
}

fn to_coord(v: f64) -> Result<i32, SvgError> {
    let r = v.round();
    if r < f64::from(i32::MIN) || r > f64::from(i32::MAX) {
        return Err(SvgError::MalformedPath(format!("coordinate {v} out of range")));
    }
    Ok(r as i32)
}

/// Parses `d` data consisting of `M x y` followed by one or more `C` segments.
/// A `C` with several coordinate groups yields one stroke per group, each
/// starting where the previous ended.
fn parse_path_data(d: &str) -> Result<Vec<CubicStroke>, SvgError> {
    let tokens = tokenize_path(d)?;
    let mut strokes = Vec::new();
    let mut current: Option<Point> = None;
    let mut i = 0;
    while i < tokens.len() {
        let cmd = match tokens[i] {
            PathToken::Command(c) => c,
            PathToken::Number(_) => {
                return Err(SvgError::MalformedPath("coordinates without a command".into()));
            }
        };
        i += 1;
        let start = i;
        while i < tokens.len() && matches!(tokens[i], PathToken::Number(_)) {
            i += 1;
        }
        let nums = tokens[start..i]
            .iter()
            .map(|t| match t {
                PathToken::Number(v) => to_coord(*v),
                PathToken::Command(_) => unreachable!(),
            })
            .collect::<Result<Vec<i32>, _>>()?;
        match cmd {
            'M' => {
                if nums.len() != 2 {
                    return Err(SvgError::MalformedPath(format!("M expects 2 numbers, got {}", nums.len())));
                }
                current = Some(Point::new(nums[0], nums[1]));
            }
            'C' => {
                let mut from = current.ok_or_else(|| SvgError::MalformedPath("C before M".into()))?;
                if nums.is_empty() || nums.len() % 6 != 0 {
                    return Err(SvgError::MalformedPath(format!("C expects groups of 6 numbers, got {}", nums.len())));
                }
                for g in nums.chunks_exact(6) {
                    let s =
                        CubicStroke::new(from, Point::new(g[0], g[1]), Point::new(g[2], g[3]), Point::new(g[4], g[5]));
                    from = s.p1;
                    strokes.push(s);
                }
                current = Some(from);
            }
            other => return Err(SvgError::UnsupportedCommand(other)),
        }
    }
    Ok(strokes)
}

/// Writes one `<path>` per stroke inside a group that carries the shared
/// stroke attributes. Output bytes depend only on the sketch.
pub fn export_svg(sketch: &Sketch) -> String {
    let CanvasConfig { width, height, stroke_width, .. } = sketch.canvas;
    let mut out = String::with_capacity(200 + sketch.len() * 56);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(
        out,
        r#"<g fill="none" stroke="black" stroke-width="{stroke_width}" stroke-linecap="round" stroke-linejoin="round">"#
    );
    for s in &sketch.paths {
        let [a, b, c, d, e, f, g, h] = s.coords();
        let _ = writeln!(out, r#"<path d="M {a} {b} C {c} {d} {e} {f} {g} {h}"/>"#);
    }
    out.push_str("</g>\n</svg>\n");
    out
}
