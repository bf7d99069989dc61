//! Two-panel diagnostic image: a color legend of the parts on the left and
//! the sketch recolored by assignment on the right.
//!
//! Left-panel layout, per part row `k` (0-based), with
//! `row_top = PANEL_MARGIN + k * ROW_HEIGHT`:
//!
//! * filled marker square, `MARKER_SIZE` wide, top-left at `(MARKER_X, row_top + 4)`
//! * label `PartN` in 8x8 glyphs at `(LABEL_X, row_top + 8)`
//! * description wrapped into at most six lines starting at
//!   `(TEXT_X, row_top + 24)`, `TEXT_LINE_HEIGHT` apart
//!
//! Marker, label and description all use the part's palette color. Rows that
//! do not fit the canvas height are clipped.

use font8x8::UnicodeFonts;

use super::bitmap::{Bitmap, Rgb};
use super::render::{recolor_render, AssignmentError};
use crate::partdata::{PartDecomposition, PartLabel, PathAssignment};
use crate::stroke::Sketch;

pub const PANEL_MARGIN: u32 = 16;
pub const ROW_HEIGHT: u32 = 96;
pub const MARKER_X: u32 = 16;
pub const MARKER_SIZE: u32 = 16;
pub const LABEL_X: u32 = 40;
pub const TEXT_X: u32 = 40;
pub const TEXT_LINE_HEIGHT: u32 = 12;
const TEXT_TOP: u32 = 24;
const MAX_TEXT_LINES: usize = 6;
const GLYPH: u32 = 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PaletteError {
    #[error("palette is empty")]
    Empty,
    #[error("palette colors {0} and {1} are identical")]
    Duplicate(usize, usize),
}

/// Ordered, pairwise-distinct part colors. Part `N` uses entry `N - 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Palette(Vec<Rgb>);

impl Default for Palette {
    /// Red, blue, green, orange, purple.
    fn default() -> Self {
        Self(vec![[230, 25, 75], [0, 130, 200], [60, 180, 75], [245, 130, 48], [145, 30, 180]])
    }
}

impl Palette {
    pub fn new(colors: Vec<Rgb>) -> Result<Self, PaletteError> {
        if colors.is_empty() {
            return Err(PaletteError::Empty);
        }
        for i in 0..colors.len() {
            for j in i + 1..colors.len() {
                if colors[i] == colors[j] {
                    return Err(PaletteError::Duplicate(i, j));
                }
            }
        }
        Ok(Self(colors))
    }

    pub fn colors(&self) -> &[Rgb] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn color(&self, label: PartLabel) -> Option<Rgb> {
        self.0.get(label.index()).copied()
    }

    /// `#rrggbb` strings in palette order.
    pub fn hex(&self) -> Vec<String> {
        self.0.iter().map(|[r, g, b]| format!("#{r:02x}{g:02x}{b:02x}")).collect()
    }
}

/// Center pixel of the marker square of the 0-based part row `k`.
pub fn marker_center(k: usize) -> (u32, u32) {
    let top = PANEL_MARGIN + k as u32 * ROW_HEIGHT + 4;
    (MARKER_X + MARKER_SIZE / 2, top + MARKER_SIZE / 2)
}

fn fill_rect(bmp: &mut Bitmap, x0: u32, y0: u32, w: u32, h: u32, color: &Rgb) {
    for y in y0..(y0 + h).min(bmp.height()) {
        for x in x0..(x0 + w).min(bmp.width()) {
            bmp.set_pixel(x, y, color);
        }
    }
}

fn draw_text(bmp: &mut Bitmap, x0: u32, y0: u32, text: &str, color: &Rgb) {
    for (i, ch) in text.chars().enumerate() {
        let glyph = font8x8::BASIC_FONTS.get(ch).or_else(|| font8x8::BASIC_FONTS.get('?')).unwrap_or([0; 8]);
        let gx = x0 + i as u32 * GLYPH;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..GLYPH {
                if bits & (1 << col) != 0 {
                    let (x, y) = (gx + col, y0 + row as u32);
                    if x < bmp.width() && y < bmp.height() {
                        bmp.set_pixel(x, y, color);
                    }
                }
            }
        }
    }
}

/// Greedy whitespace wrap; words longer than a line are split. When the
/// text does not fit in `max_lines`, the last line ends with `...`.
fn wrap_text(text: &str, cols: usize, max_lines: usize) -> Vec<String> {
    let cols = cols.max(4);
    let mut lines: Vec<String> = Vec::new();
    let mut cur = String::new();
    for word in text.split_whitespace() {
        let mut word: Vec<char> = word.chars().collect();
        loop {
            let cur_len = cur.chars().count();
            let need = if cur.is_empty() { word.len() } else { cur_len + 1 + word.len() };
            if need <= cols {
                if !cur.is_empty() {
                    cur.push(' ');
                }
                cur.extend(word.iter());
                break;
            }
            if !cur.is_empty() {
                lines.push(std::mem::take(&mut cur));
                continue;
            }
            let rest = word.split_off(cols);
            lines.push(word.iter().collect());
            word = rest;
        }
    }
    if !cur.is_empty() {
        lines.push(cur);
    }
    if lines.len() > max_lines {
        lines.truncate(max_lines);
        let last = &mut lines[max_lines - 1];
        let mut chars: Vec<char> = last.chars().collect();
        chars.truncate(cols - 3);
        *last = chars.into_iter().collect::<String>() + "...";
    }
    lines
}

/// Builds the diagnostic image: width is twice the canvas width, the left
/// half is the legend and the right half the recolored sketch.
pub fn diagnostic_panel(
    parts: &PartDecomposition,
    assignment: &PathAssignment,
    sketch: &Sketch,
    palette: &Palette,
) -> Result<Bitmap, AssignmentError> {
    let right = recolor_render(sketch, assignment, palette)?;
    let (w, h) = (sketch.canvas.width, sketch.canvas.height);
    let mut left = Bitmap::rgb(w, h, [255, 255, 255]);
    let cols = (w.saturating_sub(TEXT_X + PANEL_MARGIN) / GLYPH) as usize;
    for (k, part) in parts.parts.iter().enumerate() {
        let color = palette
            .color(part.label)
            .ok_or(AssignmentError::PaletteTooSmall { label: part.label, available: palette.len() })?;
        let top = PANEL_MARGIN + k as u32 * ROW_HEIGHT;
        if top >= h {
            break;
        }
        fill_rect(&mut left, MARKER_X, top + 4, MARKER_SIZE, MARKER_SIZE, &color);
        draw_text(&mut left, LABEL_X, top + 8, &part.label.to_string(), &color);
        for (i, line) in wrap_text(&part.description, cols, MAX_TEXT_LINES).iter().enumerate() {
            draw_text(&mut left, TEXT_X, top + TEXT_TOP + i as u32 * TEXT_LINE_HEIGHT, line, &color);
        }
    }
    let mut panel = Bitmap::rgb(w * 2, h, [255, 255, 255]);
    panel.blit(&left, 0, 0);
    panel.blit(&right, w, 0);
    Ok(panel)
}
