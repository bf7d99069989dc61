//! Deterministic, aliased rasterization of sketches and the color-coded
//! diagnostic image used when critiquing path assignments.
//!
//! Coverage rule: a pixel `(px, py)` is inked when the distance from its
//! center `(px + 0.5, py + 0.5)` to the flattened stroke polyline is at most
//! half the stroke width. There is no anti-aliasing, so equal inputs produce
//! equal bytes on every IEEE-754 platform.

mod bitmap;
mod diagnostic;
mod flatten;
mod render;

pub(crate) use bitmap::hex_lower;
pub use bitmap::{Bitmap, BitmapError, Channels, Rgb};
pub use diagnostic::{
    diagnostic_panel, marker_center, Palette, PaletteError, LABEL_X, MARKER_SIZE, MARKER_X, PANEL_MARGIN, ROW_HEIGHT,
    TEXT_LINE_HEIGHT, TEXT_X,
};
pub use flatten::{flatten_cubic, point_segment_distance, polyline_distance, DEFAULT_TOLERANCE};
pub use render::{draw_strokes, rasterize, rasterize_with, recolor_render, AssignmentError, INK};
