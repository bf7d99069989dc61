//! Cubic-Bézier stroke primitives and the line-oriented stroke text format.
//!
//! A stroke is a single absolute `M x y C x1 y1 x2 y2 x3 y3` command pair on an
//! integer grid. Sketches are ordered lists of strokes on a configured canvas.
//! Coordinates outside the canvas are legal everywhere; only the rasterizer clips.

mod random;
mod svg;
mod text;

pub use random::{random_sketch, SketchRng, MAX_RANDOM_STROKES, RANDOM_COORD_MAX};
pub use svg::{export_svg, import_svg, SvgError};
pub use text::{emit_strokes, parse_strokes, verify_response, FormatError, FormatErrorKind, FormatVerdict, Rounding};

use serde::{Deserialize, Serialize};

/// Default canvas side in pixels.
pub const DEFAULT_CANVAS_SIDE: u32 = 512;
/// Default stroke width in pixels.
pub const DEFAULT_STROKE_WIDTH: f64 = 3.0;

/// Raster and SVG presentation settings shared by every stroke of a sketch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanvasConfig {
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_stroke_width")]
    pub stroke_width: f64,
    /// Grayscale level of the empty canvas (255 = white).
    #[serde(default = "default_background")]
    pub background: u8,
}

fn default_stroke_width() -> f64 {
    DEFAULT_STROKE_WIDTH
}

fn default_background() -> u8 {
    255
}

impl Default for CanvasConfig {
    fn default() -> Self {
        Self {
            width: DEFAULT_CANVAS_SIDE,
            height: DEFAULT_CANVAS_SIDE,
            stroke_width: DEFAULT_STROKE_WIDTH,
            background: 255,
        }
    }
}

impl CanvasConfig {
    pub fn with_size(width: u32, height: u32) -> Self {
        Self { width, height, ..Self::default() }
    }

    /// Checks `width > 0`, `height > 0` and a positive finite stroke width.
    pub fn is_valid(&self) -> bool {
        self.width > 0 && self.height > 0 && self.stroke_width.is_finite() && self.stroke_width > 0.0
    }
}

/// An integer point in canvas coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: i32,
    pub y: i32,
}

impl Point {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }
}

/// One cubic Bézier path: start, two control points, end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct CubicStroke {
    pub p0: Point,
    pub c1: Point,
    pub c2: Point,
    pub p1: Point,
}

impl CubicStroke {
    pub const fn new(p0: Point, c1: Point, c2: Point, p1: Point) -> Self {
        Self { p0, c1, c2, p1 }
    }

    /// Builds a stroke from its eight coordinates in text order.
    pub const fn from_coords(c: [i32; 8]) -> Self {
        Self {
            p0: Point::new(c[0], c[1]),
            c1: Point::new(c[2], c[3]),
            c2: Point::new(c[4], c[5]),
            p1: Point::new(c[6], c[7]),
        }
    }

    pub const fn coords(&self) -> [i32; 8] {
        [self.p0.x, self.p0.y, self.c1.x, self.c1.y, self.c2.x, self.c2.y, self.p1.x, self.p1.y]
    }

    pub fn map_coords(&self, f: impl Fn(i32) -> i32) -> Self {
        Self::from_coords(self.coords().map(f))
    }
}

/// Ordered strokes, as produced by one turn of generation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct StrokeSequence(pub Vec<CubicStroke>);

impl StrokeSequence {
    pub fn new(strokes: Vec<CubicStroke>) -> Self {
        Self(strokes)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, CubicStroke> {
        self.0.iter()
    }

    pub fn into_inner(self) -> Vec<CubicStroke> {
        self.0
    }
}

impl From<Vec<CubicStroke>> for StrokeSequence {
    fn from(v: Vec<CubicStroke>) -> Self {
        Self(v)
    }
}

impl FromIterator<CubicStroke> for StrokeSequence {
    fn from_iter<I: IntoIterator<Item = CubicStroke>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a StrokeSequence {
    type Item = &'a CubicStroke;
    type IntoIter = std::slice::Iter<'a, CubicStroke>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// A vector sketch. Paths are referred to externally as `Path1`, `Path2`, ...
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sketch {
    pub paths: Vec<CubicStroke>,
    pub canvas: CanvasConfig,
}

impl Sketch {
    pub fn new(paths: Vec<CubicStroke>, canvas: CanvasConfig) -> Self {
        Self { paths, canvas }
    }

    pub fn empty(canvas: CanvasConfig) -> Self {
        Self { paths: Vec::new(), canvas }
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Path by its 1-based external index.
    pub fn path(&self, index: usize) -> Option<&CubicStroke> {
        index.checked_sub(1).and_then(|i| self.paths.get(i))
    }

    pub fn strokes(&self) -> StrokeSequence {
        StrokeSequence(self.paths.clone())
    }
}
