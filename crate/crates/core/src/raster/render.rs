use super::bitmap::{Bitmap, Channels, Rgb};
use super::diagnostic::Palette;
use super::flatten::{flatten_cubic, point_segment_distance_sq, DEFAULT_TOLERANCE};
use crate::partdata::{PartLabel, PathAssignment};
use crate::stroke::{CubicStroke, Sketch};

/// Grayscale ink level.
pub const INK: u8 = 0;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AssignmentError {
    #[error("Path{0} has no assigned part")]
    MissingPath(usize),
    #[error("assignment refers to Path{0}, but the sketch has {1} paths")]
    UnknownPath(usize, usize),
    #[error("palette has {available} colors but {label} needs index {}", label.index())]
    PaletteTooSmall { label: PartLabel, available: usize },
}

/// Paints one polyline with round caps and joins: every pixel whose center
/// is within `half_width` of a segment gets `value`.
fn stamp_polyline(bmp: &mut Bitmap, poly: &[(f64, f64)], half_width: f64, value: &[u8]) {
    let (w, h) = (bmp.width() as i64, bmp.height() as i64);
    if w == 0 || h == 0 {
        return;
    }
    let hw_sq = half_width * half_width;
    let single = [poly[0], poly[0]];
    let segments: Box<dyn Iterator<Item = &[(f64, f64)]>> =
        if poly.len() == 1 { Box::new(std::iter::once(&single[..])) } else { Box::new(poly.windows(2)) };
    for seg in segments {
        let (a, b) = (seg[0], seg[1]);
        let lo_x = (a.0.min(b.0) - half_width - 0.5).floor();
        let hi_x = (a.0.max(b.0) + half_width - 0.5).ceil();
        let lo_y = (a.1.min(b.1) - half_width - 0.5).floor();
        let hi_y = (a.1.max(b.1) + half_width - 0.5).ceil();
        if hi_x < 0.0 || hi_y < 0.0 || lo_x >= w as f64 || lo_y >= h as f64 {
            continue;
        }
        let x0 = (lo_x.max(0.0) as i64).min(w - 1);
        let x1 = (hi_x.min((w - 1) as f64) as i64).max(0);
        let y0 = (lo_y.max(0.0) as i64).min(h - 1);
        let y1 = (hi_y.min((h - 1) as f64) as i64).max(0);
        for py in y0..=y1 {
            let cy = py as f64 + 0.5;
            for px in x0..=x1 {
                let c = (px as f64 + 0.5, cy);
                if point_segment_distance_sq(c, a, b) <= hw_sq {
                    bmp.set_pixel(px as u32, py as u32, value);
                }
            }
        }
    }
}

/// Draws strokes onto an existing bitmap in the given channel value.
/// Painting is order-independent for a single color, so rendering a sketch
/// incrementally equals rendering it at once.
pub fn draw_strokes<'a>(
    bmp: &mut Bitmap,
    strokes: impl IntoIterator<Item = &'a CubicStroke>,
    stroke_width: f64,
    tolerance: f64,
    value: &[u8],
) {
    for s in strokes {
        let poly = flatten_cubic(s, tolerance);
        stamp_polyline(bmp, &poly, stroke_width / 2.0, value);
    }
}

/// Grayscale render on the sketch's background with default tolerance.
pub fn rasterize(sketch: &Sketch) -> Bitmap {
    rasterize_with(sketch, DEFAULT_TOLERANCE)
}

pub fn rasterize_with(sketch: &Sketch, tolerance: f64) -> Bitmap {
    let c = sketch.canvas;
    let mut bmp = Bitmap::gray(c.width, c.height, c.background);
    draw_strokes(&mut bmp, &sketch.paths, c.stroke_width, tolerance, &[INK]);
    bmp
}

/// RGB render where each path takes the palette color of its part. Later
/// paths paint over earlier ones.
pub fn recolor_render(
    sketch: &Sketch,
    assignment: &PathAssignment,
    palette: &Palette,
) -> Result<Bitmap, AssignmentError> {
    let n = sketch.len();
    if let Some((idx, _)) = assignment.iter().find(|&(i, _)| i > n) {
        return Err(AssignmentError::UnknownPath(idx, n));
    }
    let colors: Vec<Rgb> = (1..=n)
        .map(|i| {
            let label = assignment.get(i).ok_or(AssignmentError::MissingPath(i))?;
            palette.color(label).ok_or(AssignmentError::PaletteTooSmall { label, available: palette.len() })
        })
        .collect::<Result<_, _>>()?;
    let c = sketch.canvas;
    let bg = c.background;
    let mut bmp = Bitmap::filled(c.width, c.height, Channels::Rgb, &[bg, bg, bg]);
    for (stroke, color) in sketch.paths.iter().zip(colors) {
        draw_strokes(&mut bmp, std::iter::once(stroke), c.stroke_width, DEFAULT_TOLERANCE, &color);
    }
    Ok(bmp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::flatten::polyline_distance;
    use crate::stroke::CanvasConfig;

    fn sketch(paths: Vec<CubicStroke>) -> Sketch {
        Sketch::new(paths, CanvasConfig::with_size(128, 96))
    }

    #[test]
    fn empty_sketch_is_background() {
        let b = rasterize(&sketch(vec![]));
        assert!(b.pixels().iter().all(|&p| p == 255));
        assert_eq!(b.pixels().len(), 128 * 96);
    }

    #[test]
    fn horizontal_line_matches_distance_oracle() {
        let line = CubicStroke::from_coords([0, 0, 30, 0, 60, 0, 100, 0]);
        let b = rasterize(&sketch(vec![line]));
        for y in 0..96u32 {
            for x in 0..128u32 {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                // brute force: distance to the segment (0,0)-(100,0)
                let dx = if cx < 0.0 {
                    -cx
                } else if cx > 100.0 {
                    cx - 100.0
                } else {
                    0.0
                };
                let d = (dx * dx + cy * cy).sqrt();
                let expect = if d <= 1.5 { 0 } else { 255 };
                assert_eq!(b.pixel(x, y)[0], expect, "pixel ({x},{y})");
            }
        }
        // band rows 0 and 1 only
        assert_eq!(b.pixel(50, 1)[0], 0);
        assert_eq!(b.pixel(50, 2)[0], 255);
    }

    #[test]
    fn deterministic_bytes() {
        let s = crate::stroke::random_sketch(11);
        assert_eq!(rasterize(&s).pixels(), rasterize(&s).pixels());
    }

    #[test]
    fn far_outside_strokes_are_clipped() {
        let s = sketch(vec![CubicStroke::from_coords([-5000, -5000, -4000, -4000, -3000, -3000, -2000, -2000])]);
        assert!(rasterize(&s).pixels().iter().all(|&p| p == 255));
    }

    #[test]
    fn adding_a_path_only_changes_its_region() {
        let s = crate::stroke::random_sketch(5);
        for t in 1..s.len().min(6) {
            let before = rasterize(&Sketch::new(s.paths[..t - 1].to_vec(), s.canvas));
            let after = rasterize(&Sketch::new(s.paths[..t].to_vec(), s.canvas));
            let poly = flatten_cubic(&s.paths[t - 1], DEFAULT_TOLERANCE);
            for y in 0..s.canvas.height {
                for x in 0..s.canvas.width {
                    if before.pixel(x, y) != after.pixel(x, y) {
                        let d = polyline_distance((x as f64 + 0.5, y as f64 + 0.5), &poly);
                        assert!(d <= 1.5, "changed pixel ({x},{y}) at distance {d}");
                    }
                }
            }
        }
    }

    #[test]
    fn single_part_recolor_matches_grayscale_mask() {
        let s = crate::stroke::random_sketch(9);
        let a = PathAssignment::from_labels(vec![PartLabel::from_index(0); s.len()]);
        let pal = Palette::new(vec![[10, 20, 30]]).unwrap();
        let rgb = recolor_render(&s, &a, &pal).unwrap();
        let gray = rasterize(&s);
        for (g, c) in gray.pixels().iter().zip(rgb.pixels().chunks_exact(3)) {
            let expect: &[u8] = if *g == INK { &[10, 20, 30] } else { &[255, 255, 255] };
            assert_eq!(c, expect);
        }
    }

    #[test]
    fn recolor_reports_missing_path() {
        let s = sketch(vec![CubicStroke::default(), CubicStroke::default()]);
        let mut a = PathAssignment::new();
        a.insert(1, PartLabel::from_index(0));
        assert_eq!(recolor_render(&s, &a, &Palette::default()).unwrap_err(), AssignmentError::MissingPath(2));
    }

    #[test]
    fn later_paths_overpaint() {
        let h = CubicStroke::from_coords([10, 20, 30, 20, 60, 20, 90, 20]);
        let v = CubicStroke::from_coords([50, 0, 50, 30, 50, 60, 50, 90]);
        let s = sketch(vec![h, v]);
        let a = PathAssignment::from_labels([PartLabel::from_index(0), PartLabel::from_index(1)]);
        let pal = Palette::default();
        let b = recolor_render(&s, &a, &pal).unwrap();
        assert_eq!(b.pixel(50, 20), &pal.colors()[1]);
        assert_eq!(b.pixel(20, 20), &pal.colors()[0]);
        assert_eq!(b.pixel(50, 80), &pal.colors()[1]);
    }
}
