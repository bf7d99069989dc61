use crate::stroke::{CubicStroke, Point};

/// Default flattening tolerance in pixels.
pub const DEFAULT_TOLERANCE: f64 = 0.25;

const MAX_DEPTH: u32 = 16;

type P = (f64, f64);

fn to_f(p: Point) -> P {
    (f64::from(p.x), f64::from(p.y))
}

fn mid(a: P, b: P) -> P {
    ((a.0 + b.0) * 0.5, (a.1 + b.1) * 0.5)
}

/// Euclidean distance from `p` to the closed segment `a..b`.
pub fn point_segment_distance(p: P, a: P, b: P) -> f64 {
    point_segment_distance_sq(p, a, b).sqrt()
}

pub(crate) fn point_segment_distance_sq(p: P, a: P, b: P) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq > 0.0 { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len_sq).clamp(0.0, 1.0) } else { 0.0 };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    qx * qx + qy * qy
}

/// Distance from `p` to the nearest point of a polyline (a single point
/// counts as a degenerate segment).
pub fn polyline_distance(p: P, poly: &[P]) -> f64 {
    match poly {
        [] => f64::INFINITY,
        [only] => point_segment_distance(p, *only, *only),
        _ => poly.windows(2).map(|w| point_segment_distance_sq(p, w[0], w[1])).fold(f64::INFINITY, f64::min).sqrt(),
    }
}

/// Flattens a cubic into a polyline by De Casteljau halving until both
/// control points lie within `tolerance` of the chord segment.
///
/// The polyline starts at `p0` and ends at `p1` exactly. A stroke whose four
/// points coincide yields a single point.
pub fn flatten_cubic(stroke: &CubicStroke, tolerance: f64) -> Vec<P> {
    assert!(tolerance > 0.0, "tolerance must be positive");
    let [p0, c1, c2, p1] = [stroke.p0, stroke.c1, stroke.c2, stroke.p1].map(to_f);
    let mut out = vec![p0];
    if stroke.p0 == stroke.c1 && stroke.c1 == stroke.c2 && stroke.c2 == stroke.p1 {
        return out;
    }
    subdivide(p0, c1, c2, p1, tolerance, 0, &mut out);
    // Halving is exact in binary floating point, but pin the endpoint anyway.
    if let Some(last) = out.last_mut() {
        *last = p1;
    }
    out
}

fn subdivide(p0: P, c1: P, c2: P, p1: P, tol: f64, depth: u32, out: &mut Vec<P>) {
    let flat = point_segment_distance(c1, p0, p1).max(point_segment_distance(c2, p0, p1)) <= tol;
    if flat || depth >= MAX_DEPTH {
        out.push(p1);
        return;
    }
    let ab = mid(p0, c1);
    let bc = mid(c1, c2);
    let cd = mid(c2, p1);
    let abc = mid(ab, bc);
    let bcd = mid(bc, cd);
    let m = mid(abc, bcd);
    subdivide(p0, ab, abc, m, tol, depth + 1, out);
    subdivide(m, bcd, cd, p1, tol, depth + 1, out);
}
