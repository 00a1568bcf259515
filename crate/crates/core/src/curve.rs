//! Polylines with tangent, curvature and arclength tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{HenonError, Result};
use crate::henon::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Unstable,
    Stable,
    Alpha,
    Gamma,
    Other,
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Rect { x_min, x_max, y_min, y_max }
    }

    pub fn centered(cx: f64, cy: f64, half_w: f64, half_h: f64) -> Self {
        Rect::new(cx - half_w, cx + half_w, cy - half_h, cy + half_h)
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
}

/// Ordered polyline. `params` optionally records the generating parameter of
/// each vertex (for manifold pieces it is the fundamental-domain coordinate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub kind: CurveKind,
    pub vertices: Vec<Point>,
    pub tangents: Vec<[f64; 2]>,
    pub curvature: Vec<f64>,
    pub arclength: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<f64>,
}

pub(crate) fn turning_angle(a: &Point, b: &Point, c: &Point) -> f64 {
    let (ux, uy) = (b.x - a.x, b.y - a.y);
    let (vx, vy) = (c.x - b.x, c.y - b.y);
    (ux * vy - uy * vx).atan2(ux * vx + uy * vy).abs()
}

/// Curvature of the circle through three points.
pub(crate) fn menger(a: &Point, b: &Point, c: &Point) -> f64 {
    let (ux, uy) = (b.x - a.x, b.y - a.y);
    let (vx, vy) = (c.x - b.x, c.y - b.y);
    let cross = (ux * vy - uy * vx).abs();
    let den = a.dist(b) * b.dist(c) * a.dist(c);
    if den > 0.0 {
        2.0 * cross / den
    } else {
        0.0
    }
}

/// Distance from `p` to segment `ab` and the segment parameter of the foot.
pub(crate) fn point_segment(p: &Point, a: &Point, b: &Point) -> (f64, f64) {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let l2 = dx * dx + dy * dy;
    let t = if l2 > 0.0 {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = Point::new(a.x + t * dx, a.y + t * dy);
    (p.dist(&q), t)
}

/// Parameters `(s, t)` of the proper intersection of segments `ab` and `cd`.
pub(crate) fn segment_intersection(a: &Point, b: &Point, c: &Point, d: &Point) -> Option<(f64, f64)> {
    let (rx, ry) = (b.x - a.x, b.y - a.y);
    let (sx, sy) = (d.x - c.x, d.y - c.y);
    let den = rx * sy - ry * sx;
    if den == 0.0 {
        return None;
    }
    let (qx, qy) = (c.x - a.x, c.y - a.y);
    let s = (qx * sy - qy * sx) / den;
    let t = (qx * ry - qy * rx) / den;
    if (0.0..1.0).contains(&s) && (0.0..1.0).contains(&t) {
        Some((s, t))
    } else {
        None
    }
}

impl Curve {
    /// Build from points, dropping exact consecutive duplicates.
    pub fn new(points: Vec<Point>, kind: CurveKind) -> Result<Curve> {
        Self::with_params(points, Vec::new(), kind)
    }

    pub fn with_params(points: Vec<Point>, params: Vec<f64>, kind: CurveKind) -> Result<Curve> {
        if !params.is_empty() && params.len() != points.len() {
            return Err(HenonError::InvalidInput("params and points differ in length".into()));
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(HenonError::InvalidInput(format!("non-finite vertex {p:?}")));
        }
        let keep_params = !params.is_empty();
        let mut vertices = Vec::with_capacity(points.len());
        let mut kept = Vec::with_capacity(params.len());
        for (i, p) in points.into_iter().enumerate() {
            if vertices.last().map_or(true, |q: &Point| q.dist(&p) > 0.0) {
                vertices.push(p);
                if keep_params {
                    kept.push(params[i]);
                }
            }
        }
        if vertices.is_empty() {
            return Err(HenonError::InvalidInput("empty curve".into()));
        }
        let n = vertices.len();
        let mut arclength = Vec::with_capacity(n);
        let mut acc = 0.0;
        arclength.push(0.0);
        for w in vertices.windows(2) {
            acc += w[0].dist(&w[1]);
            arclength.push(acc);
        }
        let mut tangents = Vec::with_capacity(n);
        for i in 0..n {
            let (a, b) = match (i, n) {
                (_, 1) => (vertices[0], vertices[0]),
                (0, _) => (vertices[0], vertices[1]),
                (i, n) if i == n - 1 => (vertices[n - 2], vertices[n - 1]),
                (i, _) => (vertices[i - 1], vertices[i + 1]),
            };
            let (dx, dy) = (b.x - a.x, b.y - a.y);
            let l = dx.hypot(dy);
            tangents.push(if l > 0.0 { [dx / l, dy / l] } else { [1.0, 0.0] });
        }
        let mut curvature = vec![0.0; n];
        for i in 1..n.saturating_sub(1) {
            curvature[i] = menger(&vertices[i - 1], &vertices[i], &vertices[i + 1]);
        }
        if n >= 3 {
            curvature[0] = curvature[1];
            curvature[n - 1] = curvature[n - 2];
        }
        Ok(Curve { kind, vertices, tangents, curvature, arclength, params: kept })
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn length(&self) -> f64 {
        *self.arclength.last().unwrap_or(&0.0)
    }

    pub fn first(&self) -> Point {
        self.vertices[0]
    }

    pub fn last(&self) -> Point {
        *self.vertices.last().unwrap()
    }

    /// Point at arclength `s`, by linear interpolation (clamped to the ends).
    pub fn point_at(&self, s: f64) -> Point {
        let n = self.len();
        if n == 1 || s <= 0.0 {
            return self.vertices[0];
        }
        if s >= self.length() {
            return self.last();
        }
        let i = self.arclength.partition_point(|&a| a <= s).max(1) - 1;
        let (a, b) = (self.vertices[i], self.vertices[i + 1]);
        let t = (s - self.arclength[i]) / (self.arclength[i + 1] - self.arclength[i]);
        Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
    }

    /// Nearest point on the polyline: `(distance, arclength)`.
    pub fn nearest(&self, p: &Point) -> (f64, f64) {
        if self.len() == 1 {
            return (p.dist(&self.vertices[0]), 0.0);
        }
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..self.len() - 1 {
            let (d, t) = point_segment(p, &self.vertices[i], &self.vertices[i + 1]);
            if d < best.0 {
                best = (d, self.arclength[i] + t * (self.arclength[i + 1] - self.arclength[i]));
            }
        }
        best
    }

    /// Unit tangent at arclength `s`, interpolated between vertex tangents.
    pub fn tangent_at(&self, s: f64) -> [f64; 2] {
        if self.len() == 1 {
            return self.tangents[0];
        }
        let i = self.arclength.partition_point(|&a| a <= s).clamp(1, self.len() - 1) - 1;
        let w = ((s - self.arclength[i]) / (self.arclength[i + 1] - self.arclength[i])).clamp(0.0, 1.0);
        let (a, b) = (self.tangents[i], self.tangents[i + 1]);
        let (x, y) = ((1.0 - w) * a[0] + w * b[0], (1.0 - w) * a[1] + w * b[1]);
        let l = x.hypot(y);
        if l > 0.0 {
            [x / l, y / l]
        } else {
            a
        }
    }

    pub fn reversed(&self) -> Curve {
        let mut v = self.vertices.clone();
        v.reverse();
        let mut p = self.params.clone();
        p.reverse();
        Curve::with_params(v, p, self.kind).expect("reversal of a valid curve")
    }

    /// Maximal runs of consecutive vertices inside `rect`.
    pub fn clip(&self, rect: &Rect) -> Vec<Curve> {
        let mut out = Vec::new();
        let mut pts = Vec::new();
        let mut prm = Vec::new();
        let has_params = !self.params.is_empty();
        let mut flush = |pts: &mut Vec<Point>, prm: &mut Vec<f64>| {
            if !pts.is_empty() {
                let c = Curve::with_params(std::mem::take(pts), std::mem::take(prm), self.kind);
                out.push(c.expect("sub-curve of a valid curve"));
            }
        };
        for (i, v) in self.vertices.iter().enumerate() {
            if rect.contains(v) {
                pts.push(*v);
                if has_params {
                    prm.push(self.params[i]);
                }
            } else {
                flush(&mut pts, &mut prm);
            }
        }
        flush(&mut pts, &mut prm);
        out
    }

    pub fn bbox(&self) -> Rect {
        let mut r = Rect::new(f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            r.x_min = r.x_min.min(v.x);
            r.x_max = r.x_max.max(v.x);
            r.y_min = r.y_min.min(v.y);
            r.y_max = r.y_max.max(v.y);
        }
        r
    }

    pub fn max_spacing(&self) -> f64 {
        self.arclength.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn min_spacing(&self) -> f64 {
        self.arclength.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    /// CSV with header `s,x,y,tx,ty,kappa`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("s,x,y,tx,ty,kappa\n");
        for i in 0..self.len() {
            let v = self.vertices[i];
            let t = self.tangents[i];
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                fmt17(self.arclength[i]),
                fmt17(v.x),
                fmt17(v.y),
                fmt17(t[0]),
                fmt17(t[1]),
                fmt17(self.curvature[i])
            );
        }
        s
    }
}

/// Seventeen significant digits, the format used by every file output.
pub fn fmt17(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    format!("{x:.16e}")
}

/// Uniform-grid bucket index over the segments of a set of polylines, for
/// nearest-distance queries.
pub struct SegmentIndex<'a> {
    curves: &'a [Curve],
    cell: f64,
    origin: (f64, f64),
    dims: (usize, usize),
    buckets: Vec<Vec<(u32, u32)>>,
}

impl<'a> SegmentIndex<'a> {
    pub fn new(curves: &'a [Curve], cell: f64) -> Self {
        let mut r = Rect::new(f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for c in curves {
            let b = c.bbox();
            r.x_min = r.x_min.min(b.x_min);
            r.x_max = r.x_max.max(b.x_max);
            r.y_min = r.y_min.min(b.y_min);
            r.y_max = r.y_max.max(b.y_max);
        }
        if !r.x_min.is_finite() {
            r = Rect::new(0.0, 0.0, 0.0, 0.0);
        }
        let nx = ((r.width() / cell).ceil() as usize + 1).min(4096);
        let ny = ((r.height() / cell).ceil() as usize + 1).min(4096);
        let cell = cell.max(r.width() / nx as f64).max(r.height() / ny as f64);
        let mut idx = SegmentIndex {
            curves,
            cell,
            origin: (r.x_min, r.y_min),
            dims: (nx, ny),
            buckets: vec![Vec::new(); nx * ny],
        };
        for (ci, c) in curves.iter().enumerate() {
            for si in 0..c.len().saturating_sub(1) {
                let (a, b) = (c.vertices[si], c.vertices[si + 1]);
                let (i0, j0) = idx.cell_of(a.x.min(b.x), a.y.min(b.y));
                let (i1, j1) = idx.cell_of(a.x.max(b.x), a.y.max(b.y));
                for i in i0..=i1 {
                    for j in j0..=j1 {
                        idx.buckets[j * nx + i].push((ci as u32, si as u32));
                    }
                }
            }
        }
        idx
    }

    fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let i = ((x - self.origin.0) / self.cell).floor().max(0.0) as usize;
        let j = ((y - self.origin.1) / self.cell).floor().max(0.0) as usize;
        (i.min(self.dims.0 - 1), j.min(self.dims.1 - 1))
    }

    /// Distance from `p` to the nearest indexed segment, searching rings of
    /// cells until the result is certified. Returns infinity when nothing is
    /// indexed.
    pub fn distance(&self, p: &Point) -> f64 {
        let (ci, cj) = self.cell_of(p.x, p.y);
        let mut best = f64::INFINITY;
        let max_ring = self.dims.0.max(self.dims.1);
        for ring in 0..=max_ring {
            let i0 = ci.saturating_sub(ring);
            let j0 = cj.saturating_sub(ring);
            let i1 = (ci + ring).min(self.dims.0 - 1);
            let j1 = (cj + ring).min(self.dims.1 - 1);
            for i in i0..=i1 {
                for j in j0..=j1 {
                    let on_ring = i == i0 || i == i1 || j == j0 || j == j1;
                    if !on_ring && ring > 0 {
                        continue;
                    }
                    for &(c, s) in &self.buckets[j * self.dims.0 + i] {
                        let cv = &self.curves[c as usize].vertices;
                        let (d, _) = point_segment(p, &cv[s as usize], &cv[s as usize + 1]);
                        best = best.min(d);
                    }
                }
            }
            // every segment outside the searched square is at least this far
            let outside = self.cell * ring as f64;
            if best <= outside {
                break;
            }
        }
        if best.is_infinite() {
            // single-vertex curves only
            for c in self.curves {
                for v in &c.vertices {
                    best = best.min(p.dist(v));
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn circle(n: usize, r: f64) -> Curve {
        let pts = (0..n)
            .map(|i| {
                let t = std::f64::consts::PI * i as f64 / (n - 1) as f64;
                Point::new(r * t.cos(), r * t.sin())
            })
            .collect();
        Curve::new(pts, CurveKind::Other).unwrap()
    }

    #[test]
    fn arclength_and_curvature_of_arc() {
        let c = circle(2001, 2.0);
        assert_relative_eq!(c.length(), 2.0 * std::f64::consts::PI, max_relative = 1e-6);
        for k in &c.curvature {
            assert_relative_eq!(*k, 0.5, max_relative = 1e-6);
        }
        assert!(c.arclength.windows(2).all(|w| w[1] > w[0]));
        for t in &c.tangents {
            assert!(((t[0] * t[0] + t[1] * t[1]).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicates_are_dropped() {
        let c = Curve::new(
            vec![Point::new(0.0, 0.0), Point::new(0.0, 0.0), Point::new(1.0, 0.0)],
            CurveKind::Other,
        )
        .unwrap();
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn clip_and_nearest() {
        let pts = (0..=100).map(|i| Point::new(-1.0 + 0.02 * i as f64, 0.0)).collect();
        let c = Curve::new(pts, CurveKind::Other).unwrap();
        let parts = c.clip(&Rect::centered(0.0, 0.0, 0.5, 0.1));
        assert_eq!(parts.len(), 1);
        assert!(parts[0].bbox().x_min >= -0.5 && parts[0].bbox().x_max <= 0.5);
        let (d, s) = c.nearest(&Point::new(0.3, 0.25));
        assert_relative_eq!(d, 0.25, epsilon = 1e-12);
        assert_relative_eq!(s, 1.3, epsilon = 1e-12);
        assert_eq!(c.point_at(1.3), Point::new(0.30000000000000004, 0.0));
    }

    #[test]
    fn segment_index_matches_brute_force() {
        let curves = vec![circle(500, 1.0), circle(300, 0.5)];
        let idx = SegmentIndex::new(&curves, 0.05);
        for i in 0..50 {
            let p = Point::new(-1.5 + 0.06 * i as f64, 0.3 + 0.01 * i as f64);
            let brute = curves.iter().map(|c| c.nearest(&p).0).fold(f64::INFINITY, f64::min);
            assert_relative_eq!(idx.distance(&p), brute, epsilon = 1e-14);
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let c = circle(5, 1.0);
        let csv = c.to_csv();
        assert!(csv.starts_with("s,x,y,tx,ty,kappa\n"));
        assert_eq!(csv.lines().count(), 6);
        assert!(!csv.contains('\r'));
    }
}
