//! The rectangle `R` bounded by `f gamma_0` and the stable curves
//! `hat alpha_0^-` (through `Q`) and `hat alpha_0^+` (its other preimage).
//!
//! `gamma_0` is the piece of `W^u` from `hat alpha_0^-` through the saddle to
//! the fold tip `f zeta_0`. Its upper arm is the tangency leaf continued by
//! its own images, so both unstable sides are built from leaf samples.

use serde::{Deserialize, Serialize};

use crate::curve::{Curve, CurveKind, Rect};
use crate::error::{HenonError, Result};
use crate::henon::{step, Point};
use crate::inducing::geometry::{bisect, TangencyGeometry};
use crate::manifolds::StableGraph;

/// Samples per unstable side piece.
const SIDE_SAMPLES: usize = 600;
/// Where the leaf graph is handed over to its images.
const LEAF_CUT: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionR {
    /// Unstable side containing `zeta_0`, ordered by `x`; ends at the tip.
    pub top: Curve,
    /// The other unstable side, ordered by `x`; ends at the tip.
    pub bottom: Curve,
    /// `hat alpha_0^-` over `|y| <= b^{1/4}`.
    pub left: Curve,
    /// `hat alpha_0^+` over `|y| <= b^{1/4}`.
    pub right: Curve,
    pub right_graph: StableGraph,
    pub tip: Point,
    pub bbox: Rect,
    /// Offsets of the corners (top-left, bottom-left, tip) from the stable
    /// sides they should lie on.
    pub corner_gaps: [f64; 3],
    /// Largest `|dx/dy|` along the left and right sides.
    pub side_slopes: [f64; 2],
    /// Distance from the saddle on `W^u` to the top side.
    pub saddle_gap: f64,
}

fn graph_curve(g: &StableGraph, n: usize) -> Result<Curve> {
    let pts = (0..=n)
        .map(|i| {
            let y = g.y_min + (g.y_max - g.y_min) * i as f64 / n as f64;
            Point::new(g.x_at(y), y)
        })
        .collect();
    Curve::new(pts, CurveKind::Stable)
}

fn max_inverse_slope(c: &Curve) -> f64 {
    c.tangents
        .iter()
        .map(|t| if t[1] == 0.0 { f64::INFINITY } else { (t[0] / t[1]).abs() })
        .fold(0.0, f64::max)
}

/// `y` of an `x`-monotone polyline at `x`, if `x` is in its range.
pub fn arm_y(c: &Curve, x: f64) -> Option<f64> {
    let v = &c.vertices;
    let (x0, x1) = (v[0].x, v[v.len() - 1].x);
    if !(x >= x0.min(x1) && x <= x0.max(x1)) {
        return None;
    }
    let i = v.partition_point(|p| (p.x < x) == (x0 < x1)).clamp(1, v.len() - 1);
    let (a, b) = (v[i - 1], v[i]);
    if a.x == b.x {
        return Some(a.y);
    }
    Some(a.y + (b.y - a.y) * (x - a.x) / (b.x - a.x))
}

impl RegionR {
    /// Whether `w` lies between the unstable sides and right of `hat alpha_0^-`.
    pub fn contains(&self, geo: &TangencyGeometry, w: Point) -> bool {
        let top = if w.x.abs() <= LEAF_CUT { Some(geo.leaf.y(w.x)) } else { arm_y(&self.top, w.x) };
        match (arm_y(&self.bottom, w.x), top) {
            (Some(lo), Some(hi)) => w.y >= lo.min(hi) && w.y <= lo.max(hi) && geo.side_q(w) >= 0.0,
            _ => false,
        }
    }
}

pub fn build_region(geo: &TangencyGeometry) -> Result<RegionR> {
    let params = &geo.params;
    let f = |w: Point| step(params, w);
    let quarter = params.b.powf(0.25);

    let rows = 400;
    let mut xs = Vec::with_capacity(rows + 1);
    for i in 0..=rows {
        let y = -quarter + 2.0 * quarter * i as f64 / rows as f64;
        let g = |x: f64| geo.side_q(f(Point::new(x, y)));
        if !(g(0.5) > 0.0 && g(1.5) < 0.0) {
            return Err(HenonError::InsufficientCurve(format!("right stable side: no preimage of hat alpha_0^- at y = {y}")));
        }
        xs.push(bisect(|x| g(x) > 0.0, 0.5, 1.5));
    }
    let right_graph = StableGraph { y_min: -quarter, y_max: quarter, xs };

    let x0 = geo.zeta0.x;
    let leaf = |x: f64| geo.leaf.point(x);
    if geo.leaf.x_min > -LEAF_CUT || geo.leaf.x_max < LEAF_CUT {
        return Err(HenonError::InsufficientCurve("top unstable side: leaf too short".into()));
    }
    let w1 = bisect(|x| f(f(leaf(x))).x < -LEAF_CUT, x0, LEAF_CUT);
    let w2 = bisect(|x| f(leaf(x)).x > LEAF_CUT, x0, LEAF_CUT);
    let m = SIDE_SAMPLES;
    // Square-root spacing evens out the quadratic fold at `zeta_0`.
    let fold_pts = |w: f64, reverse: bool| -> Vec<Point> {
        (0..=m)
            .map(|i| {
                let v = i as f64 / m as f64;
                let v = if reverse { 1.0 - v } else { v };
                leaf(x0 + (w - x0) * v.sqrt())
            })
            .collect()
    };
    let lin = |a: f64, b: f64| -> Vec<Point> { (0..=m).map(|i| leaf(a + (b - a) * i as f64 / m as f64)).collect() };

    let far_left: Vec<Point> = fold_pts(w1, false).into_iter().map(|z| f(f(z))).collect();
    let mut top = far_left.clone();
    top.extend(lin(-LEAF_CUT, LEAF_CUT));
    top.extend(fold_pts(w2, true).into_iter().map(f));
    let mut bottom: Vec<Point> = far_left.iter().map(|&z| f(z)).collect();
    bottom.extend(lin(-LEAF_CUT, x0).into_iter().map(f));
    let tip = f(geo.zeta0);
    for arm in [&mut top, &mut bottom] {
        arm.pop();
        arm.push(tip);
        arm.dedup_by(|a, b| a.x <= b.x);
    }
    let top = Curve::new(top, CurveKind::Unstable)?;
    let bottom = Curve::new(bottom, CurveKind::Unstable)?;

    let corner_gaps = [geo.side_q(top.first()).abs(), geo.side_q(bottom.first()).abs(), right_graph.side(tip).abs()];
    let left = graph_curve(&geo.graph_q, 400)?;
    let right = graph_curve(&right_graph, 400)?;
    let side_slopes = [max_inverse_slope(&left), max_inverse_slope(&right)];
    let p = geo.saddle_p.location;
    let saddle_gap = arm_y(&top, p.x).map_or(f64::INFINITY, |y| (y - p.y).abs());
    let (tb, bb) = (top.bbox(), bottom.bbox());
    let bbox = Rect::new(tb.x_min.min(bb.x_min), tb.x_max.max(bb.x_max), tb.y_min.min(bb.y_min), tb.y_max.max(bb.y_max));
    Ok(RegionR { top, bottom, left, right, right_graph, tip, bbox, corner_gaps, side_slopes, saddle_gap })
}
