//! The stable curve families `tilde alpha_n`, `alpha_n^±`, the tower
//! `Theta ⊃ Theta_0 ⊃ Theta_1 ⊃ ...` and the partition of crossing curves.
//!
//! Each curve is handled through a one-sided membership test that is exact up
//! to rounding: `w` is left of `tilde alpha_n` when `w, f w, ..., f^n w` all
//! stay left of `W^s_loc(P)`, and `alpha_{n+1}^±` are the two crossings of
//! `f^{-2} tilde alpha_n` around the fold. Curves are sampled on horizontals
//! (`tilde alpha`) or on copies of the tangency leaf shifted downwards
//! (`alpha^±`), clipped to `R`.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::curve::{Curve, CurveKind};
use crate::error::{HenonError, Result};
use crate::henon::{step, Point};
use crate::inducing::geometry::{bisect, Param, Side, TangencyGeometry};
use crate::inducing::leaf::Leaf;
use crate::inducing::region::RegionR;

/// The tangency leaf moved down by `dy`.
pub struct Shifted<'a> {
    pub leaf: &'a Leaf,
    pub dy: f64,
}

impl Param for Shifted<'_> {
    fn point(&self, s: f64) -> Point {
        Point::new(s, self.leaf.y(s) - self.dy)
    }
    fn tangent(&self, s: f64) -> Vector2<f64> {
        self.leaf.tangent(s)
    }
}

/// Whether `w` is (weakly) left of `tilde alpha_n`.
pub fn left_of_tilde(geo: &TangencyGeometry, n: u32, w: Point) -> bool {
    let mut z = w;
    for _ in 0..=n {
        if geo.side_p(z) >= 0.0 {
            return false;
        }
        z = step(&geo.params, z);
    }
    true
}

/// `x` of `tilde alpha_n` at height `y`, or `None` below resolution.
pub fn tilde_x(geo: &TangencyGeometry, n: u32, y: f64) -> Option<f64> {
    let x_q = geo.graph_q.x_at(y);
    let x = bisect(|x| left_of_tilde(geo, n, Point::new(x, y)), x_q, FOLD_WINDOW);
    (x - x_q > TILDE_FLOOR).then_some(x)
}

/// Smallest resolvable offset of `tilde alpha_n` from `hat alpha_0^-`.
const TILDE_FLOOR: f64 = 1e-13;
/// Half-width of the search window around the fold.
const FOLD_WINDOW: f64 = 0.7;

/// Crossings `(minus, plus)` of `alpha_{n+1}^±` with a curve, if it meets them.
pub fn alpha_crossings(geo: &TangencyGeometry, c: &dyn Param, n: u32, center: f64) -> Option<(f64, f64)> {
    let f2 = |s: f64| step(&geo.params, step(&geo.params, c.point(s)));
    let pred = |s: f64| left_of_tilde(geo, n, f2(s));
    if !pred(center) {
        return None;
    }
    Some((bisect(pred, center, -FOLD_WINDOW), bisect(pred, center, FOLD_WINDOW)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaFamily {
    /// `tilde[n]` is `tilde alpha_n`.
    pub tilde: Vec<Curve>,
    /// `minus[n - 1]` is `alpha_n^-`.
    pub minus: Vec<Curve>,
    pub plus: Vec<Curve>,
    /// `x` of `alpha_n^±` on the tangency leaf, indexed by `n - 1`.
    pub leaf_minus: Vec<f64>,
    pub leaf_plus: Vec<f64>,
    /// Largest `n` for which `alpha_n^±` is resolved.
    pub depth: u32,
    /// Downward shifts of the leaf used for sampling.
    pub shifts: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaChecks {
    /// Distance between `tilde alpha_1` and `alpha_1^-`.
    pub identity_minus: f64,
    /// Distance between `tilde alpha_0` and `alpha_1^+`.
    pub identity_plus: f64,
    /// Largest offset of `f^2 alpha_{n+1}^±` from `tilde alpha_n`.
    pub diagram_f2: f64,
    /// Largest offset of `f tilde alpha_n` from `tilde alpha_{n-1}`.
    pub diagram_f: f64,
    /// Distances on the leaf to `zeta_0` are strictly decreasing in `n`.
    pub accumulating: bool,
    /// `tilde alpha_n` moves strictly left with `n`.
    pub tilde_monotone: bool,
}

fn shifts(y0: f64) -> Vec<f64> {
    let span = 2.0 * y0;
    let mut v = vec![0.0];
    v.extend((1..=24).rev().map(|j| span * 0.25f64.powi(j)));
    v.extend((1..=24).map(|k| span * k as f64 / 24.0));
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

pub fn build_alpha(geo: &TangencyGeometry, region: &RegionR, n_max: u32) -> Result<AlphaFamily> {
    if n_max < 2 {
        return Err(HenonError::InvalidInput(format!("alpha depth must be at least 2, got {n_max}")));
    }
    let (y_lo, y_hi) = (region.bbox.y_min, region.bbox.y_max);
    let rows = 200;
    let heights: Vec<f64> = (0..=rows).map(|i| y_lo + (y_hi - y_lo) * i as f64 / rows as f64).collect();
    let mut tilde = Vec::new();
    for n in 0..=n_max {
        let pts: Vec<Point> = heights
            .iter()
            .filter_map(|&y| tilde_x(geo, n, y).map(|x| Point::new(x, y)))
            .filter(|&w| region.contains(geo, w) || n == 0)
            .collect();
        if pts.len() < 2 {
            break;
        }
        tilde.push(Curve::new(pts, CurveKind::Alpha)?);
    }
    if tilde.len() < 2 {
        return Err(HenonError::RefinementNeeded { step: tilde.len(), detail: "tilde alpha family".into() });
    }

    let shifts = shifts(geo.zeta0.y);
    let centers: Vec<Option<f64>> = shifts
        .iter()
        .map(|&dy| {
            let c = Shifted { leaf: &geo.leaf, dy };
            geo.fold_center(&c, -0.45, 0.45, 0).ok()
        })
        .collect();
    let (mut minus, mut plus, mut leaf_minus, mut leaf_plus) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut depth = 0;
    for n in 1..=n_max {
        let (mut pm, mut pp) = (Vec::new(), Vec::new());
        for (&dy, center) in shifts.iter().zip(&centers) {
            let Some(center) = *center else { continue };
            let c = Shifted { leaf: &geo.leaf, dy };
            let Some((sm, sp)) = alpha_crossings(geo, &c, n - 1, center) else { continue };
            if dy == 0.0 {
                leaf_minus.push(sm);
                leaf_plus.push(sp);
            }
            for (s, out) in [(sm, &mut pm), (sp, &mut pp)] {
                let w = c.point(s);
                if dy == 0.0 || region.contains(geo, w) {
                    out.push(w);
                }
            }
        }
        if leaf_minus.len() < n as usize || pm.len() < 2 || pp.len() < 2 {
            leaf_minus.truncate(n as usize - 1);
            leaf_plus.truncate(n as usize - 1);
            break;
        }
        let k = n as usize - 1;
        if n >= 3 {
            let w_prev = leaf_plus[k - 1] - leaf_minus[k - 1];
            let w = leaf_plus[k] - leaf_minus[k];
            let nested = leaf_minus[k] > leaf_minus[k - 1] && leaf_plus[k] < leaf_plus[k - 1];
            if !nested || !(0.3..=0.7).contains(&(w / w_prev)) {
                leaf_minus.truncate(k);
                leaf_plus.truncate(k);
                break;
            }
        }
        pm.sort_by(|a, b| a.y.total_cmp(&b.y));
        pp.sort_by(|a, b| a.y.total_cmp(&b.y));
        minus.push(Curve::new(pm, CurveKind::Alpha)?);
        plus.push(Curve::new(pp, CurveKind::Alpha)?);
        depth = n;
    }
    if depth < 2 {
        return Err(HenonError::RefinementNeeded { step: depth as usize + 1, detail: "alpha^± do not cross the leaf".into() });
    }
    Ok(AlphaFamily { tilde, minus, plus, leaf_minus, leaf_plus, depth, shifts })
}

/// Largest distance from a vertex of `a` to `b`, over the heights both span.
fn curve_distance(a: &Curve, b: &Curve) -> f64 {
    let (lo, hi) = (b.bbox().y_min, b.bbox().y_max);
    a.vertices.iter().filter(|v| v.y >= lo && v.y <= hi).map(|v| b.nearest(v).0).fold(0.0, f64::max)
}

impl AlphaFamily {
    pub fn checks(&self, geo: &TangencyGeometry) -> AlphaChecks {
        let identity_minus = curve_distance(&self.minus[0], &self.tilde[1]);
        let identity_plus = curve_distance(&self.plus[0], &self.tilde[0]);
        let mut diagram_f2: f64 = 0.0;
        for n in 0..self.minus.len().min(self.tilde.len()) {
            for c in [&self.minus[n], &self.plus[n]] {
                for v in &c.vertices {
                    let z = step(&geo.params, step(&geo.params, *v));
                    if let Some(x) = tilde_x(geo, n as u32, z.y) {
                        diagram_f2 = diagram_f2.max((z.x - x).abs());
                    }
                }
            }
        }
        let mut diagram_f: f64 = 0.0;
        for n in 1..self.tilde.len() {
            for v in &self.tilde[n].vertices {
                let z = step(&geo.params, *v);
                if let Some(x) = tilde_x(geo, n as u32 - 1, z.y) {
                    diagram_f = diagram_f.max((z.x - x).abs());
                }
            }
        }
        let x0 = geo.zeta0.x;
        let dist: Vec<(f64, f64)> = self.leaf_minus.iter().zip(&self.leaf_plus).map(|(m, p)| (x0 - m, p - x0)).collect();
        let accumulating = dist.windows(2).all(|w| w[1].0 < w[0].0 && w[1].1 < w[0].1);
        let tilde_x_at = |c: &Curve| c.vertices.iter().map(|v| v.x).sum::<f64>() / c.len() as f64;
        let tilde_monotone = self.tilde.windows(2).all(|w| tilde_x_at(&w[1]) < tilde_x_at(&w[0]));
        AlphaChecks { identity_minus, identity_plus, diagram_f2, diagram_f, accumulating, tilde_monotone }
    }
}

/// One level of the tower, by its extent on the tangency leaf.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaLevel {
    /// `None` for `Theta` itself.
    pub k: Option<u32>,
    /// Index of the bordering curves `alpha_n^±`.
    pub n: u32,
    pub lo: f64,
    pub hi: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaTower {
    pub n_cap: u32,
    pub xi: u32,
    pub theta: ThetaLevel,
    pub levels: Vec<ThetaLevel>,
}

impl ThetaTower {
    pub fn nested(&self) -> bool {
        std::iter::once(&self.theta)
            .chain(&self.levels)
            .collect::<Vec<_>>()
            .windows(2)
            .all(|w| w[1].lo > w[0].lo && w[1].hi < w[0].hi && w[1].width < w[0].width)
    }

    pub fn theta0(&self) -> &ThetaLevel {
        &self.levels[0]
    }
}

/// `Theta` and `Theta_k` for `k = 0..=k_max`.
pub fn build_theta(geo: &TangencyGeometry, alpha: &AlphaFamily, k_max: u32) -> Result<ThetaTower> {
    let n_cap = geo.params.cap_n as u32;
    let xi = geo.params.xi() as u32;
    let level = |k: Option<u32>, n: u32| -> Result<ThetaLevel> {
        if n > alpha.depth {
            return Err(HenonError::Depth { requested: n as usize, available: alpha.depth as usize });
        }
        let (lo, hi) = (alpha.leaf_minus[n as usize - 1], alpha.leaf_plus[n as usize - 1]);
        Ok(ThetaLevel { k, n, lo, hi, width: geo.leaf.arclength(lo, hi) })
    };
    let theta = level(None, 1)?;
    let levels = (0..=k_max).map(|k| level(Some(k), xi * k + n_cap)).collect::<Result<Vec<_>>>()?;
    let tower = ThetaTower { n_cap, xi, theta, levels };
    if !tower.nested() {
        return Err(HenonError::Geometry("Theta levels are not strictly nested".into()));
    }
    Ok(tower)
}

/// Largest `k` with `Theta_k` resolved by `alpha`.
pub fn resolved_levels(geo: &TangencyGeometry, alpha: &AlphaFamily) -> Option<u32> {
    let (n_cap, xi) = (geo.params.cap_n as u32, geo.params.xi() as u32);
    (alpha.depth >= n_cap).then(|| (alpha.depth - n_cap) / xi)
}

/// One element of the partition of a crossing curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub n: u32,
    pub side: Side,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub center: f64,
    /// Crossings with `alpha_n^-` and `alpha_n^+`, indexed by `n - 1`.
    pub minus: Vec<f64>,
    pub plus: Vec<f64>,
    /// `gamma_n` pieces ordered along the curve, with the remaining core
    /// (between the deepest crossings) as a `Center` piece.
    pub pieces: Vec<Piece>,
}

/// Split the curve `c` on `[lo, hi]` at its crossings with `alpha_n^±`,
/// `n = 1..=alpha.depth`.
pub fn partition_curve(geo: &TangencyGeometry, alpha: &AlphaFamily, c: &dyn Param, lo: f64, hi: f64) -> Result<Partition> {
    let center = geo.fold_center(c, lo, hi, 0)?;
    let (mut minus, mut plus) = (Vec::new(), Vec::new());
    for n in 1..=alpha.depth {
        let Some((sm, sp)) = alpha_crossings(geo, c, n - 1, center) else { break };
        if sm < lo || sp > hi {
            return Err(HenonError::Geometry(format!("alpha_{n} crosses outside the curve")));
        }
        let f2 = |s: f64| step(&geo.params, step(&geo.params, c.point(s)));
        for (a, b) in [(lo, center), (center, hi)] {
            let samples = 256;
            let vals: Vec<bool> =
                (0..=samples).map(|i| left_of_tilde(geo, n - 1, f2(a + (b - a) * i as f64 / samples as f64))).collect();
            let switches = vals.windows(2).filter(|w| w[0] != w[1]).count();
            if switches > 1 {
                return Err(HenonError::Geometry(format!("alpha_{n} meets the curve {switches} times on one side")));
            }
        }
        minus.push(sm);
        plus.push(sp);
    }
    if minus.is_empty() {
        return Err(HenonError::Geometry("the curve does not cross alpha_1".into()));
    }
    let m = minus.len();
    let mut pieces = Vec::new();
    for n in 2..=m {
        pieces.push(Piece { n: n as u32, side: Side::Left, lo: minus[n - 2], hi: minus[n - 1] });
    }
    pieces.push(Piece { n: m as u32 + 1, side: Side::Center, lo: minus[m - 1], hi: plus[m - 1] });
    for n in (2..=m).rev() {
        pieces.push(Piece { n: n as u32, side: Side::Right, lo: plus[n - 1], hi: plus[n - 2] });
    }
    Ok(Partition { center, minus, plus, pieces })
}
