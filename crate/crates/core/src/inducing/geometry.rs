//! Return depths to `Theta` and their level sets on curves crossing `Theta`.
//!
//! `Theta` is the region between `alpha_1^-` and `alpha_1^+ = W^s_loc(P)`.
//! A point `w` lies in it when it is to the left of `W^s_loc(P)` and `f w`
//! is to its right. The depth of `w` is its first return time to `Theta`;
//! the level sets `{depth <= n}` are bounded by the curves `alpha_n^±`, so
//! every partition on a crossing curve is found by bisection on depth.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::curve::Curve;
use crate::error::{HenonError, Result};
use crate::henon::{fixed_saddles, jacobian_at, step, MapParams, Point, Saddle, BOX};
use crate::inducing::leaf::Leaf;
use crate::manifolds::{GapSetup, StableGraph, StableSide};

/// First return time to `Theta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Depth {
    Return(u32),
    /// The orbit left the box before returning.
    Escape,
    /// No return within the cap.
    Beyond,
}

impl Depth {
    pub fn value(self) -> u32 {
        match self {
            Depth::Return(n) => n,
            _ => u32::MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Center,
    Right,
}

/// One return block: depth `n` on the given side of the fold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Symbol {
    pub n: u32,
    pub side: Side,
}

/// A curve parametrized by a real coordinate.
pub trait Param: Sync {
    fn point(&self, s: f64) -> Point;
    fn tangent(&self, s: f64) -> Vector2<f64>;
}

impl Param for Leaf {
    fn point(&self, s: f64) -> Point {
        Leaf::point(self, s)
    }
    fn tangent(&self, s: f64) -> Vector2<f64> {
        Leaf::tangent(self, s)
    }
}

/// Horizontal line `y = const`, parametrized by `x`.
#[derive(Debug, Clone, Copy)]
pub struct Horizontal(pub f64);

impl Param for Horizontal {
    fn point(&self, s: f64) -> Point {
        Point::new(s, self.0)
    }
    fn tangent(&self, _s: f64) -> Vector2<f64> {
        Vector2::new(1.0, 0.0)
    }
}

/// A polyline parametrized by arclength.
pub struct Polyline<'a>(pub &'a Curve);

impl Param for Polyline<'_> {
    fn point(&self, s: f64) -> Point {
        self.0.point_at(s)
    }
    fn tangent(&self, s: f64) -> Vector2<f64> {
        let t = self.0.tangent_at(s);
        Vector2::new(t[0], t[1])
    }
}

/// Sub-interval `[lo, hi]` of a curve's parameter on which the first
/// `word.len()` return depths are fixed. `t` is the sum of those depths, so
/// `f^t` maps the interval across `Theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    pub word: Vec<Symbol>,
    pub t: u32,
    pub lo: f64,
    pub hi: f64,
}

impl Cylinder {
    pub fn root(lo: f64, hi: f64) -> Self {
        Cylinder { word: Vec::new(), t: 0, lo, hi }
    }

    pub fn depths(&self) -> Vec<u32> {
        self.word.iter().map(|s| s.n).collect()
    }
}

/// Result of splitting a cylinder by the next return depth.
#[derive(Debug, Clone, PartialEq)]
pub struct Subdivision {
    pub center: f64,
    /// Depth at the fold center: the largest depth on the image curve.
    pub max_depth: Depth,
    /// `(n, lo_boundary, hi_boundary)`: the points where depth first exceeds
    /// `n` on the left and right of the center.
    pub boundaries: Vec<(u32, f64, f64)>,
    pub children: Vec<Cylinder>,
}

/// Everything the inducing construction needs near the tangency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangencyGeometry {
    pub params: MapParams,
    pub saddle_p: Saddle,
    pub saddle_q: Saddle,
    pub graph_p: StableGraph,
    pub graph_q: StableGraph,
    pub leaf: Leaf,
    pub zeta0: Point,
    /// `x`-extent of `Theta` on the leaf.
    pub theta_lo: f64,
    pub theta_hi: f64,
    /// `Theta` lies within `|y| <= band`.
    pub band: f64,
}

/// Cap on return depths; orbits are followed at most this long.
pub const DEPTH_CAP: u32 = 200;

impl TangencyGeometry {
    /// Geometry at `params` (normally `a = a*`); needs `b > 0`.
    pub fn build(params: &MapParams) -> Result<Self> {
        if params.b <= 0.0 {
            return Err(HenonError::InvalidParams("the inducing construction needs b > 0".into()));
        }
        let (p, q) = fixed_saddles(params)?;
        let sb = params.sqrt_b();
        let band = 4.0 * sb;
        let graph_p = StableGraph::build(&StableSide::new(params, &p), -band, band, 400);
        let quarter = params.b.powf(0.25);
        let graph_q = StableGraph::build(&StableSide::new(params, &q), -quarter, quarter, 400);
        let setup = GapSetup::new(params)?;
        let m = setup.minimum()?;
        let leaf = Leaf::from_manifold(&setup.unstable.branches, &m)?;
        let mut geo = TangencyGeometry {
            params: *params,
            saddle_p: p,
            saddle_q: q,
            graph_p,
            graph_q,
            leaf,
            zeta0: m.point,
            theta_lo: 0.0,
            theta_hi: 0.0,
            band,
        };
        let x0 = m.point.x;
        if !geo.in_theta(geo.leaf.point(x0)) {
            return Err(HenonError::Geometry("tangency point is not inside Theta".into()));
        }
        let inside = |x: f64| geo.in_theta(geo.leaf.point(x));
        if inside(geo.leaf.x_min) || inside(geo.leaf.x_max) {
            return Err(HenonError::InsufficientCurve("tangency leaf does not cross Theta".into()));
        }
        let lo = bisect(inside, x0, geo.leaf.x_min);
        let hi = bisect(inside, x0, geo.leaf.x_max);
        geo.theta_lo = lo;
        geo.theta_hi = hi;
        Ok(geo)
    }

    pub fn side_p(&self, w: Point) -> f64 {
        self.graph_p.side(w)
    }

    pub fn side_q(&self, w: Point) -> f64 {
        self.graph_q.side(w)
    }

    pub fn in_theta(&self, w: Point) -> bool {
        w.y.abs() <= self.band && self.side_p(w) < 0.0 && self.side_p(step(&self.params, w)) > 0.0
    }

    /// First `i >= 1` with `f^i w` in `Theta`.
    pub fn depth(&self, w: Point, cap: u32) -> Depth {
        let mut z = w;
        for i in 1..=cap {
            z = step(&self.params, z);
            if !(z.x.abs() <= BOX && z.y.abs() <= BOX) {
                return Depth::Escape;
            }
            if self.in_theta(z) {
                return Depth::Return(i);
            }
        }
        Depth::Beyond
    }

    pub fn iterate(&self, w: Point, n: u32) -> Point {
        (0..n).fold(w, |z, _| step(&self.params, z))
    }

    /// Depth of `f^t c(s)`.
    pub fn depth_at(&self, c: &dyn Param, s: f64, t: u32, cap: u32) -> Depth {
        self.depth(self.iterate(c.point(s), t), cap)
    }

    /// `log |Df^n c'(s)| - log |c'(s)|` and the image point.
    pub fn log_deriv(&self, c: &dyn Param, s: f64, n: u32) -> (f64, Point) {
        let v = c.tangent(s);
        let (acc, w, _) = crate::henon::log_stretch(&self.params, c.point(s), v, n as usize);
        (acc, w)
    }

    /// Sign of the component of `Df^n c'(s)` normal to `W^s(Q)`.
    fn fold_sign(&self, c: &dyn Param, s: f64, n: u32) -> f64 {
        let mut z = c.point(s);
        let mut v = c.tangent(s).normalize();
        for _ in 0..n {
            v = jacobian_at(&self.params, z) * v;
            v /= v.norm();
            z = step(&self.params, z);
        }
        let h = 1e-6;
        let slope = (self.graph_q.x_at(z.y + h) - self.graph_q.x_at(z.y - h)) / (2.0 * h);
        (v[0] - slope * v[1]).signum()
    }

    /// Parameter of the deepest point of `[lo, hi]` after `t` steps: the
    /// point where `f^{t+2}` of the curve is tangent to `W^s(Q)`.
    pub fn fold_center(&self, c: &dyn Param, lo: f64, hi: f64, t: u32) -> Result<f64> {
        let s_lo = self.fold_sign(c, lo, t + 2);
        let s_hi = self.fold_sign(c, hi, t + 2);
        if s_lo == s_hi {
            return Err(HenonError::Geometry(format!("no fold on [{lo}, {hi}] after {} steps", t + 2)));
        }
        Ok(bisect(|s| self.fold_sign(c, s, t + 2) == s_lo, lo, hi))
    }

    /// Split `cyl` by the next return depth, up to depth `n_max`.
    pub fn subdivide(&self, c: &dyn Param, cyl: &Cylinder, n_max: u32) -> Result<Subdivision> {
        let center = self.fold_center(c, cyl.lo, cyl.hi, cyl.t)?;
        let max_depth = self.depth_at(c, center, cyl.t, DEPTH_CAP);
        let top = max_depth.value();
        let shallow = |n: u32| move |s: f64| self.depth_at(c, s, cyl.t, n).value() <= n;
        let mut boundaries = Vec::new();
        let mut children = Vec::new();
        let (mut left, mut right) = (cyl.lo, cyl.hi);
        let push = |word_end: Symbol, lo: f64, hi: f64, children: &mut Vec<Cylinder>| {
            let mut word = cyl.word.clone();
            word.push(word_end);
            children.push(Cylinder { word, t: cyl.t + word_end.n, lo, hi });
        };
        let mut right_children = Vec::new();
        for n in 2..=n_max {
            if n >= top {
                if n == top {
                    push(Symbol { n, side: Side::Center }, left, right, &mut children);
                }
                break;
            }
            let b = bisect(shallow(n), cyl.lo, center);
            let e = bisect(shallow(n), cyl.hi, center);
            boundaries.push((n, b, e));
            push(Symbol { n, side: Side::Left }, left, b, &mut children);
            push(Symbol { n, side: Side::Right }, e, right, &mut right_children);
            left = b;
            right = e;
        }
        right_children.reverse();
        children.extend(right_children);
        Ok(Subdivision { center, max_depth, boundaries, children })
    }
}

/// Last point from `good` towards `bad` at which `pred` holds, assuming one
/// switch. Runs to rounding resolution.
pub(crate) fn bisect<F: Fn(f64) -> bool>(pred: F, good: f64, bad: f64) -> f64 {
    let (mut g, mut b) = (good, bad);
    loop {
        let m = 0.5 * (g + b);
        if m == g || m == b {
            return g;
        }
        if pred(m) {
            g = m;
        } else {
            b = m;
        }
    }
}
