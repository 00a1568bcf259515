//! Invariant manifolds of the fixed saddles, the tangency gap and the first
//! bifurcation parameter.
//!
//! Manifold points are generated from a fundamental-domain parametrization:
//! for a branch with seed offset `h` along an eigenvector `v`, the point with
//! coordinate `u = k + t` (`0 <= t < 1`) is `g^k(S + h Lambda^t v)` where `g`
//! is `f` (or `f^2` when the eigenvalue is negative) for unstable branches and
//! the corresponding inverse for stable branches. Vertices are placed by
//! adaptive marching in `u`.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::curve::{segment_intersection, Curve, CurveKind, Rect, SegmentIndex};
use crate::error::{HenonError, Result};
use crate::henon::{fixed_saddles, inverse, step, MapParams, Orientation, Point, Saddle, SaddleLabel};

/// Refinement policy for manifold growth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthPolicy {
    pub angle_tol: f64,
    pub h_max: f64,
    pub h_min: f64,
    pub max_vertices: usize,
}

impl Default for GrowthPolicy {
    fn default() -> Self {
        GrowthPolicy { angle_tol: 0.05, h_max: 1e-2, h_min: 1e-7, max_vertices: 2_000_000 }
    }
}

/// Fundamental-domain parametrization of one manifold branch.
///
/// `ratio = |lambda|` per application of `g` (`f` for unstable, `f^{-1}` for
/// stable branches). With a negative eigenvalue the seed side alternates with
/// the number of applications so every point lands on the same branch. The
/// seed segment is taken `lead` domains deeper and pushed out, which removes
/// the error of the linear approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchParam {
    pub params: MapParams,
    pub base: Point,
    pub dir: [f64; 2],
    pub seed: f64,
    pub ratio: f64,
    pub flip: bool,
    pub lead: usize,
    pub forward: bool,
}

impl BranchParam {
    pub fn new(params: &MapParams, saddle: &Saddle, stable: bool, sign: f64, seed: f64) -> Self {
        let (v, lambda) = if stable {
            (saddle.stable_vec(), 1.0 / saddle.lambda_s)
        } else {
            (saddle.unstable_vec(), saddle.lambda_u)
        };
        BranchParam {
            params: *params,
            base: saddle.location,
            dir: [sign * v[0], sign * v[1]],
            seed,
            ratio: lambda.abs(),
            flip: lambda < 0.0,
            lead: if stable { 1 } else { 2 },
            forward: !stable,
        }
    }

    /// Point with coordinate `u`, or `None` if it is outside the box or its
    /// orbit blows up. `u = -inf` is the saddle itself.
    pub fn eval(&self, u: f64) -> Option<Point> {
        if u == f64::NEG_INFINITY {
            return Some(self.base);
        }
        let k = u.floor().max(0.0);
        let t = u - k;
        let n = k as usize + self.lead;
        let mut h = self.seed * self.ratio.powf(t - self.lead as f64);
        if self.flip && n % 2 == 1 {
            h = -h;
        }
        let mut z = Point::new(self.base.x + h * self.dir[0], self.base.y + h * self.dir[1]);
        for _ in 0..n {
            z = if self.forward {
                step(&self.params, z)
            } else {
                inverse(&self.params, z).ok()?
            };
            if !(z.x.abs() < 1e8 && z.y.abs() < 1e8) {
                return None;
            }
        }
        if z.in_box() {
            Some(z)
        } else {
            None
        }
    }

    /// Apply the map that shifts `u` by one.
    pub fn shift(&self, z: Point) -> Option<Point> {
        if self.forward {
            Some(step(&self.params, z))
        } else {
            inverse(&self.params, z).ok()
        }
    }

    /// `u` at which the branch reaches unit scale, plus `extra` domains.
    pub fn u_limit(&self, extra: f64) -> f64 {
        (1.0 / self.seed).ln() / self.ratio.ln() + extra
    }
}

/// A grown manifold: both branches of `W^u` or `W^s` of a saddle, split into
/// in-box pieces. `piece_branch[i]` says which branch piece `i` came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifold {
    pub saddle: Saddle,
    pub stable: bool,
    pub branches: [BranchParam; 2],
    pub pieces: Vec<Curve>,
    pub piece_branch: Vec<usize>,
    pub budget_reached: [bool; 2],
}

impl Manifold {
    /// The piece through the saddle on branch `b` (always piece with that
    /// branch index that starts at the saddle).
    pub fn local_piece(&self, branch: usize) -> Option<&Curve> {
        self.pieces
            .iter()
            .zip(&self.piece_branch)
            .find(|(c, &pb)| pb == branch && c.first() == self.saddle.location)
            .map(|(c, _)| c)
    }

    pub fn vertex_count(&self) -> usize {
        self.pieces.iter().map(Curve::len).sum()
    }

    /// Largest distance from `g(v)` to the manifold over vertices `v` whose
    /// image lies within the grown range, with `g = f` for unstable and
    /// `g = f^{-1}` for stable manifolds.
    pub fn invariance_residual(&self) -> f64 {
        let idx = SegmentIndex::new(&self.pieces, 0.02);
        let mut worst: f64 = 0.0;
        for (c, &b) in self.pieces.iter().zip(&self.piece_branch) {
            let bp = &self.branches[b];
            let u_top = self
                .pieces
                .iter()
                .zip(&self.piece_branch)
                .filter(|(_, &pb)| pb == b)
                .filter_map(|(c, _)| c.params.last().copied())
                .fold(f64::NEG_INFINITY, f64::max);
            for (v, &u) in c.vertices.iter().zip(&c.params) {
                if u == f64::NEG_INFINITY || u + 1.0 > u_top {
                    continue;
                }
                let (w, ok) = match bp.shift(*v) {
                    Some(w) => (w, true),
                    None => (*v, false),
                };
                if ok && w.in_box() {
                    worst = worst.max(idx.distance(&w));
                }
            }
        }
        worst
    }
}

fn march(bp: &BranchParam, budget: f64, u_max: f64, pol: &GrowthPolicy, kind: CurveKind) -> Result<(Vec<Curve>, bool)> {
    let du_max = 1.0 / 16.0;
    let du_out = 1.0 / 256.0;
    let du_min = 1e-14;
    let mut pieces = Vec::new();
    let mut pts = vec![bp.base];
    let mut us = vec![f64::NEG_INFINITY];
    let mut u = 0.0;
    match bp.eval(0.0) {
        Some(p) => {
            pts.push(p);
            us.push(0.0);
        }
        None => return Err(HenonError::InsufficientCurve("seed point outside the box".into())),
    }
    let mut total = bp.seed;
    let mut count = 2usize;
    let mut du = 1.0 / 64.0;
    let mut inside = true;
    while u < u_max && total < budget {
        if count > pol.max_vertices {
            return Err(HenonError::Resource { vertices: count, cap: pol.max_vertices });
        }
        let un = (u + du).min(u_max);
        match (inside, bp.eval(un)) {
            (true, Some(q)) => {
                let last = *pts.last().unwrap();
                let d = last.dist(&q);
                let ang = if pts.len() >= 2 {
                    crate::curve::turning_angle(&pts[pts.len() - 2], &last, &q)
                } else {
                    0.0
                };
                if (d > pol.h_max || ang > pol.angle_tol) && d > pol.h_min && du > du_min {
                    du *= 0.5;
                    continue;
                }
                // a fold hidden between two samples shows up as a large sagitta
                if d > pol.h_min && du > du_min {
                    if let Some(m) = bp.eval(0.5 * (u + un)) {
                        let (sag, _) = crate::curve::point_segment(&m, &last, &q);
                        if sag > 0.125 * pol.angle_tol * d {
                            du *= 0.5;
                            continue;
                        }
                    }
                }
                u = un;
                if d >= pol.h_min {
                    pts.push(q);
                    us.push(un);
                    total += d;
                    count += 1;
                }
                if d < 0.25 * pol.h_max && ang < 0.25 * pol.angle_tol {
                    du = (du * 2.0).min(du_max);
                }
            }
            (true, None) => {
                if du > du_min {
                    du *= 0.5;
                    continue;
                }
                if pts.len() >= 2 {
                    pieces.push(Curve::with_params(std::mem::take(&mut pts), std::mem::take(&mut us), kind)?);
                }
                pts.clear();
                us.clear();
                inside = false;
                u = un;
                du = du_out;
            }
            (false, None) => {
                u = un;
            }
            (false, Some(_)) => {
                let (mut lo, mut hi) = (u, un);
                while hi - lo > du_min {
                    let mid = 0.5 * (lo + hi);
                    if bp.eval(mid).is_some() {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let q = bp.eval(hi).expect("entry point inside");
                pts.push(q);
                us.push(hi);
                count += 1;
                u = hi;
                inside = true;
                du = 1e-6;
            }
        }
    }
    if pts.len() >= 2 {
        pieces.push(Curve::with_params(pts, us, kind)?);
    }
    Ok((pieces, total >= budget))
}

fn grow(params: &MapParams, saddle: &Saddle, stable: bool, budget: f64, tol: f64, pol: &GrowthPolicy) -> Result<Manifold> {
    if !(budget > 0.0 && tol > 0.0) {
        return Err(HenonError::InvalidInput("budget and tol must be positive".into()));
    }
    if stable && params.b == 0.0 {
        return Err(HenonError::SingularMap);
    }
    let branches = [
        BranchParam::new(params, saddle, stable, 1.0, tol),
        BranchParam::new(params, saddle, stable, -1.0, tol),
    ];
    let mut pieces = Vec::new();
    let mut piece_branch = Vec::new();
    let mut reached = [false; 2];
    let kind = if stable { CurveKind::Stable } else { CurveKind::Unstable };
    for (i, bp) in branches.iter().enumerate() {
        let extra = if stable { 3.0 } else { 24.0 };
        let (ps, r) = march(bp, budget, bp.u_limit(extra), pol, kind)?;
        reached[i] = r;
        for p in ps {
            pieces.push(p);
            piece_branch.push(i);
        }
    }
    Ok(Manifold { saddle: *saddle, stable, branches, pieces, piece_branch, budget_reached: reached })
}

/// Both branches of the unstable manifold of `saddle`, up to `budget`
/// arclength per branch, seeded with a segment of length `tol`.
pub fn grow_unstable(params: &MapParams, saddle: &Saddle, budget: f64, tol: f64) -> Result<Manifold> {
    grow(params, saddle, false, budget, tol, &GrowthPolicy::default())
}

pub fn grow_unstable_with(params: &MapParams, saddle: &Saddle, budget: f64, tol: f64, pol: &GrowthPolicy) -> Result<Manifold> {
    grow(params, saddle, false, budget, tol, pol)
}

/// Both branches of the stable manifold, grown with `f^{-1}`.
pub fn grow_stable(params: &MapParams, saddle: &Saddle, budget: f64, tol: f64) -> Result<Manifold> {
    grow(params, saddle, true, budget, tol, &GrowthPolicy::default())
}

/// Exact side test against the local stable manifold of a saddle.
///
/// For a level `y`, the point of `W^s_loc` is located by bisection on the
/// direction in which nearby orbits first depart from the saddle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableSide {
    pub params: MapParams,
    pub saddle: Saddle,
    pub depart: f64,
    pub max_iter: usize,
}

impl StableSide {
    pub fn new(params: &MapParams, saddle: &Saddle) -> Self {
        let depart = match saddle.label {
            SaddleLabel::Q => 0.1,
            SaddleLabel::P => 0.05,
        };
        StableSide { params: *params, saddle: *saddle, depart, max_iter: 200 }
    }

    /// `+1` if the orbit of `w` leaves the saddle to the right of its stable
    /// manifold, `-1` to the left, `0` if it does not leave in `max_iter`.
    pub fn departure_sign(&self, w: Point) -> f64 {
        let flip = self.saddle.lambda_u.signum();
        let x0 = self.saddle.location.x;
        let mut z = w;
        let mut parity = 1.0;
        for _ in 0..self.max_iter {
            let dx = z.x - x0;
            if dx.abs() > self.depart {
                return dx.signum() * parity;
            }
            z = step(&self.params, z);
            parity *= flip;
        }
        0.0
    }

    /// `x` of the local stable manifold at height `y`.
    pub fn stable_x(&self, y: f64) -> f64 {
        let x0 = self.saddle.location.x;
        let w = 0.9 * self.depart;
        let (mut lo, mut hi) = (x0 - w, x0 + w);
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                return mid;
            }
            match self.departure_sign(Point::new(mid, y)) {
                s if s > 0.0 => hi = mid,
                s if s < 0.0 => lo = mid,
                _ => return mid,
            }
        }
    }

    /// Signed horizontal offset of `w` from the local stable manifold.
    pub fn side(&self, w: Point) -> f64 {
        w.x - self.stable_x(w.y)
    }
}

/// Dense interpolated version of [`StableSide`] for bulk queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableGraph {
    pub y_min: f64,
    pub y_max: f64,
    pub xs: Vec<f64>,
}

impl StableGraph {
    pub fn build(side: &StableSide, y_min: f64, y_max: f64, n: usize) -> Self {
        let xs = (0..=n)
            .map(|i| side.stable_x(y_min + (y_max - y_min) * i as f64 / n as f64))
            .collect();
        StableGraph { y_min, y_max, xs }
    }

    /// Cubic (Catmull-Rom) interpolation of `x(y)`; clamped outside the range.
    pub fn x_at(&self, y: f64) -> f64 {
        let n = self.xs.len() - 1;
        let h = (self.y_max - self.y_min) / n as f64;
        let t = ((y - self.y_min) / h).clamp(0.0, n as f64);
        let i = (t.floor() as usize).min(n - 1);
        let f = t - i as f64;
        let g = |k: isize| self.xs[k.clamp(0, n as isize) as usize];
        let (p0, p1, p2, p3) = (g(i as isize - 1), g(i as isize), g(i as isize + 1), g(i as isize + 2));
        p1 + 0.5 * f * (p2 - p0 + f * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + f * (3.0 * (p1 - p2) + p3 - p0)))
    }

    pub fn side(&self, w: Point) -> f64 {
        w.x - self.x_at(w.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TangencySide {
    #[serde(rename = "W^u(Q) vs W^s(Q)")]
    UnstableQStableQ,
    #[serde(rename = "W^u(P) vs W^s(Q)")]
    UnstablePStableQ,
}

impl TangencySide {
    /// The pair that becomes tangent first. It is decided by the sign of the
    /// Jacobian determinant, not by the orientation label: the `Preserving`
    /// label has `det = -b`.
    pub fn for_orientation(o: Orientation) -> Self {
        match o {
            Orientation::Preserving => TangencySide::UnstablePStableQ,
            Orientation::Reversing => TangencySide::UnstableQStableQ,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangencyReport {
    pub location: Point,
    pub gap: f64,
    pub tangent_misalignment: f64,
    pub crossings: usize,
    pub side: Option<TangencySide>,
}

/// Closest approach (or crossing depth) of two curves inside a window.
///
/// `gap > 0` is the minimal distance when the clipped curves do not cross
/// twice; otherwise `gap < 0` and `|gap|` is the largest distance from the
/// `wu` vertices between the outermost crossings to `ws`.
pub fn detect_tangency(wu: &Curve, ws: &Curve, window: &Rect) -> Result<TangencyReport> {
    let a = wu.clip(window);
    let b = ws.clip(window);
    if a.iter().all(|c| c.len() < 2) {
        return Err(HenonError::NotFound("unstable curve".into()));
    }
    if b.iter().all(|c| c.len() < 2) {
        return Err(HenonError::NotFound("stable curve".into()));
    }
    let nearest_b = |p: &Point| -> (f64, [f64; 2]) {
        let mut best = (f64::INFINITY, [1.0, 0.0]);
        for c in &b {
            let (d, s) = c.nearest(p);
            if d < best.0 {
                best = (d, c.tangent_at(s));
            }
        }
        best
    };
    // crossings, recorded as (piece, arclength on the piece)
    let mut crossings: Vec<(usize, f64)> = Vec::new();
    for (pi, ca) in a.iter().enumerate() {
        for i in 0..ca.len().saturating_sub(1) {
            let (p0, p1) = (ca.vertices[i], ca.vertices[i + 1]);
            for cb in &b {
                for j in 0..cb.len().saturating_sub(1) {
                    if let Some((s, _)) = segment_intersection(&p0, &p1, &cb.vertices[j], &cb.vertices[j + 1]) {
                        crossings.push((pi, ca.arclength[i] + s * (ca.arclength[i + 1] - ca.arclength[i])));
                    }
                }
            }
        }
    }
    let angle = |t1: [f64; 2], t2: [f64; 2]| {
        let c = (t1[0] * t2[0] + t1[1] * t2[1]).abs().min(1.0);
        c.acos()
    };
    // look for a piece crossed at least twice
    let mut deep: Option<(f64, Point, [f64; 2], [f64; 2])> = None;
    for (pi, ca) in a.iter().enumerate() {
        let here: Vec<f64> = crossings.iter().filter(|c| c.0 == pi).map(|c| c.1).collect();
        if here.len() < 2 {
            continue;
        }
        let lo = here.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = here.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for i in 0..ca.len() {
            let s = ca.arclength[i];
            if s > lo && s < hi {
                let (d, tb) = nearest_b(&ca.vertices[i]);
                if deep.map_or(true, |x| d > x.0) {
                    deep = Some((d, ca.vertices[i], ca.tangents[i], tb));
                }
            }
        }
    }
    if let Some((d, p, ta, tb)) = deep {
        return Ok(TangencyReport {
            location: p,
            gap: -d,
            tangent_misalignment: angle(ta, tb),
            crossings: crossings.len(),
            side: None,
        });
    }
    let mut best = (f64::INFINITY, Point::default(), [1.0, 0.0], [1.0, 0.0]);
    for ca in &a {
        for i in 0..ca.len() {
            let (d, tb) = nearest_b(&ca.vertices[i]);
            if d < best.0 {
                best = (d, ca.vertices[i], ca.tangents[i], tb);
            }
        }
    }
    for cb in &b {
        for j in 0..cb.len() {
            for ca in &a {
                let (d, s) = ca.nearest(&cb.vertices[j]);
                if d < best.0 {
                    best = (d, cb.vertices[j], ca.tangent_at(s), cb.tangents[j]);
                }
            }
        }
    }
    Ok(TangencyReport {
        location: best.1,
        gap: best.0,
        tangent_misalignment: angle(best.2, best.3),
        crossings: crossings.len(),
        side: None,
    })
}

/// Search window around the tangency: `|x| <= 0.3`, `|y| <= 5 sqrt(b)`.
pub fn tangency_window(params: &MapParams) -> Rect {
    Rect::centered(0.0, 0.0, 0.3, 5.0 * params.sqrt_b())
}

/// Location of the minimum of the gap function on the unstable manifold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapMin {
    pub value: f64,
    pub point: Point,
    pub branch: usize,
    pub u: f64,
}

/// Inputs of the gap function for one parameter value.
pub struct GapSetup {
    pub params: MapParams,
    pub unstable: Manifold,
    pub side_q: StableSide,
}

/// Budget used for the unstable manifold in the gap function: long enough to
/// pass the first fold and return through the window.
pub const GAP_BUDGET: f64 = 8.0;
pub const GAP_SEED: f64 = 1e-6;

impl GapSetup {
    pub fn new(params: &MapParams) -> Result<Self> {
        let (p, q) = fixed_saddles(params)?;
        let owner = match TangencySide::for_orientation(params.orientation) {
            TangencySide::UnstablePStableQ => p,
            TangencySide::UnstableQStableQ => q,
        };
        let unstable = grow_unstable(params, &owner, GAP_BUDGET, GAP_SEED)?;
        Ok(GapSetup { params: *params, unstable, side_q: StableSide::new(params, &q) })
    }

    fn h(&self, z: Point) -> f64 {
        let w = step(&self.params, step(&self.params, z));
        self.side_q.side(w)
    }

    /// Minimum over the window of `side_Q(f^2 z)` for `z` on the unstable
    /// manifold, refined by golden-section search in the branch coordinate.
    pub fn minimum(&self) -> Result<GapMin> {
        let window = tangency_window(&self.params);
        let mut cands: Vec<(f64, usize, usize, usize)> = Vec::new();
        for (pi, c) in self.unstable.pieces.iter().enumerate() {
            let mut best: Option<(f64, usize)> = None;
            for (i, v) in c.vertices.iter().enumerate() {
                if !window.contains(v) {
                    continue;
                }
                let h = self.h(*v);
                if best.map_or(true, |b| h < b.0) {
                    best = Some((h, i));
                }
            }
            if let Some((h, i)) = best {
                cands.push((h, pi, i, self.unstable.piece_branch[pi]));
            }
        }
        if cands.is_empty() {
            return Err(HenonError::NotFound("unstable manifold does not reach the tangency window".into()));
        }
        cands.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut best: Option<GapMin> = None;
        for &(h0, pi, i, br) in cands.iter().take(4) {
            let c = &self.unstable.pieces[pi];
            let bp = &self.unstable.branches[br];
            let lo = c.params[i.saturating_sub(1)];
            let hi = c.params[(i + 1).min(c.len() - 1)];
            let lo = if lo == f64::NEG_INFINITY { c.params[i] } else { lo };
            let f = |u: f64| bp.eval(u).map(|z| self.h(z)).unwrap_or(f64::INFINITY);
            let (u, val) = golden_min(f, lo, hi, 80);
            let (u, val) = if val <= h0 { (u, val) } else { (c.params[i], h0) };
            let point = bp.eval(u).unwrap_or(c.vertices[i]);
            if best.map_or(true, |b| val < b.value) {
                best = Some(GapMin { value: val, point, branch: br, u });
            }
        }
        Ok(best.unwrap())
    }
}

fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
        if b - a <= 1e-15 * (1.0 + a.abs()) {
            break;
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Gap at the critical value of the one-dimensional quadratic family:
/// `f^2(0) - x_Q = (1 - a) - x_Q(a)`.
pub fn gap_one_dimensional(a: f64) -> f64 {
    let x_q = (-1.0 - (1.0 + 4.0 * a).sqrt()) / (2.0 * a);
    (1.0 - a) - x_q
}

/// Signed tangency gap as a function of `a`: positive before the tangency
/// (the fold has not reached the stable manifold), negative after it.
pub fn gap_function(params: &MapParams) -> Result<f64> {
    if params.b == 0.0 {
        return Ok(gap_one_dimensional(params.a));
    }
    Ok(GapSetup::new(params)?.minimum()?.value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifurcationTrace {
    pub a_lo: f64,
    pub a_hi: f64,
    pub gap_lo: f64,
    pub gap_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bifurcation {
    pub a_star: f64,
    pub iterations: usize,
    pub report: TangencyReport,
    pub trace: Vec<BifurcationTrace>,
}

pub const DEFAULT_BRACKET: (f64, f64) = (1.9, 2.1);
pub const DEFAULT_TOL_A: f64 = 1e-10;
const MAX_ITER: usize = 200;

/// Bisection on `a -> gap(a)` over `bracket`.
pub fn find_first_bifurcation(template: &MapParams, bracket: (f64, f64), tol_a: f64) -> Result<Bifurcation> {
    let (mut lo, mut hi) = bracket;
    if !(lo < hi) || !(tol_a > 0.0) {
        return Err(HenonError::InvalidInput(format!("bad bracket ({lo}, {hi}) or tolerance {tol_a}")));
    }
    let gap = |a: f64| gap_function(&template.with_a(a));
    let mut g_lo = gap(lo)?;
    let g_hi = gap(hi)?;
    if g_lo.signum() == g_hi.signum() && g_lo != 0.0 {
        return Err(HenonError::Bracket { lo, hi, gap_lo: g_lo, gap_hi: g_hi });
    }
    let mut trace = vec![BifurcationTrace { a_lo: lo, a_hi: hi, gap_lo: g_lo, gap_hi: g_hi }];
    let mut iterations = 0;
    let mut exact = None;
    while hi - lo >= tol_a {
        if iterations >= MAX_ITER {
            return Err(HenonError::NoConvergence {
                iterations,
                detail: format!("bracket ({lo}, {hi}) still wider than {tol_a}"),
            });
        }
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let g = gap(mid)?;
        if g == 0.0 {
            exact = Some(mid);
            break;
        }
        if g.signum() == g_lo.signum() {
            lo = mid;
            g_lo = g;
        } else {
            hi = mid;
        }
        trace.push(BifurcationTrace { a_lo: lo, a_hi: hi, gap_lo: g_lo, gap_hi: g });
    }
    let a_star = exact.unwrap_or(0.5 * (lo + hi));
    let report = tangency_report(&template.with_a(a_star))?;
    Ok(Bifurcation { a_star, iterations, report, trace })
}

/// Geometric report at parameter `params`: the unstable leaf through the
/// gap minimum against the component of `W^s(Q)` near the origin.
pub fn tangency_report(params: &MapParams) -> Result<TangencyReport> {
    let side = Some(TangencySide::for_orientation(params.orientation));
    if params.b == 0.0 {
        let g = gap_one_dimensional(params.a);
        return Ok(TangencyReport {
            location: Point::new(0.0, 0.0),
            gap: g,
            tangent_misalignment: 0.0,
            crossings: if g < 0.0 { 2 } else { 0 },
            side,
        });
    }
    let setup = GapSetup::new(params)?;
    let m = setup.minimum()?;
    let leaf = leaf_near(&setup, &m, 0.05, 401)?;
    let window = tangency_window(params);
    let half = (leaf.bbox().x_max - m.point.x).min(m.point.x - leaf.bbox().x_min);
    let stable = stable_component(&setup, m.point.x, half, &window, 801)?;
    let mut rep = detect_tangency(&leaf, &stable, &window)?;
    rep.side = side;
    Ok(rep)
}

/// Exact samples of the unstable leaf through the gap minimum, covering
/// arclength `half_len` on each side.
fn leaf_near(setup: &GapSetup, m: &GapMin, half_len: f64, n: usize) -> Result<Curve> {
    let bp = &setup.unstable.branches[m.branch];
    let du = 1e-9;
    let speed = match (bp.eval(m.u - du), bp.eval(m.u + du)) {
        (Some(a), Some(b)) => a.dist(&b) / (2.0 * du),
        _ => return Err(HenonError::InsufficientCurve("leaf through the tangency".into())),
    };
    let span = half_len / speed;
    let mut pts = Vec::with_capacity(n);
    let mut us = Vec::with_capacity(n);
    for i in 0..n {
        let u = m.u - span + 2.0 * span * i as f64 / (n - 1) as f64;
        if let Some(p) = bp.eval(u) {
            pts.push(p);
            us.push(u);
        }
    }
    Curve::with_params(pts, us, CurveKind::Unstable)
}

/// Height of the stable component above the point `(x, y_ref)`: root in `y`
/// of `side_Q(f^2(x, y))`, searched within the window.
fn stable_height(setup: &GapSetup, x: f64, window: &Rect) -> Option<f64> {
    let h = |y: f64| setup.h(Point::new(x, y));
    let (mut lo, mut hi) = (window.y_min, window.y_max);
    let (hl, hh) = (h(lo), h(hi));
    if hl.signum() == hh.signum() {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid).signum() == hl.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// The component of `f^{-2} W^s_loc(Q)` near the origin as a graph over `x`,
/// sampled on `[x0 - half, x0 + half]` with nodes clustered cubically at `x0`.
fn stable_component(setup: &GapSetup, x0: f64, half: f64, window: &Rect, n: usize) -> Result<Curve> {
    let mut pts = Vec::new();
    for i in 0..n {
        let r = 2.0 * i as f64 / (n - 1) as f64 - 1.0;
        let x = x0 + half * r * r * r;
        if let Some(y) = stable_height(setup, x, window) {
            pts.push(Point::new(x, y));
        }
    }
    if pts.len() < 2 {
        return Err(HenonError::NotFound("stable component near the origin".into()));
    }
    Curve::new(pts, CurveKind::Stable)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFit {
    pub alpha: f64,
    pub beta: f64,
    pub rel_residual: f64,
    pub s: Vec<f64>,
    pub d: Vec<f64>,
}

/// Normal distance `d(s)` from the unstable leaf to the stable component,
/// against arclength `s` measured from the gap minimum, fitted by
/// `alpha + beta s^2`.
pub fn quadratic_signature(params: &MapParams, half_len: f64, n: usize) -> Result<QuadraticFit> {
    if params.b == 0.0 {
        return Err(HenonError::SingularMap);
    }
    let setup = GapSetup::new(params)?;
    let m = setup.minimum()?;
    let bp = setup.unstable.branches[m.branch];
    let leaf = leaf_near(&setup, &m, half_len, n)?;
    // arclength origin at the minimum
    let (_, s0) = leaf.nearest(&m.point);
    let reach = 10.0 * params.sqrt_b();
    let mut s_out = Vec::with_capacity(n);
    let mut d_out = Vec::with_capacity(n);
    for i in 0..leaf.len() {
        let c = leaf.vertices[i];
        let u = leaf.params[i];
        let du = 1e-9;
        let (a, b) = match (bp.eval(u - du), bp.eval(u + du)) {
            (Some(a), Some(b)) => (a, b),
            _ => continue,
        };
        let t = Vector2::new(b.x - a.x, b.y - a.y).normalize();
        let nrm = Vector2::new(-t[1], t[0]);
        let nrm = if nrm[1] < 0.0 { -nrm } else { nrm };
        let h = |r: f64| setup.h(c.offset(&nrm, r));
        let (mut lo, mut hi) = (-reach, reach);
        let hl = h(lo);
        if hl.signum() == h(hi).signum() {
            continue;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if h(mid).signum() == hl.signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        s_out.push(leaf.arclength[i] - s0);
        d_out.push(0.5 * (lo + hi));
    }
    if s_out.len() < 5 {
        return Err(HenonError::InsufficientCurve("too few normal-distance samples".into()));
    }
    let (alpha, beta) = fit_even_quadratic(&s_out, &d_out);
    let mut ss_r = 0.0;
    let mut ss_d = 0.0;
    for (s, d) in s_out.iter().zip(&d_out) {
        let r = d - (alpha + beta * s * s);
        ss_r += r * r;
        ss_d += d * d;
    }
    let rel_residual = if ss_d > 0.0 { (ss_r / ss_d).sqrt() } else { f64::INFINITY };
    Ok(QuadraticFit { alpha, beta, rel_residual, s: s_out, d: d_out })
}

/// Least squares for `d = alpha + beta s^2`.
pub fn fit_even_quadratic(s: &[f64], d: &[f64]) -> (f64, f64) {
    let n = s.len() as f64;
    let (mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (si, di) in s.iter().zip(d) {
        let x = si * si;
        sx += x;
        sxx += x * x;
        sy += di;
        sxy += x * di;
    }
    let det = n * sxx - sx * sx;
    let beta = (n * sxy - sx * sy) / det;
    let alpha = (sy - beta * sx) / n;
    (alpha, beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C2bReport {
    pub max_slope: f64,
    pub max_curvature: f64,
    pub pass: bool,
}

/// Slope and curvature bounds of a `C^2(b)`-curve: both at most `sqrt(b)`.
pub fn c2b_check(curve: &Curve, b: f64) -> C2bReport {
    let mut max_slope: f64 = 0.0;
    for t in &curve.tangents {
        let slope = if t[0] == 0.0 { f64::INFINITY } else { (t[1] / t[0]).abs() };
        max_slope = max_slope.max(slope);
    }
    let max_curvature = curve.curvature.iter().cloned().fold(0.0, f64::max);
    let bound = b.sqrt();
    C2bReport { max_slope, max_curvature, pass: max_slope <= bound && max_curvature <= bound }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p(a: f64, b: f64) -> MapParams {
        MapParams::desk(a, b).unwrap()
    }

    #[test]
    fn unstable_manifold_at_b_zero_is_the_interval() {
        let params = p(2.0, 0.0);
        let (_, q) = fixed_saddles(&params).unwrap();
        let m = grow_unstable(&params, &q, 6.0, 1e-6).unwrap();
        let right = m.local_piece(0).unwrap();
        for v in &right.vertices {
            assert_eq!(v.y, 0.0);
            assert!(v.x >= -1.0 - 1e-12 && v.x <= 1.0 + 1e-12, "{v:?}");
        }
        let bb = right.bbox();
        assert!(bb.x_max > 1.0 - 1e-6);
    }

    #[test]
    fn unstable_manifold_invariance_and_start() {
        let params = p(2.0, 1e-4);
        let (_, q) = fixed_saddles(&params).unwrap();
        let tol = 1e-6;
        let m = grow_unstable(&params, &q, 6.0, tol).unwrap();
        let res = m.invariance_residual();
        assert!(res < 2.0 * 1e-4, "residual {res}");
        let c = m.local_piece(0).unwrap();
        let cut = 0.01 * c.length();
        let v = q.unstable_vec();
        for i in 1..c.len() {
            if c.arclength[i] > cut {
                break;
            }
            let t = c.tangents[i];
            let cosang = (t[0] * v[0] + t[1] * v[1]).abs().min(1.0);
            assert!(cosang.acos() < 1e-3);
        }
        assert!(c.min_spacing() >= 1e-7 * 0.999);
        assert!(c.max_spacing() <= 1e-2 * 1.001);
    }

    #[test]
    fn stable_manifold_is_nearly_vertical() {
        let mut dists = Vec::new();
        for b in [1e-2, 1e-3, 1e-4] {
            let params = p(2.0, b);
            let (_, q) = fixed_saddles(&params).unwrap();
            let m = grow_stable(&params, &q, 4.0, 1e-6).unwrap();
            let mut hd: f64 = 0.0;
            for br in 0..2 {
                let c = m.local_piece(br).unwrap();
                for (i, v) in c.vertices.iter().enumerate() {
                    if c.arclength[i] < 1.0 {
                        let t = c.tangents[i];
                        assert!((t[0] / t[1]).abs() < 2.0 * b.sqrt(), "b={b}");
                    }
                    hd = hd.max((v.x - q.location.x).abs());
                }
            }
            dists.push(hd);
        }
        assert!(dists[0] > dists[1] && dists[1] > dists[2], "{dists:?}");
    }

    #[test]
    fn stable_growth_needs_inverse() {
        let params = p(2.0, 0.0);
        let (_, q) = fixed_saddles(&params).unwrap();
        assert_eq!(grow_stable(&params, &q, 1.0, 1e-6).unwrap_err(), HenonError::SingularMap);
    }

    #[test]
    fn stable_side_matches_grown_manifold() {
        let params = p(2.0, 1e-3);
        let (_, q) = fixed_saddles(&params).unwrap();
        let m = grow_stable(&params, &q, 2.0, 1e-6).unwrap();
        let side = StableSide::new(&params, &q);
        let c = m.local_piece(0).unwrap();
        for v in c.vertices.iter().step_by(7) {
            assert!(side.side(*v).abs() < 1e-9, "{v:?} {}", side.side(*v));
        }
        let graph = StableGraph::build(&side, -2.0, 2.0, 400);
        for v in c.vertices.iter().step_by(5) {
            assert!(graph.side(*v).abs() < 1e-10);
        }
    }

    #[test]
    fn synthetic_parabola_tangency() {
        let parabola = Curve::new(
            (0..=400).map(|i| {
                let x = -1.0 + 0.005 * i as f64;
                Point::new(x, x * x)
            })
            .collect(),
            CurveKind::Other,
        )
        .unwrap();
        let window = Rect::centered(0.0, 0.0, 1.0, 1.0);
        for c in [0.1, 0.01, -0.01, -0.1] {
            let line = Curve::new(
                (0..=300).map(|i| Point::new(-0.9 + 0.006 * i as f64, -c)).collect(),
                CurveKind::Other,
            )
            .unwrap();
            let r = detect_tangency(&line, &parabola, &window).unwrap();
            assert_relative_eq!(r.gap, c, max_relative = 1e-4);
            assert!(r.tangent_misalignment < 1e-3, "{}", r.tangent_misalignment);
            assert_eq!(r.crossings, if c < 0.0 { 2 } else { 0 });
        }
    }

    #[test]
    fn missing_curve_in_window() {
        let a = Curve::new(vec![Point::new(5.0, 5.0), Point::new(6.0, 5.0)], CurveKind::Other).unwrap();
        let b = Curve::new(vec![Point::new(0.0, 0.0), Point::new(0.1, 0.0)], CurveKind::Other).unwrap();
        let w = Rect::centered(0.0, 0.0, 1.0, 1.0);
        assert!(matches!(detect_tangency(&a, &b, &w), Err(HenonError::NotFound(_))));
    }

    #[test]
    fn one_dimensional_bifurcation_is_exactly_two() {
        let r = find_first_bifurcation(&p(2.0, 0.0), DEFAULT_BRACKET, DEFAULT_TOL_A).unwrap();
        assert_eq!(r.a_star, 2.0);
        assert_eq!(gap_one_dimensional(2.0), 0.0);
    }

    #[test]
    fn gap_changes_sign_across_the_tangency() {
        let lo = gap_function(&p(1.9, 1e-4)).unwrap();
        let hi = gap_function(&p(2.1, 1e-4)).unwrap();
        assert!(lo > 0.0 && hi < 0.0, "{lo} {hi}");
        // close to the one-dimensional value
        assert!((lo - gap_one_dimensional(1.9)).abs() < 0.01);
    }

    #[test]
    fn bad_bracket_is_reported() {
        let e = find_first_bifurcation(&p(2.0, 1e-4), (1.5, 1.6), 1e-6).unwrap_err();
        assert!(matches!(e, HenonError::Bracket { .. }));
    }

    #[test]
    fn c2b_examples() {
        let seg = Curve::new((0..10).map(|i| Point::new(i as f64 * 0.1, 0.3)).collect(), CurveKind::Other).unwrap();
        assert!(c2b_check(&seg, 1e-6).pass);
        let arc = Curve::new(
            (0..200)
                .map(|i| {
                    let t = 0.5 * i as f64 / 199.0;
                    Point::new(t.sin(), 1.0 - t.cos())
                })
                .collect(),
            CurveKind::Other,
        )
        .unwrap();
        let r = c2b_check(&arc, 0.01);
        assert!(!r.pass);
        assert_relative_eq!(r.max_curvature, 1.0, max_relative = 1e-3);
    }

    #[test]
    fn even_quadratic_fit_is_exact_on_parabola() {
        let s: Vec<f64> = (-10..=10).map(|i| i as f64 * 0.1).collect();
        let d: Vec<f64> = s.iter().map(|x| 0.25 + 3.0 * x * x).collect();
        let (a, b) = fit_even_quadratic(&s, &d);
        assert_relative_eq!(a, 0.25, epsilon = 1e-12);
        assert_relative_eq!(b, 3.0, epsilon = 1e-12);
    }
}
