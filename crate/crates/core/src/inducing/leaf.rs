//! The tangency leaf as a smooth graph `y = Y(x)`.
//!
//! Forward dynamics only sees the position of a point along the unstable
//! direction, so the leaf is stored as a Chebyshev fit of exact manifold
//! samples. This gives an exactly monotone parametrization by `x` down to
//! rounding, which exact manifold evaluation does not.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{HenonError, Result};
use crate::henon::Point;
use crate::manifolds::{BranchParam, GapMin};

/// Chebyshev series on `[x_min, x_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub x_min: f64,
    pub x_max: f64,
    pub coeffs: Vec<f64>,
    pub fit_residual: f64,
}

const LEAF_DEGREE: usize = 18;
const LEAF_HALF_WIDTH: f64 = 0.62;

fn clenshaw(c: &[f64], t: f64) -> f64 {
    let (mut b1, mut b2) = (0.0, 0.0);
    for &ck in c.iter().skip(1).rev() {
        let b0 = 2.0 * t * b1 - b2 + ck;
        b2 = b1;
        b1 = b0;
    }
    t * b1 - b2 + c[0]
}

fn cheb_derivative(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    if n < 2 {
        return vec![0.0];
    }
    let mut d = vec![0.0; n + 1];
    for k in (1..n).rev() {
        d[k - 1] = d[k + 1] + 2.0 * k as f64 * c[k];
    }
    d[0] *= 0.5;
    d.truncate(n - 1);
    d
}

impl Leaf {
    /// Least-squares fit of `y(x)` through `pts`, which must be a graph.
    pub fn fit(pts: &[Point], degree: usize) -> Result<Leaf> {
        if pts.len() < 2 * (degree + 1) {
            return Err(HenonError::InsufficientCurve(format!("leaf fit needs {} samples, got {}", 2 * (degree + 1), pts.len())));
        }
        let x_min = pts.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let x_max = pts.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        let m = pts.len();
        let mut a = DMatrix::zeros(m, degree + 1);
        let mut rhs = DVector::zeros(m);
        for (i, p) in pts.iter().enumerate() {
            let t = (2.0 * p.x - x_min - x_max) / (x_max - x_min);
            let (mut t0, mut t1) = (1.0, t);
            a[(i, 0)] = 1.0;
            if degree >= 1 {
                a[(i, 1)] = t;
            }
            for k in 2..=degree {
                let t2 = 2.0 * t * t1 - t0;
                a[(i, k)] = t2;
                t0 = t1;
                t1 = t2;
            }
            rhs[i] = p.y;
        }
        let coeffs = a
            .svd(true, true)
            .solve(&rhs, 1e-14)
            .map_err(|e| HenonError::Geometry(format!("leaf fit failed: {e}")))?;
        let mut leaf = Leaf { x_min, x_max, coeffs: coeffs.iter().copied().collect(), fit_residual: 0.0 };
        leaf.fit_residual = pts.iter().map(|p| (leaf.y(p.x) - p.y).abs()).fold(0.0, f64::max);
        Ok(leaf)
    }

    /// Samples the unstable branch through the gap minimum while `|x|` stays
    /// below the fit half-width, continuing across the saddle onto the
    /// companion branch when the walk reaches it.
    pub fn from_manifold(branches: &[BranchParam; 2], m: &GapMin) -> Result<Leaf> {
        let bp = &branches[m.branch];
        let du = 2e-3;
        let mut pts = vec![m.point];
        let inside = |z: &Point| z.x.abs() <= LEAF_HALF_WIDTH;
        let mut reached_saddle = false;
        for dir in [-1.0, 1.0] {
            let mut k = 1.0;
            loop {
                let u = m.u + dir * k * du;
                if u < -25.0 {
                    reached_saddle = true;
                    break;
                }
                match bp.eval(u) {
                    Some(z) if inside(&z) => pts.push(z),
                    _ => break,
                }
                k += 1.0;
            }
        }
        if reached_saddle {
            let other = &branches[1 - m.branch];
            pts.push(other.base);
            let mut u = -25.0;
            while let Some(z) = other.eval(u) {
                if !inside(&z) {
                    break;
                }
                pts.push(z);
                u += du;
            }
        }
        pts.sort_by(|a, b| a.x.total_cmp(&b.x));
        pts.dedup_by(|a, b| a.x == b.x);
        let thinned = thin_by_x(&pts, 4000);
        Leaf::fit(&thinned, LEAF_DEGREE)
    }

    fn t(&self, x: f64) -> f64 {
        (2.0 * x - self.x_min - self.x_max) / (self.x_max - self.x_min)
    }

    pub fn y(&self, x: f64) -> f64 {
        clenshaw(&self.coeffs, self.t(x))
    }

    pub fn dy(&self, x: f64) -> f64 {
        let d = cheb_derivative(&self.coeffs);
        clenshaw(&d, self.t(x)) * 2.0 / (self.x_max - self.x_min)
    }

    pub fn point(&self, x: f64) -> Point {
        Point::new(x, self.y(x))
    }

    /// Unnormalized tangent `(1, Y'(x))`.
    pub fn tangent(&self, x: f64) -> Vector2<f64> {
        Vector2::new(1.0, self.dy(x))
    }

    /// Arclength between `x0` and `x1` (5-point Gauss-Legendre per panel).
    pub fn arclength(&self, x0: f64, x1: f64) -> f64 {
        let panels = 8;
        let h = (x1 - x0) / panels as f64;
        (0..panels)
            .map(|i| {
                let a = x0 + i as f64 * h;
                gauss5(|x| self.dy(x).hypot(1.0), a, a + h)
            })
            .sum()
    }
}

const GL5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_08),
    (0.906_179_845_938_664, 0.236_926_885_056_189_08),
];

pub(crate) fn gauss5<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
    GL5.iter().map(|&(x, w)| w * f(m + r * x)).sum::<f64>() * r
}

fn thin_by_x(pts: &[Point], max: usize) -> Vec<Point> {
    if pts.len() <= max {
        return pts.to_vec();
    }
    let (lo, hi) = (pts[0].x, pts[pts.len() - 1].x);
    let cell = (hi - lo) / max as f64;
    let mut out: Vec<Point> = Vec::with_capacity(max + 1);
    let mut last_cell = -1i64;
    for p in pts {
        let c = ((p.x - lo) / cell) as i64;
        if c != last_cell {
            out.push(*p);
            last_cell = c;
        }
    }
    if out.last() != pts.last() {
        out.push(pts[pts.len() - 1]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fit_reproduces_polynomial() {
        let pts: Vec<Point> = (0..200)
            .map(|i| {
                let x = -0.5 + i as f64 / 199.0;
                Point::new(x, 0.1 + 0.2 * x - 0.3 * x * x + 0.05 * x.powi(3))
            })
            .collect();
        let leaf = Leaf::fit(&pts, 6).unwrap();
        assert!(leaf.fit_residual < 1e-14);
        assert_relative_eq!(leaf.dy(0.2), 0.2 - 0.6 * 0.2 + 0.15 * 0.04, epsilon = 1e-12);
    }

    #[test]
    fn arclength_of_line() {
        let pts: Vec<Point> = (0..50).map(|i| Point::new(i as f64 / 49.0, 0.75 * i as f64 / 49.0)).collect();
        let leaf = Leaf::fit(&pts, 3).unwrap();
        assert_relative_eq!(leaf.arclength(0.0, 1.0), 1.25, epsilon = 1e-12);
    }
}
