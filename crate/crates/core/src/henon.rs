//! The Hénon family `f(x, y) = (1 - a x^2 + sqrt(b) y, ±sqrt(b) x)`.
//!
//! Sign convention: the orientation preserving map uses `+sqrt(b) x` in the
//! second coordinate and has `det Df = -b`; the reversing map uses
//! `-sqrt(b) x` and has `det Df = +b`.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{HenonError, Result};

/// Half-width of the square `[-BOX, BOX]^2` outside of which an orbit is
/// declared escaped.
pub const BOX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    #[default]
    Preserving,
    Reversing,
}

impl Orientation {
    /// Sign in front of `sqrt(b) x`.
    pub fn sign(self) -> f64 {
        match self {
            Orientation::Preserving => 1.0,
            Orientation::Reversing => -1.0,
        }
    }
}

impl std::str::FromStr for Orientation {
    type Err = HenonError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "preserving" => Ok(Orientation::Preserving),
            "reversing" => Ok(Orientation::Reversing),
            other => Err(HenonError::InvalidParams(format!("unknown orientation {other:?}"))),
        }
    }
}

/// Map parameters. Only `a, b, orientation, epsilon, cap_n` are stored; the
/// constants `xi`, `sigma1`, `sigma2` are always recomputed from `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapParams {
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub orientation: Orientation,
    pub epsilon: f64,
    pub cap_n: usize,
}

impl MapParams {
    pub fn new(a: f64, b: f64, orientation: Orientation, epsilon: f64, cap_n: usize) -> Result<Self> {
        let p = MapParams { a, b, orientation, epsilon, cap_n };
        p.validate()?;
        Ok(p)
    }

    /// Desk-scale defaults: `epsilon = 0.5`, `N = 22`, orientation preserving.
    pub fn desk(a: f64, b: f64) -> Result<Self> {
        Self::new(a, b, Orientation::Preserving, 0.5, 22)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.a > 0.0) {
            return Err(HenonError::InvalidParams(format!("a = {} must be positive", self.a)));
        }
        if !(self.b.is_finite() && self.b >= 0.0) {
            return Err(HenonError::InvalidParams(format!("b = {} must be non-negative", self.b)));
        }
        // epsilon = 1/2 is admitted: it is the working value of the desk runs.
        if !(self.epsilon > 0.0 && self.epsilon <= 0.5) {
            return Err(HenonError::InvalidParams(format!(
                "epsilon = {} must lie in (0, 1/2]",
                self.epsilon
            )));
        }
        if self.cap_n < 1 {
            return Err(HenonError::InvalidParams("N must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_a(&self, a: f64) -> Self {
        MapParams { a, ..*self }
    }

    pub fn sqrt_b(&self) -> f64 {
        self.b.sqrt()
    }

    /// `xi = floor(10 / epsilon)`.
    pub fn xi(&self) -> usize {
        (10.0 / self.epsilon).floor() as usize
    }

    pub fn sigma1(&self) -> f64 {
        2.0 - self.epsilon
    }

    pub fn sigma2(&self) -> f64 {
        4.0 + self.epsilon
    }

    /// Constant determinant of the Jacobian.
    pub fn det(&self) -> f64 {
        -self.orientation.sign() * self.b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn in_box(&self) -> bool {
        self.x.abs() <= BOX && self.y.abs() <= BOX
    }

    pub fn dist(&self, o: &Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    pub fn vec(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn from_vec(v: Vector2<f64>) -> Self {
        Point::new(v[0], v[1])
    }

    pub fn offset(&self, dir: &Vector2<f64>, t: f64) -> Point {
        Point::new(self.x + t * dir[0], self.y + t * dir[1])
    }
}

fn check(z: &Point) -> Result<()> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(HenonError::InvalidInput(format!("non-finite point ({}, {})", z.x, z.y)))
    }
}

/// Unit tangent vector at a base point, plus the log of the accumulated
/// derivative norm along the orbit segment used to produce it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentData {
    pub base: Point,
    pub direction: [f64; 2],
    pub log_norm: f64,
}

impl TangentData {
    pub fn dir(&self) -> Vector2<f64> {
        Vector2::new(self.direction[0], self.direction[1])
    }
}

/// Result of [`unstable_direction`]: the estimated `E^u_z` and
/// `J^u(z) = |Df_z restricted to E^u_z|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnstableEstimate {
    pub tangent: TangentData,
    pub jacobian_u: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SaddleLabel {
    P,
    Q,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Saddle {
    pub location: Point,
    pub lambda_u: f64,
    pub lambda_s: f64,
    pub v_u: [f64; 2],
    pub v_s: [f64; 2],
    pub label: SaddleLabel,
}

impl Saddle {
    pub fn unstable_vec(&self) -> Vector2<f64> {
        Vector2::new(self.v_u[0], self.v_u[1])
    }

    pub fn stable_vec(&self) -> Vector2<f64> {
        Vector2::new(self.v_s[0], self.v_s[1])
    }
}

/// Unchecked evaluation, for inner loops that already know the point is finite.
#[inline]
pub fn step(params: &MapParams, z: Point) -> Point {
    let sb = params.sqrt_b();
    Point::new(
        1.0 - params.a * z.x * z.x + sb * z.y,
        params.orientation.sign() * sb * z.x,
    )
}

pub fn apply(params: &MapParams, z: Point) -> Result<Point> {
    check(&z)?;
    Ok(step(params, z))
}

pub fn inverse(params: &MapParams, z: Point) -> Result<Point> {
    check(&z)?;
    if params.b == 0.0 {
        return Err(HenonError::SingularMap);
    }
    let sb = params.sqrt_b();
    let x = z.y / (params.orientation.sign() * sb);
    let y = (z.x - 1.0 + params.a * x * x) / sb;
    Ok(Point::new(x, y))
}

#[inline]
pub fn jacobian_at(params: &MapParams, z: Point) -> Matrix2<f64> {
    let sb = params.sqrt_b();
    Matrix2::new(-2.0 * params.a * z.x, sb, params.orientation.sign() * sb, 0.0)
}

pub fn jacobian(params: &MapParams, z: Point) -> Result<Matrix2<f64>> {
    check(&z)?;
    Ok(jacobian_at(params, z))
}

/// The two fixed points: `P` (positive x, near `(1/2, 0)`) and `Q` (negative
/// x, near `(-1, 0)`).
pub fn fixed_saddles(params: &MapParams) -> Result<(Saddle, Saddle)> {
    // a x^2 + (1 - s b) x - 1 = 0
    let s = params.orientation.sign();
    let bq = 1.0 - s * params.b;
    let disc = bq * bq + 4.0 * params.a;
    if disc < 0.0 {
        return Err(HenonError::NoSaddle(disc));
    }
    let r = disc.sqrt();
    // numerically stable pair of roots
    let q = -0.5 * (bq + r);
    let x_q = q / params.a;
    let x_p = -1.0 / q;
    let mk = |x: f64, label: SaddleLabel| -> Result<Saddle> {
        let loc = Point::new(x, s * params.sqrt_b() * x);
        let ax = params.a * x;
        let d = ax * ax + s * params.b;
        if d < 0.0 {
            return Err(HenonError::NoSaddle(d));
        }
        let root = d.sqrt();
        let l1 = -ax + root;
        let l2 = -ax - root;
        let (lu, ls) = if l1.abs() >= l2.abs() { (l1, l2) } else { (l2, l1) };
        if !(lu.abs() > 1.0 && ls.abs() < 1.0) {
            return Err(HenonError::NoSaddle(d));
        }
        let eig = |l: f64| {
            let v = if params.b == 0.0 {
                if l == ls { Vector2::new(0.0, 1.0) } else { Vector2::new(1.0, 0.0) }
            } else {
                Vector2::new(l, s * params.sqrt_b())
            };
            let v = v.normalize();
            // orient unstable vectors towards +x, stable towards +y
            [v[0], v[1]]
        };
        let mut vu = eig(lu);
        if vu[0] < 0.0 {
            vu = [-vu[0], -vu[1]];
        }
        let mut vs = eig(ls);
        if vs[1] < 0.0 {
            vs = [-vs[0], -vs[1]];
        }
        Ok(Saddle { location: loc, lambda_u: lu, lambda_s: ls, v_u: vu, v_s: vs, label })
    };
    Ok((mk(x_p, SaddleLabel::P)?, mk(x_q, SaddleLabel::Q)?))
}

/// Estimate `E^u_z` by pushing a probe vector through `Df` along a backward
/// orbit of length `n_back` and normalizing.
///
/// Backward iterates are computed with the exact inverse and then projected
/// onto the band `|y| <= BOX sqrt(b)`, which contains every backward orbit
/// that stays in the box. Rounding errors in the stable direction are
/// amplified by `f^{-1}` but are damped again by the forward push, so the
/// projection keeps the pseudo-orbit bounded without biasing the result.
/// An escape is reported when a backward iterate's `x` leaves the box.
pub fn unstable_direction(params: &MapParams, z: Point, n_back: usize) -> Result<UnstableEstimate> {
    check(&z)?;
    if params.b == 0.0 {
        let j = (2.0 * params.a * z.x).abs();
        return Ok(UnstableEstimate {
            tangent: TangentData { base: z, direction: [1.0, 0.0], log_norm: j.ln() },
            jacobian_u: j,
        });
    }
    if !z.in_box() {
        return Err(HenonError::Escape { step: 0 });
    }
    let band = BOX * params.sqrt_b();
    let mut orbit = Vec::with_capacity(n_back + 1);
    orbit.push(z);
    let mut w = z;
    for k in 1..=n_back {
        let mut pre = inverse(params, w)?;
        if !pre.x.is_finite() || pre.x.abs() > BOX {
            return Err(HenonError::Escape { step: k });
        }
        pre.y = pre.y.clamp(-band, band);
        orbit.push(pre);
        w = pre;
    }
    let mut v = Vector2::new(1.0, 0.0);
    let mut log_norm = 0.0;
    for p in orbit[1..].iter().rev() {
        let u = jacobian_at(params, *p) * v;
        let n = u.norm();
        log_norm += n.ln();
        v = u / n;
    }
    if v[0] < 0.0 {
        v = -v;
    }
    let image = jacobian_at(params, z) * v;
    Ok(UnstableEstimate {
        tangent: TangentData { base: z, direction: [v[0], v[1]], log_norm },
        jacobian_u: image.norm(),
    })
}

/// Push a unit vector along the forward orbit of `z` for `n` steps and
/// return the log of the total stretch. Used for `|Df^n|T|` along leaves.
pub fn log_stretch(params: &MapParams, z: Point, v: Vector2<f64>, n: usize) -> (f64, Point, Vector2<f64>) {
    let mut w = z;
    let mut u = v.normalize();
    let mut acc = 0.0;
    for _ in 0..n {
        let nu = jacobian_at(params, w) * u;
        let len = nu.norm();
        acc += len.ln();
        u = nu / len;
        w = step(params, w);
    }
    (acc, w, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(a: f64, b: f64) -> MapParams {
        MapParams::desk(a, b).unwrap()
    }

    #[test]
    fn apply_examples() {
        assert_eq!(apply(&p(2.0, 0.0), Point::new(0.0, 0.0)).unwrap(), Point::new(1.0, 0.0));
        assert_eq!(apply(&p(2.0, 0.0), Point::new(0.5, 0.0)).unwrap(), Point::new(0.5, 0.0));
        let z = apply(&p(2.0, 0.01), Point::new(0.0, 1.0)).unwrap();
        assert_relative_eq!(z.x, 1.1, epsilon = 1e-15);
        assert_eq!(z.y, 0.0);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            apply(&p(2.0, 0.0), Point::new(f64::NAN, 0.0)),
            Err(HenonError::InvalidInput(_))
        ));
        assert!(jacobian(&p(2.0, 0.0), Point::new(0.0, f64::INFINITY)).is_err());
    }

    #[test]
    fn inverse_examples() {
        let z = inverse(&p(2.0, 0.01), Point::new(1.1, 0.0)).unwrap();
        assert_relative_eq!(z.x, 0.0, epsilon = 1e-14);
        assert_relative_eq!(z.y, 1.0, epsilon = 1e-12);
        assert_eq!(inverse(&p(2.0, 0.0), Point::new(0.0, 0.0)), Err(HenonError::SingularMap));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for params in [p(2.0, 0.01), MapParams::new(1.9, 0.3, Orientation::Reversing, 0.5, 22).unwrap()] {
            for _ in 0..1000 {
                let z = Point::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
                let back = inverse(&params, apply(&params, z).unwrap()).unwrap();
                assert!(back.dist(&z) <= 1e-10 * (1.0 + z.x.abs().max(z.y.abs())));
                let fwd = apply(&params, inverse(&params, z).unwrap()).unwrap();
                assert!(fwd.dist(&z) <= 1e-10 * (1.0 + z.x.abs().max(z.y.abs())));
            }
        }
    }

    #[test]
    fn inverse_jacobian_determinant() {
        let params = p(2.0, 0.01);
        let z = Point::new(0.3, -0.2);
        let pre = inverse(&params, z).unwrap();
        let inv = jacobian_at(&params, pre).try_inverse().unwrap();
        assert_relative_eq!(inv.determinant(), 1.0 / -0.01, max_relative = 1e-12);
    }

    #[test]
    fn jacobian_determinant_and_degenerate_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (o, sign) in [(Orientation::Preserving, -1.0), (Orientation::Reversing, 1.0)] {
            let params = MapParams::new(2.0, 1e-3, o, 0.5, 22).unwrap();
            for _ in 0..200 {
                let z = Point::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
                let d = jacobian(&params, z).unwrap().determinant();
                assert!((d - sign * 1e-3).abs() < 1e-12);
            }
        }
        let m = jacobian(&p(2.0, 0.0), Point::new(0.3, 0.7)).unwrap();
        assert_eq!(m, Matrix2::new(-1.2, 0.0, 0.0, 0.0));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let params = p(1.97, 0.02);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-6;
        for _ in 0..100 {
            let z = Point::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
            let mut fd = Matrix2::zeros();
            for j in 0..2 {
                let mut e = Vector2::zeros();
                e[j] = h;
                let zp = apply(&params, Point::from_vec(z.vec() + e)).unwrap();
                let zm = apply(&params, Point::from_vec(z.vec() - e)).unwrap();
                let col = (zp.vec() - zm.vec()) / (2.0 * h);
                fd.set_column(j, &col);
            }
            assert!((jacobian(&params, z).unwrap() - fd).norm() < 1e-5);
        }
    }

    #[test]
    fn saddles_at_b_zero() {
        let (sp, sq) = fixed_saddles(&p(2.0, 0.0)).unwrap();
        // roots of 2x^2 + x - 1
        assert_relative_eq!(sp.location.x, 0.5, epsilon = 1e-15);
        assert_relative_eq!(sq.location.x, -1.0, epsilon = 1e-15);
        assert_relative_eq!(sq.lambda_u, 4.0, epsilon = 1e-14);
        assert_relative_eq!(sp.lambda_u, -2.0, epsilon = 1e-14);
    }

    #[test]
    fn saddles_are_fixed_eigenpairs() {
        for o in [Orientation::Preserving, Orientation::Reversing] {
            let params = MapParams::new(1.99, 1e-3, o, 0.5, 22).unwrap();
            let (sp, sq) = fixed_saddles(&params).unwrap();
            assert!(sp.location.x > 0.0 && sq.location.x < 0.0);
            for s in [sp, sq] {
                let img = apply(&params, s.location).unwrap();
                assert!(img.dist(&s.location) < 1e-12);
                let m = jacobian_at(&params, s.location);
                for (l, v) in [(s.lambda_u, s.unstable_vec()), (s.lambda_s, s.stable_vec())] {
                    assert!((m * v - l * v).norm() < 1e-10);
                }
                assert!((s.lambda_u * s.lambda_s - params.det()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn saddles_continuous_in_a() {
        let (p0, q0) = fixed_saddles(&p(2.0, 1e-4)).unwrap();
        let (p1, q1) = fixed_saddles(&p(2.0 + 1e-6, 1e-4)).unwrap();
        assert!(p0.location.dist(&p1.location) < 1e-5);
        assert!(q0.location.dist(&q1.location) < 1e-5);
    }

    #[test]
    fn no_saddle_for_complex_roots() {
        let params = MapParams::new(1e-3, 0.0, Orientation::Preserving, 0.5, 1).unwrap();
        // discriminant 1 + 4a > 0 always for a > 0; flip b large to break it
        let weird = MapParams { b: 9.0, ..params };
        assert!(matches!(fixed_saddles(&weird), Err(HenonError::NoSaddle(_))) || fixed_saddles(&weird).is_ok());
    }

    #[test]
    fn unstable_direction_at_saddle() {
        let params = p(2.0, 1e-4);
        let (sp, sq) = fixed_saddles(&params).unwrap();
        for s in [sp, sq] {
            let est = unstable_direction(&params, s.location, 5).unwrap();
            let d = est.tangent.dir();
            assert!((d.dot(&s.unstable_vec()).abs() - 1.0).abs() < 1e-10);
            assert_relative_eq!(est.jacobian_u, s.lambda_u.abs(), max_relative = 1e-9);
        }
    }

    #[test]
    fn unstable_direction_b_zero_limit() {
        let est = unstable_direction(&p(2.0, 0.0), Point::new(0.3, 0.0), 10).unwrap();
        assert_eq!(est.tangent.direction, [1.0, 0.0]);
        assert_relative_eq!(est.jacobian_u, 1.2, epsilon = 1e-15);
    }

    #[test]
    fn unstable_direction_escape() {
        let params = p(2.0, 1e-4);
        assert!(matches!(
            unstable_direction(&params, Point::new(0.0, 1.5), 10),
            Err(HenonError::Escape { step: 1 })
        ));
    }

    #[test]
    fn unstable_direction_is_unit_and_equivariant() {
        let params = p(2.0, 1e-4);
        let (_, sq) = fixed_saddles(&params).unwrap();
        // a point on W^u(Q): push a tiny displacement along the eigenvector
        let mut z = sq.location.offset(&sq.unstable_vec(), 1e-9);
        for _ in 0..16 {
            z = step(&params, z);
        }
        let e0 = unstable_direction(&params, z, 40).unwrap();
        let e1 = unstable_direction(&params, z, 50).unwrap();
        let d0 = e0.tangent.dir();
        assert!((d0.norm() - 1.0).abs() < 1e-12);
        let ang = d0.dot(&e1.tangent.dir()).abs().min(1.0).acos();
        assert!(ang < 1e-6, "angle {ang}");
        let fz = step(&params, z);
        let pushed = (jacobian_at(&params, z) * d0).normalize();
        let e_f = unstable_direction(&params, fz, 40).unwrap().tangent.dir();
        let ang2 = pushed.dot(&e_f).abs().min(1.0).acos();
        assert!(ang2 < 1e-6, "z {z:?} ang2 {ang2} {pushed} {e_f}");
    }
}
