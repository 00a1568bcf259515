//! Dimension estimates (box counting, the `E_k` ladder) and statistics of
//! equilibrium states (Lyapunov exponents, correlation decay, CLT).

use nalgebra::Vector2;
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::curve::{fmt17, Rect};
use crate::error::{HenonError, Result};
use crate::henon::{jacobian_at, step, MapParams, Point};
use crate::inducing::geometry::bisect;
use crate::inducing::{InducedSystem, TangencyGeometry};
use crate::thermo::{linear_fit, GibbsResult, ShiftData};

/// Points of a curve given by arclength position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSample {
    pub leaf: String,
    pub positions: Vec<f64>,
    pub range: (f64, f64),
    pub depth: usize,
}

impl SliceSample {
    pub fn new(leaf: &str, mut positions: Vec<f64>, range: (f64, f64), depth: usize) -> Result<Self> {
        if positions.iter().any(|p| !p.is_finite() || *p < range.0 || *p > range.1) {
            return Err(HenonError::InvalidInput("sample positions outside the curve's range".into()));
        }
        positions.sort_by(f64::total_cmp);
        Ok(SliceSample { leaf: leaf.to_string(), positions, range, depth })
    }

    /// Points spaced at most `spacing` apart over each interval.
    pub fn from_intervals(leaf: &str, intervals: &[(f64, f64)], spacing: f64, range: (f64, f64), depth: usize) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(HenonError::InvalidInput(format!("spacing {spacing} must be positive")));
        }
        let mut pts = Vec::new();
        for &(a, b) in intervals {
            let m = ((b - a) / spacing).ceil().max(1.0) as usize;
            pts.extend((0..=m).map(|i| a + (b - a) * i as f64 / m as f64));
        }
        SliceSample::new(leaf, pts, range, depth)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxFit {
    pub dimension: f64,
    pub r2: f64,
    /// `(delta, N(delta))`.
    pub counts: Vec<(f64, usize)>,
}

impl BoxFit {
    /// `log(1/delta),log N` table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("log_inv_delta,log_n\n");
        for &(d, n) in &self.counts {
            out.push_str(&format!("{},{}\n", fmt17(-d.ln()), fmt17((n as f64).ln())));
        }
        out
    }
}

/// `n` scales from `largest` down to `smallest`, geometrically spaced.
pub fn geometric_scales(largest: f64, smallest: f64, n: usize) -> Vec<f64> {
    let r = (smallest / largest).ln() / (n.max(2) - 1) as f64;
    (0..n.max(2)).map(|i| largest * (r * i as f64).exp()).collect()
}

/// Slope of `log N(delta)` against `log(1/delta)`.
pub fn box_dimension(sample: &SliceSample, scales: &[f64]) -> Result<BoxFit> {
    let (mn, mx) = scales.iter().fold((f64::INFINITY, 0.0_f64), |(a, b), &d| (a.min(d), b.max(d)));
    if scales.len() < 3 || !(mn > 0.0) || mx / mn < 100.0 {
        return Err(HenonError::InvalidInput(format!("box counting needs two decades of scales, got [{mn:e}, {mx:e}]")));
    }
    if sample.positions.len() < 2 {
        return Err(HenonError::InvalidInput("box counting needs at least two points".into()));
    }
    let origin = sample.range.0;
    let counts: Vec<(f64, usize)> = scales
        .iter()
        .map(|&d| {
            let mut n = 0;
            let mut last = i64::MIN;
            for &p in &sample.positions {
                let k = ((p - origin) / d).floor() as i64;
                if k != last {
                    n += 1;
                    last = k;
                }
            }
            (d, n)
        })
        .collect();
    let pts: Vec<(f64, f64)> = counts.iter().map(|&(d, n)| (-d.ln(), (n as f64).ln())).collect();
    let fit = linear_fit(&pts);
    Ok(BoxFit { dimension: fit.slope, r2: fit.r2, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderLevel {
    pub k: usize,
    /// Components as arclength intervals from the left end of `Theta`.
    pub components: Vec<(f64, f64)>,
    pub min_length: f64,
    pub max_length: f64,
    pub total_length: f64,
    /// `l(E_k \ E_{k+1}) / l(E_k)`; zero on the last level.
    pub removed_fraction: f64,
}

/// `E_0 = gamma^u(zeta_0)`, `E_k = closure(E_{k-1} \ f^{-k+1} Theta_0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CantorLadder {
    pub levels: Vec<LadderLevel>,
    pub theta0: Rect,
    pub diam_theta0: f64,
    pub nested: bool,
    /// Per level `1 / (max l(A) (2-eps)^k)` and `1 / (min l(A) (2+eps)^k)`.
    pub c_n_level: Vec<f64>,
    pub c_b_level: Vec<f64>,
    /// Constants valid for every level up to `k`: running minimum of
    /// `c_n_level` and running maximum of `c_b_level`.
    pub c_n: Vec<f64>,
    pub c_b: Vec<f64>,
    /// `removed_fraction / diam(Theta_0)` per level.
    pub removal_constant: Vec<f64>,
    pub rho: f64,
    /// `log rho / log(2 + eps)`.
    pub lower_bound: f64,
}

impl CantorLadder {
    /// Relative spread `(max - min) / max` over levels `k_lo..=k_hi` of the
    /// uniform constants `(C_N, C_b)`.
    pub fn constant_spread(&self, k_lo: usize, k_hi: usize) -> (f64, f64) {
        let spread = |v: &[f64]| {
            let s = &v[k_lo.min(v.len()) - 1..k_hi.min(v.len())];
            let (a, b) = s.iter().fold((f64::INFINITY, 0.0_f64), |(a, b), &x| (a.min(x), b.max(x)));
            (b - a) / b
        };
        (spread(&self.c_n), spread(&self.c_b))
    }
}

const LADDER_SAMPLES: usize = 48;

/// The critical rectangle: the `x`-extent of the core on the leaf times the
/// height of `R`.
pub fn theta0_rect(sys: &InducedSystem, y_extent: (f64, f64)) -> Rect {
    Rect::new(sys.core.0, sys.core.1, y_extent.0, y_extent.1)
}

/// Tangent of `f^n` along the leaf at `x` and the image point.
fn push_leaf(geo: &TangencyGeometry, x: f64, n: usize) -> (Point, Vector2<f64>) {
    let mut z = geo.leaf.point(x);
    let mut v = geo.leaf.tangent(x);
    for _ in 0..n {
        v = jacobian_at(&geo.params, z) * v;
        v /= v.norm();
        z = step(&geo.params, z);
    }
    (z, v)
}

/// Leaf sub-intervals of `[lo, hi]` whose `n`-th image lies in `rect`.
fn holes(geo: &TangencyGeometry, rect: &Rect, lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    let m = LADDER_SAMPLES;
    let xs: Vec<f64> = (0..=m).map(|i| lo + (hi - lo) * i as f64 / m as f64).collect();
    let dir: Vec<f64> = xs.iter().map(|&x| push_leaf(geo, x, n).1[0].signum()).collect();
    // monotone pieces of x o f^n
    let mut cuts = vec![lo];
    for i in 0..m {
        if dir[i] != dir[i + 1] {
            let s0 = dir[i];
            cuts.push(bisect(|x| push_leaf(geo, x, n).1[0].signum() == s0, xs[i], xs[i + 1]));
        }
    }
    cuts.push(hi);
    let img = |x: f64| push_leaf(geo, x, n).0;
    let inside = |x: f64| rect.contains(&img(x));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a >= b {
            continue;
        }
        let (za, zb) = (img(a).x, img(b).x);
        let rising = zb > za;
        let (xa, xb) = if rising { (za, zb) } else { (zb, za) };
        if xb < rect.x_min || xa > rect.x_max {
            continue;
        }
        // first point of the piece at or past the rectangle's near edge
        let before = |x: f64, edge: f64| if rising { img(x).x < edge } else { img(x).x > edge };
        let enter = if rising { rect.x_min } else { rect.x_max };
        let leave = if rising { rect.x_max } else { rect.x_min };
        let h_lo = if before(a, enter) { bisect(|x| before(x, enter), a, b) } else { a };
        let h_hi = if before(b, leave) { b } else { bisect(|x| !before(x, leave), b, a) };
        if h_lo < h_hi && inside(0.5 * (h_lo + h_hi)) {
            match out.last_mut() {
                Some(last) if last.1 >= h_lo => last.1 = last.1.max(h_hi),
                _ => out.push((h_lo, h_hi)),
            }
        }
    }
    out
}

fn subtract(component: (f64, f64), holes: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut start = component.0;
    for &(a, b) in holes {
        if a > start {
            out.push((start, a));
        }
        start = start.max(b);
    }
    if start < component.1 {
        out.push((start, component.1));
    }
    out
}

/// Builds `E_1..E_{k_max}` on the part of the leaf inside `Theta` by removing
/// the preimages of `theta0`.
pub fn ek_ladder(geo: &TangencyGeometry, theta0: &Rect, k_max: usize) -> Result<CantorLadder> {
    if k_max == 0 {
        return Err(HenonError::InvalidInput("k_max must be positive".into()));
    }
    let eps = geo.params.epsilon;
    let leaf = &geo.leaf;
    let to_arc = |c: &[(f64, f64)]| -> Vec<(f64, f64)> {
        c.iter().map(|&(a, b)| (leaf.arclength(geo.theta_lo, a), leaf.arclength(geo.theta_lo, b))).collect()
    };
    let mut comps = vec![(geo.theta_lo, geo.theta_hi)];
    let mut levels = Vec::with_capacity(k_max);
    let mut nested = true;
    for k in 1..=k_max {
        let next: Vec<(f64, f64)> = comps
            .par_iter()
            .flat_map_iter(|&c| {
                let h = holes(geo, theta0, c.0, c.1, k - 1);
                subtract(c, &h)
            })
            .collect();
        if next.is_empty() {
            return Err(HenonError::RefinementNeeded { step: k, detail: "every component was removed".into() });
        }
        nested &= next.iter().all(|&(a, b)| a < b && comps.iter().any(|&(c, d)| c <= a && b <= d));
        let arcs = to_arc(&next);
        let lens: Vec<f64> = arcs.iter().map(|(a, b)| b - a).collect();
        if lens.iter().any(|&l| !(l > 0.0)) {
            return Err(HenonError::RefinementNeeded { step: k, detail: "component below resolution".into() });
        }
        let total: f64 = lens.iter().sum();
        if let Some(prev) = levels.last_mut() {
            let p: &mut LadderLevel = prev;
            p.removed_fraction = (p.total_length - total) / p.total_length;
        }
        levels.push(LadderLevel {
            k,
            min_length: lens.iter().copied().fold(f64::INFINITY, f64::min),
            max_length: lens.iter().copied().fold(0.0, f64::max),
            total_length: total,
            components: arcs,
            removed_fraction: 0.0,
        });
        comps = next;
    }
    let diam_theta0 = theta0.width().hypot(theta0.height());
    let c_n_level: Vec<f64> = levels.iter().map(|l| 1.0 / (l.max_length * (2.0 - eps).powi(l.k as i32))).collect();
    let c_b_level: Vec<f64> = levels.iter().map(|l| 1.0 / (l.min_length * (2.0 + eps).powi(l.k as i32))).collect();
    let running = |v: &[f64], f: fn(f64, f64) -> f64| -> Vec<f64> {
        v.iter()
            .scan(f64::NAN, |acc, &x| {
                *acc = if acc.is_nan() { x } else { f(*acc, x) };
                Some(*acc)
            })
            .collect()
    };
    let c_n = running(&c_n_level, f64::min);
    let c_b = running(&c_b_level, f64::max);
    let removal_constant: Vec<f64> = levels.iter().map(|l| l.removed_fraction / diam_theta0).collect();
    let worst = levels.iter().map(|l| l.removed_fraction).fold(0.0, f64::max);
    let rho = (2.0 - eps) * (1.0 - worst);
    Ok(CantorLadder {
        levels,
        theta0: *theta0,
        diam_theta0,
        nested,
        c_n_level,
        c_b_level,
        c_n,
        c_b,
        removal_constant,
        rho,
        lower_bound: rho.ln() / (2.0 + eps).ln(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub lambda: f64,
    /// Standard error from batch means.
    pub error: f64,
    pub n: usize,
}

const BATCHES: usize = 20;

/// Birkhoff average of `log J^u` along the orbit of `z0`, after `burn_in`
/// steps that align the tangent vector with `E^u`.
pub fn lyapunov_u(params: &MapParams, z0: Point, n: usize, burn_in: usize) -> Result<LyapunovEstimate> {
    if n < BATCHES {
        return Err(HenonError::InvalidInput(format!("orbit length {n} below {BATCHES}")));
    }
    let mut z = z0;
    let mut v = Vector2::new(1.0, 0.0);
    let mut logs = Vec::with_capacity(n);
    for i in 0..burn_in + n {
        let w = jacobian_at(params, z) * v;
        let s = w.norm();
        v = w / s;
        z = step(params, z);
        if !z.in_box() {
            return Err(HenonError::Escape { step: i + 1 });
        }
        if i >= burn_in {
            logs.push(s.ln());
        }
    }
    Ok(batch_mean(&logs))
}

fn batch_mean(xs: &[f64]) -> LyapunovEstimate {
    let n = xs.len();
    let size = n / BATCHES;
    let means: Vec<f64> = (0..BATCHES).map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let lambda = xs.iter().sum::<f64>() / n as f64;
    let mb = means.iter().sum::<f64>() / BATCHES as f64;
    let var = means.iter().map(|m| (m - mb).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    LyapunovEstimate { lambda, error: (var / BATCHES as f64).sqrt(), n }
}

/// Orbit of the lifted measure: i.i.d. symbols drawn from the Gibbs weights,
/// each contributing the segment `z, f z, .., f^{tau-1} z` from the marked
/// point of its branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsOrbit {
    /// Branch indices in the induced system.
    pub symbols: Vec<usize>,
    pub points: Vec<Point>,
    /// `log |Df^tau|E^u|` at the marked point, per symbol drawn.
    pub segment_logs: Vec<f64>,
    pub seed: u64,
}

pub fn sample_gibbs_orbit(geo: &TangencyGeometry, sys: &InducedSystem, g: &GibbsResult, length: usize, seed: u64) -> Result<GibbsOrbit> {
    let dist = WeightedIndex::new(&g.weights).map_err(|e| HenonError::InvalidInput(format!("Gibbs weights: {e}")))?;
    let segments: Vec<(Vec<Point>, f64)> = g
        .symbols
        .par_iter()
        .map(|&i| {
            let b = &sys.branches[i];
            let mut z = geo.leaf.point(b.marked_x);
            let pts = (0..b.tau)
                .map(|_| {
                    let cur = z;
                    z = step(&geo.params, z);
                    cur
                })
                .collect();
            (pts, b.log_deriv_marked)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut symbols = Vec::new();
    let mut points = Vec::with_capacity(length + 64);
    let mut segment_logs = Vec::new();
    while points.len() < length {
        let k = dist.sample(&mut rng);
        symbols.push(g.symbols[k]);
        segment_logs.push(segments[k].1);
        points.extend_from_slice(&segments[k].0);
    }
    points.truncate(length);
    Ok(GibbsOrbit { symbols, points, segment_logs, seed })
}

impl GibbsOrbit {
    /// `sum log |Df^tau| / sum tau` over the drawn symbols.
    pub fn lyapunov(&self, sys: &InducedSystem) -> f64 {
        let taus: f64 = self.symbols.iter().map(|&i| sys.branches[i].tau as f64).sum();
        self.segment_logs.iter().sum::<f64>() / taus
    }
}

/// Observables shipped with the statistics stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    X,
    /// `|z - zeta_0|^{1/2}`, Hölder but not Lipschitz.
    SqrtDistance { x0: f64, y0: f64 },
    /// `psi o f - psi` with `psi = x`, read along the orbit.
    Coboundary,
}

impl Observable {
    pub fn holder_exponent(&self) -> f64 {
        match self {
            Observable::SqrtDistance { .. } => 0.5,
            _ => 1.0,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Observable::X => "x",
            Observable::SqrtDistance { .. } => "sqrt_distance",
            Observable::Coboundary => "coboundary",
        }
    }

    /// Values along `points`.
    pub fn series(&self, points: &[Point]) -> Vec<f64> {
        match *self {
            Observable::X => points.iter().map(|p| p.x).collect(),
            Observable::SqrtDistance { x0, y0 } => points.iter().map(|p| (p.x - x0).hypot(p.y - y0).sqrt()).collect(),
            Observable::Coboundary => points.windows(2).map(|w| w[1].x - w[0].x).collect(),
        }
    }
}

fn centered(series: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let c: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let var = c.iter().map(|x| x * x).sum::<f64>() / n;
    if !(var > 1e-300) {
        return Err(HenonError::Degenerate("observable has zero variance".into()));
    }
    Ok((c, var))
}

/// Autocorrelation and the fit `|ACF(n)| ~ A r^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfReport {
    pub lags: Vec<usize>,
    pub acf: Vec<f64>,
    pub amplitude: f64,
    pub rate: f64,
    /// Coefficient of determination of the fit on `|ACF|`.
    pub r2: f64,
    /// Standard error of `rate` from refitting on independent blocks.
    pub rate_error: f64,
}

impl AcfReport {
    /// `lag,acf` table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lag,acf\n");
        for (l, a) in self.lags.iter().zip(&self.acf) {
            out.push_str(&format!("{l},{}\n", fmt17(*a)));
        }
        out
    }
}

/// Centered autocorrelation normalized so that `ACF(0) = 1`.
pub fn autocorrelation(series: &[f64], lags: &[usize]) -> Result<Vec<f64>> {
    let (c, var) = centered(series)?;
    let n = c.len();
    Ok(lags
        .iter()
        .map(|&l| {
            if l == 0 {
                return 1.0;
            }
            let s: f64 = c[..n - l].iter().zip(&c[l..]).map(|(a, b)| a * b).sum();
            s / n as f64 / var
        })
        .collect())
}

/// Least squares fit of `A r^n` to `|acf|`: the best `r` on a fine grid,
/// refined by golden section, with `A` solved in closed form.
fn fit_exponential(lags: &[usize], acf: &[f64]) -> (f64, f64, f64) {
    let y: Vec<f64> = acf.iter().map(|a| a.abs()).collect();
    let sse = |r: f64| {
        let basis: Vec<f64> = lags.iter().map(|&l| r.powi(l as i32)).collect();
        let bb: f64 = basis.iter().map(|b| b * b).sum();
        let by: f64 = basis.iter().zip(&y).map(|(b, v)| b * v).sum();
        let a = if bb > 0.0 { by / bb } else { 0.0 };
        let e: f64 = basis.iter().zip(&y).map(|(b, v)| (v - a * b).powi(2)).sum();
        (e, a)
    };
    let grid = 1000;
    let best = (1..grid).map(|i| i as f64 / grid as f64).min_by(|a, b| sse(*a).0.total_cmp(&sse(*b).0)).unwrap();
    let (mut lo, mut hi) = ((best - 1.0 / grid as f64).max(0.0), (best + 1.0 / grid as f64).min(1.0));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let m1 = hi - phi * (hi - lo);
        let m2 = lo + phi * (hi - lo);
        if sse(m1).0 < sse(m2).0 {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let r = 0.5 * (lo + hi);
    let (e, a) = sse(r);
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    (a, r, if tot > 0.0 { 1.0 - e / tot } else { 1.0 })
}

const RATE_BLOCKS: usize = 8;

pub fn correlation_decay(series: &[f64], lags: &[usize]) -> Result<AcfReport> {
    let max_lag = lags.iter().copied().max().unwrap_or(0);
    if lags.is_empty() || series.len() < 100 * max_lag.max(1) {
        return Err(HenonError::InvalidInput(format!("orbit of length {} is shorter than 100 x max lag {max_lag}", series.len())));
    }
    let acf = autocorrelation(series, lags)?;
    let fit_lags: Vec<usize> = lags.iter().copied().filter(|&l| l > 0).collect();
    let fit_acf: Vec<f64> = lags.iter().zip(&acf).filter(|(l, _)| **l > 0).map(|(_, a)| *a).collect();
    let (amplitude, rate, r2) = fit_exponential(&fit_lags, &fit_acf);
    let size = series.len() / RATE_BLOCKS;
    let rates: Vec<f64> = (0..RATE_BLOCKS)
        .filter_map(|b| {
            let block = &series[b * size..(b + 1) * size];
            let a = autocorrelation(block, &fit_lags).ok()?;
            Some(fit_exponential(&fit_lags, &a).1)
        })
        .collect();
    let m = rates.iter().sum::<f64>() / rates.len() as f64;
    let var = rates.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (rates.len() as f64 - 1.0);
    // blocks are 1/RATE_BLOCKS of the orbit, so the full-orbit error is the
    // block spread over sqrt(RATE_BLOCKS)
    let rate_error = (var / rates.len() as f64).sqrt();
    Ok(AcfReport { lags: lags.to_vec(), acf, amplitude, rate, r2, rate_error })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub sample_size: usize,
    pub block_length: usize,
    pub ks_statistic: f64,
    pub p_value: f64,
    pub sigma: f64,
}

/// Asymptotic Kolmogorov distribution tail with the small-sample correction
/// of Stephens.
fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * (k as f64 * lambda).powi(2)).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Kolmogorov-Smirnov test of the normalized block sums `S / sqrt(n_block)`
/// against `N(0, sigma)` with `sigma` estimated from the same sums.
pub fn clt_test(series: &[f64], n_block: usize, n_samples: usize) -> Result<CltReport> {
    if n_block == 0 || n_samples < 2 || n_block * n_samples > series.len() {
        return Err(HenonError::InvalidInput(format!(
            "{n_samples} blocks of {n_block} exceed the orbit length {}",
            series.len()
        )));
    }
    let used = &series[..n_block * n_samples];
    let (c, _) = centered(used)?;
    let sums: Vec<f64> = c.chunks(n_block).map(|b| b.iter().sum::<f64>() / (n_block as f64).sqrt()).collect();
    let m = sums.iter().sum::<f64>() / n_samples as f64;
    let sigma = (sums.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (n_samples as f64 - 1.0)).sqrt();
    if !(sigma > 0.0) {
        return Err(HenonError::Degenerate("block sums have zero spread".into()));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| HenonError::Degenerate(e.to_string()))?;
    let mut sorted = sums.clone();
    sorted.sort_by(f64::total_cmp);
    let n = n_samples as f64;
    let d = sorted
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let f = normal.cdf(s);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    Ok(CltReport { sample_size: n_samples, block_length: n_block, ks_statistic: d, p_value: ks_p_value(d, n_samples), sigma })
}

/// `h(mu) / lambda^u(mu)` for the lift of `g`.
pub fn dimension_of_measure(g: &GibbsResult, data: &ShiftData) -> Result<f64> {
    let lambda = crate::thermo::lambda_u(data, g);
    if !(lambda > 0.0) {
        return Err(HenonError::InvalidInput(format!("lambda^u = {lambda} is not positive")));
    }
    Ok(g.entropy / g.mean_tau / lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thermo::gibbs_at;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Intervals of the `depth`-th stage of the Cantor set that keeps
    /// `[0, r]` and `[1 - r, 1]` of every interval.
    fn cantor(r: f64, depth: usize) -> Vec<(f64, f64)> {
        let mut iv = vec![(0.0, 1.0)];
        for _ in 0..depth {
            iv = iv.iter().flat_map(|&(a, b)| [(a, a + r * (b - a)), (b - r * (b - a), b)]).collect();
        }
        iv
    }

    fn cantor_dimension(r: f64, depth: usize, smallest: f64) -> f64 {
        let iv = cantor(r, depth);
        let s = SliceSample::from_intervals("cantor", &iv, r.powi(depth as i32), (0.0, 1.0), depth).unwrap();
        box_dimension(&s, &geometric_scales(0.1, smallest, 30)).unwrap().dimension
    }

    #[test]
    fn middle_thirds_cantor() {
        let d = cantor_dimension(1.0 / 3.0, 12, 1e-4);
        assert!((d - 2f64.ln() / 3f64.ln()).abs() < 0.03, "{d}");
    }

    #[test]
    fn middle_fifths_cantor() {
        let d = cantor_dimension(0.4, 12, 1e-4);
        assert!((d - 2f64.ln() / 2.5f64.ln()).abs() < 0.03, "{d}");
    }

    #[test]
    fn interval_has_dimension_one() {
        let s = SliceSample::from_intervals("unit", &[(0.0, 1.0)], 1e-5, (0.0, 1.0), 0).unwrap();
        let fit = box_dimension(&s, &geometric_scales(0.1, 1e-4, 20)).unwrap();
        assert!((fit.dimension - 1.0).abs() < 0.02, "{fit:?}");
    }

    #[test]
    fn box_counting_needs_two_decades() {
        let s = SliceSample::from_intervals("unit", &[(0.0, 1.0)], 1e-3, (0.0, 1.0), 0).unwrap();
        assert!(box_dimension(&s, &geometric_scales(0.1, 0.01, 10)).is_err());
        assert!(box_dimension(&s, &[0.1, 1e-4]).is_err());
        assert!(SliceSample::new("bad", vec![2.0], (0.0, 1.0), 0).is_err());
    }

    #[test]
    fn geometric_scales_hit_both_ends() {
        let s = geometric_scales(1.0, 1e-3, 4);
        assert_eq!(s.len(), 4);
        assert_relative_eq!(s[0], 1.0);
        assert_relative_eq!(s[3], 1e-3, epsilon = 1e-15);
        assert_relative_eq!(s[1], 0.1, epsilon = 1e-15);
    }

    #[test]
    fn logistic_boundary_lyapunov() {
        let p = MapParams::desk(2.0, 0.0).unwrap();
        let e = lyapunov_u(&p, Point::new(0.1234, 0.0), 1_000_000, 100).unwrap();
        assert!((e.lambda - 2f64.ln()).abs() < 0.01, "{e:?}");
    }

    #[test]
    fn escaping_orbit_is_reported() {
        let p = MapParams::desk(2.0, 0.0).unwrap().with_a(2.5);
        assert!(matches!(lyapunov_u(&p, Point::new(0.1, 0.0), 1000, 0), Err(HenonError::Escape { .. })));
    }

    fn ar1(rho: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = 0.0;
        (0..n)
            .map(|_| {
                x = rho * x + rng.gen_range(-1.0..1.0);
                x
            })
            .collect()
    }

    #[test]
    fn ar1_correlations_decay_at_rho() {
        let xs = ar1(0.6, 400_000, 3);
        let lags: Vec<usize> = (0..=20).collect();
        let rep = correlation_decay(&xs, &lags).unwrap();
        assert_eq!(rep.acf[0], 1.0);
        assert!((rep.acf[1] - 0.6).abs() < 0.01, "{:?}", rep.acf);
        assert!((rep.rate - 0.6).abs() < 0.02, "{rep:?}");
        assert!(rep.r2 > 0.95, "{rep:?}");
        assert!(correlation_decay(&xs[..1000], &lags).is_err());
    }

    #[test]
    fn iid_block_sums_pass_ks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..64 * 500).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = clt_test(&xs, 64, 500).unwrap();
        assert!(r.p_value > 0.01, "{r:?}");
        // variance of U(-1, 1) is 1/3
        assert!((r.sigma - (1.0f64 / 3.0).sqrt()).abs() < 0.05, "{r:?}");
        assert!(clt_test(&xs, 64, 501).is_err());
    }

    #[test]
    fn kolmogorov_tail_values() {
        assert_eq!(ks_p_value(0.0, 100), 1.0);
        // the 5% point of the Kolmogorov distribution is 1.3581
        let n = 1_000_000;
        assert!((ks_p_value(1.3581 / (n as f64).sqrt(), n) - 0.05).abs() < 1e-3);
    }

    #[test]
    fn coboundary_block_sums_shrink() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Point> = (0..300_000).map(|_| Point::new(rng.gen_range(-1.0..1.0), 0.0)).collect();
        let cb = Observable::Coboundary.series(&pts);
        let s16 = clt_test(&cb, 16, 500).unwrap().sigma;
        let s256 = clt_test(&cb, 256, 500).unwrap().sigma;
        assert!(s256 < 0.5 * s16, "{s16} {s256}");
    }

    #[test]
    fn observables_and_tags() {
        let pts = [Point::new(0.0, 0.0), Point::new(3.0, 4.0)];
        assert_eq!(Observable::X.series(&pts), vec![0.0, 3.0]);
        assert_eq!(Observable::SqrtDistance { x0: 0.0, y0: 0.0 }.series(&pts), vec![0.0, 5f64.sqrt()]);
        assert_eq!(Observable::Coboundary.series(&pts), vec![3.0]);
        assert_eq!(Observable::SqrtDistance { x0: 0.0, y0: 0.0 }.holder_exponent(), 0.5);
        assert_eq!(Observable::Coboundary.tag(), "coboundary");
    }

    #[test]
    fn tiling_measure_at_t_one_has_full_dimension() {
        let length = vec![0.5, 0.25, 0.125, 0.125];
        let data = ShiftData {
            tau: vec![2, 3, 4, 5],
            log_jac: length.iter().map(|l: &f64| -l.ln()).collect(),
            length,
            growth_rate: 0.0,
            sigma1: 1.5,
            sigma2: 4.5,
        };
        let (_, g) = gibbs_at(&data, 1.0, &[5]).unwrap();
        assert_relative_eq!(dimension_of_measure(&g, &data).unwrap(), 1.0, epsilon = 1e-9);
        let (_, g0) = gibbs_at(&data, 0.0, &[5]).unwrap();
        assert!(dimension_of_measure(&g0, &data).unwrap() < 1.0);
    }
}
