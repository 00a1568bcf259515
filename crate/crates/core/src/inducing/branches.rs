//! First-return branches on the tangency leaf, their counts and the
//! hyperbolicity audit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::fmt17;
use crate::error::{HenonError, Result};
use crate::henon::{jacobian_at, step, MapParams, Point};
use crate::inducing::alpha::{partition_curve, AlphaFamily, ThetaTower};
use crate::inducing::geometry::{bisect, Depth, Param, Side, Symbol, TangencyGeometry};
use crate::inducing::leaf::gauss5;

/// Sampling resolution for sets on the leaf.
pub const H_MIN: f64 = 1e-7;

/// Interval unions on the leaf, in `x`.
pub type Intervals = Vec<(f64, f64)>;

fn round_out(lo: f64, hi: f64) -> (f64, f64) {
    ((lo / H_MIN).floor() * H_MIN, (hi / H_MIN).ceil() * H_MIN)
}

/// Slow-recurrence sets `Omega_0 ⊃ Omega_1 ⊃ ...` on the tangency leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaSets {
    pub levels: Vec<Intervals>,
    /// Levels `n` whose `Theta_n` is below resolution, so nothing is removed.
    pub unresolved_from: Option<usize>,
    /// Samples of `Omega_0` whose first `n_max` iterates leave `R`.
    pub escaping_samples: usize,
}

impl OmegaSets {
    pub fn nested(&self) -> bool {
        self.levels.windows(2).all(|w| w[1].iter().all(|&(a, b)| w[0].iter().any(|&(c, d)| c <= a && b <= d)))
    }

    pub fn contains(&self, n: usize, lo: f64, hi: f64) -> bool {
        let level = &self.levels[n.min(self.levels.len() - 1)];
        level.iter().any(|&(a, b)| a <= lo && hi <= b)
    }
}

/// `Omega_0 = closure(leaf ∖ Theta_0)` and
/// `Omega_n = {z ∈ Omega_{n-1} : f^n z ∉ Theta_n}` for `n <= n_max`.
pub fn omega_sets(geo: &TangencyGeometry, tower: &ThetaTower, n_max: usize) -> OmegaSets {
    let core = tower.theta0();
    let mut levels = vec![vec![round_out(tower.theta.lo, core.lo), round_out(core.hi, tower.theta.hi)]];
    let mut unresolved_from = None;
    for n in 1..=n_max {
        let prev = levels[n - 1].clone();
        let next = match tower.levels.get(n) {
            Some(th) => remove_preimages(geo, &prev, n as u32, th.lo, th.hi),
            None => {
                unresolved_from.get_or_insert(n);
                prev
            }
        };
        levels.push(next);
    }
    let samples = 2048;
    let escaping_samples = levels[0]
        .iter()
        .flat_map(|&(lo, hi)| (0..=samples).map(move |i| lo + (hi - lo) * i as f64 / samples as f64))
        .filter(|&x| {
            let mut z = geo.leaf.point(x);
            (0..n_max.max(1)).any(|_| {
                z = step(&geo.params, z);
                !(z.x.abs() <= 1.5 && z.y.abs() <= 0.1)
            })
        })
        .count();
    OmegaSets { levels, unresolved_from, escaping_samples }
}

/// Remove from `set` the points whose `n`-th iterate lands in the leaf
/// window `[lo, hi]` of `Theta_n`, sampled at `H_MIN`.
fn remove_preimages(geo: &TangencyGeometry, set: &Intervals, n: u32, lo: f64, hi: f64) -> Intervals {
    let mut out = Vec::new();
    for &(a, b) in set {
        let m = ((b - a) / H_MIN).ceil() as usize;
        let hit = |i: usize| {
            let z = geo.iterate(geo.leaf.point(a + (b - a) * i as f64 / m as f64), n);
            geo.in_theta(z) && z.x >= lo && z.x <= hi
        };
        let mut start = None;
        for i in 0..=m {
            let x = a + (b - a) * i as f64 / m as f64;
            match (hit(i), start) {
                (false, None) => start = Some(x),
                (true, Some(s)) => {
                    out.push((s, x));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push((s, b));
        }
    }
    out
}

/// What a branch maps onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageTag {
    /// Back onto the tangency leaf.
    Leaf,
    /// Across `Theta` on a different unstable curve.
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnBranch {
    pub symbol: Symbol,
    pub tau: u32,
    /// Domain as arclength from the left end of `Theta` on the leaf.
    pub s_lo: f64,
    pub s_hi: f64,
    pub x_lo: f64,
    pub x_hi: f64,
    pub length: f64,
    pub image_length: f64,
    pub image_tag: ImageTag,
    /// Height of the image above the leaf at the marked point.
    pub image_offset: f64,
    /// Point of the domain where `|Df^tau|` equals its mean value.
    pub marked_x: f64,
    pub log_deriv_marked: f64,
    /// `log(L / length)`: the mean derivative after the image is carried back
    /// to the leaf along the stable curves. `L` is the length of `Theta` on
    /// the leaf.
    pub log_weight: f64,
    pub min_deriv: f64,
    pub max_deriv: f64,
    pub distortion: f64,
    /// Offset of the image endpoints from the stable sides of `Theta`,
    /// relative to the width of `Theta`.
    pub span_error: f64,
    /// Every sample has first return time `tau`.
    pub first_return: bool,
    /// An endpoint lies within `H_MIN` of `alpha_1^±`.
    pub boundary_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InducedSystem {
    pub params: MapParams,
    pub depth: u32,
    /// Length of `Theta` on the leaf.
    pub leaf_length: f64,
    /// `x`-extent of the part of `Theta` not covered by branches.
    pub core: (f64, f64),
    pub core_length: f64,
    pub branches: Vec<ReturnBranch>,
    /// `counts[n] = S(n)`.
    pub counts: Vec<usize>,
    /// The core still contains returns deeper than `depth`.
    pub truncated: bool,
    /// Deeper levels of the recursion lie below numerical resolution.
    pub resolution_limited: bool,
    /// Every branch domain lies in `Omega_tau`.
    pub omega_consistent: bool,
}

pub fn counts_of(branches: &[ReturnBranch], depth: u32) -> Vec<usize> {
    let mut counts = vec![0; depth as usize + 1];
    for b in branches {
        if (b.tau as usize) < counts.len() {
            counts[b.tau as usize] += 1;
        }
    }
    counts
}

impl InducedSystem {
    pub fn taus(&self) -> Vec<u32> {
        self.branches.iter().map(|b| b.tau).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.branches.iter().map(|b| b.log_weight).collect()
    }

    /// Branches with `tau <= cutoff`.
    pub fn truncate(&self, cutoff: u32) -> InducedSystem {
        let branches: Vec<ReturnBranch> = self.branches.iter().filter(|b| b.tau <= cutoff).cloned().collect();
        let depth = self.depth.min(cutoff);
        InducedSystem { counts: counts_of(&branches, depth), branches, depth, truncated: true, ..self.clone() }
    }

    pub fn disjoint(&self) -> bool {
        let mut d: Vec<(f64, f64)> = self.branches.iter().map(|b| (b.s_lo, b.s_hi)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0));
        d.iter().all(|&(a, b)| a < b) && d.windows(2).all(|w| w[0].1 <= w[1].0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `n,S(n)` table.
    pub fn counts_csv(&self) -> String {
        let mut out = String::from("n,count\n");
        for (n, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{n},{c}\n"));
        }
        out
    }

    /// Branch table with the columns of the JSON export.
    pub fn branches_csv(&self) -> String {
        let mut out = String::from("tau,side,s_lo,s_hi,min_deriv,max_deriv,distortion,log_weight\n");
        for b in &self.branches {
            let side = match b.symbol.side {
                Side::Left => "left",
                Side::Center => "center",
                Side::Right => "right",
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                b.tau,
                side,
                fmt17(b.s_lo),
                fmt17(b.s_hi),
                fmt17(b.min_deriv),
                fmt17(b.max_deriv),
                fmt17(b.distortion),
                fmt17(b.log_weight)
            ));
        }
        out
    }
}

const DERIV_SAMPLES: usize = 33;
const PANELS: usize = 16;

/// `int_lo^hi |Df^n c'(s)| ds`.
pub fn image_length(geo: &TangencyGeometry, c: &dyn Param, lo: f64, hi: f64, n: u32) -> f64 {
    let h = (hi - lo) / PANELS as f64;
    (0..PANELS)
        .map(|i| {
            let a = lo + i as f64 * h;
            gauss5(|s| geo.log_deriv(c, s, n).0.exp() * c.tangent(s).norm(), a, a + h)
        })
        .sum()
}

fn sample_points(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    (0..m).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / m as f64).collect()
}

fn realize(geo: &TangencyGeometry, symbol: Symbol, lo: f64, hi: f64, leaf_len: f64) -> ReturnBranch {
    let leaf = &geo.leaf;
    let tau = symbol.n;
    let length = leaf.arclength(lo, hi);
    let image_length = image_length(geo, leaf, lo, hi, tau);
    let xs = sample_points(lo, hi, DERIV_SAMPLES);
    let logs: Vec<f64> = xs.iter().map(|&x| geo.log_deriv(leaf, x, tau).0).collect();
    let (lmin, lmax) = logs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let target = (image_length / length).ln();
    let marked_x = xs
        .windows(2)
        .zip(logs.windows(2))
        .find(|(_, l)| (l[0] - target) * (l[1] - target) <= 0.0)
        .map(|(x, l)| {
            let below = l[0] <= target;
            bisect(|s| (geo.log_deriv(leaf, s, tau).0 <= target) == below, x[0], x[1])
        })
        .unwrap_or(xs[DERIV_SAMPLES / 2]);
    let log_deriv_marked = geo.log_deriv(leaf, marked_x, tau).0;
    let zm = geo.iterate(leaf.point(marked_x), tau);
    let image_offset = zm.y - leaf.y(zm.x.clamp(leaf.x_min, leaf.x_max));
    let image_tag = if image_offset.abs() < 1e-9 { ImageTag::Leaf } else { ImageTag::Other };
    let ends = [geo.iterate(leaf.point(lo), tau), geo.iterate(leaf.point(hi), tau)];
    let span_error = ends
        .iter()
        .map(|&w| geo.side_p(w).abs().min(geo.side_p(step(&geo.params, w)).abs() / 2.0))
        .fold(0.0, f64::max)
        / leaf_len;
    let first_return = xs.iter().step_by(4).all(|&x| geo.depth_at(leaf, x, 0, tau + 1) == Depth::Return(tau));
    let boundary_flag = [lo, hi].iter().any(|&x| (x - geo.theta_lo).abs() < H_MIN || (x - geo.theta_hi).abs() < H_MIN);
    ReturnBranch {
        symbol,
        tau,
        s_lo: leaf.arclength(geo.theta_lo, lo),
        s_hi: leaf.arclength(geo.theta_lo, hi),
        x_lo: lo,
        x_hi: hi,
        length,
        image_length,
        image_tag,
        image_offset,
        marked_x,
        log_deriv_marked,
        log_weight: (leaf_len / length).ln(),
        min_deriv: lmin.exp(),
        max_deriv: lmax.exp(),
        distortion: lmax - lmin,
        span_error,
        first_return,
        boundary_flag,
    }
}

/// The elements of the initial partition of `Omega_0` with return time at
/// most `min(N, depth)`. Deeper returns sit in the core `Theta_0`; their
/// recursion needs `Theta_k` for `k >= 1`, which is reported through the
/// `resolution_limited` flag when it is not resolved.
pub fn first_return_branches(
    geo: &TangencyGeometry,
    alpha: &AlphaFamily,
    tower: &ThetaTower,
    omega: &OmegaSets,
    depth: u32,
) -> Result<InducedSystem> {
    if depth < 2 {
        return Err(HenonError::InvalidInput(format!("branch depth must be at least 2, got {depth}")));
    }
    let part = partition_curve(geo, alpha, &geo.leaf, geo.leaf.x_min, geo.leaf.x_max)?;
    let max_tau = depth.min(tower.n_cap);
    if (part.minus.len() as u32) < max_tau {
        return Err(HenonError::Depth { requested: max_tau as usize, available: part.minus.len() });
    }
    let leaf_len = geo.leaf.arclength(geo.theta_lo, geo.theta_hi);
    let pieces: Vec<_> = part.pieces.iter().filter(|p| p.side != Side::Center && p.n <= max_tau).collect();
    let branches: Vec<ReturnBranch> = pieces
        .par_iter()
        .map(|p| realize(geo, Symbol { n: p.n, side: p.side }, p.lo, p.hi, leaf_len))
        .collect();
    let k = max_tau as usize - 1;
    let core = (part.minus[k], part.plus[k]);
    let omega_consistent = branches.iter().all(|b| omega.contains(b.tau as usize, b.x_lo, b.x_hi));
    Ok(InducedSystem {
        params: geo.params,
        depth,
        leaf_length: leaf_len,
        core,
        core_length: geo.leaf.arclength(core.0, core.1),
        counts: counts_of(&branches, depth),
        branches,
        truncated: true,
        resolution_limited: tower.levels.len() < 2,
        omega_consistent,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Census {
    /// `(n, S(n))` for `n <= depth`.
    pub counts: Vec<(u32, usize)>,
    /// `max (1/n) log S(n)` over `n in [n0, depth]` with `S(n) > 0`, and 0 if
    /// there is no such level.
    pub growth_rate: f64,
    pub n0: u32,
}

pub fn branch_census(sys: &InducedSystem, n0: u32) -> Census {
    let counts: Vec<(u32, usize)> = sys.counts.iter().enumerate().map(|(n, &c)| (n as u32, c)).collect();
    let growth_rate = counts
        .iter()
        .filter(|&&(n, c)| n >= n0.max(1) && c > 0)
        .map(|&(n, c)| (c as f64).ln() / n as f64)
        .fold(0.0, f64::max);
    Census { counts, growth_rate, n0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchAudit {
    pub tau: u32,
    pub side: Side,
    pub min_deriv: f64,
    pub max_deriv: f64,
    pub lower: f64,
    pub upper: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicityAudit {
    pub tolerance: f64,
    pub branches: Vec<BranchAudit>,
    /// Indices of branches outside the envelope.
    pub violations: Vec<usize>,
    /// Distortion constant at `samples` and at twice as many samples.
    pub c_dist: f64,
    pub c_dist_doubled: f64,
    /// `|Df^tau|` at the saddle over `|lambda_u|^tau` on the branch ending
    /// at it.
    pub saddle_ratio: f64,
    pub saddle_in_envelope: bool,
    /// Smallest `(1/i) log |D f^i|` over the last `i` steps of each branch
    /// orbit; positive means backward contraction along the leaf.
    pub backward_rate: f64,
    /// Fitted `C` in `|Df^tau|E^s| <= (C b)^{tau/2}`.
    pub stable_c: f64,
    /// Angle turned by `f^{n+1}` of the core, with `n = 0`.
    pub core_turning: f64,
}

fn distortion_constant(geo: &TangencyGeometry, sys: &InducedSystem, m: usize) -> f64 {
    sys.branches
        .par_iter()
        .map(|b| {
            let xs = sample_points(b.x_lo, b.x_hi, m);
            let data: Vec<(f64, Point)> = xs.iter().map(|&x| geo.log_deriv(&geo.leaf, x, b.tau)).collect();
            let mut c: f64 = 0.0;
            for i in 0..m {
                for j in i + 1..m {
                    let d = data[i].1.dist(&data[j].1);
                    if d > 0.0 {
                        c = c.max((data[i].0 - data[j].0).abs() / d);
                    }
                }
            }
            c
        })
        .reduce(|| 0.0, f64::max)
}

pub fn hyperbolicity_audit(geo: &TangencyGeometry, sys: &InducedSystem, samples_per_branch: usize) -> HyperbolicityAudit {
    let tolerance = 0.05;
    let (s1, s2) = (geo.params.sigma1(), geo.params.sigma2());
    let m = samples_per_branch.max(2);
    let branches: Vec<BranchAudit> = sys
        .branches
        .par_iter()
        .map(|b| {
            let logs: Vec<f64> = sample_points(b.x_lo, b.x_hi, m)
                .into_iter()
                .chain([b.x_lo, b.x_hi])
                .map(|x| geo.log_deriv(&geo.leaf, x, b.tau).0)
                .collect();
            let (lo, hi) = logs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, c), &v| (a.min(v), c.max(v)));
            let lower = s1.powi(b.tau as i32);
            let upper = s2.powi(b.tau as i32);
            let (dmin, dmax) = (lo.exp(), hi.exp());
            let pass = dmin >= lower * (1.0 - tolerance) && dmax <= upper * (1.0 + tolerance);
            BranchAudit { tau: b.tau, side: b.symbol.side, min_deriv: dmin, max_deriv: dmax, lower, upper, pass }
        })
        .collect();
    let violations = branches.iter().enumerate().filter(|(_, a)| !a.pass).map(|(i, _)| i).collect();
    let c_dist = distortion_constant(geo, sys, m);
    let c_dist_doubled = distortion_constant(geo, sys, 2 * m);

    let p = geo.saddle_p;
    let (saddle_ratio, saddle_in_envelope) = sys
        .branches
        .iter()
        .find(|b| (b.x_hi - geo.theta_hi).abs() < H_MIN)
        .map(|b| {
            let d = geo.log_deriv(&geo.leaf, geo.theta_hi, b.tau).0.exp();
            let lam = p.lambda_u.abs().powi(b.tau as i32);
            let inside = d >= s1.powi(b.tau as i32) && d <= s2.powi(b.tau as i32);
            (d / lam, inside)
        })
        .unwrap_or((f64::NAN, false));

    let mut backward_rate = f64::INFINITY;
    let mut stable_c: f64 = 0.0;
    for b in &sys.branches {
        let mut z = geo.leaf.point(b.marked_x);
        let mut v = geo.leaf.tangent(b.marked_x).normalize();
        let mut steps = Vec::with_capacity(b.tau as usize);
        let mut mat = nalgebra::Matrix2::identity();
        for _ in 0..b.tau {
            let j = jacobian_at(&geo.params, z);
            mat = j * mat;
            let w = j * v;
            steps.push(w.norm().ln());
            v = w.normalize();
            z = step(&geo.params, z);
        }
        let mut acc = 0.0;
        for (i, l) in steps.iter().rev().enumerate() {
            acc += l;
            backward_rate = backward_rate.min(acc / (i + 1) as f64);
        }
        // The product is far too ill-conditioned for a direct SVD; the small
        // singular value follows from the determinant `(±b)^tau`.
        let log_smin = b.tau as f64 * geo.params.b.ln() - mat.singular_values().max().ln();
        stable_c = stable_c.max((2.0 * log_smin / b.tau as f64).exp() / geo.params.b);
    }

    let core = sys.core;
    let t0 = jacobian_at(&geo.params, geo.leaf.point(core.0)) * geo.leaf.tangent(core.0);
    let t1 = jacobian_at(&geo.params, geo.leaf.point(core.1)) * geo.leaf.tangent(core.1);
    let core_turning = (t0.dot(&t1) / (t0.norm() * t1.norm())).clamp(-1.0, 1.0).acos();

    HyperbolicityAudit {
        tolerance,
        branches,
        violations,
        c_dist,
        c_dist_doubled,
        saddle_ratio,
        saddle_in_envelope,
        backward_rate,
        stable_c,
        core_turning,
    }
}
