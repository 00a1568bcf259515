//! Thermodynamic formalism on the induced full shift: Gurevich pressure and
//! Gibbs measures of truncations, Abramov/Kac lifting, the pressure curve
//! `P(t)` of `phi_t = -t log J^u`, its root `t^u` and the interval
//! `(t_-, t_+)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::fmt17;
use crate::error::{HenonError, Result};
use crate::inducing::{InducedSystem, Param, TangencyGeometry};

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Potential on a full shift: `base[i]` on the cylinder `[i]`, plus an
/// optional correction `pair[i][j]` on `[i j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolPotential {
    pub base: Vec<f64>,
    pub tau: Vec<u32>,
    pub pair: Option<Vec<Vec<f64>>>,
}

impl SymbolPotential {
    pub fn new(base: Vec<f64>, tau: Vec<u32>) -> Result<Self> {
        if base.len() != tau.len() {
            return Err(HenonError::InvalidInput(format!("{} values for {} return times", base.len(), tau.len())));
        }
        if base.iter().any(|v| !v.is_finite()) || tau.contains(&0) {
            return Err(HenonError::InvalidInput("potential values must be finite and return times positive".into()));
        }
        Ok(SymbolPotential { base, tau, pair: None })
    }

    pub fn with_pairs(mut self, pair: Vec<Vec<f64>>) -> Result<Self> {
        let k = self.base.len();
        if pair.len() != k || pair.iter().any(|r| r.len() != k || r.iter().any(|v| !v.is_finite())) {
            return Err(HenonError::InvalidInput(format!("pair corrections must be a finite {k}x{k} table")));
        }
        self.pair = Some(pair);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    /// Value on `[i j]`.
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.base[i] + self.pair.as_ref().map_or(0.0, |p| p[i][j])
    }

    /// `Phi - c tau`.
    pub fn shifted(&self, c: f64) -> SymbolPotential {
        let base = self.base.iter().zip(&self.tau).map(|(v, &t)| v - c * t as f64).collect();
        SymbolPotential { base, tau: self.tau.clone(), pair: self.pair.clone() }
    }

    fn restrict(&self, symbols: &[usize]) -> SymbolPotential {
        SymbolPotential {
            base: symbols.iter().map(|&i| self.base[i]).collect(),
            tau: symbols.iter().map(|&i| self.tau[i]).collect(),
            pair: self.pair.as_ref().map(|p| symbols.iter().map(|&i| symbols.iter().map(|&j| p[i][j]).collect()).collect()),
        }
    }
}

/// Finite full shift on a subset of the alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedShift {
    /// Indices into the full alphabet.
    pub symbols: Vec<usize>,
    pub potential: SymbolPotential,
}

impl TruncatedShift {
    /// Symbols with `tau <= cutoff` (all symbols for `None`).
    pub fn new(potential: &SymbolPotential, cutoff: Option<u32>) -> Result<Self> {
        let symbols: Vec<usize> = (0..potential.len()).filter(|&i| cutoff.map_or(true, |c| potential.tau[i] <= c)).collect();
        if symbols.is_empty() {
            return Err(HenonError::InvalidInput(format!("no symbol with return time <= {cutoff:?}")));
        }
        Ok(TruncatedShift { potential: potential.restrict(&symbols), symbols })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Log of the leading eigenvalue of the transfer matrix. For a depth-1
    /// potential this is `log sum exp(Phi_i)`.
    pub fn pressure(&self) -> f64 {
        match self.potential.pair {
            None => log_sum_exp(self.potential.base.iter().copied()),
            Some(_) => self.perron().map(|e| e.log_lambda).unwrap_or(f64::NAN),
        }
    }

    /// `A_ij = exp(Phi(i j) - m)` together with the shift `m`.
    fn matrix(&self) -> (Vec<Vec<f64>>, f64) {
        let k = self.len();
        let p = &self.potential;
        let m = (0..k).flat_map(|i| (0..k).map(move |j| p.value(i, j))).fold(f64::NEG_INFINITY, f64::max);
        ((0..k).map(|i| (0..k).map(|j| (p.value(i, j) - m).exp()).collect()).collect(), m)
    }

    fn perron(&self) -> Result<Perron> {
        let (a, m) = self.matrix();
        let k = a.len();
        let mut h = vec![1.0 / k as f64; k];
        let mut l = vec![1.0 / k as f64; k];
        let mut lambda = 0.0;
        for it in 1..=MAX_POWER_ITER {
            let mut h2: Vec<f64> = (0..k).map(|i| (0..k).map(|j| a[i][j] * h[j]).sum()).collect();
            let mut l2: Vec<f64> = (0..k).map(|j| (0..k).map(|i| l[i] * a[i][j]).sum()).collect();
            let nh: f64 = h2.iter().sum();
            let nl: f64 = l2.iter().sum();
            h2.iter_mut().for_each(|v| *v /= nh);
            l2.iter_mut().for_each(|v| *v /= nl);
            let dh = h.iter().zip(&h2).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            let dl = l.iter().zip(&l2).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            h = h2;
            l = l2;
            let new_lambda = nh;
            if it > 1 && dh < POWER_TOL && dl < POWER_TOL && (new_lambda - lambda).abs() <= POWER_TOL * new_lambda {
                return Ok(Perron { a, h, l, log_lambda: new_lambda.ln() + m, iterations: it });
            }
            lambda = new_lambda;
        }
        Err(HenonError::NoConvergence { iterations: MAX_POWER_ITER, detail: "transfer operator power iteration".into() })
    }
}

const MAX_POWER_ITER: usize = 10_000;
const POWER_TOL: f64 = 1e-15;

struct Perron {
    a: Vec<Vec<f64>>,
    h: Vec<f64>,
    l: Vec<f64>,
    log_lambda: f64,
    iterations: usize,
}

/// `(1/n) log Z_n` for `n = 1..n_max`, where `Z_n` sums `exp(S_n Phi)` over
/// the periodic points of period `n`, and its limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GurevichTrace {
    pub values: Vec<(usize, f64)>,
    pub limit: f64,
}

pub fn gurevich_pressure(shift: &TruncatedShift, n_max: usize) -> Result<GurevichTrace> {
    if shift.is_empty() {
        return Err(HenonError::InvalidInput("empty alphabet".into()));
    }
    if n_max < 2 {
        return Err(HenonError::InvalidInput(format!("n_max = {n_max} < 2")));
    }
    let (a, m) = shift.matrix();
    let k = a.len();
    // power = A^n / exp(log_scale)
    let mut power = a.clone();
    let mut log_scale = 0.0;
    let mut log_z = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        if n > 1 {
            power = (0..k).map(|i| (0..k).map(|j| (0..k).map(|r| power[i][r] * a[r][j]).sum()).collect()).collect();
        }
        let s = power.iter().flatten().fold(0.0_f64, |acc, v| acc.max(*v));
        power.iter_mut().flatten().for_each(|v| *v /= s);
        log_scale += s.ln();
        let tr: f64 = (0..k).map(|i| power[i][i]).sum();
        log_z.push(tr.ln() + log_scale + n as f64 * m);
    }
    let values: Vec<(usize, f64)> = log_z.iter().enumerate().map(|(i, z)| (i + 1, z / (i + 1) as f64)).collect();
    let limit = log_z[n_max - 1] - log_z[n_max - 2];
    Ok(GurevichTrace { values, limit })
}

/// Equilibrium state of a truncated shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsResult {
    pub symbols: Vec<usize>,
    /// `nu([i])`.
    pub weights: Vec<f64>,
    /// Transition probabilities of the Markov measure.
    pub transition: Vec<Vec<f64>>,
    pub pressure: f64,
    /// Largest ratio between `nu([w])` and `exp(-nP + S_n Phi)` over
    /// cylinders of length up to 3.
    pub gibbs_constant: f64,
    pub entropy: f64,
    pub mean_tau: f64,
    /// `nu(Phi)`.
    pub integral: f64,
    pub iterations: usize,
}

pub fn gibbs_truncated(shift: &TruncatedShift) -> Result<GibbsResult> {
    let e = shift.perron()?;
    let k = shift.len();
    let lambda = (e.log_lambda - shift.matrix().1).exp();
    let mut weights: Vec<f64> = (0..k).map(|i| e.l[i] * e.h[i]).collect();
    let z: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= z);
    let transition: Vec<Vec<f64>> =
        (0..k).map(|i| (0..k).map(|j| e.a[i][j] * e.h[j] / (lambda * e.h[i])).collect()).collect();
    let p = &shift.potential;
    let mut entropy = 0.0;
    let mut integral = 0.0;
    for i in 0..k {
        for j in 0..k {
            let q = transition[i][j];
            if q > 0.0 {
                entropy -= weights[i] * q * q.ln();
            }
            integral += weights[i] * q * p.value(i, j);
        }
    }
    let mean_tau = weights.iter().zip(&p.tau).map(|(w, &t)| w * t as f64).sum();
    let gibbs_constant = gibbs_constant(p, &weights, &transition, e.log_lambda);
    Ok(GibbsResult {
        symbols: shift.symbols.clone(),
        weights,
        transition,
        pressure: e.log_lambda,
        gibbs_constant,
        entropy,
        mean_tau,
        integral,
        iterations: e.iterations,
    })
}

const GIBBS_DEPTH: usize = 3;

fn gibbs_constant(p: &SymbolPotential, weights: &[f64], transition: &[Vec<f64>], pressure: f64) -> f64 {
    let k = weights.len();
    let mut worst = 1.0_f64;
    // (last symbol, log nu([w]), S_{n-1} Phi along w) for words of length n
    let mut words: Vec<(usize, f64, f64)> = (0..k).map(|i| (i, weights[i].ln(), 0.0)).collect();
    for n in 1..=GIBBS_DEPTH {
        for &(last, log_mass, sum) in &words {
            let (lo, hi) = (0..k)
                .map(|j| sum + p.value(last, j))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            let base = log_mass + n as f64 * pressure;
            worst = worst.max((base - lo).exp()).max((hi - base).exp());
        }
        if n < GIBBS_DEPTH {
            words = words
                .iter()
                .flat_map(|&(last, log_mass, sum)| {
                    (0..k).map(move |j| (j, log_mass + transition[last][j].ln(), sum + p.value(last, j)))
                })
                .collect();
        }
    }
    worst
}

/// Entropy and integral of the lifted measure `L(nu)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftedStats {
    pub entropy_lifted: f64,
    pub integral_lifted: f64,
    pub mean_tau: f64,
    /// `h(L(nu)) + L(nu)(phi)`.
    pub free_energy: f64,
}

/// Abramov and Kac: `h(L nu) = h_nu / nu(tau)`, `L nu(phi) = nu(phi_bar) /
/// nu(tau)`, with `phi_bar` given as an induced potential on the shift's
/// alphabet.
pub fn lift_stats(g: &GibbsResult, phi_bar: &SymbolPotential) -> Result<LiftedStats> {
    if !g.mean_tau.is_finite() || g.mean_tau <= 0.0 {
        return Err(HenonError::Tail(format!("mean return time {} is not finite and positive", g.mean_tau)));
    }
    let k = g.symbols.len();
    let phi = |i: usize, j: usize| phi_bar.value(g.symbols[i], g.symbols[j]);
    let integral: f64 = (0..k).map(|i| (0..k).map(|j| g.weights[i] * g.transition[i][j] * phi(i, j)).sum::<f64>()).sum();
    let entropy_lifted = g.entropy / g.mean_tau;
    let integral_lifted = integral / g.mean_tau;
    Ok(LiftedStats { entropy_lifted, integral_lifted, mean_tau: g.mean_tau, free_energy: entropy_lifted + integral_lifted })
}

/// Per-branch data of an induced system needed for the pressure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftData {
    pub tau: Vec<u32>,
    /// `log |DF|E^u|` per branch.
    pub log_jac: Vec<f64>,
    /// Arclength of each branch domain.
    pub length: Vec<f64>,
    /// `limsup (1/n) log S(n)` estimate.
    pub growth_rate: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl ShiftData {
    pub fn from_system(sys: &InducedSystem, growth_rate: f64) -> Self {
        ShiftData {
            tau: sys.taus(),
            log_jac: sys.weights(),
            length: sys.branches.iter().map(|b| b.length).collect(),
            growth_rate,
            sigma1: sys.params.sigma1(),
            sigma2: sys.params.sigma2(),
        }
    }

    /// `phi_bar_t = -t log |DF|E^u|`.
    pub fn potential(&self, t: f64) -> SymbolPotential {
        SymbolPotential { base: self.log_jac.iter().map(|w| -t * w).collect(), tau: self.tau.clone(), pair: None }
    }

    pub fn max_tau(&self) -> u32 {
        self.tau.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Convergent,
    Divergent,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub t: f64,
    pub c: f64,
    /// `(n, sum over tau = n of e^{cn} l(J)^t)`.
    pub level_sums: Vec<(u32, f64)>,
    pub partial_sums: Vec<f64>,
    pub verdict: Verdict,
    /// Fitted log-ratio of consecutive level sums over the last levels.
    pub log_ratio: f64,
    pub c0: f64,
}

const TAIL_LEVELS: usize = 10;

/// `c_0(t) = t log sigma - limsup (1/n) log S(n)`, with `sigma_1` for
/// `t >= 0` and `sigma_2` for `t < 0`.
pub fn c0(data: &ShiftData, t: f64) -> f64 {
    let sigma = if t >= 0.0 { data.sigma1 } else { data.sigma2 };
    t * sigma.ln() - data.growth_rate
}

/// Partial sums of `T_{t,c} = sum_J e^{c tau(J)} l(J)^t` by return time.
pub fn tail_sum(data: &ShiftData, t: f64, c: f64) -> TailReport {
    let max = data.max_tau();
    let mut level = vec![0.0; max as usize + 1];
    for (&tau, &l) in data.tau.iter().zip(&data.length) {
        level[tau as usize] += (c * tau as f64 + t * l.ln()).exp();
    }
    let level_sums: Vec<(u32, f64)> = (1..=max).filter(|&n| level[n as usize] > 0.0).map(|n| (n, level[n as usize])).collect();
    let partial_sums = level_sums
        .iter()
        .scan(0.0, |acc, &(_, s)| {
            *acc += s;
            Some(*acc)
        })
        .collect();
    let last = &level_sums[level_sums.len().saturating_sub(TAIL_LEVELS)..];
    let (verdict, log_ratio) = if last.len() < 3 {
        (Verdict::Inconclusive, f64::NAN)
    } else {
        let pts: Vec<(f64, f64)> = last.iter().map(|&(n, s)| (n as f64, s.ln())).collect();
        let slope = linear_fit(&pts).slope;
        let ratios: Vec<f64> = last.windows(2).map(|w| w[1].1 / w[0].1).collect();
        let v = if slope < 0.0 && ratios.iter().all(|&r| r < 1.0) {
            Verdict::Convergent
        } else if slope > 0.0 && ratios.iter().all(|&r| r > 1.0) {
            Verdict::Divergent
        } else {
            Verdict::Inconclusive
        };
        (v, slope)
    };
    TailReport { t, c, level_sums, partial_sums, verdict, log_ratio, c0: c0(data, t) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub r2: f64,
}

/// Least squares `y = intercept + slope x`.
pub fn linear_fit(pts: &[(f64, f64)]) -> LinearFit {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    LinearFit { intercept, slope, r2 }
}

pub const DEFAULT_CUTOFFS: [u32; 4] = [10, 15, 20, 25];

/// `P(t)` at one `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressurePoint {
    pub t: f64,
    pub value: f64,
    /// `(cutoff, root c)` per truncation.
    pub per_cutoff: Vec<(u32, f64)>,
    /// Whether the value extrapolates beyond the largest cutoff.
    pub extrapolated: bool,
    /// `|sum exp(Phi_t - P tau) - 1|` at the largest cutoff.
    pub residual: f64,
}

/// Root `c` of `P_G(Phi - c tau) = 0` on a finite shift with a depth-1
/// potential, i.e. `sum exp(Phi_i - c tau_i) = 1`.
fn shift_root(p: &SymbolPotential) -> f64 {
    let g = |c: f64| log_sum_exp(p.base.iter().zip(&p.tau).map(|(v, &t)| v - c * t as f64));
    let (mut lo, mut hi) = (-1.0, 1.0);
    while g(lo) <= 0.0 {
        lo *= 2.0;
    }
    while g(hi) >= 0.0 {
        hi *= 2.0;
    }
    crate::inducing::geometry::bisect(|c| g(c) > 0.0, lo, hi)
}

/// Solves `P_G(phi_bar_t - c tau) = 0` for `c` at each cutoff and
/// extrapolates `P_c = P_inf - A rho^c` over the last three cutoffs. When
/// the largest cutoff already holds every branch the alphabet is exhausted
/// and the full-alphabet value is returned.
pub fn pressure_at(data: &ShiftData, t: f64, cutoffs: &[u32]) -> Result<PressurePoint> {
    if t <= -1.0 {
        return Err(HenonError::InvalidInput(format!("t = {t} <= -1: equilibrium states need not be unique there")));
    }
    if cutoffs.is_empty() {
        return Err(HenonError::InvalidInput("empty cutoff schedule".into()));
    }
    let mut cutoffs = cutoffs.to_vec();
    cutoffs.sort_unstable();
    let pot = data.potential(t);
    let mut per_cutoff = Vec::with_capacity(cutoffs.len());
    for &c in &cutoffs {
        let shift = TruncatedShift::new(&pot, Some(c))?;
        per_cutoff.push((c, shift_root(&shift.potential)));
    }
    let &(last_cut, last) = per_cutoff.last().unwrap();
    let exhausted = data.max_tau() <= last_cut;
    let tail = tail_sum(data, t, -last);
    if !exhausted && tail.verdict == Verdict::Divergent {
        return Err(HenonError::Tail(format!(
            "T(t = {t}, c = {:.6}) grows by return time; c0(t) = {:.6}",
            -last, tail.c0
        )));
    }
    let mut value = last;
    let mut extrapolated = false;
    if !exhausted && per_cutoff.len() >= 3 {
        let n = per_cutoff.len();
        let (p1, p2, p3) = (per_cutoff[n - 3].1, per_cutoff[n - 2].1, per_cutoff[n - 1].1);
        let (d1, d2) = (p2 - p1, p3 - p2);
        let r = d2 / d1;
        if d1 != 0.0 && r > 0.0 && r < 1.0 {
            value = p3 + d2 * r / (1.0 - r);
            extrapolated = true;
        }
    }
    let shift = TruncatedShift::new(&pot, Some(last_cut))?;
    let residual = (log_sum_exp(shift.potential.shifted(last).base.into_iter()).exp() - 1.0).abs();
    Ok(PressurePoint { t, value, per_cutoff, extrapolated, residual })
}

/// Equilibrium state of `phi_bar_t - P(t) tau` on the largest truncation.
pub fn gibbs_at(data: &ShiftData, t: f64, cutoffs: &[u32]) -> Result<(PressurePoint, GibbsResult)> {
    let point = pressure_at(data, t, cutoffs)?;
    let cut = cutoffs.iter().copied().max().unwrap_or(u32::MAX);
    let c = point.per_cutoff.last().unwrap().1;
    let shift = TruncatedShift::new(&data.potential(t).shifted(c), Some(cut))?;
    Ok((point, gibbs_truncated(&shift)?))
}

/// Kac form `lambda^u = nu(log |DF|E^u|) / nu(tau)`.
pub fn lambda_u(data: &ShiftData, g: &GibbsResult) -> f64 {
    let num: f64 = g.symbols.iter().zip(&g.weights).map(|(&i, w)| w * data.log_jac[i]).sum();
    num / g.mean_tau
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Root {
    pub t_u: f64,
    pub bracket: (f64, f64),
    pub residual: f64,
    pub iterations: usize,
}

pub const ROOT_RESIDUAL: f64 = 1e-4;

/// Bisection for `P(t) = 0` on `bracket`.
pub fn t_u_root(data: &ShiftData, cutoffs: &[u32], bracket: (f64, f64)) -> Result<Root> {
    let p = |t: f64| pressure_at(data, t, cutoffs).map(|x| x.value);
    let (mut lo, mut hi) = bracket;
    let (p_lo, p_hi) = (p(lo)?, p(hi)?);
    if !(p_lo > 0.0 && p_hi < 0.0) {
        return Err(HenonError::Bracket { lo, hi, gap_lo: p_lo, gap_hi: p_hi });
    }
    let mut iterations = 0;
    loop {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi || hi - lo < 1e-15 {
            break;
        }
        iterations += 1;
        if p(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t_u = 0.5 * (lo + hi);
    let residual = p(t_u)?.abs();
    if residual > ROOT_RESIDUAL {
        return Err(HenonError::NoConvergence { iterations, detail: format!("|P(t^u)| = {residual:e}") });
    }
    Ok(Root { t_u, bracket: (lo, hi), residual, iterations })
}

/// `t_+ = t^u l / (l - log(2 - eps) + sqrt eps)`,
/// `t_- = t^u l / (l - log(4 + eps) - sqrt eps)`.
pub fn t_interval(t_u: f64, lambda: f64, eps: f64) -> Result<(f64, f64)> {
    if !(eps > 0.0) || !t_u.is_finite() || !lambda.is_finite() {
        return Err(HenonError::InvalidInput(format!("t^u = {t_u}, lambda = {lambda}, eps = {eps}")));
    }
    let dp = lambda - (2.0 - eps).ln() + eps.sqrt();
    let dm = lambda - (4.0 + eps).ln() - eps.sqrt();
    if dp.abs() < 1e-12 || dm.abs() < 1e-12 {
        return Err(HenonError::Degenerate(format!("vanishing denominator ({dp:e}, {dm:e})")));
    }
    Ok((t_u * lambda / dm, t_u * lambda / dp))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureCurve {
    pub samples: Vec<PressurePoint>,
    pub root: Option<Root>,
    pub lambda_u_at_root: Option<f64>,
    pub t_minus: Option<f64>,
    pub t_plus: Option<f64>,
    /// Smallest discrete second difference, `P(t+h) - 2P(t) + P(t-h)` on a
    /// uniform grid.
    pub min_second_difference: f64,
    pub decreasing: bool,
}

/// Samples `P` on `t_grid`, then locates `t^u` and `(t_-, t_+)` when `P(0) >
/// 0 > P(1)`.
pub fn pressure_curve(data: &ShiftData, t_grid: &[f64], cutoffs: &[u32], eps: f64) -> Result<PressureCurve> {
    let samples: Vec<PressurePoint> = t_grid.par_iter().map(|&t| pressure_at(data, t, cutoffs)).collect::<Result<_>>()?;
    let min_second_difference = samples
        .windows(3)
        .map(|w| {
            let (h1, h2) = (w[1].t - w[0].t, w[2].t - w[1].t);
            ((w[2].value - w[1].value) / h2 - (w[1].value - w[0].value) / h1) * 0.5 * (h1 + h2)
        })
        .fold(f64::INFINITY, f64::min);
    let decreasing = samples.windows(2).all(|w| w[1].t <= w[0].t || w[1].value < w[0].value);
    let (p0, p1) = (pressure_at(data, 0.0, cutoffs)?.value, pressure_at(data, 1.0, cutoffs)?.value);
    let mut curve =
        PressureCurve { samples, root: None, lambda_u_at_root: None, t_minus: None, t_plus: None, min_second_difference, decreasing };
    if p0 > 0.0 && p1 < 0.0 {
        let root = t_u_root(data, cutoffs, (0.0, 1.0))?;
        let (_, g) = gibbs_at(data, root.t_u, cutoffs)?;
        let lam = lambda_u(data, &g);
        let (tm, tp) = t_interval(root.t_u, lam, eps)?;
        curve.root = Some(root);
        curve.lambda_u_at_root = Some(lam);
        curve.t_minus = Some(tm);
        curve.t_plus = Some(tp);
    }
    Ok(curve)
}

impl PressureCurve {
    /// `t,P,residual` table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,P,residual\n");
        for s in &self.samples {
            out.push_str(&format!("{},{},{}\n", fmt17(s.t), fmt17(s.value), fmt17(s.residual)));
        }
        out
    }

    pub fn convex(&self) -> bool {
        self.min_second_difference >= -1e-8
    }
}

/// `(n, sum over tau = n of tau nu(J))` and the fitted log decay rate.
pub fn gibbs_tail(data: &ShiftData, g: &GibbsResult) -> (Vec<(u32, f64)>, f64) {
    let max = data.max_tau() as usize;
    let mut level = vec![0.0; max + 1];
    for (&i, w) in g.symbols.iter().zip(&g.weights) {
        level[data.tau[i] as usize] += data.tau[i] as f64 * w;
    }
    let sums: Vec<(u32, f64)> = (1..=max).filter(|&n| level[n] > 0.0).map(|n| (n as u32, level[n])).collect();
    let pts: Vec<(f64, f64)> = sums.iter().map(|&(n, s)| (n as f64, s.ln())).collect();
    let rate = if pts.len() >= 2 { linear_fit(&pts).slope } else { f64::NAN };
    (sums, rate)
}

/// One branch of the induced map in leaf coordinates: at leaf positions
/// `p` (arclength from the left end of `Theta`), `F` lands at `u` and
/// `log |F'| = phi`. The image position is the `Theta`-arclength fraction
/// carried back to the leaf along the stable curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchChart {
    pub p: Vec<f64>,
    pub u: Vec<f64>,
    pub phi: Vec<f64>,
}

const CHART_SAMPLES: usize = 1025;

impl BranchChart {
    pub fn new(p: Vec<f64>, u: Vec<f64>, phi: Vec<f64>) -> Result<Self> {
        let ok = p.len() >= 2
            && p.len() == u.len()
            && p.len() == phi.len()
            && p.windows(2).all(|w| w[0] < w[1])
            && (u.windows(2).all(|w| w[0] < w[1]) || u.windows(2).all(|w| w[0] > w[1]));
        if !ok {
            return Err(HenonError::InvalidInput("chart needs increasing p and monotone u of equal length".into()));
        }
        Ok(BranchChart { p, u, phi })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.p[0], *self.p.last().unwrap())
    }

    fn increasing(&self) -> bool {
        self.u[1] > self.u[0]
    }

    /// Leaf position mapped to `u`, clamped to the chart's image.
    fn preimage(&self, u: f64) -> f64 {
        let m = self.u.len();
        let key = |i: usize| if self.increasing() { self.u[i] } else { -self.u[i] };
        let target = if self.increasing() { u } else { -u };
        if target <= key(0) {
            return self.p[0];
        }
        if target >= key(m - 1) {
            return self.p[m - 1];
        }
        let (mut i, mut j) = (0, m - 1);
        while j - i > 1 {
            let mid = (i + j) / 2;
            if key(mid) <= target {
                i = mid;
            } else {
                j = mid;
            }
        }
        let w = (target - key(i)) / (key(i + 1) - key(i));
        self.p[i] + w * (self.p[i + 1] - self.p[i])
    }

    fn phi_at(&self, p: f64) -> f64 {
        let i = self.p.partition_point(|&x| x <= p).clamp(1, self.p.len() - 1) - 1;
        let w = ((p - self.p[i]) / (self.p[i + 1] - self.p[i])).clamp(0.0, 1.0);
        self.phi[i] + w * (self.phi[i + 1] - self.phi[i])
    }

    /// Oscillation of `phi` over `[lo, hi]`.
    fn oscillation(&self, lo: f64, hi: f64) -> f64 {
        let (a, b) = (self.phi_at(lo), self.phi_at(hi));
        let (mut mn, mut mx) = (a.min(b), a.max(b));
        let i0 = self.p.partition_point(|&x| x <= lo);
        let i1 = self.p.partition_point(|&x| x < hi);
        for v in &self.phi[i0..i1.max(i0)] {
            mn = mn.min(*v);
            mx = mx.max(*v);
        }
        mx - mn
    }

    /// Chart of a realized branch of `sys`.
    pub fn realize(geo: &TangencyGeometry, sys: &InducedSystem, index: usize) -> BranchChart {
        let b = &sys.branches[index];
        let leaf = &geo.leaf;
        let xs: Vec<f64> = (0..CHART_SAMPLES).map(|i| b.x_lo + (b.x_hi - b.x_lo) * i as f64 / (CHART_SAMPLES - 1) as f64).collect();
        let stretch: Vec<(f64, f64)> = xs
            .iter()
            .map(|&x| {
                let (ld, w) = geo.log_deriv(leaf as &dyn Param, x, b.tau);
                (ld, w.x)
            })
            .collect();
        let p: Vec<f64> = xs.iter().map(|&x| leaf.arclength(geo.theta_lo, x)).collect();
        let mut cum = vec![0.0; xs.len()];
        for i in 1..xs.len() {
            cum[i] = cum[i - 1] + 0.5 * (stretch[i].0.exp() + stretch[i - 1].0.exp()) * (p[i] - p[i - 1]);
        }
        let total = *cum.last().unwrap();
        let l = sys.leaf_length;
        let rising = stretch.last().unwrap().1 > stretch[0].1;
        let u = cum.iter().map(|c| if rising { l * c / total } else { l * (1.0 - c / total) }).collect();
        let phi = stretch.iter().map(|s| s.0 + (l / total).ln()).collect();
        BranchChart { p, u, phi }
    }
}

/// Variations `V_1..V_n` of `log |DF|E^u|` on the cylinders generated by the
/// charts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationProfile {
    pub v: Vec<f64>,
    /// Fit of `log V_n` against `n`.
    pub fit: LinearFit,
    /// `max_n V_n sigma_1^n`.
    pub constant: f64,
    pub sigma1: f64,
}

impl VariationProfile {
    /// `V_n` decays at least like `sigma_1^{-n}`.
    pub fn decays(&self) -> bool {
        self.fit.slope <= -self.sigma1.ln()
    }
}

pub const MAX_VARIATION_DEPTH: usize = 4;

/// `V_n` for `n = 1..=n_max`: the largest oscillation of `log |F'|` over a
/// cylinder `[a_0 .. a_{n-1}]`, found as the oscillation of the `a_0` chart
/// over the preimage of each `(n-1)`-cylinder.
pub fn variation_of(charts: &[BranchChart], leaf_length: f64, n_max: usize, sigma1: f64) -> Result<VariationProfile> {
    if n_max > MAX_VARIATION_DEPTH {
        return Err(HenonError::Depth { requested: n_max, available: MAX_VARIATION_DEPTH });
    }
    if charts.is_empty() || n_max == 0 {
        return Err(HenonError::InvalidInput("no charts or zero depth".into()));
    }
    let mut level: Vec<(f64, f64)> = vec![(0.0, leaf_length)];
    let mut v = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let osc = charts
            .par_iter()
            .map(|ch| {
                level
                    .iter()
                    .map(|&(lo, hi)| {
                        let (a, b) = (ch.preimage(lo), ch.preimage(hi));
                        ch.oscillation(a.min(b), a.max(b))
                    })
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max);
        v.push(osc);
        if n < n_max {
            level = charts
                .iter()
                .flat_map(|ch| {
                    level.iter().filter_map(move |&(lo, hi)| {
                        let (a, b) = (ch.preimage(lo), ch.preimage(hi));
                        (a != b).then(|| (a.min(b), a.max(b)))
                    })
                })
                .collect();
        }
    }
    let pts: Vec<(f64, f64)> = v.iter().enumerate().filter(|(_, &x)| x > 0.0).map(|(i, &x)| ((i + 1) as f64, x.ln())).collect();
    let fit = if pts.len() >= 2 { linear_fit(&pts) } else { LinearFit { intercept: f64::NAN, slope: f64::NAN, r2: f64::NAN } };
    let constant = v.iter().enumerate().map(|(i, x)| x * sigma1.powi(i as i32 + 1)).fold(0.0, f64::max);
    Ok(VariationProfile { v, fit, constant, sigma1 })
}

/// `V_n` of `phi_bar_t` on the realized induced system; scales as `|t|`.
pub fn variation(geo: &TangencyGeometry, sys: &InducedSystem, t: f64, n_max: usize) -> Result<VariationProfile> {
    if n_max > MAX_VARIATION_DEPTH {
        return Err(HenonError::Depth { requested: n_max, available: MAX_VARIATION_DEPTH });
    }
    let charts: Vec<BranchChart> = (0..sys.branches.len()).into_par_iter().map(|i| BranchChart::realize(geo, sys, i)).collect();
    let mut prof = variation_of(&charts, sys.leaf_length, n_max, sys.params.sigma1())?;
    prof.v.iter_mut().for_each(|x| *x *= t.abs());
    prof.constant *= t.abs();
    if t != 0.0 {
        prof.fit.intercept += t.abs().ln();
    }
    Ok(prof)
}

/// Worst errors of the shift routines against closed forms on random finite
/// full shifts with depth-1 potentials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSuite {
    pub cases: usize,
    /// Gibbs weights against `e^{phi_i} / sum e^{phi_j}`.
    pub max_weight_error: f64,
    /// Gurevich pressure against `log sum e^{phi_i}`.
    pub max_pressure_error: f64,
    /// Lifted entropy against the stationary chain on the tower.
    pub max_lift_error: f64,
}

/// Entropy of the stationary Markov chain on the tower `{(i, l): l < tau_i}`
/// that climbs one level per step and leaves the top to `(j, 0)` with
/// probability `p_j`.
pub fn tower_chain_entropy(p: &[f64], tau: &[u32]) -> f64 {
    let states: Vec<(usize, u32)> = tau.iter().enumerate().flat_map(|(i, &t)| (0..t).map(move |l| (i, l))).collect();
    let index = |i: usize, l: u32| states.iter().position(|&s| s == (i, l)).unwrap();
    let n = states.len();
    let mut next: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (s, &(i, l)) in states.iter().enumerate() {
        if l + 1 < tau[i] {
            next[s].push((index(i, l + 1), 1.0));
        } else {
            next[s].extend(p.iter().enumerate().map(|(j, &q)| (index(j, 0), q)));
        }
    }
    // the chain may be periodic; iterate its lazy version
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..100_000 {
        let mut new: Vec<f64> = pi.iter().map(|v| 0.5 * v).collect();
        for s in 0..n {
            for &(t, q) in &next[s] {
                new[t] += 0.5 * pi[s] * q;
            }
        }
        let d = pi.iter().zip(&new).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        pi = new;
        if d < 1e-17 {
            break;
        }
    }
    -(0..n).map(|s| next[s].iter().filter(|e| e.1 > 0.0).map(|&(_, q)| pi[s] * q * q.ln()).sum::<f64>()).sum::<f64>()
}

pub fn oracle_suite(cases: usize, seed: u64) -> Result<OracleSuite> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = OracleSuite { cases, max_weight_error: 0.0, max_pressure_error: 0.0, max_lift_error: 0.0 };
    for _ in 0..cases {
        let k = rng.gen_range(1..=8);
        let base: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..1.0)).collect();
        let tau: Vec<u32> = (0..k).map(|_| rng.gen_range(1..=4)).collect();
        let pot = SymbolPotential::new(base.clone(), tau.clone())?;
        let shift = TruncatedShift::new(&pot, None)?;
        let z: f64 = base.iter().map(|v| v.exp()).sum();
        let g = gibbs_truncated(&shift)?;
        for (w, v) in g.weights.iter().zip(&base) {
            out.max_weight_error = out.max_weight_error.max((w - v.exp() / z).abs());
        }
        let trace = gurevich_pressure(&shift, 12)?;
        for &(_, p) in &trace.values {
            out.max_pressure_error = out.max_pressure_error.max((p - z.ln()).abs());
        }
        let lifted = lift_stats(&g, &pot)?;
        let p: Vec<f64> = base.iter().map(|v| v.exp() / z).collect();
        out.max_lift_error = out.max_lift_error.max((lifted.entropy_lifted - tower_chain_entropy(&p, &tau)).abs());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn two_by_two_radius(m: [[f64; 2]; 2]) -> f64 {
        let tr = m[0][0] + m[1][1];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        0.5 * (tr + (tr * tr - 4.0 * det).sqrt())
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert_relative_eq!(log_sum_exp([1000.0, 1000.0].into_iter()), 1000.0 + 2f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(log_sum_exp([0.1, -0.3, 0.7].into_iter()), (0.1f64.exp() + (-0.3f64).exp() + 0.7f64.exp()).ln(), epsilon = 1e-14);
    }

    #[test]
    fn bernoulli_weights_and_pressure() {
        let base = vec![0.2, -1.0, 0.5];
        let pot = SymbolPotential::new(base.clone(), vec![1, 2, 3]).unwrap();
        let shift = TruncatedShift::new(&pot, None).unwrap();
        let z: f64 = base.iter().map(|v| v.exp()).sum();
        assert_relative_eq!(shift.pressure(), z.ln(), epsilon = 1e-14);
        let g = gibbs_truncated(&shift).unwrap();
        for (w, v) in g.weights.iter().zip(&base) {
            assert_relative_eq!(*w, v.exp() / z, epsilon = 1e-12);
        }
        let h: f64 = -base.iter().map(|v| (v.exp() / z) * (v - z.ln())).sum::<f64>();
        assert_relative_eq!(g.entropy, h, epsilon = 1e-12);
        assert_relative_eq!(g.mean_tau, base.iter().zip([1.0, 2.0, 3.0]).map(|(v, t)| v.exp() / z * t).sum::<f64>(), epsilon = 1e-12);
        assert_relative_eq!(g.gibbs_constant, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn pair_potential_matches_spectral_radius() {
        let pair = vec![vec![0.3, -0.2], vec![0.1, -0.7]];
        let pot = SymbolPotential::new(vec![0.0, 0.0], vec![1, 1]).unwrap().with_pairs(pair.clone()).unwrap();
        let shift = TruncatedShift::new(&pot, None).unwrap();
        let m = [[pair[0][0].exp(), pair[0][1].exp()], [pair[1][0].exp(), pair[1][1].exp()]];
        let p = two_by_two_radius(m).ln();
        assert_relative_eq!(shift.pressure(), p, epsilon = 1e-12);
        let trace = gurevich_pressure(&shift, 30).unwrap();
        assert_relative_eq!(trace.limit, p, epsilon = 1e-10);
        let g = gibbs_truncated(&shift).unwrap();
        for row in &g.transition {
            assert_relative_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        // stationarity of the weights
        for j in 0..2 {
            let s: f64 = (0..2).map(|i| g.weights[i] * g.transition[i][j]).sum();
            assert_relative_eq!(s, g.weights[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn empty_alphabet_and_short_trace_are_errors() {
        let pot = SymbolPotential::new(vec![0.0, 0.0], vec![3, 4]).unwrap();
        assert!(TruncatedShift::new(&pot, Some(2)).is_err());
        let shift = TruncatedShift::new(&pot, None).unwrap();
        assert!(gurevich_pressure(&shift, 1).is_err());
    }

    /// Stationary law of the tower chain by a direct linear solve.
    fn tower_entropy_by_solve(p: &[f64], tau: &[u32]) -> f64 {
        let states: Vec<(usize, u32)> = tau.iter().enumerate().flat_map(|(i, &t)| (0..t).map(move |l| (i, l))).collect();
        let n = states.len();
        let idx = |i: usize, l: u32| states.iter().position(|&s| s == (i, l)).unwrap();
        let mut m = DMatrix::<f64>::zeros(n, n);
        for (s, &(i, l)) in states.iter().enumerate() {
            if l + 1 < tau[i] {
                m[(s, idx(i, l + 1))] = 1.0;
            } else {
                for (j, &q) in p.iter().enumerate() {
                    m[(s, idx(j, 0))] += q;
                }
            }
        }
        // pi (M - I) = 0 with sum pi = 1: replace one equation by normalization
        let mut a = (m.clone() - DMatrix::identity(n, n)).transpose();
        for c in 0..n {
            a[(n - 1, c)] = 1.0;
        }
        let mut rhs = DVector::zeros(n);
        rhs[n - 1] = 1.0;
        let pi = a.lu().solve(&rhs).unwrap();
        -(0..n).map(|s| (0..n).filter(|&t| m[(s, t)] > 0.0).map(|t| pi[s] * m[(s, t)] * m[(s, t)].ln()).sum::<f64>()).sum::<f64>()
    }

    #[test]
    fn abramov_lift_matches_tower_chain() {
        let p = [0.5, 0.3, 0.2];
        let tau = [1, 2, 4];
        let base: Vec<f64> = p.iter().map(|q: &f64| q.ln()).collect();
        let pot = SymbolPotential::new(base, tau.to_vec()).unwrap();
        let g = gibbs_truncated(&TruncatedShift::new(&pot, None).unwrap()).unwrap();
        let lifted = lift_stats(&g, &pot).unwrap();
        let direct = tower_entropy_by_solve(&p, &tau);
        assert_relative_eq!(lifted.entropy_lifted, direct, epsilon = 1e-12);
        assert_relative_eq!(tower_chain_entropy(&p, &tau), direct, epsilon = 1e-12);
        // periodic tower: equal heights
        assert_relative_eq!(tower_chain_entropy(&[0.5, 0.5], &[2, 2]), tower_entropy_by_solve(&[0.5, 0.5], &[2, 2]), epsilon = 1e-12);
    }

    #[test]
    fn oracle_suite_is_tight() {
        let o = oracle_suite(50, 11).unwrap();
        assert!(o.max_weight_error <= 1e-10, "{o:?}");
        assert!(o.max_pressure_error <= 1e-10, "{o:?}");
        assert!(o.max_lift_error <= 1e-10, "{o:?}");
    }

    /// Branches that tile a unit leaf with full affine returns: the lengths
    /// sum to 1, so `P(1) = 0`.
    fn tiling(lengths: &[f64], tau: &[u32]) -> ShiftData {
        ShiftData {
            tau: tau.to_vec(),
            log_jac: lengths.iter().map(|l| -l.ln()).collect(),
            length: lengths.to_vec(),
            growth_rate: 0.0,
            sigma1: 1.5,
            sigma2: 4.5,
        }
    }

    #[test]
    fn tiling_system_has_root_one() {
        let d = tiling(&[0.5, 0.25, 0.125, 0.125], &[2, 3, 4, 5]);
        let root = t_u_root(&d, &[5], (0.0, 1.5)).unwrap();
        assert!((root.t_u - 1.0).abs() < 1e-9, "{root:?}");
        let p0 = pressure_at(&d, 0.0, &[5]).unwrap();
        // sum e^{-c tau} = 1 over tau = 2..5 solved independently
        let f = |c: f64| [2.0, 3.0, 4.0, 5.0].iter().map(|t: &f64| (-c * t).exp()).sum::<f64>() - 1.0;
        let (mut lo, mut hi) = (0.0, 2.0);
        for _ in 0..200 {
            let m = 0.5 * (lo + hi);
            if f(m) > 0.0 {
                lo = m
            } else {
                hi = m
            }
        }
        assert_relative_eq!(p0.value, lo, epsilon = 1e-12);
        assert!(!p0.extrapolated);
    }

    #[test]
    fn t_below_minus_one_is_rejected() {
        let d = tiling(&[0.5, 0.5], &[1, 2]);
        assert!(matches!(pressure_at(&d, -1.0, &[5]), Err(HenonError::InvalidInput(_))));
    }

    #[test]
    fn interval_formula_values() {
        let (lo, hi) = t_interval(1.0, std::f64::consts::LN_2, 0.01).unwrap();
        let l = std::f64::consts::LN_2;
        assert_relative_eq!(hi, l / (l - 1.99f64.ln() + 0.1), epsilon = 1e-15);
        assert!((lo + 0.871).abs() < 1e-3, "{lo}");
        assert!((hi - 6.6006).abs() < 1e-4, "{hi}");
        assert!(t_interval(1.0, 1.5f64.ln() - 0.5f64.sqrt(), 0.5).is_err());
    }

    #[test]
    fn geometric_tail_verdicts() {
        // S(n) = 2, l = 2^{-n}: T_{1,c} has ratio 2 e^{c} / 2
        let tau: Vec<u32> = (2..=30).flat_map(|n| [n, n]).collect();
        let length: Vec<f64> = tau.iter().map(|&n| 0.5f64.powi(n as i32 + 1)).collect();
        let d = ShiftData { log_jac: length.iter().map(|l| -l.ln()).collect(), tau, length, growth_rate: 2f64.ln() / 2.0, sigma1: 1.5, sigma2: 4.5 };
        assert_eq!(tail_sum(&d, 1.0, 0.3).verdict, Verdict::Convergent);
        assert_eq!(tail_sum(&d, 1.0, 1.0).verdict, Verdict::Divergent);
        let r = tail_sum(&d, 1.0, 0.3);
        assert_relative_eq!(r.log_ratio, 0.3 - 2f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn truncated_divergent_tail_is_an_error() {
        // one branch per return time with weights growing like e^{0.2 n^1.5}
        let tau: Vec<u32> = (1..=40).collect();
        let length: Vec<f64> = tau.iter().map(|&n| (0.2 * (n as f64).powf(1.5)).exp()).collect();
        let d = ShiftData { log_jac: length.iter().map(|l| -l.ln()).collect(), tau, length, growth_rate: 0.0, sigma1: 1.5, sigma2: 4.5 };
        assert!(matches!(pressure_at(&d, 1.0, &DEFAULT_CUTOFFS), Err(HenonError::Tail(_))));
        // the same system cut at its last branch is a finite shift
        assert!(pressure_at(&d, 1.0, &[40]).is_ok());
    }

    #[test]
    fn linear_fit_recovers_a_line() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 2.0 - 0.5 * i as f64)).collect();
        let f = linear_fit(&pts);
        assert_relative_eq!(f.slope, -0.5, epsilon = 1e-14);
        assert_relative_eq!(f.intercept, 2.0, epsilon = 1e-13);
        assert_relative_eq!(f.r2, 1.0, epsilon = 1e-14);
    }

    fn affine_halves(phi: impl Fn(f64) -> f64) -> Vec<BranchChart> {
        (0..2)
            .map(|k| {
                let p: Vec<f64> = (0..=64).map(|i| 0.5 * k as f64 + 0.5 * i as f64 / 64.0).collect();
                let u = p.iter().map(|x| 2.0 * (x - 0.5 * k as f64)).collect();
                let ph = p.iter().map(|&x| phi(x)).collect();
                BranchChart::new(p, u, ph).unwrap()
            })
            .collect()
    }

    #[test]
    fn locally_constant_potential_has_no_variation() {
        let prof = variation_of(&affine_halves(|_| 2f64.ln()), 1.0, 4, 1.5).unwrap();
        assert!(prof.v.iter().all(|&v| v == 0.0), "{:?}", prof.v);
    }

    #[test]
    fn linear_potential_variation_halves() {
        // V_n is the slope times the length 2^{-n} of an n-cylinder
        let prof = variation_of(&affine_halves(|x| 0.8 * x), 1.0, 4, 1.5).unwrap();
        for (n, v) in prof.v.iter().enumerate() {
            assert_relative_eq!(*v, 0.8 * 0.5f64.powi(n as i32 + 1), epsilon = 1e-12);
        }
        assert_relative_eq!(prof.fit.slope, -(2f64.ln()), epsilon = 1e-9);
        assert!(prof.decays());
        assert!(matches!(variation_of(&affine_halves(|x| x), 1.0, 5, 1.5), Err(HenonError::Depth { .. })));
    }

    #[test]
    fn chart_rejects_non_monotone_image() {
        assert!(BranchChart::new(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 1.0], vec![0.0; 3]).is_err());
    }
}
