//! Command line: run configuration, the stage pipeline with on-disk caches,
//! and the acceptance report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::{
    box_dimension, clt_test, correlation_decay, dimension_of_measure, ek_ladder, geometric_scales, lyapunov_u,
    sample_gibbs_orbit, theta0_rect, BoxFit, Observable, SliceSample,
};
use crate::curve::{fmt17, Rect};
use crate::henon::{fixed_saddles, MapParams, Orientation, Point};
use crate::inducing::{
    branch_census, build_alpha, build_region, build_theta, first_return_branches, hyperbolicity_audit, omega_sets,
    Census, InducedSystem, TangencyGeometry,
};
use crate::manifolds::{c2b_check, find_first_bifurcation, grow_stable, grow_unstable, quadratic_signature, Bifurcation, DEFAULT_TOL_A};
use crate::thermo::{
    c0, gibbs_at, gibbs_tail, lambda_u, lift_stats, oracle_suite, pressure_curve, t_interval, tail_sum, variation, ShiftData,
};
use crate::{HenonError, Result};

pub const SCHEMA_VERSION: &str = "1.0";
pub const MAX_LADDER_LEVELS: usize = 20;
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Manifolds,
    Inducing,
    Pressure,
    Dimension,
    Stats,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Manifolds, Stage::Inducing, Stage::Pressure, Stage::Dimension, Stage::Stats];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Manifolds => "manifolds",
            Stage::Inducing => "inducing",
            Stage::Pressure => "pressure",
            Stage::Dimension => "dimension",
            Stage::Stats => "stats",
        }
    }

    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Manifolds => &[],
            Stage::Inducing => &[Stage::Manifolds],
            Stage::Pressure => &[Stage::Inducing],
            Stage::Dimension | Stage::Stats => &[Stage::Inducing, Stage::Pressure],
        }
    }

    /// File whose presence marks a finished stage.
    fn primary(self) -> &'static str {
        match self {
            Stage::Manifolds => "a_star.json",
            Stage::Inducing => "system.json",
            Stage::Pressure => "pressure.json",
            Stage::Dimension => "dimension.json",
            Stage::Stats => "stats.json",
        }
    }
}

/// `a = "auto"` locates the first tangency; a number fixes `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AValue {
    Fixed(f64),
    Keyword(String),
}

impl Default for AValue {
    fn default() -> Self {
        AValue::Keyword("auto".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub a: AValue,
    pub b: f64,
    pub orientation: Orientation,
    pub epsilon: f64,
    pub cap_n: usize,
    pub bracket: [f64; 2],
    pub tol_a: f64,
    /// Return-time depth of the inducing scheme.
    pub depth: u32,
    /// Lower end of the range used for the branch growth rate.
    pub n0: u32,
    pub cutoffs: Vec<u32>,
    pub t_grid: Vec<f64>,
    pub study_interval: [f64; 2],
    /// Further values of `b` at which `t^u` is recomputed.
    pub trend_b: Vec<f64>,
    pub variation_depth: usize,
    pub ladder_levels: usize,
    pub box_scales: usize,
    pub stats_t: f64,
    pub orbit_length: usize,
    pub max_lag: usize,
    pub n_block: usize,
    pub n_samples: usize,
    pub lyapunov_steps: usize,
    pub control_seeds: usize,
    pub control_block: usize,
    pub oracle_cases: usize,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub out: PathBuf,
    pub stages: Vec<Stage>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            a: AValue::default(),
            b: 1e-4,
            orientation: Orientation::Preserving,
            epsilon: 0.5,
            cap_n: 22,
            bracket: [1.9, 2.1],
            tol_a: 1e-15,
            depth: 40,
            n0: 10,
            cutoffs: vec![10, 15, 20, 25],
            t_grid: (0..=40).map(|i| i as f64 / 20.0 - 0.5).collect(),
            study_interval: [-0.4, 0.6],
            trend_b: vec![1e-3, 1e-5],
            variation_depth: 4,
            ladder_levels: 12,
            box_scales: 24,
            stats_t: 0.8,
            orbit_length: 1 << 20,
            max_lag: 30,
            n_block: 1024,
            n_samples: 500,
            lyapunov_steps: 20_000,
            control_seeds: 100,
            control_block: 64,
            oracle_cases: 50,
            seed: 7,
            jobs: None,
            out: PathBuf::from("out"),
            stages: Stage::ALL.to_vec(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> HenonError {
    HenonError::InvalidInput(msg.into())
}

fn strictly_increasing<T: PartialOrd>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HenonError::Format(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn fixed_a(&self) -> Result<Option<f64>> {
        match &self.a {
            AValue::Fixed(a) => Ok(Some(*a)),
            AValue::Keyword(k) if k == "auto" => Ok(None),
            AValue::Keyword(k) => Err(invalid(format!("a must be \"auto\" or a number, got {k:?}"))),
        }
    }

    /// Parameters with `a` still to be chosen.
    pub fn template(&self) -> Result<MapParams> {
        MapParams::new(2.0, self.b, self.orientation, self.epsilon, self.cap_n)
    }

    /// Checks every key; `b = 0` is accepted only when `allow_b0` is set.
    pub fn validate(&self, allow_b0: bool) -> Result<()> {
        let a = self.fixed_a()?;
        if let Some(a) = a {
            if !a.is_finite() {
                return Err(invalid(format!("a = {a} is not finite")));
            }
        }
        if !(self.b.is_finite() && self.b >= 0.0 && self.b <= 0.01) {
            return Err(invalid(format!("b = {} must lie in [0, 0.01]", self.b)));
        }
        if self.b == 0.0 && !allow_b0 {
            return Err(invalid("b = 0 is only supported by find-astar"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 0.5) {
            return Err(invalid(format!("epsilon = {} must lie in (0, 0.5]", self.epsilon)));
        }
        self.template()?;
        let [lo, hi] = self.bracket;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(invalid(format!("bracket [{lo}, {hi}] must be finite and increasing")));
        }
        if !(self.tol_a > 0.0) {
            return Err(invalid(format!("tol_a = {} must be positive", self.tol_a)));
        }
        if self.depth < 2 || self.n0 < 1 || self.n0 > self.depth {
            return Err(invalid(format!("need 1 <= n0 <= depth and depth >= 2, got n0 = {}, depth = {}", self.n0, self.depth)));
        }
        if self.cutoffs.is_empty() || self.cutoffs[0] < 2 || !strictly_increasing(&self.cutoffs) {
            return Err(invalid("cutoffs must be increasing and at least 2"));
        }
        if self.t_grid.len() < 3 || !strictly_increasing(&self.t_grid) || self.t_grid.iter().any(|t| !t.is_finite() || *t <= -1.0) {
            return Err(invalid("t_grid needs at least 3 increasing finite values, all above -1"));
        }
        let guess = t_interval(1.0, std::f64::consts::LN_2, self.epsilon)?;
        let [s_lo, s_hi] = self.study_interval;
        if !(s_lo < s_hi && s_lo > guess.0 && s_hi < guess.1) {
            return Err(invalid(format!(
                "study_interval [{s_lo}, {s_hi}] must lie inside (t_-, t_+) = ({:.4}, {:.4})",
                guess.0, guess.1
            )));
        }
        if self.trend_b.iter().any(|b| !(*b > 0.0 && *b <= 0.01)) {
            return Err(invalid("trend_b values must lie in (0, 0.01]"));
        }
        if self.variation_depth == 0 || self.ladder_levels == 0 || self.box_scales < 3 {
            return Err(invalid("variation_depth and ladder_levels must be positive and box_scales at least 3"));
        }
        // the ladder has ~2^k rectangles at level k
        if self.ladder_levels > MAX_LADDER_LEVELS {
            return Err(invalid(&format!("ladder_levels must be at most {MAX_LADDER_LEVELS}, got {}", self.ladder_levels)));
        }
        if !(self.stats_t > -1.0 && self.stats_t.is_finite()) {
            return Err(invalid(format!("stats_t = {} must exceed -1", self.stats_t)));
        }
        if self.n_block < 2 || self.n_samples < 10 || self.orbit_length < self.n_block * self.n_samples {
            return Err(invalid("orbit_length must cover n_samples blocks of n_block points"));
        }
        if self.max_lag < 3 || self.orbit_length < 100 * self.max_lag {
            return Err(invalid("need max_lag >= 3 and orbit_length >= 100 * max_lag"));
        }
        if self.lyapunov_steps < 100 || self.control_block < 2 || self.oracle_cases == 0 {
            return Err(invalid("lyapunov_steps, control_block and oracle_cases are too small"));
        }
        if self.jobs == Some(0) {
            return Err(invalid("jobs must be positive"));
        }
        Ok(())
    }

    /// The keys that determine stage results; echoed into every artifact.
    pub fn echo(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            for k in ["out", "jobs", "stages"] {
                m.remove(k);
            }
        }
        v
    }
}

/// JSON text with every float written to 17 significant digits, sorted keys
/// and two-space indentation.
pub fn to_json17(v: &Value) -> String {
    let mut s = String::new();
    write_json(v, 0, &mut s);
    s.push('\n');
    s
}

fn is_scalar(v: &Value) -> bool {
    !matches!(v, Value::Array(_) | Value::Object(_))
}

fn write_json(v: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else {
                match n.as_f64() {
                    Some(f) if f.is_finite() => out.push_str(&fmt17(f)),
                    _ => out.push_str("null"),
                }
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string serializes")),
        Value::Array(a) if a.is_empty() => out.push_str("[]"),
        Value::Array(a) if a.iter().all(is_scalar) => {
            out.push('[');
            for (i, x) in a.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_json(x, indent, out);
            }
            out.push(']');
        }
        Value::Array(a) => {
            out.push_str("[\n");
            for (i, x) in a.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_json(x, indent + 1, out);
                out.push_str(if i + 1 < a.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(m) if m.is_empty() => out.push_str("{}"),
        Value::Object(m) => {
            out.push_str("{\n");
            for (i, (k, x)) in m.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                out.push_str(&serde_json::to_string(k).expect("key serializes"));
                out.push_str(": ");
                write_json(x, indent + 1, out);
                out.push_str(if i + 1 < m.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
    }
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("artifact serializes")
}

/// Output directory of one run.
pub struct Workspace {
    pub root: PathBuf,
    pub config: RunConfig,
}

/// Wall-clock times of a stage, kept apart from the JSON artifacts so that
/// those stay reproducible.
#[derive(Default)]
struct Timings(Vec<(String, f64)>);

impl Timings {
    fn record(&mut self, key: &str, t: Instant) {
        self.0.push((key.to_string(), t.elapsed().as_secs_f64()));
    }

    fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k} {v:.6}\n")).collect()
    }
}

pub fn read_timings(path: &Path) -> BTreeMap<String, f64> {
    fs::read_to_string(path)
        .unwrap_or_default()
        .lines()
        .filter_map(|l| {
            let (k, v) = l.split_once(' ')?;
            Some((k.to_string(), v.parse().ok()?))
        })
        .collect()
}

impl Workspace {
    pub fn new(config: RunConfig) -> Self {
        Workspace { root: config.out.clone(), config }
    }

    pub fn stage_dir(&self, s: Stage) -> PathBuf {
        self.root.join(s.name())
    }

    fn write_text(&self, s: Stage, file: &str, text: &str) -> Result<()> {
        fs::write(self.stage_dir(s).join(file), text)?;
        Ok(())
    }

    fn write_artifact(&self, s: Stage, file: &str, data: Value) -> Result<()> {
        let doc = json!({
            "schema": SCHEMA_VERSION,
            "code_version": CODE_VERSION,
            "stage": s.name(),
            "config": self.config.echo(),
            "data": data,
        });
        self.write_text(s, file, &to_json17(&doc))
    }

    /// The `data` member of a cached artifact, after checking that the stage
    /// finished, the schema major version matches and the cache was made with
    /// the current configuration.
    pub fn load(&self, s: Stage, file: &str) -> Result<Value> {
        let dir = self.stage_dir(s);
        if dir.join("STALE").exists() {
            return Err(HenonError::Dependency(format!("stage {} failed on its last run; rerun it", s.name())));
        }
        let path = dir.join(file);
        if !dir.join(s.primary()).exists() || !path.exists() {
            return Err(HenonError::Dependency(format!("stage {} has no cached output at {}; run it first", s.name(), path.display())));
        }
        let doc: Value = serde_json::from_str(&fs::read_to_string(&path)?)?;
        check_schema(&doc)?;
        let echo: Value = serde_json::from_str(&to_json17(&self.config.echo()))?;
        if doc["config"] != echo {
            return Err(HenonError::Dependency(format!("cache of stage {} was made with a different configuration; rerun it", s.name())));
        }
        Ok(doc["data"].clone())
    }

    fn load_as<T: serde::de::DeserializeOwned>(&self, s: Stage, file: &str, pointer: &str) -> Result<T> {
        let data = self.load(s, file)?;
        let v = data.pointer(pointer).cloned().ok_or_else(|| HenonError::Format(format!("{}/{file}: no member {pointer}", s.name())))?;
        Ok(serde_json::from_value(v)?)
    }

    /// Runs one stage: checks its dependencies, clears the stage directory's
    /// STALE marker, and writes one if the stage fails.
    pub fn run_stage(&self, s: Stage) -> Result<()> {
        for &d in s.deps() {
            self.load(d, d.primary())?;
        }
        let dir = self.stage_dir(s);
        fs::create_dir_all(&dir)?;
        let stale = dir.join("STALE");
        if stale.exists() {
            fs::remove_file(&stale)?;
        }
        let res = match s {
            Stage::Manifolds => self.manifolds(),
            Stage::Inducing => self.inducing(),
            Stage::Pressure => self.pressure(),
            Stage::Dimension => self.dimension(),
            Stage::Stats => self.stats(),
        };
        if let Err(e) = &res {
            let _ = fs::remove_file(dir.join(s.primary()));
            fs::write(&stale, format!("{e}\n"))?;
        }
        res
    }

    pub fn run_stages(&self, stages: &[Stage]) -> Result<()> {
        let mut list = stages.to_vec();
        list.sort();
        list.dedup();
        for s in list {
            self.run_stage(s)?;
        }
        Ok(())
    }
}

pub fn check_schema(doc: &Value) -> Result<()> {
    let schema = doc["schema"].as_str().ok_or_else(|| HenonError::Format("artifact has no schema version".into()))?;
    let major = |s: &str| s.split('.').next().map(str::to_string);
    if major(schema) != major(SCHEMA_VERSION) {
        return Err(HenonError::Format(format!("artifact schema {schema} does not match major version of {SCHEMA_VERSION}")));
    }
    Ok(())
}

/// Construction of the induced system at fixed parameters.
pub struct Induced {
    pub geo: TangencyGeometry,
    pub region: crate::inducing::RegionR,
    pub alpha: crate::inducing::AlphaFamily,
    pub tower: crate::inducing::ThetaTower,
    pub omega: crate::inducing::OmegaSets,
    pub system: InducedSystem,
}

pub fn induce(params: &MapParams, depth: u32) -> Result<Induced> {
    let geo = TangencyGeometry::build(params)?;
    let region = build_region(&geo)?;
    let alpha = build_alpha(&geo, &region, depth)?;
    let tower = build_theta(&geo, &alpha, 0)?;
    let omega = omega_sets(&geo, &tower, 10);
    let system = first_return_branches(&geo, &alpha, &tower, &omega, depth)?;
    Ok(Induced { geo, region, alpha, tower, omega, system })
}

/// `a*` at tolerance `DEFAULT_TOL_A`, then refined inside the final bracket
/// down to `tol_a`.
pub fn locate_a_star(template: &MapParams, bracket: (f64, f64), tol_a: f64) -> Result<(Bifurcation, Bifurcation)> {
    let coarse = find_first_bifurcation(template, bracket, DEFAULT_TOL_A)?;
    let refined = refine_a_star(template, &coarse, tol_a)?;
    Ok((coarse, refined))
}

fn refine_a_star(template: &MapParams, coarse: &Bifurcation, tol_a: f64) -> Result<Bifurcation> {
    if tol_a >= DEFAULT_TOL_A || coarse.a_star == 2.0 && template.b == 0.0 {
        return Ok(coarse.clone());
    }
    let last = coarse.trace.last().expect("trace starts with the bracket");
    find_first_bifurcation(template, (last.a_lo, last.a_hi), tol_a)
}

fn bifurcation_summary(b: &Bifurcation, tol: f64) -> Value {
    json!({ "a_star": b.a_star, "iterations": b.iterations, "tol": tol, "report": to_value(&b.report) })
}

/// Smallest interval containing `range` and every interval of `iv`.
fn hull(iv: &[(f64, f64)], range: (f64, f64)) -> (f64, f64) {
    iv.iter().fold(range, |(a, b), &(c, d)| (a.min(c), b.max(d)))
}

/// Values of `t` at which the dimension of `mu_t` is reported besides `t^u`.
const MEASURE_DIM_T: [f64; 3] = [0.3, 0.5, 0.9];
const COBOUNDARY_BLOCKS: [usize; 4] = [16, 64, 256, 1024];
const BBOX_TOL: f64 = 1e-9;

impl Workspace {
    fn bracket(&self) -> (f64, f64) {
        (self.config.bracket[0], self.config.bracket[1])
    }

    /// Writes `manifolds/a_star.json` and returns `a*`.
    pub fn find_astar(&self) -> Result<f64> {
        let cfg = &self.config;
        let tmpl = cfg.template()?;
        let s = Stage::Manifolds;
        fs::create_dir_all(self.stage_dir(s))?;
        let mut tm = Timings::default();
        let (a_star, data) = match cfg.fixed_a()? {
            Some(a) => (a, json!({ "mode": "fixed", "a_star": a, "b": cfg.b })),
            None => {
                let t = Instant::now();
                let coarse = find_first_bifurcation(&tmpl, self.bracket(), DEFAULT_TOL_A)?;
                tm.record("find_astar_default_tol", t);
                let refined = refine_a_star(&tmpl, &coarse, cfg.tol_a)?;
                tm.record("find_astar_total", t);
                let mode = if cfg.b == 0.0 { "one_dimensional" } else { "auto" };
                let data = json!({
                    "mode": mode,
                    "a_star": refined.a_star,
                    "b": cfg.b,
                    "coarse": bifurcation_summary(&coarse, DEFAULT_TOL_A),
                    "refined": bifurcation_summary(&refined, cfg.tol_a.min(DEFAULT_TOL_A)),
                    "trace": to_value(&refined.trace),
                });
                (refined.a_star, data)
            }
        };
        self.write_artifact(s, "a_star.json", data)?;
        self.write_text(s, "timings_astar.txt", &tm.render())?;
        Ok(a_star)
    }

    fn manifolds(&self) -> Result<()> {
        let cfg = &self.config;
        let s = Stage::Manifolds;
        let a_star = self.find_astar()?;
        let t = Instant::now();
        let params = cfg.template()?.with_a(a_star);
        let quad = quadratic_signature(&params, 0.5 * params.sqrt_b(), 41)?;
        let (p, q) = fixed_saddles(&params)?;
        let owner = match params.orientation {
            Orientation::Preserving => p,
            Orientation::Reversing => q,
        };
        let wu = grow_unstable(&params, &owner, 6.0, 1e-6)?;
        let ws = grow_stable(&params, &q, 4.0, 1e-6)?;
        for (name, m) in [("wu", &wu), ("ws", &ws)] {
            for (i, c) in m.pieces.iter().enumerate() {
                self.write_text(s, &format!("{name}_{i}.csv"), &c.to_csv())?;
            }
        }
        let local: Vec<Value> = (0..2).filter_map(|i| wu.local_piece(i)).map(|c| to_value(&c2b_check(c, params.b))).collect();
        let data = json!({
            "a_star": a_star,
            "params": to_value(&params),
            "saddles": { "p": to_value(&p), "q": to_value(&q) },
            "quadratic": {
                "half_window": 0.5 * params.sqrt_b(),
                "alpha": quad.alpha,
                "beta": quad.beta,
                "rel_residual": quad.rel_residual,
            },
            "unstable": { "pieces": wu.pieces.len(), "vertices": wu.vertex_count(), "invariance_residual": wu.invariance_residual(), "local_c2b": local },
            "stable": { "pieces": ws.pieces.len(), "vertices": ws.vertex_count(), "invariance_residual": ws.invariance_residual() },
        });
        self.write_artifact(s, "tangency.json", data)?;
        let mut tm = Timings::default();
        tm.record("manifolds", t);
        self.write_text(s, "timings.txt", &tm.render())
    }

    fn inducing(&self) -> Result<()> {
        let cfg = &self.config;
        let s = Stage::Inducing;
        let a_star: f64 = self.load_as(Stage::Manifolds, "a_star.json", "/a_star")?;
        let t = Instant::now();
        let params = cfg.template()?.with_a(a_star);
        let ind = induce(&params, cfg.depth)?;
        let sys = &ind.system;
        let census = branch_census(sys, cfg.n0);
        let audit = hyperbolicity_audit(&ind.geo, sys, 16);
        let r = &ind.region;
        let data = json!({
            "census": to_value(&census),
            "growth_within_epsilon": census.growth_rate <= cfg.epsilon,
            "audit": to_value(&audit),
            "alpha_checks": to_value(&ind.alpha.checks(&ind.geo)),
            "alpha_depth": ind.alpha.depth,
            "theta": to_value(&ind.tower),
            "theta_nested": ind.tower.nested(),
            "omega": {
                "levels": to_value(&ind.omega.levels),
                "unresolved_from": ind.omega.unresolved_from,
                "escaping_samples": ind.omega.escaping_samples,
                "nested": ind.omega.nested(),
            },
            "region": {
                "bbox": to_value(&r.bbox),
                "tip": to_value(&r.tip),
                "corner_gaps": r.corner_gaps.to_vec(),
                "side_slopes": r.side_slopes.to_vec(),
                "saddle_gap": r.saddle_gap,
            },
            "system": {
                "branches": sys.branches.len(),
                "tau2": sys.branches.iter().filter(|b| b.tau == 2).count(),
                "max_tau": sys.branches.iter().map(|b| b.tau).max(),
                "core": [sys.core.0, sys.core.1],
                "core_length": sys.core_length,
                "leaf_length": sys.leaf_length,
                "disjoint": sys.disjoint(),
                "truncated": sys.truncated,
                "resolution_limited": sys.resolution_limited,
                "omega_consistent": sys.omega_consistent,
            },
        });
        self.write_text(s, "counts.csv", &sys.counts_csv())?;
        self.write_text(s, "branches.csv", &sys.branches_csv())?;
        self.write_artifact(s, "summary.json", data)?;
        self.write_artifact(s, "system.json", to_value(sys))?;
        let mut tm = Timings::default();
        tm.record("inducing", t);
        self.write_text(s, "timings.txt", &tm.render())
    }

    fn shift_data(&self) -> Result<(InducedSystem, ShiftData)> {
        let sys: InducedSystem = self.load_as(Stage::Inducing, "system.json", "")?;
        let census: Census = self.load_as(Stage::Inducing, "summary.json", "/census")?;
        let data = ShiftData::from_system(&sys, census.growth_rate);
        Ok((sys, data))
    }

    /// `t^u` recomputed from scratch at another `b`.
    fn trend_point(&self, b: f64) -> Result<Value> {
        let cfg = &self.config;
        let tmpl = MapParams::new(2.0, b, cfg.orientation, cfg.epsilon, cfg.cap_n)?;
        let (_, refined) = locate_a_star(&tmpl, self.bracket(), cfg.tol_a)?;
        let ind = induce(&tmpl.with_a(refined.a_star), cfg.depth)?;
        let census = branch_census(&ind.system, cfg.n0);
        let data = ShiftData::from_system(&ind.system, census.growth_rate);
        let root = crate::thermo::t_u_root(&data, &cfg.cutoffs, (0.0, 1.5))?;
        Ok(json!({ "b": b, "a_star": refined.a_star, "branches": ind.system.branches.len(), "t_u": root.t_u }))
    }

    fn pressure(&self) -> Result<()> {
        let cfg = &self.config;
        let s = Stage::Pressure;
        let (sys, data) = self.shift_data()?;
        let mut tm = Timings::default();
        let t = Instant::now();
        let curve = pressure_curve(&data, &cfg.t_grid, &cfg.cutoffs, cfg.epsilon)?;
        tm.record("pressure_curve", t);
        let (p0, _) = gibbs_at(&data, 0.0, &cfg.cutoffs)?;
        let (p1, _) = gibbs_at(&data, 1.0, &cfg.cutoffs)?;
        let root = curve.root.ok_or_else(|| HenonError::NoConvergence {
            iterations: 0,
            detail: "P has no sign change on the t grid".into(),
        })?;
        let t_u = root.t_u;
        let (_, g) = gibbs_at(&data, t_u, &cfg.cutoffs)?;
        let lifted = lift_stats(&g, &data.potential(t_u))?;
        let lam = lambda_u(&data, &g);
        let (tail_sums, tail_slope) = gibbs_tail(&data, &g);
        let tails: Vec<Value> = [cfg.study_interval[0], cfg.study_interval[1], t_u]
            .iter()
            .map(|&t| to_value(&tail_sum(&data, t, c0(&data, t) - 0.1)))
            .collect();
        let geo = TangencyGeometry::build(&sys.params)?;
        let t = Instant::now();
        let var = variation(&geo, &sys, t_u, cfg.variation_depth)?;
        tm.record("variation", t);
        let guess = t_interval(1.0, std::f64::consts::LN_2, cfg.epsilon)?;
        let [s_lo, s_hi] = cfg.study_interval;
        let inside = matches!((curve.t_minus, curve.t_plus), (Some(a), Some(b)) if a < s_lo && s_hi < b);
        let t = Instant::now();
        let trend = cfg.trend_b.iter().map(|&b| self.trend_point(b)).collect::<Result<Vec<_>>>()?;
        tm.record("trend", t);
        let data_json = json!({
            "curve": to_value(&curve),
            "convex": curve.convex(),
            "p0": to_value(&p0),
            "p1": to_value(&p1),
            "t_u": t_u,
            "gibbs_root": {
                "weights": to_value(&g.weights),
                "entropy": g.entropy,
                "mean_tau": g.mean_tau,
                "gibbs_constant": g.gibbs_constant,
                "pressure": g.pressure,
            },
            "lifted": to_value(&lifted),
            "lambda_u": lam,
            "dimension_ratio": lifted.entropy_lifted / lam,
            "gibbs_tail": { "sums": to_value(&tail_sums), "slope": tail_slope },
            "tails": tails,
            "variation": to_value(&var),
            "variation_decays": var.decays(),
            "study": { "interval": [s_lo, s_hi], "guess": [guess.0, guess.1], "inside": inside },
            "trend": trend,
        });
        self.write_text(s, "pressure_curve.csv", &curve.to_csv())?;
        self.write_artifact(s, "pressure.json", data_json)?;
        self.write_text(s, "timings.txt", &tm.render())
    }

    fn dimension(&self) -> Result<()> {
        let cfg = &self.config;
        let s = Stage::Dimension;
        let (sys, data) = self.shift_data()?;
        let bbox: Rect = self.load_as(Stage::Inducing, "summary.json", "/region/bbox")?;
        let levels: Vec<Vec<(f64, f64)>> = self.load_as(Stage::Inducing, "summary.json", "/omega/levels")?;
        let t_u: f64 = self.load_as(Stage::Pressure, "pressure.json", "/t_u")?;
        let t = Instant::now();
        let geo = TangencyGeometry::build(&sys.params)?;
        let omega = levels.last().cloned().unwrap_or_default();
        let width = geo.theta_hi - geo.theta_lo;
        let scales = geometric_scales(width / 4.0, width / 4e3, cfg.box_scales);
        let spacing = scales[scales.len() - 1] / 10.0;
        let slice = SliceSample::from_intervals("omega", &omega, spacing, hull(&omega, (geo.theta_lo, geo.theta_hi)), levels.len() - 1)?;
        let omega_box = box_dimension(&slice, &scales)?;
        let ladder = ek_ladder(&geo, &theta0_rect(&sys, (bbox.y_min, bbox.y_max)), cfg.ladder_levels)?;
        let top = ladder.levels.last().expect("ladder has levels");
        let l = sys.leaf_length;
        let e_scales = geometric_scales(l / 4.0, l / 4e3, cfg.box_scales);
        let e_spacing = e_scales[e_scales.len() - 1] / 10.0;
        let e_sample = SliceSample::from_intervals("ladder", &top.components, e_spacing, hull(&top.components, (0.0, l)), top.k)?;
        let e_box = box_dimension(&e_sample, &e_scales)?;
        let k_lo = 4.min(cfg.ladder_levels);
        let spread = ladder.constant_spread(k_lo, cfg.ladder_levels);
        let mut measure_dims = Vec::new();
        for tt in MEASURE_DIM_T.iter().copied().chain([t_u]) {
            let (_, g) = gibbs_at(&data, tt, &cfg.cutoffs)?;
            measure_dims.push(json!({ "t": tt, "dimension": dimension_of_measure(&g, &data)? }));
        }
        let mut tm = Timings::default();
        tm.record("dimension", t);
        let ladder_csv: String = std::iter::once("k,components,min_length,max_length,total_length,removed_fraction,c_n,c_b\n".to_string())
            .chain(ladder.levels.iter().enumerate().map(|(i, lv)| {
                format!(
                    "{},{},{},{},{},{},{},{}\n",
                    lv.k,
                    lv.components.len(),
                    fmt17(lv.min_length),
                    fmt17(lv.max_length),
                    fmt17(lv.total_length),
                    fmt17(lv.removed_fraction),
                    fmt17(ladder.c_n[i]),
                    fmt17(ladder.c_b[i])
                )
            }))
            .collect();
        let box_json = |b: &BoxFit| json!({ "dimension": b.dimension, "r2": b.r2 });
        let data_json = json!({
            "t_u": t_u,
            "omega_box": box_json(&omega_box),
            "omega_box_error": (omega_box.dimension - t_u).abs(),
            "ladder": to_value(&ladder),
            "constant_spread": { "k_lo": k_lo, "k_hi": cfg.ladder_levels, "c_n": spread.0, "c_b": spread.1 },
            "ladder_box": box_json(&e_box),
            "lower_bound_ok": ladder.lower_bound <= e_box.dimension + 0.05,
            "measure_dimensions": measure_dims,
        });
        self.write_text(s, "box_omega.csv", &omega_box.to_csv())?;
        self.write_text(s, "box_ladder.csv", &e_box.to_csv())?;
        self.write_text(s, "ladder.csv", &ladder_csv)?;
        self.write_artifact(s, "dimension.json", data_json)?;
        self.write_text(s, "timings.txt", &tm.render())
    }

    fn stats(&self) -> Result<()> {
        use rayon::prelude::*;
        let cfg = &self.config;
        let s = Stage::Stats;
        let (sys, data) = self.shift_data()?;
        let bbox: Rect = self.load_as(Stage::Inducing, "summary.json", "/region/bbox")?;
        let t_u: f64 = self.load_as(Stage::Pressure, "pressure.json", "/t_u")?;
        let t = Instant::now();
        let geo = TangencyGeometry::build(&sys.params)?;

        let one_d = lyapunov_u(&MapParams::desk(2.0, 0.0)?, Point::new(0.1234, 0.0), 1_000_000, 100)?;
        let branch_lyap: Vec<Value> = sys
            .branches
            .par_iter()
            .map(|b| match lyapunov_u(&sys.params, geo.leaf.point(b.marked_x), cfg.lyapunov_steps, 0) {
                Ok(e) => json!({ "tau": b.tau, "lambda": e.lambda, "error": e.error }),
                Err(e) => json!({ "tau": b.tau, "failure": e.to_string() }),
            })
            .collect();
        let lambdas: Vec<f64> = branch_lyap.iter().filter_map(|v| v["lambda"].as_f64()).collect();
        let branch_min = lambdas.iter().cloned().fold(f64::INFINITY, f64::min);

        let (_, g) = gibbs_at(&data, cfg.stats_t, &cfg.cutoffs)?;
        let orbit = sample_gibbs_orbit(&geo, &sys, &g, cfg.orbit_length, cfg.seed)?;
        let grown = Rect::new(bbox.x_min - BBOX_TOL, bbox.x_max + BBOX_TOL, bbox.y_min - BBOX_TOL, bbox.y_max + BBOX_TOL);
        let outside = orbit.points.iter().filter(|z| !grown.contains(z)).count();
        let lags: Vec<usize> = (0..=cfg.max_lag).collect();
        let xs = Observable::X.series(&orbit.points);
        let sq = Observable::SqrtDistance { x0: geo.zeta0.x, y0: geo.zeta0.y }.series(&orbit.points);
        let cb = Observable::Coboundary.series(&orbit.points);
        let acf_x = correlation_decay(&xs, &lags)?;
        let acf_sqrt = correlation_decay(&sq, &lags)?;
        let clt_x = clt_test(&xs, cfg.n_block, cfg.n_samples)?;
        let clt_sqrt = clt_test(&sq, cfg.n_block, cfg.n_samples)?;
        let mut coboundary = Vec::new();
        for nb in COBOUNDARY_BLOCKS.iter().copied().filter(|&nb| nb * cfg.n_samples <= cb.len()) {
            coboundary.push(json!({ "block": nb, "sigma": clt_test(&cb, nb, cfg.n_samples)?.sigma }));
        }
        let sigmas: Vec<f64> = coboundary.iter().filter_map(|v| v["sigma"].as_f64()).collect();
        let control = clt_control(cfg.seed, cfg.control_seeds, cfg.control_block, cfg.n_samples)?;

        let (_, gu) = gibbs_at(&data, t_u, &cfg.cutoffs)?;
        let orbit_u = sample_gibbs_orbit(&geo, &sys, &gu, cfg.orbit_length / 4, cfg.seed)?;
        let mut tm = Timings::default();
        tm.record("stats", t);

        let acf_csv: String = std::iter::once("lag,acf_x,acf_sqrt_distance\n".to_string())
            .chain(lags.iter().enumerate().map(|(i, l)| format!("{},{},{}\n", l, fmt17(acf_x.acf[i]), fmt17(acf_sqrt.acf[i]))))
            .collect();
        let data_json = json!({
            "one_dimensional": to_value(&one_d),
            "branch_orbits": branch_lyap,
            "branch_min_lambda": branch_min,
            "branch_escapes": branch_lyap.len() - lambdas.len(),
            "lambda_floor": (2.0 - cfg.epsilon).ln(),
            "kac_lambda_u": lambda_u(&data, &gu),
            "orbit_lambda_u": orbit_u.lyapunov(&sys),
            "orbit": {
                "t": cfg.stats_t,
                "length": orbit.points.len(),
                "returns": orbit.symbols.len(),
                "mean_tau": g.mean_tau,
                "mean_tau_empirical": orbit.points.len() as f64 / orbit.symbols.len() as f64,
                "outside_bbox": outside,
                "bbox_tolerance": BBOX_TOL,
            },
            "acf_x": to_value(&acf_x),
            "acf_sqrt_distance": to_value(&acf_sqrt),
            "clt_x": to_value(&clt_x),
            "clt_sqrt_distance": to_value(&clt_sqrt),
            "coboundary": coboundary,
            "coboundary_shrinks": sigmas.len() >= 2 && sigmas.windows(2).all(|w| w[1] < w[0]),
            "clt_control": control,
        });
        self.write_text(s, "acf.csv", &acf_csv)?;
        self.write_artifact(s, "stats.json", data_json)?;
        self.write_text(s, "timings.txt", &tm.render())
    }
}

/// KS test of block sums of i.i.d. uniform samples, once per seed.
pub fn clt_control(seed: u64, seeds: usize, n_block: usize, n_samples: usize) -> Result<Value> {
    use rand::{Rng, SeedableRng};
    let p: Vec<f64> = (0..seeds as u64)
        .map(|k| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(k));
            let xs: Vec<f64> = (0..n_block * n_samples).map(|_| rng.gen_range(-1.0..1.0)).collect();
            clt_test(&xs, n_block, n_samples).map(|r| r.p_value)
        })
        .collect::<Result<_>>()?;
    let passed = p.iter().filter(|&&v| v > 0.01).count();
    Ok(json!({
        "seeds": seeds,
        "block": n_block,
        "samples": n_samples,
        "passed": passed,
        "fraction": passed as f64 / seeds.max(1) as f64,
        "min_p": p.iter().cloned().fold(f64::INFINITY, f64::min),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub measured: Value,
    pub threshold: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub id: u32,
    pub name: String,
    pub pass: bool,
    pub checks: Vec<Check>,
}

impl Criterion {
    fn new(id: u32, name: &str, checks: Vec<Check>) -> Self {
        let pass = !checks.is_empty() && checks.iter().all(|c| c.pass);
        Criterion { id, name: name.to_string(), pass, checks }
    }

    /// One line: id, verdict, name and the failing checks.
    pub fn line(&self) -> String {
        let failed: Vec<String> = self.checks.iter().filter(|c| !c.pass).map(|c| format!("{} (measured {}, need {})", c.name, c.measured, c.threshold)).collect();
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        if failed.is_empty() {
            format!("criterion {:>2} {verdict} {}", self.id, self.name)
        } else {
            format!("criterion {:>2} {verdict} {}: {}", self.id, self.name, failed.join("; "))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub code_version: String,
    pub config: Value,
    pub criteria: Vec<Criterion>,
    pub passed: usize,
    pub total: usize,
    pub pass: bool,
}

fn check(name: &str, measured: Option<f64>, ok: impl Fn(f64) -> bool, threshold: &str) -> Check {
    Check {
        name: name.to_string(),
        pass: measured.map_or(false, |m| m.is_finite() && ok(m)),
        measured: measured.map_or(Value::Null, |m| json!(m)),
        threshold: threshold.to_string(),
    }
}

fn flag(name: &str, value: Option<bool>, measured: Value) -> Check {
    Check { name: name.to_string(), pass: value == Some(true), measured, threshold: "true".into() }
}

fn failed(name: &str, err: &HenonError) -> Check {
    Check { name: name.to_string(), pass: false, measured: json!(err.to_string()), threshold: "readable artifact".into() }
}

fn num(v: &Value, ptr: &str) -> Option<f64> {
    v.pointer(ptr).and_then(Value::as_f64)
}

/// Rows `(t, P)` of `pressure_curve.csv`.
fn read_curve_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let mut it = line.split(',');
        let t = it.next().and_then(|x| x.parse().ok());
        let p = it.next().and_then(|x| x.parse().ok());
        match (t, p) {
            (Some(t), Some(p)) => rows.push((t, p)),
            _ => return Err(HenonError::Format(format!("bad row {line:?} in {}", path.display()))),
        }
    }
    Ok(rows)
}

/// Files whose bytes differ between two output trees, over the JSON and CSV
/// artifacts of every stage.
pub fn compare_trees(a: &Path, b: &Path) -> Result<Vec<String>> {
    let mut diffs = Vec::new();
    let mut compared = 0;
    for s in Stage::ALL {
        let da = a.join(s.name());
        let mut names: Vec<String> = fs::read_dir(&da)?
            .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
            .filter(|n| n.ends_with(".json") || n.ends_with(".csv"))
            .collect();
        names.sort();
        for n in names {
            compared += 1;
            let other = fs::read(b.join(s.name()).join(&n)).ok();
            if other.as_deref() != Some(&fs::read(da.join(&n))?[..]) {
                diffs.push(format!("{}/{n}", s.name()));
            }
        }
    }
    if compared == 0 {
        return Err(HenonError::Dependency("no artifacts to compare".into()));
    }
    Ok(diffs)
}

impl Workspace {
    fn doc(&self, s: Stage, file: &str) -> Result<Value> {
        self.load(s, file)
    }

    /// Evaluates criteria 1 to 12 and writes `report.json`. Missing stage
    /// outputs are a dependency error; unreadable or altered ones fail the
    /// criteria that use them. With `rerun`, the pipeline is repeated in a
    /// scratch directory for the determinism check.
    pub fn report(&self, rerun: bool) -> Result<Report> {
        for s in Stage::ALL {
            let p = self.stage_dir(s).join(s.primary());
            if !p.exists() {
                return Err(HenonError::Dependency(format!("stage {} has no output at {}; run the pipeline first", s.name(), p.display())));
            }
        }
        let cfg = &self.config;
        let ln2 = std::f64::consts::LN_2;
        let mut criteria = Vec::new();

        let mut c = Vec::new();
        match self.doc(Stage::Manifolds, "a_star.json") {
            Ok(d) => {
                c.push(check("a_star at tol 1e-10 near 2", num(&d, "/coarse/a_star"), |a| (a - 2.0).abs() < 0.1, "|a* - 2| < 0.1"));
                let tm = read_timings(&self.stage_dir(Stage::Manifolds).join("timings_astar.txt"));
                c.push(check("seconds to converge at tol 1e-10", tm.get("find_astar_default_tol").copied(), |t| t < 60.0, "< 60"));
            }
            Err(e) => c.push(failed("a_star.json", &e)),
        }
        let oracle = cfg.template().and_then(|t| find_first_bifurcation(&MapParams { b: 0.0, ..t }, self.bracket(), DEFAULT_TOL_A));
        c.push(check("a_star of the b = 0 oracle", oracle.ok().map(|b| b.a_star), |a| a == 2.0, "exactly 2"));
        criteria.push(Criterion::new(1, "bifurcation anchor", c));

        let c = match self.doc(Stage::Manifolds, "tangency.json") {
            Ok(d) => vec![
                check("quadratic fit alpha", num(&d, "/quadratic/alpha"), |a| a.abs() < 1e-6, "|alpha| < 1e-6"),
                check("quadratic fit relative residual", num(&d, "/quadratic/rel_residual"), |r| r < 0.05, "< 0.05"),
            ],
            Err(e) => vec![failed("tangency.json", &e)],
        };
        criteria.push(Criterion::new(2, "quadratic tangency signature", c));

        let pressure = self.doc(Stage::Pressure, "pressure.json");
        let mut c = Vec::new();
        match &pressure {
            Ok(d) => {
                c.push(check("P(0) relative to log 2", num(d, "/p0/value"), |p| ((p - ln2) / ln2).abs() < 0.05, "within 5%"));
                c.push(check("P(1)", num(d, "/p1/value"), |p| p < 0.0, "< 0"));
                c.push(check("smallest second difference", num(d, "/curve/min_second_difference"), |m| m >= -1e-8, ">= -1e-8"));
                let tm = read_timings(&self.stage_dir(Stage::Pressure).join("timings.txt"));
                c.push(check("seconds for the pressure curve", tm.get("pressure_curve").copied(), |t| t < 600.0, "< 600"));
                match read_curve_csv(&self.stage_dir(Stage::Pressure).join("pressure_curve.csv")) {
                    Ok(rows) => {
                        let json_rows: Vec<(f64, f64)> = d["curve"]["samples"]
                            .as_array()
                            .map(|a| a.iter().filter_map(|s| Some((s["t"].as_f64()?, s["value"].as_f64()?))).collect())
                            .unwrap_or_default();
                        let unit: Vec<&(f64, f64)> = rows.iter().filter(|r| (0.0..=1.0).contains(&r.0)).collect();
                        let sign_change = unit.windows(2).any(|w| w[0].1 > 0.0 && w[1].1 < 0.0);
                        c.push(flag("sign change of P on (0, 1) in pressure_curve.csv", Some(sign_change), json!(sign_change)));
                        c.push(flag("pressure_curve.csv agrees with pressure.json", Some(rows == json_rows), json!(rows.len())));
                    }
                    Err(e) => c.push(failed("pressure_curve.csv", &e)),
                }
            }
            Err(e) => c.push(failed("pressure.json", e)),
        }
        criteria.push(Criterion::new(3, "pressure anchors", c));

        let mut c = Vec::new();
        match &pressure {
            Ok(d) => {
                let t_u = num(d, "/t_u");
                c.push(check("t^u", t_u, |t| t > ln2 / 5f64.ln() && t < 1.0, "in (log 2 / log 5, 1)"));
                match self.doc(Stage::Dimension, "dimension.json") {
                    Ok(dd) => {
                        let err = num(&dd, "/omega_box/dimension").zip(t_u).map(|(a, b)| (a - b).abs());
                        c.push(check("|box dimension of the Omega slice - t^u|", err, |e| e < 0.05, "< 0.05"));
                    }
                    Err(e) => c.push(failed("dimension.json", &e)),
                }
                let mut pts: Vec<(f64, f64)> = d["trend"]
                    .as_array()
                    .map(|a| a.iter().filter_map(|v| Some((v["b"].as_f64()?, v["t_u"].as_f64()?))).collect())
                    .unwrap_or_default();
                if let Some(t) = t_u {
                    pts.push((cfg.b, t));
                }
                pts.sort_by(|x, y| y.0.total_cmp(&x.0));
                let monotone = pts.len() >= 2 && pts.windows(2).all(|w| w[0].1 < w[1].1);
                c.push(flag("t^u increases as b decreases", Some(monotone), to_value(&pts)));
            }
            Err(e) => c.push(failed("pressure.json", e)),
        }
        criteria.push(Criterion::new(4, "dimension root", c));

        let mut c = Vec::new();
        let hand = t_interval(1.0, ln2, 0.01);
        c.push(check("t_+ at (1, log 2, 0.01)", hand.as_ref().ok().map(|p| p.1), |t| (t - 6.931).abs() < 1e-3, "6.931 +- 1e-3"));
        c.push(check("t_- at (1, log 2, 0.01)", hand.as_ref().ok().map(|p| p.0), |t| (t + 0.871).abs() < 1e-3, "-0.871 +- 1e-3"));
        match &pressure {
            Ok(d) => {
                let (lo, hi) = (num(d, "/curve/t_minus"), num(d, "/curve/t_plus"));
                let [s_lo, s_hi] = cfg.study_interval;
                let inside = lo.zip(hi).map(|(a, b)| a < s_lo && s_hi < b);
                c.push(flag("study interval inside (t_-, t_+)", inside, json!([lo, hi])));
            }
            Err(e) => c.push(failed("pressure.json", e)),
        }
        criteria.push(Criterion::new(5, "interval formula", c));

        let c = match oracle_suite(cfg.oracle_cases, cfg.seed) {
            Ok(o) => vec![
                check("Gibbs weights against Bernoulli", Some(o.max_weight_error), |e| e <= 1e-10, "<= 1e-10"),
                check("Gurevich pressure against log-sum-exp", Some(o.max_pressure_error), |e| e <= 1e-10, "<= 1e-10"),
                check("lifted entropy against the tower chain", Some(o.max_lift_error), |e| e <= 1e-10, "<= 1e-10"),
            ],
            Err(e) => vec![failed("oracle suite", &e)],
        };
        criteria.push(Criterion::new(6, "shift oracle suite", c));

        let mut c = Vec::new();
        match self.doc(Stage::Inducing, "summary.json") {
            Ok(d) => {
                let violations = d.pointer("/audit/violations").and_then(Value::as_array).map(|v| v.len());
                c.push(check("branches outside the derivative envelope", violations.map(|v| v as f64), |v| v == 0.0, "0"));
                c.push(check("growth rate of S(n)", num(&d, "/census/growth_rate"), |g| g <= cfg.epsilon, "<= epsilon"));
                c.push(check("branches with tau = 2", num(&d, "/system/tau2"), |n| n == 2.0, "exactly 2"));
            }
            Err(e) => c.push(failed("summary.json", &e)),
        }
        match self.load_as::<InducedSystem>(Stage::Inducing, "system.json", "") {
            Ok(sys) => {
                let mut dom: Vec<(f64, f64)> = sys.branches.iter().map(|b| (b.x_lo, b.x_hi)).collect();
                dom.sort_by(|x, y| x.0.total_cmp(&y.0));
                let disjoint = dom.iter().all(|d| d.0 < d.1) && dom.windows(2).all(|w| w[0].1 <= w[1].0);
                c.push(flag("branch domains pairwise disjoint", Some(disjoint), json!(dom.len())));
            }
            Err(e) => c.push(failed("system.json", &e)),
        }
        criteria.push(Criterion::new(7, "inducing scheme audit", c));

        let c = match &pressure {
            Ok(d) => {
                let slope = num(d, "/variation/fit/slope");
                let sigma1 = num(d, "/variation/sigma1");
                let decays = slope.zip(sigma1).map(|(s, g)| s <= -g.ln());
                vec![
                    flag("log V_n slope at most -log sigma_1", decays, json!(slope)),
                    check("R^2 of the fit", num(d, "/variation/fit/r2"), |r| r > 0.9, "> 0.9"),
                ]
            }
            Err(e) => vec![failed("pressure.json", e)],
        };
        criteria.push(Criterion::new(8, "variation decay", c));

        let c = match self.doc(Stage::Dimension, "dimension.json") {
            Ok(d) => {
                let lb = num(&d, "/ladder/lower_bound");
                let bd = num(&d, "/ladder_box/dimension");
                vec![
                    flag("ladder nested", d.pointer("/ladder/nested").and_then(Value::as_bool), Value::Null),
                    check("spread of C_N", num(&d, "/constant_spread/c_n"), |s| s < 0.3, "< 0.3"),
                    check("spread of C_b", num(&d, "/constant_spread/c_b"), |s| s < 0.3, "< 0.3"),
                    check("lower bound minus proxy box dimension", lb.zip(bd).map(|(a, b)| a - b), |x| x <= 0.05, "<= 0.05"),
                ]
            }
            Err(e) => vec![failed("dimension.json", &e)],
        };
        criteria.push(Criterion::new(9, "E_k ladder", c));

        let stats = self.doc(Stage::Stats, "stats.json");
        let c = match &stats {
            Ok(d) => vec![
                check("1-D oracle lambda minus log 2", num(d, "/one_dimensional/lambda").map(|l| l - ln2), |x| x.abs() <= 0.01, "|.| <= 0.01"),
                check("smallest branch-orbit lambda", num(d, "/branch_min_lambda"), |l| l >= (2.0 - cfg.epsilon).ln() - 0.02, ">= log(2 - epsilon) - 0.02"),
                check("branch orbits that escaped", num(d, "/branch_escapes"), |n| n == 0.0, "0"),
                check("Kac lambda^u minus log 2", num(d, "/kac_lambda_u").map(|l| l - ln2), |x| x.abs() < 0.05, "|.| < 0.05"),
            ],
            Err(e) => vec![failed("stats.json", e)],
        };
        criteria.push(Criterion::new(10, "Lyapunov anchors", c));

        let c = match &stats {
            Ok(d) => {
                let sig: Vec<f64> = d["coboundary"].as_array().map(|a| a.iter().filter_map(|v| v["sigma"].as_f64()).collect()).unwrap_or_default();
                let shrinks = sig.len() >= 2 && sig.windows(2).all(|w| w[1] < w[0]);
                vec![
                    check("i.i.d. control seeds passing KS at p > 0.01", num(d, "/clt_control/fraction"), |f| f >= 0.95, ">= 0.95"),
                    check("fitted ACF rate of x", num(d, "/acf_x/rate"), |r| r > 0.0 && r < 1.0, "in (0, 1)"),
                    check("R^2 of the ACF fit of x", num(d, "/acf_x/r2"), |r| r > 0.8, "> 0.8"),
                    flag("coboundary sigma shrinks with block length", Some(shrinks), to_value(&sig)),
                ]
            }
            Err(e) => vec![failed("stats.json", e)],
        };
        criteria.push(Criterion::new(11, "statistics", c));

        let c = if rerun {
            let scratch = self.root.join(".rerun");
            let _ = fs::remove_dir_all(&scratch);
            let mut cfg2 = cfg.clone();
            cfg2.out = scratch.clone();
            let res = Workspace::new(cfg2).run_stages(&Stage::ALL).and_then(|_| compare_trees(&self.root, &scratch));
            let _ = fs::remove_dir_all(&scratch);
            match res {
                Ok(diffs) => vec![Check {
                    name: "artifacts differing on rerun".into(),
                    pass: diffs.is_empty(),
                    measured: json!(diffs),
                    threshold: "none".into(),
                }],
                Err(e) => vec![failed("rerun", &e)],
            }
        } else {
            vec![Check { name: "rerun".into(), pass: false, measured: json!("skipped"), threshold: "rerun performed".into() }]
        };
        criteria.push(Criterion::new(12, "determinism", c));

        let passed = criteria.iter().filter(|c| c.pass).count();
        let report = Report {
            schema: SCHEMA_VERSION.into(),
            code_version: CODE_VERSION.into(),
            config: cfg.echo(),
            total: criteria.len(),
            pass: passed == criteria.len(),
            passed,
            criteria,
        };
        fs::write(self.root.join("report.json"), to_json17(&to_value(&report)))?;
        Ok(report)
    }
}

#[derive(Parser, Debug)]
#[command(name = "henon-thermo", version, about = "Equilibrium states of Henon maps at the first bifurcation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug, Default, Clone)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// "auto" or a fixed value.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub a: Option<String>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub b: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub epsilon: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory; overrides HENON_THERMO_OUT, which overrides the
    /// config file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub stages: Option<Vec<Stage>>,
    /// Bisection bracket for a*, as LO,HI.
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    pub bracket: Option<Vec<f64>>,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Locate a* and write manifolds/a_star.json.
    FindAstar,
    /// a*, the quadratic tangency fit and the saddle manifolds.
    Manifolds,
    /// Return branches of the inducing scheme and their audit.
    Inducing,
    /// Pressure curve, t^u, Gibbs state and variation profile.
    Pressure,
    /// Box dimensions and the E_k ladder.
    Dimension,
    /// Lyapunov exponents, correlations and CLT checks.
    Stats,
    /// Evaluate the acceptance criteria from the pipeline outputs.
    Report {
        /// Do not repeat the pipeline for the determinism check.
        #[arg(long)]
        skip_rerun: bool,
        /// Exit with status 1 when a criterion fails.
        #[arg(long)]
        strict: bool,
    },
    /// Run the selected stages in dependency order.
    Pipeline,
}

pub const OUT_ENV: &str = "HENON_THERMO_OUT";

/// Configuration from the config file (or defaults) with flags applied.
pub fn resolve_config(o: &Overrides) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(a) = &o.a {
        cfg.a = match a.parse::<f64>() {
            Ok(v) => AValue::Fixed(v),
            Err(_) => AValue::Keyword(a.clone()),
        };
    }
    if let Some(b) = o.b {
        cfg.b = b;
    }
    if let Some(e) = o.epsilon {
        cfg.epsilon = e;
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(j) = o.jobs {
        cfg.jobs = Some(j);
    }
    if let Some(s) = &o.stages {
        cfg.stages = s.clone();
    }
    if let Some(br) = &o.bracket {
        match br[..] {
            [lo, hi] => cfg.bracket = [lo, hi],
            _ => return Err(invalid("--bracket takes two values LO,HI")),
        }
    }
    match (&o.out, std::env::var_os(OUT_ENV)) {
        (Some(out), _) => cfg.out = out.clone(),
        (None, Some(env)) => cfg.out = PathBuf::from(env),
        _ => {}
    }
    Ok(cfg)
}

/// 2 for bad input, 3 for numerical non-convergence, 1 otherwise.
pub fn exit_code(e: &HenonError) -> i32 {
    match e {
        HenonError::InvalidInput(_)
        | HenonError::InvalidParams(_)
        | HenonError::Bracket { .. }
        | HenonError::Dependency(_)
        | HenonError::NoSaddle(_)
        | HenonError::SingularMap => 2,
        HenonError::Format(m) if m.starts_with("config") => 2,
        HenonError::NoConvergence { .. }
        | HenonError::RefinementNeeded { .. }
        | HenonError::Tail(_)
        | HenonError::Depth { .. }
        | HenonError::Degenerate(_) => 3,
        _ => 1,
    }
}

fn stage_of(c: &Command) -> Option<Stage> {
    match c {
        Command::Manifolds => Some(Stage::Manifolds),
        Command::Inducing => Some(Stage::Inducing),
        Command::Pressure => Some(Stage::Pressure),
        Command::Dimension => Some(Stage::Dimension),
        Command::Stats => Some(Stage::Stats),
        _ => None,
    }
}

/// Runs a parsed command; the returned integer is the process exit status.
pub fn run(cli: &Cli) -> Result<i32> {
    let cfg = resolve_config(&cli.overrides)?;
    cfg.validate(matches!(cli.command, Command::FindAstar))?;
    if let Some(j) = cfg.jobs {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let ws = Workspace::new(cfg);
    match &cli.command {
        Command::FindAstar => {
            let a = ws.find_astar()?;
            println!("a_star {}", fmt17(a));
        }
        Command::Pipeline => {
            ws.run_stages(&ws.config.stages)?;
            println!("wrote {}", ws.root.display());
        }
        Command::Report { skip_rerun, strict } => {
            let rep = ws.report(!skip_rerun)?;
            for c in &rep.criteria {
                println!("{}", c.line());
            }
            println!("{} of {} criteria pass", rep.passed, rep.total);
            if *strict && !rep.pass {
                return Ok(1);
            }
        }
        c => {
            let s = stage_of(c).expect("remaining commands are stages");
            ws.run_stage(s)?;
            println!("wrote {}", ws.stage_dir(s).display());
        }
    }
    Ok(0)
}

/// Parses `args` and runs; usage errors give status 2.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json17_round_trips_floats() {
        let xs = [0.1, -1.0 / 3.0, 1e-300, 2.0, 0.0, 123456789.123456789, f64::MIN_POSITIVE];
        let text = to_json17(&json!({ "x": xs, "n": 7, "s": "a\"b" }));
        let back: Value = serde_json::from_str(&text).unwrap();
        let ys: Vec<f64> = back["x"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        assert_eq!(ys, xs);
        assert_eq!(back["n"], 7);
        assert_eq!(back["s"], "a\"b");
        assert!(text.contains("3.3333333333333331e-1"));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn json17_writes_non_finite_as_null() {
        assert_eq!(to_json17(&json!({ "v": [1.5] })), "{\n  \"v\": [1.5000000000000000e0]\n}\n");
        let v = serde_json::to_value(f64::NAN).unwrap();
        assert_eq!(to_json17(&v), "null\n");
    }

    #[test]
    fn config_defaults_validate() {
        let cfg = RunConfig::default();
        cfg.validate(false).unwrap();
        assert_eq!(cfg.fixed_a().unwrap(), None);
        assert!(cfg.t_grid.contains(&0.0) && cfg.t_grid.contains(&1.0));
    }

    #[test]
    fn config_parses_and_rejects_unknown_keys() {
        let cfg = RunConfig::from_toml("a = 1.99\nb = 1e-3\nseed = 3\nstages = [\"manifolds\", \"inducing\"]\n").unwrap();
        assert_eq!(cfg.fixed_a().unwrap(), Some(1.99));
        assert_eq!(cfg.b, 1e-3);
        assert_eq!(cfg.stages, vec![Stage::Manifolds, Stage::Inducing]);
        assert_eq!(cfg.epsilon, 0.5);
        let err = RunConfig::from_toml("bee = 1\n").unwrap_err();
        assert_eq!(exit_code(&err), 2);
        let cfg = RunConfig::from_toml("a = \"manual\"\n").unwrap();
        assert!(cfg.validate(false).is_err());
    }

    #[test]
    fn config_ranges() {
        let with = |f: &dyn Fn(&mut RunConfig)| {
            let mut c = RunConfig::default();
            f(&mut c);
            c.validate(false)
        };
        assert!(with(&|c| c.b = 0.02).is_err());
        assert!(with(&|c| c.b = 0.0).is_err());
        assert!(with(&|c| c.epsilon = 0.6).is_err());
        assert!(with(&|c| c.t_grid = vec![-1.0, 0.0, 1.0]).is_err());
        assert!(with(&|c| c.t_grid = vec![0.0, 0.5, 0.4]).is_err());
        assert!(with(&|c| c.study_interval = [-0.4, 0.8]).is_err());
        assert!(with(&|c| c.bracket = [2.1, 1.9]).is_err());
        assert!(with(&|c| c.cutoffs = vec![]).is_err());
        assert!(with(&|c| c.orbit_length = 1000).is_err());
        let mut c = RunConfig::default();
        c.b = 0.0;
        c.validate(true).unwrap();
    }

    #[test]
    fn echo_omits_run_plumbing() {
        let mut a = RunConfig::default();
        let mut b = RunConfig::default();
        a.out = "x".into();
        b.jobs = Some(3);
        assert_eq!(a.echo(), b.echo());
        b.seed = 8;
        assert_ne!(a.echo(), b.echo());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&HenonError::Bracket { lo: 1.0, hi: 2.0, gap_lo: 1.0, gap_hi: 1.0 }), 2);
        assert_eq!(exit_code(&HenonError::Dependency("x".into())), 2);
        assert_eq!(exit_code(&HenonError::NoConvergence { iterations: 1, detail: String::new() }), 3);
        assert_eq!(exit_code(&HenonError::Tail("x".into())), 3);
        assert_eq!(exit_code(&HenonError::Io("x".into())), 1);
        assert_eq!(exit_code(&HenonError::Format("artifact".into())), 1);
    }

    #[test]
    fn schema_major_version_is_checked() {
        check_schema(&json!({ "schema": "1.7" })).unwrap();
        assert!(check_schema(&json!({ "schema": "2.0" })).is_err());
        assert!(check_schema(&json!({})).is_err());
    }

    #[test]
    fn stage_order_follows_dependencies() {
        for (i, s) in Stage::ALL.iter().enumerate() {
            assert!(s.deps().iter().all(|d| Stage::ALL[..i].contains(d)));
        }
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from(["henon-thermo", "pipeline", "--b", "1e-3", "--seed", "9", "--stages", "manifolds,inducing", "--bracket", "1.95,2.05"]).unwrap();
        let cfg = resolve_config(&cli.overrides).unwrap();
        assert_eq!(cfg.b, 1e-3);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.stages, vec![Stage::Manifolds, Stage::Inducing]);
        assert_eq!(cfg.bracket, [1.95, 2.05]);
        let cli = Cli::try_parse_from(["henon-thermo", "find-astar", "--bracket", "1.9"]).unwrap();
        assert!(resolve_config(&cli.overrides).is_err());
    }
}
