use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use henon_thermo::cli::{main_with, to_json17, RunConfig, Stage, Workspace, CODE_VERSION, SCHEMA_VERSION};
use henon_thermo::error::HenonError;
use serde_json::Value;

fn cli(args: &[&str]) -> i32 {
    main_with(std::iter::once("henon-thermo").chain(args.iter().copied()))
}

fn scratch() -> PathBuf {
    tempfile::tempdir().expect("tempdir").keep()
}

/// One default pipeline run shared by the tests that only read it.
fn shared() -> &'static Path {
    static RUN: OnceLock<PathBuf> = OnceLock::new();
    RUN.get_or_init(|| {
        let out = scratch().join("out");
        assert_eq!(cli(&["pipeline", "--out", out.to_str().unwrap()]), 0);
        out
    })
}

fn workspace(out: &Path) -> Workspace {
    Workspace::new(RunConfig { out: out.to_path_buf(), ..RunConfig::default() })
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Copy of the stage directories of a run.
fn copy_run(from: &Path) -> PathBuf {
    let to = scratch().join("out");
    for s in Stage::ALL {
        let (src, dst) = (from.join(s.name()), to.join(s.name()));
        fs::create_dir_all(&dst).unwrap();
        for e in fs::read_dir(&src).unwrap() {
            let e = e.unwrap();
            fs::copy(e.path(), dst.join(e.file_name())).unwrap();
        }
    }
    to
}

fn edit_json(path: &Path, f: impl FnOnce(&mut Value)) {
    let mut doc = read_json(path);
    f(&mut doc);
    fs::write(path, to_json17(&doc)).unwrap();
}

#[test]
fn artifacts_are_stamped() {
    let out = shared();
    let echo: Value = serde_json::from_str(&to_json17(&RunConfig::default().echo())).unwrap();
    for s in Stage::ALL {
        let dir = out.join(s.name());
        assert!(!dir.join("STALE").exists(), "{}", s.name());
        let mut n = 0;
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.extension().is_some_and(|x| x == "json") {
                let doc = read_json(&p);
                assert_eq!(doc["schema"], SCHEMA_VERSION, "{}", p.display());
                assert_eq!(doc["code_version"], CODE_VERSION);
                assert_eq!(doc["stage"], s.name());
                assert_eq!(doc["config"], echo, "{}", p.display());
                n += 1;
            }
        }
        assert!(n >= 1, "no JSON artifact for {}", s.name());
    }
}

#[test]
fn pressure_curve_csv_changes_sign_on_the_unit_interval() {
    let text = fs::read_to_string(shared().join("pressure/pressure_curve.csv")).unwrap();
    assert!(!text.contains('\r'));
    assert!(text.ends_with('\n'));
    let rows: Vec<(f64, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let mut it = l.split(',');
            (it.next().unwrap().parse().unwrap(), it.next().unwrap().parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), RunConfig::default().t_grid.len());
    let unit: Vec<_> = rows.iter().filter(|r| (0.0..=1.0).contains(&r.0)).collect();
    assert!(unit.windows(2).any(|w| w[0].1 > 0.0 && w[1].1 < 0.0));
}

#[test]
fn missing_dependency_names_the_stage() {
    let out = scratch().join("out");
    assert_eq!(cli(&["inducing", "--out", out.to_str().unwrap()]), 2);
    match workspace(&out).run_stage(Stage::Inducing) {
        Err(HenonError::Dependency(m)) => assert!(m.contains("manifolds"), "{m}"),
        r => panic!("expected a dependency error, got {r:?}"),
    }
    assert!(!out.join("inducing/system.json").exists());
}

#[test]
fn report_json_matches_its_schema() {
    let out = shared();
    assert_eq!(cli(&["report", "--skip-rerun", "--out", out.to_str().unwrap()]), 0);
    let schema = read_json(&Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/report.schema.json"));
    let validator = jsonschema::validator_for(&schema).unwrap();
    let report = read_json(&out.join("report.json"));
    let errors: Vec<String> = validator.iter_errors(&report).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
    let mut broken = report.clone();
    broken["total"] = 11.into();
    assert!(!validator.is_valid(&broken));
}

#[test]
fn altered_pressure_artifact_fails_its_criterion() {
    let out = copy_run(shared());
    edit_json(&out.join("pressure/pressure.json"), |d| d["data"]["p0"]["value"] = 0.0.into());
    let report = workspace(&out).report(false).unwrap();
    let c3 = &report.criteria[2];
    assert_eq!(c3.id, 3);
    assert!(!c3.pass);
    let failing: Vec<&str> = c3.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    assert_eq!(failing, ["P(0) relative to log 2"]);
    assert!(!report.pass);
}

#[test]
fn schema_major_version_is_checked() {
    let out = copy_run(shared());
    let ws = workspace(&out);
    let path = out.join("manifolds/a_star.json");
    edit_json(&path, |d| d["schema"] = "1.7".into());
    assert!(ws.load(Stage::Manifolds, "a_star.json").is_ok());
    edit_json(&path, |d| d["schema"] = "2.0".into());
    assert!(matches!(ws.load(Stage::Manifolds, "a_star.json"), Err(HenonError::Format(_))));
}

#[test]
fn cache_from_another_configuration_is_rejected() {
    let ws = Workspace::new(RunConfig { out: shared().to_path_buf(), epsilon: 0.4, ..RunConfig::default() });
    assert!(matches!(ws.load(Stage::Inducing, "system.json"), Err(HenonError::Dependency(_))));
    assert!(ws.run_stage(Stage::Pressure).is_err());
    assert!(!shared().join("pressure/STALE").exists());
}

#[test]
fn failing_stage_leaves_a_stale_marker() {
    let dir = scratch();
    let config = dir.join("run.toml");
    fs::write(&config, "variation_depth = 12\n").unwrap();
    let out = dir.join("out");
    let (c, o) = (config.to_str().unwrap(), out.to_str().unwrap());
    assert_eq!(cli(&["pipeline", "--config", c, "--out", o, "--stages", "manifolds,inducing,pressure"]), 3);
    assert!(out.join("inducing/system.json").exists());
    assert!(out.join("pressure/STALE").exists());
    assert!(!out.join("pressure/pressure.json").exists());
    assert_eq!(cli(&["dimension", "--config", c, "--out", o]), 2);
}

#[test]
fn find_astar_exit_codes() {
    let out = scratch().join("out");
    let o = out.to_str().unwrap();
    assert_eq!(cli(&["find-astar", "--b", "0", "--out", o]), 0);
    assert_eq!(read_json(&out.join("manifolds/a_star.json"))["data"]["a_star"], 2.0);
    assert_eq!(cli(&["find-astar", "--bracket", "1.0,1.2", "--out", o]), 2);
    assert_eq!(cli(&["find-astar", "--bracket", "1.9", "--out", o]), 2);
}

#[test]
fn bad_input_exits_with_2() {
    let dir = scratch();
    let o = dir.join("out");
    let o = o.to_str().unwrap();
    assert_eq!(cli(&["frobnicate"]), 2);
    assert_eq!(cli(&["pipeline", "--b", "0.5", "--out", o]), 2);
    let config = dir.join("bad.toml");
    fs::write(&config, "no_such_key = 1\n").unwrap();
    assert_eq!(cli(&["pipeline", "--config", config.to_str().unwrap(), "--out", o]), 2);
    fs::write(&config, "ladder_levels = 40\n").unwrap();
    assert_eq!(cli(&["pipeline", "--config", config.to_str().unwrap(), "--out", o]), 2);
    assert_eq!(cli(&["report", "--out", o]), 2);
}
