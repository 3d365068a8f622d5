use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture(name: &str) -> PathBuf {
    root().join("fixtures").join(name)
}

fn sweepctl(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sweepctl"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("SWEEPCTL_THREADS")
        .output()
        .expect("sweepctl runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn assert_schema(instance: &Value, schema: &str) {
    let schema = read_json(&root().join("schemas").join(schema));
    let v = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = v.iter_errors(instance).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{errors:#?}");
}

#[test]
fn fixtures_match_problem_schema() {
    for f in ["wall_1d.json", "moving_wall.json", "interior.json", "obtuse_corner.json", "two_sphere.json"] {
        assert_schema(&read_json(&fixture(f)), "problem.schema.json");
    }
}

#[test]
fn converge_on_wall() {
    let dir = tempfile::tempdir().unwrap();
    let o = sweepctl(&["converge", "--problem", fixture("wall_1d.json").to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&dir.path().join("convergence.json"));
    assert_schema(&r, "convergence.schema.json");
    let e: Vec<f64> = r["report"]["sup_errors"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(e.len(), 5);
    assert!(e.windows(2).all(|w| w[1] < w[0]), "{e:?}");
    assert_eq!(r["report"]["verdict"], Value::Bool(true));
}

#[test]
fn validate_obtuse_corner_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = sweepctl(&["validate", "--problem", fixture("obtuse_corner.json").to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let r = read_json(&dir.path().join("a1_report.json"));
    assert_schema(&r, "a1_report.schema.json");
    let checks = r["checks"].as_array().unwrap();
    let obtuse = checks.iter().find(|c| c["name"] == "non_obtuse").unwrap();
    assert_eq!(obtuse["pass"], Value::Bool(false));
}

#[test]
fn validate_two_sphere_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = sweepctl(&["validate", "--problem", fixture("two_sphere.json").to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert_schema(&read_json(&dir.path().join("a1_report.json")), "a1_report.schema.json");
}

#[test]
fn certify_interior() {
    let dir = tempfile::tempdir().unwrap();
    let o =
        sweepctl(&["certify", "--problem", fixture("interior.json").to_str().unwrap(), "--gamma", "100"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&dir.path().join("mp_report.json"));
    assert_schema(&r, "mp_report.schema.json");
    assert_eq!(r["report"]["branch"], "corollary");
    assert!(r["report"]["conditions"].as_array().unwrap().iter().all(|c| c["pass"] == Value::Bool(true)));
    let adj = std::fs::read_to_string(dir.path().join("adjoint.csv")).unwrap();
    assert!(adj.starts_with("t,p1,p2,d1\n"));
    let tr = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(tr.starts_with("t,x1,x2,u1,u2,xi1\n"));
}

#[test]
fn adjoint_and_simulate_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let wall = fixture("wall_1d.json");
    let o = sweepctl(&["adjoint", "--problem", wall.to_str().unwrap(), "--gamma", "200"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_schema(&read_json(&dir.path().join("diagnostics.json")), "diagnostics.schema.json");
    let o =
        sweepctl(&["simulate", "--problem", wall.to_str().unwrap(), "--gamma", "50,100", "--dt", "0.01"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&dir.path().join("simulate.json"));
    assert_schema(&r, "simulate.schema.json");
    assert_eq!(r["runs"].as_array().unwrap().len(), 2);
    for f in ["trajectory_1.csv", "trajectory_2.csv", "catching_up.csv"] {
        let csv = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(csv.starts_with("t,x1,xi1\n"), "{f}");
        assert_eq!(csv.lines().count(), 202, "{f}");
    }
    // no temporary files are left behind
    assert!(std::fs::read_dir(dir.path()).unwrap().all(|e| !e
        .unwrap()
        .file_name()
        .to_string_lossy()
        .ends_with(".tmp")));
}

fn write_problem(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v = read_json(&fixture("two_sphere.json"));
    edit(&mut v);
    let p = dir.join("problem.json");
    std::fs::write(&p, v.to_string()).unwrap();
    p
}

fn expect_error(problem: &Path, dir: &Path) -> Value {
    let o = sweepctl(&["validate", "--problem", problem.to_str().unwrap()], dir);
    assert_eq!(o.status.code(), Some(2));
    let e = read_json(&dir.join("error.json"));
    assert_schema(&e, "error.schema.json");
    e
}

#[test]
fn loader_errors_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_problem(dir.path(), |v| v["dynamics"] = serde_json::json!(["u1", "0"]));
    let e = expect_error(&p, dir.path());
    assert_eq!(e["error"], "schema");
    assert_eq!(e["pointer"], "/dynamics");
    assert!(e["message"].as_str().unwrap().contains("dimension mismatch"));

    let p = write_problem(dir.path(), |v| v["constraints"][1] = serde_json::json!("x1^2 + x4^2 - 1"));
    let e = expect_error(&p, dir.path());
    assert_eq!(e["pointer"], "/constraints/1");
    assert!(e["message"].as_str().unwrap().contains("unknown variable `x4` at offset 7"), "{e}");

    let e = expect_error(&dir.path().join("missing.json"), dir.path());
    assert_eq!(e["error"], "io");
    assert!(e["message"].as_str().unwrap().contains("missing.json"));
}

#[test]
fn loaded_two_sphere() {
    let f = sweep_core::io::load_problem(&fixture("two_sphere.json")).unwrap();
    let p = &f.problem;
    assert_eq!((p.n(), p.m(), p.set().len()), (3, 1, 2));
    // same problem as the builder, checked pointwise
    let params = f.example.unwrap();
    let built =
        sweep_core::control::build_two_sphere(&sweep_core::control::TwoSphereParams { horizon: 2.75, ..params })
            .unwrap();
    assert_eq!(built.set().a1(), p.set().a1());
    for x in [[-0.6, 0.0, 0.2], [0.1, 0.7, -0.05], [-0.3, 0.2, 0.4]] {
        for i in 0..2 {
            assert_eq!(built.set().raw_value(i, 0.0, &x).unwrap(), p.set().raw_value(i, 0.0, &x).unwrap());
        }
        let (a, b) = (built.terminal_set().unwrap(), p.terminal_set().unwrap());
        assert_eq!(a.values(&x).unwrap(), b.values(&x).unwrap());
        let (mut fa, mut fb) = ([0.0; 3], [0.0; 3]);
        built.dynamics(0.0, &x, &[1.0], &mut fa).unwrap();
        p.dynamics(0.0, &x, &[1.0], &mut fb).unwrap();
        assert_eq!(fa, fb);
    }
}

#[test]
fn thread_cap_does_not_change_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let problem = fixture("moving_wall.json");
    let args = ["converge", "--problem", problem.to_str().unwrap()];
    assert_eq!(sweepctl(&args, a.path()).status.code(), Some(0));
    let o = Command::new(env!("CARGO_BIN_EXE_sweepctl"))
        .args(args)
        .arg("--out")
        .arg(b.path())
        .env("SWEEPCTL_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        std::fs::read(a.path().join("convergence.json")).unwrap(),
        std::fs::read(b.path().join("convergence.json")).unwrap()
    );
    let o = Command::new(env!("CARGO_BIN_EXE_sweepctl"))
        .args(args)
        .arg("--out")
        .arg(b.path())
        .env("SWEEPCTL_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
