//! Problem files and plot-ready output.
//!
//! A problem file is a JSON object:
//!
//! ```text
//! { "name": "wall", "n": 1, "m": 0, "horizon": 2.0,
//!   "dynamics": ["1"], "constraints": ["x1 - 1"],
//!   "control_set": {"kind": "box", "lo": [], "hi": []},
//!   "a1": {"beta": 0.1, "eta": 0.9, "rho": 0.9}, "cap": "auto",
//!   "initial_set": {"kind": "point", "x": [0]},
//!   "terminal_set": null, "cost": "-x1", "bounding_radius": 5,
//!   "control": {"breakpoints": [], "values": [[]]} }
//! ```
//!
//! `control` and `name` are optional, as is `example` (two-sphere
//! parameters for the example run). Terminal sets are `point` (`x`),
//! `ball` (`center`, `radius`) or `inequalities` (`exprs`, each `<= 0`).

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::adjoint::AdjointArc;
use crate::control::{SwitchOptimum, TwoSphereParams};
use crate::error::{Error, Result};
use crate::expr::{parse, Expr};
use crate::problem::{dynamics_variables, ControlSet, ControlSignal, InitialSet, Problem, ProblemSpec, TerminalSet};
use crate::set::{state_variables, A1Constants, MovingSet};

/// A loaded problem file.
#[derive(Debug, Clone)]
pub struct ProblemFile {
    pub problem: Problem,
    pub example: Option<TwoSphereParams>,
}

fn schema(pointer: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema { pointer: pointer.into(), message: message.into() }
}

struct Obj<'a> {
    map: &'a Map<String, Value>,
    at: String,
}

impl<'a> Obj<'a> {
    fn new(v: &'a Value, at: &str) -> Result<Obj<'a>> {
        match v {
            Value::Object(map) => Ok(Obj { map, at: at.to_string() }),
            _ => Err(schema(ptr(at), "expected an object")),
        }
    }

    fn path(&self, key: &str) -> String {
        format!("{}/{}", self.at, key.replace('~', "~0").replace('/', "~1"))
    }

    fn get(&self, key: &str) -> Result<&'a Value> {
        self.map.get(key).ok_or_else(|| schema(ptr(&self.at), format!("missing field `{key}`")))
    }

    fn opt(&self, key: &str) -> Option<&'a Value> {
        self.map.get(key).filter(|v| !v.is_null())
    }

    fn num(&self, key: &str) -> Result<f64> {
        num(self.get(key)?, &self.path(key))
    }

    fn count(&self, key: &str) -> Result<usize> {
        let v = self.get(key)?;
        v.as_u64().map(|u| u as usize).ok_or_else(|| schema(self.path(key), "expected a non-negative integer"))
    }

    fn obj(&self, key: &str) -> Result<Obj<'a>> {
        Obj::new(self.get(key)?, &self.path(key))
    }

    fn kind(&self) -> Result<&'a str> {
        self.get("kind")?.as_str().ok_or_else(|| schema(self.path("kind"), "expected a string"))
    }

    fn deny_unknown(&self, allowed: &[&str]) -> Result<()> {
        match self.map.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(schema(self.path(k), "unknown field")),
            None => Ok(()),
        }
    }
}

fn ptr(at: &str) -> String {
    if at.is_empty() {
        "/".into()
    } else {
        at.into()
    }
}

fn num(v: &Value, at: &str) -> Result<f64> {
    v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| schema(ptr(at), "expected a finite number"))
}

fn arr<'a>(v: &'a Value, at: &str) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| schema(ptr(at), "expected an array"))
}

fn vector(v: &Value, at: &str) -> Result<Vec<f64>> {
    arr(v, at)?.iter().enumerate().map(|(i, x)| num(x, &format!("{at}/{i}"))).collect()
}

fn matrix(v: &Value, at: &str) -> Result<Vec<Vec<f64>>> {
    arr(v, at)?.iter().enumerate().map(|(i, x)| vector(x, &format!("{at}/{i}"))).collect()
}

fn expr(v: &Value, at: &str, vars: &[&str]) -> Result<Expr> {
    let s = v.as_str().ok_or_else(|| schema(ptr(at), "expected an expression string"))?;
    parse(s, vars).map_err(|e| schema(ptr(at), e.to_string()))
}

fn exprs(v: &Value, at: &str, vars: &[&str]) -> Result<Vec<Expr>> {
    arr(v, at)?.iter().enumerate().map(|(i, x)| expr(x, &format!("{at}/{i}"), vars)).collect()
}

fn dims(at: String, got: usize, want: usize, what: &str) -> Result<()> {
    if got != want {
        return Err(schema(at, format!("dimension mismatch: {what} has length {got}, expected {want}")));
    }
    Ok(())
}

const FIELDS: [&str; 16] = [
    "name",
    "description",
    "n",
    "m",
    "horizon",
    "dynamics",
    "control_set",
    "constraints",
    "a1",
    "cap",
    "initial_set",
    "terminal_set",
    "cost",
    "bounding_radius",
    "control",
    "example",
];

/// Parse and validate a problem file's contents.
pub fn parse_problem(text: &str) -> Result<ProblemFile> {
    let root: Value = serde_json::from_str(text)?;
    let top = Obj::new(&root, "")?;
    top.deny_unknown(&FIELDS)?;
    let n = top.count("n")?;
    let m = top.count("m")?;
    if n == 0 {
        return Err(schema("/n", "state dimension must be positive"));
    }
    let horizon = top.num("horizon")?;
    let name = match top.opt("name") {
        Some(v) => v.as_str().ok_or_else(|| schema("/name", "expected a string"))?.to_string(),
        None => "problem".into(),
    };

    let dn = dynamics_variables(n, m);
    let dv: Vec<&str> = dn.iter().map(String::as_str).collect();
    let sn = state_variables(n);
    let sv: Vec<&str> = sn.iter().map(String::as_str).collect();

    let dyn_v = top.get("dynamics")?;
    let dynamics = exprs(dyn_v, "/dynamics", &dv)?;
    dims("/dynamics".into(), dynamics.len(), n, "dynamics")?;
    let constraints = exprs(top.get("constraints")?, "/constraints", &sv)?;
    if constraints.is_empty() {
        return Err(schema("/constraints", "at least one constraint is required"));
    }

    let a1o = top.obj("a1")?;
    a1o.deny_unknown(&["beta", "eta", "rho"])?;
    let a1 = A1Constants::new(a1o.num("beta")?, a1o.num("eta")?, a1o.num("rho")?)
        .map_err(|e| schema("/a1", e.to_string()))?;
    if let Some(cap) = top.opt("cap") {
        if cap.as_str() != Some("auto") {
            return Err(schema("/cap", "only \"auto\" is supported (quintic cap on the band of width beta)"));
        }
    }
    let radius = top.num("bounding_radius")?;
    let set = MovingSet::new(n, constraints, a1, radius).map_err(|e| schema("/bounding_radius", e.to_string()))?;

    let cs = top.obj("control_set")?;
    let control_set = match cs.kind()? {
        "box" => {
            cs.deny_unknown(&["kind", "lo", "hi"])?;
            let lo = vector(cs.get("lo")?, &cs.path("lo"))?;
            let hi = vector(cs.get("hi")?, &cs.path("hi"))?;
            dims(cs.path("lo"), lo.len(), m, "lo")?;
            dims(cs.path("hi"), hi.len(), m, "hi")?;
            ControlSet::Box { lo, hi }
        }
        "finite" => {
            cs.deny_unknown(&["kind", "values"])?;
            let values = matrix(cs.get("values")?, &cs.path("values"))?;
            for (i, v) in values.iter().enumerate() {
                dims(format!("{}/{i}", cs.path("values")), v.len(), m, "control value")?;
            }
            ControlSet::Finite { values }
        }
        k => return Err(schema(cs.path("kind"), format!("unknown control set kind `{k}`"))),
    };
    control_set.validate(m).map_err(|e| schema("/control_set", e.to_string()))?;

    let is = top.obj("initial_set")?;
    let initial_set = match is.kind()? {
        "point" => {
            is.deny_unknown(&["kind", "x"])?;
            let x = vector(is.get("x")?, &is.path("x"))?;
            dims(is.path("x"), x.len(), n, "initial point")?;
            InitialSet::Point { x }
        }
        "points" => {
            is.deny_unknown(&["kind", "xs"])?;
            let xs = matrix(is.get("xs")?, &is.path("xs"))?;
            if xs.is_empty() {
                return Err(schema(is.path("xs"), "at least one point is required"));
            }
            for (i, x) in xs.iter().enumerate() {
                dims(format!("{}/{i}", is.path("xs")), x.len(), n, "initial point")?;
            }
            InitialSet::Points { xs }
        }
        "ball" => {
            is.deny_unknown(&["kind", "center", "radius"])?;
            let center = vector(is.get("center")?, &is.path("center"))?;
            dims(is.path("center"), center.len(), n, "center")?;
            let radius = is.num("radius")?;
            if radius < 0.0 {
                return Err(schema(is.path("radius"), "radius must be non-negative"));
            }
            InitialSet::Ball { center, radius }
        }
        k => return Err(schema(is.path("kind"), format!("unknown initial set kind `{k}`"))),
    };

    let terminal_set = match top.opt("terminal_set") {
        None => None,
        Some(v) => {
            let ts = Obj::new(v, "/terminal_set")?;
            Some(match ts.kind()? {
                "point" => {
                    ts.deny_unknown(&["kind", "x"])?;
                    let x = vector(ts.get("x")?, &ts.path("x"))?;
                    dims(ts.path("x"), x.len(), n, "terminal point")?;
                    TerminalSet::Point(x.into())
                }
                "ball" => {
                    ts.deny_unknown(&["kind", "center", "radius"])?;
                    let c = vector(ts.get("center")?, &ts.path("center"))?;
                    dims(ts.path("center"), c.len(), n, "center")?;
                    TerminalSet::Ball { center: c.into(), radius: ts.num("radius")? }
                }
                "inequalities" => {
                    ts.deny_unknown(&["kind", "exprs"])?;
                    let e = exprs(ts.get("exprs")?, &ts.path("exprs"), &sv)?;
                    TerminalSet::inequalities(&e, n).map_err(|e| schema(ts.path("exprs"), e.to_string()))?
                }
                k => return Err(schema(ts.path("kind"), format!("unknown terminal set kind `{k}`"))),
            })
        }
    };

    let cost = expr(top.get("cost")?, "/cost", &sv)?;
    let control = match top.opt("control") {
        None => None,
        Some(v) => {
            let c = Obj::new(v, "/control")?;
            c.deny_unknown(&["breakpoints", "values"])?;
            let bp = vector(c.get("breakpoints")?, &c.path("breakpoints"))?;
            let values = matrix(c.get("values")?, &c.path("values"))?;
            for (i, u) in values.iter().enumerate() {
                dims(format!("{}/{i}", c.path("values")), u.len(), m, "control value")?;
            }
            Some(ControlSignal::new(bp, values).map_err(|e| schema("/control", e.to_string()))?)
        }
    };
    let example = match top.opt("example") {
        None => None,
        Some(v) => Some(serde_json::from_value(v.clone()).map_err(|e| schema("/example", e.to_string()))?),
    };

    let problem = Problem::new(ProblemSpec {
        name,
        n,
        m,
        dynamics,
        set,
        control_set,
        initial_set,
        terminal_set,
        cost,
        horizon,
        control,
    })?;
    Ok(ProblemFile { problem, example })
}

pub fn load_problem(path: &Path) -> Result<ProblemFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    parse_problem(&text)
}

/// 17 significant digits, round-trip exact.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

fn row(out: &mut String, cells: impl IntoIterator<Item = f64>) {
    let mut first = true;
    for c in cells {
        if !first {
            out.push(',');
        }
        first = false;
        out.push_str(&fmt_num(c));
    }
    out.push('\n');
}

/// Columns `t, x1..xn, u1..um, xi1..xiI`.
pub fn trajectory_csv(traj: &crate::sweep::Trajectory) -> String {
    let n = traj.states.first().map_or(0, Vec::len);
    let m = traj.controls.first().map_or(0, Vec::len);
    let k = traj.xis.first().map_or(0, Vec::len);
    let mut out = String::from("t");
    for (p, c) in [("x", n), ("u", m), ("xi", k)] {
        for i in 1..=c {
            let _ = write!(out, ",{p}{i}");
        }
    }
    out.push('\n');
    for j in 0..traj.len() {
        let cells = std::iter::once(traj.times[j])
            .chain(traj.states[j].iter().copied())
            .chain(traj.controls[j].iter().copied())
            .chain(traj.xis[j].iter().copied());
        row(&mut out, cells);
    }
    out
}

/// Columns `t, p1..pn, d1..dI`.
pub fn adjoint_csv(arc: &AdjointArc) -> String {
    let n = arc.p.first().map_or(0, Vec::len);
    let k = arc.densities.first().map_or(0, Vec::len);
    let mut out = String::from("t");
    for i in 1..=n {
        let _ = write!(out, ",p{i}");
    }
    for i in 1..=k {
        let _ = write!(out, ",d{i}");
    }
    out.push('\n');
    for j in 0..arc.len() {
        row(
            &mut out,
            std::iter::once(arc.times[j]).chain(arc.p[j].iter().copied()).chain(arc.densities[j].iter().copied()),
        );
    }
    out
}

/// Golden-section evaluations followed by the scan; columns
/// `source, t_switch, objective, violation, feasible`.
pub fn switch_trace_csv(opt: &SwitchOptimum) -> String {
    let mut out = String::from("source,t_switch,objective,violation,feasible\n");
    for (src, list) in [("golden", &opt.trace), ("scan", &opt.scan)] {
        for s in list {
            let _ = writeln!(
                out,
                "{src},{},{},{},{}",
                fmt_num(s.t_switch),
                fmt_num(s.objective),
                fmt_num(s.violation),
                u8::from(s.feasible)
            );
        }
    }
    out
}

/// Pretty JSON with a trailing newline. Non-finite floats become `null`.
pub fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}
