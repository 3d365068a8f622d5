//! `sweepctl` commands. Each command writes its artifacts into the output
//! directory and reports whether its verdicts passed.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use sweep_core::adjoint::{diagnostics, extract_multipliers, flag_jumps, DiagnosticsReport};
use sweep_core::control::{run_two_sphere_example, ExampleConfig, TwoSphereParams};
use sweep_core::io::{adjoint_csv, load_problem, switch_trace_csv, to_json, trajectory_csv, ProblemFile};
use sweep_core::mp::{candidate_arc, CandidateSearch, MPReport, ToleranceSet};
use sweep_core::problem::Problem;
use sweep_core::set::SamplingPlan;
use sweep_core::sweep::{
    build_schedule, catching_up, convergence_sweep, estimate_mu, integrate_penalized, ConvergenceReport, MuEstimate,
    Penalty, PenaltySchedule, RunStats, SigmaRule, StepControl,
};
use sweep_core::{Error, Result};

/// Samples used to estimate the speed constant.
pub const MU_SAMPLES: usize = 4000;

#[derive(Debug, Parser)]
#[command(name = "sweepctl", version, about = "Penalty approximation of controlled sweeping processes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample the constraint qualification on the problem's set.
    Validate(Opts),
    /// Penalized trajectories for each gamma plus the catching-up oracle.
    Simulate(Opts),
    /// Sup-norm distance to the catching-up oracle across a schedule.
    Converge(Opts),
    /// Adjoint arc, multiplier densities and boundedness diagnostics.
    Adjoint(Opts),
    /// Maximum Principle certificate for the nominal control.
    Certify(Opts),
    /// The two-sphere switching example.
    Example(Opts),
}

impl Command {
    pub fn opts(&self) -> &Opts {
        match self {
            Command::Validate(o)
            | Command::Simulate(o)
            | Command::Converge(o)
            | Command::Adjoint(o)
            | Command::Certify(o)
            | Command::Example(o) => o,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Simulate(_) => "simulate",
            Command::Converge(_) => "converge",
            Command::Adjoint(_) => "adjoint",
            Command::Certify(_) => "certify",
            Command::Example(_) => "example",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Opts {
    /// Problem file (JSON). Optional for `example`.
    #[arg(long)]
    pub problem: Option<PathBuf>,
    /// Comma-separated penalty levels.
    #[arg(long, value_delimiter = ',')]
    pub gamma: Vec<f64>,
    /// Comma-separated sigmas, one per gamma (default 1/gamma).
    #[arg(long, value_delimiter = ',')]
    pub sigma: Vec<f64>,
    /// Step of the catching-up oracle and spacing of the output grid.
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Convergence tolerance on the final sup-norm error.
    #[arg(long, default_value_t = 2e-2)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub rtol: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub atol: f64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Seed of every sampler.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

impl Opts {
    fn step(&self) -> StepControl {
        StepControl { rtol: self.rtol, atol: self.atol, dt_report: self.dt, ..StepControl::default() }
    }

    fn gammas(&self, default: &[f64]) -> Vec<f64> {
        if self.gamma.is_empty() {
            default.to_vec()
        } else {
            self.gamma.clone()
        }
    }

    fn sigma_rule(&self) -> SigmaRule {
        if self.sigma.is_empty() {
            SigmaRule::default()
        } else {
            SigmaRule::Explicit(self.sigma.clone())
        }
    }

    fn sigma_for(&self, k: usize, gamma: f64) -> Result<f64> {
        match (self.sigma.is_empty(), self.sigma.get(k)) {
            (true, _) => Ok(1.0 / gamma),
            (false, Some(s)) => Ok(*s),
            (false, None) => Err(Error::Schedule(format!("{} sigmas for more gammas", self.sigma.len()))),
        }
    }

    fn load(&self) -> Result<ProblemFile> {
        let path = self
            .problem
            .as_ref()
            .ok_or_else(|| Error::InvalidProblem("--problem is required for this command".into()))?;
        load_problem(path)
    }
}

/// Write `contents` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, dir.join(name))?;
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, v: &T) -> Result<()> {
    write_atomic(dir, name, &to_json(v)?)
}

/// Machine-readable form of an error.
pub fn error_json(err: &Error) -> serde_json::Value {
    let kind = match err {
        Error::Expr(_) => "expression",
        Error::InvalidProblem(_) => "invalid_problem",
        Error::Schema { .. } => "schema",
        Error::Projection(_) => "projection",
        Error::Schedule(_) => "schedule",
        Error::Integration { .. } => "integration",
        Error::Invariance { .. } => "invariance",
        Error::Grid(_) => "grid",
        Error::Unsupported(_) => "unsupported",
        Error::Infeasible(_) => "infeasible",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    };
    let pointer = match err {
        Error::Schema { pointer, .. } => Some(pointer.clone()),
        _ => None,
    };
    json!({ "error": kind, "message": err.to_string(), "pointer": pointer })
}

#[derive(Debug, Serialize)]
struct RunSummary {
    gamma: f64,
    sigma: f64,
    file: String,
    terminal: Vec<f64>,
    max_xi: f64,
    initial_shift: f64,
    stats: RunStats,
}

#[derive(Debug, Serialize)]
struct SimulateReport {
    problem: String,
    mu: MuEstimate,
    runs: Vec<RunSummary>,
    catching_up_terminal: Vec<f64>,
    dt: f64,
}

#[derive(Debug, Serialize)]
struct ConvergeOutput {
    problem: String,
    mu: MuEstimate,
    schedule: PenaltySchedule,
    report: ConvergenceReport,
}

#[derive(Debug, Serialize)]
struct AdjointOutput {
    problem: String,
    gamma: f64,
    sigma: f64,
    lambda: f64,
    p_terminal: Vec<f64>,
    diagnostics: DiagnosticsReport,
    complementarity: Vec<f64>,
    measure_min: f64,
    jumps: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct CertifyOutput {
    problem: String,
    report: MPReport,
    search: CandidateSearch,
}

fn penalty_run(
    problem: &Problem,
    opts: &Opts,
) -> Result<(Penalty, sweep_core::sweep::Trajectory, sweep_core::adjoint::AdjointArc, MPReport, CandidateSearch)> {
    let gamma = opts.gammas(&[400.0])[0];
    let mu = estimate_mu(problem, MU_SAMPLES, opts.seed)?.mu;
    let pen = Penalty::new(gamma, opts.sigma_for(0, gamma)?).with_mu(mu);
    let step = opts.step();
    let traj = integrate_penalized(problem, &problem.default_control(), &pen, &step)?;
    let (arc, report, search) = candidate_arc(problem, &traj, &step, &ToleranceSet::defaults())?;
    Ok((pen, traj, arc, report, search))
}

/// Run one command. `Ok(true)` when every verdict passed.
pub fn run(cmd: &Command) -> Result<bool> {
    let opts = cmd.opts();
    let out = &opts.out;
    match cmd {
        Command::Validate(_) => {
            let problem = opts.load()?.problem;
            let report = problem.set().validate_a1(&SamplingPlan::new(problem.horizon(), opts.seed))?;
            write_json(out, "a1_report.json", &report)?;
            Ok(report.pass)
        }
        Command::Simulate(_) => {
            let problem = opts.load()?.problem;
            let mu = estimate_mu(&problem, MU_SAMPLES, opts.seed)?;
            let control = problem.default_control();
            let step = opts.step();
            let mut runs = Vec::new();
            for (k, g) in opts.gammas(&[400.0]).into_iter().enumerate() {
                let pen = Penalty::new(g, opts.sigma_for(k, g)?).with_mu(mu.mu);
                let traj = integrate_penalized(&problem, &control, &pen, &step)?;
                let file = format!("trajectory_{}.csv", k + 1);
                write_atomic(out, &file, &trajectory_csv(&traj))?;
                runs.push(RunSummary {
                    gamma: g,
                    sigma: pen.sigma,
                    file,
                    terminal: traj.terminal().to_vec(),
                    max_xi: traj.max_xi(),
                    initial_shift: traj.initial_shift,
                    stats: traj.stats,
                });
            }
            let cu = catching_up(&problem, &control, opts.dt)?;
            write_atomic(out, "catching_up.csv", &trajectory_csv(&cu))?;
            let report = SimulateReport {
                problem: problem.name.clone(),
                mu,
                runs,
                catching_up_terminal: cu.terminal().to_vec(),
                dt: opts.dt,
            };
            write_json(out, "simulate.json", &report)?;
            Ok(true)
        }
        Command::Converge(_) => {
            let problem = opts.load()?.problem;
            let mu = estimate_mu(&problem, MU_SAMPLES, opts.seed)?;
            let gammas = opts.gammas(&[25.0, 50.0, 100.0, 200.0, 400.0]);
            let schedule = build_schedule(mu.mu, problem.set().a1(), &gammas, &opts.sigma_rule(), false)?;
            let report =
                convergence_sweep(&problem, &problem.default_control(), &schedule, &opts.step(), opts.dt, opts.tol)?;
            let verdict = report.verdict;
            write_json(
                out,
                "convergence.json",
                &ConvergeOutput { problem: problem.name.clone(), mu, schedule, report },
            )?;
            Ok(verdict)
        }
        Command::Adjoint(_) => {
            let problem = opts.load()?.problem;
            let (pen, traj, arc, report, _) = penalty_run(&problem, opts)?;
            let diag = diagnostics(&traj, &arc)?;
            let mult = extract_multipliers(&traj, &arc)?;
            write_atomic(out, "trajectory.csv", &trajectory_csv(&traj))?;
            write_atomic(out, "adjoint.csv", &adjoint_csv(&arc))?;
            let o = AdjointOutput {
                problem: problem.name.clone(),
                gamma: pen.gamma,
                sigma: pen.sigma,
                lambda: report.lambda,
                p_terminal: report.p_terminal.clone(),
                diagnostics: diag,
                complementarity: mult.complementarity.clone(),
                measure_min: mult.measure_min,
                jumps: flag_jumps(&arc.p),
            };
            write_json(out, "diagnostics.json", &o)?;
            Ok(mult.measure_min >= -ToleranceSet::defaults().measure_floor)
        }
        Command::Certify(_) => {
            let problem = opts.load()?.problem;
            let (_, traj, arc, report, search) = penalty_run(&problem, opts)?;
            write_atomic(out, "trajectory.csv", &trajectory_csv(&traj))?;
            write_atomic(out, "adjoint.csv", &adjoint_csv(&arc))?;
            let verdict = report.verdict;
            write_json(out, "mp_report.json", &CertifyOutput { problem: problem.name.clone(), report, search })?;
            Ok(verdict)
        }
        Command::Example(_) => {
            let params = match &opts.problem {
                Some(p) => load_problem(p)?.example.unwrap_or_default(),
                None => TwoSphereParams::default(),
            };
            let mut config = ExampleConfig { seed: opts.seed, step: opts.step(), ..ExampleConfig::default() };
            if let Some(g) = opts.gamma.first() {
                config.gamma = *g;
                config.sweep_gammas.retain(|s| *s < *g);
                config.sweep_gammas.push(*g);
            }
            if let Some(s) = opts.sigma.first() {
                config.sigma = Some(*s);
            }
            let (report, run, arc) = run_two_sphere_example(&params, &config)?;
            write_atomic(out, "trajectory.csv", &trajectory_csv(&run.trajectory))?;
            write_atomic(out, "adjoint.csv", &adjoint_csv(&arc))?;
            write_atomic(out, "optimizer_trace.csv", &switch_trace_csv(&report.optimum))?;
            write_json(out, "contacts.json", &report.contacts)?;
            write_json(out, "example.json", &report)?;
            Ok(report.verdict)
        }
    }
}

/// Cap rayon's pool from `SWEEPCTL_THREADS` when set to a positive integer.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SWEEPCTL_THREADS") {
        let n: usize =
            v.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
                Error::InvalidProblem(format!("SWEEPCTL_THREADS must be a positive integer, got `{v}`"))
            })?;
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}
