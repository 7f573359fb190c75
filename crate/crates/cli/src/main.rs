use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use springslide::finger::{is_positive_definite, stiffness_2r, stiffness_2r_eigenvalues, symmetric_eigenvalues};
use springslide::ident::{comparison_csv, fit, synthesize, Observation};
use springslide::io::{observation_from_csv, read_json, read_text, run_motion, IdentConfig, Motion, TaskFile, WrenchInput};
use springslide::planner::{directions_between, fcmap, plan_regrasp, xi_star, Evaluator, GridSpec, PlanSpec};
use springslide::robustness::report;
use springslide::simulator::Trace;
use springslide::wrench::{balance_lp, build_external_cone, gravity};
use springslide::Error;

#[derive(Parser)]
#[command(name = "springslide", version, about = "Spring-sliding manipulation: simulate, plan and analyse planar two-finger grasps")]
struct Cli {
    /// Worker threads for grid scans and corner LPs (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for randomized steps such as synthetic measurement noise.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the quasistatic simulator on a motion file.
    Simulate(SimulateArgs),
    /// Plan a sliding regrasp between two grasp heights.
    Plan(PlanArgs),
    /// Map feasible fingertip heights and the maximum-margin curve.
    Fcmap(FcmapArgs),
    /// Check wrench balance robustness against fingertip disturbances.
    Robust(RobustArgs),
    /// Fit friction and finger stiffness to a measured trace.
    Ident(IdentArgs),
    /// Tabulate the stiffness of a torque-controlled two-link finger.
    Stiffness2r(Stiffness2rArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    task: PathBuf,
    /// Motion JSON, or a plan written by `plan`.
    #[arg(long)]
    motion: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    task: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the grid step of the spec (m).
    #[arg(long)]
    step: Option<f64>,
    /// Sample period of the trajectory CSV (s).
    #[arg(long, default_value_t = 0.01)]
    sample: f64,
    /// Also simulate the plan with this step and write the trace.
    #[arg(long)]
    validate_dt: Option<f64>,
}

#[derive(Args)]
struct FcmapArgs {
    #[arg(long)]
    task: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    /// Plan spec supplying the sliding directions and the grid ranges.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Sliding directions along the faces, e.g. `-1,-1`.
    #[arg(long, allow_hyphen_values = true)]
    directions: Option<String>,
    /// Height range of finger 1, `lo:hi` (m).
    #[arg(long)]
    y1: Option<String>,
    /// Height range of finger 2, `lo:hi` (m).
    #[arg(long)]
    y2: Option<String>,
    /// Output directory; the map goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RobustArgs {
    #[arg(long)]
    task: PathBuf,
    /// Fingertip wrench: `{"wc": [m, fx, fy]}` or `{"contacts": [...]}`.
    #[arg(long)]
    wc: PathBuf,
    /// Disturbance bound (N), or `auto` for the largest one that keeps balance.
    #[arg(long, default_value = "auto")]
    eps: String,
    /// Bisection tolerance for `--eps auto` (N).
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IdentArgs {
    /// Measured trace CSV; synthesized from the config when omitted.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    config: PathBuf,
    /// Standard deviation of noise added to synthesized fingertips (m).
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Stiffness2rArgs {
    /// Elbow angles `start:step:stop` (rad).
    #[arg(long)]
    theta2_sweep: String,
    #[arg(long, default_value_t = 0.0)]
    theta1: f64,
    #[arg(long, default_value = "1,1")]
    links: String,
    #[arg(long, default_value = "1,1")]
    torques: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit 1: bad input or I/O. Exit 2: well-formed problem without a solution.
enum Failure {
    Input(String),
    Domain { code: String, message: String },
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Domain { code: e.code().into(), message: e.to_string() }
        }
    }
}

type Outcome<T> = Result<T, Failure>;

fn input(msg: impl Into<String>) -> Failure {
    Failure::Input(msg.into())
}

fn write(dir: &Path, name: &str, contents: &str) -> Outcome<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| input(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| input(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("values serialize") + "\n"
}

fn emit(out: Option<&Path>, name: &str, contents: &str) -> Outcome<()> {
    match out {
        Some(dir) => {
            write(dir, name, contents)?;
        }
        None => print!("{contents}"),
    }
    Ok(())
}

fn parse_pair(text: &str, sep: char, what: &str) -> Outcome<[f64; 2]> {
    let parts: Vec<&str> = text.split(sep).collect();
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| input(format!("{what}: {text:?}: {e}")))?;
    match nums[..] {
        [a, b] => Ok([a, b]),
        _ => Err(input(format!("{what}: expected two values separated by {sep:?}, got {text:?}"))),
    }
}

fn positive(x: f64, what: &str) -> Outcome<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(input(format!("{what} must be positive, got {x}")))
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn trace_summary(trace: &Trace) -> Value {
    json!({
        "rows": trace.rows.len(),
        "final_time": trace.rows.last().map(|r| r.t),
        "final_fingertips_body": trace.rows.last().map(|r| r.fingertips_body.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>()),
        "min_margin": trace.rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min),
        "transitions": trace.transitions,
    })
}

fn simulate_cmd(a: SimulateArgs) -> Outcome<()> {
    positive(a.dt, "--dt")?;
    let file = TaskFile::load(&a.task)?;
    let motion = Motion::load(&a.motion)?;
    let trace = run_motion(&file.task, file.hand.as_ref(), &motion, a.dt)?;
    write(&a.out, "trace.csv", &trace.to_csv())?;
    let summary = trace_summary(&trace);
    write(&a.out, "summary.json", &pretty(&summary))?;
    print!("{}", pretty(&summary));
    Ok(())
}

fn plan_cmd(a: PlanArgs) -> Outcome<()> {
    positive(a.sample, "--sample")?;
    let file = TaskFile::load(&a.task)?;
    let hand = file.require_hand()?;
    let mut spec: PlanSpec = read_json(&a.spec)?;
    if let Some(step) = a.step {
        let grid = spec.grid.as_mut().ok_or_else(|| input("--step needs a grid in the plan spec"))?;
        grid.step = positive(step, "--step")?;
    }
    let start = Instant::now();
    let plan = plan_regrasp(&file.task, hand, &spec)?;
    let seconds = start.elapsed().as_secs_f64();
    write(&a.out, "plan.json", &pretty(&plan))?;
    write(&a.out, "trajectory.csv", &plan.trajectory_csv(&file.task, a.sample)?)?;
    let mut summary = json!({
        "t21": plan.t21,
        "t22": plan.t22,
        "T1": plan.t1(),
        "T2": plan.t2(),
        "s_prime": [plan.phase2.s_prime.x, plan.phase2.s_prime.y],
        "g_prime": [plan.phase2.g_prime.x, plan.phase2.g_prime.y],
        "objective": plan.phase2.objective,
    });
    if let Some(dt) = a.validate_dt {
        let cfg = springslide::simulator::SimConfig {
            dt: positive(dt, "--validate-dt")?,
            sample_period: a.sample,
            duration: plan.t2(),
            ..Default::default()
        };
        let exec = plan.simulate(&file.task, &cfg)?;
        write(&a.out, "trace.csv", &exec.trace.to_csv())?;
        summary["final_heights"] = json!([exec.final_heights.x, exec.final_heights.y]);
        summary["deviation"] = json!(exec.deviation);
    }
    eprintln!("planned in {seconds:.2} s");
    print!("{}", pretty(&summary));
    Ok(())
}

/// Height span of a boundary piece, used when no range is given.
fn face_span(file: &TaskFile, piece: usize) -> Outcome<[f64; 2]> {
    let p = file
        .task
        .boundary
        .pieces()
        .get(piece)
        .ok_or_else(|| input(format!("hand face {piece} is not a boundary piece")))?;
    let (a, b) = (p.start_point().y, p.end_point().y);
    Ok([a.min(b), a.max(b)])
}

fn fcmap_cmd(a: FcmapArgs) -> Outcome<()> {
    let file = TaskFile::load(&a.task)?;
    let hand = file.require_hand()?;
    let spec: Option<PlanSpec> = a.spec.as_deref().map(read_json).transpose()?;
    let directions = match (&a.directions, &spec) {
        (Some(d), _) => parse_pair(d, ',', "--directions")?,
        (None, Some(s)) => directions_between(&s.s, &s.g),
        (None, None) => [-1.0, -1.0],
    };
    let spec_grid = spec.and_then(|s| s.grid);
    let range = |flag: &Option<String>, i: usize, name: &str| -> Outcome<[f64; 2]> {
        match (flag, &spec_grid) {
            (Some(r), _) => parse_pair(r, ':', name),
            (None, Some(g)) => Ok(if i == 0 { g.y1 } else { g.y2 }),
            (None, None) => face_span(&file, hand.faces[i]),
        }
    };
    let grid = GridSpec { y1: range(&a.y1, 0, "--y1")?, y2: range(&a.y2, 1, "--y2")?, step: positive(a.step, "--step")? };
    let eval = Evaluator::new(&file.task, hand, directions)?;
    let map = fcmap(&eval, &grid)?;
    emit(a.out.as_deref(), "fcmap.csv", &map.to_csv())?;
    if let Some(out) = &a.out {
        let mut csv = String::from("y1,y2,margin\n");
        for p in xi_star(&eval, &grid)? {
            let _ = writeln!(csv, "{},{},{}", fmt(p.y.x), fmt(p.y.y), fmt(p.margin));
        }
        write(out, "xi_star.csv", &csv)?;
        let feasible = map.cells.iter().filter(|c| c.feasible).count();
        print!("{}", pretty(&json!({"cells": map.cells.len(), "feasible": feasible, "directions": directions})));
    }
    Ok(())
}

fn robust_cmd(a: RobustArgs) -> Outcome<()> {
    let file = TaskFile::load(&a.task)?;
    let wrench: WrenchInput = read_json(&a.wc)?;
    let wc = wrench.scaled(&file.task)?;
    let cone = build_external_cone(&file.task, &file.task.object_pose)?;
    let wg = gravity(&file.task);
    if !balance_lp(&cone.w, &wc, &wg)?.is_feasible() {
        return Err(Failure::Domain {
            code: "balance_infeasible".into(),
            message: "robustness: precondition violated: the nominal fingertip wrench admits no wrench balance".into(),
        });
    }
    let (eps, tol) = if a.eps == "auto" {
        (None, Some(positive(a.tol, "--tol")?))
    } else {
        let e: f64 = a.eps.parse().map_err(|e| input(format!("--eps: {:?}: {e}", a.eps)))?;
        if !(e >= 0.0) {
            return Err(input(format!("--eps must be >= 0, got {e}")));
        }
        (Some(e), None)
    };
    let mut r = report(&cone.w, &wc, &wg, eps.unwrap_or(0.0), tol)?;
    if eps.is_none() {
        // report the tests at the largest robust disturbance
        let best = r.max_epsilon.unwrap_or(0.0);
        let max = r.max_epsilon;
        r = report(&cone.w, &wc, &wg, best, None)?;
        r.max_epsilon = max;
    }
    emit(a.out.as_deref(), "robust.json", &pretty(&r))
}

fn ident_cmd(a: IdentArgs, seed: Option<u64>) -> Outcome<()> {
    let config: IdentConfig = read_json(&a.config)?;
    let base = a.config.parent().unwrap_or(Path::new("."));
    let observed: Observation = match &a.trace {
        Some(path) => observation_from_csv(&read_text(path)?)?,
        None => {
            let synth = config
                .synthetic
                .as_ref()
                .ok_or_else(|| input("ident: no --trace given and the config has no \"synthetic\" section"))?;
            let file = config.task.resolve(base)?;
            let hand = match &config.hand {
                Some(h) => h.clone(),
                None => file.require_hand()?.clone(),
            };
            let clean = synthesize(&file.task, &hand, &synth.params, &synth.drag)?;
            let noise = a.noise.unwrap_or(synth.noise);
            if noise > 0.0 {
                clean.with_noise(noise, seed.unwrap_or(synth.seed))
            } else {
                clean
            }
        }
    };
    let problem = config.problem(base, observed)?;
    let start = Instant::now();
    let result = fit(&problem)?;
    let seconds = start.elapsed().as_secs_f64();
    eprintln!("fitted in {seconds:.1} s");
    let out = a.out.as_deref();
    emit(out, "ident.json", &pretty(&result))?;
    if let Some(dir) = out {
        let fitted = problem.simulate(&result.params)?;
        write(dir, "comparison.csv", &comparison_csv(&problem.observed, &fitted))?;
    }
    Ok(())
}

fn stiffness2r_cmd(a: Stiffness2rArgs) -> Outcome<()> {
    let parts: Vec<f64> = a
        .theta2_sweep
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| input(format!("--theta2-sweep: {:?}: {e}", a.theta2_sweep)))?;
    let [lo, step, hi] = parts[..] else {
        return Err(input(format!("--theta2-sweep: expected start:step:stop, got {:?}", a.theta2_sweep)));
    };
    positive(step, "sweep step")?;
    let links = parse_pair(&a.links, ',', "--links")?;
    let torques = parse_pair(&a.torques, ',', "--torques")?;
    let unit = links == [1.0, 1.0] && torques == [1.0, 1.0];
    let mut csv = String::from("theta2,k11,k12,k21,k22,eig_min,eig_max,closed_min,closed_max,positive_definite\n");
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    for k in 0..=n {
        let t2 = lo + step * k as f64;
        let row = match stiffness_2r(a.theta1, t2, torques, links, None) {
            Ok(m) => {
                let (e0, e1) = symmetric_eigenvalues(&m);
                let (c0, c1) = match (unit, stiffness_2r_eigenvalues(t2)) {
                    (true, Ok(c)) => c,
                    _ => (f64::NAN, f64::NAN),
                };
                let v = [t2, m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)], e0, e1, c0, c1];
                let mut s: Vec<String> = v.iter().map(|&x| fmt(x)).collect();
                s.push(is_positive_definite(&m).to_string());
                s.join(",")
            }
            // singular elbow: no stiffness
            Err(_) => format!("{},{}false", fmt(t2), "NaN,".repeat(8)),
        };
        let _ = writeln!(csv, "{row}");
    }
    emit(a.out.as_deref(), "stiffness2r.csv", &csv)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().expect("thread pool is configured once");
    }
    let result = match cli.command {
        Command::Simulate(a) => simulate_cmd(a),
        Command::Plan(a) => plan_cmd(a),
        Command::Fcmap(a) => fcmap_cmd(a),
        Command::Robust(a) => robust_cmd(a),
        Command::Ident(a) => ident_cmd(a, cli.seed),
        Command::Stiffness2r(a) => stiffness2r_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Domain { code, message }) => {
            println!("{}", json!({"error": code, "message": message}));
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}
