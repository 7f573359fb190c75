use std::f64::consts::FRAC_PI_4;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use springslide::finger::TwoLinkFinger;
use springslide::model::{rotation, Vec2};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_springslide"))
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn plan_then_simulate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("plan");
    let o = run(&["plan", "--task", s(&data("regrasp_task.json")), "--spec", s(&data("regrasp_spec.json")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("trajectory.csv").exists());
    let plan = out.join("plan.json");
    let sim = dir.path().join("sim");
    let o = run(&["simulate", "--task", s(&data("regrasp_task.json")), "--motion", s(&plan), "--out", s(&sim)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    let tips = &summary["final_fingertips_body"];
    assert!((tips[0][1].as_f64().unwrap() - 0.055).abs() < 1e-3);
    assert!((tips[1][1].as_f64().unwrap() - 0.035).abs() < 1e-3);
}

#[test]
fn malformed_json_exits_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("task.json");
    std::fs::write(&bad, "{\n  \"mu\": 0.3,\n  oops").unwrap();
    let o = run(&["robust", "--task", s(&bad), "--wc", s(&data("regrasp_contacts.json"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3, column"));
    let o = run(&["simulate", "--task", s(&bad)]);
    assert_eq!(o.status.code(), Some(1), "missing arguments are input errors");
}

#[test]
fn infeasible_balance_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let wc = dir.path().join("wc.json");
    std::fs::write(&wc, r#"{"wc": [0.0, 0.0, 30.0]}"#).unwrap();
    let o = run(&["robust", "--task", s(&data("regrasp_task.json")), "--wc", s(&wc)]);
    assert_eq!(o.status.code(), Some(2));
    let diag: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(diag["error"], "balance_infeasible");
}

#[test]
fn robust_auto_reports_largest_epsilon() {
    let o = run(&["robust", "--task", s(&data("regrasp_task.json")), "--wc", s(&data("regrasp_contacts.json"))]);
    assert_eq!(o.status.code(), Some(0));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["exact"], true);
    assert_eq!(r["epsilon"], r["max_epsilon"]);
}

#[test]
fn outputs_are_byte_identical_across_runs_and_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut traces = Vec::new();
    for (k, jobs) in ["1", "1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("run{k}"));
        let o = run(&[
            "--jobs",
            jobs,
            "simulate",
            "--task",
            s(&data("trapezoid_task.json")),
            "--motion",
            s(&data("trapezoid_motion.json")),
            "--out",
            s(&out),
        ]);
        assert_eq!(o.status.code(), Some(0));
        traces.push(std::fs::read(out.join("trace.csv")).unwrap());
    }
    assert!(traces.windows(2).all(|w| w[0] == w[1]));

    let mut maps = Vec::new();
    for jobs in ["1", "2"] {
        let o = run(&["--jobs", jobs, "fcmap", "--task", s(&data("regrasp_task.json")), "--spec", s(&data("regrasp_spec.json")), "--step", "0.005"]);
        assert_eq!(o.status.code(), Some(0));
        maps.push(o.stdout);
    }
    assert_eq!(maps[0], maps[1]);
}

fn short_ident_config(dir: &Path) -> PathBuf {
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(data("ident_config.json")).unwrap()).unwrap();
    cfg["task"] = json!(s(&data("regrasp_task.json")));
    cfg["synthetic"]["drag"]["duration"] = json!(1.0);
    cfg["synthetic"]["drag"]["displacement"] = json!([0.0, -0.01]);
    cfg["max_iterations"] = json!(15);
    let path = dir.join("ident.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn seeded_identification_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_ident_config(dir.path());
    let runs: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let o = run(&["--seed", "7", "ident", "--config", s(&cfg), "--noise", "1e-5", "--out", s(&out)]);
            assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
            std::fs::read(out.join("comparison.csv")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    let other = dir.path().join("c");
    let o = run(&["--seed", "8", "ident", "--config", s(&cfg), "--noise", "1e-5", "--out", s(&other)]);
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(std::fs::read(other.join("comparison.csv")).unwrap(), runs[0]);
}

#[test]
fn ident_reads_a_trace_written_by_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_ident_config(dir.path());
    let motion = dir.path().join("drag.json");
    std::fs::write(
        &motion,
        json!({"kind": "hand", "heights": [0.17, 0.17], "waypoints": [[0.0, 0.0, 0.17], [1.0, 0.0, 0.16]], "sample_period": 0.003})
            .to_string(),
    )
    .unwrap();
    let sim = dir.path().join("sim");
    let o = run(&["simulate", "--task", s(&data("regrasp_task.json")), "--motion", s(&motion), "--out", s(&sim)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["ident", "--config", s(&cfg), "--trace", s(&sim.join("trace.csv"))]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(r["residual"].as_f64().unwrap() <= r["initial_residual"].as_f64().unwrap());
}

#[test]
fn stiffness_sweep_table() {
    let o = run(&["stiffness2r", "--theta2-sweep", "0:0.0174532925199433:3.12"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 179);
    assert!(rows[0].ends_with("false"), "singular elbow");
    let pd: Vec<bool> = rows.iter().map(|r| r.ends_with("true")).collect();
    assert!(pd[1..90].iter().all(|&p| p));
    assert!(pd[90..].iter().all(|&p| !p));
}

#[test]
fn runaway_drag_halts_with_diagnostic() {
    let finger = TwoLinkFinger::new([1.0, 1.0], [1.0, 1.0]);
    let theta = [0.0, 3.0 * FRAC_PI_4];
    let tip = finger.forward(theta);
    let n = rotation(-FRAC_PI_4) * finger.force_at(theta).unwrap().normalize();
    let t = Vec2::new(n.y, -n.x);
    let pts = [tip - t, tip + t, tip + t + n * 2.0, tip - t + n * 2.0];
    let seg = |i: usize| json!({"segment": {"start": [pts[i].x, pts[i].y], "end": [pts[(i + 1) % 4].x, pts[(i + 1) % 4].y]}});
    let task = json!({
        "boundary": [seg(0), seg(1), seg(2), seg(3)],
        "env_contacts": [
            {"position": [pts[2].x, pts[2].y], "normal": [-n.x, -n.y]},
            {"position": [pts[3].x, pts[3].y], "normal": [-n.x, -n.y]}
        ],
        "mu": 1.0, "mu_e": 1.0, "gravity_wrench": [0.0, 0.0, -1.0], "characteristic_length": 1.0
    });
    let motion = json!({
        "kind": "waypoints",
        "fingers": [{"anchor": [0.0, 0.0], "stiffness": {"model": "2r", "torques": [1.0, 1.0], "links": [1.0, 1.0]}, "s": 1.0}],
        "waypoints": [[0.0, 0.0, 0.0], [0.1, 0.0, -0.001]]
    });
    let dir = tempfile::tempdir().unwrap();
    let (tp, mp) = (dir.path().join("task.json"), dir.path().join("motion.json"));
    std::fs::write(&tp, task.to_string()).unwrap();
    std::fs::write(&mp, motion.to_string()).unwrap();
    let o = run(&["simulate", "--task", s(&tp), "--motion", s(&mp), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let diag: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(diag["error"], "degenerate_type_ii");
    assert!(diag["message"].as_str().unwrap().contains("quasistatic assumption is violated"));
}
