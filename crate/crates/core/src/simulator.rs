//! Quasistatic stick/slide time stepping for spring fingers on a rigid object
//! whose motion is prescribed.
//!
//! Each finger is integrated independently with explicit Euler. Sticking
//! fingers keep their body-frame contact point; sliding fingers advance the
//! boundary parameter with the forward sliding rate and are then projected
//! back onto their friction cone edge by a Newton correction of the contact
//! point. Stick-to-slide instants are located by bisection on the sign of
//! the cone margin.

use std::fmt::Write as _;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finger::{decompose, ContactForce, FingerState, MODE_TOL};
use crate::model::{ObjectPose, TaskModel, Vec2};
use crate::robustness::margin_from_facets;
use crate::sliding::{check_degeneracy, coefficients_from, planar_inputs, Degeneracy};
use crate::{linalg, wrench};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FingerMode {
    Sticking,
    Sliding,
    Separated,
}

impl FingerMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FingerMode::Sticking => "sticking",
            FingerMode::Sliding => "sliding",
            FingerMode::Separated => "separated",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sticking" => Ok(FingerMode::Sticking),
            "sliding" => Ok(FingerMode::Sliding),
            "separated" => Ok(FingerMode::Separated),
            other => Err(Error::Parse(format!("unknown finger mode {other:?}"))),
        }
    }
}

/// Hand and anchor positions commanded at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Drive {
    pub hand: Vec2,
    pub anchors: Vec<Vec2>,
}

pub type DriveFn<'a> = &'a (dyn Fn(f64) -> Drive + Sync);
pub type ObjectFn<'a> = &'a (dyn Fn(f64) -> ObjectPose + Sync);

#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    pub pose: ObjectPose,
    pub fingers: Vec<FingerState>,
    pub modes: Vec<FingerMode>,
    pub forces: Vec<ContactForce>,
    /// Sign of `f_t` along the world tangent, meaningful while sliding.
    pub edge_signs: Vec<f64>,
}

impl SimState {
    /// Places fingertips on the boundary at their parameters and classifies
    /// each contact: interior forces stick, cone-edge forces slide.
    pub fn new(task: &TaskModel, pose: ObjectPose, mut fingers: Vec<FingerState>, mode_tol: f64) -> Result<Self> {
        let mut modes = Vec::new();
        let mut forces = Vec::new();
        let mut signs = Vec::new();
        for (i, f) in fingers.iter_mut().enumerate() {
            let (s, anchor) = (f.s, f.anchor);
            let (cf, tangent) = evaluate(task, f, s, &anchor, &pose)?;
            let limit = task.mu * cf.f_n.norm();
            let ft = cf.f_t.norm();
            let mode = if cf.normal_magnitude() <= 0.0 {
                FingerMode::Separated
            } else if (ft - limit).abs() <= mode_tol * limit {
                FingerMode::Sliding
            } else if ft < limit {
                FingerMode::Sticking
            } else {
                return Err(Error::precondition(
                    "simulator",
                    format!("finger {i} starts outside its friction cone (|f_t| = {ft}, mu |f_N| = {limit})"),
                ));
            };
            modes.push(mode);
            forces.push(cf);
            signs.push(if cf.f_t.dot(&tangent) >= 0.0 { 1.0 } else { -1.0 });
        }
        Ok(Self { t: 0.0, pose, fingers, modes, forces, edge_signs: signs })
    }
}

/// Places the fingertip at boundary parameter `s` and returns the contact
/// force split with the world normal, plus the world tangent.
fn evaluate(
    task: &TaskModel,
    finger: &mut FingerState,
    s: f64,
    anchor: &Vec2,
    pose: &ObjectPose,
) -> Result<(ContactForce, Vec2)> {
    let q = task.surface_query(s)?;
    finger.s = s;
    finger.anchor = *anchor;
    finger.fingertip = pose.to_world(&q.position);
    let r = pose.rotation();
    let cf = decompose(&finger.force()?, &(r * q.normal))?;
    Ok((cf, r * q.tangent))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub sample_period: f64,
    pub duration: f64,
    pub mode_tol: f64,
    /// Time resolution of stick-to-slide instants.
    pub transition_tol: f64,
    /// Optional admissible boundary parameter range per finger.
    pub ranges: Vec<Option<(f64, f64)>>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            sample_period: 1e-3,
            duration: 1.0,
            mode_tol: MODE_TOL,
            transition_tol: 1e-9,
            ranges: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub t: f64,
    pub finger: usize,
    pub from: FingerMode,
    pub to: FingerMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub hand: Vec2,
    pub anchors: Vec<Vec2>,
    pub fingertips_body: Vec<Vec2>,
    pub forces: Vec<Vec2>,
    pub modes: Vec<FingerMode>,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub transitions: Vec<Transition>,
}

fn lerp_pose(p0: &ObjectPose, p1: &ObjectPose, u: f64, dt: f64) -> ObjectPose {
    ObjectPose {
        position: p0.position + (p1.position - p0.position) * u,
        angle: p0.angle + (p1.angle - p0.angle) * u,
        velocity: (p1.position - p0.position) / dt,
        omega: (p1.angle - p0.angle) / dt,
    }
}

struct StepCtx<'a> {
    task: &'a TaskModel,
    cfg: &'a SimConfig,
    index: usize,
    t0: f64,
    dt: f64,
    a0: Vec2,
    a1: Vec2,
    p0: ObjectPose,
    p1: ObjectPose,
}

impl StepCtx<'_> {
    fn at(&self, u: f64) -> (Vec2, ObjectPose) {
        (self.a0 + (self.a1 - self.a0) * u, lerp_pose(&self.p0, &self.p1, u, self.dt))
    }

    fn fail(&self, u: f64, e: Error) -> Error {
        Error::Simulation { finger: self.index, time: self.t0 + u * self.dt, source: Box::new(e) }
    }

    fn margin_at(&self, finger: &mut FingerState, s: f64, u: f64) -> Result<f64> {
        let (a, p) = self.at(u);
        let (cf, _) = evaluate(self.task, finger, s, &a, &p)?;
        Ok(cf.cone_margin(self.task.mu))
    }

    /// Signed edge residual `σ f·t̂ − μ f·n̂` at the end of the step.
    fn edge_residual(&self, finger: &mut FingerState, s: f64, sigma: f64) -> Result<f64> {
        let (cf, t) = evaluate(self.task, finger, self.task.boundary.wrap(s), &self.a1, &self.p1)?;
        Ok(sigma * cf.f_c.dot(&t) - self.task.mu * cf.normal_magnitude())
    }

    /// Newton iteration on the contact parameter restoring the cone edge.
    fn project(&self, finger: &mut FingerState, s_guess: f64, sigma: f64) -> Result<f64> {
        let h = 1e-7;
        let mut s = s_guess;
        for _ in 0..60 {
            let r = self.edge_residual(finger, s, sigma)?;
            let scale = finger.force()?.norm().max(1e-300);
            if r.abs() <= 1e-13 * scale {
                return Ok(self.task.boundary.wrap(s));
            }
            let dr = (self.edge_residual(finger, s + h, sigma)? - self.edge_residual(finger, s - h, sigma)?) / (2.0 * h);
            if dr == 0.0 || !dr.is_finite() {
                break;
            }
            let step = r / dr;
            s -= step;
            if step.abs() < 1e-15 {
                return Ok(self.task.boundary.wrap(s));
            }
        }
        let r = self.edge_residual(finger, s, sigma)?;
        if r.abs() <= 1e-9 * finger.force()?.norm() {
            return Ok(self.task.boundary.wrap(s));
        }
        Err(Error::TypeII { lambda_den: 0.0 })
    }
}

struct FingerStep {
    finger: FingerState,
    mode: FingerMode,
    sigma: f64,
    force: ContactForce,
    transitions: Vec<Transition>,
}

fn step_finger(ctx: &StepCtx, finger: &FingerState, mode: FingerMode, sigma: f64) -> Result<FingerStep> {
    let mut f = finger.clone();
    let mut out = FingerStep { finger: f.clone(), mode, sigma, force: ContactForce::default_zero(), transitions: Vec::new() };
    let record = |out: &mut FingerStep, u: f64, to: FingerMode| {
        out.transitions.push(Transition { t: ctx.t0 + u * ctx.dt, finger: ctx.index, from: out.mode, to });
        out.mode = to;
    };
    match mode {
        FingerMode::Separated => {
            let s = f.s;
            evaluate(ctx.task, &mut f, s, &ctx.a1, &ctx.p1)?;
            out.finger = f;
            out.force = ContactForce::default_zero();
            return Ok(out);
        }
        FingerMode::Sticking => {
            let s = f.s;
            let (cf, _) = evaluate(ctx.task, &mut f, s, &ctx.a1, &ctx.p1)?;
            if cf.normal_magnitude() <= 0.0 {
                record(&mut out, 1.0, FingerMode::Separated);
            } else if cf.cone_margin(ctx.task.mu) > 0.0 {
                let mut lo = 0.0;
                let mut hi = 1.0;
                if ctx.margin_at(&mut f, s, 0.0)? > 0.0 {
                    hi = 0.0;
                }
                while (hi - lo) * ctx.dt > ctx.cfg.transition_tol {
                    let mid = 0.5 * (lo + hi);
                    if ctx.margin_at(&mut f, s, mid)? > 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let (a, p) = ctx.at(hi);
                let (cf_t, tangent) = evaluate(ctx.task, &mut f, s, &a, &p)?;
                out.sigma = if cf_t.f_t.dot(&tangent) >= 0.0 { 1.0 } else { -1.0 };
                record(&mut out, hi, FingerMode::Sliding);
                return slide(ctx, f, hi, out, false);
            }
            out.force = evaluate(ctx.task, &mut f, s, &ctx.a1, &ctx.p1)?.0;
            out.finger = f;
            Ok(out)
        }
        FingerMode::Sliding => slide(ctx, f, 0.0, out, true),
    }
}

/// Sliding from fraction `u0` of the step to its end.
fn slide(ctx: &StepCtx, mut f: FingerState, u0: f64, mut out: FingerStep, was_sliding: bool) -> Result<FingerStep> {
    let (a, p) = ctx.at(u0);
    let s0 = f.s;
    evaluate(ctx.task, &mut f, s0, &a, &p)?;
    let pa_dot = (ctx.a1 - ctx.a0) / ctx.dt;
    let input = planar_inputs(ctx.task, &p, &f)?;
    let coeffs = coefficients_from(&input, &pa_dot)?;
    match check_degeneracy(&coeffs) {
        Degeneracy::TypeII | Degeneracy::Runaway => {
            return Err(ctx.fail(u0, Error::TypeII { lambda_den: coeffs.lambda_den }));
        }
        Degeneracy::TypeI | Degeneracy::None => {}
    }
    let lambda = coeffs.g_lambda.dot(&pa_dot) - coeffs.c_lambda;
    let remaining = (1.0 - u0) * ctx.dt;
    let s_guess = if lambda > 0.0 {
        let q = ctx.task.surface_query(s0)?;
        let rel_body = p.rotation().transpose() * (coeffs.f_t * lambda);
        s0 + q.tangent.dot(&rel_body) * remaining
    } else {
        s0
    };
    if lambda <= 0.0 {
        // force rate points into the cone: try sticking for the rest of the step
        let (cf, _) = evaluate(ctx.task, &mut f, s0, &ctx.a1, &ctx.p1)?;
        if cf.normal_magnitude() <= 0.0 {
            out.transitions.push(Transition { t: ctx.t0 + ctx.dt, finger: ctx.index, from: out.mode, to: FingerMode::Separated });
            out.mode = FingerMode::Separated;
            out.force = cf;
            out.finger = f;
            return Ok(out);
        }
        if cf.cone_margin(ctx.task.mu) <= 0.0 {
            if was_sliding {
                out.transitions.push(Transition {
                    t: ctx.t0 + u0 * ctx.dt,
                    finger: ctx.index,
                    from: FingerMode::Sliding,
                    to: FingerMode::Sticking,
                });
            } else if let Some(last) = out.transitions.pop() {
                // the slide never started
                debug_assert_eq!(last.to, FingerMode::Sliding);
            }
            out.mode = FingerMode::Sticking;
            out.force = cf;
            out.finger = f;
            return Ok(out);
        }
    }
    let s1 = ctx.project(&mut f, s_guess, out.sigma).map_err(|e| ctx.fail(1.0, e))?;
    if let Some(Some((lo, hi))) = ctx.cfg.ranges.get(ctx.index) {
        if s1 < *lo || s1 > *hi {
            return Err(ctx.fail(
                1.0,
                Error::geometry("simulator", format!("fingertip left its boundary range [{lo}, {hi}] (s = {s1})")),
            ));
        }
    }
    let (cf, _) = evaluate(ctx.task, &mut f, s1, &ctx.a1, &ctx.p1)?;
    if cf.normal_magnitude() <= 0.0 {
        out.transitions.push(Transition { t: ctx.t0 + ctx.dt, finger: ctx.index, from: out.mode, to: FingerMode::Separated });
        out.mode = FingerMode::Separated;
    }
    out.force = cf;
    out.finger = f;
    Ok(out)
}

impl ContactForce {
    fn default_zero() -> Self {
        ContactForce { f_c: Vec2::zeros(), f_n: Vec2::zeros(), f_t: Vec2::zeros(), normal: Vec2::new(0.0, 1.0) }
    }
}

/// Advances every finger from `state` to anchors `anchors_next` and object
/// pose `pose_next` over `dt`, interpolating linearly inside the step.
pub fn advance(
    task: &TaskModel,
    state: &SimState,
    anchors_next: &[Vec2],
    pose_next: &ObjectPose,
    dt: f64,
    cfg: &SimConfig,
) -> Result<(SimState, Vec<Transition>)> {
    if !(dt > 0.0) {
        return Err(Error::precondition("simulator", format!("time step must be > 0, got {dt}")));
    }
    if anchors_next.len() != state.fingers.len() {
        return Err(Error::precondition("simulator", "one anchor position per finger is required"));
    }
    let mut next = state.clone();
    next.t = state.t + dt;
    next.pose = *pose_next;
    next.pose.velocity = (pose_next.position - state.pose.position) / dt;
    next.pose.omega = (pose_next.angle - state.pose.angle) / dt;
    let mut transitions = Vec::new();
    for i in 0..state.fingers.len() {
        let ctx = StepCtx {
            task,
            cfg,
            index: i,
            t0: state.t,
            dt,
            a0: state.fingers[i].anchor,
            a1: anchors_next[i],
            p0: state.pose,
            p1: *pose_next,
        };
        let r = step_finger(&ctx, &state.fingers[i], state.modes[i], state.edge_signs[i]).map_err(|e| match e {
            Error::Simulation { .. } => e,
            other => ctx.fail(0.0, other),
        })?;
        next.fingers[i] = r.finger;
        next.modes[i] = r.mode;
        next.edge_signs[i] = r.sigma;
        next.forces[i] = r.force;
        transitions.extend(r.transitions);
    }
    Ok((next, transitions))
}

/// One step driven by anchor velocities and an object twist.
pub fn step(
    task: &TaskModel,
    state: &SimState,
    anchor_velocities: &[Vec2],
    twist: (Vec2, f64),
    dt: f64,
    cfg: &SimConfig,
) -> Result<SimState> {
    let anchors: Vec<Vec2> = state.fingers.iter().zip(anchor_velocities).map(|(f, v)| f.anchor + v * dt).collect();
    let pose = ObjectPose {
        position: state.pose.position + twist.0 * dt,
        angle: state.pose.angle + twist.1 * dt,
        velocity: twist.0,
        omega: twist.1,
    };
    Ok(advance(task, state, &anchors, &pose, dt, cfg)?.0)
}

struct MarginCache {
    pose: Option<ObjectPose>,
    facets: Vec<DVector<f64>>,
    full_rank: bool,
    w: nalgebra::DMatrix<f64>,
}

impl MarginCache {
    fn margin(&mut self, task: &TaskModel, state: &SimState) -> Result<f64> {
        let stale = self.pose.map_or(true, |p| p.position != state.pose.position || p.angle != state.pose.angle);
        if stale {
            let cone = wrench::build_external_cone(task, &state.pose)?;
            self.full_rank = linalg::rank(&cone.w) == cone.w.nrows();
            self.facets = if self.full_rank { linalg::cone_facets(&cone.w) } else { Vec::new() };
            self.w = cone.w;
            self.pose = Some(state.pose);
        }
        let contacts: Vec<(Vec2, Vec2)> = state
            .fingers
            .iter()
            .zip(&state.modes)
            .zip(&state.forces)
            .filter(|((_, m), _)| **m != FingerMode::Separated)
            .map(|((f, _), cf)| (f.fingertip, cf.f_c))
            .collect();
        let wc = wrench::finger_wrench(task, &state.pose, &contacts);
        let wg = wrench::gravity(task);
        if self.full_rank {
            Ok(margin_from_facets(&self.facets, &(-(wc + wg))))
        } else {
            crate::robustness::margin(&self.w, &wc, &wg)
        }
    }
}

fn row(state: &SimState, hand: Vec2, margin: f64) -> TraceRow {
    TraceRow {
        t: state.t,
        hand,
        anchors: state.fingers.iter().map(|f| f.anchor).collect(),
        fingertips_body: state.fingers.iter().map(|f| state.pose.to_body(&f.fingertip)).collect(),
        forces: state.forces.iter().map(|c| c.f_c).collect(),
        modes: state.modes.clone(),
        margin,
    }
}

/// Runs the hybrid integration over `[0, duration]`, sampling every
/// `sample_period` (first row at `t = sample_period`).
pub fn simulate(task: &TaskModel, fingers: Vec<FingerState>, drive: DriveFn, object: ObjectFn, cfg: &SimConfig) -> Result<Trace> {
    Ok(simulate_with_state(task, fingers, drive, object, cfg)?.0)
}

/// As [`simulate`], also returning the final state.
pub fn simulate_with_state(
    task: &TaskModel,
    mut fingers: Vec<FingerState>,
    drive: DriveFn,
    object: ObjectFn,
    cfg: &SimConfig,
) -> Result<(Trace, SimState)> {
    if !(cfg.dt > 0.0) || !(cfg.sample_period > 0.0) || !(cfg.duration > 0.0) {
        return Err(Error::precondition("simulator", "dt, sample period and duration must be > 0"));
    }
    let per_sample = (cfg.sample_period / cfg.dt).round();
    if per_sample < 1.0 || (per_sample * cfg.dt - cfg.sample_period).abs() > 1e-9 * cfg.sample_period {
        return Err(Error::precondition(
            "simulator",
            format!("dt = {} must divide the sample period {}", cfg.dt, cfg.sample_period),
        ));
    }
    let per_sample = per_sample as usize;
    let samples = (cfg.duration / cfg.sample_period - 1e-9).ceil().max(1.0) as usize;
    let d0 = drive(0.0);
    if d0.anchors.len() != fingers.len() {
        return Err(Error::precondition("simulator", "drive must command one anchor per finger"));
    }
    for (f, a) in fingers.iter_mut().zip(&d0.anchors) {
        f.anchor = *a;
    }
    let mut state = SimState::new(task, object(0.0), fingers, cfg.mode_tol)?;
    let mut cache = MarginCache { pose: None, facets: Vec::new(), full_rank: false, w: nalgebra::DMatrix::zeros(0, 0) };
    let mut trace = Trace { rows: Vec::with_capacity(samples), transitions: Vec::new() };
    for k in 1..=samples * per_sample {
        let t1 = k as f64 * cfg.dt;
        let d = drive(t1);
        let (next, tr) = advance(task, &state, &d.anchors, &object(t1), cfg.dt, cfg)?;
        state = next;
        state.t = t1;
        trace.transitions.extend(tr);
        if k % per_sample == 0 {
            let m = cache.margin(task, &state)?;
            trace.rows.push(row(&state, d.hand, m));
        }
    }
    Ok((trace, state))
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

impl Trace {
    pub fn finger_count(&self) -> usize {
        self.rows.first().map_or(0, |r| r.anchors.len())
    }

    pub fn csv_header(n: usize) -> String {
        let mut cols = vec!["t".to_string(), "phx".into(), "phy".into()];
        for i in 1..=n {
            cols.push(format!("pa{i}x"));
            cols.push(format!("pa{i}y"));
        }
        for i in 1..=n {
            cols.push(format!("pf{i}B_x"));
            cols.push(format!("pf{i}B_y"));
        }
        for i in 1..=n {
            cols.push(format!("fc{i}x"));
            cols.push(format!("fc{i}y"));
        }
        for i in 1..=n {
            cols.push(format!("mode{i}"));
        }
        cols.push("margin".into());
        cols.join(",")
    }

    /// CSV with one row per sample; floats use 17 significant digits.
    pub fn to_csv(&self) -> String {
        let n = self.finger_count();
        let mut out = Self::csv_header(n);
        out.push('\n');
        for r in &self.rows {
            let mut fields = vec![fmt(r.t), fmt(r.hand.x), fmt(r.hand.y)];
            for v in r.anchors.iter().chain(&r.fingertips_body).chain(&r.forces) {
                fields.push(fmt(v.x));
                fields.push(fmt(v.y));
            }
            for m in &r.modes {
                fields.push(m.as_str().into());
            }
            fields.push(fmt(r.margin));
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }

    /// Ordered `(finger, from, to)` mode changes.
    pub fn mode_sequence(&self) -> Vec<(usize, FingerMode, FingerMode)> {
        self.transitions.iter().map(|t| (t.finger, t.from, t.to)).collect()
    }
}
