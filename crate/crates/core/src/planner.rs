//! Robust two-finger sliding regrasp on a stationary object.
//!
//! A configuration is the pair of fingertip heights `ξ = (y₁, y₂)` in the
//! body frame, each finger sliding on a fixed face. With both contact forces
//! held on their sliding cone edges, the hand position follows uniquely from
//! the fingertip positions, so plans are made in `ξ` and mapped to the hand.
//! Phase 1 moves the hand with a rest-to-rest cubic until the forces reach
//! the cone edges; Phase 2 slides along a cubic / constant-speed / cubic
//! path whose middle piece follows the maximal-margin curve `ξ*`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Matrix2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finger::{decompose, is_positive_definite, FingerState, StiffnessModel};
use crate::model::{left_normal, rotation, Mat2, TaskModel, Vec2};
use crate::robustness::{margin_from_facets, margin};
use crate::simulator::{simulate_with_state, Drive, SimConfig, Trace};
use crate::wrench::{balance_lp, build_external_cone, finger_wrench, gravity};
use crate::linalg;

/// Minimum duration of any Phase-2 piece.
pub const MIN_PIECE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandModel {
    /// Hand position at the start of a plan.
    pub position: Vec2,
    /// Fixed hand orientation.
    #[serde(default)]
    pub angle: f64,
    /// Anchor positions in the hand frame.
    pub anchor_offsets: Vec<Vec2>,
    /// Per-finger stiffness, row-major.
    pub stiffness: Vec<[[f64; 2]; 2]>,
    #[serde(default)]
    pub rest_offsets: Vec<Vec2>,
    /// Boundary piece each finger slides on.
    pub faces: Vec<usize>,
}

impl HandModel {
    pub fn validate(&self, task: &TaskModel) -> Result<()> {
        let n = self.anchor_offsets.len();
        if n != 2 || self.stiffness.len() != n || self.faces.len() != n {
            return Err(Error::precondition(
                "planner",
                "hand needs exactly two fingers with one anchor offset, stiffness and face each",
            ));
        }
        if !self.rest_offsets.is_empty() && self.rest_offsets.len() != n {
            return Err(Error::precondition("planner", "rest_offsets must be empty or one per finger"));
        }
        for i in 0..n {
            let k = self.k(i);
            if (k - k.transpose()).norm() > 1e-9 * k.norm() || !is_positive_definite(&k) {
                return Err(Error::Domain(format!("hand stiffness {i} must be symmetric positive definite")));
            }
            if self.faces[i] >= task.boundary.pieces().len() {
                return Err(Error::precondition("planner", format!("face {} of finger {i} does not exist", self.faces[i])));
            }
        }
        Ok(())
    }

    pub fn rotation(&self) -> Mat2 {
        rotation(self.angle)
    }

    pub fn k(&self, i: usize) -> Mat2 {
        let r = self.stiffness[i];
        Matrix2::new(r[0][0], r[0][1], r[1][0], r[1][1])
    }

    pub fn rest_offset(&self, i: usize) -> Vec2 {
        self.rest_offsets.get(i).copied().unwrap_or_else(Vec2::zeros)
    }

    pub fn anchors(&self, hand: &Vec2) -> Vec<Vec2> {
        let r = self.rotation();
        self.anchor_offsets.iter().map(|o| hand + r * o).collect()
    }

    /// Boundary parameter of finger `i` at body height `y`.
    pub fn parameter(&self, task: &TaskModel, i: usize, y: f64) -> Result<f64> {
        task.boundary.parameter_at_height(self.faces[i], y)
    }

    /// Finger states with fingertips at heights `y` and the hand at `hand`.
    pub fn finger_states(&self, task: &TaskModel, y: &Vec2, hand: &Vec2) -> Result<Vec<FingerState>> {
        let anchors = self.anchors(hand);
        (0..2)
            .map(|i| {
                let s = self.parameter(task, i, y[i])?;
                let q = task.boundary.query_on_piece(self.faces[i], s)?;
                Ok(FingerState {
                    anchor: anchors[i],
                    fingertip: task.object_pose.to_world(&q.position),
                    rest_offset: self.rest_offset(i),
                    stiffness: StiffnessModel::Constant(self.k(i)),
                    s,
                })
            })
            .collect()
    }
}

/// World-frame contact geometry with the intended sliding direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactSite {
    pub position: Vec2,
    pub normal: Vec2,
    /// Unit direction the fingertip slides relative to the object.
    pub slide: Vec2,
}

/// Hand position that puts both spring forces on their sliding cone edges.
pub fn hand_from_contacts(task: &TaskModel, hand: &HandModel, sites: &[ContactSite; 2]) -> Result<Vec2> {
    let r = hand.rotation();
    let mut a = Mat2::zeros();
    let mut b = Vec2::zeros();
    let mut edges = [Vec2::zeros(); 2];
    for (i, site) in sites.iter().enumerate() {
        let e = (site.normal + site.slide * task.mu).normalize();
        edges[i] = e;
        let row = left_normal(&e).transpose() * hand.k(i);
        a.set_row(i, &row);
        b[i] = (row * (site.position - r * hand.anchor_offsets[i] - hand.rest_offset(i)))[0];
    }
    let scale = a.row(0).norm() * a.row(1).norm();
    if !(a.determinant().abs() > 1e-12 * scale) {
        return Err(Error::geometry("planner", "cone-edge conditions of the two fingers are parallel"));
    }
    let p_h = a.lu().solve(&b).ok_or_else(|| Error::singular("planner", "hand position system"))?;
    let anchors = hand.anchors(&p_h);
    for i in 0..2 {
        let f = -hand.k(i) * (sites[i].position - anchors[i] - hand.rest_offset(i));
        if f.dot(&edges[i]) <= 0.0 {
            return Err(Error::geometry("planner", format!("finger {i} would pull on the object")));
        }
    }
    Ok(p_h)
}

/// Sign of the intended rate of each fingertip height.
pub type Directions = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcPoint {
    pub y: Vec2,
    pub feasible: bool,
    /// Wrench-cone margin `d` (N); `None` when no hand position exists.
    pub margin: Option<f64>,
    pub hand: Option<Vec2>,
    pub forces: Option<[Vec2; 2]>,
}

/// Cached cone data for evaluating many configurations of one task.
pub struct Evaluator<'a> {
    pub task: &'a TaskModel,
    pub hand: &'a HandModel,
    pub directions: Directions,
    w: DMatrix<f64>,
    facets: Option<Vec<DVector<f64>>>,
    wg: DVector<f64>,
}

impl<'a> Evaluator<'a> {
    pub fn new(task: &'a TaskModel, hand: &'a HandModel, directions: Directions) -> Result<Self> {
        task.validate()?;
        hand.validate(task)?;
        if directions.iter().any(|d| *d != 1.0 && *d != -1.0) {
            return Err(Error::precondition("planner", "sliding directions must be +1 or -1"));
        }
        let cone = build_external_cone(task, &task.object_pose)?;
        let facets = (linalg::rank(&cone.w) == cone.w.nrows()).then(|| linalg::cone_facets(&cone.w));
        Ok(Self { task, hand, directions, w: cone.w, facets, wg: gravity(task) })
    }

    pub fn sites(&self, y: &Vec2) -> Result<[ContactSite; 2]> {
        let pose = &self.task.object_pose;
        let r = pose.rotation();
        let mut out = [ContactSite { position: Vec2::zeros(), normal: Vec2::zeros(), slide: Vec2::zeros() }; 2];
        for i in 0..2 {
            let s = self.hand.parameter(self.task, i, y[i])?;
            let q = self.task.boundary.query_on_piece(self.hand.faces[i], s)?;
            if q.tangent.y.abs() < 1e-12 {
                return Err(Error::geometry("planner", format!("face of finger {i} is horizontal at height {}", y[i])));
            }
            let along = q.tangent * (self.directions[i] * q.tangent.y.signum());
            out[i] = ContactSite { position: pose.to_world(&q.position), normal: r * q.normal, slide: r * along };
        }
        Ok(out)
    }

    pub fn hand_at(&self, y: &Vec2) -> Result<Vec2> {
        hand_from_contacts(self.task, self.hand, &self.sites(y)?)
    }

    pub fn point(&self, y: &Vec2) -> FcPoint {
        let infeasible = FcPoint { y: *y, feasible: false, margin: None, hand: None, forces: None };
        let Ok(sites) = self.sites(y) else { return infeasible };
        let Ok(p_h) = hand_from_contacts(self.task, self.hand, &sites) else { return infeasible };
        let anchors = self.hand.anchors(&p_h);
        let forces: [Vec2; 2] =
            std::array::from_fn(|i| -self.hand.k(i) * (sites[i].position - anchors[i] - self.hand.rest_offset(i)));
        if (0..2).any(|i| decompose(&forces[i], &sites[i].normal).map_or(true, |c| c.normal_magnitude() <= 0.0)) {
            return infeasible;
        }
        let contacts = [(sites[0].position, forces[0]), (sites[1].position, forces[1])];
        let wc = finger_wrench(self.task, &self.task.object_pose, &contacts);
        let feasible = balance_lp(&self.w, &wc, &self.wg).map_or(false, |b| b.is_feasible());
        let d = match &self.facets {
            Some(f) => Some(margin_from_facets(f, &(-(&wc + &self.wg)))),
            None => margin(&self.w, &wc, &self.wg).ok(),
        };
        FcPoint { y: *y, feasible, margin: d, hand: Some(p_h), forces: Some(forces) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub y1: [f64; 2],
    pub y2: [f64; 2],
    pub step: f64,
}

impl GridSpec {
    pub fn axis(range: [f64; 2], step: f64) -> Result<Vec<f64>> {
        if !(step > 0.0) || !(range[1] >= range[0]) {
            return Err(Error::precondition("planner", format!("bad grid range {range:?} with step {step}")));
        }
        let n = ((range[1] - range[0]) / step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|k| range[0] + k as f64 * step).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcMap {
    pub grid: GridSpec,
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    /// Row-major over `y1`.
    pub cells: Vec<FcPoint>,
}

impl FcMap {
    pub fn cell(&self, i: usize, j: usize) -> &FcPoint {
        &self.cells[i * self.y2.len() + j]
    }

    /// Grid indices nearest to `y`, if inside the grid.
    pub fn nearest(&self, y: &Vec2) -> Option<(usize, usize)> {
        let idx = |axis: &[f64], v: f64| {
            let k = ((v - axis[0]) / self.grid.step).round();
            (k >= 0.0 && (k as usize) < axis.len()).then_some(k as usize)
        };
        Some((idx(&self.y1, y.x)?, idx(&self.y2, y.y)?))
    }

    /// Feasible cells 4-connected to `(i, j)`.
    pub fn component(&self, i: usize, j: usize) -> Vec<bool> {
        let (n1, n2) = (self.y1.len(), self.y2.len());
        let mut seen = vec![false; n1 * n2];
        if !self.cell(i, j).feasible {
            return seen;
        }
        let mut queue = VecDeque::from([(i, j)]);
        seen[i * n2 + j] = true;
        while let Some((a, b)) = queue.pop_front() {
            let mut push = |a: usize, b: usize| {
                if !seen[a * n2 + b] && self.cell(a, b).feasible {
                    seen[a * n2 + b] = true;
                    queue.push_back((a, b));
                }
            };
            if a > 0 {
                push(a - 1, b);
            }
            if a + 1 < n1 {
                push(a + 1, b);
            }
            if b > 0 {
                push(a, b - 1);
            }
            if b + 1 < n2 {
                push(a, b + 1);
            }
        }
        seen
    }

    pub fn connected(&self, a: &Vec2, b: &Vec2) -> bool {
        let (Some(ca), Some(cb)) = (self.nearest(a), self.nearest(b)) else { return false };
        self.component(ca.0, ca.1)[cb.0 * self.y2.len() + cb.1]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("y1,y2,feasible,margin\n");
        for c in &self.cells {
            let m = c.margin.map_or_else(|| "nan".to_string(), |m| format!("{m:.16e}"));
            out.push_str(&format!("{:.16e},{:.16e},{},{}\n", c.y.x, c.y.y, u8::from(c.feasible), m));
        }
        out
    }
}

pub fn fcmap(eval: &Evaluator, grid: &GridSpec) -> Result<FcMap> {
    let y1 = GridSpec::axis(grid.y1, grid.step)?;
    let y2 = GridSpec::axis(grid.y2, grid.step)?;
    let cells = y1
        .par_iter()
        .flat_map_iter(|&a| y2.iter().map(move |&b| Vec2::new(a, b)).collect::<Vec<_>>())
        .map(|y| eval.point(&y))
        .collect();
    Ok(FcMap { grid: *grid, y1, y2, cells })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiPoint {
    pub y: Vec2,
    pub margin: f64,
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd { (c, fc) } else { (d, fd) }
}

/// Maximal-margin curve: for each `y₁` on the scan grid, the feasible `y₂`
/// with the largest margin, refined between grid neighbours.
pub fn xi_star(eval: &Evaluator, grid: &GridSpec) -> Result<Vec<XiPoint>> {
    let y1 = GridSpec::axis(grid.y1, grid.step)?;
    let y2 = GridSpec::axis(grid.y2, grid.step)?;
    let score = |p: &FcPoint| if p.feasible { p.margin.unwrap_or(f64::NEG_INFINITY) } else { f64::NEG_INFINITY };
    let out: Vec<Option<XiPoint>> = y1
        .par_iter()
        .map(|&a| {
            let mut best: Option<(usize, f64)> = None;
            for (j, &b) in y2.iter().enumerate() {
                let m = score(&eval.point(&Vec2::new(a, b)));
                if m > f64::NEG_INFINITY && best.map_or(true, |(_, bm)| m > bm) {
                    best = Some((j, m));
                }
            }
            let (j, m) = best?;
            let lo = y2[j.saturating_sub(1)];
            let hi = y2[(j + 1).min(y2.len() - 1)];
            let (b, mb) = golden_max(|b| score(&eval.point(&Vec2::new(a, b))), lo, hi, 1e-7);
            Some(if mb > m { XiPoint { y: Vec2::new(a, b), margin: mb } } else { XiPoint { y: Vec2::new(a, y2[j]), margin: m } })
        })
        .collect();
    Ok(out.into_iter().flatten().collect())
}

/// Rest-to-rest cubic between two hand positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandCubic {
    pub start: Vec2,
    pub end: Vec2,
    pub t0: f64,
    pub t1: f64,
}

impl HandCubic {
    fn u(&self, t: f64) -> f64 {
        ((t - self.t0) / (self.t1 - self.t0)).clamp(0.0, 1.0)
    }

    pub fn position(&self, t: f64) -> Vec2 {
        let u = self.u(t);
        self.start + (self.end - self.start) * (u * u * (3.0 - 2.0 * u))
    }

    pub fn velocity(&self, t: f64) -> Vec2 {
        if t < self.t0 || t > self.t1 {
            return Vec2::zeros();
        }
        let u = self.u(t);
        (self.end - self.start) * (6.0 * u * (1.0 - u) / (self.t1 - self.t0))
    }

    /// The same motion played backwards over `[t0, t0 + duration]`.
    pub fn reversed(&self, t0: f64, duration: f64) -> Self {
        Self { start: self.end, end: self.start, t0, t1: t0 + duration }
    }
}

pub fn phase1_plan(start: Vec2, at_s: Vec2, t1: f64) -> Result<HandCubic> {
    if !(t1 > 0.0) {
        return Err(Error::precondition("planner", format!("T1 must be > 0, got {t1}")));
    }
    Ok(HandCubic { start, end: at_s, t0: 0.0, t1 })
}

/// Optional force relaxation after a regrasp, reusing the Phase-1 cubic.
pub fn phase3_plan(end_of_phase2: Vec2, relaxed: Vec2, t0: f64, duration: f64) -> Result<HandCubic> {
    if !(duration > 0.0) {
        return Err(Error::precondition("planner", "relaxation duration must be > 0"));
    }
    Ok(HandCubic { start: end_of_phase2, end: relaxed, t0, t1: t0 + duration })
}

/// Cubic Hermite on `[0, T]`: value and time derivative.
fn hermite(p0: &Vec2, m0: &Vec2, p1: &Vec2, m1: &Vec2, t: f64, tau: f64) -> (Vec2, Vec2) {
    let u = if t > 0.0 { (tau / t).clamp(0.0, 1.0) } else { 1.0 };
    let (u2, u3) = (u * u, u * u * u);
    let p = p0 * (2.0 * u3 - 3.0 * u2 + 1.0) + m0 * (t * (u3 - 2.0 * u2 + u)) + p1 * (-2.0 * u3 + 3.0 * u2) + m1 * (t * (u3 - u2));
    let v = if t > 0.0 {
        (p0 * (6.0 * u2 - 6.0 * u) + p1 * (6.0 * u - 6.0 * u2)) / t + m0 * (3.0 * u2 - 4.0 * u + 1.0) + m1 * (3.0 * u2 - 2.0 * u)
    } else {
        Vec2::zeros()
    };
    (p, v)
}

/// Largest speed of a cubic Hermite piece: endpoints plus interior
/// stationary points of `‖ξ̇‖²`.
fn hermite_peak_speed(p0: &Vec2, m0: &Vec2, p1: &Vec2, m1: &Vec2, t: f64) -> f64 {
    // ξ̇(u) = c2 u² + c1 u + c0
    let d = p1 - p0;
    let c2 = -d * 6.0 / t + (m0 + m1) * 3.0;
    let c1 = d * 6.0 / t - m0 * 4.0 - m1 * 2.0;
    let c0 = *m0;
    let speed = |u: f64| (c2 * (u * u) + c1 * u + c0).norm();
    let slope = |u: f64| (c2 * (u * u) + c1 * u + c0).dot(&(c2 * (2.0 * u) + c1));
    let mut best = speed(0.0).max(speed(1.0));
    let n = 32;
    for k in 0..n {
        let (mut a, mut b) = (k as f64 / n as f64, (k + 1) as f64 / n as f64);
        let (fa, fb) = (slope(a), slope(b));
        if fa == 0.0 {
            best = best.max(speed(a));
        }
        if fa * fb < 0.0 {
            let mut fa = fa;
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                let fm = slope(m);
                if (fm < 0.0) == (fa < 0.0) {
                    a = m;
                    fa = fm;
                } else {
                    b = m;
                }
            }
            best = best.max(speed(0.5 * (a + b)));
        }
    }
    best
}

/// Rest-or-moving cubic piece stays monotone in every component and moves
/// along `signs`: `0 ≤ m·T/Δ ≤ 3` per component for the moving end.
fn cubic_monotone(delta: &Vec2, m: &Vec2, t: f64, signs: &Directions) -> bool {
    for k in 0..2 {
        let scale = delta[k].abs().max(m[k].abs() * t);
        if delta[k] * signs[k] < -1e-12 {
            return false;
        }
        if delta[k].abs() <= 1e-12 {
            if m[k].abs() * t > 1e-12 {
                return false;
            }
            continue;
        }
        let beta = m[k] * t / delta[k];
        if beta < -1e-12 || beta > 3.0 + 1e-12 * scale.max(1.0) {
            return false;
        }
    }
    true
}

/// Phase-2 fingertip path: cubic `S → S′`, constant speed along `ξ*` from
/// `S′` to `G′`, cubic `G′ → G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase2 {
    pub s: Vec2,
    pub s_prime: Vec2,
    pub g_prime: Vec2,
    pub g: Vec2,
    /// `ξ*` vertices from `S′` to `G′`.
    pub path: Vec<Vec2>,
    pub dt21: f64,
    pub dt22: f64,
    pub dt23: f64,
    pub v_s: Vec2,
    pub v_g: Vec2,
    pub v2: f64,
    pub l2: f64,
    pub v_max: f64,
    pub objective: f64,
}

impl Phase2 {
    /// The motionless path for `S = G`.
    pub fn hold(s: Vec2, total: f64) -> Self {
        Self {
            s,
            s_prime: s,
            g_prime: s,
            g: s,
            path: vec![s],
            dt21: total,
            dt22: 0.0,
            dt23: 0.0,
            v_s: Vec2::zeros(),
            v_g: Vec2::zeros(),
            v2: 0.0,
            l2: 0.0,
            v_max: 0.0,
            objective: 0.0,
        }
    }

    pub fn duration(&self) -> f64 {
        self.dt21 + self.dt22 + self.dt23
    }

    fn along_path(&self, dist: f64) -> (Vec2, Vec2) {
        let mut left = dist.max(0.0);
        for w in self.path.windows(2) {
            let seg = w[1] - w[0];
            let len = seg.norm();
            if left <= len && len > 0.0 {
                return (w[0] + seg * (left / len), seg / len);
            }
            left -= len;
        }
        let dir = match self.path.len() {
            0 | 1 => Vec2::zeros(),
            n => (self.path[n - 1] - self.path[n - 2]).normalize(),
        };
        (*self.path.last().unwrap_or(&self.g_prime), dir)
    }

    /// Position and velocity at time `tau` after the start of Phase 2.
    pub fn state(&self, tau: f64) -> (Vec2, Vec2) {
        let z = Vec2::zeros();
        if tau <= self.dt21 {
            return hermite(&self.s, &z, &self.s_prime, &self.v_s, self.dt21, tau);
        }
        let tau2 = tau - self.dt21;
        if tau2 <= self.dt22 {
            let (p, dir) = self.along_path(self.v2 * tau2);
            return (p, dir * self.v2);
        }
        hermite(&self.g_prime, &self.v_g, &self.g, &z, self.dt23, (tau2 - self.dt22).min(self.dt23))
    }

    pub fn xi(&self, tau: f64) -> Vec2 {
        self.state(tau).0
    }
}

struct Spine {
    pts: Vec<Vec2>,
    cum: Vec<f64>,
    tangent: Vec<Vec2>,
    /// Number of segments before index k that break monotonicity.
    bad: Vec<usize>,
}

impl Spine {
    fn new(pts: Vec<Vec2>, signs: &Directions) -> Self {
        let n = pts.len();
        let mut cum = vec![0.0; n];
        let mut bad = vec![0; n];
        for k in 1..n {
            let seg = pts[k] - pts[k - 1];
            cum[k] = cum[k - 1] + seg.norm();
            let ok = (0..2).all(|c| seg[c] * signs[c] >= -1e-12);
            bad[k] = bad[k - 1] + usize::from(!ok);
        }
        let tangent = (0..n)
            .map(|k| {
                let a = pts[k.saturating_sub(1)];
                let b = pts[(k + 1).min(n - 1)];
                let d = b - a;
                if d.norm() > 0.0 { d.normalize() } else { Vec2::zeros() }
            })
            .collect();
        Self { pts, cum, tangent, bad }
    }

    fn monotone(&self, a: usize, b: usize) -> bool {
        self.bad[b] == self.bad[a]
    }
}

struct PairSearch<'a> {
    spine: &'a Spine,
    s: Vec2,
    g: Vec2,
    total: f64,
    kappa: f64,
    signs: Directions,
}

impl PairSearch<'_> {
    /// Peak speed for given end-piece durations, `None` if infeasible.
    fn v_max(&self, a: usize, b: usize, dt21: f64, dt23: f64) -> Option<(f64, Vec2, Vec2, f64)> {
        let dt22 = self.total - dt21 - dt23;
        if dt21 < MIN_PIECE - 1e-12 || dt23 < MIN_PIECE - 1e-12 || dt22 < MIN_PIECE - 1e-12 {
            return None;
        }
        let l2 = self.spine.cum[b] - self.spine.cum[a];
        let v2 = l2 / dt22;
        let (sp, gp) = (self.spine.pts[a], self.spine.pts[b]);
        let v_s = self.spine.tangent[a] * v2;
        let v_g = self.spine.tangent[b] * v2;
        let z = Vec2::zeros();
        let mut peak = v2;
        let d1 = sp - self.s;
        if d1.norm() > 1e-12 || v_s.norm() > 0.0 {
            if !cubic_monotone(&d1, &v_s, dt21, &self.signs) {
                return None;
            }
            peak = peak.max(hermite_peak_speed(&self.s, &z, &sp, &v_s, dt21));
        }
        let d3 = self.g - gp;
        if d3.norm() > 1e-12 || v_g.norm() > 0.0 {
            if !cubic_monotone(&d3, &v_g, dt23, &self.signs) {
                return None;
            }
            peak = peak.max(hermite_peak_speed(&gp, &v_g, &self.g, &z, dt23));
        }
        Some((peak, v_s, v_g, v2))
    }

    fn candidate(&self, a: usize, b: usize) -> Option<Phase2> {
        if b < a || !self.spine.monotone(a, b) {
            return None;
        }
        let span = self.total - 2.0 * MIN_PIECE;
        let hi = span - MIN_PIECE;
        if hi < MIN_PIECE {
            return None;
        }
        let cost = |x: f64, y: f64| self.v_max(a, b, x, y).map_or(f64::INFINITY, |r| r.0);
        let n = 12;
        let grid: Vec<f64> = (0..n).map(|k| MIN_PIECE + (hi - MIN_PIECE) * k as f64 / (n - 1) as f64).collect();
        let mut best = (f64::INFINITY, MIN_PIECE, MIN_PIECE);
        for &x in &grid {
            for &y in &grid {
                let c = cost(x, y);
                if c < best.0 {
                    best = (c, x, y);
                }
            }
        }
        if !best.0.is_finite() {
            return None;
        }
        let h = (hi - MIN_PIECE) / (n - 1) as f64;
        let (mut x, mut y) = (best.1, best.2);
        for _ in 0..4 {
            let (nx, cx) = golden_max(|v| -cost(v, y), (x - h).max(MIN_PIECE), (x + h).min(hi), 1e-6);
            if -cx <= cost(x, y) {
                x = nx;
            }
            let (ny, cy) = golden_max(|v| -cost(x, v), (y - h).max(MIN_PIECE), (y + h).min(hi), 1e-6);
            if -cy <= cost(x, y) {
                y = ny;
            }
        }
        let (v_max, v_s, v_g, v2) = self.v_max(a, b, x, y)?;
        let l2 = self.spine.cum[b] - self.spine.cum[a];
        Some(Phase2 {
            s: self.s,
            s_prime: self.spine.pts[a],
            g_prime: self.spine.pts[b],
            g: self.g,
            path: self.spine.pts[a..=b].to_vec(),
            dt21: x,
            dt22: self.total - x - y,
            dt23: y,
            v_s,
            v_g,
            v2,
            l2,
            v_max,
            objective: l2 - self.kappa * v_max,
        })
    }
}

/// Feasible Phase-2 candidates, best objective `L₂ − κ·V_max` first.
pub fn phase2_candidates(s: Vec2, g: Vec2, xi: &[XiPoint], total: f64, kappa: f64) -> Result<Vec<Phase2>> {
    if !(total >= 3.0 * MIN_PIECE) {
        return Err(Error::precondition("planner", format!("Phase 2 needs at least {} s", 3.0 * MIN_PIECE)));
    }
    if (g - s).norm() < 1e-12 {
        return Ok(vec![Phase2::hold(s, total)]);
    }
    let signs = directions_between(&s, &g);
    // ξ* is parameterized by y₁; keep the part between S and G, ordered from S
    let mut pts: Vec<Vec2> = xi
        .iter()
        .map(|p| p.y)
        .filter(|p| (p.x - s.x) * signs[0] >= -1e-12 && (g.x - p.x) * signs[0] >= -1e-12)
        .collect();
    pts.sort_by(|a, b| (a.x * signs[0]).total_cmp(&(b.x * signs[0])));
    if pts.is_empty() {
        return Err(Error::Planning("the maximal-margin curve does not pass between S and G".into()));
    }
    let spine = Spine::new(pts, &signs);
    let search = PairSearch { spine: &spine, s, g, total, kappa, signs };
    let n = spine.pts.len();
    let stride = 4;
    let coarse: Vec<usize> = (0..n).step_by(stride).chain(std::iter::once(n - 1)).collect();
    let pairs: Vec<(usize, usize)> =
        coarse.iter().flat_map(|&a| coarse.iter().filter(move |&&b| b >= a).map(move |&b| (a, b))).collect();
    let mut found: Vec<((usize, usize), Phase2)> =
        pairs.par_iter().filter_map(|&(a, b)| search.candidate(a, b).map(|c| ((a, b), c))).collect();
    sort_candidates(&mut found);
    let seeds: Vec<(usize, usize)> = found.iter().take(5).map(|(k, _)| *k).collect();
    let mut fine: Vec<(usize, usize)> = Vec::new();
    for (a0, b0) in seeds {
        for a in a0.saturating_sub(stride)..=(a0 + stride).min(n - 1) {
            for b in b0.saturating_sub(stride)..=(b0 + stride).min(n - 1) {
                if b >= a && !fine.contains(&(a, b)) && !found.iter().any(|(k, _)| *k == (a, b)) {
                    fine.push((a, b));
                }
            }
        }
    }
    found.extend(fine.par_iter().filter_map(|&(a, b)| search.candidate(a, b).map(|c| ((a, b), c))).collect::<Vec<_>>());
    sort_candidates(&mut found);
    if found.is_empty() {
        return Err(Error::Planning(
            "no monotone three-piece path from S to G along the maximal-margin curve fits the Phase-2 duration".into(),
        ));
    }
    Ok(found.into_iter().map(|(_, c)| c).collect())
}

fn sort_candidates(found: &mut [((usize, usize), Phase2)]) {
    found.sort_by(|(ka, a), (kb, b)| b.objective.total_cmp(&a.objective).then(ka.cmp(kb)));
}

/// Best Phase-2 candidate, ignoring the wrench-balance check along the path.
pub fn phase2_plan(s: Vec2, g: Vec2, xi: &[XiPoint], total: f64, kappa: f64) -> Result<Phase2> {
    Ok(phase2_candidates(s, g, xi, total, kappa)?.remove(0))
}

/// Component signs of `G − S`; stationary components default to −1.
pub fn directions_between(s: &Vec2, g: &Vec2) -> Directions {
    let sign = |d: f64| if d > 0.0 { 1.0 } else { -1.0 };
    [sign(g.x - s.x), sign(g.y - s.y)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanSpec {
    #[serde(rename = "S")]
    pub s: Vec2,
    #[serde(rename = "G")]
    pub g: Vec2,
    #[serde(rename = "T1")]
    pub t1: f64,
    #[serde(rename = "T2")]
    pub t2: f64,
    pub kappa: f64,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    /// Samples per second of the wrench-balance check along Phase 2.
    #[serde(default = "default_check_rate")]
    pub check_rate: f64,
}

fn default_check_rate() -> f64 {
    40.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegraspPlan {
    pub spec: PlanSpec,
    pub hand: HandModel,
    pub directions: Directions,
    pub hand_at_s: Vec2,
    pub hand_at_g: Vec2,
    pub phase1: HandCubic,
    pub phase2: Phase2,
    /// Phase-2 piece boundaries `T₂₁`, `T₂₂`.
    pub t21: f64,
    pub t22: f64,
}

impl RegraspPlan {
    pub fn t1(&self) -> f64 {
        self.spec.t1
    }

    pub fn t2(&self) -> f64 {
        self.spec.t2
    }

    /// Planned fingertip heights at time `t`.
    pub fn xi(&self, t: f64) -> Vec2 {
        if t <= self.spec.t1 {
            self.spec.s
        } else {
            self.phase2.xi((t - self.spec.t1).min(self.phase2.duration()))
        }
    }

    pub fn xi_dot(&self, t: f64) -> Vec2 {
        if t <= self.spec.t1 || t >= self.spec.t2 {
            Vec2::zeros()
        } else {
            self.phase2.state(t - self.spec.t1).1
        }
    }

    pub fn hand_position(&self, task: &TaskModel, t: f64) -> Result<Vec2> {
        if t <= self.spec.t1 {
            return Ok(self.phase1.position(t));
        }
        if t >= self.spec.t2 {
            return Ok(self.hand_at_g);
        }
        Evaluator::new(task, &self.hand, self.directions)?.hand_at(&self.xi(t))
    }

    /// Hand positions at `t_k = k·dt`, `k = 0..=n` for `n·dt ≥ duration`.
    pub fn hand_samples(&self, task: &TaskModel, dt: f64, duration: f64) -> Result<Vec<Vec2>> {
        let eval = Evaluator::new(task, &self.hand, self.directions)?;
        let n = (duration / dt - 1e-9).ceil() as usize;
        (0..=n)
            .into_par_iter()
            .map(|k| {
                let t = k as f64 * dt;
                if t <= self.spec.t1 {
                    Ok(self.phase1.position(t))
                } else if t >= self.spec.t2 {
                    Ok(self.hand_at_g)
                } else {
                    eval.hand_at(&self.xi(t))
                }
            })
            .collect()
    }

    /// The same geometric path with every duration scaled by `factor`.
    pub fn rescaled(&self, factor: f64) -> Self {
        let mut p = self.clone();
        p.spec.t1 *= factor;
        p.spec.t2 *= factor;
        p.phase1.t0 *= factor;
        p.phase1.t1 *= factor;
        p.phase2.dt21 *= factor;
        p.phase2.dt22 *= factor;
        p.phase2.dt23 *= factor;
        p.phase2.v_s /= factor;
        p.phase2.v_g /= factor;
        p.phase2.v2 /= factor;
        p.phase2.v_max /= factor;
        p.phase2.objective = p.phase2.l2 - p.spec.kappa * p.phase2.v_max;
        p.t21 *= factor;
        p.t22 *= factor;
        p
    }

    /// Executes the plan in the simulator from the initial grasp.
    pub fn simulate(&self, task: &TaskModel, cfg: &SimConfig) -> Result<PlanExecution> {
        let samples = self.hand_samples(task, cfg.dt, cfg.duration)?;
        let fingers = self.hand.finger_states(task, &self.spec.s, &samples[0])?;
        let dt = cfg.dt;
        let hand = &self.hand;
        let drive = |t: f64| {
            let k = ((t / dt).round() as usize).min(samples.len() - 1);
            Drive { hand: samples[k], anchors: hand.anchors(&samples[k]) }
        };
        let object = |_t: f64| task.object_pose;
        let (trace, end) = simulate_with_state(task, fingers, &drive, &object, cfg)?;
        let heights: Vec<f64> = end.fingers.iter().map(|f| task.object_pose.to_body(&f.fingertip).y).collect();
        let deviation = [(heights[0] - self.spec.g.x).abs(), (heights[1] - self.spec.g.y).abs()];
        Ok(PlanExecution { trace, final_heights: Vec2::new(heights[0], heights[1]), deviation })
    }

    /// CSV of the planned hand trajectory and fingertip heights.
    pub fn trajectory_csv(&self, task: &TaskModel, dt: f64) -> Result<String> {
        let samples = self.hand_samples(task, dt, self.spec.t2)?;
        let mut out = String::from("t,phx,phy,y1,y2\n");
        for (k, p) in samples.iter().enumerate() {
            let t = k as f64 * dt;
            let xi = self.xi(t);
            out.push_str(&format!("{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n", t, p.x, p.y, xi.x, xi.y));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanExecution {
    pub trace: Trace,
    pub final_heights: Vec2,
    /// Per-finger `|y_i − G_i|` at the end of the run.
    pub deviation: [f64; 2],
}

/// Checks the wrench balance along the Phase-2 path.
fn phase2_feasible(eval: &Evaluator, p2: &Phase2, rate: f64) -> bool {
    let n = ((p2.duration() * rate).ceil() as usize).max(1);
    (0..=n).all(|k| eval.point(&p2.xi(p2.duration() * k as f64 / n as f64)).feasible)
}

/// Plans a regrasp from the grasp at heights `S` (hand at `hand.position`)
/// to heights `G`.
pub fn plan_regrasp(task: &TaskModel, hand: &HandModel, spec: &PlanSpec) -> Result<RegraspPlan> {
    if !(spec.t2 > spec.t1) {
        return Err(Error::precondition("planner", format!("need T2 > T1, got T1 = {}, T2 = {}", spec.t1, spec.t2)));
    }
    if !(spec.kappa >= 0.0) {
        return Err(Error::precondition("planner", "kappa must be >= 0"));
    }
    let directions = directions_between(&spec.s, &spec.g);
    let eval = Evaluator::new(task, hand, directions)?;
    let hand_at_s = eval.hand_at(&spec.s)?;
    let start = hand.finger_states(task, &spec.s, &hand.position)?;
    for (i, f) in start.iter().enumerate() {
        let q = task.surface_query(f.s)?;
        let cf = decompose(&f.force()?, &(task.object_pose.rotation() * q.normal))?;
        if cf.normal_magnitude() <= 0.0 || cf.cone_margin(task.mu) > 0.0 {
            return Err(Error::precondition(
                "planner",
                format!("initial force of finger {i} is outside its friction cone"),
            ));
        }
    }
    let phase1 = phase1_plan(hand.position, hand_at_s, spec.t1)?;
    let total = spec.t2 - spec.t1;
    let phase2 = if (spec.g - spec.s).norm() < 1e-12 {
        Phase2::hold(spec.s, total)
    } else {
        let grid = spec.grid.ok_or_else(|| Error::precondition("planner", "a grid is required to plan a slide"))?;
        let map = fcmap(&eval, &grid)?;
        for (name, y) in [("S", spec.s), ("G", spec.g)] {
            let Some((i, j)) = map.nearest(&y) else {
                return Err(Error::Planning(format!("{name} = ({}, {}) lies outside the map grid", y.x, y.y)));
            };
            if !map.cell(i, j).feasible || !eval.point(&y).feasible {
                return Err(Error::Planning(format!("{name} = ({}, {}) admits no wrench balance", y.x, y.y)));
            }
        }
        if !map.connected(&spec.s, &spec.g) {
            return Err(Error::Planning("S and G lie in different feasible components of the map".into()));
        }
        let xi = xi_star(&eval, &grid)?;
        let candidates = phase2_candidates(spec.s, spec.g, &xi, total, spec.kappa)?;
        let tried = candidates.len();
        candidates
            .into_iter()
            .find(|c| phase2_feasible(&eval, c, spec.check_rate))
            .ok_or_else(|| Error::Planning(format!("all {tried} Phase-2 candidates leave the feasible region")))?
    };
    let hand_at_g = eval.hand_at(&spec.g)?;
    Ok(RegraspPlan {
        spec: *spec,
        hand: hand.clone(),
        directions,
        hand_at_s,
        hand_at_g,
        t21: spec.t1 + phase2.dt21,
        t22: spec.t1 + phase2.dt21 + phase2.dt22,
        phase1,
        phase2,
    })
}

/// Plans, then executes in the simulator and requires every finger to end
/// within `tol` of its goal height.
pub fn plan_and_validate(task: &TaskModel, hand: &HandModel, spec: &PlanSpec, dt: f64, tol: f64) -> Result<(RegraspPlan, PlanExecution)> {
    let plan = plan_regrasp(task, hand, spec)?;
    let cfg = SimConfig { dt, sample_period: dt * (0.01 / dt).round().max(1.0), duration: spec.t2, ..Default::default() };
    let exec = plan.simulate(task, &cfg)?;
    let worst = exec.deviation[0].max(exec.deviation[1]);
    if worst > tol {
        return Err(Error::Planning(format!("simulated execution misses G by {worst:e} m (tolerance {tol:e})")));
    }
    Ok((plan, exec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Boundary, BoundaryPiece, EnvContact, EnvContactMode, ObjectPose};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    /// Symmetric box standing on a table, fingers on the two side faces.
    fn box_task(mu_e: f64) -> (TaskModel, HandModel) {
        let pts = [Vec2::new(-0.05, 0.0), Vec2::new(0.05, 0.0), Vec2::new(0.05, 0.2), Vec2::new(-0.05, 0.2)];
        let pieces = (0..4).map(|i| BoundaryPiece::Segment { start: pts[i], end: pts[(i + 1) % 4] }).collect();
        let task = TaskModel {
            boundary: Boundary::new(pieces).unwrap(),
            env_contacts: vec![
                EnvContact { position: pts[0], normal: Vec2::new(0.0, 1.0), mode: EnvContactMode::Sticking },
                EnvContact { position: pts[1], normal: Vec2::new(0.0, 1.0), mode: EnvContactMode::Sticking },
            ],
            mu: 0.25,
            mu_e,
            gravity_wrench: Vector3::new(0.0, 0.0, -10.0),
            characteristic_length: 0.1,
            cone_edges: 8,
            object_pose: ObjectPose::default(),
        };
        let hand = HandModel {
            position: Vec2::new(0.0, 0.2),
            angle: 0.0,
            anchor_offsets: vec![Vec2::new(-0.01, 0.0), Vec2::new(0.01, 0.0)],
            stiffness: vec![[[150.0, 0.0], [0.0, 100.0]]; 2],
            rest_offsets: Vec::new(),
            faces: vec![3, 1],
        };
        (task, hand)
    }

    #[test]
    fn symmetric_grasp_centres_the_hand() {
        let (task, hand) = box_task(1.0);
        let eval = Evaluator::new(&task, &hand, [-1.0, -1.0]).unwrap();
        let p = eval.hand_at(&Vec2::new(0.1, 0.1)).unwrap();
        assert!(p.x.abs() < 1e-14);
    }

    #[test]
    fn hand_puts_forces_on_cone_edges() {
        let (task, mut hand) = box_task(1.0);
        hand.stiffness = vec![[[150.0, 20.0], [20.0, 90.0]], [[120.0, -10.0], [-10.0, 130.0]]];
        let eval = Evaluator::new(&task, &hand, [-1.0, -1.0]).unwrap();
        let y = Vec2::new(0.12, 0.11);
        let sites = eval.sites(&y).unwrap();
        let p = hand_from_contacts(&task, &hand, &sites).unwrap();
        let anchors = hand.anchors(&p);
        for i in 0..2 {
            let f = -hand.k(i) * (sites[i].position - anchors[i]);
            let cf = decompose(&f, &sites[i].normal).unwrap();
            assert!(cf.cone_margin(task.mu).abs() < 1e-10 * f.norm());
            // tangential force points the way the finger slides
            assert!(cf.f_t.dot(&sites[i].slide) > 0.0);
        }
    }

    #[test]
    fn parallel_conditions_are_rejected() {
        let (task, hand) = box_task(1.0);
        let site = ContactSite { position: Vec2::new(-0.05, 0.1), normal: Vec2::new(1.0, 0.0), slide: Vec2::new(0.0, -1.0) };
        assert!(matches!(hand_from_contacts(&task, &hand, &[site, site]), Err(Error::Geometry { .. })));
    }

    #[test]
    fn map_matches_direct_balance_calls() {
        let (task, hand) = box_task(1.0);
        let eval = Evaluator::new(&task, &hand, [-1.0, -1.0]).unwrap();
        let grid = GridSpec { y1: [0.02, 0.18], y2: [0.02, 0.18], step: 0.02 };
        let map = fcmap(&eval, &grid).unwrap();
        assert_eq!(map.cells.len(), 81);
        let cone = build_external_cone(&task, &task.object_pose).unwrap();
        for c in &map.cells {
            let Some(p) = c.hand else {
                assert!(!c.feasible);
                continue;
            };
            let sites = eval.sites(&c.y).unwrap();
            let a = hand.anchors(&p);
            let contacts: Vec<(Vec2, Vec2)> = (0..2).map(|i| (sites[i].position, -hand.k(i) * (sites[i].position - a[i]))).collect();
            let wc = finger_wrench(&task, &task.object_pose, &contacts);
            let direct = balance_lp(&cone.w, &wc, &gravity(&task)).unwrap().is_feasible();
            assert_eq!(c.feasible, direct, "{:?}", c.y);
            assert_eq!(c.feasible, c.margin.unwrap() >= -1e-12);
        }
    }

    #[test]
    fn frictionless_table_rejects_net_tangential_push() {
        let (task, mut hand) = box_task(0.0);
        hand.stiffness = vec![[[150.0, 0.0], [0.0, 100.0]], [[100.0, 0.0], [0.0, 150.0]]];
        let eval = Evaluator::new(&task, &hand, [-1.0, -1.0]).unwrap();
        // unequal normal forces leave a horizontal residual the table cannot take
        let p = eval.point(&Vec2::new(0.1, 0.1));
        let f = p.forces.unwrap();
        assert!((f[0].x + f[1].x).abs() > 1e-3);
        assert!(!p.feasible);
        let (task, hand) = box_task(0.0);
        let eval = Evaluator::new(&task, &hand, [-1.0, -1.0]).unwrap();
        assert!(eval.point(&Vec2::new(0.1, 0.1)).feasible);
    }

    #[test]
    fn flood_fill_connectivity() {
        let cells = |pattern: &[&str]| {
            let mut out = Vec::new();
            for (i, row) in pattern.iter().enumerate() {
                for (j, ch) in row.chars().enumerate() {
                    out.push(FcPoint { y: Vec2::new(i as f64, j as f64), feasible: ch == '#', margin: Some(0.0), hand: None, forces: None });
                }
            }
            out
        };
        let map = FcMap {
            grid: GridSpec { y1: [0.0, 2.0], y2: [0.0, 2.0], step: 1.0 },
            y1: vec![0.0, 1.0, 2.0],
            y2: vec![0.0, 1.0, 2.0],
            cells: cells(&["#.#", "#.#", "###"]),
        };
        assert!(map.connected(&Vec2::new(0.0, 0.0), &Vec2::new(0.0, 2.0)));
        let map = FcMap { cells: cells(&["#.#", "#.#", "#.#"]), ..map };
        assert!(!map.connected(&Vec2::new(0.0, 0.0), &Vec2::new(0.0, 2.0)));
        // diagonal neighbours do not connect
        let map = FcMap { cells: cells(&["#..", ".#.", "..#"]), ..map };
        assert!(!map.connected(&Vec2::new(0.0, 0.0), &Vec2::new(1.0, 1.0)));
    }

    #[test]
    fn symmetric_task_has_diagonal_xi_star() {
        let (task, hand) = box_task(1.0);
        let eval = Evaluator::new(&task, &hand, [-1.0, -1.0]).unwrap();
        let grid = GridSpec { y1: [0.04, 0.16], y2: [0.02, 0.18], step: 0.01 };
        let xi = xi_star(&eval, &grid).unwrap();
        assert_eq!(xi.len(), 13);
        for p in &xi {
            assert!((p.y.x - p.y.y).abs() < 1e-5, "{:?}", p.y);
        }
    }

    #[test]
    fn xi_star_beats_grid_neighbours() {
        let (task, mut hand) = box_task(1.0);
        hand.stiffness[1] = [[130.0, 0.0], [0.0, 110.0]];
        let eval = Evaluator::new(&task, &hand, [-1.0, -1.0]).unwrap();
        let grid = GridSpec { y1: [0.04, 0.16], y2: [0.02, 0.18], step: 0.005 };
        let xi = xi_star(&eval, &grid).unwrap();
        let map = fcmap(&eval, &grid).unwrap();
        for p in &xi {
            let (i, _) = map.nearest(&p.y).unwrap();
            for j in 0..map.y2.len() {
                let c = map.cell(i, j);
                if c.feasible {
                    assert!(p.margin >= c.margin.unwrap() - 1e-12);
                }
            }
        }
    }

    #[test]
    fn cubic_midpoint_speed() {
        let c = phase1_plan(Vec2::new(0.0, 0.0), Vec2::new(0.3, -0.6), 4.0).unwrap();
        assert_relative_eq!(c.velocity(2.0), Vec2::new(0.3, -0.6) * (1.5 / 4.0), epsilon = 1e-15);
        assert_eq!(c.velocity(0.0), Vec2::zeros());
        assert_eq!(c.velocity(4.0), Vec2::zeros());
        let still = phase1_plan(Vec2::new(1.0, 2.0), Vec2::new(1.0, 2.0), 4.0).unwrap();
        assert_eq!(still.position(1.3), Vec2::new(1.0, 2.0));
        let back = c.reversed(4.0, 4.0);
        assert_relative_eq!(back.position(6.0), c.position(2.0), epsilon = 1e-15);
    }

    #[test]
    fn hermite_end_conditions() {
        let p0 = Vec2::new(0.1, 0.2);
        let p1 = Vec2::new(-0.3, 0.5);
        let m0 = Vec2::new(0.02, 0.0);
        let m1 = Vec2::new(-0.01, 0.03);
        let (a, va) = hermite(&p0, &m0, &p1, &m1, 2.0, 0.0);
        let (b, vb) = hermite(&p0, &m0, &p1, &m1, 2.0, 2.0);
        assert_relative_eq!(a, p0, epsilon = 1e-15);
        assert_relative_eq!(b, p1, epsilon = 1e-15);
        assert_relative_eq!(va, m0, epsilon = 1e-15);
        assert_relative_eq!(vb, m1, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn peak_speed_bounds_sampled_speed(d in prop::collection::vec(-1.0..1.0f64, 6), t in 0.1..5.0f64) {
            let p0 = Vec2::new(d[0], d[1]);
            let p1 = Vec2::new(d[2], d[3]);
            let m = Vec2::new(d[4], d[5]);
            let z = Vec2::zeros();
            let peak = hermite_peak_speed(&p0, &z, &p1, &m, t);
            let mut sampled: f64 = 0.0;
            for k in 0..=2000 {
                sampled = sampled.max(hermite(&p0, &z, &p1, &m, t, t * k as f64 / 2000.0).1.norm());
            }
            prop_assert!(peak >= sampled - 1e-12);
            prop_assert!(peak <= sampled * (1.0 + 1e-5) + 1e-12);
        }

        #[test]
        fn monotone_test_matches_sampling(delta in -1.0..1.0f64, beta in -1.0..4.0f64) {
            prop_assume!(delta.abs() > 1e-3);
            let signs = [delta.signum(), 1.0];
            let d = Vec2::new(delta, 0.0);
            let m = Vec2::new(beta * delta, 0.0);
            let ok = cubic_monotone(&d, &m, 1.0, &signs);
            let z = Vec2::zeros();
            let sampled = (0..=400).all(|k| hermite(&z, &z, &d, &m, 1.0, k as f64 / 400.0).1.x * signs[0] >= -1e-12);
            prop_assert_eq!(ok, sampled, "beta {}", beta);
        }
    }

    #[test]
    fn phase2_hits_endpoints_and_durations() {
        let xi: Vec<XiPoint> = (0..=100).map(|k| {
            let y = 0.03 + 0.0015 * k as f64;
            XiPoint { y: Vec2::new(y, y + 0.002), margin: 1.0 }
        }).collect();
        let s = Vec2::new(0.17, 0.175);
        let g = Vec2::new(0.05, 0.04);
        let p = phase2_plan(s, g, &xi, 15.0, 0.5).unwrap();
        assert_relative_eq!(p.duration(), 15.0, epsilon = 1e-9);
        assert_relative_eq!(p.xi(0.0), s, epsilon = 1e-15);
        assert_relative_eq!(p.xi(15.0), g, epsilon = 1e-12);
        let signs = directions_between(&s, &g);
        for k in 0..=3000 {
            let v = p.state(15.0 * k as f64 / 3000.0).1;
            assert!(v.x * signs[0] >= -1e-9 && v.y * signs[1] >= -1e-9, "{k}: {v:?}");
        }
        assert!(p.dt21 >= MIN_PIECE && p.dt22 >= MIN_PIECE && p.dt23 >= MIN_PIECE);
    }

    #[test]
    fn larger_kappa_never_raises_peak_speed() {
        let xi: Vec<XiPoint> = (0..=60).map(|k| {
            let y = 0.03 + 0.0025 * k as f64;
            XiPoint { y: Vec2::new(y, y + 0.003 * (y * 40.0).sin()), margin: 1.0 }
        }).collect();
        let s = Vec2::new(0.17, 0.176);
        let g = Vec2::new(0.05, 0.03);
        let mut last = f64::INFINITY;
        for kappa in [0.0, 0.5, 2.0, 10.0, 50.0] {
            let p = phase2_plan(s, g, &xi, 15.0, kappa).unwrap();
            assert!(p.v_max <= last + 1e-9, "kappa {kappa}: {} > {last}", p.v_max);
            last = p.v_max;
        }
    }

    #[test]
    fn equal_start_and_goal_is_a_hold() {
        let (task, hand) = box_task(1.0);
        let s = Vec2::new(0.12, 0.12);
        let at_s = Evaluator::new(&task, &hand, [-1.0, -1.0]).unwrap().hand_at(&s).unwrap();
        let mut hand = hand;
        hand.position = at_s + Vec2::new(0.0, 0.01);
        let spec = PlanSpec { s, g: s, t1: 2.0, t2: 5.0, kappa: 0.5, grid: None, check_rate: 40.0 };
        let plan = plan_regrasp(&task, &hand, &spec).unwrap();
        assert_eq!(plan.phase2.l2, 0.0);
        assert_eq!(plan.xi(3.7), s);
        assert_relative_eq!(plan.hand_position(&task, 3.7).unwrap(), plan.hand_at_s, epsilon = 1e-15);
    }
}
