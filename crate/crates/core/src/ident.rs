//! Identification of the finger friction coefficient and spring stiffnesses
//! from fingertip-position traces, by matching simulated traces to observed
//! ones with a derivative-free simplex search.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finger::is_positive_definite;
use crate::model::{Mat2, TaskModel, Vec2};
use crate::planner::HandModel;
use crate::simulator::{simulate, Drive, SimConfig, Trace};

/// Residual assigned to parameters whose simulation fails (m).
pub const FAILURE_PENALTY: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentParams {
    pub mu: f64,
    /// Row-major stiffness of each finger.
    pub stiffness: [[[f64; 2]; 2]; 2],
}

impl IdentParams {
    pub fn diagonal(mu: f64, k: [[f64; 2]; 2]) -> Self {
        Self { mu, stiffness: [[[k[0][0], 0.0], [0.0, k[0][1]]], [[k[1][0], 0.0], [0.0, k[1][1]]]] }
    }

    pub fn k(&self, i: usize) -> Mat2 {
        let r = self.stiffness[i];
        Mat2::new(r[0][0], r[0][1], r[1][0], r[1][1])
    }
}

/// Observed samples: time, hand position and body-frame fingertip positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub t: Vec<f64>,
    pub hand: Vec<Vec2>,
    pub fingertips: Vec<Vec<Vec2>>,
}

impl Observation {
    pub fn from_trace(trace: &Trace) -> Self {
        Self {
            t: trace.rows.iter().map(|r| r.t).collect(),
            hand: trace.rows.iter().map(|r| r.hand).collect(),
            fingertips: trace.rows.iter().map(|r| r.fingertips_body.clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Constant spacing of the samples, with the first at one period.
    pub fn sample_period(&self) -> Result<f64> {
        let n = self.t.len();
        if n == 0 {
            return Err(Error::precondition("ident", "observation has no samples"));
        }
        let h = self.t[0];
        for (k, t) in self.t.iter().enumerate() {
            if (t - (k + 1) as f64 * h).abs() > 1e-9 * (1.0 + t.abs()) {
                return Err(Error::precondition(
                    "ident",
                    format!("samples must be taken every {h} s starting at t = {h} (row {k} has t = {t})"),
                ));
            }
        }
        Ok(h)
    }

    /// Copy with Gaussian noise of standard deviation `sigma` (m) added to
    /// every fingertip coordinate.
    pub fn with_noise(&self, sigma: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).expect("noise level must be finite and >= 0");
        let mut out = self.clone();
        for row in &mut out.fingertips {
            for p in row.iter_mut() {
                p.x += normal.sample(&mut rng);
                p.y += normal.sample(&mut rng);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentBounds {
    pub mu: [f64; 2],
    pub stiffness: [f64; 2],
}

impl Default for IdentBounds {
    fn default() -> Self {
        Self { mu: [0.0, 2.0], stiffness: [1.0, 1e4] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentProblem {
    pub task: TaskModel,
    /// Anchor offsets, faces and hand position at `t = 0`; its stiffness is
    /// replaced by the parameters under test.
    pub hand: HandModel,
    /// Fingertip heights at `t = 0`.
    pub heights: Vec2,
    pub observed: Observation,
    pub initial: IdentParams,
    #[serde(default)]
    pub bounds: IdentBounds,
    /// Fit full symmetric stiffnesses through Cholesky factors instead of
    /// diagonals.
    #[serde(default)]
    pub cholesky: bool,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

fn default_dt() -> f64 {
    1e-3
}

fn default_max_iterations() -> usize {
    600
}

impl IdentProblem {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        if self.observed.is_empty()
            || self.observed.hand.len() != self.observed.len()
            || self.observed.fingertips.len() != self.observed.len()
        {
            return Err(Error::precondition("ident", "observation columns must have equal, nonzero length"));
        }
        if self.observed.fingertips.iter().any(|r| r.len() != 2) {
            return Err(Error::precondition("ident", "observation needs two fingertips per row"));
        }
        self.observed.sample_period()?;
        for i in 0..2 {
            let k = self.initial.k(i);
            if (k - k.transpose()).norm() > 1e-9 * k.norm() || !is_positive_definite(&k) {
                return Err(Error::Domain(format!("initial stiffness {i} must be symmetric positive definite")));
            }
        }
        Ok(())
    }

    /// Hand position at `t`, interpolated linearly through the samples.
    pub fn hand_at(&self, t: f64) -> Vec2 {
        let obs = &self.observed;
        if t <= 0.0 {
            return self.hand.position;
        }
        let k = obs.t.partition_point(|&s| s < t);
        if k == 0 {
            let u = t / obs.t[0];
            return self.hand.position + (obs.hand[0] - self.hand.position) * u;
        }
        if k >= obs.len() {
            return obs.hand[obs.len() - 1];
        }
        let u = (t - obs.t[k - 1]) / (obs.t[k] - obs.t[k - 1]);
        obs.hand[k - 1] + (obs.hand[k] - obs.hand[k - 1]) * u
    }

    /// Simulated trace for `params` over the observation horizon.
    pub fn simulate(&self, params: &IdentParams) -> Result<Trace> {
        let mut task = self.task.clone();
        task.mu = params.mu;
        let mut hand = self.hand.clone();
        hand.stiffness = params.stiffness.to_vec();
        let fingers = hand.finger_states(&task, &self.heights, &self.hand.position)?;
        let sample = self.observed.sample_period()?;
        let cfg = SimConfig {
            dt: self.dt,
            sample_period: sample,
            duration: self.observed.t[self.observed.len() - 1],
            ..Default::default()
        };
        let drive = |t: f64| {
            let p = self.hand_at(t);
            Drive { hand: p, anchors: hand.anchors(&p) }
        };
        let object = |_t: f64| task.object_pose;
        simulate(&task, fingers, &drive, &object, &cfg)
    }

    /// Sum over samples and fingers of the absolute coordinate errors of the
    /// body-frame fingertip positions; failures cost [`FAILURE_PENALTY`].
    pub fn residual(&self, params: &IdentParams) -> f64 {
        match self.simulate(params) {
            Ok(trace) => compare(&self.observed, &trace),
            Err(_) => FAILURE_PENALTY,
        }
    }

    fn to_vector(&self, p: &IdentParams) -> Vec<f64> {
        let mut x = vec![p.mu];
        for i in 0..2 {
            let k = p.k(i);
            if self.cholesky {
                let l = k.cholesky().map(|c| c.l()).unwrap_or_else(|| Mat2::identity() * k.trace().abs().sqrt());
                x.extend([l[(0, 0)], l[(1, 0)], l[(1, 1)]]);
            } else {
                x.extend([k[(0, 0)], k[(1, 1)]]);
            }
        }
        x
    }

    fn from_vector(&self, x: &[f64]) -> IdentParams {
        let mut stiffness = [[[0.0; 2]; 2]; 2];
        for (i, k) in stiffness.iter_mut().enumerate() {
            if self.cholesky {
                let (a, b, c) = (x[1 + 3 * i], x[2 + 3 * i], x[3 + 3 * i]);
                *k = [[a * a, a * b], [a * b, b * b + c * c]];
            } else {
                *k = [[x[1 + 2 * i], 0.0], [0.0, x[2 + 2 * i]]];
            }
        }
        IdentParams { mu: x[0], stiffness }
    }

    fn project(&self, x: &mut [f64]) {
        let b = &self.bounds;
        x[0] = x[0].clamp(b.mu[0], b.mu[1]);
        if self.cholesky {
            let (lo, hi) = (b.stiffness[0].sqrt(), b.stiffness[1].sqrt());
            for i in 0..2 {
                x[1 + 3 * i] = x[1 + 3 * i].clamp(lo, hi);
                x[2 + 3 * i] = x[2 + 3 * i].clamp(-hi, hi);
                x[3 + 3 * i] = x[3 + 3 * i].clamp(lo, hi);
            }
        } else {
            for v in &mut x[1..] {
                *v = v.clamp(b.stiffness[0], b.stiffness[1]);
            }
        }
    }
}

/// Residual between an observation and a simulated trace sampled at the
/// same instants.
pub fn compare(observed: &Observation, trace: &Trace) -> f64 {
    if trace.rows.len() != observed.len() {
        return FAILURE_PENALTY;
    }
    observed
        .fingertips
        .iter()
        .zip(&trace.rows)
        .map(|(obs, row)| obs.iter().zip(&row.fingertips_body).map(|(a, b)| (a.x - b.x).abs() + (a.y - b.y).abs()).sum::<f64>())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentResult {
    pub params: IdentParams,
    pub residual: f64,
    pub initial_residual: f64,
    pub iterations: usize,
    /// Iterations that lowered the best residual.
    pub improvements: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Nelder–Mead search with box projection, started from `problem.initial`.
pub fn fit(problem: &IdentProblem) -> Result<IdentResult> {
    problem.validate()?;
    let x0 = problem.to_vector(&problem.initial);
    let n = x0.len();
    let eval = |x: &[f64]| problem.residual(&problem.from_vector(x));
    let mut simplex: Vec<Vec<f64>> = vec![x0.clone()];
    for j in 0..n {
        let mut x = x0.clone();
        x[j] += if x[j] != 0.0 { 0.05 * x[j] } else { 0.00025 };
        problem.project(&mut x);
        simplex.push(x);
    }
    let mut values: Vec<f64> = simplex.par_iter().map(|x| eval(x)).collect();
    let mut evaluations = n + 1;
    let initial_residual = values[0];
    let mut iterations = 0;
    let mut improvements = 0;
    let mut converged = false;
    let order = |simplex: &mut Vec<Vec<f64>>, values: &mut Vec<f64>| {
        let mut idx: Vec<usize> = (0..simplex.len()).collect();
        idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        *simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        *values = idx.iter().map(|&i| values[i]).collect();
    };
    order(&mut simplex, &mut values);
    while iterations < problem.max_iterations {
        let spread_f = values[n] - values[0];
        let spread_x = simplex[1..]
            .iter()
            .flat_map(|x| x.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs() / b.abs().max(1e-3)))
            .fold(0.0f64, f64::max);
        if spread_f <= 1e-10 * values[0].abs().max(1e-9) || spread_x < 1e-9 {
            converged = true;
            break;
        }
        iterations += 1;
        let best_before = values[0];
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|x| x[j]).sum::<f64>() / n as f64).collect();
        let toward = |coef: f64| {
            let mut x: Vec<f64> = (0..n).map(|j| centroid[j] + coef * (simplex[n][j] - centroid[j])).collect();
            problem.project(&mut x);
            x
        };
        let xr = toward(-1.0);
        let fr = eval(&xr);
        evaluations += 1;
        if fr < values[0] {
            let xe = toward(-2.0);
            let fe = eval(&xe);
            evaluations += 1;
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let x = toward(-0.5);
                let f = eval(&x);
                (x, f)
            } else {
                let x = toward(0.5);
                let f = eval(&x);
                (x, f)
            };
            evaluations += 1;
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                let best = simplex[0].clone();
                let shrunk: Vec<Vec<f64>> = simplex[1..]
                    .iter()
                    .map(|x| {
                        let mut y: Vec<f64> = x.iter().zip(&best).map(|(a, b)| b + 0.5 * (a - b)).collect();
                        problem.project(&mut y);
                        y
                    })
                    .collect();
                let fs: Vec<f64> = shrunk.par_iter().map(|x| eval(x)).collect();
                evaluations += n;
                for (k, (x, f)) in shrunk.into_iter().zip(fs).enumerate() {
                    simplex[k + 1] = x;
                    values[k + 1] = f;
                }
            }
        }
        order(&mut simplex, &mut values);
        if values[0] < best_before {
            improvements += 1;
        }
    }
    Ok(IdentResult {
        params: problem.from_vector(&simplex[0]),
        residual: values[0],
        initial_residual,
        iterations,
        improvements,
        evaluations,
        converged,
    })
}

/// Central second differences of the residual with respect to `μ` and the
/// diagonal stiffness entries, with relative step `rel`.
pub fn hessian_diagonal(problem: &IdentProblem, at: &IdentParams, rel: f64) -> Vec<f64> {
    let diag = IdentProblem { cholesky: false, ..problem.clone() };
    let x = diag.to_vector(at);
    let f0 = diag.residual(at);
    (0..x.len())
        .into_par_iter()
        .map(|j| {
            let h = rel * x[j].abs().max(1e-6);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let mut pp = diag.from_vector(&xp);
            let mut pm = diag.from_vector(&xm);
            // keep the off-diagonal terms of the evaluation point
            for i in 0..2 {
                pp.stiffness[i][0][1] = at.stiffness[i][0][1];
                pp.stiffness[i][1][0] = at.stiffness[i][1][0];
                pm.stiffness[i][0][1] = at.stiffness[i][0][1];
                pm.stiffness[i][1][0] = at.stiffness[i][1][0];
            }
            (diag.residual(&pp) - 2.0 * f0 + diag.residual(&pm)) / (h * h)
        })
        .collect()
}

/// Hand drag used to generate identification data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DragSpec {
    /// Fingertip heights at the start.
    pub heights: Vec2,
    /// Hand position at the start.
    pub start: Vec2,
    /// Total hand displacement, applied at constant velocity.
    pub displacement: Vec2,
    pub duration: f64,
    pub dt: f64,
    pub sample_period: f64,
}

/// Simulated observation of a constant-velocity hand drag.
pub fn synthesize(task: &TaskModel, hand: &HandModel, params: &IdentParams, drag: &DragSpec) -> Result<Observation> {
    let mut task = task.clone();
    task.mu = params.mu;
    let mut hand = hand.clone();
    hand.stiffness = params.stiffness.to_vec();
    hand.position = drag.start;
    let fingers = hand.finger_states(&task, &drag.heights, &drag.start)?;
    let cfg = SimConfig { dt: drag.dt, sample_period: drag.sample_period, duration: drag.duration, ..Default::default() };
    let drive = |t: f64| {
        let p = drag.start + drag.displacement * (t / drag.duration).clamp(0.0, 1.0);
        Drive { hand: p, anchors: hand.anchors(&p) }
    };
    let object = |_t: f64| task.object_pose;
    Ok(Observation::from_trace(&simulate(&task, fingers, &drive, &object, &cfg)?))
}

/// CSV of observed against fitted fingertip positions.
pub fn comparison_csv(observed: &Observation, fitted: &Trace) -> String {
    let mut out = String::from("t");
    for i in 1..=2 {
        out.push_str(&format!(",obs_pf{i}B_x,obs_pf{i}B_y,fit_pf{i}B_x,fit_pf{i}B_y"));
    }
    out.push('\n');
    for (k, t) in observed.t.iter().enumerate() {
        out.push_str(&format!("{t:.16e}"));
        for i in 0..2 {
            let o = observed.fingertips[k][i];
            let f = fitted.rows.get(k).map_or(Vec2::new(f64::NAN, f64::NAN), |r| r.fingertips_body[i]);
            out.push_str(&format!(",{:.16e},{:.16e},{:.16e},{:.16e}", o.x, o.y, f.x, f.y));
        }
        out.push('\n');
    }
    out
}
