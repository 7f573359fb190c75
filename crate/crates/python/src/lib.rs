//! Python bindings for the spring-sliding toolkit.

use std::path::PathBuf;

use nalgebra::Matrix2;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use springslide::finger;
use springslide::ident::{fit as fit_params, synthesize};
use springslide::io::{from_json_str, observation_from_csv, run_motion, IdentConfig, Motion, TaskFile};
use springslide::model::Vec2;
use springslide::planner::{self, Evaluator, GridSpec, PlanSpec, RegraspPlan};
use springslide::robustness::report;
use springslide::simulator::{SimConfig, Trace};
use springslide::sliding::{self, ContactForceD, SlidingInputs, SlidingOutcome};
use springslide::tasks;
use springslide::wrench::{build_external_cone, gravity};
use springslide::Error;

create_exception!(springslide_py, SpringSlideError, PyException, "A well-formed problem without a solution.");

fn err(e: Error) -> PyErr {
    if e.is_input_error() {
        PyValueError::new_err(e.to_string())
    } else {
        SpringSlideError::new_err((e.code().to_string(), e.to_string()))
    }
}

fn to_py<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn v2(p: (f64, f64)) -> Vec2 {
    Vec2::new(p.0, p.1)
}

fn m2(k: [[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(k[0][0], k[0][1], k[1][0], k[1][1])
}

/// An object, its environment contacts and optionally the hand holding it.
#[pyclass(name = "Task", module = "springslide_py", from_py_object)]
#[derive(Clone)]
struct PyTask {
    inner: TaskFile,
}

#[pymethods]
impl PyTask {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: TaskFile = from_json_str(text, "task").map_err(err)?;
        inner.task.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: TaskFile::load(&path).map_err(err)? })
    }

    /// The tall rounded box regrasped by two fingers.
    #[staticmethod]
    fn regrasp() -> Self {
        Self { inner: TaskFile { task: tasks::regrasp_task(), hand: Some(tasks::regrasp_hand()) } }
    }

    #[staticmethod]
    fn trapezoid() -> Self {
        Self { inner: TaskFile { task: tasks::trapezoid_task(), hand: Some(tasks::trapezoid_hand()) } }
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.inner).expect("tasks serialize")
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.inner.task.mu
    }

    #[setter]
    fn set_mu(&mut self, mu: f64) -> PyResult<()> {
        if !(mu >= 0.0) {
            return Err(PyValueError::new_err(format!("mu must be >= 0, got {mu}")));
        }
        self.inner.task.mu = mu;
        Ok(())
    }

    #[getter]
    fn has_hand(&self) -> bool {
        self.inner.hand.is_some()
    }

    fn __repr__(&self) -> String {
        format!(
            "Task(pieces={}, env_contacts={}, mu={}, hand={})",
            self.inner.task.boundary.pieces().len(),
            self.inner.task.env_contacts.len(),
            self.inner.task.mu,
            self.inner.hand.is_some()
        )
    }
}

/// Sampled simulation output.
#[pyclass(name = "Trace", module = "springslide_py")]
struct PyTrace {
    inner: Trace,
}

#[pymethods]
impl PyTrace {
    fn __len__(&self) -> usize {
        self.inner.rows.len()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.rows.iter().map(|r| r.t).collect()
    }

    #[getter]
    fn hand(&self) -> Vec<(f64, f64)> {
        self.inner.rows.iter().map(|r| (r.hand.x, r.hand.y)).collect()
    }

    /// Body-frame fingertip positions, one list per row.
    #[getter]
    fn fingertips(&self) -> Vec<Vec<(f64, f64)>> {
        self.inner.rows.iter().map(|r| r.fingertips_body.iter().map(|p| (p.x, p.y)).collect()).collect()
    }

    #[getter]
    fn forces(&self) -> Vec<Vec<(f64, f64)>> {
        self.inner.rows.iter().map(|r| r.forces.iter().map(|p| (p.x, p.y)).collect()).collect()
    }

    #[getter]
    fn modes(&self) -> Vec<Vec<&'static str>> {
        self.inner.rows.iter().map(|r| r.modes.iter().map(|m| m.as_str()).collect()).collect()
    }

    #[getter]
    fn margins(&self) -> Vec<f64> {
        self.inner.rows.iter().map(|r| r.margin).collect()
    }

    #[getter]
    fn transitions<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.transitions)
    }
}

/// A three-phase sliding regrasp.
#[pyclass(name = "Plan", module = "springslide_py")]
struct PyPlan {
    inner: RegraspPlan,
    task: TaskFile,
}

#[pymethods]
impl PyPlan {
    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.inner).expect("plans serialize")
    }

    #[getter]
    fn t21(&self) -> f64 {
        self.inner.t21
    }

    #[getter]
    fn t22(&self) -> f64 {
        self.inner.t22
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.t2()
    }

    /// Planned fingertip heights at time `t`.
    fn xi(&self, t: f64) -> (f64, f64) {
        let y = self.inner.xi(t);
        (y.x, y.y)
    }

    fn hand_position(&self, t: f64) -> PyResult<(f64, f64)> {
        let p = self.inner.hand_position(&self.task.task, t).map_err(err)?;
        Ok((p.x, p.y))
    }

    /// Simulates the plan; returns the trace and the per-finger distance
    /// from the goal heights.
    #[pyo3(signature = (dt = 1e-3, sample_period = 0.01))]
    fn simulate(&self, dt: f64, sample_period: f64) -> PyResult<(PyTrace, (f64, f64))> {
        let cfg = SimConfig { dt, sample_period, duration: self.inner.t2(), ..Default::default() };
        let exec = self.inner.simulate(&self.task.task, &cfg).map_err(err)?;
        Ok((PyTrace { inner: exec.trace }, (exec.deviation[0], exec.deviation[1])))
    }
}

/// Plans a regrasp; `spec` is a plan-spec JSON string.
#[pyfunction]
fn plan(task: &PyTask, spec: &str) -> PyResult<PyPlan> {
    let spec: PlanSpec = from_json_str(spec, "spec").map_err(err)?;
    let hand = task.inner.require_hand().map_err(err)?;
    let inner = planner::plan_regrasp(&task.inner.task, hand, &spec).map_err(err)?;
    Ok(PyPlan { inner, task: task.inner.clone() })
}

/// Runs a motion JSON string (or a plan JSON) on the task.
#[pyfunction]
#[pyo3(signature = (task, motion, dt = 1e-3))]
fn simulate(task: &PyTask, motion: &str, dt: f64) -> PyResult<PyTrace> {
    let value: serde_json::Value = from_json_str(motion, "motion").map_err(err)?;
    let motion = Motion::from_value(value, "motion").map_err(err)?;
    let inner = run_motion(&task.inner.task, task.inner.hand.as_ref(), &motion, dt).map_err(err)?;
    Ok(PyTrace { inner })
}

/// Robustness of the balance against fingertip wrench disturbances. `wc` is
/// the moment-scaled fingertip wrench; `eps = None` finds the largest
/// robust bound.
#[pyfunction]
#[pyo3(signature = (task, wc, eps = None, tol = 1e-6))]
fn robustness<'py>(py: Python<'py>, task: &PyTask, wc: [f64; 3], eps: Option<f64>, tol: f64) -> PyResult<Bound<'py, PyAny>> {
    let t = &task.inner.task;
    let cone = build_external_cone(t, &t.object_pose).map_err(err)?;
    let wc = nalgebra::DVector::from_column_slice(&wc);
    let with_max = if eps.is_none() { Some(tol) } else { None };
    let r = report(&cone.w, &wc, &gravity(t), eps.unwrap_or(0.0), with_max).map_err(err)?;
    to_py(py, &r)
}

fn evaluator_grid(y1: (f64, f64), y2: (f64, f64), step: f64) -> GridSpec {
    GridSpec { y1: [y1.0, y1.1], y2: [y2.0, y2.1], step }
}

/// Feasibility map: `(y1, y2, feasible, margin)` per grid cell.
#[pyfunction]
fn fcmap(task: &PyTask, directions: (f64, f64), y1: (f64, f64), y2: (f64, f64), step: f64) -> PyResult<Vec<(f64, f64, bool, Option<f64>)>> {
    let hand = task.inner.require_hand().map_err(err)?;
    let eval = Evaluator::new(&task.inner.task, hand, [directions.0, directions.1]).map_err(err)?;
    let map = planner::fcmap(&eval, &evaluator_grid(y1, y2, step)).map_err(err)?;
    Ok(map.cells.iter().map(|c| (c.y.x, c.y.y, c.feasible, c.margin)).collect())
}

/// Maximum-margin heights `(y1, y2, margin)` for each `y1` grid value.
#[pyfunction]
fn xi_star(task: &PyTask, directions: (f64, f64), y1: (f64, f64), y2: (f64, f64), step: f64) -> PyResult<Vec<(f64, f64, f64)>> {
    let hand = task.inner.require_hand().map_err(err)?;
    let eval = Evaluator::new(&task.inner.task, hand, [directions.0, directions.1]).map_err(err)?;
    let xi = planner::xi_star(&eval, &evaluator_grid(y1, y2, step)).map_err(err)?;
    Ok(xi.iter().map(|p| (p.y.x, p.y.y, p.margin)).collect())
}

fn flat_contact(mu: f64, force: (f64, f64), normal: (f64, f64), k: [[f64; 2]; 2], c_f: (f64, f64)) -> PyResult<SlidingInputs<2>> {
    let k = m2(k);
    Ok(SlidingInputs {
        mu,
        force: ContactForceD::new(v2(force), v2(normal)).map_err(err)?,
        dn_dp_body: Matrix2::zeros(),
        rotation: Matrix2::identity(),
        c_f: v2(c_f),
        k_t: k,
        k_a: k,
        force_drift: Vec2::zeros(),
    })
}

/// Sliding rates of a spring finger on a flat face of a stationary or
/// translating object. Raises on the type-II degeneracy.
#[pyfunction]
#[pyo3(signature = (mu, force, normal, stiffness, pa_dot, c_f = (0.0, 0.0)))]
fn forward_sliding<'py>(
    py: Python<'py>,
    mu: f64,
    force: (f64, f64),
    normal: (f64, f64),
    stiffness: [[f64; 2]; 2],
    pa_dot: (f64, f64),
    c_f: (f64, f64),
) -> PyResult<Bound<'py, PyAny>> {
    let inputs = flat_contact(mu, force, normal, stiffness, c_f)?;
    let pa = v2(pa_dot);
    let c = sliding::coefficients_from(&inputs, &pa).map_err(err)?;
    let value = match sliding::forward_sliding(&c, &pa).map_err(err)? {
        SlidingOutcome::Sliding(s) => serde_json::json!({
            "sliding": true,
            "lambda": s.lambda,
            "pf_dot": [s.pf_dot.x, s.pf_dot.y],
            "fc_dot": [s.fc_dot.x, s.fc_dot.y],
            "lambda_den": c.lambda_den,
        }),
        SlidingOutcome::RevertsToSticking { lambda } => {
            serde_json::json!({"sliding": false, "lambda": lambda, "lambda_den": c.lambda_den})
        }
    };
    to_py(py, &value)
}

/// Anchor velocities giving sliding rate `lambda_star`: a particular
/// solution and a basis of velocities that leave it unchanged.
#[pyfunction]
#[pyo3(signature = (mu, force, normal, stiffness, lambda_star, c_f = (0.0, 0.0)))]
fn inverse_sliding(
    mu: f64,
    force: (f64, f64),
    normal: (f64, f64),
    stiffness: [[f64; 2]; 2],
    lambda_star: f64,
    c_f: (f64, f64),
) -> PyResult<((f64, f64), Vec<(f64, f64)>)> {
    let inputs = flat_contact(mu, force, normal, stiffness, c_f)?;
    let c = sliding::coefficients_from(&inputs, &Vec2::zeros()).map_err(err)?;
    let inv = sliding::inverse_sliding(&c, lambda_star).map_err(err)?;
    Ok(((inv.particular.x, inv.particular.y), inv.nullspace.iter().map(|v| (v.x, v.y)).collect()))
}

#[pyfunction]
#[pyo3(signature = (theta1, theta2, torques = (1.0, 1.0), links = (1.0, 1.0)))]
fn stiffness_2r(theta1: f64, theta2: f64, torques: (f64, f64), links: (f64, f64)) -> PyResult<[[f64; 2]; 2]> {
    let k = finger::stiffness_2r(theta1, theta2, [torques.0, torques.1], [links.0, links.1], None).map_err(err)?;
    Ok([[k[(0, 0)], k[(0, 1)]], [k[(1, 0)], k[(1, 1)]]])
}

/// Closed-form eigenvalues of the unit two-link stiffness, smallest first.
#[pyfunction]
fn stiffness_2r_eigenvalues(theta2: f64) -> PyResult<(f64, f64)> {
    finger::stiffness_2r_eigenvalues(theta2).map_err(err)
}

/// Fits friction and stiffness. `config` is an identification config JSON
/// string whose task path resolves against `base_dir`; without `trace_csv`
/// the config's synthetic section generates the data.
#[pyfunction]
#[pyo3(signature = (config, base_dir = PathBuf::from("."), trace_csv = None, noise = 0.0, seed = 0))]
fn fit<'py>(
    py: Python<'py>,
    config: &str,
    base_dir: PathBuf,
    trace_csv: Option<&str>,
    noise: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg: IdentConfig = from_json_str(config, "config").map_err(err)?;
    let observed = match trace_csv {
        Some(text) => observation_from_csv(text).map_err(err)?,
        None => {
            let synth = cfg
                .synthetic
                .as_ref()
                .ok_or_else(|| PyValueError::new_err("config has no \"synthetic\" section and no trace was given"))?;
            let file = cfg.task.resolve(&base_dir).map_err(err)?;
            let hand = match &cfg.hand {
                Some(h) => h.clone(),
                None => file.require_hand().map_err(err)?.clone(),
            };
            let clean = synthesize(&file.task, &hand, &synth.params, &synth.drag).map_err(err)?;
            if noise > 0.0 {
                clean.with_noise(noise, seed)
            } else {
                clean
            }
        }
    };
    let problem = cfg.problem(&base_dir, observed).map_err(err)?;
    let result = py.detach(|| fit_params(&problem)).map_err(err)?;
    to_py(py, &result)
}

#[pymodule]
fn springslide_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SpringSlideError", m.py().get_type::<SpringSlideError>())?;
    m.add_class::<PyTask>()?;
    m.add_class::<PyTrace>()?;
    m.add_class::<PyPlan>()?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(robustness, m)?)?;
    m.add_function(wrap_pyfunction!(fcmap, m)?)?;
    m.add_function(wrap_pyfunction!(xi_star, m)?)?;
    m.add_function(wrap_pyfunction!(forward_sliding, m)?)?;
    m.add_function(wrap_pyfunction!(inverse_sliding, m)?)?;
    m.add_function(wrap_pyfunction!(stiffness_2r, m)?)?;
    m.add_function(wrap_pyfunction!(stiffness_2r_eigenvalues, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    Ok(())
}
