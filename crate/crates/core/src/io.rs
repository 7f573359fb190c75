//! JSON and CSV formats shared by the command line and the Python bindings.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finger::{FingerState, StiffnessModel, StiffnessSpec};
use crate::ident::{DragSpec, IdentBounds, IdentParams, IdentProblem, Observation};
use crate::model::{ObjectPose, TaskModel, Vec2};
use crate::planner::{HandModel, RegraspPlan};
use crate::simulator::{simulate, Drive, SimConfig, Trace};
use crate::wrench::finger_wrench;

/// Parses JSON, reporting the line and column of the first problem.
pub fn from_json_str<T: DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text)
        .map_err(|e| Error::Parse(format!("{what}: line {}, column {}: {e}", e.line(), e.column())))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    from_json_str(&read_text(path)?, &path.display().to_string())
}

/// A task, optionally bundled with the hand that manipulates it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFile {
    #[serde(flatten)]
    pub task: TaskModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hand: Option<HandModel>,
}

impl TaskFile {
    pub fn load(path: &Path) -> Result<Self> {
        let file: TaskFile = read_json(path)?;
        file.task.validate()?;
        if let Some(hand) = &file.hand {
            hand.validate(&file.task)?;
        }
        Ok(file)
    }

    pub fn require_hand(&self) -> Result<&HandModel> {
        self.hand
            .as_ref()
            .ok_or_else(|| Error::Parse("task file has no \"hand\" entry, which this command needs".into()))
    }
}

/// A finger placed at boundary parameter `s`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FingerSpec {
    pub anchor: Vec2,
    #[serde(default = "Vec2::zeros")]
    pub rest_offset: Vec2,
    pub stiffness: StiffnessSpec,
    pub s: f64,
}

impl FingerSpec {
    pub fn state(&self, task: &TaskModel, pose: &ObjectPose) -> Result<FingerState> {
        let q = task.surface_query(self.s)?;
        Ok(FingerState {
            anchor: self.anchor,
            fingertip: pose.to_world(&q.position),
            rest_offset: self.rest_offset,
            stiffness: StiffnessModel::try_from(self.stiffness.clone())?,
            s: self.s,
        })
    }
}

/// What drives a simulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Motion {
    /// Explicit fingers whose anchors follow a piecewise-linear hand path.
    Waypoints {
        fingers: Vec<FingerSpec>,
        /// `[t, x, y]` rows with increasing `t`, the first at `t = 0`.
        waypoints: Vec<[f64; 3]>,
        #[serde(default)]
        object: Option<ObjectPose>,
        #[serde(default)]
        duration: Option<f64>,
        #[serde(default)]
        sample_period: Option<f64>,
    },
    /// A hand model (inline or from the task file) placed at `heights`.
    Hand {
        #[serde(default)]
        hand: Option<HandModel>,
        heights: Vec2,
        waypoints: Vec<[f64; 3]>,
        #[serde(default)]
        object: Option<ObjectPose>,
        #[serde(default)]
        duration: Option<f64>,
        #[serde(default)]
        sample_period: Option<f64>,
    },
    Plan {
        plan: RegraspPlan,
        #[serde(default)]
        sample_period: Option<f64>,
    },
}

impl Motion {
    /// Accepts a tagged motion, or a bare plan as written by the planner.
    pub fn from_value(value: serde_json::Value, what: &str) -> Result<Self> {
        let tagged = value.get("kind").is_some();
        let text = value.to_string();
        if tagged {
            from_json_str(&text, what)
        } else {
            Ok(Motion::Plan { plan: from_json_str(&text, what)?, sample_period: None })
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let value: serde_json::Value = read_json(path)?;
        Self::from_value(value, &path.display().to_string())
    }
}

fn path_at(waypoints: &[[f64; 3]], t: f64) -> Vec2 {
    let at = |w: &[f64; 3]| Vec2::new(w[1], w[2]);
    let k = waypoints.partition_point(|w| w[0] <= t);
    if k == 0 {
        return at(&waypoints[0]);
    }
    if k == waypoints.len() {
        return at(&waypoints[k - 1]);
    }
    let (a, b) = (&waypoints[k - 1], &waypoints[k]);
    let u = (t - a[0]) / (b[0] - a[0]);
    at(a) + (at(b) - at(a)) * u
}

fn check_waypoints(waypoints: &[[f64; 3]]) -> Result<()> {
    if waypoints.is_empty() || waypoints[0][0] != 0.0 {
        return Err(Error::precondition("simulator", "waypoints must start at t = 0"));
    }
    if waypoints.windows(2).any(|w| !(w[1][0] > w[0][0])) {
        return Err(Error::precondition("simulator", "waypoint times must increase strictly"));
    }
    Ok(())
}

/// Pose at `t` under the constant twist of the initial pose.
pub fn pose_at(initial: &ObjectPose, t: f64) -> ObjectPose {
    ObjectPose { position: initial.position + initial.velocity * t, angle: initial.angle + initial.omega * t, ..*initial }
}

/// Runs a motion. `hand` is the task file's hand, used when a hand motion
/// carries none of its own.
pub fn run_motion(task: &TaskModel, hand: Option<&HandModel>, motion: &Motion, dt: f64) -> Result<Trace> {
    let cfg = |duration: f64, sample: Option<f64>| SimConfig {
        dt,
        sample_period: sample.unwrap_or(dt),
        duration,
        ..Default::default()
    };
    match motion {
        Motion::Plan { plan, sample_period } => Ok(plan.simulate(task, &cfg(plan.t2(), *sample_period))?.trace),
        Motion::Waypoints { fingers, waypoints, object, duration, sample_period } => {
            check_waypoints(waypoints)?;
            let pose0 = object.unwrap_or(task.object_pose);
            let states = fingers.iter().map(|f| f.state(task, &pose0)).collect::<Result<Vec<_>>>()?;
            let start = path_at(waypoints, 0.0);
            let anchors0: Vec<Vec2> = fingers.iter().map(|f| f.anchor).collect();
            let drive = |t: f64| {
                let p = path_at(waypoints, t);
                Drive { hand: p, anchors: anchors0.iter().map(|a| a + (p - start)).collect() }
            };
            let object = |t: f64| pose_at(&pose0, t);
            let duration = duration.unwrap_or(waypoints[waypoints.len() - 1][0]);
            simulate(task, states, &drive, &object, &cfg(duration, *sample_period))
        }
        Motion::Hand { hand: own, heights, waypoints, object, duration, sample_period } => {
            check_waypoints(waypoints)?;
            let hand = own.as_ref().or(hand).ok_or_else(|| {
                Error::Parse("hand motion needs a \"hand\" entry in the motion or the task file".into())
            })?;
            hand.validate(task)?;
            let pose0 = object.unwrap_or(task.object_pose);
            let mut task = task.clone();
            task.object_pose = pose0;
            let states = hand.finger_states(&task, heights, &path_at(waypoints, 0.0))?;
            let drive = |t: f64| {
                let p = path_at(waypoints, t);
                Drive { hand: p, anchors: hand.anchors(&p) }
            };
            let object = |t: f64| pose_at(&pose0, t);
            let duration = duration.unwrap_or(waypoints[waypoints.len() - 1][0]);
            simulate(&task, states, &drive, &object, &cfg(duration, *sample_period))
        }
    }
}

/// Fingertip wrench for the robustness check: given directly in scaled
/// form, or as world-frame contact points and forces.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WrenchInput {
    Scaled { wc: Vec<f64> },
    Contacts { contacts: Vec<ContactInput> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContactInput {
    pub position: Vec2,
    pub force: Vec2,
}

impl WrenchInput {
    pub fn scaled(&self, task: &TaskModel) -> Result<DVector<f64>> {
        match self {
            WrenchInput::Scaled { wc } => {
                if wc.len() != 3 {
                    return Err(Error::Parse(format!("\"wc\" must have 3 entries, found {}", wc.len())));
                }
                Ok(DVector::from_column_slice(wc))
            }
            WrenchInput::Contacts { contacts } => {
                let pairs: Vec<(Vec2, Vec2)> = contacts.iter().map(|c| (c.position, c.force)).collect();
                Ok(finger_wrench(task, &task.object_pose, &pairs))
            }
        }
    }
}

/// Parses a simulator trace CSV into an observation.
pub fn observation_from_csv(text: &str) -> Result<Observation> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Parse(format!("trace header: {e}")))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| Error::Parse(format!("trace has no column {name:?}")));
    let (it, ix, iy) = (need("t")?, need("phx")?, need("phy")?);
    let mut tips = Vec::new();
    while let (Some(x), Some(y)) = (col(&format!("pf{}B_x", tips.len() + 1)), col(&format!("pf{}B_y", tips.len() + 1))) {
        tips.push((x, y));
    }
    if tips.is_empty() {
        return Err(Error::Parse("trace has no fingertip columns (pf1B_x, pf1B_y)".into()));
    }
    let mut obs = Observation { t: Vec::new(), hand: Vec::new(), fingertips: Vec::new() };
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("trace row {}: {e}", k + 2)))?;
        let num = |i: usize| -> Result<f64> {
            record
                .get(i)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("trace row {}, column {:?}: {e}", k + 2, &headers[i])))
        };
        obs.t.push(num(it)?);
        obs.hand.push(Vec2::new(num(ix)?, num(iy)?));
        obs.fingertips.push(tips.iter().map(|&(x, y)| Ok(Vec2::new(num(x)?, num(y)?))).collect::<Result<_>>()?);
    }
    Ok(obs)
}

/// Data-generation settings for a synthetic identification run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub params: IdentParams,
    pub drag: DragSpec,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

/// A task given inline or as a path relative to the referring file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskRef {
    Path(PathBuf),
    Inline(Box<TaskFile>),
}

impl TaskRef {
    pub fn resolve(&self, base: &Path) -> Result<TaskFile> {
        match self {
            TaskRef::Path(p) => TaskFile::load(&base.join(p)),
            TaskRef::Inline(t) => {
                t.task.validate()?;
                Ok((**t).clone())
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentConfig {
    pub task: TaskRef,
    /// Overrides the task file's hand.
    #[serde(default)]
    pub hand: Option<HandModel>,
    pub heights: Vec2,
    /// Hand position at `t = 0`; defaults to the hand's own position.
    #[serde(default)]
    pub start: Option<Vec2>,
    pub initial: IdentParams,
    #[serde(default)]
    pub bounds: IdentBounds,
    #[serde(default)]
    pub cholesky: bool,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub max_iterations: Option<usize>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
}

impl IdentConfig {
    /// Builds the fitting problem. `base` resolves a task path.
    pub fn problem(&self, base: &Path, observed: Observation) -> Result<IdentProblem> {
        let file = self.task.resolve(base)?;
        let mut hand = match &self.hand {
            Some(h) => h.clone(),
            None => file.require_hand()?.clone(),
        };
        if let Some(start) = self.start {
            hand.position = start;
        }
        let problem = IdentProblem {
            task: file.task,
            hand,
            heights: self.heights,
            observed,
            initial: self.initial,
            bounds: self.bounds,
            cholesky: self.cholesky,
            dt: self.dt.unwrap_or(1e-3),
            max_iterations: self.max_iterations.unwrap_or(600),
        };
        problem.validate()?;
        Ok(problem)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{regrasp_hand, regrasp_task, trapezoid_hand, trapezoid_task};
    use approx::assert_relative_eq;

    #[test]
    fn malformed_json_reports_location() {
        let err = from_json_str::<TaskFile>("{\n  \"mu\": 0.3,\n  oops", "t.json").unwrap_err();
        assert!(err.is_input_error());
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn task_file_round_trip() {
        let file = TaskFile { task: regrasp_task(), hand: Some(regrasp_hand()) };
        let text = serde_json::to_string_pretty(&file).unwrap();
        let back: TaskFile = from_json_str(&text, "mem").unwrap();
        assert_eq!(back, file);
    }

    #[test]
    fn waypoint_path_interpolates_and_clamps() {
        let w = [[0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [3.0, 1.0, 2.0]];
        assert_eq!(path_at(&w, -1.0), Vec2::zeros());
        assert_relative_eq!(path_at(&w, 0.5), Vec2::new(0.5, 0.0));
        assert_relative_eq!(path_at(&w, 2.0), Vec2::new(1.0, 1.0));
        assert_eq!(path_at(&w, 5.0), Vec2::new(1.0, 2.0));
        assert!(check_waypoints(&[[0.0, 0.0, 0.0], [0.0, 1.0, 1.0]]).is_err());
    }

    #[test]
    fn trace_csv_parses_back_to_observation() {
        let task = trapezoid_task();
        let hand = trapezoid_hand();
        let motion = Motion::Hand {
            hand: None,
            heights: Vec2::new(0.05, 0.05),
            waypoints: vec![[0.0, 0.0, 0.032], [0.5, 0.0, 0.027]],
            object: None,
            duration: None,
            sample_period: Some(0.01),
        };
        let trace = run_motion(&task, Some(&hand), &motion, 1e-3).unwrap();
        assert_eq!(trace.rows.len(), 50);
        let obs = observation_from_csv(&trace.to_csv()).unwrap();
        let direct = Observation::from_trace(&trace);
        assert_eq!(obs, direct);
    }

    #[test]
    fn explicit_fingers_match_hand_placement() {
        let task = trapezoid_task();
        let hand = trapezoid_hand();
        let states = hand.finger_states(&task, &Vec2::new(0.05, 0.05), &hand.position).unwrap();
        let fingers: Vec<FingerSpec> = states
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let k = hand.k(i);
                FingerSpec {
                    anchor: f.anchor,
                    rest_offset: f.rest_offset,
                    stiffness: StiffnessSpec::Matrix([[k[(0, 0)], k[(0, 1)]], [k[(1, 0)], k[(1, 1)]]]),
                    s: f.s,
                }
            })
            .collect();
        let waypoints = vec![[0.0, 0.0, 0.032], [0.5, 0.0, 0.027]];
        let a = run_motion(
            &task,
            None,
            &Motion::Waypoints { fingers, waypoints: waypoints.clone(), object: None, duration: None, sample_period: None },
            1e-3,
        )
        .unwrap();
        let b = run_motion(
            &task,
            Some(&hand),
            &Motion::Hand { hand: None, heights: Vec2::new(0.05, 0.05), waypoints, object: None, duration: None, sample_period: None },
            1e-3,
        )
        .unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn bare_plan_is_a_motion() {
        let v = serde_json::json!({"kind": "plan", "plan": 3});
        assert!(Motion::from_value(v, "m").is_err());
        let v = serde_json::json!({"spec": {}});
        assert!(matches!(Motion::from_value(v, "m"), Err(Error::Parse(_))));
    }
}
