//! Bundled example tasks: a tall rounded box regrasped by two fingers, and
//! a trapezoid pressed from both slanted sides.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;

use crate::error::Result;
use crate::model::{Boundary, BoundaryPiece, EnvContact, EnvContactMode, ObjectPose, TaskModel, Vec2};
use crate::planner::{directions_between, Evaluator, GridSpec, HandModel, PlanSpec};

/// Counter-clockwise rounded rectangle `[−w/2, w/2] × [0, h]`, starting with
/// the bottom edge. Faces are pieces 0 (bottom), 2 (right), 4 (top) and 6 (left).
pub fn rounded_rectangle(width: f64, height: f64, radius: f64) -> Result<Boundary> {
    let (hw, r) = (0.5 * width, radius);
    let seg = |a: (f64, f64), b: (f64, f64)| BoundaryPiece::Segment { start: Vec2::new(a.0, a.1), end: Vec2::new(b.0, b.1) };
    let arc = |c: (f64, f64), start: f64| BoundaryPiece::Arc { center: Vec2::new(c.0, c.1), radius: r, start_angle: start, sweep: FRAC_PI_2 };
    Boundary::new(vec![
        seg((-hw + r, 0.0), (hw - r, 0.0)),
        arc((hw - r, r), -FRAC_PI_2),
        seg((hw, r), (hw, height - r)),
        arc((hw - r, height - r), 0.0),
        seg((hw - r, height), (-hw + r, height)),
        arc((-hw + r, height - r), FRAC_PI_2),
        seg((-hw, height - r), (-hw, r)),
        arc((-hw + r, r), PI),
    ])
}

/// 0.1 m × 0.2 m box with 1 cm corner radius standing on a table, touching
/// it at the ends of the flat bottom edge.
pub fn regrasp_task() -> TaskModel {
    let up = Vec2::new(0.0, 1.0);
    TaskModel {
        boundary: rounded_rectangle(0.1, 0.2, 0.01).expect("box boundary is closed"),
        env_contacts: vec![
            EnvContact { position: Vec2::new(-0.04, 0.0), normal: up, mode: EnvContactMode::Sticking },
            EnvContact { position: Vec2::new(0.04, 0.0), normal: up, mode: EnvContactMode::Sticking },
        ],
        mu: 0.2502,
        mu_e: 1.0,
        gravity_wrench: Vector3::new(0.0, 0.0, -10.1),
        characteristic_length: 0.1,
        cone_edges: 8,
        object_pose: ObjectPose::default(),
    }
}

/// Fitted finger stiffnesses (N/m) for the two fingers of the regrasp task.
pub const REGRASP_STIFFNESS: [[f64; 2]; 2] = [[152.06, 101.1], [150.23, 105.94]];

/// Hand with the left finger on face 6 and the right finger on face 2. Its
/// start position sits 15 mm above the one that puts the forces on their
/// cone edges at the start heights, so the fingers begin sticking.
pub fn regrasp_hand() -> HandModel {
    let k = REGRASP_STIFFNESS;
    let mut hand = HandModel {
        position: Vec2::zeros(),
        angle: 0.0,
        anchor_offsets: vec![Vec2::new(-0.01, 0.0), Vec2::new(0.01, 0.0)],
        stiffness: vec![[[k[0][0], 0.0], [0.0, k[0][1]]], [[k[1][0], 0.0], [0.0, k[1][1]]]],
        rest_offsets: Vec::new(),
        faces: vec![6, 2],
    };
    let task = regrasp_task();
    let spec = regrasp_spec();
    let at_s = Evaluator::new(&task, &hand, directions_between(&spec.s, &spec.g))
        .and_then(|e| e.hand_at(&spec.s))
        .expect("start heights admit a sliding grasp");
    hand.position = at_s + Vec2::new(0.0, 0.015);
    hand
}

pub fn regrasp_spec() -> PlanSpec {
    PlanSpec {
        s: Vec2::new(0.168, 0.169),
        g: Vec2::new(0.055, 0.035),
        t1: 5.0,
        t2: 20.0,
        kappa: 0.5,
        grid: Some(GridSpec { y1: [0.03, 0.175], y2: [0.03, 0.175], step: 0.001 }),
        check_rate: 40.0,
    }
}

/// Trapezoid, 0.2 m at the base, 0.1 m at the top, 0.1 m tall, on a table.
/// Fingers touch the left (piece 3) and right (piece 1) slanted faces.
pub fn trapezoid_task() -> TaskModel {
    let pts = [Vec2::new(-0.1, 0.0), Vec2::new(0.1, 0.0), Vec2::new(0.05, 0.1), Vec2::new(-0.05, 0.1)];
    let pieces = (0..4).map(|i| BoundaryPiece::Segment { start: pts[i], end: pts[(i + 1) % 4] }).collect();
    let up = Vec2::new(0.0, 1.0);
    TaskModel {
        boundary: Boundary::new(pieces).expect("trapezoid boundary is closed"),
        env_contacts: vec![
            EnvContact { position: pts[0], normal: up, mode: EnvContactMode::Sticking },
            EnvContact { position: pts[1], normal: up, mode: EnvContactMode::Sticking },
        ],
        mu: 0.3,
        mu_e: 0.8,
        gravity_wrench: Vector3::new(0.0, 0.0, -5.0),
        characteristic_length: 0.1,
        cone_edges: 8,
        object_pose: ObjectPose::default(),
    }
}

/// Hand whose anchors sit roughly 4 cm along the inward face normals from
/// fingertips at mid-height.
pub fn trapezoid_hand() -> HandModel {
    HandModel {
        position: Vec2::new(0.0, 0.032),
        angle: 0.0,
        anchor_offsets: vec![Vec2::new(-0.04, 0.0), Vec2::new(0.04, 0.0)],
        stiffness: vec![[[100.0, 0.0], [0.0, 100.0]]; 2],
        rest_offsets: Vec::new(),
        faces: vec![3, 1],
    }
}
