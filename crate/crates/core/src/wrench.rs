//! Contact wrenches, environmental wrench cones and quasistatic balance.
//!
//! Wrenches are stacked moment-first and the moment is divided by the
//! task's characteristic length, so every component is measured in newtons.
//! Moments are taken about the object origin.

use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{self, LpOutcome};
use crate::model::{cross2, left_normal, EnvContactMode, ObjectPose, TaskModel, Vec2};

/// Planar wrench `[(p × f)/L_c, f_x, f_y]`.
pub fn contact_wrench(p: &Vec2, f: &Vec2, characteristic_length: f64) -> Vector3<f64> {
    Vector3::new(cross2(p, f) / characteristic_length, f.x, f.y)
}

/// Spatial wrench `[(p × f)/L_c; f]`.
pub fn contact_wrench_spatial(p: &Vector3<f64>, f: &Vector3<f64>, characteristic_length: f64) -> Vector6<f64> {
    let m = p.cross(f) / characteristic_length;
    Vector6::new(m.x, m.y, m.z, f.x, f.y, f.z)
}

/// Which contact and cone edge a column of [`WrenchCone::w`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSource {
    pub contact: usize,
    pub edge: usize,
    pub sliding: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WrenchCone {
    /// Basis wrenches as columns, `dim × p`.
    pub w: DMatrix<f64>,
    pub columns: Vec<ColumnSource>,
    pub dim: usize,
}

/// Planar external wrench cone of the task's environmental contacts.
pub fn build_external_cone(task: &TaskModel, pose: &ObjectPose) -> Result<WrenchCone> {
    if task.env_contacts.is_empty() {
        return Err(Error::precondition("wrench", "at least one environmental contact is required"));
    }
    let r = pose.rotation();
    let mut cols: Vec<Vector3<f64>> = Vec::new();
    let mut columns = Vec::new();
    for (j, c) in task.env_contacts.iter().enumerate() {
        let p = r * c.position;
        let n = r * c.normal;
        let t = left_normal(&n);
        match c.mode {
            EnvContactMode::Sticking => {
                for (k, side) in [1.0, -1.0].into_iter().enumerate() {
                    let f = (n + t * (side * task.mu_e)).normalize();
                    cols.push(contact_wrench(&p, &f, task.characteristic_length));
                    columns.push(ColumnSource { contact: j, edge: k, sliding: false });
                }
            }
            EnvContactMode::Sliding { direction } => {
                let d = r * direction;
                let along = d.dot(&t);
                if along == 0.0 {
                    return Err(Error::precondition(
                        "wrench",
                        format!("sliding direction of environmental contact {j} has no tangential component"),
                    ));
                }
                // friction opposes the object's sliding
                let f = (n - t * (along.signum() * task.mu_e)).normalize();
                cols.push(contact_wrench(&p, &f, task.characteristic_length));
                columns.push(ColumnSource { contact: j, edge: 0, sliding: true });
            }
        }
    }
    let w = DMatrix::from_fn(3, cols.len(), |i, k| cols[k][i]);
    Ok(WrenchCone { w, columns, dim: 3 })
}

/// A spatial point contact for [`build_spatial_cone`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialContact {
    pub position: Vector3<f64>,
    pub normal: Vector3<f64>,
    /// Sliding direction of the object at the contact, if sliding.
    pub sliding: Option<Vector3<f64>>,
}

/// Spatial external wrench cone with `n_c`-sided polyhedral friction cones.
pub fn build_spatial_cone(contacts: &[SpatialContact], mu_e: f64, n_c: usize, characteristic_length: f64) -> Result<WrenchCone> {
    if contacts.is_empty() {
        return Err(Error::precondition("wrench", "at least one environmental contact is required"));
    }
    if n_c < 3 {
        return Err(Error::precondition("wrench", format!("polyhedral cone needs at least 3 edges, got {n_c}")));
    }
    let mut cols: Vec<Vector6<f64>> = Vec::new();
    let mut columns = Vec::new();
    for (j, c) in contacts.iter().enumerate() {
        let n = c.normal.normalize();
        let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let u = n.cross(&helper).normalize();
        let v = n.cross(&u);
        match c.sliding {
            None => {
                for k in 0..n_c {
                    let phi = 2.0 * std::f64::consts::PI * k as f64 / n_c as f64;
                    let f = (n + (u * phi.cos() + v * phi.sin()) * mu_e).normalize();
                    cols.push(contact_wrench_spatial(&c.position, &f, characteristic_length));
                    columns.push(ColumnSource { contact: j, edge: k, sliding: false });
                }
            }
            Some(d) => {
                let tangential = d - n * d.dot(&n);
                if tangential.norm() == 0.0 {
                    return Err(Error::precondition(
                        "wrench",
                        format!("sliding direction of environmental contact {j} has no tangential component"),
                    ));
                }
                let f = (n - tangential.normalize() * mu_e).normalize();
                cols.push(contact_wrench_spatial(&c.position, &f, characteristic_length));
                columns.push(ColumnSource { contact: j, edge: 0, sliding: true });
            }
        }
    }
    let w = DMatrix::from_fn(6, cols.len(), |i, k| cols[k][i]);
    Ok(WrenchCone { w, columns, dim: 6 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceSolution {
    pub beta: Vec<f64>,
    /// External contact wrench `Wβ`.
    pub w_e: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Balance {
    Feasible(BalanceSolution),
    Infeasible,
}

impl Balance {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Balance::Feasible(_))
    }

    pub fn solution(&self) -> Option<&BalanceSolution> {
        match self {
            Balance::Feasible(s) => Some(s),
            Balance::Infeasible => None,
        }
    }
}

/// Minimum-`1ᵀβ` external wrench balancing the (moment-scaled) finger wrench
/// `wc_bar` and gravity wrench `w_g`.
pub fn balance_lp(w: &DMatrix<f64>, wc_bar: &DVector<f64>, w_g: &DVector<f64>) -> Result<Balance> {
    if wc_bar.len() != w.nrows() || w_g.len() != w.nrows() {
        return Err(Error::precondition(
            "wrench",
            format!(
                "wrench dimensions disagree: W has {} rows, w_c has {}, w_g has {}",
                w.nrows(),
                wc_bar.len(),
                w_g.len()
            ),
        ));
    }
    let b = -(wc_bar + w_g);
    let c = DVector::from_element(w.ncols(), 1.0);
    match lp::solve(&c, w, &b)? {
        LpOutcome::Optimal { x, .. } => {
            let w_e = w * &x;
            Ok(Balance::Feasible(BalanceSolution { beta: x.iter().copied().collect(), w_e: w_e.iter().copied().collect() }))
        }
        LpOutcome::Infeasible { .. } => Ok(Balance::Infeasible),
        // all costs are positive so the program is bounded below by zero
        LpOutcome::Unbounded => Err(Error::precondition("wrench", "balance program reported unbounded")),
    }
}

/// Total moment-scaled wrench of forces `f` applied at world points `p`.
pub fn finger_wrench(task: &TaskModel, pose: &ObjectPose, contacts: &[(Vec2, Vec2)]) -> DVector<f64> {
    let mut sum = Vector3::zeros();
    for (p, f) in contacts {
        sum += contact_wrench(&(p - pose.position), f, task.characteristic_length);
    }
    DVector::from_column_slice(sum.as_slice())
}

pub fn gravity(task: &TaskModel) -> DVector<f64> {
    DVector::from_column_slice(task.scaled_gravity().as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Boundary, BoundaryPiece, EnvContact};
    use proptest::prelude::*;

    fn table_task(mu_e: f64) -> TaskModel {
        let pts = [Vec2::new(-0.05, 0.0), Vec2::new(0.05, 0.0), Vec2::new(0.05, 0.1), Vec2::new(-0.05, 0.1)];
        let pieces = (0..4).map(|i| BoundaryPiece::Segment { start: pts[i], end: pts[(i + 1) % 4] }).collect();
        TaskModel {
            boundary: Boundary::new(pieces).unwrap(),
            env_contacts: vec![
                EnvContact { position: pts[0], normal: Vec2::new(0.0, 1.0), mode: EnvContactMode::Sticking },
                EnvContact { position: pts[1], normal: Vec2::new(0.0, 1.0), mode: EnvContactMode::Sticking },
            ],
            mu: 0.5,
            mu_e,
            gravity_wrench: Vector3::new(0.0, 0.0, -10.1),
            characteristic_length: 0.1,
            cone_edges: 8,
            object_pose: ObjectPose::default(),
        }
    }

    #[test]
    fn wrench_examples() {
        assert_eq!(contact_wrench(&Vec2::new(1.0, 0.0), &Vec2::new(0.0, 1.0), 1.0), Vector3::new(1.0, 0.0, 1.0));
        assert_eq!(contact_wrench(&Vec2::new(1.0, 3.0), &Vec2::zeros(), 0.1), Vector3::zeros());
        assert_eq!(contact_wrench(&Vec2::zeros(), &Vec2::new(2.0, 3.0), 0.1)[0], 0.0);
        let w = contact_wrench_spatial(&Vector3::x(), &Vector3::y(), 2.0);
        assert_eq!(w, Vector6::new(0.0, 0.0, 0.5, 0.0, 1.0, 0.0));
    }

    #[test]
    fn table_cone_shape() {
        let cone = build_external_cone(&table_task(1.0), &ObjectPose::default()).unwrap();
        assert_eq!(cone.w.shape(), (3, 4));
        let cone = build_external_cone(&table_task(0.0), &ObjectPose::default()).unwrap();
        for j in 0..4 {
            assert_eq!(cone.w[(1, j)], 0.0);
            assert_eq!(cone.w[(2, j)], 1.0);
        }
    }

    #[test]
    fn sliding_contact_contributes_one_column() {
        let mut task = table_task(0.5);
        task.env_contacts[1].mode = EnvContactMode::Sliding { direction: Vec2::new(1.0, 0.0) };
        let cone = build_external_cone(&task, &ObjectPose::default()).unwrap();
        assert_eq!(cone.w.ncols(), 3);
        // friction on the sliding contact points in −x
        assert!(cone.w[(1, 2)] < 0.0);
        assert!(cone.columns[2].sliding);
    }

    #[test]
    fn gravity_only_splits_symmetrically() {
        let task = table_task(1.0);
        let cone = build_external_cone(&task, &ObjectPose::default()).unwrap();
        let bal = balance_lp(&cone.w, &DVector::zeros(3), &gravity(&task)).unwrap();
        let s = bal.solution().expect("feasible");
        // normal load carried by each contact: sum of its edge normals
        let per_contact: Vec<f64> = (0..2)
            .map(|j| (0..4).filter(|&k| cone.columns[k].contact == j).map(|k| s.beta[k] * cone.w[(2, k)]).sum())
            .collect();
        assert!((per_contact[0] - 5.05).abs() < 1e-9);
        assert!((per_contact[1] - 5.05).abs() < 1e-9);
    }

    #[test]
    fn pulling_off_the_table_is_infeasible() {
        let task = table_task(1.0);
        let cone = build_external_cone(&task, &ObjectPose::default()).unwrap();
        let lift = DVector::from_vec(vec![0.0, 0.0, 20.0]);
        assert_eq!(balance_lp(&cone.w, &lift, &gravity(&task)).unwrap(), Balance::Infeasible);
    }

    #[test]
    fn spatial_cone_edges() {
        let contacts = [SpatialContact { position: Vector3::zeros(), normal: Vector3::z(), sliding: None }];
        let cone = build_spatial_cone(&contacts, 0.5, 8, 0.1).unwrap();
        assert_eq!(cone.w.shape(), (6, 8));
        let contacts = [SpatialContact { position: Vector3::zeros(), normal: Vector3::z(), sliding: Some(Vector3::x()) }];
        let cone = build_spatial_cone(&contacts, 0.5, 8, 0.1).unwrap();
        assert_eq!(cone.w.ncols(), 1);
        assert!(cone.w[(3, 0)] < 0.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let w = DMatrix::identity(3, 3);
        assert!(balance_lp(&w, &DVector::zeros(2), &DVector::zeros(3)).is_err());
    }

    /// Feasibility by scanning β on a grid over a bounded simplex.
    fn grid_feasible(w: &DMatrix<f64>, b: &DVector<f64>, bound: f64, steps: usize) -> f64 {
        let p = w.ncols();
        let mut best = f64::INFINITY;
        let mut idx = vec![0usize; p];
        loop {
            let beta = DVector::from_fn(p, |j, _| bound * idx[j] as f64 / steps as f64);
            best = best.min((w * beta - b).norm());
            let mut k = 0;
            while k < p {
                idx[k] += 1;
                if idx[k] <= steps {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == p {
                return best;
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn constructive_feasibility(beta0 in prop::collection::vec(0.0..3.0f64, 4),
                                    data in prop::collection::vec(-1.0..1.0f64, 12)) {
            let w = DMatrix::from_fn(3, 4, |i, j| data[i * 4 + j]);
            let beta0 = DVector::from_vec(beta0);
            let w_g = DVector::from_vec(vec![0.0, 0.0, -1.0]);
            let wc = -(&w * &beta0) - &w_g;
            match balance_lp(&w, &wc, &w_g).unwrap() {
                Balance::Feasible(s) => {
                    let beta = DVector::from_vec(s.beta.clone());
                    prop_assert!(beta.sum() <= beta0.sum() + 1e-9);
                    let res = (&w * &beta + &wc + &w_g).norm();
                    prop_assert!(res <= 1e-9 * (wc.norm() + w_g.norm()));
                }
                Balance::Infeasible => prop_assert!(false, "constructed instance must be feasible"),
            }
        }

        #[test]
        fn scaling_invariance(scale in 0.01..100.0f64, fx in -5.0..5.0f64, fy in -5.0..5.0f64, m in -2.0..2.0f64) {
            let task = table_task(0.7);
            let cone = build_external_cone(&task, &ObjectPose::default()).unwrap();
            let wc = DVector::from_vec(vec![m, fx, fy]);
            let g = gravity(&task);
            let a = balance_lp(&cone.w, &wc, &g).unwrap();
            let b = balance_lp(&cone.w, &(&wc * scale), &(&g * scale)).unwrap();
            prop_assert_eq!(a.is_feasible(), b.is_feasible());
            if let (Some(sa), Some(sb)) = (a.solution(), b.solution()) {
                let ta: f64 = sa.beta.iter().sum();
                let tb: f64 = sb.beta.iter().sum();
                prop_assert!((tb - scale * ta).abs() <= 1e-8 * tb.abs().max(1.0));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn agrees_with_grid_scan(data in prop::collection::vec(-1.0..1.0f64, 8), target in prop::collection::vec(-1.0..1.0f64, 2)) {
            // 2-row instances keep the grid cheap; grid resolution decides ties
            let w = DMatrix::from_fn(2, 4, |i, j| data[i * 4 + j]);
            let b = DVector::from_vec(target);
            let lp = balance_lp(&w, &(-&b), &DVector::zeros(2)).unwrap();
            let grid = grid_feasible(&w, &b, 4.0, 16);
            if let Balance::Feasible(s) = &lp {
                if s.beta.iter().all(|&x| x <= 3.5) {
                    prop_assert!(grid < 0.75, "lp feasible but grid distance {grid}");
                }
            } else {
                prop_assert!(grid > 1e-9, "grid found an exact solution the LP missed");
            }
        }
    }
}
