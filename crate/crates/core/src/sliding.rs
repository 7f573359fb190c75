//! Sliding mechanics of a single spring finger on the edge of its friction
//! cone: forward (anchor velocity → sliding rate) and inverse problems, and
//! degeneracy detection.
//!
//! Everything here is written for a generic dimension `D` (2 for planar
//! tasks, 3 for spatial ones). All vectors are in the world frame unless the
//! name says otherwise.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finger::{contact_mode, decompose, ConeMode, ContactForce, FingerState};
use crate::model::{ObjectPose, TaskModel, Vec2};

/// Relative threshold shared by both degeneracy tests.
pub const DEGENERACY_TOL: f64 = 1e-9;

/// Fingertip velocity of a sticking contact: it moves with the object.
pub fn sticking_velocity(pose: &ObjectPose, p_f_body: &Vec2) -> Vec2 {
    pose.point_velocity(p_f_body)
}

/// Everything the coefficient chain needs about one contact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlidingInputs<const D: usize> {
    pub mu: f64,
    pub force: ContactForceD<D>,
    /// `R_o ∂n̂/∂p^𝓑`, the world normal rate per body-frame contact velocity.
    pub dn_dp_body: SMatrix<f64, D, D>,
    pub rotation: SMatrix<f64, D, D>,
    /// Velocity of the object material point under the fingertip.
    pub c_f: SVector<f64, D>,
    /// `−∂f/∂p_f`.
    pub k_t: SMatrix<f64, D, D>,
    /// `∂f/∂p_a`.
    pub k_a: SMatrix<f64, D, D>,
    /// Force rate from stiffness parameter motion, `−(∂K/∂σ σ̇) d`.
    pub force_drift: SVector<f64, D>,
}

/// Normal/tangential split of a contact force in `D` dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactForceD<const D: usize> {
    pub f_c: SVector<f64, D>,
    pub f_n: SVector<f64, D>,
    pub f_t: SVector<f64, D>,
    pub normal: SVector<f64, D>,
}

impl<const D: usize> ContactForceD<D> {
    pub fn new(f_c: SVector<f64, D>, normal: SVector<f64, D>) -> Result<Self> {
        if (normal.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("contact normal must be a unit vector (norm {})", normal.norm())));
        }
        let f_n = normal * f_c.dot(&normal);
        Ok(Self { f_c, f_n, f_t: f_c - f_n, normal })
    }
}

impl From<ContactForce> for ContactForceD<2> {
    fn from(cf: ContactForce) -> Self {
        Self { f_c: cf.f_c, f_n: cf.f_n, f_t: cf.f_t, normal: cf.normal }
    }
}

/// Intermediate symbols of the sliding-rate derivation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlidingCoefficients<const D: usize> {
    pub c_f: SVector<f64, D>,
    pub g_n: SVector<f64, D>,
    pub g_c: SVector<f64, D>,
    pub c_c: SVector<f64, D>,
    pub h: SVector<f64, D>,
    pub g_nn: SVector<f64, D>,
    pub c_nn: SVector<f64, D>,
    pub g_t: SVector<f64, D>,
    pub c_t: SVector<f64, D>,
    pub a: SVector<f64, D>,
    pub lambda_den: f64,
    /// Row vector `g_λ`, stored as a column.
    pub g_lambda: SVector<f64, D>,
    pub c_lambda: f64,
    pub k_a: SMatrix<f64, D, D>,
    pub k_t: SMatrix<f64, D, D>,
    pub f_c: SVector<f64, D>,
    pub f_t: SVector<f64, D>,
    pub f_n: SVector<f64, D>,
    pub normal: SVector<f64, D>,
    pub mu: f64,
}

impl<const D: usize> SlidingCoefficients<D> {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("coefficients are plain numbers")
    }

    /// Force-rate offset `c_c` for a given anchor velocity.
    pub fn c_c_for(&self, pa_dot: &SVector<f64, D>) -> SVector<f64, D> {
        self.k_a * pa_dot - self.h
    }
}

/// Runs the coefficient chain for anchor velocity `pa_dot`.
pub fn coefficients_from<const D: usize>(
    input: &SlidingInputs<D>,
    pa_dot: &SVector<f64, D>,
) -> Result<SlidingCoefficients<D>> {
    let ContactForceD { f_c, f_n, f_t, normal: n } = input.force;
    if f_c.dot(&n) <= 0.0 {
        return Err(Error::precondition("sliding", "contact is separated (f_c·n̂ ≤ 0)"));
    }
    let mu2 = input.mu * input.mu;
    let g_n = input.dn_dp_body * input.rotation.transpose() * f_t;
    let g_c = -input.k_t * f_t;
    let h = input.k_t * input.c_f - input.force_drift;
    let c_c = input.k_a * pa_dot - h;
    let g_nn = n * g_c.dot(&n) + n * f_c.dot(&g_n) + g_n * f_c.dot(&n);
    let c_nn = n * c_c.dot(&n);
    let g_t = g_c - g_nn;
    let c_t = c_c - c_nn;
    let a = f_n * mu2 - f_t;
    let lambda_den = f_t.dot(&g_t) - mu2 * f_n.dot(&g_nn);
    let g_lambda = input.k_a.transpose() * a / lambda_den;
    let c_lambda = a.dot(&h) / lambda_den;
    Ok(SlidingCoefficients {
        c_f: input.c_f,
        g_n,
        g_c,
        c_c,
        h,
        g_nn,
        c_nn,
        g_t,
        c_t,
        a,
        lambda_den,
        g_lambda,
        c_lambda,
        k_a: input.k_a,
        k_t: input.k_t,
        f_c,
        f_t,
        f_n,
        normal: n,
        mu: input.mu,
    })
}

/// Planar coefficient chain for a finger touching the task object.
///
/// The contact must be on its cone boundary within `mode_tol`.
pub fn coefficients(
    task: &TaskModel,
    pose: &ObjectPose,
    finger: &FingerState,
    pa_dot: &Vec2,
    mode_tol: f64,
) -> Result<SlidingCoefficients<2>> {
    let input = planar_inputs(task, pose, finger)?;
    let cf = ContactForce {
        f_c: input.force.f_c,
        f_n: input.force.f_n,
        f_t: input.force.f_t,
        normal: input.force.normal,
    };
    match contact_mode(&cf, task.mu, mode_tol) {
        ConeMode::Separated => return Err(Error::precondition("sliding", "contact is separated (f_c·n̂ ≤ 0)")),
        ConeMode::OnConeBoundary => {}
        other => {
            return Err(Error::precondition(
                "sliding",
                format!("contact force must be on the friction cone boundary, found {other:?}"),
            ))
        }
    }
    coefficients_from(&input, pa_dot)
}

/// Assembles [`SlidingInputs`] for a planar finger.
pub fn planar_inputs(task: &TaskModel, pose: &ObjectPose, finger: &FingerState) -> Result<SlidingInputs<2>> {
    let q = task.surface_query(finger.s)?;
    let r = pose.rotation();
    let normal = r * q.normal;
    let f_c = finger.force()?;
    let jac = finger.jacobians()?;
    Ok(SlidingInputs {
        mu: task.mu,
        force: decompose(&f_c, &normal)?.into(),
        dn_dp_body: r * q.curvature,
        rotation: r,
        c_f: sticking_velocity(pose, &q.position),
        k_t: jac.k_t,
        k_a: jac.k_a,
        force_drift: jac.drift,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlidingSolution<const D: usize> {
    pub lambda: f64,
    pub pf_dot: SVector<f64, D>,
    pub fc_dot: SVector<f64, D>,
    pub fn_dot: SVector<f64, D>,
    pub ft_dot: SVector<f64, D>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlidingOutcome<const D: usize> {
    Sliding(SlidingSolution<D>),
    /// The force rate points back into the cone; the contact sticks.
    RevertsToSticking { lambda: f64 },
}

impl<const D: usize> SlidingOutcome<D> {
    pub fn lambda(&self) -> f64 {
        match self {
            SlidingOutcome::Sliding(s) => s.lambda,
            SlidingOutcome::RevertsToSticking { lambda } => *lambda,
        }
    }
}

fn type_ii_threshold<const D: usize>(c: &SlidingCoefficients<D>) -> f64 {
    DEGENERACY_TOL * c.f_c.norm_squared() * c.k_t.norm()
}

/// Rates at sliding rate `λ`, without any sign check.
pub fn rates_at<const D: usize>(
    c: &SlidingCoefficients<D>,
    pa_dot: &SVector<f64, D>,
    lambda: f64,
) -> SlidingSolution<D> {
    let c_c = c.c_c_for(pa_dot);
    let c_nn = c.normal * c_c.dot(&c.normal);
    let fn_dot = c.g_nn * lambda + c_nn;
    let fc_dot = c.g_c * lambda + c_c;
    SlidingSolution {
        lambda,
        pf_dot: c.c_f + c.f_t * lambda,
        fc_dot,
        fn_dot,
        ft_dot: fc_dot - fn_dot,
    }
}

/// Sliding rate and fingertip velocity produced by anchor velocity `pa_dot`.
pub fn forward_sliding<const D: usize>(
    c: &SlidingCoefficients<D>,
    pa_dot: &SVector<f64, D>,
) -> Result<SlidingOutcome<D>> {
    if c.lambda_den.abs() < type_ii_threshold(c) {
        return Err(Error::TypeII { lambda_den: c.lambda_den });
    }
    let lambda = c.g_lambda.dot(pa_dot) - c.c_lambda;
    if lambda <= 0.0 {
        return Ok(SlidingOutcome::RevertsToSticking { lambda });
    }
    Ok(SlidingOutcome::Sliding(rates_at(c, pa_dot, lambda)))
}

/// Affine solution set of anchor velocities producing sliding rate `λ*`.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseSolution<const D: usize> {
    pub particular: SVector<f64, D>,
    /// Orthonormal basis of `{v : g_λ v = 0}`.
    pub nullspace: Vec<SVector<f64, D>>,
}

pub fn inverse_sliding<const D: usize>(c: &SlidingCoefficients<D>, lambda_star: f64) -> Result<InverseSolution<D>> {
    if !(lambda_star >= 0.0) {
        return Err(Error::precondition("sliding", format!("desired sliding rate must be >= 0, got {lambda_star}")));
    }
    let g2 = c.g_lambda.norm_squared();
    if g2 == 0.0 || !g2.is_finite() || c.g_lambda.norm() < type_i_threshold(c) {
        return Err(Error::TypeI { norm: c.g_lambda.norm() });
    }
    let particular = c.g_lambda * ((lambda_star + c.c_lambda) / g2);
    Ok(InverseSolution { particular, nullspace: orthogonal_complement(&c.g_lambda) })
}

/// Gram–Schmidt completion of `v` to an orthonormal basis; returns the
/// `D − 1` vectors orthogonal to `v`.
pub fn orthogonal_complement<const D: usize>(v: &SVector<f64, D>) -> Vec<SVector<f64, D>> {
    let mut basis: Vec<SVector<f64, D>> = vec![v.normalize()];
    for i in 0..D {
        let mut e = SVector::<f64, D>::zeros();
        e[i] = 1.0;
        for b in &basis {
            e -= b * b.dot(&e);
        }
        // second pass for numerical orthogonality
        for b in &basis {
            e -= b * b.dot(&e);
        }
        let n = e.norm();
        if n > 1e-6 {
            basis.push(e / n);
        }
        if basis.len() == D {
            break;
        }
    }
    basis.remove(0);
    basis
}

fn type_i_threshold<const D: usize>(c: &SlidingCoefficients<D>) -> f64 {
    DEGENERACY_TOL * c.k_a.norm() * c.f_c.norm() / c.lambda_den.abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degeneracy {
    None,
    /// Anchor motion has no influence on the sliding rate.
    TypeI,
    /// `λ_den` vanishes and the sliding rate is unbounded.
    TypeII,
    /// `λ_den > 0`: further sliding pushes the force out of the cone, so no
    /// quasistatic sliding motion exists.
    Runaway,
}

pub fn check_degeneracy<const D: usize>(c: &SlidingCoefficients<D>) -> Degeneracy {
    if c.lambda_den.abs() < type_ii_threshold(c) {
        Degeneracy::TypeII
    } else if c.g_lambda.norm() < type_i_threshold(c) {
        Degeneracy::TypeI
    } else if c.lambda_den > 0.0 {
        Degeneracy::Runaway
    } else {
        Degeneracy::None
    }
}
