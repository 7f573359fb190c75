//! Finger spring models and contact force classification.

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Mat2, Vec2};

/// Relative tolerance used by [`contact_mode`] unless overridden.
pub const MODE_TOL: f64 = 1e-6;
/// Step for finite-difference stiffness derivatives.
pub const FD_STEP: f64 = 1e-6;

/// A configuration-dependent stiffness `K(p_f, σ)`.
pub trait StiffnessField: Send + Sync + Debug {
    fn stiffness(&self, fingertip: &Vec2, sigma: &[f64]) -> Mat2;
}

/// Closed-chain torque-controlled two-link finger whose base is the anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoLinkFinger {
    pub links: [f64; 2],
    pub torques: [f64; 2],
    /// Elbow branch used for inverse kinematics: `+1` for θ2 in (0, π).
    #[serde(default = "one")]
    pub elbow: f64,
}

fn one() -> f64 {
    1.0
}

impl TwoLinkFinger {
    pub fn new(links: [f64; 2], torques: [f64; 2]) -> Self {
        Self { links, torques, elbow: 1.0 }
    }

    pub fn forward(&self, theta: [f64; 2]) -> Vec2 {
        let [l1, l2] = self.links;
        let (s1, c1) = theta[0].sin_cos();
        let (s12, c12) = (theta[0] + theta[1]).sin_cos();
        Vec2::new(l1 * c1 + l2 * c12, l1 * s1 + l2 * s12)
    }

    /// Joint angles placing the fingertip at `rel` relative to the base.
    pub fn inverse(&self, rel: &Vec2) -> Result<[f64; 2]> {
        let [l1, l2] = self.links;
        let c2 = (rel.norm_squared() - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
        if !(-1.0..=1.0).contains(&c2) {
            return Err(Error::geometry(
                "finger",
                format!("fingertip at distance {} is outside the two-link workspace", rel.norm()),
            ));
        }
        let t2 = self.elbow.signum() * c2.acos();
        let t1 = rel.y.atan2(rel.x) - (l2 * t2.sin()).atan2(l1 + l2 * t2.cos());
        Ok([t1, t2])
    }

    /// Fingertip force `J⁻ᵀτ` applied to the object.
    pub fn force_at(&self, theta: [f64; 2]) -> Result<Vec2> {
        let jt_inv = jacobian_2r(theta, self.links)
            .transpose()
            .try_inverse()
            .ok_or_else(|| Error::singular("finger", "two-link Jacobian is singular (θ2 = 0 or π)"))?;
        Ok(jt_inv * Vec2::from(self.torques))
    }
}

fn jacobian_2r(theta: [f64; 2], links: [f64; 2]) -> Mat2 {
    let [l1, l2] = links;
    let (s1, c1) = theta[0].sin_cos();
    let (s12, c12) = (theta[0] + theta[1]).sin_cos();
    Mat2::new(-l1 * s1 - l2 * s12, -l2 * s12, l1 * c1 + l2 * c12, l2 * c12)
}

/// Stiffness `K = −∂f/∂p_f` of a torque-controlled 2R finger.
///
/// `torque_gradient` is `∂τ/∂θ`; pass `None` for constant joint torques.
pub fn stiffness_2r(
    theta1: f64,
    theta2: f64,
    torques: [f64; 2],
    links: [f64; 2],
    torque_gradient: Option<Mat2>,
) -> Result<Mat2> {
    let theta = [theta1, theta2];
    let j = jacobian_2r(theta, links);
    let j_inv = j
        .try_inverse()
        .filter(|_| theta2.sin().abs() > 1e-12)
        .ok_or_else(|| Error::singular("finger", format!("two-link Jacobian is singular at θ2 = {theta2}")))?;
    let j_inv_t = j_inv.transpose();
    let [l1, l2] = links;
    let (s1, c1) = theta1.sin_cos();
    let (s12, c12) = (theta1 + theta2).sin_cos();
    let dj = [
        Mat2::new(-l1 * c1 - l2 * c12, -l2 * c12, -l1 * s1 - l2 * s12, -l2 * s12),
        Mat2::new(-l2 * c12, -l2 * c12, -l2 * s12, -l2 * s12),
    ];
    let tau = Vec2::from(torques);
    // ∂(J⁻ᵀ)/∂θ_k = −J⁻ᵀ (∂J/∂θ_k)ᵀ J⁻ᵀ
    let mut df_dtheta = Mat2::zeros();
    for k in 0..2 {
        let col = -j_inv_t * dj[k].transpose() * j_inv_t * tau;
        df_dtheta.set_column(k, &col);
    }
    if let Some(g) = torque_gradient {
        df_dtheta += j_inv_t * g;
    }
    Ok(-df_dtheta * j_inv)
}

/// Closed-form eigenvalues of the unit-link, unit-torque 2R stiffness,
/// smallest first.
pub fn stiffness_2r_eigenvalues(theta2: f64) -> Result<(f64, f64)> {
    let s = theta2.sin();
    if s.abs() < 1e-12 {
        return Err(Error::singular("finger", format!("two-link Jacobian is singular at θ2 = {theta2}")));
    }
    let c = theta2.cos();
    let root = (1.0 + (3.0 * theta2).cos() + c + c * c).max(0.0).sqrt();
    let half_csc3 = 0.5 / (s * s * s);
    Ok((half_csc3 * (1.0 + c - root), half_csc3 * (1.0 + c + root)))
}

/// Eigenvalues of the symmetric part of a 2×2 matrix, smallest first.
pub fn symmetric_eigenvalues(k: &Mat2) -> (f64, f64) {
    let a = k[(0, 0)];
    let d = k[(1, 1)];
    let b = 0.5 * (k[(0, 1)] + k[(1, 0)]);
    let mean = 0.5 * (a + d);
    let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    (mean - r, mean + r)
}

/// Positive definiteness of the symmetric part, with a relative tolerance so
/// that eigenvalues at round-off level count as zero.
pub fn is_positive_definite(k: &Mat2) -> bool {
    let (lo, hi) = symmetric_eigenvalues(k);
    lo > 1e-9 * hi.abs().max(f64::MIN_POSITIVE)
}

/// How a finger's contact force depends on configuration.
#[derive(Debug, Clone)]
pub enum StiffnessModel {
    Constant(Mat2),
    Field {
        field: Arc<dyn StiffnessField>,
        sigma: Vec<f64>,
        sigma_rate: Vec<f64>,
    },
    TwoLink(TwoLinkFinger),
}

impl PartialEq for StiffnessModel {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Self::Constant(a), Self::Constant(b)) => a == b,
            (Self::TwoLink(a), Self::TwoLink(b)) => a == b,
            (
                Self::Field { field: f1, sigma: s1, sigma_rate: r1 },
                Self::Field { field: f2, sigma: s2, sigma_rate: r2 },
            ) => Arc::ptr_eq(f1, f2) && s1 == s2 && r1 == r2,
            _ => false,
        }
    }
}

impl StiffnessModel {
    /// Constant stiffness. Asymmetric matrices are rejected; a matrix that is
    /// not positive definite is accepted, see [`StiffnessModel::warnings`].
    pub fn constant(k: Mat2) -> Result<Self> {
        if (k - k.transpose()).norm() > 1e-9 * k.norm() {
            return Err(Error::Domain("stiffness matrix must be symmetric".into()));
        }
        Ok(Self::Constant(k))
    }

    pub fn diagonal(kx: f64, ky: f64) -> Self {
        Self::Constant(Mat2::new(kx, 0.0, 0.0, ky))
    }

    /// Non-fatal problems with the model at the given configuration.
    pub fn warnings(&self, anchor: &Vec2, fingertip: &Vec2) -> Vec<String> {
        let k = match self.stiffness_at(anchor, fingertip) {
            Ok(k) => k,
            Err(e) => return vec![e.to_string()],
        };
        if is_positive_definite(&k) {
            Vec::new()
        } else {
            let (lo, hi) = symmetric_eigenvalues(&k);
            vec![format!("finger: stiffness is not positive definite (eigenvalues {lo:e}, {hi:e})")]
        }
    }

    /// Local stiffness `K` at the given configuration.
    pub fn stiffness_at(&self, anchor: &Vec2, fingertip: &Vec2) -> Result<Mat2> {
        match self {
            Self::Constant(k) => Ok(*k),
            Self::Field { field, sigma, .. } => Ok(field.stiffness(fingertip, sigma)),
            Self::TwoLink(f) => {
                let [t1, t2] = f.inverse(&(fingertip - anchor))?;
                stiffness_2r(t1, t2, f.torques, f.links, None)
            }
        }
    }
}

/// Force Jacobians used by the sliding mechanics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceJacobians {
    /// `K_t = −∂f/∂p_f`.
    pub k_t: Mat2,
    /// `K_a = ∂f/∂p_a`.
    pub k_a: Mat2,
    /// `−(∂K/∂σ · σ̇) d`, the force rate from stiffness parameters.
    pub drift: Vec2,
}

/// One finger in contact with the object.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerState {
    pub anchor: Vec2,
    /// World-frame fingertip position.
    pub fingertip: Vec2,
    pub rest_offset: Vec2,
    pub stiffness: StiffnessModel,
    /// Boundary parameter of the contact on the object.
    pub s: f64,
}

impl FingerState {
    pub fn compression(&self) -> Vec2 {
        self.fingertip - self.anchor - self.rest_offset
    }

    /// Force the finger applies to the object.
    pub fn force(&self) -> Result<Vec2> {
        match &self.stiffness {
            StiffnessModel::Constant(k) => Ok(-k * self.compression()),
            StiffnessModel::Field { field, sigma, .. } => {
                Ok(-field.stiffness(&self.fingertip, sigma) * self.compression())
            }
            StiffnessModel::TwoLink(f) => f.force_at(f.inverse(&(self.fingertip - self.anchor))?),
        }
    }

    pub fn jacobians(&self) -> Result<ForceJacobians> {
        match &self.stiffness {
            StiffnessModel::Constant(k) => Ok(ForceJacobians { k_t: *k, k_a: *k, drift: Vec2::zeros() }),
            StiffnessModel::Field { field, sigma, sigma_rate } => {
                let d = self.compression();
                let k = field.stiffness(&self.fingertip, sigma);
                let mut k_t = k;
                for j in 0..2 {
                    let mut e = Vec2::zeros();
                    e[j] = FD_STEP;
                    let dk = (field.stiffness(&(self.fingertip + e), sigma)
                        - field.stiffness(&(self.fingertip - e), sigma))
                        / (2.0 * FD_STEP);
                    let col = k_t.column(j) + dk * d;
                    k_t.set_column(j, &col);
                }
                let drift = if sigma_rate.iter().all(|&r| r == 0.0) {
                    Vec2::zeros()
                } else {
                    let plus: Vec<f64> = sigma.iter().zip(sigma_rate).map(|(s, r)| s + FD_STEP * r).collect();
                    let minus: Vec<f64> = sigma.iter().zip(sigma_rate).map(|(s, r)| s - FD_STEP * r).collect();
                    let dk = (field.stiffness(&self.fingertip, &plus) - field.stiffness(&self.fingertip, &minus))
                        / (2.0 * FD_STEP);
                    -(dk * d)
                };
                Ok(ForceJacobians { k_t, k_a: k, drift })
            }
            StiffnessModel::TwoLink(_) => {
                let k = self.stiffness.stiffness_at(&self.anchor, &self.fingertip)?;
                // the force depends on p_f − p_a only
                Ok(ForceJacobians { k_t: k, k_a: k, drift: Vec2::zeros() })
            }
        }
    }
}

/// Spring force of a finger, `f_c = −K(p_f − p_a − d_0)` for spring models.
pub fn contact_force(finger: &FingerState) -> Result<Vec2> {
    finger.force()
}

/// A contact force split along the contact normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactForce {
    pub f_c: Vec2,
    pub f_n: Vec2,
    pub f_t: Vec2,
    pub normal: Vec2,
}

impl ContactForce {
    /// Signed normal magnitude `f_c·n̂`.
    pub fn normal_magnitude(&self) -> f64 {
        self.f_c.dot(&self.normal)
    }

    /// Signed distance to the cone boundary, `‖f_t‖ − μ f_c·n̂`; negative inside.
    pub fn cone_margin(&self, mu: f64) -> f64 {
        self.f_t.norm() - mu * self.normal_magnitude()
    }
}

/// Splits `f_c` into normal and tangential components.
pub fn decompose(f_c: &Vec2, normal: &Vec2) -> Result<ContactForce> {
    if (normal.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("contact normal must be a unit vector (norm {})", normal.norm())));
    }
    let f_n = normal * f_c.dot(normal);
    Ok(ContactForce { f_c: *f_c, f_n, f_t: f_c - f_n, normal: *normal })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConeMode {
    Separated,
    SticksInterior,
    OnConeBoundary,
    OutsideCone,
}

pub fn contact_mode(cf: &ContactForce, mu: f64, tol: f64) -> ConeMode {
    if cf.normal_magnitude() <= 0.0 {
        return ConeMode::Separated;
    }
    let ft = cf.f_t.norm();
    let limit = mu * cf.f_n.norm();
    if (ft - limit).abs() <= tol * limit {
        ConeMode::OnConeBoundary
    } else if ft < limit * (1.0 - tol) {
        ConeMode::SticksInterior
    } else {
        ConeMode::OutsideCone
    }
}

/// Serialized finger stiffness: a 2×2 row-major matrix or a 2R model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StiffnessSpec {
    Matrix([[f64; 2]; 2]),
    Model {
        model: String,
        torques: [f64; 2],
        links: [f64; 2],
        #[serde(default = "one")]
        elbow: f64,
    },
}

impl TryFrom<StiffnessSpec> for StiffnessModel {
    type Error = Error;

    fn try_from(spec: StiffnessSpec) -> Result<Self> {
        match spec {
            StiffnessSpec::Matrix(m) => StiffnessModel::constant(Mat2::new(m[0][0], m[0][1], m[1][0], m[1][1])),
            StiffnessSpec::Model { model, torques, links, elbow } => {
                if model != "2r" {
                    return Err(Error::Parse(format!("unknown stiffness model {model:?}")));
                }
                if links.iter().any(|&l| !(l > 0.0)) {
                    return Err(Error::Domain("link lengths must be > 0".into()));
                }
                Ok(StiffnessModel::TwoLink(TwoLinkFinger { links, torques, elbow }))
            }
        }
    }
}

impl TryFrom<&StiffnessModel> for StiffnessSpec {
    type Error = Error;

    fn try_from(m: &StiffnessModel) -> Result<Self> {
        match m {
            StiffnessModel::Constant(k) => Ok(StiffnessSpec::Matrix([[k[(0, 0)], k[(0, 1)]], [k[(1, 0)], k[(1, 1)]]])),
            StiffnessModel::TwoLink(f) => Ok(StiffnessSpec::Model {
                model: "2r".into(),
                torques: f.torques,
                links: f.links,
                elbow: f.elbow,
            }),
            StiffnessModel::Field { .. } => Err(Error::Parse("stiffness fields cannot be serialized".into())),
        }
    }
}
