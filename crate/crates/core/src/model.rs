//! Object geometry, object motion and the task description.
//!
//! The object boundary is a closed chain of line segments and circular arcs
//! traversed counter-clockwise in the body frame, so the object interior is
//! always on the left of the direction of increasing boundary parameter and
//! the inward normal is the left normal of the tangent.

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

/// Tolerance on the distance between consecutive boundary piece endpoints.
pub const CLOSURE_TOL: f64 = 1e-9;

/// Planar cross product `a × b` (the z component).
#[inline]
pub fn cross2(a: &Vec2, b: &Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// `ω × r` for a planar angular velocity `ω` about z.
#[inline]
pub fn omega_cross(omega: f64, r: &Vec2) -> Vec2 {
    Vec2::new(-omega * r.y, omega * r.x)
}

/// Left normal (counter-clockwise rotation by 90°).
#[inline]
pub fn left_normal(v: &Vec2) -> Vec2 {
    Vec2::new(-v.y, v.x)
}

#[inline]
pub fn rotation(angle: f64) -> Mat2 {
    let (s, c) = angle.sin_cos();
    Mat2::new(c, -s, s, c)
}

/// Planar object pose and twist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectPose {
    pub position: Vec2,
    pub angle: f64,
    #[serde(default = "Vec2::zeros")]
    pub velocity: Vec2,
    #[serde(default)]
    pub omega: f64,
}

impl Default for ObjectPose {
    fn default() -> Self {
        Self::stationary(Vec2::zeros(), 0.0)
    }
}

impl ObjectPose {
    pub fn stationary(position: Vec2, angle: f64) -> Self {
        Self {
            position,
            angle,
            velocity: Vec2::zeros(),
            omega: 0.0,
        }
    }

    pub fn rotation(&self) -> Mat2 {
        rotation(self.angle)
    }

    pub fn is_stationary(&self) -> bool {
        self.velocity == Vec2::zeros() && self.omega == 0.0
    }

    pub fn to_world(&self, p_body: &Vec2) -> Vec2 {
        self.position + self.rotation() * p_body
    }

    pub fn to_body(&self, p_world: &Vec2) -> Vec2 {
        self.rotation().transpose() * (p_world - self.position)
    }

    /// Velocity of the material point of the object at `p_body`.
    pub fn point_velocity(&self, p_body: &Vec2) -> Vec2 {
        self.velocity + omega_cross(self.omega, &(self.rotation() * p_body))
    }
}

/// World velocity of a point moving with body-frame velocity `v_body` while
/// located at `p_body`.
pub fn body_to_world_velocity(pose: &ObjectPose, p_body: &Vec2, v_body: &Vec2) -> Vec2 {
    pose.point_velocity(p_body) + pose.rotation() * v_body
}

/// One piece of the object boundary, in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPiece {
    Segment {
        start: Vec2,
        end: Vec2,
    },
    /// Circular arc from `start_angle` through a signed `sweep`. A positive
    /// sweep bends around the object (convex), a negative one is concave.
    Arc {
        center: Vec2,
        radius: f64,
        start_angle: f64,
        sweep: f64,
    },
}

impl BoundaryPiece {
    pub fn length(&self) -> f64 {
        match self {
            BoundaryPiece::Segment { start, end } => (end - start).norm(),
            BoundaryPiece::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    pub fn start_point(&self) -> Vec2 {
        self.evaluate(0.0).position
    }

    pub fn end_point(&self) -> Vec2 {
        self.evaluate(self.length()).position
    }

    /// Local evaluation at arc length `u` from the start of the piece.
    fn evaluate(&self, u: f64) -> LocalPoint {
        match *self {
            BoundaryPiece::Segment { start, end } => {
                let t = (end - start).normalize();
                LocalPoint {
                    position: start + t * u,
                    tangent: t,
                    normal: left_normal(&t),
                    curvature: Mat2::zeros(),
                }
            }
            BoundaryPiece::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                let dir = sweep.signum();
                let phi = start_angle + dir * u / radius;
                let radial = Vec2::new(phi.cos(), phi.sin());
                let tangent = dir * left_normal(&radial);
                // Normal derivative restricted to the tangent plane: -(I - e e^T)/r
                // toward the centre for convex arcs, the opposite for concave ones.
                let proj = Mat2::identity() - radial * radial.transpose();
                LocalPoint {
                    position: center + radial * radius,
                    tangent,
                    normal: left_normal(&tangent),
                    curvature: proj * (-dir / radius),
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            BoundaryPiece::Segment { start, end } => {
                if (end - start).norm() <= CLOSURE_TOL {
                    return Err(Error::Domain("zero-length boundary segment".into()));
                }
            }
            BoundaryPiece::Arc { radius, sweep, .. } => {
                if !(radius > 0.0) {
                    return Err(Error::Domain(format!("arc radius must be > 0, got {radius}")));
                }
                if sweep == 0.0 || !sweep.is_finite() {
                    return Err(Error::Domain("arc sweep must be finite and nonzero".into()));
                }
            }
        }
        Ok(())
    }
}

struct LocalPoint {
    position: Vec2,
    tangent: Vec2,
    normal: Vec2,
    curvature: Mat2,
}

/// Result of a boundary query, all in the body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub s: f64,
    pub piece: usize,
    pub position: Vec2,
    /// Unit tangent in the direction of increasing `s`.
    pub tangent: Vec2,
    /// Unit normal pointing into the object.
    pub normal: Vec2,
    /// `∂n̂/∂p` in the body frame; zero on segments.
    pub curvature: Mat2,
}

/// Closed object boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<BoundaryPiece>", into = "Vec<BoundaryPiece>")]
pub struct Boundary {
    pieces: Vec<BoundaryPiece>,
    offsets: Vec<f64>,
    perimeter: f64,
}

impl TryFrom<Vec<BoundaryPiece>> for Boundary {
    type Error = Error;

    fn try_from(pieces: Vec<BoundaryPiece>) -> Result<Self> {
        Boundary::new(pieces)
    }
}

impl From<Boundary> for Vec<BoundaryPiece> {
    fn from(b: Boundary) -> Self {
        b.pieces
    }
}

impl Boundary {
    pub fn new(pieces: Vec<BoundaryPiece>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::Domain("boundary has no pieces".into()));
        }
        for p in &pieces {
            p.validate()?;
        }
        for (i, p) in pieces.iter().enumerate() {
            let next = &pieces[(i + 1) % pieces.len()];
            let gap = (p.end_point() - next.start_point()).norm();
            if gap > CLOSURE_TOL {
                return Err(Error::Domain(format!(
                    "boundary is not closed: piece {i} ends {gap:e} m from the start of piece {}",
                    (i + 1) % pieces.len()
                )));
            }
        }
        let mut offsets = Vec::with_capacity(pieces.len());
        let mut acc = 0.0;
        for p in &pieces {
            offsets.push(acc);
            acc += p.length();
        }
        Ok(Self {
            pieces,
            offsets,
            perimeter: acc,
        })
    }

    pub fn pieces(&self) -> &[BoundaryPiece] {
        &self.pieces
    }

    pub fn perimeter(&self) -> f64 {
        self.perimeter
    }

    /// Boundary parameter range `[start, end]` covered by a piece.
    pub fn piece_range(&self, piece: usize) -> (f64, f64) {
        let start = self.offsets[piece];
        (start, start + self.pieces[piece].length())
    }

    /// Maps any real parameter onto `[0, perimeter)`.
    pub fn wrap(&self, s: f64) -> f64 {
        s.rem_euclid(self.perimeter)
    }

    /// Position, inward normal and curvature operator at boundary parameter `s`.
    pub fn query(&self, s: f64) -> Result<SurfacePoint> {
        if !(0.0..=self.perimeter).contains(&s) {
            return Err(Error::Domain(format!(
                "boundary parameter {s} outside [0, {}]",
                self.perimeter
            )));
        }
        let piece = match self.offsets.partition_point(|&o| o <= s) {
            0 => 0,
            k => k - 1,
        };
        let u = (s - self.offsets[piece]).min(self.pieces[piece].length());
        let local = self.pieces[piece].evaluate(u);
        Ok(SurfacePoint {
            s,
            piece,
            position: local.position,
            tangent: local.tangent,
            normal: local.normal,
            curvature: local.curvature,
        })
    }

    /// Query on a specific piece, useful at junctions where `query` picks the
    /// following piece.
    pub fn query_on_piece(&self, piece: usize, s: f64) -> Result<SurfacePoint> {
        let (lo, hi) = self.piece_range(piece);
        if s < lo - CLOSURE_TOL || s > hi + CLOSURE_TOL {
            return Err(Error::Domain(format!(
                "boundary parameter {s} outside piece {piece} range [{lo}, {hi}]"
            )));
        }
        let local = self.pieces[piece].evaluate((s - lo).clamp(0.0, hi - lo));
        Ok(SurfacePoint {
            s,
            piece,
            position: local.position,
            tangent: local.tangent,
            normal: local.normal,
            curvature: local.curvature,
        })
    }

    /// Boundary parameter on `piece` whose body-frame height equals `y`.
    /// The piece must be monotone in `y`.
    pub fn parameter_at_height(&self, piece: usize, y: f64) -> Result<f64> {
        let (lo, hi) = self.piece_range(piece);
        let y_lo = self.pieces[piece].evaluate(0.0).position.y;
        let y_hi = self.pieces[piece].evaluate(hi - lo).position.y;
        let (y_min, y_max) = if y_lo < y_hi { (y_lo, y_hi) } else { (y_hi, y_lo) };
        if y < y_min - CLOSURE_TOL || y > y_max + CLOSURE_TOL || (y_max - y_min) < CLOSURE_TOL {
            return Err(Error::geometry(
                "model",
                format!("height {y} not reachable on piece {piece} (spans [{y_min}, {y_max}])"),
            ));
        }
        if let BoundaryPiece::Segment { start, end } = self.pieces[piece] {
            let frac = ((y - start.y) / (end.y - start.y)).clamp(0.0, 1.0);
            return Ok(lo + frac * (hi - lo));
        }
        let increasing = y_hi > y_lo;
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            let ym = self.pieces[piece].evaluate(mid - lo).position.y;
            if (ym < y) == increasing {
                a = mid;
            } else {
                b = mid;
            }
            if b - a < 1e-15 {
                break;
            }
        }
        Ok(0.5 * (a + b))
    }
}

/// Stick/slide mode of an environmental contact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvContactMode {
    Sticking,
    /// The object slides over the environment in `direction` (body frame).
    Sliding { direction: Vec2 },
}

/// Point contact between the object and the stationary environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvContact {
    /// Contact position in the body frame.
    pub position: Vec2,
    /// Unit contact normal into the object, body frame.
    pub normal: Vec2,
    #[serde(default = "default_env_mode")]
    pub mode: EnvContactMode,
}

fn default_env_mode() -> EnvContactMode {
    EnvContactMode::Sticking
}

fn default_cone_edges() -> usize {
    8
}

/// Object geometry, environment and global task parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskModel {
    pub boundary: Boundary,
    pub env_contacts: Vec<EnvContact>,
    /// Finger friction coefficient.
    pub mu: f64,
    /// Environment friction coefficient.
    pub mu_e: f64,
    /// Gravity wrench `[τ_z (N·m), f_x (N), f_y (N)]` in the world frame,
    /// moment not yet scaled.
    pub gravity_wrench: Vector3<f64>,
    pub characteristic_length: f64,
    /// Polyhedral edge count for spatial friction cones.
    #[serde(default = "default_cone_edges")]
    pub cone_edges: usize,
    #[serde(default)]
    pub object_pose: ObjectPose,
}

impl TaskModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0) || !(self.mu_e >= 0.0) {
            return Err(Error::Domain("friction coefficients must be >= 0".into()));
        }
        if !(self.characteristic_length > 0.0) {
            return Err(Error::Domain("characteristic length must be > 0".into()));
        }
        if self.env_contacts.is_empty() {
            return Err(Error::Domain("at least one environmental contact is required".into()));
        }
        for c in &self.env_contacts {
            if (c.normal.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::Domain("environmental contact normal must be a unit vector".into()));
            }
        }
        Ok(())
    }

    /// Boundary query (body frame).
    pub fn surface_query(&self, s: f64) -> Result<SurfacePoint> {
        self.boundary.query(s)
    }

    /// Gravity wrench with the moment divided by the characteristic length.
    pub fn scaled_gravity(&self) -> Vector3<f64> {
        let g = self.gravity_wrench;
        Vector3::new(g[0] / self.characteristic_length, g[1], g[2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn rounded_square(r: f64) -> Boundary {
        let h = 0.1;
        Boundary::new(vec![
            BoundaryPiece::Segment { start: Vec2::new(-h + r, -h), end: Vec2::new(h - r, -h) },
            BoundaryPiece::Arc { center: Vec2::new(h - r, -h + r), radius: r, start_angle: -FRAC_PI_2, sweep: FRAC_PI_2 },
            BoundaryPiece::Segment { start: Vec2::new(h, -h + r), end: Vec2::new(h, h - r) },
            BoundaryPiece::Arc { center: Vec2::new(h - r, h - r), radius: r, start_angle: 0.0, sweep: FRAC_PI_2 },
            BoundaryPiece::Segment { start: Vec2::new(h - r, h), end: Vec2::new(-h + r, h) },
            BoundaryPiece::Arc { center: Vec2::new(-h + r, h - r), radius: r, start_angle: FRAC_PI_2, sweep: FRAC_PI_2 },
            BoundaryPiece::Segment { start: Vec2::new(-h, h - r), end: Vec2::new(-h, -h + r) },
            BoundaryPiece::Arc { center: Vec2::new(-h + r, -h + r), radius: r, start_angle: PI, sweep: FRAC_PI_2 },
        ])
        .unwrap()
    }

    #[test]
    fn left_face_normal_points_right() {
        let b = rounded_square(0.05);
        let (lo, hi) = b.piece_range(6);
        let q = b.query(0.5 * (lo + hi)).unwrap();
        assert_relative_eq!(q.normal, Vec2::new(1.0, 0.0), epsilon = 1e-15);
        assert_eq!(q.curvature, Mat2::zeros());
    }

    #[test]
    fn arc_curvature_norm_is_inverse_radius() {
        let b = rounded_square(0.05);
        let (lo, hi) = b.piece_range(3);
        let q = b.query(0.5 * (lo + hi)).unwrap();
        assert_relative_eq!(q.curvature.norm(), 20.0, epsilon = 1e-12);
        // only one nonzero singular value
        assert_relative_eq!(q.curvature.determinant(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn arc_normal_matches_finite_difference() {
        let b = rounded_square(0.05);
        let (lo, hi) = b.piece_range(1);
        let s = lo + 0.3 * (hi - lo);
        let h = 1e-6;
        let qp = b.query(s + h).unwrap();
        let qm = b.query(s - h).unwrap();
        let q = b.query(s).unwrap();
        let dn_fd = qp.normal - qm.normal;
        let dn = q.curvature * (qp.position - qm.position);
        assert!((dn_fd - dn).norm() < 1e-4 * dn.norm().max(1e-12));
    }

    #[test]
    fn concave_arc_normal_points_away_from_centre() {
        let arc = BoundaryPiece::Arc { center: Vec2::zeros(), radius: 0.5, start_angle: 0.0, sweep: -1.0 };
        let p = arc.evaluate(0.1);
        let radial = (p.position).normalize();
        assert_relative_eq!(p.normal, radial, epsilon = 1e-12);
        assert_relative_eq!(p.curvature * p.tangent, p.tangent * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn tangent_junctions_have_continuous_normals() {
        let b = rounded_square(0.02);
        for i in 0..b.pieces().len() {
            let (_, hi) = b.piece_range(i);
            let before = b.query_on_piece(i, hi).unwrap();
            let next = (i + 1) % b.pieces().len();
            let after = b.query_on_piece(next, b.piece_range(next).0).unwrap();
            assert!((before.normal - after.normal).norm() < 1e-6);
            assert!((before.position - after.position).norm() < 1e-9);
        }
    }

    #[test]
    fn open_boundary_is_rejected() {
        let r = Boundary::new(vec![
            BoundaryPiece::Segment { start: Vec2::new(0.0, 0.0), end: Vec2::new(1.0, 0.0) },
            BoundaryPiece::Segment { start: Vec2::new(1.0, 0.0), end: Vec2::new(0.0, 1.0) },
            BoundaryPiece::Segment { start: Vec2::new(0.0, 1.0), end: Vec2::new(0.0, 1e-6) },
        ]);
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn out_of_range_parameter_is_a_domain_error() {
        let b = rounded_square(0.02);
        assert!(matches!(b.query(-0.1), Err(Error::Domain(_))));
        assert!(matches!(b.query(b.perimeter() + 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn height_lookup_on_segment_and_arc() {
        let b = rounded_square(0.02);
        let s = b.parameter_at_height(6, 0.03).unwrap();
        assert_relative_eq!(b.query(s).unwrap().position.y, 0.03, epsilon = 1e-12);
        let s = b.parameter_at_height(1, -0.09).unwrap();
        assert_relative_eq!(b.query(s).unwrap().position.y, -0.09, epsilon = 1e-12);
        assert!(b.parameter_at_height(6, 0.5).is_err());
    }

    #[test]
    fn velocity_transforms() {
        let pose = ObjectPose { position: Vec2::zeros(), angle: 0.7, velocity: Vec2::zeros(), omega: 0.0 };
        let v = body_to_world_velocity(&pose, &Vec2::new(0.3, 0.1), &Vec2::new(1.0, 0.0));
        assert_relative_eq!(v, pose.rotation() * Vec2::new(1.0, 0.0), epsilon = 1e-15);

        let pose = ObjectPose { position: Vec2::zeros(), angle: 0.0, velocity: Vec2::new(0.1, 0.0), omega: 0.0 };
        let v = body_to_world_velocity(&pose, &Vec2::new(0.3, 0.1), &Vec2::zeros());
        assert_relative_eq!(v, Vec2::new(0.1, 0.0), epsilon = 1e-15);

        let pose = ObjectPose { position: Vec2::zeros(), angle: 0.0, velocity: Vec2::zeros(), omega: 1.0 };
        let v = body_to_world_velocity(&pose, &Vec2::new(0.0, 0.2), &Vec2::zeros());
        assert_relative_eq!(v, Vec2::new(-0.2, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn boundary_json_round_trip_rejects_open_chain() {
        let b = rounded_square(0.02);
        let json = serde_json::to_string(&b).unwrap();
        let back: Boundary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, b);
        let bad = r#"[{"segment":{"start":[0,0],"end":[1,0]}}]"#;
        assert!(serde_json::from_str::<Boundary>(bad).is_err());
    }
}
