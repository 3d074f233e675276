//! Rotation representations and the maps between them.
//!
//! The diffused pose lives in the unconstrained 6D space: two 3-vectors that
//! Gram–Schmidt turns into the first two columns of a rotation matrix. Axis-angle
//! is kept as the alternative representation for comparison runs.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Column norms at or below this are rejected by [`sixd_to_rotmat`].
pub const DEGENERACY_EPS: f64 = 1e-8;

/// Below this angle Rodrigues switches to Taylor-expanded coefficients.
const SMALL_ANGLE: f64 = 1e-4;

/// Two unnormalized matrix columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6D {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
}

impl Rot6D {
    pub fn new(a: Vector3<f64>, b: Vector3<f64>) -> Self {
        Rot6D { a, b }
    }

    /// Reads `(a.x, a.y, a.z, b.x, b.y, b.z)`.
    pub fn from_slice(s: &[f64]) -> Self {
        Rot6D {
            a: Vector3::new(s[0], s[1], s[2]),
            b: Vector3::new(s[3], s[4], s[5]),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.a.x, self.a.y, self.a.z, self.b.x, self.b.y, self.b.z]
    }

    pub fn identity() -> Self {
        Rot6D::new(Vector3::x(), Vector3::y())
    }
}

/// A proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotMat(pub Matrix3<f64>);

impl RotMat {
    pub fn identity() -> Self {
        RotMat(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// ∞-norm of `RᵀR − I`.
    pub fn orthogonality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).amax()
    }

    pub fn det(&self) -> f64 {
        self.0.determinant()
    }

    pub fn about_z(angle: f64) -> Self {
        axisangle_to_rotmat(&AxisAngle(Vector3::new(0.0, 0.0, angle)))
    }
}

/// Rotation vector: direction is the axis, norm is the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle(pub Vector3<f64>);

impl AxisAngle {
    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    /// Maps the angle into `[0, π]`, flipping the axis when needed.
    pub fn canonicalize(&self) -> AxisAngle {
        let angle = self.0.norm();
        if angle == 0.0 || !angle.is_finite() {
            return *self;
        }
        let axis = self.0 / angle;
        let mut wrapped = angle.rem_euclid(2.0 * std::f64::consts::PI);
        let mut axis = axis;
        if wrapped > std::f64::consts::PI {
            wrapped = 2.0 * std::f64::consts::PI - wrapped;
            axis = -axis;
        }
        AxisAngle(axis * wrapped)
    }
}

/// Gram–Schmidt map from 6D to a rotation matrix.
pub fn sixd_to_rotmat(r: &Rot6D) -> Result<RotMat> {
    let na = r.a.norm();
    if !(na > DEGENERACY_EPS) {
        return Err(Error::DegenerateInput(format!(
            "6D first column norm {na:e} <= {DEGENERACY_EPS:e}"
        )));
    }
    let a1 = r.a / na;
    let u = r.b - a1 * a1.dot(&r.b);
    let nu = u.norm();
    if !(nu > DEGENERACY_EPS) {
        return Err(Error::DegenerateInput(format!(
            "6D second column norm after orthogonalization {nu:e} <= {DEGENERACY_EPS:e}"
        )));
    }
    let b1 = u / nu;
    let c = a1.cross(&b1);
    Ok(RotMat(Matrix3::from_columns(&[a1, b1, c])))
}

/// Pulls a gradient with respect to the output matrix back through
/// [`sixd_to_rotmat`]. Returns the gradient in `(a, b)` order.
pub fn sixd_to_rotmat_backward(r: &Rot6D, grad: &Matrix3<f64>) -> [f64; 6] {
    let na = r.a.norm();
    let a1 = r.a / na;
    let ab = a1.dot(&r.b);
    let u = r.b - a1 * ab;
    let nu = u.norm();
    let b1 = u / nu;

    let g_a1_direct: Vector3<f64> = grad.column(0).into();
    let g_b1_direct: Vector3<f64> = grad.column(1).into();
    let g_c: Vector3<f64> = grad.column(2).into();

    // c = a1 × b1
    let mut g_a1 = g_a1_direct + b1.cross(&g_c);
    let g_b1 = g_b1_direct + g_c.cross(&a1);

    // b1 = u / |u|
    let g_u = (g_b1 - b1 * b1.dot(&g_b1)) / nu;

    // u = b - (a1·b) a1
    let g_b = g_u - a1 * a1.dot(&g_u);
    g_a1 -= g_u * ab + r.b * a1.dot(&g_u);

    // a1 = a / |a|
    let g_a = (g_a1 - a1 * a1.dot(&g_a1)) / na;
    [g_a.x, g_a.y, g_a.z, g_b.x, g_b.y, g_b.z]
}

/// First two columns.
pub fn rotmat_to_sixd(m: &RotMat) -> Rot6D {
    Rot6D::new(m.0.column(0).into(), m.0.column(1).into())
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// `(A, B)` in `R = I + A K + B K²`, plus `(A'/θ, B'/θ)` for the backward pass.
fn rodrigues_coefficients(theta: f64) -> (f64, f64, f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (
            1.0 - t2 / 6.0,
            0.5 - t2 / 24.0,
            -1.0 / 3.0 + t2 / 30.0,
            -1.0 / 12.0 + t2 / 180.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        (
            s / theta,
            (1.0 - c) / t2,
            (theta * c - s) / (t2 * theta),
            (theta * s - 2.0 * (1.0 - c)) / (t2 * t2),
        )
    }
}

/// Rodrigues formula.
pub fn axisangle_to_rotmat(v: &AxisAngle) -> RotMat {
    let theta = v.0.norm();
    let (a, b, _, _) = rodrigues_coefficients(theta);
    let k = skew(&v.0);
    RotMat(Matrix3::identity() + k * a + k * k * b)
}

/// Gradient of `<grad, R(v)>` with respect to the rotation vector.
pub fn axisangle_to_rotmat_backward(v: &AxisAngle, grad: &Matrix3<f64>) -> Vector3<f64> {
    let theta = v.0.norm();
    let (a, b, da, db) = rodrigues_coefficients(theta);
    let k = skew(&v.0);
    let k2 = k * k;
    let mut out = Vector3::zeros();
    for i in 0..3 {
        let ki = skew(&Vector3::ith(i, 1.0));
        let d = k * (da * v.0[i]) + ki * a + k2 * (db * v.0[i]) + (ki * k + k * ki) * b;
        out[i] = grad.component_mul(&d).sum();
    }
    out
}

/// Logarithm map, canonical angle in `[0, π]`.
pub fn rotmat_to_axisangle(m: &RotMat) -> AxisAngle {
    let r = &m.0;
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let w = vee(&(r - r.transpose())) * 0.5; // sin(θ)·n
    let sin = w.norm();
    let theta = sin.atan2(cos);
    if theta < 1e-12 {
        return AxisAngle(w);
    }
    if theta < 2.5 {
        return AxisAngle(w * (theta / sin));
    }
    // Near π the antisymmetric part vanishes; read the axis off nnᵀ instead.
    let nnt = (r + r.transpose() - Matrix3::identity() * (2.0 * cos)) / (2.0 * (1.0 - cos));
    let mut best = 0;
    for i in 1..3 {
        if nnt[(i, i)] > nnt[(best, best)] {
            best = i;
        }
    }
    let mut n: Vector3<f64> = nnt.column(best).into();
    n /= n.norm();
    if n.dot(&w) < 0.0 {
        n = -n;
    }
    AxisAngle(n * theta)
}

/// Angle of `m1ᵀ m2`, in `[0, π]`.
pub fn geodesic_distance(m1: &RotMat, m2: &RotMat) -> f64 {
    let rel = m1.0.transpose() * m2.0;
    let cos = (rel.trace() - 1.0) * 0.5;
    let sin = vee(&(rel - rel.transpose())).norm() * 0.5;
    sin.atan2(cos)
}

/// `Rz(z) · Ry(y) · Rx(x)`.
pub fn euler_to_rotmat(x: f64, y: f64, z: f64) -> RotMat {
    let rx = axisangle_to_rotmat(&AxisAngle(Vector3::new(x, 0.0, 0.0)));
    let ry = axisangle_to_rotmat(&AxisAngle(Vector3::new(0.0, y, 0.0)));
    let rz = axisangle_to_rotmat(&AxisAngle(Vector3::new(0.0, 0.0, z)));
    RotMat(rz.0 * ry.0 * rx.0)
}

/// How joint rotations are laid out in a pose vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    #[default]
    SixD,
    AxisAngle,
}

impl Representation {
    pub fn dims_per_joint(self) -> usize {
        match self {
            Representation::SixD => 6,
            Representation::AxisAngle => 3,
        }
    }

    pub fn pose_dim(self, joints: usize) -> usize {
        self.dims_per_joint() * joints
    }

    pub fn encode(self, m: &RotMat) -> Vec<f64> {
        match self {
            Representation::SixD => rotmat_to_sixd(m).to_array().to_vec(),
            Representation::AxisAngle => {
                let v = rotmat_to_axisangle(m).0;
                vec![v.x, v.y, v.z]
            }
        }
    }

    pub fn decode(self, chunk: &[f64]) -> Result<RotMat> {
        match self {
            Representation::SixD => sixd_to_rotmat(&Rot6D::from_slice(chunk)),
            Representation::AxisAngle => Ok(axisangle_to_rotmat(&AxisAngle(Vector3::new(
                chunk[0], chunk[1], chunk[2],
            )))),
        }
    }

    /// Gradient with respect to one joint's chunk given `dL/dR`.
    pub fn backward(self, chunk: &[f64], grad: &Matrix3<f64>, out: &mut [f64]) {
        match self {
            Representation::SixD => {
                out.copy_from_slice(&sixd_to_rotmat_backward(&Rot6D::from_slice(chunk), grad))
            }
            Representation::AxisAngle => {
                let g = axisangle_to_rotmat_backward(
                    &AxisAngle(Vector3::new(chunk[0], chunk[1], chunk[2])),
                    grad,
                );
                out.copy_from_slice(g.as_slice());
            }
        }
    }

    /// Decodes a whole pose vector into per-joint matrices.
    pub fn decode_pose(self, pose: &[f64]) -> Result<Vec<RotMat>> {
        let d = self.dims_per_joint();
        if !pose.len().is_multiple_of(d) {
            return Err(Error::dim("pose vector", pose.len().div_ceil(d) * d, pose.len()));
        }
        pose.chunks(d).map(|c| self.decode(c)).collect()
    }

    pub fn encode_pose(self, rots: &[RotMat]) -> Vec<f64> {
        rots.iter().flat_map(|r| self.encode(r)).collect()
    }

    /// Converts a pose vector between representations.
    pub fn convert(self, pose: &[f64], to: Representation) -> Result<Vec<f64>> {
        if self == to {
            return Ok(pose.to_vec());
        }
        Ok(to.encode_pose(&self.decode_pose(pose)?))
    }
}
