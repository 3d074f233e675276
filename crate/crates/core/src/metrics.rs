//! Evaluation metrics. Inputs are in meters, results in millimeters; joint 0
//! is the root used for alignment.

use nalgebra::{Matrix3, Vector3};

use crate::error::check_len;
use crate::{Error, Result};

pub const MM_PER_M: f64 = 1000.0;

/// Mean per-joint position error after subtracting each set's root joint.
pub fn mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    check_len("predicted joints", gt.len(), pred.len())?;
    if gt.is_empty() {
        return Err(Error::EmptyInput("joint set".into()));
    }
    let shift = gt[0] - pred[0];
    Ok(mean_distance(pred, gt, shift) * MM_PER_M)
}

/// Mean per-vertex error, aligned by the supplied root joints.
pub fn pve(
    pred: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    pred_root: &Vector3<f64>,
    gt_root: &Vector3<f64>,
) -> Result<f64> {
    check_len("predicted vertices", gt.len(), pred.len())?;
    if gt.is_empty() {
        return Err(Error::EmptyInput("vertex set".into()));
    }
    Ok(mean_distance(pred, gt, gt_root - pred_root) * MM_PER_M)
}

fn mean_distance(pred: &[Vector3<f64>], gt: &[Vector3<f64>], shift: Vector3<f64>) -> f64 {
    pred.iter().zip(gt).map(|(p, g)| (p + shift - g).norm()).sum::<f64>() / gt.len() as f64
}

/// Similarity transform `x ↦ s·R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x * self.scale + self.translation
    }
}

/// Least-squares similarity aligning `src` onto `dst` (Umeyama).
pub fn procrustes(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<Similarity> {
    check_len("procrustes source", dst.len(), src.len())?;
    let n = dst.len();
    if n < 3 {
        return Err(Error::DegenerateInput(format!("procrustes needs at least 3 points, got {n}")));
    }
    let inv_n = 1.0 / n as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() * inv_n;
    let mu_d = dst.iter().sum::<Vector3<f64>>() * inv_n;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    let mut var_d = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (a, b) = (s - mu_s, d - mu_d);
        cov += b * a.transpose();
        var_s += a.norm_squared();
        var_d += b.norm_squared();
    }
    cov *= inv_n;
    var_s *= inv_n;
    var_d *= inv_n;
    if var_s < 1e-18 || var_d < 1e-18 {
        return Err(Error::DegenerateInput("point set has no spread".into()));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|a, b| sv[*b].total_cmp(&sv[*a]));
    if sv[order[1]] <= 1e-12 * sv[order[0]] {
        return Err(Error::DegenerateInput("rank-deficient point configuration".into()));
    }
    // Flip the weakest axis if the optimal orthogonal map is a reflection.
    let mut fix = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        fix[(order[2], order[2])] = -1.0;
    }
    let rotation = u * fix * v_t;
    let trace: f64 = (0..3).map(|i| sv[i] * fix[(i, i)]).sum();
    let scale = trace / var_s;
    Ok(Similarity {
        scale,
        rotation,
        translation: mu_d - rotation * mu_s * scale,
    })
}

/// MPJPE after similarity-aligning `pred` onto `gt`.
pub fn pa_mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    let sim = procrustes(pred, gt)?;
    let aligned: Vec<Vector3<f64>> = pred.iter().map(|p| sim.apply(p)).collect();
    Ok(mean_distance(&aligned, gt, Vector3::zeros()) * MM_PER_M)
}

pub fn min_of_n(errors: &[f64]) -> Result<f64> {
    errors
        .iter()
        .copied()
        .reduce(f64::min)
        .ok_or_else(|| Error::EmptyInput("error list".into()))
}
