//! Training objectives.
//!
//! Conventions: flat vectors (noise, pose, shape) use the mean over entries;
//! joint sets use the mean over joints of the squared Euclidean distance. Every
//! loss comes with its analytic gradient.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::bodymodel::{project, BodyModel, CameraParams};
use crate::error::check_len;
use crate::nnet::SHAPE_DIM;
use crate::rotmath::Representation;
use crate::synthdata::Sample;
use crate::{Error, Result};

/// Weights of the pose-reconstruction terms. The noise-prediction term always
/// has weight one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub w_pose: f64,
    pub w_j3d: f64,
    pub w_j2d: f64,
    pub w_beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_pose: 1.0,
            w_j3d: 1.0,
            w_j2d: 1.0,
            w_beta: 0.1,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        w_pose: 0.0,
        w_j3d: 0.0,
        w_j2d: 0.0,
        w_beta: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("w_pose", self.w_pose),
            ("w_j3d", self.w_j3d),
            ("w_j2d", self.w_j2d),
            ("w_beta", self.w_beta),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::config(format!("weights.{name}"), format!("{w} must be finite and nonnegative")));
            }
        }
        Ok(())
    }

    fn needs_body(&self) -> bool {
        self.w_j3d != 0.0 || self.w_j2d != 0.0
    }
}

/// Mean squared difference over entries.
pub fn diffusion_loss(eps_true: &[f64], eps_pred: &[f64]) -> Result<f64> {
    check_len("predicted noise", eps_true.len(), eps_pred.len())?;
    if eps_true.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = eps_true.iter().zip(eps_pred).map(|(a, b)| (b - a) * (b - a)).sum();
    Ok(sum / eps_true.len() as f64)
}

/// Gradient of [`diffusion_loss`] with respect to `eps_pred`.
pub fn diffusion_loss_grad(eps_true: &[f64], eps_pred: &[f64]) -> Result<Vec<f64>> {
    check_len("predicted noise", eps_true.len(), eps_pred.len())?;
    let scale = 2.0 / eps_true.len().max(1) as f64;
    Ok(eps_true.iter().zip(eps_pred).map(|(a, b)| scale * (b - a)).collect())
}

/// Ground truth a pose estimate is scored against, precomputed once per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct HmrTarget {
    pub repr: Representation,
    /// Pose in `repr`.
    pub theta0: Vec<f64>,
    pub beta: Vec<f64>,
    pub joints3d: Vec<Vector3<f64>>,
    pub keypoints2d: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
}

impl HmrTarget {
    pub fn from_sample(sample: &Sample, model: &BodyModel, repr: Representation) -> Result<Self> {
        let verts = model.mesh(&sample.theta0, &sample.beta)?;
        Ok(HmrTarget {
            repr,
            theta0: Representation::SixD.convert(&sample.theta0, repr)?,
            beta: sample.beta.clone(),
            joints3d: model.joints3d(&verts)?,
            keypoints2d: sample.keypoints2d.clone(),
            visible: sample.occlusion_mask.iter().map(|m| *m != 0).collect(),
        })
    }
}

/// Per-term values, unweighted, plus the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HmrTerms {
    pub pose: f64,
    pub j3d: f64,
    pub j2d: f64,
    pub beta: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmrGrads {
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub cam: [f64; 3],
}

/// Weighted pose-reconstruction loss.
pub fn hmr_loss(
    theta_hat: &[f64],
    beta_hat: &[f64],
    cam_hat: &CameraParams,
    target: &HmrTarget,
    model: &BodyModel,
    w: &LossWeights,
) -> Result<HmrTerms> {
    hmr_eval(theta_hat, beta_hat, cam_hat, target, model, w, false).map(|(t, _)| t)
}

/// [`hmr_loss`] together with its gradient.
pub fn hmr_loss_and_grad(
    theta_hat: &[f64],
    beta_hat: &[f64],
    cam_hat: &CameraParams,
    target: &HmrTarget,
    model: &BodyModel,
    w: &LossWeights,
) -> Result<(HmrTerms, HmrGrads)> {
    let (terms, grads) = hmr_eval(theta_hat, beta_hat, cam_hat, target, model, w, true)?;
    Ok((terms, grads.expect("requested")))
}

fn hmr_eval(
    theta_hat: &[f64],
    beta_hat: &[f64],
    cam_hat: &CameraParams,
    target: &HmrTarget,
    model: &BodyModel,
    w: &LossWeights,
    want_grad: bool,
) -> Result<(HmrTerms, Option<HmrGrads>)> {
    let k = model.num_joints();
    let repr = target.repr;
    check_len("predicted pose", target.theta0.len(), theta_hat.len())?;
    check_len("predicted shape", SHAPE_DIM, beta_hat.len())?;
    check_len("target joints", k, target.joints3d.len())?;
    check_len("target keypoints", k, target.keypoints2d.len())?;
    check_len("visibility mask", k, target.visible.len())?;

    let mut terms = HmrTerms::default();
    let mut d_theta = vec![0.0; theta_hat.len()];
    let mut d_beta = vec![0.0; SHAPE_DIM];
    let mut d_cam = [0.0; 3];

    let d = theta_hat.len().max(1) as f64;
    for (i, (p, q)) in theta_hat.iter().zip(&target.theta0).enumerate() {
        terms.pose += (p - q) * (p - q) / d;
        d_theta[i] = w.w_pose * 2.0 * (p - q) / d;
    }
    for (i, (p, q)) in beta_hat.iter().zip(&target.beta).enumerate() {
        terms.beta += (p - q) * (p - q) / SHAPE_DIM as f64;
        d_beta[i] = w.w_beta * 2.0 * (p - q) / SHAPE_DIM as f64;
    }

    if w.needs_body() {
        let rots = repr.decode_pose(theta_hat)?;
        let posed = model.pose(&rots, beta_hat)?;
        let joints = model.joints3d(&posed.vertices)?;
        let mut d_joints = vec![Vector3::zeros(); k];

        for (j, (p, q)) in joints.iter().zip(&target.joints3d).enumerate() {
            let diff = p - q;
            terms.j3d += diff.norm_squared() / k as f64;
            d_joints[j] += diff * (w.w_j3d * 2.0 / k as f64);
        }

        let n_vis = target.visible.iter().filter(|v| **v).count();
        if n_vis > 0 {
            let proj = project(&joints, cam_hat);
            let scale = 2.0 * w.w_j2d / n_vis as f64;
            for j in (0..k).filter(|j| target.visible[*j]) {
                let dx = proj[j][0] - target.keypoints2d[j][0];
                let dy = proj[j][1] - target.keypoints2d[j][1];
                terms.j2d += (dx * dx + dy * dy) / n_vis as f64;
                let (gx, gy) = (scale * dx, scale * dy);
                d_cam[0] += gx * joints[j].x + gy * joints[j].y;
                d_cam[1] += gx;
                d_cam[2] += gy;
                d_joints[j].x += cam_hat.scale * gx;
                d_joints[j].y += cam_hat.scale * gy;
            }
        }

        if want_grad {
            let d_verts = model.joints3d_backward(&d_joints);
            let body = model.pose_backward(&posed, &d_verts);
            let dpj = repr.dims_per_joint();
            for (j, g) in body.rotations.iter().enumerate() {
                if *g == Matrix3::zeros() {
                    continue;
                }
                let chunk = &theta_hat[j * dpj..(j + 1) * dpj];
                let mut out = vec![0.0; dpj];
                repr.backward(chunk, g, &mut out);
                for (a, b) in d_theta[j * dpj..].iter_mut().zip(&out) {
                    *a += b;
                }
            }
            for (a, b) in d_beta.iter_mut().zip(&body.shape) {
                *a += b;
            }
        }
    }

    terms.total = w.w_pose * terms.pose + w.w_j3d * terms.j3d + w.w_j2d * terms.j2d + w.w_beta * terms.beta;
    let grads = want_grad.then_some(HmrGrads {
        theta: d_theta,
        beta: d_beta,
        cam: d_cam,
    });
    Ok((terms, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bodymodel::build_default_model;
    use crate::rng::normal_vec;
    use crate::synthdata::{generate, DatasetConfig};
    use rand::SeedableRng;

    fn setup() -> (BodyModel, Sample) {
        let model = build_default_model(0);
        let cfg = DatasetConfig {
            n_samples: 4,
            occlusion_rate: 0.3,
            seed: 5,
            ..DatasetConfig::default()
        };
        let ds = generate(&cfg, &model).unwrap();
        (model, ds.samples[0].clone())
    }

    #[test]
    fn diffusion_loss_cases() {
        let a = vec![0.5, -1.0, 2.0];
        assert_eq!(diffusion_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(diffusion_loss(&[0.0; 7], &[1.0; 7]).unwrap(), 1.0);
        assert!(diffusion_loss(&a, &a[..2]).is_err());
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let (model, s) = setup();
        let target = HmrTarget::from_sample(&s, &model, Representation::SixD).unwrap();
        let t = hmr_loss(&s.theta0, &s.beta, &s.cam, &target, &model, &LossWeights::default()).unwrap();
        assert!(t.total < 1e-10, "{t:?}");
    }

    #[test]
    fn zero_weights_give_zero() {
        let (model, s) = setup();
        let target = HmrTarget::from_sample(&s, &model, Representation::SixD).unwrap();
        let mut rng = crate::rng::StreamRng::seed_from_u64(1);
        let theta = normal_vec(&mut rng, s.theta0.len());
        let t = hmr_loss(&theta, &s.beta, &s.cam, &target, &model, &LossWeights::ZERO).unwrap();
        assert_eq!(t.total, 0.0);
    }

    #[test]
    fn shifted_keypoints_give_quarter() {
        let (model, s) = setup();
        let mut target = HmrTarget::from_sample(&s, &model, Representation::SixD).unwrap();
        // Noise-free reference, then every keypoint moved by (−0.3, −0.4).
        target.keypoints2d = project(&target.joints3d, &s.cam)
            .into_iter()
            .map(|p| [p[0] - 0.3, p[1] - 0.4])
            .collect();
        let w = LossWeights {
            w_j2d: 1.0,
            ..LossWeights::ZERO
        };
        let t = hmr_loss(&s.theta0, &s.beta, &s.cam, &target, &model, &w).unwrap();
        assert!((t.total - 0.25).abs() < 1e-9, "{}", t.total);
    }

    #[test]
    fn hidden_keypoints_do_not_count() {
        let (model, s) = setup();
        let mut target = HmrTarget::from_sample(&s, &model, Representation::SixD).unwrap();
        target.visible[3] = false;
        target.keypoints2d[3] = [100.0, -100.0];
        let t = hmr_loss(&s.theta0, &s.beta, &s.cam, &target, &model, &LossWeights::default()).unwrap();
        assert!(t.total < 1e-10);
    }

    fn directional_check(repr: Representation) {
        let (model, s) = setup();
        let target = HmrTarget::from_sample(&s, &model, repr).unwrap();
        let mut rng = crate::rng::StreamRng::seed_from_u64(9);
        let theta: Vec<f64> = target
            .theta0
            .iter()
            .zip(normal_vec(&mut rng, target.theta0.len()))
            .map(|(a, n)| a + 0.2 * n)
            .collect();
        let beta: Vec<f64> = normal_vec(&mut rng, SHAPE_DIM);
        let cam = CameraParams {
            scale: 0.9,
            translation: [0.05, -0.02],
        };
        let w = LossWeights::default();
        let (_, g) = hmr_loss_and_grad(&theta, &beta, &cam, &target, &model, &w).unwrap();
        let dt = normal_vec(&mut rng, theta.len());
        let db = normal_vec(&mut rng, SHAPE_DIM);
        let dc = normal_vec(&mut rng, 3);
        let eval = |h: f64| {
            let th: Vec<f64> = theta.iter().zip(&dt).map(|(a, d)| a + h * d).collect();
            let be: Vec<f64> = beta.iter().zip(&db).map(|(a, d)| a + h * d).collect();
            let c = CameraParams {
                scale: cam.scale + h * dc[0],
                translation: [cam.translation[0] + h * dc[1], cam.translation[1] + h * dc[2]],
            };
            hmr_loss(&th, &be, &c, &target, &model, &w).unwrap().total
        };
        let h = 1e-5;
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let an: f64 = g.theta.iter().zip(&dt).map(|(a, b)| a * b).sum::<f64>()
            + g.beta.iter().zip(&db).map(|(a, b)| a * b).sum::<f64>()
            + g.cam.iter().zip(&dc).map(|(a, b)| a * b).sum::<f64>();
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
        assert!(rel < 1e-3, "{repr:?}: fd {fd} analytic {an}");
    }

    #[test]
    fn gradient_matches_finite_differences_sixd() {
        directional_check(Representation::SixD);
    }

    #[test]
    fn gradient_matches_finite_differences_axis_angle() {
        directional_check(Representation::AxisAngle);
    }
}
