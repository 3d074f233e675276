//! Min-of-n evaluation: several sampled hypotheses per input, each scored,
//! the best of the first n kept.

use std::fmt;

use nalgebra::Vector3;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Checkpoint;
use crate::bodymodel::{project, BodyModel, CameraParams};
use crate::diffusion::sample_many;
use crate::metrics::{min_of_n, mpjpe, pa_mpjpe, pve};
use crate::nnet::Networks;
use crate::rng::derive_seed;
use crate::rotmath::Representation;
use crate::schedule::NoiseSchedule;
use crate::synthdata::{Dataset, Sample};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_list: Vec<usize>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_list: vec![1, 5, 10, 25],
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return Err(Error::config("n_list", "needs at least one entry, all positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subset {
    Full,
    /// Samples with at least one hidden keypoint.
    Occluded,
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::Full => "full",
            Subset::Occluded => "occluded",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub n: usize,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub pve: f64,
    pub subset: Subset,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
}

impl EvalTable {
    pub fn row(&self, n: usize, subset: Subset) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.n == n && r.subset == subset)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,MPJPE_mm,PA-MPJPE_mm,PVE_mm,subset\n");
        for r in &self.rows {
            out += &format!("{},{:.6},{:.6},{:.6},{}\n", r.n, r.mpjpe, r.pa_mpjpe, r.pve, r.subset);
        }
        out
    }
}

/// Seed of hypothesis `h` for dataset sample `index`.
pub fn hypothesis_seed(seed: u64, index: usize, h: usize) -> u64 {
    derive_seed(seed, &[index as u64, h as u64])
}

/// A trained model ready for inference.
pub struct Predictor {
    pub net: Networks,
    pub schedule: NoiseSchedule,
    pub repr: Representation,
}

impl Predictor {
    pub fn new(ckpt: &Checkpoint) -> Result<Self> {
        Ok(Predictor {
            net: ckpt.networks()?,
            schedule: ckpt.schedule.build()?,
            repr: ckpt.representation,
        })
    }

    /// `n` pose hypotheses for sample `index`, in the checkpoint's representation.
    pub fn hypotheses(&self, z: &[f64], seed: u64, index: usize, n: usize) -> Result<Vec<Vec<f64>>> {
        let seeds: Vec<u64> = (0..n).map(|h| hypothesis_seed(seed, index, h)).collect();
        Ok(sample_many(&self.net, z, &self.schedule, &seeds)?
            .into_iter()
            .map(|p| p.0)
            .collect())
    }

    pub fn shape_and_camera(&self, z: &[f64]) -> Result<(Vec<f64>, CameraParams)> {
        let zb = Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("one row");
        let (out, _) = self.net.regressor_forward(&zb.view())?;
        let cam = out.camera.row(0).to_vec();
        Ok((out.shape.row(0).to_vec(), CameraParams::from_slice(&cam)))
    }
}

/// Mean 2D distance between projected joints and the visible keypoints, in
/// normalized image units. `None` when no keypoint is visible.
pub fn visible_reprojection_error(
    joints: &[Vector3<f64>],
    cam: &CameraParams,
    keypoints2d: &[[f64; 2]],
    mask: &[u8],
) -> Option<f64> {
    let proj = project(joints, cam);
    let (sum, n) = proj
        .iter()
        .zip(keypoints2d)
        .zip(mask)
        .filter(|(_, m)| **m != 0)
        .fold((0.0, 0usize), |(s, n), ((p, k), _)| {
            (s + ((p[0] - k[0]).powi(2) + (p[1] - k[1]).powi(2)).sqrt(), n + 1)
        });
    (n > 0).then(|| sum / n as f64)
}

struct SampleErrors {
    mpjpe: Vec<f64>,
    pa_mpjpe: Vec<f64>,
    pve: Vec<f64>,
    occluded: bool,
}

fn score_sample(
    p: &Predictor,
    model: &BodyModel,
    sample: &Sample,
    index: usize,
    seed: u64,
    n: usize,
) -> Result<SampleErrors> {
    let gt_verts = model.mesh(&sample.theta0, &sample.beta)?;
    let gt_joints: Vec<Vector3<f64>> = model.joints3d(&gt_verts)?;
    let (beta_hat, _) = p.shape_and_camera(&sample.z)?;
    let mut errs = SampleErrors {
        mpjpe: Vec::with_capacity(n),
        pa_mpjpe: Vec::with_capacity(n),
        pve: Vec::with_capacity(n),
        occluded: sample.is_occluded(),
    };
    for theta in p.hypotheses(&sample.z, seed, index, n)? {
        let verts = model.mesh_with(p.repr, &theta, &beta_hat)?;
        let joints = model.joints3d(&verts)?;
        errs.mpjpe.push(mpjpe(&joints, &gt_joints)?);
        errs.pa_mpjpe.push(pa_mpjpe(&joints, &gt_joints)?);
        errs.pve.push(pve(&verts, &gt_verts, &joints[0], &gt_joints[0])?);
    }
    Ok(errs)
}

/// Mean min-of-n errors for every n in `cfg.n_list`, over the full dataset and
/// over its occluded samples. Hypothesis `h` of sample `i` always uses the same
/// seed, so the first n hypotheses are shared by every larger n.
pub fn evaluate(ckpt: &Checkpoint, dataset: &Dataset, model: &BodyModel, cfg: &EvalConfig) -> Result<EvalTable> {
    cfg.validate()?;
    dataset.check_model(model)?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("evaluation dataset".into()));
    }
    let p = Predictor::new(ckpt)?;
    let n_max = *cfg.n_list.iter().max().expect("validated");
    let per_sample: Vec<SampleErrors> = dataset
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| score_sample(&p, model, s, i, cfg.seed, n_max))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for subset in [Subset::Full, Subset::Occluded] {
        let members: Vec<&SampleErrors> = per_sample
            .iter()
            .filter(|e| subset == Subset::Full || e.occluded)
            .collect();
        if members.is_empty() {
            continue;
        }
        for &n in &cfg.n_list {
            let mean = |f: &dyn Fn(&SampleErrors) -> &[f64]| -> Result<f64> {
                let mut acc = 0.0;
                for e in &members {
                    acc += min_of_n(&f(e)[..n])?;
                }
                Ok(acc / members.len() as f64)
            };
            rows.push(EvalRow {
                n,
                mpjpe: mean(&|e| &e.mpjpe)?,
                pa_mpjpe: mean(&|e| &e.pa_mpjpe)?,
                pve: mean(&|e| &e.pve)?,
                subset,
                samples: members.len(),
            });
        }
    }
    Ok(EvalTable { rows })
}
