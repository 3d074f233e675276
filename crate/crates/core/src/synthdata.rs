//! Synthetic training and evaluation data.
//!
//! A sample draws a pose from per-joint Euler ranges, a shape, and a weak
//! perspective camera, projects the regressed joints, hides a random subset of
//! keypoints and encodes what remains as the conditioning vector. For a
//! configurable fraction of samples a twin is emitted that shares the exact same
//! observation but re-samples every rotation the visible keypoints cannot see,
//! so the conditional pose distribution is multi-modal by construction.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bodymodel::{project, BodyModel, CameraParams};
use crate::container::{self, decode_f32, encode_f32, Header};
use crate::error::check_len;
use crate::nnet::SHAPE_DIM;
use crate::rng::{stream, StreamRng};
use crate::rotmath::{euler_to_rotmat, Representation, RotMat};
use crate::{Error, Result};

const KIND: &str = "dataset";

/// Uniform Euler-angle box per joint: `[[x_lo, x_hi], [y_lo, y_hi], [z_lo, z_hi]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PosePrior(pub Vec<[[f64; 2]; 3]>);

impl Default for PosePrior {
    fn default() -> Self {
        let s = |a: f64| [-a, a];
        let j = |x: [f64; 2], y: [f64; 2], z: [f64; 2]| [x, y, z];
        PosePrior(vec![
            j(s(0.3), [-PI, PI], s(0.3)),       // pelvis: any heading
            j([-1.2, 0.4], s(0.4), [-0.2, 0.6]), // l_hip
            j([-1.2, 0.4], s(0.4), [-0.6, 0.2]), // r_hip
            j([-0.3, 0.5], s(0.3), s(0.2)),      // spine1
            j([0.0, 1.8], s(0.05), s(0.05)),     // l_knee
            j([0.0, 1.8], s(0.05), s(0.05)),     // r_knee
            j([-0.2, 0.3], s(0.2), s(0.15)),     // spine2
            j(s(0.4), s(0.2), s(0.2)),           // l_ankle
            j(s(0.4), s(0.2), s(0.2)),           // r_ankle
            j([-0.2, 0.3], s(0.2), s(0.15)),     // spine3
            j(s(0.2), s(0.1), s(0.1)),           // l_foot
            j(s(0.2), s(0.1), s(0.1)),           // r_foot
            j(s(0.4), s(0.5), s(0.3)),           // neck
            j(s(0.2), s(0.2), s(0.2)),           // l_collar
            j(s(0.2), s(0.2), s(0.2)),           // r_collar
            j(s(0.4), s(0.6), s(0.3)),           // head
            j(s(0.8), s(0.8), [-1.2, 0.6]),      // l_shoulder
            j(s(0.8), s(0.8), [-0.6, 1.2]),      // r_shoulder
            j(s(0.1), [-2.0, 0.0], s(0.1)),      // l_elbow
            j(s(0.1), [0.0, 2.0], s(0.1)),       // r_elbow
            j(s(0.5), s(0.3), s(0.6)),           // l_wrist
            j(s(0.5), s(0.3), s(0.6)),           // r_wrist
            j(s(0.3), s(0.3), s(0.3)),           // l_hand
            j(s(0.3), s(0.3), s(0.3)),           // r_hand
        ])
    }
}

impl PosePrior {
    pub fn sample_joint<R: Rng + ?Sized>(&self, joint: usize, rng: &mut R) -> RotMat {
        let r = &self.0[joint];
        let mut draw = |lo: f64, hi: f64| if hi > lo { rng.random_range(lo..hi) } else { lo };
        let x = draw(r[0][0], r[0][1]);
        let y = draw(r[1][0], r[1][1]);
        let z = draw(r[2][0], r[2][1]);
        euler_to_rotmat(x, y, z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_samples: usize,
    pub pose_prior: PosePrior,
    /// Independent per-joint probability that a keypoint is hidden.
    pub occlusion_rate: f64,
    /// Standard deviation of additive keypoint noise, normalized image units.
    pub keypoint_noise_std: f64,
    /// Fraction of emitted samples that belong to a twin pair.
    pub ambiguity_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_samples: 5000,
            pose_prior: PosePrior::default(),
            occlusion_rate: 0.1,
            keypoint_noise_std: 0.0,
            ambiguity_fraction: 0.3,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self, joints: usize) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::config("n_samples", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.occlusion_rate) {
            return Err(Error::config("occlusion_rate", format!("{} not in [0, 1]", self.occlusion_rate)));
        }
        if !(0.0..=1.0).contains(&self.ambiguity_fraction) {
            return Err(Error::config(
                "ambiguity_fraction",
                format!("{} not in [0, 1]", self.ambiguity_fraction),
            ));
        }
        if !(self.keypoint_noise_std >= 0.0 && self.keypoint_noise_std.is_finite()) {
            return Err(Error::config("keypoint_noise_std", "must be finite and nonnegative"));
        }
        if self.pose_prior.0.len() != joints {
            return Err(Error::config(
                "pose_prior",
                format!("{} joint ranges for a {joints}-joint model", self.pose_prior.0.len()),
            ));
        }
        for (j, r) in self.pose_prior.0.iter().enumerate() {
            if r.iter().any(|[lo, hi]| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
                return Err(Error::config(format!("pose_prior[{j}]"), "needs finite lo <= hi"));
            }
        }
        Ok(())
    }
}

/// One dataset record.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Ground-truth pose, 6D per joint.
    pub theta0: Vec<f64>,
    pub beta: Vec<f64>,
    pub cam: CameraParams,
    /// `K × 2`, all joints including hidden ones.
    pub keypoints2d: Vec<[f64; 2]>,
    /// 1 = visible.
    pub occlusion_mask: Vec<u8>,
    pub z: Vec<f64>,
    /// Index of the twin sharing this sample's observation, if any.
    pub twin: Option<usize>,
}

impl Sample {
    pub fn is_occluded(&self) -> bool {
        self.occlusion_mask.contains(&0)
    }
}

/// Conditioning vector: visible keypoints flattened (hidden ones zeroed)
/// followed by the mask.
pub fn encode(keypoints2d: &[[f64; 2]], occlusion_mask: &[u8]) -> Result<Vec<f64>> {
    check_len("occlusion mask", keypoints2d.len(), occlusion_mask.len())?;
    let k = keypoints2d.len();
    let mut z = vec![0.0; 3 * k];
    for (j, (kp, m)) in keypoints2d.iter().zip(occlusion_mask).enumerate() {
        if *m != 0 {
            z[2 * j] = kp[0];
            z[2 * j + 1] = kp[1];
            z[2 * k + j] = 1.0;
        }
    }
    Ok(z)
}

pub fn cond_dim(joints: usize) -> usize {
    3 * joints
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub joints: usize,
    pub samples: Vec<Sample>,
}

/// Summary printed by `gen-data`.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguityStats {
    pub samples: usize,
    pub twin_pairs: usize,
    pub occluded_samples: usize,
    pub occluded_joint_fraction: f64,
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Joints whose rotation no visible keypoint depends on: every strict
/// descendant is hidden. Leaves qualify trivially.
pub fn unobserved_rotations(parents: &[Option<usize>], mask: &[u8]) -> Vec<usize> {
    let k = parents.len();
    let mut hidden_subtree = vec![true; k];
    for j in (0..k).rev() {
        if let Some(p) = parents[j] {
            if mask[j] != 0 || !hidden_subtree[j] {
                hidden_subtree[p] = false;
            }
        }
    }
    (0..k).filter(|j| hidden_subtree[*j]).collect()
}

struct Draft {
    rots: Vec<RotMat>,
    beta: Vec<f64>,
    cam: CameraParams,
    mask: Vec<u8>,
    noise: Vec<[f64; 2]>,
}

fn build_sample(model: &BodyModel, d: &Draft, twin: Option<usize>) -> Result<Sample> {
    let theta0: Vec<f64> = Representation::SixD
        .encode_pose(&d.rots)
        .into_iter()
        .map(round_f32)
        .collect();
    let rots = Representation::SixD.decode_pose(&theta0)?;
    let posed = model.pose(&rots, &d.beta)?;
    let j3d = model.joints3d(&posed.vertices)?;
    let keypoints2d: Vec<[f64; 2]> = project(&j3d, &d.cam)
        .into_iter()
        .zip(&d.noise)
        .map(|(p, n)| [round_f32(p[0] + n[0]), round_f32(p[1] + n[1])])
        .collect();
    let z = encode(&keypoints2d, &d.mask)?;
    Ok(Sample {
        theta0,
        beta: d.beta.clone(),
        cam: d.cam,
        keypoints2d,
        occlusion_mask: d.mask.clone(),
        z,
        twin,
    })
}

/// Generates `cfg.n_samples` samples, deterministic in `cfg.seed`.
pub fn generate(cfg: &DatasetConfig, model: &BodyModel) -> Result<Dataset> {
    let k = model.num_joints();
    cfg.validate(k)?;
    let mut rng: StreamRng = stream(cfg.seed, &[0x5EED_DA7A]);
    let mut samples: Vec<Sample> = Vec::with_capacity(cfg.n_samples);
    // Pairs are drawn with probability f/(2−f) per draw so that about a fraction
    // f of emitted samples belong to a pair.
    let pair_prob = cfg.ambiguity_fraction / (2.0 - cfg.ambiguity_fraction);
    while samples.len() < cfg.n_samples {
        let rots: Vec<RotMat> = (0..k).map(|j| cfg.pose_prior.sample_joint(j, &mut rng)).collect();
        let beta: Vec<f64> = (0..SHAPE_DIM)
            .map(|_| round_f32(rng.sample::<f64, _>(StandardNormal).clamp(-3.0, 3.0)))
            .collect();
        let cam = CameraParams {
            scale: round_f32(rng.random_range(0.8..1.2)),
            translation: [
                round_f32(rng.random_range(-0.1..0.1)),
                round_f32(rng.random_range(-0.1..0.1)),
            ],
        };
        let mask: Vec<u8> = (0..k)
            .map(|_| u8::from(rng.random::<f64>() >= cfg.occlusion_rate))
            .collect();
        let noise: Vec<[f64; 2]> = (0..k)
            .map(|_| {
                if cfg.keypoint_noise_std > 0.0 {
                    [
                        rng.sample::<f64, _>(StandardNormal) * cfg.keypoint_noise_std,
                        rng.sample::<f64, _>(StandardNormal) * cfg.keypoint_noise_std,
                    ]
                } else {
                    [0.0, 0.0]
                }
            })
            .collect();
        let make_pair = rng.random::<f64>() < pair_prob && samples.len() + 2 <= cfg.n_samples;
        let draft = Draft {
            rots,
            beta,
            cam,
            mask,
            noise,
        };
        if !make_pair {
            samples.push(build_sample(model, &draft, None)?);
            continue;
        }
        let mut twin = Draft {
            rots: draft.rots.clone(),
            beta: draft.beta.clone(),
            cam: draft.cam,
            mask: draft.mask.clone(),
            noise: draft.noise.clone(),
        };
        for j in unobserved_rotations(&model.parents, &draft.mask) {
            twin.rots[j] = cfg.pose_prior.sample_joint(j, &mut rng);
        }
        let first = samples.len();
        samples.push(build_sample(model, &draft, Some(first + 1))?);
        samples.push(build_sample(model, &twin, Some(first))?);
    }
    Ok(Dataset {
        config: cfg.clone(),
        joints: k,
        samples,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    index: usize,
    twin: Option<usize>,
    theta0: String,
    beta: String,
    cam: String,
    keypoints2d: String,
    occlusion_mask: String,
    z: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn stats(&self) -> AmbiguityStats {
        let hidden: usize = self
            .samples
            .iter()
            .map(|s| s.occlusion_mask.iter().filter(|m| **m == 0).count())
            .sum();
        AmbiguityStats {
            samples: self.len(),
            twin_pairs: self.samples.iter().filter(|s| s.twin.is_some()).count() / 2,
            occluded_samples: self.samples.iter().filter(|s| s.is_occluded()).count(),
            occluded_joint_fraction: hidden as f64 / (self.len() * self.joints).max(1) as f64,
        }
    }

    /// Rejects a dataset built for a different joint count.
    pub fn check_model(&self, model: &BodyModel) -> Result<()> {
        if self.joints != model.num_joints() {
            return Err(Error::format(
                "dims.joints",
                format!("dataset has {} joints, model has {}", self.joints, model.num_joints()),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let k = self.joints;
        let header = Header::new(
            KIND,
            &[
                ("joints", k),
                ("pose_dim", 6 * k),
                ("shape_dim", SHAPE_DIM),
                ("camera_dim", 3),
                ("cond_dim", cond_dim(k)),
            ],
            self.len(),
            serde_json::to_value(&self.config).expect("config serializes"),
        );
        let records: Vec<Record> = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| Record {
                index: i,
                twin: s.twin,
                theta0: encode_f32(&s.theta0),
                beta: encode_f32(&s.beta),
                cam: encode_f32(&s.cam.to_array()),
                keypoints2d: encode_f32(&s.keypoints2d.iter().flatten().copied().collect::<Vec<_>>()),
                occlusion_mask: encode_f32(&s.occlusion_mask.iter().map(|m| *m as f64).collect::<Vec<_>>()),
                z: encode_f32(&s.z),
            })
            .collect();
        container::write(path, &header, &records)
    }

    /// Loads and eagerly validates every record.
    pub fn load(path: &Path) -> Result<Self> {
        let (header, records): (Header, Vec<Record>) = container::read(path, KIND)?;
        let k = header.dim("joints")?;
        for (name, want) in [
            ("pose_dim", 6 * k),
            ("shape_dim", SHAPE_DIM),
            ("camera_dim", 3),
            ("cond_dim", cond_dim(k)),
        ] {
            if header.dim(name)? != want {
                return Err(Error::format(format!("dims.{name}"), format!("expected {want}")));
            }
        }
        let config: DatasetConfig = serde_json::from_value(header.meta.clone())
            .map_err(|e| Error::format("meta", e.to_string()))?;
        let n = records.len();
        let mut samples = Vec::with_capacity(n);
        for (i, r) in records.into_iter().enumerate() {
            let field = |f: &str| format!("record {i}.{f}");
            if r.index != i {
                return Err(Error::format(field("index"), format!("expected {i}")));
            }
            let theta0 = decode_f32(&field("theta0"), &r.theta0, 6 * k)?;
            let beta = decode_f32(&field("beta"), &r.beta, SHAPE_DIM)?;
            let cam = CameraParams::from_slice(&decode_f32(&field("cam"), &r.cam, 3)?);
            let kp = decode_f32(&field("keypoints2d"), &r.keypoints2d, 2 * k)?;
            let mask_f = decode_f32(&field("occlusion_mask"), &r.occlusion_mask, k)?;
            let z = decode_f32(&field("z"), &r.z, cond_dim(k))?;
            if mask_f.iter().any(|m| *m != 0.0 && *m != 1.0) {
                return Err(Error::format(field("occlusion_mask"), "entries must be 0 or 1"));
            }
            let all_finite = theta0.iter().chain(&beta).chain(&kp).chain(&z).all(|v| v.is_finite());
            if !all_finite || !cam.to_array().iter().all(|v| v.is_finite()) {
                return Err(Error::format(field("values"), "non-finite entry"));
            }
            let keypoints2d: Vec<[f64; 2]> = kp.chunks(2).map(|c| [c[0], c[1]]).collect();
            let occlusion_mask: Vec<u8> = mask_f.iter().map(|m| *m as u8).collect();
            if encode(&keypoints2d, &occlusion_mask)? != z {
                return Err(Error::format(field("z"), "does not match encode(keypoints2d, mask)"));
            }
            if let Some(t) = r.twin {
                if t >= n || t == i {
                    return Err(Error::format(field("twin"), format!("invalid twin index {t}")));
                }
            }
            samples.push(Sample {
                theta0,
                beta,
                cam,
                keypoints2d,
                occlusion_mask,
                z,
                twin: r.twin,
            });
        }
        Ok(Dataset {
            config,
            joints: k,
            samples,
        })
    }
}
