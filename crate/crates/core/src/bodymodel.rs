//! A small articulated body: kinematic tree, shape blend directions, linear
//! blend skinning, a linear joint regressor and a weak-perspective camera.
//!
//! Forward kinematics convention: joint `k` with parent `p` has global rotation
//! `G_k = G_p R_k` (`G_0 = R_0`) and posed location
//! `t_k = t_p + G_p (J_k − J_p)`, where `J` are the shape-dependent rest joints
//! `J = W · shaped_template`. A vertex skinned to joint `k` moves as
//! `G_k (v − J_k) + t_k`. Internally vertices are written as
//! `v + Σ_k w_k ((G_k − I)(v − J_k) + d_k)` with `d_k = t_k − J_k`, which makes
//! the rest pose reproduce the template bit-for-bit.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::check_len;
use crate::nnet::SHAPE_DIM;
use crate::rng::StreamRng;
use crate::rotmath::{Representation, RotMat};
use crate::{Error, Result};

pub const NUM_JOINTS: usize = 24;
pub const NUM_VERTICES: usize = 200;
const MARKERS_PER_JOINT: usize = 4;
const MARKER_RADIUS: f64 = 0.01;

/// SMPL-style 24-joint topology; `None` marks the root.
pub const SMPL_PARENTS: [Option<usize>; NUM_JOINTS] = [
    None,
    Some(0),
    Some(0),
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(9),
    Some(9),
    Some(12),
    Some(13),
    Some(14),
    Some(16),
    Some(17),
    Some(18),
    Some(19),
    Some(20),
    Some(21),
];

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis", "l_hip", "r_hip", "spine1", "l_knee", "r_knee", "spine2", "l_ankle", "r_ankle",
    "spine3", "l_foot", "r_foot", "neck", "l_collar", "r_collar", "head", "l_shoulder",
    "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist", "l_hand", "r_hand",
];

/// T-pose skeleton in meters, y up, z toward the camera.
const SKELETON: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 0.0, 0.0],
    [0.06, -0.09, 0.0],
    [-0.06, -0.09, 0.0],
    [0.0, 0.11, -0.02],
    [0.10, -0.47, 0.0],
    [-0.10, -0.47, 0.0],
    [0.0, 0.24, 0.0],
    [0.09, -0.87, -0.04],
    [-0.09, -0.87, -0.04],
    [0.0, 0.30, 0.02],
    [0.11, -0.93, 0.08],
    [-0.11, -0.93, 0.08],
    [0.0, 0.51, 0.0],
    [0.08, 0.42, 0.0],
    [-0.08, 0.42, 0.0],
    [0.0, 0.60, 0.04],
    [0.18, 0.45, -0.01],
    [-0.18, 0.45, -0.01],
    [0.44, 0.43, -0.03],
    [-0.44, 0.43, -0.03],
    [0.70, 0.44, -0.02],
    [-0.70, 0.44, -0.02],
    [0.78, 0.44, -0.02],
    [-0.78, 0.44, -0.02],
];

/// Weak-perspective camera `(x, y, z) ↦ s·(x, y) + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraParams {
    pub scale: f64,
    pub translation: [f64; 2],
}

impl CameraParams {
    pub fn from_slice(v: &[f64]) -> Self {
        CameraParams {
            scale: v[0],
            translation: [v[1], v[2]],
        }
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.scale, self.translation[0], self.translation[1]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyModel {
    pub parents: Vec<Option<usize>>,
    /// `K`, equal to `W · template`.
    pub rest_joints: Vec<Vector3<f64>>,
    /// `V`
    pub template: Vec<Vector3<f64>>,
    /// `V × K`, row-major.
    pub skin_weights: Vec<f64>,
    /// `V × 3 × 10`, row-major.
    pub shape_dirs: Vec<f64>,
    /// `K × V`, row-major.
    pub joint_regressor: Vec<f64>,
    skin_sparse: Vec<Vec<(usize, f64)>>,
    regressor_sparse: Vec<Vec<(usize, f64)>>,
}

/// Everything the backward pass needs from a forward evaluation.
#[derive(Debug, Clone)]
pub struct PosedBody {
    pub rotations: Vec<Matrix3<f64>>,
    pub global: Vec<Matrix3<f64>>,
    pub displacement: Vec<Vector3<f64>>,
    pub shaped: Vec<Vector3<f64>>,
    pub rest_joints: Vec<Vector3<f64>>,
    pub vertices: Vec<Vector3<f64>>,
}

/// Gradients of a scalar with respect to body-model inputs.
#[derive(Debug, Clone)]
pub struct BodyGradients {
    pub rotations: Vec<Matrix3<f64>>,
    pub shape: [f64; SHAPE_DIM],
}

impl BodyModel {
    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.template.len()
    }

    /// Assembles a model from raw arrays, checking every invariant.
    pub fn from_parts(
        parents: Vec<Option<usize>>,
        template: Vec<Vector3<f64>>,
        skin_weights: Vec<f64>,
        shape_dirs: Vec<f64>,
        joint_regressor: Vec<f64>,
        rest_joints: Vec<Vector3<f64>>,
    ) -> Result<Self> {
        let k = parents.len();
        let v = template.len();
        check_len("skin_weights", v * k, skin_weights.len())?;
        check_len("shape_dirs", v * 3 * SHAPE_DIM, shape_dirs.len())?;
        check_len("joint_regressor", k * v, joint_regressor.len())?;
        check_len("rest_joints", k, rest_joints.len())?;
        let sparse = |m: &[f64], rows: usize, cols: usize| -> Vec<Vec<(usize, f64)>> {
            (0..rows)
                .map(|r| {
                    (0..cols)
                        .filter_map(|c| {
                            let w = m[r * cols + c];
                            (w != 0.0).then_some((c, w))
                        })
                        .collect()
                })
                .collect()
        };
        let model = BodyModel {
            skin_sparse: sparse(&skin_weights, v, k),
            regressor_sparse: sparse(&joint_regressor, k, v),
            parents,
            rest_joints,
            template,
            skin_weights,
            shape_dirs,
            joint_regressor,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_joints();
        if k == 0 || self.parents[0].is_some() {
            return Err(Error::format("parents", "joint 0 must be the root"));
        }
        for (j, p) in self.parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < j => {}
                _ => {
                    return Err(Error::format(
                        "parents",
                        format!("joint {j} needs a parent with a smaller index"),
                    ))
                }
            }
        }
        for (i, row) in self.skin_weights.chunks(k).enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 || row.iter().any(|w| *w < 0.0) {
                return Err(Error::format(
                    "skin_weights",
                    format!("row {i} is not a probability vector (sum {sum})"),
                ));
            }
        }
        for (j, row) in self.joint_regressor.chunks(self.num_vertices()).enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::format(
                    "joint_regressor",
                    format!("row {j} sums to {sum}"),
                ));
            }
        }
        let implied = self.joints3d(&self.template)?;
        for (j, (a, b)) in implied.iter().zip(&self.rest_joints).enumerate() {
            if (a - b).amax() > 1e-6 {
                return Err(Error::format(
                    "rest_joints",
                    format!("joint {j} differs from W·template"),
                ));
            }
        }
        let all = self
            .template
            .iter()
            .flat_map(|v| v.iter())
            .chain(&self.skin_weights)
            .chain(&self.shape_dirs)
            .chain(&self.joint_regressor);
        if all.into_iter().any(|x| !x.is_finite()) {
            return Err(Error::format("model", "non-finite entries"));
        }
        Ok(())
    }

    fn shaped(&self, beta: &[f64]) -> Vec<Vector3<f64>> {
        self.template
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut d = Vector3::zeros();
                for c in 0..3 {
                    let row = &self.shape_dirs[(i * 3 + c) * SHAPE_DIM..(i * 3 + c + 1) * SHAPE_DIM];
                    d[c] = row.iter().zip(beta).map(|(a, b)| a * b).sum();
                }
                t + d
            })
            .collect()
    }

    /// Forward kinematics plus skinning from per-joint rotation matrices.
    pub fn pose(&self, rotations: &[RotMat], beta: &[f64]) -> Result<PosedBody> {
        check_len("joint rotations", self.num_joints(), rotations.len())?;
        check_len("shape parameters", SHAPE_DIM, beta.len())?;
        let shaped = self.shaped(beta);
        let rest = self.joints3d(&shaped)?;
        let k = self.num_joints();
        let id = Matrix3::identity();
        let rots: Vec<Matrix3<f64>> = rotations.iter().map(|r| r.0).collect();
        let mut global = Vec::with_capacity(k);
        let mut disp = Vec::with_capacity(k);
        for j in 0..k {
            match self.parents[j] {
                None => {
                    global.push(rots[j]);
                    disp.push(Vector3::zeros());
                }
                Some(p) => {
                    global.push(global[p] * rots[j]);
                    let d = disp[p] + (global[p] - id) * (rest[j] - rest[p]);
                    disp.push(d);
                }
            }
        }
        let rel: Vec<Matrix3<f64>> = global.iter().map(|g| g - id).collect();
        let vertices = shaped
            .iter()
            .zip(&self.skin_sparse)
            .map(|(v, ws)| {
                let mut off = Vector3::zeros();
                for &(j, w) in ws {
                    off += (rel[j] * (v - rest[j]) + disp[j]) * w;
                }
                v + off
            })
            .collect();
        Ok(PosedBody {
            rotations: rots,
            global,
            displacement: disp,
            shaped,
            rest_joints: rest,
            vertices,
        })
    }

    /// Pulls `dL/d(vertices)` back to rotation matrices and shape coefficients.
    pub fn pose_backward(&self, posed: &PosedBody, d_vertices: &[Vector3<f64>]) -> BodyGradients {
        let k = self.num_joints();
        let id = Matrix3::identity();
        let rel: Vec<Matrix3<f64>> = posed.global.iter().map(|g| g - id).collect();
        let mut d_global = vec![Matrix3::zeros(); k];
        let mut d_disp = vec![Vector3::zeros(); k];
        let mut d_rest = vec![Vector3::zeros(); k];
        let mut d_shaped: Vec<Vector3<f64>> = d_vertices.to_vec();
        for (i, g) in d_vertices.iter().enumerate() {
            if g.iter().all(|x| *x == 0.0) {
                continue;
            }
            let v = posed.shaped[i];
            for &(j, w) in &self.skin_sparse[i] {
                let wg = g * w;
                let back = rel[j].transpose() * wg;
                d_shaped[i] += back;
                d_rest[j] -= back;
                d_global[j] += wg * (v - posed.rest_joints[j]).transpose();
                d_disp[j] += wg;
            }
        }
        let mut d_rot = vec![Matrix3::zeros(); k];
        for j in (0..k).rev() {
            match self.parents[j] {
                None => d_rot[j] = d_global[j],
                Some(p) => {
                    let dd = d_disp[j];
                    d_disp[p] += dd;
                    let bone = posed.rest_joints[j] - posed.rest_joints[p];
                    d_global[p] += dd * bone.transpose();
                    let back = rel[p].transpose() * dd;
                    d_rest[j] += back;
                    d_rest[p] -= back;
                    let dg = d_global[j];
                    d_global[p] += dg * posed.rotations[j].transpose();
                    d_rot[j] = posed.global[p].transpose() * dg;
                }
            }
        }
        for (j, row) in self.regressor_sparse.iter().enumerate() {
            for &(i, w) in row {
                d_shaped[i] += d_rest[j] * w;
            }
        }
        let mut d_beta = [0.0; SHAPE_DIM];
        for (i, g) in d_shaped.iter().enumerate() {
            for c in 0..3 {
                let row = &self.shape_dirs[(i * 3 + c) * SHAPE_DIM..(i * 3 + c + 1) * SHAPE_DIM];
                for (db, a) in d_beta.iter_mut().zip(row) {
                    *db += a * g[c];
                }
            }
        }
        BodyGradients {
            rotations: d_rot,
            shape: d_beta,
        }
    }

    /// Mesh vertices for a 6D pose vector.
    pub fn mesh(&self, theta: &[f64], beta: &[f64]) -> Result<Vec<Vector3<f64>>> {
        self.mesh_with(Representation::SixD, theta, beta)
    }

    pub fn mesh_with(&self, repr: Representation, theta: &[f64], beta: &[f64]) -> Result<Vec<Vector3<f64>>> {
        check_len("pose vector", repr.pose_dim(self.num_joints()), theta.len())?;
        let rots = repr.decode_pose(theta)?;
        Ok(self.pose(&rots, beta)?.vertices)
    }

    /// `J3D = W · vertices`.
    pub fn joints3d(&self, vertices: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
        check_len("vertices", self.num_vertices(), vertices.len())?;
        Ok(self
            .regressor_sparse
            .iter()
            .map(|row| row.iter().fold(Vector3::zeros(), |acc, &(i, w)| acc + vertices[i] * w))
            .collect())
    }

    /// Adjoint of [`BodyModel::joints3d`].
    pub fn joints3d_backward(&self, d_joints: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        let mut out = vec![Vector3::zeros(); self.num_vertices()];
        for (row, g) in self.regressor_sparse.iter().zip(d_joints) {
            for &(i, w) in row {
                out[i] += g * w;
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let manifest = AssetManifest {
            format: ASSET_FORMAT.into(),
            joints: self.num_joints(),
            vertices: self.num_vertices(),
            shape_dim: SHAPE_DIM,
            parents: self.parents.iter().map(|p| p.map_or(-1, |p| p as i64)).collect(),
            blobs: blob_layout(self.num_joints(), self.num_vertices()),
            convention: FK_CONVENTION.into(),
        };
        let mut bytes = serde_json::to_vec(&manifest).expect("manifest serializes");
        bytes.push(b'\n');
        let rest: Vec<f64> = self.rest_joints.iter().flat_map(|v| v.iter().copied()).collect();
        let template: Vec<f64> = self.template.iter().flat_map(|v| v.iter().copied()).collect();
        for blob in [&template, &self.skin_weights, &self.shape_dirs, &self.joint_regressor, &rest] {
            for v in blob.iter() {
                bytes.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let nl = bytes
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| Error::format("model manifest", "missing header line"))?;
        let manifest: AssetManifest = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| Error::format("model manifest", e.to_string()))?;
        if manifest.format != ASSET_FORMAT {
            return Err(Error::format("format", format!("unsupported {}", manifest.format)));
        }
        check_len("shape_dim", SHAPE_DIM, manifest.shape_dim)
            .map_err(|_| Error::format("shape_dim", format!("expected {SHAPE_DIM}")))?;
        let expected = blob_layout(manifest.joints, manifest.vertices);
        if manifest.blobs != expected {
            return Err(Error::format("blobs", "unexpected blob layout"));
        }
        let mut data = bytes[nl + 1..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        let total: usize = expected.iter().map(|b| b.shape.iter().product::<usize>()).sum();
        if bytes.len() - nl - 1 != total * 4 {
            return Err(Error::format(
                "model blobs",
                format!("expected {} bytes, found {}", total * 4, bytes.len() - nl - 1),
            ));
        }
        let mut take = |n: usize| -> Vec<f64> { data.by_ref().take(n).collect() };
        let (k, v) = (manifest.joints, manifest.vertices);
        let template = to_vec3(&take(v * 3));
        let skin = take(v * k);
        let dirs = take(v * 3 * SHAPE_DIM);
        let reg = take(k * v);
        let rest = to_vec3(&take(k * 3));
        let parents = manifest
            .parents
            .iter()
            .map(|p| usize::try_from(*p).ok())
            .collect::<Vec<_>>();
        check_len("parents", k, parents.len())
            .map_err(|_| Error::format("parents", "length differs from joints"))?;
        BodyModel::from_parts(parents, template, skin, dirs, reg, rest)
    }
}

const ASSET_FORMAT: &str = "DIFFPOSE-MODEL/1";
const FK_CONVENTION: &str = "G_k = G_parent * R_k; t_k = t_parent + G_parent (J_k - J_parent); \
J = W * (template + shape_dirs * beta); v' = sum_k w_k (G_k (v - J_k) + t_k)";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct BlobSpec {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AssetManifest {
    format: String,
    joints: usize,
    vertices: usize,
    shape_dim: usize,
    parents: Vec<i64>,
    blobs: Vec<BlobSpec>,
    convention: String,
}

fn blob_layout(k: usize, v: usize) -> Vec<BlobSpec> {
    let b = |name: &str, shape: Vec<usize>| BlobSpec {
        name: name.into(),
        shape,
    };
    vec![
        b("template", vec![v, 3]),
        b("skin_weights", vec![v, k]),
        b("shape_dirs", vec![v, 3, SHAPE_DIM]),
        b("joint_regressor", vec![k, v]),
        b("rest_joints", vec![k, 3]),
    ]
}

fn to_vec3(flat: &[f64]) -> Vec<Vector3<f64>> {
    flat.chunks(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect()
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Weak-perspective projection of every joint.
pub fn project(joints: &[Vector3<f64>], cam: &CameraParams) -> Vec<[f64; 2]> {
    joints
        .iter()
        .map(|j| {
            [
                cam.scale * j.x + cam.translation[0],
                cam.scale * j.y + cam.translation[1],
            ]
        })
        .collect()
}

fn is_leaf(j: usize) -> bool {
    !SMPL_PARENTS.contains(&Some(j))
}

fn leg_joint(j: usize) -> bool {
    matches!(j, 1 | 2 | 4 | 5 | 7 | 8 | 10 | 11)
}

fn arm_joint(j: usize) -> bool {
    (16..NUM_JOINTS).contains(&j)
}

/// Builds the default 24-joint, 200-vertex model. Deterministic in `seed`.
///
/// Each joint gets four marker vertices around its rest location, skinned to
/// its parent; the joint regressor averages them, so regressed joints coincide
/// with the kinematic joint locations and depend only on ancestor rotations.
/// The remaining vertices are scattered along bones with Gaussian offsets.
pub fn build_default_model(seed: u64) -> BodyModel {
    let mut rng = StreamRng::seed_from_u64(seed);
    let k = NUM_JOINTS;
    let skel: Vec<Vector3<f64>> = SKELETON.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect();

    // (position, region joint used for shape fields, skin weights, radial offset)
    struct Proto {
        pos: Vector3<f64>,
        region: usize,
        skin: Vec<(usize, f64)>,
        radial: Vector3<f64>,
    }
    let mut protos = Vec::with_capacity(NUM_VERTICES);
    for j in 0..k {
        let owner = SMPL_PARENTS[j].unwrap_or(0);
        let offsets = [
            Vector3::new(MARKER_RADIUS, 0.0, 0.0),
            Vector3::new(-MARKER_RADIUS, 0.0, 0.0),
            Vector3::new(0.0, 0.0, MARKER_RADIUS),
            Vector3::new(0.0, 0.0, -MARKER_RADIUS),
        ];
        for o in offsets {
            protos.push(Proto {
                pos: skel[j] + o,
                region: j,
                skin: vec![(owner, 1.0)],
                radial: Vector3::zeros(),
            });
        }
    }
    // Segments: every bone parent→child, plus a short stub past each leaf.
    let mut segments: Vec<(usize, usize, Vector3<f64>, Vector3<f64>)> = Vec::new();
    for j in 1..k {
        let p = SMPL_PARENTS[j].expect("non-root");
        segments.push((p, j, skel[p], skel[j]));
    }
    for j in (0..k).filter(|j| is_leaf(*j)) {
        let p = SMPL_PARENTS[j].expect("leaf has parent");
        let dir = if j == 15 {
            Vector3::new(0.0, 1.0, 0.0)
        } else {
            (skel[j] - skel[p]).normalize()
        };
        let len = if j == 15 { 0.15 } else { 0.08 };
        segments.push((j, j, skel[j], skel[j] + dir * len));
    }
    let surface = NUM_VERTICES - k * MARKERS_PER_JOINT;
    for n in 0..surface {
        let (p, c, start, end) = segments[n % segments.len()];
        let u: f64 = rng.random_range(0.1..0.9);
        let radial = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        ) * 0.03;
        let mut skin = Vec::new();
        if p == c {
            skin.push((p, 1.0));
        } else {
            let to_child = ((u - 0.7) / 0.6).max(0.0);
            let to_grand = match SMPL_PARENTS[p] {
                Some(_) => ((0.3 - u) / 0.6).max(0.0),
                None => 0.0,
            };
            skin.push((p, 1.0 - to_child - to_grand));
            if to_child > 0.0 {
                skin.push((c, to_child));
            }
            if to_grand > 0.0 {
                skin.push((SMPL_PARENTS[p].expect("checked"), to_grand));
            }
        }
        protos.push(Proto {
            pos: start + (end - start) * u + radial,
            region: c,
            skin,
            radial,
        });
    }

    // Random per-joint displacement fields for the last five shape directions.
    let random_fields: Vec<Vec<Vector3<f64>>> = (0..5)
        .map(|_| {
            (0..k)
                .map(|_| {
                    Vector3::new(
                        rng.sample::<f64, _>(StandardNormal),
                        rng.sample::<f64, _>(StandardNormal),
                        rng.sample::<f64, _>(StandardNormal),
                    ) * 0.01
                })
                .collect()
        })
        .collect();

    let v = protos.len();
    let mut template = Vec::with_capacity(v);
    let mut skin_weights = vec![0.0; v * k];
    let mut shape_dirs = vec![0.0; v * 3 * SHAPE_DIM];
    for (i, pr) in protos.iter().enumerate() {
        template.push(pr.pos.map(round_f32));
        // Rounded weights, with the last one absorbing the rounding error.
        let mut acc = 0.0;
        for (n, &(j, w)) in pr.skin.iter().enumerate() {
            let w = if n + 1 == pr.skin.len() { 1.0 - acc } else { round_f32(w) };
            skin_weights[i * k + j] += round_f32(w);
            acc += round_f32(w);
        }
        let region = pr.region;
        let mut dirs = [Vector3::zeros(); SHAPE_DIM];
        dirs[0] = pr.pos * 0.04;
        dirs[1] = pr.radial * 0.15;
        if leg_joint(region) {
            let hip = if skel[region].x > 0.0 { skel[1] } else { skel[2] };
            dirs[2] = (pr.pos - hip) * 0.05;
        }
        if arm_joint(region) {
            let shoulder = if skel[region].x > 0.0 { skel[16] } else { skel[17] };
            dirs[3] = (pr.pos - shoulder) * 0.05;
        }
        if pr.pos.y > 0.0 {
            dirs[4] = Vector3::new(0.0, pr.pos.y * 0.05, 0.0);
        }
        for (f, field) in random_fields.iter().enumerate() {
            dirs[5 + f] = pr
                .skin
                .iter()
                .fold(Vector3::zeros(), |acc, &(j, w)| acc + field[j] * w);
            if pr.radial == Vector3::zeros() {
                // markers follow their own joint's field
                dirs[5 + f] = field[region];
            }
        }
        for (b, d) in dirs.iter().enumerate() {
            for c in 0..3 {
                shape_dirs[(i * 3 + c) * SHAPE_DIM + b] = round_f32(d[c]);
            }
        }
    }
    let mut joint_regressor = vec![0.0; k * v];
    for j in 0..k {
        for m in 0..MARKERS_PER_JOINT {
            joint_regressor[j * v + j * MARKERS_PER_JOINT + m] = 1.0 / MARKERS_PER_JOINT as f64;
        }
    }
    let regressor_rows: Vec<Vec<(usize, f64)>> = (0..k)
        .map(|j| {
            (0..MARKERS_PER_JOINT)
                .map(|m| (j * MARKERS_PER_JOINT + m, 0.25))
                .collect()
        })
        .collect();
    let rest_joints = regressor_rows
        .iter()
        .map(|row| {
            row.iter()
                .fold(Vector3::zeros(), |acc, &(i, w)| acc + template[i] * w)
                .map(round_f32)
        })
        .collect();
    BodyModel::from_parts(
        SMPL_PARENTS.to_vec(),
        template,
        skin_weights,
        shape_dirs,
        joint_regressor,
        rest_joints,
    )
    .expect("default model satisfies its invariants")
}
