//! Training loop, checkpoints and min-of-n evaluation.
//!
//! One step: draw a batch, a timestep and a noise vector per example, noise the
//! clean pose, predict the noise, recover the clean-pose estimate from it,
//! regress shape and camera from the conditioning vector, and take one Adam
//! step on the noise loss plus the weighted pose-reconstruction loss.

mod checkpoint;
mod eval;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use eval::{
    evaluate, hypothesis_seed, visible_reprojection_error, EvalConfig, EvalRow, EvalTable, Predictor, Subset,
};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bodymodel::{BodyModel, CameraParams};
use crate::diffusion::x0_coefficients;
use crate::error::check_len;
use crate::loss::{diffusion_loss, hmr_loss_and_grad, HmrTarget, HmrTerms, LossWeights};
use crate::nnet::{NetArch, Networks, CAMERA_DIM, SHAPE_DIM};
use crate::rng::{normal_vec, stream, StreamRng};
use crate::rotmath::Representation;
use crate::schedule::{NoiseSchedule, ScheduleConfig};
use crate::synthdata::{cond_dim, Dataset};
use crate::{Error, Result};

/// Stream tags; a step's randomness is `stream(seed, [STEP_STREAM, step])`.
const INIT_STREAM: u64 = 1;
const STEP_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub schedule: ScheduleConfig,
    pub batch_size: usize,
    /// Total number of optimizer steps, counting any resumed ones.
    pub steps: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub seed: u64,
    /// Progress reporting interval.
    pub eval_every: usize,
    pub representation: Representation,
    pub hmr_weighting: HmrWeighting,
}

/// Per-example factor on the pose-reconstruction loss at timestep t.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HmrWeighting {
    /// Factor 1 at every t.
    Uniform,
    /// Factor ᾱ_t. The recovered clean pose carries the noise error scaled by
    /// √(1/ᾱ_t − 1), so without it nearly-pure-noise steps dominate the loss.
    #[default]
    AlphaBar,
}

impl HmrWeighting {
    pub fn factor(self, alpha_bar: f64) -> f64 {
        match self {
            HmrWeighting::Uniform => 1.0,
            HmrWeighting::AlphaBar => alpha_bar,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule: ScheduleConfig::DESK,
            batch_size: 64,
            steps: 20_000,
            learning_rate: 1e-3,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            seed: 0,
            eval_every: 1000,
            representation: Representation::SixD,
            hmr_weighting: HmrWeighting::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule
            .build()
            .map_err(|e| Error::config("schedule", e.to_string()))?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be finite and nonnegative"));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(Error::config("adam", "beta1 and beta2 must lie in [0, 1)"));
        }
        if !(a.eps > 0.0 && a.eps.is_finite()) {
            return Err(Error::config("adam.eps", "must be positive"));
        }
        self.weights.validate()
    }

    pub fn arch(&self, joints: usize) -> NetArch {
        NetArch::default_for(self.representation.pose_dim(joints), cond_dim(joints))
    }
}

/// Adam moments for every parameter of both networks.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: usize,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        OptimizerState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimizerState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    check_len("gradient", params.len(), grads.len())?;
    check_len("first moment", params.len(), state.m.len())?;
    check_len("second moment", params.len(), state.v.len())?;
    state.step += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
    }
    Ok(())
}

/// Dataset prepared for one pose representation.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub repr: Representation,
    pub joints: usize,
    pub x0: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub targets: Vec<HmrTarget>,
}

impl TrainingSet {
    pub fn new(dataset: &Dataset, model: &BodyModel, repr: Representation) -> Result<Self> {
        dataset.check_model(model)?;
        if dataset.is_empty() {
            return Err(Error::EmptyInput("dataset".into()));
        }
        let targets = dataset
            .samples
            .iter()
            .map(|s| HmrTarget::from_sample(s, model, repr))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingSet {
            repr,
            joints: dataset.joints,
            x0: targets.iter().map(|t| t.theta0.clone()).collect(),
            z: dataset.samples.iter().map(|s| s.z.clone()).collect(),
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.x0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.is_empty()
    }
}

/// Batch means of every loss term.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub l_diff: f64,
    pub hmr: HmrTerms,
    pub l_all: f64,
}

/// One optimizer step on the examples `batch`; randomness for timesteps and
/// noise comes from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    net: &mut Networks,
    opt: &mut OptimizerState,
    batch: &[usize],
    data: &TrainingSet,
    model: &BodyModel,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    rng: &mut StreamRng,
) -> Result<StepReport> {
    let arch = *net.arch();
    check_len("pose dimension", arch.pose_dim, data.repr.pose_dim(data.joints))?;
    check_len("conditioning dimension", arch.cond_dim, cond_dim(data.joints))?;
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch".into()));
    }
    let (b, d) = (batch.len(), arch.pose_dim);
    let step = opt.step + 1;

    let mut ts = Vec::with_capacity(b);
    let mut eps = Array2::zeros((b, d));
    let mut xt = Array2::zeros((b, d));
    let mut z = Array2::zeros((b, arch.cond_dim));
    for (row, &i) in batch.iter().enumerate() {
        if i >= data.len() {
            return Err(Error::dim("batch index bound", data.len(), i));
        }
        let t = rng.random_range(1..=schedule.steps());
        let e = normal_vec(rng, d);
        let ab = schedule.alpha_bar(t)?;
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        for k in 0..d {
            eps[[row, k]] = e[k];
            xt[[row, k]] = sa * data.x0[i][k] + sb * e[k];
        }
        for (k, v) in data.z[i].iter().enumerate() {
            z[[row, k]] = *v;
        }
        ts.push(t);
    }

    let (eps_hat, dcache) = net.denoiser_forward(&xt.view(), &ts, &z.view())?;
    let (reg, rcache) = net.regressor_forward(&z.view())?;

    let inv_b = 1.0 / b as f64;
    let mut report = StepReport {
        step,
        ..StepReport::default()
    };
    let mut d_eps = Array2::zeros((b, d));
    let mut d_shape = Array2::zeros((b, SHAPE_DIM));
    let mut d_cam = Array2::zeros((b, CAMERA_DIM));
    for (row, &i) in batch.iter().enumerate() {
        let e = eps.row(row);
        let e_hat = eps_hat.row(row);
        let (e, e_hat) = (e.as_slice().expect("contiguous"), e_hat.as_slice().expect("contiguous"));
        report.l_diff += diffusion_loss(e, e_hat)? * inv_b;
        for k in 0..d {
            d_eps[[row, k]] = 2.0 * (e_hat[k] - e[k]) / d as f64 * inv_b;
        }

        let (c_x, c_eps) = x0_coefficients(ts[row], schedule)?;
        let theta_hat: Vec<f64> = (0..d).map(|k| c_x * xt[[row, k]] - c_eps * e_hat[k]).collect();
        let beta_hat = reg.shape.row(row).to_vec();
        let cam_hat = CameraParams::from_slice(reg.camera.row(row).as_slice().expect("contiguous"));
        let (terms, g) = hmr_loss_and_grad(&theta_hat, &beta_hat, &cam_hat, &data.targets[i], model, &cfg.weights)?;
        let f = cfg.hmr_weighting.factor(schedule.alpha_bar(ts[row])?) * inv_b;
        report.hmr.pose += terms.pose * f;
        report.hmr.j3d += terms.j3d * f;
        report.hmr.j2d += terms.j2d * f;
        report.hmr.beta += terms.beta * f;
        report.hmr.total += terms.total * f;
        for k in 0..d {
            d_eps[[row, k]] -= c_eps * g.theta[k] * f;
        }
        for k in 0..SHAPE_DIM {
            d_shape[[row, k]] = g.beta[k] * f;
        }
        for k in 0..CAMERA_DIM {
            d_cam[[row, k]] = g.cam[k] * f;
        }
    }
    report.l_all = report.l_diff + report.hmr.total;
    if !report.l_all.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            detail: format!(
                "L_diff={} L_pose={} L_j3d={} L_j2d={} L_beta={}",
                report.l_diff, report.hmr.pose, report.hmr.j3d, report.hmr.j2d, report.hmr.beta
            ),
        });
    }

    let mut grads = vec![0.0; net.param_count()];
    net.denoiser_backward(&dcache, &d_eps.view(), &mut grads)?;
    net.regressor_backward(&rcache, &d_shape.view(), &d_cam.view(), &mut grads)?;
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss {
            step,
            detail: format!("non-finite gradient for {}", net.params.owner(i).unwrap_or("?")),
        });
    }
    adam_update(&mut net.params.data, &grads, opt, cfg.learning_rate, &cfg.adam)?;
    // Checkpoints hold f32, so keep the live parameters on the f32 grid and a
    // resumed run continues from exactly the same values.
    net.params.quantize_f32();
    Ok(report)
}

/// Draws the batch and step stream for optimizer step `step` (0-based).
pub fn step_stream(seed: u64, step: usize, n: usize, batch_size: usize) -> (Vec<usize>, StreamRng) {
    let mut rng = stream(seed, &[STEP_STREAM, step as u64]);
    let batch = (0..batch_size).map(|_| rng.random_range(0..n)).collect();
    (batch, rng)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Reports of the steps run in this call.
    pub history: Vec<StepReport>,
}

/// Fresh parameters and optimizer state for `cfg`.
pub fn initial_checkpoint(cfg: &TrainConfig, joints: usize) -> Result<Checkpoint> {
    let arch = cfg.arch(joints);
    let net = Networks::init(arch, &mut stream(cfg.seed, &[INIT_STREAM]))?;
    Ok(Checkpoint {
        arch,
        representation: cfg.representation,
        schedule: cfg.schedule,
        step: 0,
        seed_history: vec![cfg.seed],
        params: net.params.data,
        optimizer: Some(OptimizerState::new(net.params.layers.iter().map(|l| l.len()).sum())),
    })
}

/// Trains from scratch, or continues `resume` up to `cfg.steps` total steps.
/// `progress` sees every step report.
pub fn train(
    cfg: &TrainConfig,
    dataset: &Dataset,
    model: &BodyModel,
    resume: Option<Checkpoint>,
    mut progress: impl FnMut(&StepReport),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = TrainingSet::new(dataset, model, cfg.representation)?;
    let schedule = cfg.schedule.build()?;
    let mut ckpt = match resume {
        None => initial_checkpoint(cfg, data.joints)?,
        Some(c) => {
            c.check_compatible(cfg, data.joints)?;
            c
        }
    };
    if ckpt.seed_history.last() != Some(&cfg.seed) {
        ckpt.seed_history.push(cfg.seed);
    }
    let mut net = Networks::from_params(ckpt.arch, std::mem::take(&mut ckpt.params))?;
    let mut opt = ckpt
        .optimizer
        .take()
        .unwrap_or_else(|| OptimizerState::new(net.param_count()));
    opt.step = ckpt.step;
    let mut history = Vec::with_capacity(cfg.steps.saturating_sub(ckpt.step));
    for step in ckpt.step..cfg.steps {
        let (batch, mut rng) = step_stream(cfg.seed, step, data.len(), cfg.batch_size);
        let report = train_step(&mut net, &mut opt, &batch, &data, model, &schedule, cfg, &mut rng)?;
        progress(&report);
        history.push(report);
    }
    ckpt.step = opt.step;
    ckpt.params = net.params.data;
    ckpt.optimizer = Some(opt);
    Ok(TrainOutcome {
        checkpoint: ckpt,
        history,
    })
}

/// Mean of `f` over the first and over the last `window` reports.
pub fn smoothed_endpoints(history: &[StepReport], window: usize, f: impl Fn(&StepReport) -> f64) -> Option<(f64, f64)> {
    if history.is_empty() || window == 0 {
        return None;
    }
    let w = window.min(history.len());
    let mean = |s: &[StepReport]| s.iter().map(&f).sum::<f64>() / s.len() as f64;
    Some((mean(&history[..w]), mean(&history[history.len() - w..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bodymodel::build_default_model;
    use crate::synthdata::{generate, DatasetConfig};

    fn tiny() -> (BodyModel, Dataset, TrainConfig) {
        let model = build_default_model(0);
        let ds = generate(
            &DatasetConfig {
                n_samples: 32,
                seed: 3,
                ..DatasetConfig::default()
            },
            &model,
        )
        .unwrap();
        let cfg = TrainConfig {
            batch_size: 8,
            steps: 10,
            seed: 11,
            ..TrainConfig::default()
        };
        (model, ds, cfg)
    }

    #[test]
    fn adam_single_parameter_matches_hand_update() {
        let cfg = AdamConfig::default();
        let mut p = vec![1.0];
        let mut st = OptimizerState::new(1);
        adam_update(&mut p, &[0.5], &mut st, 0.1, &cfg).unwrap();
        // m̂ = g, v̂ = g², so the first step moves by lr·g/(|g| + ε).
        let expect = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((p[0] - expect).abs() < 1e-15);
        adam_update(&mut p, &[-0.2], &mut st, 0.1, &cfg).unwrap();
        let m = 0.9 * 0.05 + 0.1 * -0.2;
        let v = 0.999 * 0.00025 + 0.001 * 0.04;
        let step = 0.1 * (m / (1.0 - 0.81)) / ((v / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        assert!((p[0] - (expect - step)).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let (model, ds, mut cfg) = tiny();
        cfg.learning_rate = 0.0;
        let init = initial_checkpoint(&cfg, 24).unwrap();
        let out = train(&cfg, &ds, &model, None, |_| {}).unwrap();
        assert_eq!(out.checkpoint.params, init.params);
        assert!(out.history.iter().all(|r| r.l_all.is_finite() && r.l_all > 0.0));
    }

    #[test]
    fn zero_steps_is_initialization() {
        let (model, ds, mut cfg) = tiny();
        cfg.steps = 0;
        let out = train(&cfg, &ds, &model, None, |_| {}).unwrap();
        assert_eq!(out.checkpoint.params, initial_checkpoint(&cfg, 24).unwrap().params);
        assert!(out.history.is_empty());
    }

    #[test]
    fn trajectory_is_reproducible_and_resumable() {
        let (model, ds, cfg) = tiny();
        let a = train(&cfg, &ds, &model, None, |_| {}).unwrap();
        let b = train(&cfg, &ds, &model, None, |_| {}).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.checkpoint.params, b.checkpoint.params);

        let half = TrainConfig { steps: 4, ..cfg.clone() };
        let first = train(&half, &ds, &model, None, |_| {}).unwrap();
        let rest = train(&cfg, &ds, &model, Some(first.checkpoint), |_| {}).unwrap();
        assert_eq!(rest.checkpoint.params, a.checkpoint.params);
        assert_eq!(rest.history[..], a.history[4..]);
    }

    #[test]
    fn axis_angle_run_uses_smaller_pose() {
        let (model, ds, mut cfg) = tiny();
        cfg.representation = Representation::AxisAngle;
        cfg.steps = 2;
        let out = train(&cfg, &ds, &model, None, |_| {}).unwrap();
        assert_eq!(out.checkpoint.arch.pose_dim, 72);
    }

    #[test]
    fn invalid_config_rejected() {
        let (model, ds, mut cfg) = tiny();
        cfg.batch_size = 0;
        assert!(matches!(
            train(&cfg, &ds, &model, None, |_| {}),
            Err(Error::InvalidConfig { ref field, .. }) if field == "batch_size"
        ));
    }
}
