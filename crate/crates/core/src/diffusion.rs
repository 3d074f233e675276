//! Forward noising, the ε-parameterized reverse step and ancestral sampling.

use ndarray::Array2;
use rand::SeedableRng;

use crate::error::check_len;
use crate::rng::{normal_vec, StreamRng};
use crate::schedule::NoiseSchedule;
use crate::Result;

/// Flat pose vector θ^(t): per-joint rotation parameters concatenated.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseState(pub Vec<f64>);

/// A standard-normal draw (or a prediction of one) with the pose's length.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSample(pub Vec<f64>);

impl PoseState {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl NoiseSample {
    pub fn zeros(n: usize) -> Self {
        NoiseSample(vec![0.0; n])
    }
}

/// One step of the forward chain: `√(1−β_t)·x + √β_t·ε`.
pub fn forward_step(
    x_prev: &PoseState,
    t: usize,
    eps: &NoiseSample,
    s: &NoiseSchedule,
) -> Result<PoseState> {
    check_len("forward_step noise", x_prev.len(), eps.0.len())?;
    let beta = s.beta(t)?;
    let (keep, add) = ((1.0 - beta).sqrt(), beta.sqrt());
    Ok(PoseState(
        x_prev.0.iter().zip(&eps.0).map(|(x, e)| keep * x + add * e).collect(),
    ))
}

/// Closed-form marginal: `√ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
pub fn forward_sample(
    x0: &PoseState,
    t: usize,
    eps: &NoiseSample,
    s: &NoiseSchedule,
) -> Result<PoseState> {
    check_len("forward_sample noise", x0.len(), eps.0.len())?;
    s.check_t(t)?;
    let ab = s.alpha_bar(t)?;
    let (keep, add) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(PoseState(
        x0.0.iter().zip(&eps.0).map(|(x, e)| keep * x + add * e).collect(),
    ))
}

/// Coefficients `(1/√ᾱ_t, √(1/ᾱ_t − 1))` of the clean-signal estimate.
pub fn x0_coefficients(t: usize, s: &NoiseSchedule) -> Result<(f64, f64)> {
    s.check_t(t)?;
    let ab = s.alpha_bar(t)?;
    Ok((1.0 / ab.sqrt(), (1.0 / ab - 1.0).sqrt()))
}

/// Clean-signal estimate from a noised state and predicted noise.
pub fn predict_x0(
    x_t: &PoseState,
    t: usize,
    eps_hat: &NoiseSample,
    s: &NoiseSchedule,
) -> Result<PoseState> {
    check_len("predict_x0 noise", x_t.len(), eps_hat.0.len())?;
    let (c_x, c_e) = x0_coefficients(t, s)?;
    Ok(PoseState(
        x_t.0.iter().zip(&eps_hat.0).map(|(x, e)| c_x * x - c_e * e).collect(),
    ))
}

/// One ancestral step `x_{t−1} = μ + √Σ_t·z`, with
/// `μ = (x_t − β_t/√(1−ᾱ_t)·ε̂)/√α_t`. The injected noise is ignored at `t = 1`.
pub fn reverse_step(
    x_t: &PoseState,
    t: usize,
    eps_hat: &NoiseSample,
    z_noise: &NoiseSample,
    s: &NoiseSchedule,
) -> Result<PoseState> {
    check_len("reverse_step predicted noise", x_t.len(), eps_hat.0.len())?;
    check_len("reverse_step injected noise", x_t.len(), z_noise.0.len())?;
    let mut out = x_t.0.clone();
    reverse_step_in_place(&mut out, t, &eps_hat.0, Some(&z_noise.0), s)?;
    Ok(PoseState(out))
}

fn reverse_step_in_place(
    x: &mut [f64],
    t: usize,
    eps_hat: &[f64],
    z_noise: Option<&[f64]>,
    s: &NoiseSchedule,
) -> Result<()> {
    let beta = s.beta(t)?;
    let alpha = s.alpha(t)?;
    let ab = s.alpha_bar(t)?;
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let eps_coef = beta / (1.0 - ab).sqrt();
    let sigma = if t == 1 {
        0.0
    } else {
        s.posterior_variance(t)?.sqrt()
    };
    for (i, (xi, e)) in x.iter_mut().zip(eps_hat).enumerate() {
        let mean = inv_sqrt_alpha * (*xi - eps_coef * e);
        *xi = match z_noise {
            Some(z) if t > 1 => mean + sigma * z[i],
            _ => mean,
        };
    }
    Ok(())
}

/// Anything that predicts noise for a batch of noised poses sharing one
/// timestep and one conditioning vector.
pub trait NoisePredictor {
    fn pose_dim(&self) -> usize;
    fn cond_dim(&self) -> usize;
    /// `x` is `batch × pose_dim`; returns the predicted noise with the same shape.
    fn predict(&self, x: &Array2<f64>, t: usize, z: &[f64]) -> Result<Array2<f64>>;
}

/// Full ancestral sampling loop from `x_T ~ N(0, I)` down to θ̂⁰.
pub fn sample<P: NoisePredictor + ?Sized>(
    predictor: &P,
    z: &[f64],
    s: &NoiseSchedule,
    seed: u64,
) -> Result<PoseState> {
    Ok(sample_many(predictor, z, s, &[seed])?.remove(0))
}

/// Runs one chain per seed, batched through the predictor. Each chain draws
/// only from its own seeded stream, so the result for a seed does not depend
/// on which other seeds share the batch.
pub fn sample_many<P: NoisePredictor + ?Sized>(
    predictor: &P,
    z: &[f64],
    s: &NoiseSchedule,
    seeds: &[u64],
) -> Result<Vec<PoseState>> {
    let d = predictor.pose_dim();
    check_len("conditioning vector", predictor.cond_dim(), z.len())?;
    let mut rngs: Vec<StreamRng> = seeds.iter().map(|&sd| StreamRng::seed_from_u64(sd)).collect();
    let mut x = Array2::zeros((seeds.len(), d));
    for (mut row, rng) in x.rows_mut().into_iter().zip(rngs.iter_mut()) {
        row.assign(&ndarray::Array1::from(normal_vec(rng, d)));
    }
    for t in (1..=s.steps()).rev() {
        let eps = predictor.predict(&x, t, z)?;
        check_len("predicted noise width", d, eps.ncols())?;
        for ((mut row, e), rng) in x.rows_mut().into_iter().zip(eps.rows()).zip(rngs.iter_mut()) {
            let noise = if t > 1 { Some(normal_vec(rng, d)) } else { None };
            reverse_step_in_place(
                row.as_slice_mut().expect("standard layout"),
                t,
                e.as_slice().expect("standard layout"),
                noise.as_deref(),
                s,
            )?;
        }
    }
    Ok(x.rows().into_iter().map(|r| PoseState(r.to_vec())).collect())
}
