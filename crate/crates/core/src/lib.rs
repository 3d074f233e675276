//! Generative recovery of articulated-body pose with a conditional denoising
//! diffusion model.
//!
//! Poses are flat vectors of per-joint rotations (6D by default). A forward
//! Markov chain corrupts ground-truth poses toward a standard normal; a small
//! conditional network learns to predict the injected noise given the noised
//! pose, the timestep and an observation vector built from 2D keypoints. Sampling
//! runs the learned reverse chain from pure noise, so different seeds give
//! different plausible poses for the same observation.
//!
//! Module map:
//! - [`rotmath`]: 6D / matrix / axis-angle rotations
//! - [`schedule`]: linear noise schedules and derived tables
//! - [`diffusion`]: forward noising, reverse steps, ancestral sampling
//! - [`nnet`]: denoiser and shape/camera regressor with hand-written backprop
//! - [`bodymodel`]: mini articulated body with skinning and weak-perspective camera
//! - [`synthdata`]: synthetic datasets with manufactured ambiguity
//! - [`loss`] and [`metrics`]: training objective and evaluation errors
//! - [`trainer`]: Adam training loop, checkpoints, min-of-n evaluation
//! - [`cli`]: the `diffpose` command-line tool

pub mod bodymodel;
pub mod cli;
pub mod config;
pub mod container;
pub mod diffusion;
mod error;
pub mod loss;
pub mod metrics;
pub mod nnet;
pub mod rng;
pub mod rotmath;
pub mod schedule;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
