//! Desk-scale laboratory for few-step sampling in denoising diffusion models.
//!
//! The lab trains small noise-prediction networks on synthetic 2-D
//! distributions, samples them with budgeted DDPM/DDIM chains, and finetunes
//! a pretrained model by backpropagating an unbiased MMD² estimator through
//! the whole sampling chain (reparametrized noise, one gradient checkpoint
//! per timestep). An evaluation harness provides held-out MMD², a Fréchet
//! feature distance, k-NN precision/recall, nearest-neighbor audits and
//! latent slerp interpolation.
//!
//! Module map:
//! - [`diffcore`]: tensors, the recording graph, reverse-mode gradients,
//!   gradient checkpointing, Adam.
//! - [`schedule`]: noise schedules and the closed-form forward process.
//! - [`denoiser`]: the MLP noise predictor and its pretraining loop.
//! - [`sampler`]: timestep-subset selection, DDPM/DDIM reverse steps, chains.
//! - [`mmd`]: kernels, feature maps, the unbiased MMD² estimator.
//! - [`finetune`]: MMD finetuning through the budgeted chain.
//! - [`eval`]: metrics and analyses.
//! - [`data`]: synthetic datasets and checkpoint persistence.
//! - [`cli`]: the experiment runner.

pub mod cli;
pub mod data;
pub mod denoiser;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod finetune;
pub mod mmd;
pub mod real;
pub mod sampler;
pub mod schedule;

pub use error::{Error, Result};
pub use real::Real;
