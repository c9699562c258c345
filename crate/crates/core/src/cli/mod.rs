//! Experiment runner: config parsing, command dispatch, ablation sweeps.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on configuration or
//! usage errors.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::RunContext;
pub use config::{
    AblateSection, DatasetConfig, DenoiserConfig, EvalSection, ExperimentConfig, FinetuneSection,
    PretrainSection, ScheduleConfig,
};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "mmdlab",
    about = "Desk-scale diffusion lab: pretrain, MMD-finetune, sample and evaluate few-step samplers",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Dotted-path overrides, e.g. --set finetune.budget=5
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct CheckpointArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Checkpoint to start from (default: finetuned.ckpt, then
    /// pretrained.ckpt inside the output directory).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub ckpt: CheckpointArgs,
    /// Run ablation cells on parallel threads (outputs stay byte-identical).
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the dataset and pretrain the denoiser; writes
    /// pretrained.ckpt, pretrain_loss.csv and the dataset files.
    Pretrain(CommonArgs),
    /// MMD-finetune a pretrained checkpoint under the configured timestep
    /// budget; writes finetuned.ckpt and finetune_history.csv.
    Finetune(CheckpointArgs),
    /// Draw samples from a checkpoint; writes samples.csv + sidecar.
    Sample {
        #[command(flatten)]
        ckpt: CheckpointArgs,
        /// Number of samples (default: eval.sample_count).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Score a checkpoint: held-out MMD², Fréchet feature distance,
    /// k-NN precision/recall; appends to metrics.csv.
    Eval(CheckpointArgs),
    /// Finetune+score every kernel at every ablation budget.
    AblateKernels(AblateArgs),
    /// Finetune+score linear vs quadratic timestep selection.
    AblateSchedule(AblateArgs),
    /// Score DDPM vs DDIM, vanilla and finetuned, at every budget.
    AblateSampler(AblateArgs),
    /// Slerp two latent draws over alpha = 0, 0.1, ..., 1 and decode each
    /// with the deterministic DDIM chain.
    Interpolate(CheckpointArgs),
    /// Top-K nearest training neighbors of generated samples.
    NnAudit(CheckpointArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Pretrain(c) => c,
            Command::Finetune(c)
            | Command::Eval(c)
            | Command::Interpolate(c)
            | Command::NnAudit(c) => &c.common,
            Command::Sample { ckpt, .. } => &ckpt.common,
            Command::AblateKernels(a) | Command::AblateSchedule(a) | Command::AblateSampler(a) => {
                &a.ckpt.common
            }
        }
    }
}

/// Runs one parsed command to completion.
pub fn run(cli: Cli) -> Result<()> {
    let common = cli.command.common();
    let config = ExperimentConfig::load(&common.config, &common.overrides)?;
    let ctx = RunContext::new(config)?;
    match &cli.command {
        Command::Pretrain(_) => commands::cmd_pretrain(&ctx),
        Command::Finetune(c) => commands::cmd_finetune(&ctx, c.checkpoint.as_deref()),
        Command::Sample { ckpt, count } => {
            commands::cmd_sample(&ctx, ckpt.checkpoint.as_deref(), *count)
        }
        Command::Eval(c) => commands::cmd_eval(&ctx, c.checkpoint.as_deref()),
        Command::AblateKernels(a) => {
            commands::cmd_ablate_kernels(&ctx, a.ckpt.checkpoint.as_deref(), a.parallel)
        }
        Command::AblateSchedule(a) => {
            commands::cmd_ablate_schedule(&ctx, a.ckpt.checkpoint.as_deref(), a.parallel)
        }
        Command::AblateSampler(a) => {
            commands::cmd_ablate_sampler(&ctx, a.ckpt.checkpoint.as_deref(), a.parallel)
        }
        Command::Interpolate(c) => commands::cmd_interpolate(&ctx, c.checkpoint.as_deref()),
        Command::NnAudit(c) => commands::cmd_nn_audit(&ctx, c.checkpoint.as_deref()),
    }
}

/// Binary entry point; maps errors to the exit-code contract.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config(_) => 2,
                _ => 1,
            }
        }
    }
}
