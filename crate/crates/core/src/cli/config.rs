//! Experiment configuration: a TOML file plus dotted-path overrides.
//!
//! Every run is fully determined by the resolved config; the seed is
//! mandatory and nothing ever falls back to wall-clock seeding. Each
//! command freezes the resolved config next to its artifacts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::ToyDistribution;
use crate::denoiser::DenoiserSpec;
use crate::error::{Error, Result};
use crate::mmd::{KernelSpec, RbfBandwidth};
use crate::sampler::{SamplerKind, SelectionMethod};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed for every derived random stream.
    pub seed: u64,
    /// Directory all artifacts are written into.
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub denoiser: DenoiserConfig,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default)]
    pub finetune: FinetuneSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub ablate: AblateSection,
}

// Field-level defaults so `--set section.key=value` overrides can land in
// otherwise-absent sections.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub kind: ToyDistribution,
    pub n: usize,
    pub heldout_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { kind: ToyDistribution::Ring8, n: 5120, heldout_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { timesteps: 100, beta_start: 1e-4, beta_end: 2e-2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub hidden_width: usize,
    pub depth: usize,
    pub time_embed_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig { hidden_width: 128, depth: 4, time_embed_dim: 32 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection { iterations: 20_000, batch_size: 128, learning_rate: 2e-4 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSection {
    pub budget: usize,
    pub schedule_method: SelectionMethod,
    pub sampler: SamplerKind,
    /// "linear" | "cubic" | "rbf".
    pub kernel: String,
    /// Positive bandwidth, or "median" for the median heuristic.
    pub rbf_sigma: RbfBandwidth,
    /// "identity" | "randproj" | "encoder".
    pub feature_map: String,
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    /// Held-out MMD² snapshot interval; 0 disables snapshots.
    pub heldout_every: usize,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        FinetuneSection {
            budget: 5,
            schedule_method: SelectionMethod::Linear,
            sampler: SamplerKind::Ddim,
            kernel: "cubic".into(),
            rbf_sigma: RbfBandwidth::Median,
            feature_map: "identity".into(),
            learning_rate: 5e-6,
            iterations: 500,
            batch_size: 128,
            heldout_every: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub reps: usize,
    pub batch_size: usize,
    /// k for precision/recall manifolds.
    pub knn_k: usize,
    /// K for the nearest-neighbor audit table.
    pub nn_k: usize,
    /// Rows generated by `sample`, `interpolate` and `nn-audit`.
    pub sample_count: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { reps: 8, batch_size: 128, knn_k: 3, nn_k: 5, sample_count: 512 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub budgets: Vec<usize>,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection { budgets: vec![5, 10, 20] }
    }
}

impl ExperimentConfig {
    /// Reads the file, applies `--set` overrides, deserializes, validates.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut value: toml::Value =
            text.parse().map_err(|e| Error::config(format!("config parse error: {e}")))?;
        for entry in overrides {
            apply_override(&mut value, entry)?;
        }
        let config: ExperimentConfig =
            value.try_into().map_err(|e| Error::config(format!("config field error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Parses and validates a config from TOML text (no overrides).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("config field error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Canonical TOML of the resolved config, frozen next to artifacts.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.dataset.n < 4 {
            problems.push("dataset.n: need at least 4 rows".to_string());
        }
        if !(0.0..1.0).contains(&self.dataset.heldout_fraction) {
            problems.push("dataset.heldout_fraction: must be in [0, 1)".to_string());
        }
        if self.schedule.timesteps == 0 {
            problems.push("schedule.timesteps: must be >= 1".to_string());
        }
        if !(self.schedule.beta_start > 0.0
            && self.schedule.beta_start <= self.schedule.beta_end
            && self.schedule.beta_end < 1.0)
        {
            problems.push("schedule: betas must satisfy 0 < start <= end < 1".to_string());
        }
        if self.denoiser.hidden_width == 0 || self.denoiser.depth == 0 {
            problems.push("denoiser: width and depth must be positive".to_string());
        }
        if self.denoiser.time_embed_dim == 0 || !self.denoiser.time_embed_dim.is_multiple_of(2) {
            problems.push("denoiser.time_embed_dim: must be positive and even".to_string());
        }
        if self.pretrain.iterations == 0 {
            problems.push("pretrain.iterations: must be >= 1".to_string());
        }
        if self.pretrain.batch_size == 0 {
            problems.push("pretrain.batch_size: must be >= 1".to_string());
        }
        if self.pretrain.learning_rate.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            problems.push("pretrain.learning_rate: must be positive".to_string());
        }
        if self.finetune.iterations == 0 {
            problems.push("finetune.iterations: must be >= 1".to_string());
        }
        if self.finetune.batch_size < 2 {
            problems.push("finetune.batch_size: must be >= 2".to_string());
        }
        if self.finetune.learning_rate.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            problems.push("finetune.learning_rate: must be positive".to_string());
        }
        if self.finetune.budget == 0 || self.finetune.budget > self.schedule.timesteps {
            problems.push(format!("finetune.budget: must be in 1..={}", self.schedule.timesteps));
        }
        if !matches!(self.finetune.kernel.as_str(), "linear" | "cubic" | "rbf") {
            problems.push(format!(
                "finetune.kernel: unknown kernel {:?} (linear|cubic|rbf)",
                self.finetune.kernel
            ));
        }
        if let RbfBandwidth::Sigma(s) = self.finetune.rbf_sigma {
            if s.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                problems.push("finetune.rbf_sigma: must be positive or \"median\"".to_string());
            }
        }
        if !matches!(self.finetune.feature_map.as_str(), "identity" | "randproj" | "encoder") {
            problems.push(format!(
                "finetune.feature_map: unknown map {:?} (identity|randproj|encoder)",
                self.finetune.feature_map
            ));
        }
        if self.eval.reps == 0 {
            problems.push("eval.reps: must be >= 1".to_string());
        }
        if self.eval.batch_size < 2 {
            problems.push("eval.batch_size: must be >= 2".to_string());
        }
        if self.eval.knn_k == 0 || self.eval.nn_k == 0 {
            problems.push("eval.knn_k / eval.nn_k: must be >= 1".to_string());
        }
        if self.eval.sample_count == 0 {
            problems.push("eval.sample_count: must be >= 1".to_string());
        }
        if self.ablate.budgets.is_empty() {
            problems.push("ablate.budgets: must list at least one budget".to_string());
        }
        for &b in &self.ablate.budgets {
            if b == 0 || b > self.schedule.timesteps {
                problems
                    .push(format!("ablate.budgets: {b} outside 1..={}", self.schedule.timesteps));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::config(problems.join("; ")))
        }
    }

    pub fn denoiser_spec(&self) -> DenoiserSpec {
        DenoiserSpec {
            input_dim: self.dataset.kind.dim(),
            hidden_width: self.denoiser.hidden_width,
            depth: self.denoiser.depth,
            time_embed_dim: self.denoiser.time_embed_dim,
        }
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        match self.finetune.kernel.as_str() {
            "linear" => KernelSpec::Linear,
            "cubic" => KernelSpec::Cubic,
            "rbf" => KernelSpec::Rbf { bandwidth: self.finetune.rbf_sigma },
            other => unreachable!("validated kernel name {other}"),
        }
    }
}

/// Applies one `path.to.key=value` override onto the parsed TOML tree.
/// The value side is parsed as TOML, so strings need quotes only when they
/// could read as another type.
fn apply_override(root: &mut toml::Value, entry: &str) -> Result<()> {
    let (path, raw_value) = entry
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {entry:?} is not key=value")))?;
    let parsed: toml::Value = format!("v = {raw_value}")
        .parse::<toml::Table>()
        .map(|mut t| t.remove("v").unwrap())
        .or_else(|_| {
            format!("v = {raw_value:?}").parse::<toml::Table>().map(|mut t| t.remove("v").unwrap())
        })
        .map_err(|e| Error::config(format!("override value {raw_value:?}: {e}")))?;

    let segments: Vec<&str> = path.trim().split('.').collect();
    let mut cursor = root;
    for (i, seg) in segments.iter().enumerate() {
        let table = cursor.as_table_mut().ok_or_else(|| {
            Error::config(format!("override path {path:?}: {seg} is not a table"))
        })?;
        if i + 1 == segments.len() {
            table.insert(seg.to_string(), parsed);
            return Ok(());
        }
        cursor =
            table.entry(seg.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    unreachable!("override path exhausted");
}
