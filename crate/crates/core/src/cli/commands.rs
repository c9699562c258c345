//! Subcommand implementations and artifact writers.
//!
//! Artifact rules: every command freezes its resolved config next to its
//! outputs, CSVs carry a header row with floats at 9 significant digits,
//! and no command ever overwrites an existing checkpoint file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{deserialize_model, sample_toy, serialize_model, split_dataset};
use crate::denoiser::{init_denoiser, pretrain, DenoiserParams, PretrainConfig};
use crate::diffcore::{AdamConfig, Tensor};
use crate::error::{Error, Result};
use crate::eval::{
    frechet_feature_distance, heldout_mmd2, knn_precision_recall, nn_audit, slerp, MetricReport,
};
use crate::finetune::{finetune, FinetuneConfig, MMDConfig};
use crate::mmd::{featurize, train_encoder, FeatureMap, KernelSpec};
use crate::real::Real;
use crate::sampler::{
    sample_chain, sample_chain_from, select_timesteps, SamplerKind, SelectionMethod, TimestepSubset,
};
use crate::schedule::NoiseSchedule;

use super::config::ExperimentConfig;

/// Stream ids for the per-purpose rngs derived from the root seed.
mod streams {
    pub const DATASET: u64 = 0;
    pub const INIT: u64 = 1;
    pub const PRETRAIN: u64 = 2;
    pub const FEATURE_MAP: u64 = 5;
    pub const SAMPLE: u64 = 6;
    pub const EVAL: u64 = 7;
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Shared state every command starts from: the schedule and the
/// deterministically regenerated dataset with its split.
pub struct RunContext {
    pub config: ExperimentConfig,
    pub sched: NoiseSchedule,
    pub dataset: Tensor<f32>,
    pub train: Tensor<f32>,
    pub heldout: Tensor<f32>,
}

impl RunContext {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let sched = NoiseSchedule::linear(
            config.schedule.timesteps,
            config.schedule.beta_start,
            config.schedule.beta_end,
        )?;
        let mut rng = stream_rng(config.seed, streams::DATASET);
        let dataset: Tensor<f32> = sample_toy(config.dataset.kind, config.dataset.n, &mut rng)?;
        let (train, heldout) =
            split_dataset(&dataset, config.dataset.heldout_fraction, config.seed)?;
        Ok(RunContext { config, sched, dataset, train, heldout })
    }

    fn output(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    pub fn feature_map(&self) -> Result<FeatureMap<f32>> {
        let d = self.config.dataset.kind.dim();
        let mut rng = stream_rng(self.config.seed, streams::FEATURE_MAP);
        Ok(match self.config.finetune.feature_map.as_str() {
            "identity" => FeatureMap::Identity,
            "randproj" => FeatureMap::random_projection(d, 16, &mut rng),
            "encoder" => train_encoder(&self.train, 16, 8, 2000, 128, &mut rng)?,
            other => unreachable!("validated feature map {other}"),
        })
    }

    pub fn subset(&self, budget: usize, method: SelectionMethod) -> Result<TimestepSubset> {
        select_timesteps(method, self.config.schedule.timesteps, budget)
    }

    pub fn finetune_config(
        &self,
        kernel: KernelSpec,
        budget: usize,
        method: SelectionMethod,
        sampler: SamplerKind,
    ) -> Result<FinetuneConfig<f32>> {
        let ft = &self.config.finetune;
        Ok(FinetuneConfig {
            subset: self.subset(budget, method)?,
            sampler,
            mmd: MMDConfig { kernel, feature_map: self.feature_map()?, batch_size: ft.batch_size },
            optimizer: AdamConfig::with_learning_rate(ft.learning_rate),
            iterations: ft.iterations,
            seed: self.config.seed,
            heldout_every: (ft.heldout_every > 0).then_some(ft.heldout_every),
            heldout_fraction: self.config.dataset.heldout_fraction,
            use_checkpointing: true,
        })
    }

    pub fn load_model(&self, path: &Path) -> Result<DenoiserParams<f32>> {
        let params = deserialize_model(path)?;
        let want = self.config.denoiser_spec();
        if params.spec() != &want {
            return Err(Error::config(format!(
                "checkpoint {} was built for {:?}, config describes {:?}",
                path.display(),
                params.spec(),
                want
            )));
        }
        Ok(params)
    }

    /// Explicit path, else the finetuned checkpoint, else the pretrained one.
    pub fn resolve_checkpoint(&self, explicit: Option<&Path>) -> Result<PathBuf> {
        if let Some(p) = explicit {
            return Ok(p.to_path_buf());
        }
        for candidate in ["finetuned.ckpt", "pretrained.ckpt"] {
            let p = self.output(candidate);
            if p.exists() {
                return Ok(p);
            }
        }
        Err(Error::config(format!(
            "no checkpoint in {}; run `pretrain` first or pass --checkpoint",
            self.config.output_dir.display()
        )))
    }
}

/// 9 significant digits, the CSV float convention.
fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

fn freeze_config(ctx: &RunContext, command: &str) -> Result<()> {
    write_text(&ctx.output(format!("{command}.config.toml").as_str()), &ctx.config.to_toml())
}

fn guard_new_checkpoint(path: &Path) -> Result<()> {
    if path.exists() {
        return Err(Error::config(format!(
            "refusing to overwrite existing checkpoint {}",
            path.display()
        )));
    }
    Ok(())
}

fn run_id(ctx: &RunContext, command: &str) -> String {
    format!("{command}-s{}", ctx.config.seed)
}

struct MetricRow {
    run_id: String,
    report: MetricReport,
    kernel: String,
    feature_map: String,
    budget: usize,
    sampler: String,
}

const METRICS_HEADER: &str = "run_id,metric,value,std,reps,kernel,feature_map,budget,sampler\n";

fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.run_id,
            r.report.metric,
            fmt_float(r.report.value),
            fmt_float(r.report.std),
            r.report.reps,
            r.kernel,
            r.feature_map,
            r.budget,
            r.sampler
        );
    }
    out
}

fn append_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let body = metrics_csv(rows);
    if path.exists() {
        let existing = std::fs::read_to_string(path)?;
        let without_header = body.strip_prefix(METRICS_HEADER).unwrap();
        write_text(path, &format!("{existing}{without_header}"))
    } else {
        write_text(path, &body)
    }
}

fn sampler_name(kind: SamplerKind) -> &'static str {
    match kind {
        SamplerKind::Ddpm => "ddpm",
        SamplerKind::Ddim => "ddim",
    }
}

fn method_name(method: SelectionMethod) -> &'static str {
    match method {
        SelectionMethod::Linear => "linear",
        SelectionMethod::Quadratic => "quadratic",
    }
}

fn batch_csv<R: Real>(batch: &Tensor<R>, extra_col: Option<(&str, &[f64])>) -> String {
    let (n, d) = batch.rows_cols().expect("rank-2 batch");
    let mut out = String::new();
    if let Some((name, _)) = extra_col {
        out.push_str(name);
        out.push(',');
    }
    out.push_str(&(0..d).map(|j| format!("dim{j}")).collect::<Vec<_>>().join(","));
    out.push('\n');
    for i in 0..n {
        if let Some((_, vals)) = extra_col {
            out.push_str(&fmt_float(vals[i]));
            out.push(',');
        }
        let row: Vec<String> = batch.row(i).iter().map(|v| fmt_float(v.as_f64())).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn cmd_pretrain(ctx: &RunContext) -> Result<()> {
    let ckpt_path = ctx.output("pretrained.ckpt");
    guard_new_checkpoint(&ckpt_path)?;

    // Dataset artifact: CSV plus sidecar with the generation parameters and
    // the stored standardization constants.
    write_text(&ctx.output("dataset.csv"), &batch_csv(&ctx.dataset, None))?;
    let (mean, std) = ctx.config.dataset.kind.standardization();
    let sidecar = format!(
        "kind = \"{}\"\nseed = {}\nn = {}\nmean = [{}, {}]\nstd = [{}, {}]\n",
        ctx.config.dataset.kind.name(),
        ctx.config.seed,
        ctx.config.dataset.n,
        fmt_float(mean[0]),
        fmt_float(mean[1]),
        fmt_float(std[0]),
        fmt_float(std[1]),
    );
    write_text(&ctx.output("dataset.meta.toml"), &sidecar)?;

    let spec = ctx.config.denoiser_spec();
    let mut init_rng = stream_rng(ctx.config.seed, streams::INIT);
    let params0: DenoiserParams<f32> = init_denoiser(spec, &mut init_rng)?;
    let cfg = PretrainConfig {
        iterations: ctx.config.pretrain.iterations,
        batch_size: ctx.config.pretrain.batch_size,
        optimizer: AdamConfig::with_learning_rate(ctx.config.pretrain.learning_rate),
    };
    let mut rng = stream_rng(ctx.config.seed, streams::PRETRAIN);
    let (params, history) = pretrain(&params0, &ctx.train, &ctx.sched, &cfg, &mut rng)?;

    serialize_model(&params, &ckpt_path)?;
    let mut loss_csv = String::from("iteration,loss\n");
    for (i, loss) in history.iter().enumerate() {
        let _ = writeln!(loss_csv, "{},{}", i + 1, fmt_float(*loss));
    }
    write_text(&ctx.output("pretrain_loss.csv"), &loss_csv)?;
    freeze_config(ctx, "pretrain")?;
    println!(
        "pretrained {} iterations on {} ({} rows); checkpoint at {}",
        history.len(),
        ctx.config.dataset.kind.name(),
        ctx.config.dataset.n,
        ckpt_path.display()
    );
    Ok(())
}

pub fn cmd_finetune(ctx: &RunContext, checkpoint: Option<&Path>) -> Result<()> {
    let out_path = ctx.output("finetuned.ckpt");
    guard_new_checkpoint(&out_path)?;
    let base = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| ctx.output("pretrained.ckpt"));
    let params = ctx.load_model(&base)?;

    let ft = &ctx.config.finetune;
    let cfg =
        ctx.finetune_config(ctx.config.kernel_spec(), ft.budget, ft.schedule_method, ft.sampler)?;
    let (tuned, history) = finetune(&params, &cfg, &ctx.sched, &ctx.dataset)?;

    serialize_model(&tuned, &out_path)?;
    let mut csv = String::from("iteration,loss,heldout_mmd2,millis\n");
    let heldout: std::collections::BTreeMap<usize, f64> = history.heldout.iter().copied().collect();
    for i in 0..history.losses.len() {
        let snapshot = heldout.get(&(i + 1)).map(|v| fmt_float(*v)).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            i + 1,
            fmt_float(history.losses[i]),
            snapshot,
            history.millis[i]
        );
    }
    write_text(&ctx.output("finetune_history.csv"), &csv)?;
    freeze_config(ctx, "finetune")?;
    println!(
        "finetuned {} iterations at budget {} ({} sampler, {} kernel); checkpoint at {}",
        history.losses.len(),
        ft.budget,
        sampler_name(ft.sampler),
        ft.kernel,
        out_path.display()
    );
    Ok(())
}

pub fn cmd_sample(ctx: &RunContext, checkpoint: Option<&Path>, count: Option<usize>) -> Result<()> {
    let ckpt = ctx.resolve_checkpoint(checkpoint)?;
    let params = ctx.load_model(&ckpt)?;
    let n = count.unwrap_or(ctx.config.eval.sample_count);
    let ft = &ctx.config.finetune;
    let subset = ctx.subset(ft.budget, ft.schedule_method)?;
    let mut rng = stream_rng(ctx.config.seed, streams::SAMPLE);
    let batch = sample_chain(&params, &ctx.sched, &subset, ft.sampler, n, &mut rng)?;

    write_text(&ctx.output("samples.csv"), &batch_csv(&batch.samples, None))?;
    let timesteps: Vec<String> = subset.descending().iter().map(|t| t.to_string()).collect();
    let sidecar = format!(
        "seed = {}\nsampler = \"{}\"\nmethod = \"{}\"\nbudget = {}\ntimesteps = [{}]\ncheckpoint = \"{}\"\n",
        ctx.config.seed,
        sampler_name(ft.sampler),
        method_name(ft.schedule_method),
        subset.budget(),
        timesteps.join(", "),
        ckpt.display(),
    );
    write_text(&ctx.output("samples.meta.toml"), &sidecar)?;
    freeze_config(ctx, "sample")?;
    println!("wrote {n} samples from {}", ckpt.display());
    Ok(())
}

/// The metric bundle behind `eval` and the ablation sweeps.
#[allow(clippy::too_many_arguments)]
fn evaluate_model(
    ctx: &RunContext,
    params: &DenoiserParams<f32>,
    kernel: KernelSpec,
    budget: usize,
    method: SelectionMethod,
    sampler: SamplerKind,
    full_bundle: bool,
    id: String,
) -> Result<Vec<MetricRow>> {
    let subset = ctx.subset(budget, method)?;
    let map = ctx.feature_map()?;
    let mmdcfg =
        MMDConfig { kernel, feature_map: map.clone(), batch_size: ctx.config.eval.batch_size };
    let mut rng = stream_rng(ctx.config.seed, streams::EVAL);
    let mut rows = Vec::new();

    let report = heldout_mmd2(
        params,
        &ctx.sched,
        &subset,
        sampler,
        &ctx.heldout,
        &mmdcfg,
        ctx.config.eval.reps,
        &mut rng,
    )?;
    rows.push(MetricRow {
        run_id: id.clone(),
        report,
        kernel: kernel.name().into(),
        feature_map: map.name().into(),
        budget,
        sampler: sampler_name(sampler).into(),
    });

    if full_bundle {
        let (heldout_n, _) = ctx.heldout.rows_cols()?;
        let n = ctx.config.eval.sample_count.min(heldout_n);
        if n < 2 {
            return Err(Error::config("eval needs at least 2 held-out rows"));
        }
        let generated = sample_chain(params, &ctx.sched, &subset, sampler, n, &mut rng)?.samples;
        let real = Tensor::from_rows(&(0..n).map(|i| ctx.heldout.row(i)).collect::<Vec<_>>())?;
        let fg = featurize(&map, &generated)?;
        let fr = featurize(&map, &real)?;

        let ffd = frechet_feature_distance(&fg, &fr)?;
        rows.push(MetricRow {
            run_id: id.clone(),
            report: MetricReport {
                metric: if ffd.regularized { "ffd_regularized".into() } else { "ffd".into() },
                value: ffd.value,
                std: 0.0,
                reps: 1,
                fingerprint: String::new(),
            },
            kernel: kernel.name().into(),
            feature_map: map.name().into(),
            budget,
            sampler: sampler_name(sampler).into(),
        });

        let k = ctx.config.eval.knn_k;
        let (precision, recall) = knn_precision_recall(&fr, &fg, k)?;
        for (name, value) in [("precision", precision), ("recall", recall)] {
            rows.push(MetricRow {
                run_id: id.clone(),
                report: MetricReport {
                    metric: name.into(),
                    value,
                    std: 0.0,
                    reps: 1,
                    fingerprint: String::new(),
                },
                kernel: kernel.name().into(),
                feature_map: map.name().into(),
                budget,
                sampler: sampler_name(sampler).into(),
            });
        }
    }
    Ok(rows)
}

pub fn cmd_eval(ctx: &RunContext, checkpoint: Option<&Path>) -> Result<()> {
    let ckpt = ctx.resolve_checkpoint(checkpoint)?;
    let params = ctx.load_model(&ckpt)?;
    let ft = &ctx.config.finetune;
    let rows = evaluate_model(
        ctx,
        &params,
        ctx.config.kernel_spec(),
        ft.budget,
        ft.schedule_method,
        ft.sampler,
        true,
        run_id(ctx, "eval"),
    )?;
    append_metrics(&ctx.output("metrics.csv"), &rows)?;
    freeze_config(ctx, "eval")?;
    for r in &rows {
        println!(
            "{} = {} (std {}, reps {})",
            r.report.metric, r.report.value, r.report.std, r.report.reps
        );
    }
    Ok(())
}

/// One ablation cell: optionally finetune from the base model, then score
/// held-out MMD² at the cell's settings.
struct AblationCell {
    label: String,
    kernel: KernelSpec,
    budget: usize,
    method: SelectionMethod,
    sampler: SamplerKind,
    finetune_first: bool,
}

fn run_cells(
    ctx: &RunContext,
    base: &DenoiserParams<f32>,
    cells: &[AblationCell],
    parallel: bool,
    command: &str,
) -> Result<Vec<MetricRow>> {
    let run_one = |cell: &AblationCell| -> Result<Vec<MetricRow>> {
        let params = if cell.finetune_first {
            let cfg = ctx.finetune_config(cell.kernel, cell.budget, cell.method, cell.sampler)?;
            finetune(base, &cfg, &ctx.sched, &ctx.dataset)?.0
        } else {
            base.clone()
        };
        evaluate_model(
            ctx,
            &params,
            cell.kernel,
            cell.budget,
            cell.method,
            cell.sampler,
            false,
            format!("{}-{}", run_id(ctx, command), cell.label),
        )
    };

    let results: Vec<Result<Vec<MetricRow>>> = if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = cells.iter().map(|c| scope.spawn(move || run_one(c))).collect();
            handles.into_iter().map(|h| h.join().expect("ablation thread panicked")).collect()
        })
    } else {
        cells.iter().map(run_one).collect()
    };

    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}

pub fn cmd_ablate_kernels(
    ctx: &RunContext,
    checkpoint: Option<&Path>,
    parallel: bool,
) -> Result<()> {
    let base = ctx.load_model(&ctx.resolve_checkpoint(checkpoint)?)?;
    let kernels = [
        KernelSpec::Linear,
        KernelSpec::Rbf { bandwidth: ctx.config.finetune.rbf_sigma },
        KernelSpec::Cubic,
    ];
    let mut cells = Vec::new();
    for kernel in kernels {
        for &budget in &ctx.config.ablate.budgets {
            cells.push(AblationCell {
                label: format!("{}-b{}", kernel.name(), budget),
                kernel,
                budget,
                method: ctx.config.finetune.schedule_method,
                sampler: ctx.config.finetune.sampler,
                finetune_first: true,
            });
        }
    }
    let rows = run_cells(ctx, &base, &cells, parallel, "ablate-kernels")?;
    write_text(&ctx.output("ablate_kernels.csv"), &metrics_csv(&rows))?;
    freeze_config(ctx, "ablate-kernels")?;
    println!("kernel ablation grid: {} cells", rows.len());
    Ok(())
}

pub fn cmd_ablate_schedule(
    ctx: &RunContext,
    checkpoint: Option<&Path>,
    parallel: bool,
) -> Result<()> {
    let base = ctx.load_model(&ctx.resolve_checkpoint(checkpoint)?)?;
    let mut cells = Vec::new();
    for method in [SelectionMethod::Linear, SelectionMethod::Quadratic] {
        for &budget in &ctx.config.ablate.budgets {
            // Surface invalid (method, budget) pairs before any training.
            ctx.subset(budget, method)?;
            cells.push(AblationCell {
                label: format!("{}-b{budget}", method_name(method)),
                kernel: ctx.config.kernel_spec(),
                budget,
                method,
                sampler: ctx.config.finetune.sampler,
                finetune_first: true,
            });
        }
    }
    let rows = run_cells(ctx, &base, &cells, parallel, "ablate-schedule")?;
    write_text(&ctx.output("ablate_schedule.csv"), &metrics_csv(&rows))?;
    freeze_config(ctx, "ablate-schedule")?;
    println!("timestep-schedule ablation grid: {} cells", rows.len());
    Ok(())
}

pub fn cmd_ablate_sampler(
    ctx: &RunContext,
    checkpoint: Option<&Path>,
    parallel: bool,
) -> Result<()> {
    let base = ctx.load_model(&ctx.resolve_checkpoint(checkpoint)?)?;
    let mut cells = Vec::new();
    for (sampler, finetuned) in [
        (SamplerKind::Ddpm, false),
        (SamplerKind::Ddim, false),
        (SamplerKind::Ddpm, true),
        (SamplerKind::Ddim, true),
    ] {
        for &budget in &ctx.config.ablate.budgets {
            cells.push(AblationCell {
                label: format!(
                    "{}{}-b{budget}",
                    sampler_name(sampler),
                    if finetuned { "+mmd" } else { "" }
                ),
                kernel: ctx.config.kernel_spec(),
                budget,
                method: ctx.config.finetune.schedule_method,
                sampler,
                finetune_first: finetuned,
            });
        }
    }
    let rows = run_cells(ctx, &base, &cells, parallel, "ablate-sampler")?;
    write_text(&ctx.output("ablate_sampler.csv"), &metrics_csv(&rows))?;
    freeze_config(ctx, "ablate-sampler")?;
    println!("sampler ablation grid: {} cells", rows.len());
    Ok(())
}

pub fn cmd_interpolate(ctx: &RunContext, checkpoint: Option<&Path>) -> Result<()> {
    let ckpt = ctx.resolve_checkpoint(checkpoint)?;
    let params = ctx.load_model(&ckpt)?;
    let ft = &ctx.config.finetune;
    let subset = ctx.subset(ft.budget, ft.schedule_method)?;
    let d = ctx.config.dataset.kind.dim();
    let mut rng = stream_rng(ctx.config.seed, streams::SAMPLE);
    let x0 = Tensor::<f32>::randn(vec![1, d], &mut rng);
    let x1 = Tensor::<f32>::randn(vec![1, d], &mut rng);

    // Latent interpolation rides the deterministic DDIM chain regardless of
    // the configured sampler.
    let mut samples = Vec::new();
    let mut alphas = Vec::new();
    for i in 0..=10 {
        let alpha = i as f64 / 10.0;
        let x_init = slerp(&x0, &x1, alpha)?;
        let out =
            sample_chain_from(&params, &ctx.sched, &subset, SamplerKind::Ddim, x_init, vec![])?;
        samples.push(out.samples);
        alphas.push(alpha);
    }
    let rows: Vec<&[f32]> = samples.iter().map(|s| s.row(0)).collect();
    let stacked = Tensor::from_rows(&rows)?;
    write_text(&ctx.output("interpolations.csv"), &batch_csv(&stacked, Some(("alpha", &alphas))))?;
    freeze_config(ctx, "interpolate")?;
    println!("wrote 11-point slerp interpolation from {}", ckpt.display());
    Ok(())
}

pub fn cmd_nn_audit(ctx: &RunContext, checkpoint: Option<&Path>) -> Result<()> {
    let ckpt = ctx.resolve_checkpoint(checkpoint)?;
    let params = ctx.load_model(&ckpt)?;
    let ft = &ctx.config.finetune;
    let subset = ctx.subset(ft.budget, ft.schedule_method)?;
    let map = ctx.feature_map()?;
    let mut rng = stream_rng(ctx.config.seed, streams::SAMPLE);
    let generated = sample_chain(
        &params,
        &ctx.sched,
        &subset,
        ft.sampler,
        ctx.config.eval.sample_count,
        &mut rng,
    )?;
    let table = nn_audit(&generated.samples, &ctx.train, ctx.config.eval.nn_k, &map)?;

    let mut csv = String::from("sample,rank,train_index,distance\n");
    for (i, row) in table.rows.iter().enumerate() {
        for (rank, (idx, dist)) in row.iter().enumerate() {
            let _ = writeln!(csv, "{i},{},{idx},{}", rank + 1, fmt_float(*dist));
        }
    }
    write_text(&ctx.output("nn_audit.csv"), &csv)?;
    freeze_config(ctx, "nn-audit")?;
    println!(
        "nearest-neighbor audit of {} samples against {} training rows (K = {})",
        table.rows.len(),
        ctx.train.shape()[0],
        table.k
    );
    Ok(())
}
