//! C ABI over the lab: an opaque experiment handle driven by the same TOML
//! configs as the CLI, status codes instead of Rust errors, and a
//! thread-local last-error message.
//!
//! The generated header lives at `include/mmdlab.h`. Lifecycle: create an
//! experiment from a config string, `mmdlab_pretrain` / `mmdlab_finetune`
//! it (or load checkpoints), then sample or score it. Every handle must be
//! released with `mmdlab_experiment_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use mmdlab::cli::{ExperimentConfig, RunContext};
use mmdlab::data::{deserialize_model, serialize_model};
use mmdlab::denoiser::{init_denoiser, pretrain, DenoiserParams, PretrainConfig};
use mmdlab::diffcore::AdamConfig;
use mmdlab::error::Error;
use mmdlab::eval::heldout_mmd2;
use mmdlab::finetune::{finetune, MMDConfig};
use mmdlab::sampler::sample_chain;

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmdlabStatus {
    Ok = 0,
    /// A pointer argument was null or an argument was out of range.
    InvalidArgument = 1,
    /// The config failed to parse or validate.
    InvalidConfig = 2,
    /// The operation itself failed; see `mmdlab_last_error`.
    RuntimeError = 3,
    /// Filesystem failure while loading or saving.
    IoError = 4,
    /// The requested model slot is empty (pretrain/finetune/load first).
    ModelMissing = 5,
}

/// Which model slot of the experiment a call addresses.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmdlabModel {
    Pretrained = 0,
    Finetuned = 1,
}

/// Opaque experiment state: resolved config, dataset, and model slots.
pub struct MmdlabExperiment {
    ctx: RunContext,
    pretrained: Option<DenoiserParams<f32>>,
    finetuned: Option<DenoiserParams<f32>>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized =
        CString::new(message.replace('\0', " ")).unwrap_or_else(|_| CString::new("error").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = sanitized);
}

fn status_of(err: &Error) -> MmdlabStatus {
    match err {
        Error::Config(_) => MmdlabStatus::InvalidConfig,
        Error::Io(_) => MmdlabStatus::IoError,
        Error::BadMagic { .. }
        | Error::UnsupportedVersion { .. }
        | Error::PayloadLength { .. }
        | Error::MalformedHeader(_) => MmdlabStatus::IoError,
        _ => MmdlabStatus::RuntimeError,
    }
}

/// Runs a fallible body, translating errors and panics into status codes.
fn guarded<F: FnOnce() -> Result<(), MmdlabStatus>>(body: F) -> MmdlabStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => MmdlabStatus::Ok,
        Ok(Err(status)) => status,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic across FFI boundary".into());
            set_error(&msg);
            MmdlabStatus::RuntimeError
        }
    }
}

fn lab_err(err: Error) -> MmdlabStatus {
    let status = status_of(&err);
    set_error(&err.to_string());
    status
}

fn invalid(message: &str) -> MmdlabStatus {
    set_error(message);
    MmdlabStatus::InvalidArgument
}

unsafe fn parse_path<'a>(ptr: *const c_char) -> Result<&'a Path, MmdlabStatus> {
    if ptr.is_null() {
        return Err(invalid("path is null"));
    }
    let s = unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| invalid("path is not UTF-8"))?;
    Ok(Path::new(s))
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl MmdlabExperiment {
    fn slot(&self, which: MmdlabModel) -> Result<&DenoiserParams<f32>, MmdlabStatus> {
        let model = match which {
            MmdlabModel::Pretrained => self.pretrained.as_ref(),
            MmdlabModel::Finetuned => self.finetuned.as_ref(),
        };
        model.ok_or_else(|| {
            set_error("requested model slot is empty");
            MmdlabStatus::ModelMissing
        })
    }
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn mmdlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent failure on this thread. Valid until the next
/// failing call on the same thread; never null.
#[no_mangle]
pub extern "C" fn mmdlab_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Creates an experiment from a TOML config string (same schema as the
/// CLI). On success writes a handle into `out`; free it with
/// [`mmdlab_experiment_free`].
///
/// # Safety
/// `config_toml` must be a valid NUL-terminated C string and `out` a valid
/// pointer to writable memory.
#[no_mangle]
pub unsafe extern "C" fn mmdlab_experiment_new(
    config_toml: *const c_char,
    out: *mut *mut MmdlabExperiment,
) -> MmdlabStatus {
    guarded(|| {
        if config_toml.is_null() || out.is_null() {
            return Err(invalid("null argument"));
        }
        let text = unsafe { CStr::from_ptr(config_toml) }
            .to_str()
            .map_err(|_| invalid("config is not UTF-8"))?;
        let config = ExperimentConfig::from_toml_str(text).map_err(lab_err)?;
        let ctx = RunContext::new(config).map_err(lab_err)?;
        let handle = Box::new(MmdlabExperiment { ctx, pretrained: None, finetuned: None });
        unsafe { out.write(Box::into_raw(handle)) };
        Ok(())
    })
}

/// Releases a handle created by [`mmdlab_experiment_new`]. Null is a no-op.
///
/// # Safety
/// `exp` must be a pointer previously returned by `mmdlab_experiment_new`
/// and not freed since.
#[no_mangle]
pub unsafe extern "C" fn mmdlab_experiment_free(exp: *mut MmdlabExperiment) {
    if !exp.is_null() {
        drop(unsafe { Box::from_raw(exp) });
    }
}

/// Data dimension of the experiment's dataset.
///
/// # Safety
/// `exp` must be a live experiment handle.
#[no_mangle]
pub unsafe extern "C" fn mmdlab_input_dim(exp: *const MmdlabExperiment) -> usize {
    if exp.is_null() {
        return 0;
    }
    unsafe { &*exp }.ctx.config.dataset.kind.dim()
}

/// Pretrains the denoiser per the config and stores it in the pretrained
/// slot.
///
/// # Safety
/// `exp` must be a live experiment handle.
#[no_mangle]
pub unsafe extern "C" fn mmdlab_pretrain(exp: *mut MmdlabExperiment) -> MmdlabStatus {
    guarded(|| {
        if exp.is_null() {
            return Err(invalid("null experiment"));
        }
        let exp = unsafe { &mut *exp };
        let config = &exp.ctx.config;
        let params0 = init_denoiser(config.denoiser_spec(), &mut stream_rng(config.seed, 1))
            .map_err(lab_err)?;
        let cfg = PretrainConfig {
            iterations: config.pretrain.iterations,
            batch_size: config.pretrain.batch_size,
            optimizer: AdamConfig::with_learning_rate(config.pretrain.learning_rate),
        };
        let (params, _) = pretrain(
            &params0,
            &exp.ctx.train,
            &exp.ctx.sched,
            &cfg,
            &mut stream_rng(config.seed, 2),
        )
        .map_err(lab_err)?;
        exp.pretrained = Some(params);
        Ok(())
    })
}

/// Finetunes the pretrained model under the configured budget and stores
/// the result in the finetuned slot.
///
/// # Safety
/// `exp` must be a live experiment handle.
#[no_mangle]
pub unsafe extern "C" fn mmdlab_finetune(exp: *mut MmdlabExperiment) -> MmdlabStatus {
    guarded(|| {
        if exp.is_null() {
            return Err(invalid("null experiment"));
        }
        let exp = unsafe { &mut *exp };
        let base = exp.slot(MmdlabModel::Pretrained)?.clone();
        let ft = &exp.ctx.config.finetune;
        let cfg = exp
            .ctx
            .finetune_config(
                exp.ctx.config.kernel_spec(),
                ft.budget,
                ft.schedule_method,
                ft.sampler,
            )
            .map_err(lab_err)?;
        let (tuned, _) =
            finetune(&base, &cfg, &exp.ctx.sched, &exp.ctx.dataset).map_err(lab_err)?;
        exp.finetuned = Some(tuned);
        Ok(())
    })
}

/// Draws `n` samples with the configured sampler and budget into `out`,
/// which must hold `n * input_dim` floats (`out_len` is that capacity).
///
/// # Safety
/// `exp` must be a live experiment handle and `out` must point to at least
/// `out_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn mmdlab_sample(
    exp: *mut MmdlabExperiment,
    which: MmdlabModel,
    n: usize,
    out: *mut f32,
    out_len: usize,
) -> MmdlabStatus {
    guarded(|| {
        if exp.is_null() || out.is_null() {
            return Err(invalid("null argument"));
        }
        let exp = unsafe { &mut *exp };
        let d = exp.ctx.config.dataset.kind.dim();
        if out_len < n * d {
            return Err(invalid("output buffer smaller than n * input_dim"));
        }
        let params = exp.slot(which)?;
        let ft = &exp.ctx.config.finetune;
        let subset = exp.ctx.subset(ft.budget, ft.schedule_method).map_err(lab_err)?;
        let batch = sample_chain(
            params,
            &exp.ctx.sched,
            &subset,
            ft.sampler,
            n,
            &mut stream_rng(exp.ctx.config.seed, 6),
        )
        .map_err(lab_err)?;
        unsafe {
            std::ptr::copy_nonoverlapping(batch.samples.data().as_ptr(), out, n * d);
        }
        Ok(())
    })
}

/// Held-out MMD² of the selected model at the configured budget, sampler,
/// kernel and feature map (mean over `eval.reps` repetitions).
///
/// # Safety
/// `exp` must be a live experiment handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mmdlab_heldout_mmd2(
    exp: *mut MmdlabExperiment,
    which: MmdlabModel,
    out: *mut f64,
) -> MmdlabStatus {
    guarded(|| {
        if exp.is_null() || out.is_null() {
            return Err(invalid("null argument"));
        }
        let exp = unsafe { &mut *exp };
        let params = exp.slot(which)?;
        let config = &exp.ctx.config;
        let ft = &config.finetune;
        let subset = exp.ctx.subset(ft.budget, ft.schedule_method).map_err(lab_err)?;
        let mmdcfg = MMDConfig {
            kernel: config.kernel_spec(),
            feature_map: exp.ctx.feature_map().map_err(lab_err)?,
            batch_size: config.eval.batch_size,
        };
        let report = heldout_mmd2(
            params,
            &exp.ctx.sched,
            &subset,
            ft.sampler,
            &exp.ctx.heldout,
            &mmdcfg,
            config.eval.reps,
            &mut stream_rng(config.seed, 7),
        )
        .map_err(lab_err)?;
        unsafe { out.write(report.value) };
        Ok(())
    })
}

/// Saves the selected model slot as a checkpoint file.
///
/// # Safety
/// `exp` must be a live experiment handle; `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn mmdlab_save_model(
    exp: *mut MmdlabExperiment,
    which: MmdlabModel,
    path: *const c_char,
) -> MmdlabStatus {
    guarded(|| {
        if exp.is_null() {
            return Err(invalid("null experiment"));
        }
        let exp = unsafe { &mut *exp };
        let path = unsafe { parse_path(path) }?;
        let params = exp.slot(which)?;
        serialize_model(params, path).map_err(lab_err)
    })
}

/// Loads a checkpoint file into the selected model slot. The checkpoint
/// architecture must match the experiment config.
///
/// # Safety
/// `exp` must be a live experiment handle; `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn mmdlab_load_model(
    exp: *mut MmdlabExperiment,
    which: MmdlabModel,
    path: *const c_char,
) -> MmdlabStatus {
    guarded(|| {
        if exp.is_null() {
            return Err(invalid("null experiment"));
        }
        let exp = unsafe { &mut *exp };
        let path = unsafe { parse_path(path) }?;
        let params = deserialize_model(path).map_err(lab_err)?;
        if params.spec() != &exp.ctx.config.denoiser_spec() {
            set_error("checkpoint architecture does not match the experiment config");
            return Err(MmdlabStatus::InvalidConfig);
        }
        match which {
            MmdlabModel::Pretrained => exp.pretrained = Some(params),
            MmdlabModel::Finetuned => exp.finetuned = Some(params),
        }
        Ok(())
    })
}
