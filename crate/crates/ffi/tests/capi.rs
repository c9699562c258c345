//! Drives the C ABI the way a foreign binding would: raw pointers, status
//! codes, explicit frees.

use std::ffi::{CStr, CString};

use mmdlab_ffi::{
    mmdlab_experiment_free, mmdlab_experiment_new, mmdlab_finetune, mmdlab_heldout_mmd2,
    mmdlab_input_dim, mmdlab_last_error, mmdlab_load_model, mmdlab_pretrain, mmdlab_sample,
    mmdlab_save_model, mmdlab_version, MmdlabExperiment, MmdlabModel, MmdlabStatus,
};

fn tiny_config() -> CString {
    CString::new(
        "seed = 5\noutput_dir = \"/tmp/mmdlab-ffi\"\n\n\
         [dataset]\nn = 128\nheldout_fraction = 0.25\n\n\
         [schedule]\ntimesteps = 20\n\n\
         [denoiser]\nhidden_width = 8\ndepth = 2\ntime_embed_dim = 4\n\n\
         [pretrain]\niterations = 5\nbatch_size = 8\n\n\
         [finetune]\nbudget = 2\niterations = 2\nbatch_size = 8\n\n\
         [eval]\nreps = 1\nbatch_size = 8\nsample_count = 8\n",
    )
    .unwrap()
}

fn new_experiment() -> *mut MmdlabExperiment {
    let config = tiny_config();
    let mut handle: *mut MmdlabExperiment = std::ptr::null_mut();
    let status = unsafe { mmdlab_experiment_new(config.as_ptr(), &mut handle) };
    assert_eq!(status, MmdlabStatus::Ok, "{}", last_error());
    assert!(!handle.is_null());
    handle
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(mmdlab_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(mmdlab_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn invalid_config_is_reported() {
    let config = CString::new("definitely not toml [").unwrap();
    let mut handle: *mut MmdlabExperiment = std::ptr::null_mut();
    let status = unsafe { mmdlab_experiment_new(config.as_ptr(), &mut handle) };
    assert_eq!(status, MmdlabStatus::InvalidConfig);
    assert!(handle.is_null());
    assert!(!last_error().is_empty());

    // Validation failures map to the same status, with a field message.
    let config =
        CString::new("seed = 1\noutput_dir = \"/tmp/x\"\n[pretrain]\niterations = 0\n").unwrap();
    let status = unsafe { mmdlab_experiment_new(config.as_ptr(), &mut handle) };
    assert_eq!(status, MmdlabStatus::InvalidConfig);
    assert!(last_error().contains("pretrain.iterations"));
}

#[test]
fn null_arguments_are_rejected() {
    let mut handle: *mut MmdlabExperiment = std::ptr::null_mut();
    assert_eq!(
        unsafe { mmdlab_experiment_new(std::ptr::null(), &mut handle) },
        MmdlabStatus::InvalidArgument
    );
    assert_eq!(unsafe { mmdlab_pretrain(std::ptr::null_mut()) }, MmdlabStatus::InvalidArgument);
    // Freeing null is a no-op.
    unsafe { mmdlab_experiment_free(std::ptr::null_mut()) };
}

#[test]
fn sampling_before_training_reports_missing_model() {
    let exp = new_experiment();
    let mut buf = vec![0.0f32; 16];
    let status =
        unsafe { mmdlab_sample(exp, MmdlabModel::Pretrained, 8, buf.as_mut_ptr(), buf.len()) };
    assert_eq!(status, MmdlabStatus::ModelMissing);
    unsafe { mmdlab_experiment_free(exp) };
}

#[test]
fn full_lifecycle_pretrain_finetune_sample_score() {
    let exp = new_experiment();
    assert_eq!(unsafe { mmdlab_input_dim(exp) }, 2);

    assert_eq!(unsafe { mmdlab_pretrain(exp) }, MmdlabStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { mmdlab_finetune(exp) }, MmdlabStatus::Ok, "{}", last_error());

    let n = 8usize;
    let mut buf = vec![f32::NAN; n * 2];
    let status =
        unsafe { mmdlab_sample(exp, MmdlabModel::Finetuned, n, buf.as_mut_ptr(), buf.len()) };
    assert_eq!(status, MmdlabStatus::Ok, "{}", last_error());
    assert!(buf.iter().all(|v| v.is_finite()));

    // Undersized buffers are rejected before any write.
    let status = unsafe { mmdlab_sample(exp, MmdlabModel::Finetuned, n, buf.as_mut_ptr(), 3) };
    assert_eq!(status, MmdlabStatus::InvalidArgument);

    let mut value = f64::NAN;
    let status = unsafe { mmdlab_heldout_mmd2(exp, MmdlabModel::Pretrained, &mut value) };
    assert_eq!(status, MmdlabStatus::Ok, "{}", last_error());
    assert!(value.is_finite());

    unsafe { mmdlab_experiment_free(exp) };
}

#[test]
fn save_and_load_roundtrip_through_the_abi() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("model.ckpt").to_str().unwrap()).unwrap();

    let exp = new_experiment();
    assert_eq!(unsafe { mmdlab_pretrain(exp) }, MmdlabStatus::Ok);
    assert_eq!(
        unsafe { mmdlab_save_model(exp, MmdlabModel::Pretrained, path.as_ptr()) },
        MmdlabStatus::Ok,
        "{}",
        last_error()
    );

    // Samples drawn before and after reloading into the other slot agree.
    let n = 4usize;
    let mut before = vec![0.0f32; n * 2];
    unsafe { mmdlab_sample(exp, MmdlabModel::Pretrained, n, before.as_mut_ptr(), before.len()) };
    assert_eq!(
        unsafe { mmdlab_load_model(exp, MmdlabModel::Finetuned, path.as_ptr()) },
        MmdlabStatus::Ok,
        "{}",
        last_error()
    );
    let mut after = vec![0.0f32; n * 2];
    unsafe { mmdlab_sample(exp, MmdlabModel::Finetuned, n, after.as_mut_ptr(), after.len()) };
    assert_eq!(before, after);

    // Loading garbage is an IO-class failure.
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"nonsense").unwrap();
    let bad_c = CString::new(bad.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { mmdlab_load_model(exp, MmdlabModel::Pretrained, bad_c.as_ptr()) },
        MmdlabStatus::IoError
    );
    unsafe { mmdlab_experiment_free(exp) };
}
