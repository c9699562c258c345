#ifndef MMDLAB_H
#define MMDLAB_H

/* Generated by cbindgen from mmdlab-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Which model slot of the experiment a call addresses.
typedef enum MmdlabModel {
  MMDLAB_MODEL_PRETRAINED = 0,
  MMDLAB_MODEL_FINETUNED = 1,
} MmdlabModel;

// Status code returned by every fallible call.
typedef enum MmdlabStatus {
  MMDLAB_STATUS_OK = 0,
  // A pointer argument was null or an argument was out of range.
  MMDLAB_STATUS_INVALID_ARGUMENT = 1,
  // The config failed to parse or validate.
  MMDLAB_STATUS_INVALID_CONFIG = 2,
  // The operation itself failed; see `mmdlab_last_error`.
  MMDLAB_STATUS_RUNTIME_ERROR = 3,
  // Filesystem failure while loading or saving.
  MMDLAB_STATUS_IO_ERROR = 4,
  // The requested model slot is empty (pretrain/finetune/load first).
  MMDLAB_STATUS_MODEL_MISSING = 5,
} MmdlabStatus;

// Opaque experiment state: resolved config, dataset, and model slots.
typedef struct MmdlabExperiment MmdlabExperiment;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static C string.
const char *mmdlab_version(void);

// Message of the most recent failure on this thread. Valid until the next
// failing call on the same thread; never null.
const char *mmdlab_last_error(void);

// Creates an experiment from a TOML config string (same schema as the
// CLI). On success writes a handle into `out`; free it with
// [`mmdlab_experiment_free`].
//
// # Safety
// `config_toml` must be a valid NUL-terminated C string and `out` a valid
// pointer to writable memory.
enum MmdlabStatus mmdlab_experiment_new(const char *config_toml, struct MmdlabExperiment **out);

// Releases a handle created by [`mmdlab_experiment_new`]. Null is a no-op.
//
// # Safety
// `exp` must be a pointer previously returned by `mmdlab_experiment_new`
// and not freed since.
void mmdlab_experiment_free(struct MmdlabExperiment *exp);

// Data dimension of the experiment's dataset.
//
// # Safety
// `exp` must be a live experiment handle.
size_t mmdlab_input_dim(const struct MmdlabExperiment *exp);

// Pretrains the denoiser per the config and stores it in the pretrained
// slot.
//
// # Safety
// `exp` must be a live experiment handle.
enum MmdlabStatus mmdlab_pretrain(struct MmdlabExperiment *exp);

// Finetunes the pretrained model under the configured budget and stores
// the result in the finetuned slot.
//
// # Safety
// `exp` must be a live experiment handle.
enum MmdlabStatus mmdlab_finetune(struct MmdlabExperiment *exp);

// Draws `n` samples with the configured sampler and budget into `out`,
// which must hold `n * input_dim` floats (`out_len` is that capacity).
//
// # Safety
// `exp` must be a live experiment handle and `out` must point to at least
// `out_len` writable floats.
enum MmdlabStatus mmdlab_sample(struct MmdlabExperiment *exp,
                                enum MmdlabModel which,
                                size_t n,
                                float *out,
                                size_t out_len);

// Held-out MMD² of the selected model at the configured budget, sampler,
// kernel and feature map (mean over `eval.reps` repetitions).
//
// # Safety
// `exp` must be a live experiment handle and `out` a valid pointer.
enum MmdlabStatus mmdlab_heldout_mmd2(struct MmdlabExperiment *exp,
                                      enum MmdlabModel which,
                                      double *out);

// Saves the selected model slot as a checkpoint file.
//
// # Safety
// `exp` must be a live experiment handle; `path` a valid C string.
enum MmdlabStatus mmdlab_save_model(struct MmdlabExperiment *exp,
                                    enum MmdlabModel which,
                                    const char *path);

// Loads a checkpoint file into the selected model slot. The checkpoint
// architecture must match the experiment config.
//
// # Safety
// `exp` must be a live experiment handle; `path` a valid C string.
enum MmdlabStatus mmdlab_load_model(struct MmdlabExperiment *exp,
                                    enum MmdlabModel which,
                                    const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MMDLAB_H */
