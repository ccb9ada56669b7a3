/*
 * eegdir C API.
 *
 * Every entry point returns an eegdir_status. On failure the message for the
 * calling thread is available from eegdir_last_error() until the next call on
 * that thread. Handles are opaque; each *_free accepts NULL.
 *
 * Handles are not internally synchronized. A model may be shared read-only by
 * concurrent eegdir_model_forward / eegdir_evaluate calls, but eegdir_train
 * needs exclusive access.
 */
#ifndef EEGDIR_EEGDIR_H
#define EEGDIR_EEGDIR_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define EEGDIR_API __declspec(dllexport)
#else
#define EEGDIR_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum eegdir_status {
    EEGDIR_OK = 0,
    EEGDIR_ERR_INVALID_ARGUMENT = 1,
    EEGDIR_ERR_DIMENSION = 2,
    EEGDIR_ERR_CONFIG = 3,
    EEGDIR_ERR_CONTRACT = 4,
    EEGDIR_ERR_NUMERIC = 5,
    EEGDIR_ERR_IO = 6,
    EEGDIR_ERR_BAD_MAGIC = 7,
    EEGDIR_ERR_VERSION = 8,
    EEGDIR_ERR_TRUNCATED = 9,
    EEGDIR_ERR_CONFIG_MISMATCH = 10,
    EEGDIR_ERR_SHAPE_MISMATCH = 11,
    EEGDIR_ERR_DEGENERATE_SAMPLE = 12,
    EEGDIR_ERR_INTERNAL = 99
} eegdir_status;

EEGDIR_API const char* eegdir_version(void);
EEGDIR_API const char* eegdir_last_error(void);
EEGDIR_API const char* eegdir_status_name(eegdir_status status);

/* ---- configuration ------------------------------------------------------ */

typedef struct eegdir_model_config {
    uint32_t seq_len;
    uint32_t patch;
    uint32_t d_model;
    uint32_t heads;
    uint32_t layers;
    uint32_t ffn_mult;
    double eps_ln;
    double eps_gn;
    int stabilized_retention;
    double theta_base;
} eegdir_model_config;

/* seq_len 512, patch 16, d_model 64, heads 4, layers 2, ffn_mult 2. */
EEGDIR_API void eegdir_model_config_default(eegdir_model_config* cfg);
EEGDIR_API eegdir_status eegdir_model_config_validate(const eegdir_model_config* cfg);

typedef struct eegdir_train_config {
    uint32_t epochs;
    uint32_t batch_size;
    uint64_t seed;
    double lr;
    double beta1;
    double beta2;
    double eps_adam;
    double weight_decay;
    uint32_t log_every;          /* checkpoint cadence in epochs, 0 = end only */
    const char* checkpoint_path; /* may be NULL */
    const char* log_path;        /* CSV "epoch,step,loss", may be NULL */
} eegdir_train_config;

/* epochs 100, batch 32, seed 42, lr 5e-4, betas (0.5, 0.9), eps 1e-8, wd 1e-2. */
EEGDIR_API void eegdir_train_config_default(eegdir_train_config* cfg);

/* ---- datasets ----------------------------------------------------------- */

typedef struct eegdir_dataset eegdir_dataset;

typedef enum eegdir_noise_kind { EEGDIR_NOISE_EOG = 0, EEGDIR_NOISE_EMG = 1 } eegdir_noise_kind;

typedef struct eegdir_build_options {
    uint32_t clean_count;
    uint32_t noise_count; /* 0 = clean_count */
    eegdir_noise_kind noise;
    int32_t snr_min;
    int32_t snr_max;
    double split_ratio;
    uint64_t seed;
    uint32_t seq_len;
    uint32_t workers;
} eegdir_build_options;

EEGDIR_API void eegdir_build_options_default(eegdir_build_options* opts);
EEGDIR_API eegdir_status eegdir_dataset_build(const eegdir_build_options* opts,
                                              eegdir_dataset** train, eegdir_dataset** test);
EEGDIR_API eegdir_status eegdir_dataset_read(const char* path, eegdir_dataset** out);
EEGDIR_API eegdir_status eegdir_dataset_write(const eegdir_dataset* ds, const char* path);
EEGDIR_API size_t eegdir_dataset_size(const eegdir_dataset* ds);
EEGDIR_API uint32_t eegdir_dataset_seq_len(const eegdir_dataset* ds);
/* Copies up to `cap` grid levels into `out`; returns the full grid length. */
EEGDIR_API size_t eegdir_dataset_snr_grid(const eegdir_dataset* ds, int32_t* out, size_t cap);
/* clean / noisy receive seq_len values each (normalized domain); any output may be NULL. */
EEGDIR_API eegdir_status eegdir_dataset_sample(const eegdir_dataset* ds, size_t index, double* clean,
                                               double* noisy, double* sigma_y, int32_t* snr_db);
EEGDIR_API void eegdir_dataset_free(eegdir_dataset* ds);

/* ---- models ------------------------------------------------------------- */

typedef struct eegdir_model eegdir_model;

EEGDIR_API eegdir_status eegdir_model_create(const eegdir_model_config* cfg, uint64_t seed,
                                             eegdir_model** out);
/* Requires patch == d_model: identity embedding/head with a zeroed trunk. */
EEGDIR_API eegdir_status eegdir_model_create_identity(const eegdir_model_config* cfg,
                                                      eegdir_model** out);
/* `expected` may be NULL; otherwise a differing stored config is CONFIG_MISMATCH. */
EEGDIR_API eegdir_status eegdir_model_load(const char* path, const eegdir_model_config* expected,
                                           eegdir_model** out);
EEGDIR_API eegdir_status eegdir_model_save(const eegdir_model* model, const char* path);
EEGDIR_API eegdir_status eegdir_model_get_config(const eegdir_model* model, eegdir_model_config* cfg);
EEGDIR_API size_t eegdir_model_param_count(const eegdir_model* model);
/* Normalized-domain forward pass on `batch` rows of seq_len samples. */
EEGDIR_API eegdir_status eegdir_model_forward(const eegdir_model* model, const double* input,
                                              size_t batch, double* output);
/* Raw-domain denoising: each row is divided by its population std, passed
 * through the network, and scaled back. */
EEGDIR_API eegdir_status eegdir_model_denoise(const eegdir_model* model, const double* input,
                                              size_t batch, double* output);
EEGDIR_API void eegdir_model_free(eegdir_model* model);

typedef void (*eegdir_progress_fn)(uint32_t epoch, uint32_t epochs, double mean_loss, void* user);

EEGDIR_API eegdir_status eegdir_train(eegdir_model* model, const eegdir_dataset* train,
                                      const eegdir_train_config* cfg, eegdir_progress_fn progress,
                                      void* user);

/* ---- evaluation --------------------------------------------------------- */

typedef struct eegdir_report eegdir_report;

typedef struct eegdir_report_row {
    int is_all; /* 1 for the all-SNR average row */
    int32_t snr_db;
    double rrmse_temporal;
    double rrmse_spectral;
    double cc;
    size_t n_samples;
} eegdir_report_row;

/* model == NULL evaluates the identity baseline x_hat = y. */
EEGDIR_API eegdir_status eegdir_evaluate(const eegdir_model* model, const eegdir_dataset* ds,
                                         uint32_t workers, eegdir_report** out);
EEGDIR_API size_t eegdir_report_rows(const eegdir_report* report);
EEGDIR_API eegdir_status eegdir_report_row_get(const eegdir_report* report, size_t index,
                                               eegdir_report_row* row);
EEGDIR_API eegdir_status eegdir_report_write_csv(const eegdir_report* report, const char* path);
EEGDIR_API void eegdir_report_free(eegdir_report* report);

/* Single-signal metrics on raw arrays. */
EEGDIR_API eegdir_status eegdir_metrics(const double* xhat, const double* x, size_t n,
                                        double* rrmse_temporal, double* rrmse_spectral, double* cc);

/* ---- self-verification -------------------------------------------------- */

typedef void (*eegdir_verify_fn)(const char* name, int passed, const char* detail, double seconds,
                                 void* user);

/* Runs the property suites named in `only` (all when n_only == 0). */
EEGDIR_API eegdir_status eegdir_verify(const char* const* only, size_t n_only, uint64_t seed,
                                       eegdir_verify_fn on_result, void* user, int* all_passed);

typedef enum eegdir_fault {
    EEGDIR_FAULT_NONE = 0,
    EEGDIR_FAULT_RETENTION_BACKWARD = 1
} eegdir_fault;

/* Test hook: corrupts a backward rule process-wide so gradient checks fail. */
EEGDIR_API eegdir_status eegdir_debug_inject_fault(eegdir_fault fault);

#ifdef __cplusplus
}
#endif

#endif /* EEGDIR_EEGDIR_H */
