#ifndef UAP_UAP_H
#define UAP_UAP_H

/* C interface to the uap library: data preparation, recurrent RUL models,
 * universal adversarial perturbations and their evaluation.
 *
 * Every function returning uap_status reports failure through the status
 * code and leaves a message retrievable with uap_last_error() on the calling
 * thread. Handles are opaque; free each with its matching *_free function
 * (passing NULL is allowed). Output handles are written only on success. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define UAP_API __declspec(dllexport)
#else
#define UAP_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum uap_status {
  UAP_OK = 0,
  UAP_E_USAGE = 1,     /* bad argument (NULL pointer, unknown name) */
  UAP_E_DIMENSION = 2, /* shape mismatch */
  UAP_E_DOMAIN = 3,    /* value outside an operation's domain */
  UAP_E_FORMAT = 4,    /* malformed checkpoint or perturbation file */
  UAP_E_PARSE = 5,     /* malformed C-MAPSS text file */
  UAP_E_CONFIG = 6,    /* invalid configuration value */
  UAP_E_IO = 7,        /* file could not be read or written */
  UAP_E_NUMERIC = 8,   /* NaN or infinity during computation */
  UAP_E_INTERNAL = 99
} uap_status;

typedef enum uap_split { UAP_SPLIT_TRAIN = 0, UAP_SPLIT_TEST = 1 } uap_split;

typedef struct uap_dataset uap_dataset;
typedef struct uap_model uap_model;
typedef struct uap_perturbation uap_perturbation;
typedef struct uap_report uap_report;
typedef struct uap_sweep uap_sweep;

UAP_API const char* uap_version(void);
/* Message for the last failed call on this thread; "" if none. */
UAP_API const char* uap_last_error(void);
/* "error", "info" or "debug". */
UAP_API uap_status uap_set_log_level(const char* level);

/* ---- data -------------------------------------------------------------- */

typedef struct uap_dataset_info {
  size_t steps;
  size_t features;
  size_t raw_features;
  size_t n_train;
  size_t n_test;
  size_t train_engines;
  size_t test_engines;
  size_t skipped_train_engines;
  size_t skipped_test_engines;
  size_t clamped_test_values;
  size_t zero_label_train;
  size_t zero_label_test;
} uap_dataset_info;

/* Loads train/test/RUL files and builds windows of length `steps`.
 * rul_cap < 0 means no cap. */
UAP_API uap_status uap_dataset_load(const char* train_path, const char* test_path,
                                    const char* rul_path, size_t steps, double rul_cap,
                                    uap_dataset** out);
/* FD001-shaped synthetic fleet, windowed as above. */
UAP_API uap_status uap_dataset_synthetic(uint64_t seed, size_t n_train, size_t n_test,
                                         size_t steps, double rul_cap, uap_dataset** out);
/* Writes train_FD001.txt, test_FD001.txt and RUL_FD001.txt into `dir`. */
UAP_API uap_status uap_synth_write(uint64_t seed, size_t n_train, size_t n_test, const char* dir);
UAP_API uap_status uap_dataset_info_get(const uap_dataset* ds, uap_dataset_info* out);
UAP_API void uap_dataset_free(uap_dataset* ds);

/* ---- models ------------------------------------------------------------ */

typedef struct uap_train_config {
  size_t epochs;
  double learning_rate;
  size_t batch_size;
  uint64_t seed; /* minibatch order */
  double clip_norm;
} uap_train_config;

typedef struct uap_model_info {
  char arch[8]; /* "lstm" or "gru" */
  size_t input_dim;
  size_t hidden_dim;
  uint64_t seed;
  double target_scale;
  size_t epochs_trained;
} uap_model_info;

UAP_API void uap_train_config_default(uap_train_config* cfg);
/* Trains a fresh model on the train split. init_seed seeds the weights. */
UAP_API uap_status uap_model_train(const uap_dataset* ds, const char* arch, size_t hidden_dim,
                                   uint64_t init_seed, const uap_train_config* cfg,
                                   uap_model** out);
UAP_API uap_status uap_model_load(const char* path, uap_model** out);
UAP_API uap_status uap_model_save(const uap_model* m, const char* path);
UAP_API uap_status uap_model_info_get(const uap_model* m, uap_model_info* out);
/* Copies up to `cap` per-epoch training losses; *count receives the total. */
UAP_API uap_status uap_model_loss_history(const uap_model* m, double* out, size_t cap,
                                          size_t* count);
/* Threads used for batched prediction (default 1). */
UAP_API uap_status uap_model_set_jobs(uap_model* m, size_t jobs);
/* windows: n * steps * features values, row-major. */
UAP_API uap_status uap_model_predict(const uap_model* m, const double* windows, size_t n,
                                     size_t steps, size_t features, double* out);
UAP_API void uap_model_free(uap_model* m);

/* ---- attacks ----------------------------------------------------------- */

typedef struct uap_attack_config {
  double epsilon;
  double alpha;
  double r_fool;
  size_t e_fool;
  double inner_step; /* <= 0 selects epsilon / 10 */
  size_t inner_max_iters;
  int clamp_inputs;
  uint64_t seed;
} uap_attack_config;

typedef struct uap_perturbation_info {
  size_t steps;
  size_t features;
  double epsilon;
  double alpha;
  double achieved_fooling;
  size_t epochs_run;
  double linf;
  char source_model[64];
} uap_perturbation_info;

/* Called after every update of U with its current L-infinity norm. */
typedef void (*uap_progress_fn)(void* user, size_t epoch, size_t sample, double linf);

UAP_API void uap_attack_config_default(uap_attack_config* cfg);
UAP_API uap_status uap_attack_compute(const uap_model* m, const uap_dataset* ds, uap_split split,
                                      const uap_attack_config* cfg, uap_progress_fn progress,
                                      void* user, uap_perturbation** out);
UAP_API uap_status uap_perturbation_zero(size_t steps, size_t features, double epsilon,
                                         uap_perturbation** out);
UAP_API uap_status uap_perturbation_load(const char* path, uap_perturbation** out);
UAP_API uap_status uap_perturbation_save(const uap_perturbation* p, const char* path);
UAP_API uap_status uap_perturbation_info_get(const uap_perturbation* p,
                                             uap_perturbation_info* out);
/* Copies steps * features values into out (cap must be large enough). */
UAP_API uap_status uap_perturbation_values(const uap_perturbation* p, double* out, size_t cap);
UAP_API void uap_perturbation_free(uap_perturbation* p);

/* ---- evaluation -------------------------------------------------------- */

typedef struct uap_report_summary {
  char model[64];
  char attack[64];
  double fooling_pct;
  double mape;
  size_t n_samples;
  size_t n_excluded;
  double mean_shift;          /* mean(attacked - clean) over samples */
  double last_window_raised;  /* fraction of engines whose last-window prediction rose */
} uap_report_summary;

/* p may be NULL for a clean baseline. Names may be NULL for defaults. */
UAP_API uap_status uap_evaluate(const uap_model* m, const uap_dataset* ds, uap_split split,
                                const uap_perturbation* p, double alpha, int clamp,
                                const char* model_name, const char* attack_name,
                                uap_report** out);
/* Six rows: (a,none) (a,U_a) (a,U_b) (b,none) (b,U_b) (b,U_a). */
UAP_API uap_status uap_transfer(const uap_model* a, const char* name_a,
                                const uap_perturbation* ua, const uap_model* b,
                                const char* name_b, const uap_perturbation* ub,
                                const uap_dataset* ds, uap_split split, double alpha, int clamp,
                                uap_report** out);
UAP_API size_t uap_report_count(const uap_report* r);
UAP_API uap_status uap_report_get(const uap_report* r, size_t index, uap_report_summary* out);
/* report.csv schema, one line per report. */
UAP_API uap_status uap_report_write_csv(const uap_report* r, const char* path);
UAP_API uap_status uap_report_write_json(const uap_report* r, double alpha, const char* path);
/* trajectory.csv schema: every window of report `index`, or only each
 * engine's last window when last_only is nonzero. */
UAP_API uap_status uap_report_write_rows(const uap_report* r, size_t index, int last_only,
                                         const char* path);
UAP_API void uap_report_free(uap_report* r);

/* Per-cycle rows for one engine (trajectory.csv schema); p may be NULL. */
UAP_API uap_status uap_trajectory_write(const uap_model* m, const uap_dataset* ds,
                                        uap_split split, int engine_id,
                                        const uap_perturbation* p, int clamp, const char* path);
/* Clean against attacked input values of one window. */
UAP_API uap_status uap_traces_write(const uap_dataset* ds, uap_split split, size_t window,
                                    const uap_perturbation* p, int clamp, const char* path);

/* A fresh UAP per epsilon on attack_split, evaluated on eval_split. */
UAP_API uap_status uap_sweep_run(const uap_model* m, const uap_dataset* ds,
                                 uap_split attack_split, uap_split eval_split,
                                 const double* epsilons, size_t n, const uap_attack_config* cfg,
                                 size_t jobs, uap_sweep** out);
UAP_API size_t uap_sweep_count(const uap_sweep* s);
UAP_API uap_status uap_sweep_get(const uap_sweep* s, size_t index, double* epsilon,
                                 double* fooling_pct, double* mape);
UAP_API uap_status uap_sweep_write_csv(const uap_sweep* s, const char* path);
UAP_API uap_status uap_sweep_write_json(const uap_sweep* s, const char* path);
UAP_API void uap_sweep_free(uap_sweep* s);

#ifdef __cplusplus
}
#endif

#endif /* UAP_UAP_H */
