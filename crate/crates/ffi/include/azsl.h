#ifndef AZSL_H
#define AZSL_H

#include <stddef.h>
#include <stdint.h>

typedef enum AzslStatus {
  AZSL_STATUS_OK = 0,
  AZSL_STATUS_NULL_POINTER = 1,
  AZSL_STATUS_INVALID_ARGUMENT = 2,
  AZSL_STATUS_SHAPE = 3,
  AZSL_STATUS_PARSE = 4,
  AZSL_STATUS_CONFIG = 5,
  AZSL_STATUS_PROTOCOL = 6,
  AZSL_STATUS_REFUSED = 7,
  AZSL_STATUS_IO = 8,
  AZSL_STATUS_UTF8 = 9,
  AZSL_STATUS_PANIC = 10,
} AzslStatus;

typedef enum AzslTeacherMode {
  AZSL_TEACHER_MODE_INDUCTIVE = 0,
  AZSL_TEACHER_MODE_TRANSDUCTIVE = 1,
} AzslTeacherMode;

typedef enum AzslRegularizer {
  AZSL_REGULARIZER_NONE = 0,
  AZSL_REGULARIZER_GAUSSIAN_KL = 1,
  AZSL_REGULARIZER_RBF_MMD = 2,
} AzslRegularizer;

// Opaque dataset handle.
typedef struct AzslDataset AzslDataset;

// Opaque teacher server handle.
typedef struct AzslServer AzslServer;

// Owned byte buffer handed to the caller.
typedef struct AzslBytes {
  uint8_t *data;
  size_t len;
} AzslBytes;

typedef struct AzslSyntheticSpec {
  size_t classes;
  size_t seen;
  size_t dim_x;
  size_t dim_a;
  size_t per_class;
  double separation;
  double noise;
  size_t semantic_rank;
  uint64_t link_seed;
} AzslSyntheticSpec;

typedef struct AzslDatasetInfo {
  size_t rows;
  size_t dim_x;
  size_t dim_a;
  size_t classes;
} AzslDatasetInfo;

typedef struct AzslTeacherOptions {
  enum AzslTeacherMode teacher_mode;
  enum AzslRegularizer regularizer;
  double alpha;
  // Hidden widths; a zero width ends the list.
  size_t hidden[2];
  size_t epochs;
  size_t batch_size;
  double learning_rate;
  uint64_t seed;
} AzslTeacherOptions;

typedef struct AzslRunSummary {
  double czsl_u;
  double gzsl_u;
  double gzsl_s;
  double gzsl_h;
} AzslRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *azsl_version(void);

// Message of the last failed call on this thread, or NULL. Valid until the
// next call into the library on this thread.
const char *azsl_last_error(void);

// Releases a buffer returned by the library. Safe on an empty buffer.
//
// # Safety
// `bytes` must come from this library and not have been freed.
void azsl_bytes_free(struct AzslBytes bytes);

struct AzslSyntheticSpec azsl_synthetic_spec_default(void);

// Samples a synthetic dataset; its last `classes - seen` classes are unseen.
//
// # Safety
// `spec` must point to a valid spec and `out` to writable storage.
enum AzslStatus azsl_dataset_synthetic(const struct AzslSyntheticSpec *spec,
                                       uint64_t seed,
                                       struct AzslDataset **out);

// Loads a `.csv` or `.azb` feature file. No class is unseen until
// [`azsl_dataset_set_unseen`] is called.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum AzslStatus azsl_dataset_load(const char *path, struct AzslDataset **out);

// # Safety
// `ds` must be a live handle and `path` a NUL-terminated string.
enum AzslStatus azsl_dataset_save(const struct AzslDataset *ds, const char *path);

// Marks dense class ids as unseen.
//
// # Safety
// `ds` must be a live handle and `classes` must hold `len` values.
enum AzslStatus azsl_dataset_set_unseen(struct AzslDataset *ds,
                                        const uint32_t *classes,
                                        size_t len);

// # Safety
// `ds` must be a live handle and `info` writable.
enum AzslStatus azsl_dataset_info(const struct AzslDataset *ds, struct AzslDatasetInfo *info);

// # Safety
// `ds` must be NULL or a handle not yet freed.
void azsl_dataset_free(struct AzslDataset *ds);

struct AzslTeacherOptions azsl_teacher_options_default(void);

// Splits the dataset, trains the teacher and fits the regularizer.
//
// # Safety
// `ds` must be a live handle, `opts` valid and `out` writable.
enum AzslStatus azsl_server_new(const struct AzslDataset *ds,
                                const struct AzslTeacherOptions *opts,
                                struct AzslServer **out);

// Answers one protocol frame given as kind and payload. The answer frame's
// kind and payload are written to `out_kind` and `out_payload`; an error
// frame is still a successful call.
//
// # Safety
// `server` must be live, `payload` must hold `len` bytes, outputs writable.
enum AzslStatus azsl_server_handle(const struct AzslServer *server,
                                   uint8_t kind,
                                   const uint8_t *payload,
                                   size_t len,
                                   uint8_t *out_kind,
                                   struct AzslBytes *out_payload);

// Number of logged messages and how many of them are mid-risk.
//
// # Safety
// `server` must be live and both outputs writable.
enum AzslStatus azsl_server_log_counts(const struct AzslServer *server,
                                       size_t *total,
                                       size_t *mid_risk);

// Server transcript as a JSON document (not NUL-terminated).
//
// # Safety
// `server` must be live and `out` writable.
enum AzslStatus azsl_server_transcript_json(const struct AzslServer *server, struct AzslBytes *out);

// # Safety
// `server` must be NULL or a handle not yet freed.
void azsl_server_free(struct AzslServer *server);

// `2us / (u + s)`; fails on negative input.
//
// # Safety
// `out` must be writable.
enum AzslStatus azsl_harmonic_mean(double u, double s, double *out);

// Runs a full experiment from a config file, writing its output directory.
//
// # Safety
// `config_path` must be a NUL-terminated string and `out` writable.
enum AzslStatus azsl_run_config(const char *config_path, struct AzslRunSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AZSL_H */
