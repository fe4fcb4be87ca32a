#ifndef KNN_RERANK_H
#define KNN_RERANK_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum KrrAggregator {
  KRR_AGGREGATOR_SUM = 0,
  KRR_AGGREGATOR_MEAN = 1,
  KRR_AGGREGATOR_MAX = 2,
} KrrAggregator;

typedef enum KrrMethod {
  KRR_METHOD_NONE = 0,
  KRR_METHOD_GNN = 1,
  KRR_METHOD_K_RECIPROCAL = 2,
  KRR_METHOD_AQE = 3,
  KRR_METHOD_ALPHA_QE = 4,
} KrrMethod;

typedef enum KrrRole {
  KRR_ROLE_QUERY = 0,
  KRR_ROLE_GALLERY = 1,
} KrrRole;

// Result of every fallible call.
typedef enum KrrStatus {
  KRR_STATUS_OK = 0,
  // A required pointer argument was null.
  KRR_STATUS_NULL_POINTER = 1,
  // A parameter is out of range or inconsistent with the data.
  KRR_STATUS_INVALID_ARGUMENT = 2,
  // The file system refused a read or write.
  KRR_STATUS_IO = 3,
  // A feature, sidecar or ranking file is malformed.
  KRR_STATUS_FORMAT = 4,
  // The data cannot be processed (zero vectors, empty rows, ...).
  KRR_STATUS_DATA = 5,
  // An internal panic was caught.
  KRR_STATUS_PANIC = 6,
} KrrStatus;

// Opaque feature set handle.
typedef struct KrrFeatureSet KrrFeatureSet;

// Opaque ranking handle.
typedef struct KrrRanking KrrRanking;

// Hyperparameters for [`krr_rerank`]. Fields a method does not use are
// ignored. Start from [`krr_params_default`].
typedef struct KrrParams {
  size_t k1;
  // Propagation neighbourhood (gnn, kreciprocal) or expansion size (aqe).
  size_t k2;
  double alpha;
  size_t layers;
  enum KrrAggregator aggregator;
  double lambda;
  bool include_self;
  // Worker threads; at least 1.
  size_t threads;
} KrrParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last failure on this thread, or an empty string.
// Valid until the next failing call on the same thread.
const char *krr_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *krr_version(void);

// Default hyperparameters for a given `k1`: `k2 = 7`, `alpha = 2`,
// two layers, sum aggregation, `lambda = 0.3`, query included in its own
// expansion, one thread.
struct KrrParams krr_params_default(size_t k1);

// `floor(n / c)` clamped to `[1, n - 1]`.
size_t krr_suggest_k1(size_t n, size_t c);

// Loads a feature file and its label sidecar.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum KrrStatus krr_feature_set_load(const char *path, struct KrrFeatureSet **out);

// Builds a feature set from `n × d` row-major values and `n` labels.
// Ids are generated (`q0, q1, ...` or `g0, g1, ...`), cameras are unset.
//
// # Safety
// `data` must hold `n * d` floats and `labels` `n` integers.
enum KrrStatus krr_feature_set_from_rows(size_t n,
                                         size_t d,
                                         const float *data,
                                         const int64_t *labels,
                                         enum KrrRole role,
                                         struct KrrFeatureSet **out);

// Writes a feature file and its sidecar.
//
// # Safety
// `fs` must be a live handle and `path` a NUL-terminated string.
enum KrrStatus krr_feature_set_write(const struct KrrFeatureSet *fs, const char *path);

// Number of rows, or 0 for a null handle.
//
// # Safety
// `fs` must be null or a live handle.
size_t krr_feature_set_len(const struct KrrFeatureSet *fs);

// Feature dimension, or 0 for a null handle.
//
// # Safety
// `fs` must be null or a live handle.
size_t krr_feature_set_dim(const struct KrrFeatureSet *fs);

// Releases a feature set. Null is ignored.
//
// # Safety
// `fs` must be null or a handle not yet freed.
void krr_feature_set_free(struct KrrFeatureSet *fs);

// Seeded Gaussian-cluster query and gallery sets.
//
// # Safety
// `query` and `gallery` must be writable.
enum KrrStatus krr_synth(size_t n_classes,
                         size_t per_class,
                         size_t dim,
                         double noise_sigma,
                         size_t queries_per_class,
                         uint64_t seed,
                         struct KrrFeatureSet **query,
                         struct KrrFeatureSet **gallery);

// Re-ranks `gallery` for every query. `params` may be null for
// `KRR_METHOD_NONE`.
//
// # Safety
// Handles must be live; `params` null or valid; `out` writable.
enum KrrStatus krr_rerank(const struct KrrFeatureSet *query,
                          const struct KrrFeatureSet *gallery,
                          enum KrrMethod method,
                          const struct KrrParams *params,
                          struct KrrRanking **out);

// Number of queries, or 0 for a null handle.
//
// # Safety
// `r` must be null or a live handle.
size_t krr_ranking_num_queries(const struct KrrRanking *r);

// Length of query `q`'s list, or 0 when out of range.
//
// # Safety
// `r` must be null or a live handle.
size_t krr_ranking_list_len(const struct KrrRanking *r, size_t q);

// Copies up to `cap` gallery indices (best first) and their scores for
// query `q`. Either output may be null. Higher scores rank first.
//
// # Safety
// Non-null outputs must have room for `cap` elements.
enum KrrStatus krr_ranking_get(const struct KrrRanking *r,
                               size_t q,
                               size_t *indices,
                               double *scores,
                               size_t cap);

// Wall-clock seconds of phase 1, phase 2 and the whole run.
//
// # Safety
// `r` must be a live handle; outputs may be null.
enum KrrStatus krr_ranking_timings(const struct KrrRanking *r,
                                   double *phase1,
                                   double *phase2,
                                   double *total);

// Writes the ranking as CSV (`query_id,rank,gallery_id,score`).
//
// # Safety
// Handles must be live and `path` a NUL-terminated string.
enum KrrStatus krr_ranking_write_csv(const struct KrrRanking *r,
                                     const struct KrrFeatureSet *query,
                                     const struct KrrFeatureSet *gallery,
                                     const char *path);

// Releases a ranking. Null is ignored.
//
// # Safety
// `r` must be null or a handle not yet freed.
void krr_ranking_free(struct KrrRanking *r);

// mAP and Recall@1 of a ranking, with junk filtering by label and camera.
//
// # Safety
// Handles must be live; outputs may be null.
enum KrrStatus krr_evaluate(const struct KrrRanking *r,
                            const struct KrrFeatureSet *query,
                            const struct KrrFeatureSet *gallery,
                            double *map,
                            double *recall_at_1);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KNN_RERANK_H */
