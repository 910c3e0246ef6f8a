#ifndef SRNN_H
#define SRNN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes shared with the CLI exit-code classes.
 */
typedef enum SrnnStatus {
  SRNN_STATUS_OK = 0,
  /**
   * A null pointer or malformed argument was passed.
   */
  SRNN_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Bad configuration values.
   */
  SRNN_STATUS_CONFIG = 2,
  /**
   * Data, parse, io or checkpoint failure.
   */
  SRNN_STATUS_DATA = 3,
  /**
   * Training diverged or aborted.
   */
  SRNN_STATUS_TRAINING = 4,
} SrnnStatus;

typedef struct SrnnCheckpoint SrnnCheckpoint;

typedef struct SrnnDataset SrnnDataset;

typedef struct SrnnGraph SrnnGraph;

/**
 * Model sizes for training.
 */
typedef struct SrnnHyperparams {
  size_t node_hidden;
  size_t spatial_hidden;
  size_t temporal_hidden;
  size_t embed;
  double dropout;
} SrnnHyperparams;

/**
 * Training-loop options. A non-positive `grad_clip` disables clipping.
 */
typedef struct SrnnTrainOptions {
  size_t epochs;
  double lr0;
  double decay;
  double grad_clip;
  uint64_t seed;
  bool shuffle;
  size_t window_len;
} SrnnTrainOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent error on this thread. The pointer stays valid
 * until the next failing call on the same thread.
 */
const char *srnn_last_error_message(void);

/**
 * Default hyperparameters: hidden 64 everywhere, embedding 32, dropout 0.5.
 */
struct SrnnHyperparams srnn_hyperparams_default(void);

/**
 * Default training options: 10 epochs, lr 0.0005 with 0.99 decay, clip 5.0,
 * shuffled windows of length 10.
 */
struct SrnnTrainOptions srnn_train_options_default(void);

/**
 * Load a road graph from an adjacency CSV.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must point to writable storage.
 */
enum SrnnStatus srnn_graph_load(const char *path, struct SrnnGraph **out);

/**
 * # Safety
 * `graph` must come from this library and not already be freed.
 */
void srnn_graph_free(struct SrnnGraph *graph);

/**
 * # Safety
 * `graph` must be a live handle from this library.
 */
size_t srnn_graph_node_count(const struct SrnnGraph *graph);

/**
 * # Safety
 * `graph` must be a live handle from this library.
 */
size_t srnn_graph_spatial_edge_count(const struct SrnnGraph *graph);

/**
 * Load and prepare a dataset for a graph. `path` may be a speeds CSV (it is
 * imputed, split at `split_fraction` and scaled) or a prepared-dataset JSON
 * written by the CLI. Columns are aligned to the graph's node order.
 *
 * # Safety
 * `path` must be NUL-terminated; `graph` must be live; `out` writable.
 */
enum SrnnStatus srnn_dataset_load(const char *path,
                                  const struct SrnnGraph *graph,
                                  double split_fraction,
                                  size_t window_len,
                                  struct SrnnDataset **out);

/**
 * # Safety
 * `dataset` must come from this library and not already be freed.
 */
void srnn_dataset_free(struct SrnnDataset *dataset);

/**
 * # Safety
 * `dataset` must be a live handle from this library.
 */
size_t srnn_dataset_rows(const struct SrnnDataset *dataset);

/**
 * # Safety
 * `dataset` must be a live handle from this library.
 */
size_t srnn_dataset_segments(const struct SrnnDataset *dataset);

/**
 * Train a model; on success `out` receives a new checkpoint handle.
 *
 * # Safety
 * `graph` and `dataset` must be live handles; `out` writable.
 */
enum SrnnStatus srnn_train(const struct SrnnGraph *graph,
                           const struct SrnnDataset *dataset,
                           struct SrnnHyperparams hyperparams,
                           struct SrnnTrainOptions options,
                           struct SrnnCheckpoint **out);

/**
 * # Safety
 * `path` must be NUL-terminated; `out` writable.
 */
enum SrnnStatus srnn_checkpoint_load(const char *path, struct SrnnCheckpoint **out);

/**
 * # Safety
 * `checkpoint` must be live; `path` NUL-terminated.
 */
enum SrnnStatus srnn_checkpoint_save(const struct SrnnCheckpoint *checkpoint, const char *path);

/**
 * # Safety
 * `checkpoint` must come from this library and not already be freed.
 */
void srnn_checkpoint_free(struct SrnnCheckpoint *checkpoint);

/**
 * Number of trainable scalars; independent of any graph.
 *
 * # Safety
 * `checkpoint` must be a live handle from this library.
 */
size_t srnn_checkpoint_param_count(const struct SrnnCheckpoint *checkpoint);

/**
 * Final-step evaluation RMSE in km/h over the dataset's held-out rows.
 *
 * # Safety
 * All handles must be live; `out_rmse` must point to a writable double.
 */
enum SrnnStatus srnn_evaluate(const struct SrnnCheckpoint *checkpoint,
                              const struct SrnnGraph *graph,
                              const struct SrnnDataset *dataset,
                              size_t window_len,
                              double *out_rmse);

/**
 * One-step forecast from raw history.
 *
 * `history` is row-major with `window_len + 1` rows of `node_count` speeds
 * in km/h (oldest first; the extra leading row feeds the temporal lookback).
 * `out` receives `node_count` predicted speeds in km/h.
 *
 * # Safety
 * `history` must hold (window_len + 1) * node_count doubles; `out` must hold
 * node_count doubles; handles must be live.
 */
enum SrnnStatus srnn_predict_next(const struct SrnnCheckpoint *checkpoint,
                                  const struct SrnnGraph *graph,
                                  const double *history,
                                  size_t window_len,
                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SRNN_H */
