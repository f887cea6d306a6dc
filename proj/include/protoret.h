/*
 * protoret — few-shot prototypical meta-learning and nearest-neighbor
 * retrieval evaluation over precomputed embedding vectors.
 *
 * C API of the shared library. All objects are opaque handles created and
 * destroyed through these functions; every fallible call returns a
 * protoret_status and leaves a human-readable message in
 * protoret_last_error() (thread-local) on failure. Strings returned through
 * char** out-parameters are heap-allocated and must be released with
 * protoret_string_free().
 */

#ifndef PROTORET_H
#define PROTORET_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum protoret_status {
  PROTORET_OK = 0,
  PROTORET_ERROR_IO = 1,         /* file missing / unreadable / unwritable */
  PROTORET_ERROR_FORMAT = 2,     /* file exists but is malformed */
  PROTORET_ERROR_INVALID = 3,    /* bad argument or violated precondition */
  PROTORET_ERROR_INFEASIBLE = 4, /* data cannot satisfy the configuration */
  PROTORET_ERROR_INTERNAL = 5
} protoret_status;

/* Message describing the most recent failure on this thread. */
const char* protoret_last_error(void);
void protoret_string_free(char* s);
const char* protoret_version(void);

/* Stable derivation of independent seeds (sweep cells, parallel streams). */
uint64_t protoret_derive_seed(uint64_t base, uint64_t stream);

/* ------------------------------------------------------------------ */
/* Embedding corpora                                                    */
/* ------------------------------------------------------------------ */

typedef struct protoret_corpus protoret_corpus;

protoret_status protoret_corpus_load(const char* path, protoret_corpus** out);
protoret_status protoret_corpus_save(const protoret_corpus* corpus,
                                     const char* path);
void protoret_corpus_free(protoret_corpus* corpus);

size_t protoret_corpus_size(const protoret_corpus* corpus);
size_t protoret_corpus_dim(const protoret_corpus* corpus);
/* Borrowed pointers, valid while the corpus lives. NULL if row is out of range. */
const char* protoret_corpus_sample_id(const protoret_corpus* corpus, size_t row);
const char* protoret_corpus_label(const protoret_corpus* corpus, size_t row);
/* Copies the row into out[0..dim). */
protoret_status protoret_corpus_vector(const protoret_corpus* corpus, size_t row,
                                       double* out);

protoret_status protoret_corpus_l2_normalize(const protoret_corpus* corpus,
                                             protoret_corpus** out);
/* Feature-level fusion of count >= 2 corpora aligned by sample id. */
protoret_status protoret_corpus_fuse(const protoret_corpus* const* parts,
                                     size_t count, protoret_corpus** out);

/* ------------------------------------------------------------------ */
/* Synthetic corpora                                                    */
/* ------------------------------------------------------------------ */

typedef struct protoret_synth_spec {
  int n_classes;
  int dim;
  double zipf_s;
  int count_min;
  int count_max;
  double noise_sigma;
  uint64_t seed;
} protoret_synth_spec;

protoret_status protoret_synth_spec_default(protoret_synth_spec* spec);
protoret_status protoret_synth_generate(const protoret_synth_spec* spec,
                                        protoret_corpus** out);

/* ------------------------------------------------------------------ */
/* Split manifests                                                      */
/* ------------------------------------------------------------------ */

typedef struct protoret_manifest protoret_manifest;

protoret_status protoret_manifest_load(const char* path,
                                       const protoret_corpus* corpus,
                                       protoret_manifest** out);
protoret_status protoret_manifest_save(const protoret_manifest* manifest,
                                       const protoret_corpus* corpus,
                                       const char* path);
/* Deterministic per-class 60/10/20/10 train/val/gallery/test split; classes
 * with count <= rare_max_count are tagged rare. */
protoret_status protoret_manifest_synth(const protoret_corpus* corpus,
                                        int rare_max_count, uint64_t seed,
                                        protoret_manifest** out);
void protoret_manifest_free(protoret_manifest* manifest);

/* ------------------------------------------------------------------ */
/* Episodic sampling                                                    */
/* ------------------------------------------------------------------ */

/* Dumps the sampled episode stream as JSON lines (fields: episode, task,
 * classes, support ids, query ids). When manifest is non-NULL only train
 * rows are sampled, otherwise the whole corpus. */
protoret_status protoret_sample_episodes_jsonl(
    const protoret_corpus* corpus, const protoret_manifest* manifest, int n_way,
    int n_shot, int n_query, int tasks_per_episode, int episodes, uint64_t seed,
    char** jsonl_out);

/* ------------------------------------------------------------------ */
/* Training                                                             */
/* ------------------------------------------------------------------ */

enum {
  PROTORET_INIT_STANDARD = 0, /* identity (square) or column-orthonormal */
  PROTORET_INIT_RANDOM = 1    /* seeded Gaussian entries */
};

typedef struct protoret_train_config {
  double learning_rate;
  double weight_decay;
  int epochs;
  int episodes_per_epoch;
  int n_way;
  int n_shot;
  int n_query;
  int tasks_per_episode;
  uint64_t seed;
  int adapter_dim; /* 0 = corpus dim */
  int adapter_init;
} protoret_train_config;

protoret_status protoret_train_config_default(protoret_train_config* config);

typedef struct protoret_model protoret_model;
typedef struct protoret_classifier protoret_classifier;

/* Meta-training. On success returns the best-validation checkpoint, the
 * history as CSV (epoch,loss,val_top1), the best epoch index and its
 * validation top-1. Any out-parameter may be NULL if not wanted. */
protoret_status protoret_train_meta(const protoret_corpus* corpus,
                                    const protoret_manifest* manifest,
                                    const protoret_train_config* config,
                                    protoret_model** model_out,
                                    char** history_csv_out, int* best_epoch_out,
                                    double* best_val_top1_out);

protoret_status protoret_train_classifier(const protoret_corpus* corpus,
                                          const protoret_manifest* manifest,
                                          const protoret_train_config* config,
                                          protoret_classifier** model_out,
                                          char** history_csv_out,
                                          int* best_epoch_out,
                                          double* best_val_top1_out);

/* The untrained starting adapter for a config (for before/after comparisons). */
protoret_status protoret_initial_model(const protoret_corpus* corpus,
                                       const protoret_train_config* config,
                                       protoret_model** out);
/* Identity adapter of the given dimension. */
protoret_status protoret_model_identity(size_t dim, protoret_model** out);

/* ------------------------------------------------------------------ */
/* Checkpoints                                                          */
/* ------------------------------------------------------------------ */

protoret_status protoret_model_save(const protoret_model* model, const char* path);
protoret_status protoret_model_load(const char* path, protoret_model** out);
void protoret_model_free(protoret_model* model);
size_t protoret_model_dim_in(const protoret_model* model);
size_t protoret_model_dim_out(const protoret_model* model);
double protoret_model_tau(const protoret_model* model);

protoret_status protoret_classifier_save(const protoret_classifier* model,
                                         const char* path);
protoret_status protoret_classifier_load(const char* path,
                                         protoret_classifier** out);
void protoret_classifier_free(protoret_classifier* model);
size_t protoret_classifier_num_classes(const protoret_classifier* model);

enum { PROTORET_CHECKPOINT_MODEL = 0, PROTORET_CHECKPOINT_CLASSIFIER = 1 };
protoret_status protoret_checkpoint_kind(const char* path, int* kind_out);

/* ------------------------------------------------------------------ */
/* Evaluation                                                           */
/* ------------------------------------------------------------------ */

enum { PROTORET_AGG_MIN = 0, PROTORET_AGG_MEAN = 1 };

typedef struct protoret_report protoret_report;

protoret_status protoret_eval_frequent(const protoret_model* model,
                                       const protoret_corpus* corpus,
                                       const protoret_manifest* manifest,
                                       int aggregation, protoret_report** out);
protoret_status protoret_eval_rare_cv(const protoret_model* model,
                                      const protoret_corpus* corpus,
                                      const protoret_manifest* manifest,
                                      uint64_t seed, int aggregation,
                                      protoret_report** out);
protoret_status protoret_eval_classification(const protoret_classifier* model,
                                             const protoret_corpus* corpus,
                                             const protoret_manifest* manifest,
                                             protoret_report** out);
void protoret_report_free(protoret_report* report);

protoret_status protoret_report_json(const protoret_report* report, char** out);
protoret_status protoret_report_csv(const protoret_report* report,
                                    int include_header, char** out);
/* Accuracy at k (one of 1, 5, 10, 30). */
protoret_status protoret_report_topk(const protoret_report* report, int k,
                                     double* out);
size_t protoret_report_n_queries(const protoret_report* report);

#ifdef __cplusplus
}
#endif

#endif /* PROTORET_H */
