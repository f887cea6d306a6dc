#include "protoret.h"

#include <cstring>
#include <exception>
#include <new>
#include <sstream>
#include <string>

#include <json.hpp>

#include "core/corpus.hpp"
#include "core/error.hpp"
#include "core/eval.hpp"
#include "core/protohead.hpp"
#include "core/rng.hpp"
#include "core/sampler.hpp"
#include "core/synth.hpp"
#include "core/trainer.hpp"

using namespace protoret;

struct protoret_corpus {
  EmbeddingCorpus value;
};
struct protoret_manifest {
  SplitManifest value;
};
struct protoret_model {
  ProtoModel value;
};
struct protoret_classifier {
  ClassifierModel value;
};
struct protoret_report {
  RetrievalReport value;
};

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

char* copy_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

// Runs a callable, translating exceptions into status codes.
template <typename Fn>
protoret_status guarded(Fn&& fn) {
  try {
    fn();
    return PROTORET_OK;
  } catch (const IoError& e) {
    set_error(e.what());
    return PROTORET_ERROR_IO;
  } catch (const FormatError& e) {
    set_error(e.what());
    return PROTORET_ERROR_FORMAT;
  } catch (const InfeasibleError& e) {
    set_error(e.what());
    return PROTORET_ERROR_INFEASIBLE;
  } catch (const std::invalid_argument& e) {
    set_error(e.what());
    return PROTORET_ERROR_INVALID;
  } catch (const std::bad_alloc&) {
    set_error("out of memory");
    return PROTORET_ERROR_INTERNAL;
  } catch (const std::exception& e) {
    set_error(e.what());
    return PROTORET_ERROR_INTERNAL;
  }
}

protoret_status require(bool condition, const char* msg) {
  if (condition) return PROTORET_OK;
  set_error(msg);
  return PROTORET_ERROR_INVALID;
}

TrainConfig to_core_config(const protoret_train_config& c) {
  TrainConfig config;
  config.learning_rate = c.learning_rate;
  config.weight_decay = c.weight_decay;
  config.epochs = c.epochs;
  config.episodes_per_epoch = c.episodes_per_epoch;
  config.episode_spec.n_way = c.n_way;
  config.episode_spec.n_shot = c.n_shot;
  config.episode_spec.n_query = c.n_query;
  config.episode_spec.tasks_per_episode = c.tasks_per_episode;
  config.episode_spec.episodes = c.episodes_per_epoch;
  config.seed = c.seed;
  config.adapter_dim = c.adapter_dim < 0 ? 0 : static_cast<std::size_t>(c.adapter_dim);
  config.adapter_init = c.adapter_init == PROTORET_INIT_RANDOM
                            ? AdapterInit::random
                            : AdapterInit::standard;
  return config;
}

Aggregation to_aggregation(int agg) {
  return agg == PROTORET_AGG_MEAN ? Aggregation::mean : Aggregation::min;
}

} // namespace

extern "C" {

const char* protoret_last_error(void) { return g_last_error.c_str(); }

void protoret_string_free(char* s) { delete[] s; }

const char* protoret_version(void) { return "protoret 1.0.0"; }

uint64_t protoret_derive_seed(uint64_t base, uint64_t stream) {
  return Rng::derive_seed(base, stream);
}

/* corpus ----------------------------------------------------------- */

protoret_status protoret_corpus_load(const char* path, protoret_corpus** out) {
  if (auto st = require(path && out, "corpus_load: null argument")) return st;
  return guarded([&] { *out = new protoret_corpus{load_embeddings(path)}; });
}

protoret_status protoret_corpus_save(const protoret_corpus* corpus,
                                     const char* path) {
  if (auto st = require(corpus && path, "corpus_save: null argument")) return st;
  return guarded([&] { save_embeddings(corpus->value, path); });
}

void protoret_corpus_free(protoret_corpus* corpus) { delete corpus; }

size_t protoret_corpus_size(const protoret_corpus* corpus) {
  return corpus ? corpus->value.size() : 0;
}

size_t protoret_corpus_dim(const protoret_corpus* corpus) {
  return corpus ? corpus->value.dim() : 0;
}

const char* protoret_corpus_sample_id(const protoret_corpus* corpus, size_t row) {
  if (!corpus || row >= corpus->value.size()) return nullptr;
  return corpus->value.sample_ids[row].c_str();
}

const char* protoret_corpus_label(const protoret_corpus* corpus, size_t row) {
  if (!corpus || row >= corpus->value.size()) return nullptr;
  return corpus->value.class_labels[row].c_str();
}

protoret_status protoret_corpus_vector(const protoret_corpus* corpus, size_t row,
                                       double* out) {
  if (auto st = require(corpus && out, "corpus_vector: null argument")) return st;
  if (auto st = require(row < corpus->value.size(), "corpus_vector: row out of range"))
    return st;
  const auto src = corpus->value.vectors.row(row);
  std::memcpy(out, src.data(), src.size() * sizeof(double));
  return PROTORET_OK;
}

protoret_status protoret_corpus_l2_normalize(const protoret_corpus* corpus,
                                             protoret_corpus** out) {
  if (auto st = require(corpus && out, "l2_normalize: null argument")) return st;
  return guarded([&] { *out = new protoret_corpus{l2_normalize(corpus->value)}; });
}

protoret_status protoret_corpus_fuse(const protoret_corpus* const* parts,
                                     size_t count, protoret_corpus** out) {
  if (auto st = require(parts && out, "fuse: null argument")) return st;
  return guarded([&] {
    std::vector<const EmbeddingCorpus*> views;
    views.reserve(count);
    for (size_t i = 0; i < count; ++i) {
      if (!parts[i]) throw std::invalid_argument("fuse: null corpus");
      views.push_back(&parts[i]->value);
    }
    *out = new protoret_corpus{fuse_embeddings(views)};
  });
}

/* synth ------------------------------------------------------------ */

protoret_status protoret_synth_spec_default(protoret_synth_spec* spec) {
  if (auto st = require(spec != nullptr, "synth_spec_default: null argument"))
    return st;
  const SynthSpec d;
  spec->n_classes = d.n_classes;
  spec->dim = d.dim;
  spec->zipf_s = d.zipf_s;
  spec->count_min = d.count_min;
  spec->count_max = d.count_max;
  spec->noise_sigma = d.noise_sigma;
  spec->seed = d.seed;
  return PROTORET_OK;
}

protoret_status protoret_synth_generate(const protoret_synth_spec* spec,
                                        protoret_corpus** out) {
  if (auto st = require(spec && out, "synth_generate: null argument")) return st;
  return guarded([&] {
    SynthSpec s;
    s.n_classes = spec->n_classes;
    s.dim = spec->dim;
    s.zipf_s = spec->zipf_s;
    s.count_min = spec->count_min;
    s.count_max = spec->count_max;
    s.noise_sigma = spec->noise_sigma;
    s.seed = spec->seed;
    *out = new protoret_corpus{gen_synthetic_corpus(s).corpus};
  });
}

/* manifest ----------------------------------------------------------*/

protoret_status protoret_manifest_load(const char* path,
                                       const protoret_corpus* corpus,
                                       protoret_manifest** out) {
  if (auto st = require(path && corpus && out, "manifest_load: null argument"))
    return st;
  return guarded(
      [&] { *out = new protoret_manifest{load_manifest(path, corpus->value)}; });
}

protoret_status protoret_manifest_save(const protoret_manifest* manifest,
                                       const protoret_corpus* corpus,
                                       const char* path) {
  if (auto st = require(manifest && corpus && path, "manifest_save: null argument"))
    return st;
  return guarded([&] { save_manifest(manifest->value, corpus->value, path); });
}

protoret_status protoret_manifest_synth(const protoret_corpus* corpus,
                                        int rare_max_count, uint64_t seed,
                                        protoret_manifest** out) {
  if (auto st = require(corpus && out, "manifest_synth: null argument")) return st;
  return guarded([&] {
    *out = new protoret_manifest{synth_manifest(corpus->value, rare_max_count, seed)};
  });
}

void protoret_manifest_free(protoret_manifest* manifest) { delete manifest; }

/* sampler ------------------------------------------------------------*/

protoret_status protoret_sample_episodes_jsonl(
    const protoret_corpus* corpus, const protoret_manifest* manifest, int n_way,
    int n_shot, int n_query, int tasks_per_episode, int episodes, uint64_t seed,
    char** jsonl_out) {
  if (auto st = require(corpus && jsonl_out, "sample_episodes: null argument"))
    return st;
  return guarded([&] {
    EpisodeSpec spec;
    spec.n_way = n_way;
    spec.n_shot = n_shot;
    spec.n_query = n_query;
    spec.tasks_per_episode = tasks_per_episode;
    spec.episodes = episodes;
    validate_spec(spec);

    ClassIndex index;
    if (manifest) {
      if (manifest->value.role.size() != corpus->value.size())
        throw std::invalid_argument("sample_episodes: manifest does not match corpus");
      index = build_class_index(corpus->value, manifest->value.rows_with(Role::train));
    } else {
      index = build_class_index(corpus->value);
    }
    const auto eligible = eligible_class_positions(index, spec);

    Rng rng(seed);
    std::ostringstream out;
    for (int e = 0; e < spec.episodes; ++e) {
      const Episode episode = sample_episode(rng, index, spec, eligible);
      for (std::size_t t = 0; t < episode.tasks.size(); ++t) {
        const FewShotTask& task = episode.tasks[t];
        nlohmann::ordered_json j;
        j["episode"] = e;
        j["task"] = t;
        j["classes"] = task.classes;
        auto ids = [&](const std::vector<std::vector<std::size_t>>& groups) {
          nlohmann::ordered_json out_groups = nlohmann::ordered_json::array();
          for (const auto& group : groups) {
            nlohmann::ordered_json g = nlohmann::ordered_json::array();
            for (std::size_t row : group) g.push_back(corpus->value.sample_ids[row]);
            out_groups.push_back(g);
          }
          return out_groups;
        };
        j["support"] = ids(task.support);
        j["query"] = ids(task.query);
        out << j.dump() << '\n';
      }
    }
    *jsonl_out = copy_string(out.str());
  });
}

/* training ----------------------------------------------------------*/

protoret_status protoret_train_config_default(protoret_train_config* config) {
  if (auto st = require(config != nullptr, "train_config_default: null argument"))
    return st;
  const TrainConfig d;
  config->learning_rate = d.learning_rate;
  config->weight_decay = d.weight_decay;
  config->epochs = d.epochs;
  config->episodes_per_epoch = d.episodes_per_epoch;
  config->n_way = d.episode_spec.n_way;
  config->n_shot = d.episode_spec.n_shot;
  config->n_query = d.episode_spec.n_query;
  config->tasks_per_episode = d.episode_spec.tasks_per_episode;
  config->seed = d.seed;
  config->adapter_dim = static_cast<int>(d.adapter_dim);
  config->adapter_init = PROTORET_INIT_STANDARD;
  return PROTORET_OK;
}

protoret_status protoret_train_meta(const protoret_corpus* corpus,
                                    const protoret_manifest* manifest,
                                    const protoret_train_config* config,
                                    protoret_model** model_out,
                                    char** history_csv_out, int* best_epoch_out,
                                    double* best_val_top1_out) {
  if (auto st = require(corpus && manifest && config, "train_meta: null argument"))
    return st;
  return guarded([&] {
    auto [model, history] =
        train_meta(corpus->value, manifest->value, to_core_config(*config));
    if (history_csv_out) *history_csv_out = copy_string(history.to_csv());
    if (best_epoch_out) *best_epoch_out = history.best_epoch;
    if (best_val_top1_out) *best_val_top1_out = history.best_val_top1();
    if (model_out) *model_out = new protoret_model{std::move(model)};
  });
}

protoret_status protoret_train_classifier(const protoret_corpus* corpus,
                                          const protoret_manifest* manifest,
                                          const protoret_train_config* config,
                                          protoret_classifier** model_out,
                                          char** history_csv_out,
                                          int* best_epoch_out,
                                          double* best_val_top1_out) {
  if (auto st =
          require(corpus && manifest && config, "train_classifier: null argument"))
    return st;
  return guarded([&] {
    auto [model, history] =
        train_classifier(corpus->value, manifest->value, to_core_config(*config));
    if (history_csv_out) *history_csv_out = copy_string(history.to_csv());
    if (best_epoch_out) *best_epoch_out = history.best_epoch;
    if (best_val_top1_out) *best_val_top1_out = history.best_val_top1();
    if (model_out) *model_out = new protoret_classifier{std::move(model)};
  });
}

protoret_status protoret_initial_model(const protoret_corpus* corpus,
                                       const protoret_train_config* config,
                                       protoret_model** out) {
  if (auto st = require(corpus && config && out, "initial_model: null argument"))
    return st;
  return guarded([&] {
    *out = new protoret_model{
        initial_model(to_core_config(*config), corpus->value.dim())};
  });
}

protoret_status protoret_model_identity(size_t dim, protoret_model** out) {
  if (auto st = require(out != nullptr, "model_identity: null argument")) return st;
  if (auto st = require(dim >= 1, "model_identity: dim must be >= 1")) return st;
  return guarded([&] { *out = new protoret_model{make_identity_model(dim)}; });
}

/* checkpoints --------------------------------------------------------*/

protoret_status protoret_model_save(const protoret_model* model, const char* path) {
  if (auto st = require(model && path, "model_save: null argument")) return st;
  return guarded([&] { save_model(model->value, path); });
}

protoret_status protoret_model_load(const char* path, protoret_model** out) {
  if (auto st = require(path && out, "model_load: null argument")) return st;
  return guarded([&] { *out = new protoret_model{load_model(path)}; });
}

void protoret_model_free(protoret_model* model) { delete model; }

size_t protoret_model_dim_in(const protoret_model* model) {
  return model ? model->value.dim_in() : 0;
}

size_t protoret_model_dim_out(const protoret_model* model) {
  return model ? model->value.dim_out() : 0;
}

double protoret_model_tau(const protoret_model* model) {
  return model ? model->value.tau : 0.0;
}

protoret_status protoret_classifier_save(const protoret_classifier* model,
                                         const char* path) {
  if (auto st = require(model && path, "classifier_save: null argument")) return st;
  return guarded([&] { save_classifier(model->value, path); });
}

protoret_status protoret_classifier_load(const char* path,
                                         protoret_classifier** out) {
  if (auto st = require(path && out, "classifier_load: null argument")) return st;
  return guarded([&] { *out = new protoret_classifier{load_classifier(path)}; });
}

void protoret_classifier_free(protoret_classifier* model) { delete model; }

size_t protoret_classifier_num_classes(const protoret_classifier* model) {
  return model ? model->value.class_order.size() : 0;
}

protoret_status protoret_checkpoint_kind(const char* path, int* kind_out) {
  if (auto st = require(path && kind_out, "checkpoint_kind: null argument"))
    return st;
  return guarded([&] {
    *kind_out = checkpoint_kind(path) == CheckpointKind::proto
                    ? PROTORET_CHECKPOINT_MODEL
                    : PROTORET_CHECKPOINT_CLASSIFIER;
  });
}

/* evaluation ---------------------------------------------------------*/

protoret_status protoret_eval_frequent(const protoret_model* model,
                                       const protoret_corpus* corpus,
                                       const protoret_manifest* manifest,
                                       int aggregation, protoret_report** out) {
  if (auto st =
          require(model && corpus && manifest && out, "eval_frequent: null argument"))
    return st;
  return guarded([&] {
    *out = new protoret_report{frequent_retrieval_protocol(
        model->value, corpus->value, manifest->value, to_aggregation(aggregation))};
  });
}

protoret_status protoret_eval_rare_cv(const protoret_model* model,
                                      const protoret_corpus* corpus,
                                      const protoret_manifest* manifest,
                                      uint64_t seed, int aggregation,
                                      protoret_report** out) {
  if (auto st =
          require(model && corpus && manifest && out, "eval_rare_cv: null argument"))
    return st;
  return guarded([&] {
    *out = new protoret_report{rare_cv_protocol(model->value, corpus->value,
                                                manifest->value, seed,
                                                to_aggregation(aggregation))};
  });
}

protoret_status protoret_eval_classification(const protoret_classifier* model,
                                             const protoret_corpus* corpus,
                                             const protoret_manifest* manifest,
                                             protoret_report** out) {
  if (auto st = require(model && corpus && manifest && out,
                        "eval_classification: null argument"))
    return st;
  return guarded([&] {
    *out = new protoret_report{
        classification_protocol(model->value, corpus->value, manifest->value)};
  });
}

void protoret_report_free(protoret_report* report) { delete report; }

protoret_status protoret_report_json(const protoret_report* report, char** out) {
  if (auto st = require(report && out, "report_json: null argument")) return st;
  return guarded([&] { *out = copy_string(report_to_json(report->value)); });
}

protoret_status protoret_report_csv(const protoret_report* report,
                                    int include_header, char** out) {
  if (auto st = require(report && out, "report_csv: null argument")) return st;
  return guarded(
      [&] { *out = copy_string(report_to_csv(report->value, include_header != 0)); });
}

protoret_status protoret_report_topk(const protoret_report* report, int k,
                                     double* out) {
  if (auto st = require(report && out, "report_topk: null argument")) return st;
  const auto it = report->value.topk.find(k);
  if (it == report->value.topk.end()) {
    set_error("report_topk: k not in report");
    return PROTORET_ERROR_INVALID;
  }
  *out = it->second;
  return PROTORET_OK;
}

size_t protoret_report_n_queries(const protoret_report* report) {
  return report ? report->value.n_queries : 0;
}

} /* extern "C" */
