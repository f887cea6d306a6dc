// protoret command line: synthetic corpora, episodic sampling, meta/classifier
// training, retrieval evaluation, feature fusion and configuration sweeps.
// All functionality goes through the shared library's C API.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "protoret.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct StringDeleter {
  void operator()(char* s) const { protoret_string_free(s); }
};
using ApiString = std::unique_ptr<char, StringDeleter>;

struct CorpusDeleter {
  void operator()(protoret_corpus* c) const { protoret_corpus_free(c); }
};
using Corpus = std::unique_ptr<protoret_corpus, CorpusDeleter>;

struct ManifestDeleter {
  void operator()(protoret_manifest* m) const { protoret_manifest_free(m); }
};
using Manifest = std::unique_ptr<protoret_manifest, ManifestDeleter>;

struct ModelDeleter {
  void operator()(protoret_model* m) const { protoret_model_free(m); }
};
using Model = std::unique_ptr<protoret_model, ModelDeleter>;

struct ClassifierDeleter {
  void operator()(protoret_classifier* m) const { protoret_classifier_free(m); }
};
using Classifier = std::unique_ptr<protoret_classifier, ClassifierDeleter>;

struct ReportDeleter {
  void operator()(protoret_report* r) const { protoret_report_free(r); }
};
using Report = std::unique_ptr<protoret_report, ReportDeleter>;

int fail_runtime() {
  std::cerr << "error: " << protoret_last_error() << '\n';
  return kExitRuntime;
}

int fail_usage(const std::string& msg) {
  std::cerr << "error: " << msg << '\n';
  return kExitUsage;
}

bool write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  return static_cast<bool>(out);
}

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

Corpus load_corpus_or_null(const std::string& path) {
  protoret_corpus* c = nullptr;
  if (protoret_corpus_load(path.c_str(), &c) != PROTORET_OK) return nullptr;
  return Corpus(c);
}

Manifest load_manifest_or_null(const std::string& path, const protoret_corpus* c) {
  protoret_manifest* m = nullptr;
  if (protoret_manifest_load(path.c_str(), c, &m) != PROTORET_OK) return nullptr;
  return Manifest(m);
}

std::string json_report(const protoret_report* report) {
  ApiString s;
  char* raw = nullptr;
  if (protoret_report_json(report, &raw) != PROTORET_OK) return "{}";
  s.reset(raw);
  return std::string(s.get());
}

void print_report_summary(const protoret_report* report, const std::string& name) {
  std::cout << name << ":";
  for (int k : {1, 5, 10, 30}) {
    double acc = 0.0;
    if (protoret_report_topk(report, k, &acc) == PROTORET_OK)
      std::cout << " top" << k << "=" << acc;
  }
  std::cout << " (" << protoret_report_n_queries(report) << " queries)\n";
}

/* ------------------------------------------------------------------ */

struct GenSynthOptions {
  protoret_synth_spec spec{};
  int rare_threshold = 6;
  std::string out_dir;
};

int run_gen_synth(const GenSynthOptions& opt) {
  if (opt.spec.n_classes < 2) return fail_usage("need >= 2 classes");
  if (opt.spec.dim < 1) return fail_usage("--dim must be >= 1");
  if (opt.spec.count_min < 1) return fail_usage("--count-min must be >= 1");
  if (opt.spec.count_min > opt.spec.count_max)
    return fail_usage("--count-min must be <= --count-max");
  if (opt.spec.zipf_s < 0.0) return fail_usage("--zipf-s must be >= 0");
  if (opt.spec.noise_sigma < 0.0) return fail_usage("--noise must be >= 0");

  protoret_corpus* corpus_raw = nullptr;
  if (protoret_synth_generate(&opt.spec, &corpus_raw) != PROTORET_OK)
    return fail_runtime();
  Corpus corpus(corpus_raw);

  protoret_manifest* manifest_raw = nullptr;
  const uint64_t manifest_seed = protoret_derive_seed(opt.spec.seed, 1);
  if (protoret_manifest_synth(corpus.get(), opt.rare_threshold, manifest_seed,
                              &manifest_raw) != PROTORET_OK)
    return fail_runtime();
  Manifest manifest(manifest_raw);

  std::error_code ec;
  fs::create_directories(opt.out_dir, ec);
  const fs::path dir(opt.out_dir);
  if (protoret_corpus_save(corpus.get(), (dir / "embeddings.csv").string().c_str()) !=
      PROTORET_OK)
    return fail_runtime();
  if (protoret_manifest_save(manifest.get(), corpus.get(),
                             (dir / "manifest.csv").string().c_str()) != PROTORET_OK)
    return fail_runtime();

  std::cout << "wrote " << (dir / "embeddings.csv").string() << " ("
            << protoret_corpus_size(corpus.get()) << " samples, dim "
            << protoret_corpus_dim(corpus.get()) << ") and "
            << (dir / "manifest.csv").string() << '\n';
  return kExitOk;
}

/* ------------------------------------------------------------------ */

struct SampleEpisodesOptions {
  std::string embeddings;
  std::string manifest;
  int n_way = 10, n_shot = 3, n_query = 2, tasks = 4, episodes = 100;
  uint64_t seed = 0;
  std::string out_file;
};

int run_sample_episodes(const SampleEpisodesOptions& opt) {
  Corpus corpus = load_corpus_or_null(opt.embeddings);
  if (!corpus) return fail_runtime();
  Manifest manifest;
  if (!opt.manifest.empty()) {
    manifest = load_manifest_or_null(opt.manifest, corpus.get());
    if (!manifest) return fail_runtime();
  }

  char* jsonl_raw = nullptr;
  if (protoret_sample_episodes_jsonl(corpus.get(), manifest.get(), opt.n_way,
                                     opt.n_shot, opt.n_query, opt.tasks,
                                     opt.episodes, opt.seed,
                                     &jsonl_raw) != PROTORET_OK)
    return fail_runtime();
  ApiString jsonl(jsonl_raw);

  if (opt.out_file.empty()) {
    std::cout << jsonl.get();
  } else if (!write_file(opt.out_file, jsonl.get())) {
    return fail_usage("cannot write " + opt.out_file);
  }
  return kExitOk;
}

/* ------------------------------------------------------------------ */

struct TrainOptions {
  std::string embeddings;
  std::string manifest;
  std::string mode = "meta";
  std::string adapter_init = "identity";
  protoret_train_config config{};
  std::string out_dir;
};

int run_train(const TrainOptions& opt) {
  Corpus corpus = load_corpus_or_null(opt.embeddings);
  if (!corpus) return fail_runtime();
  Manifest manifest = load_manifest_or_null(opt.manifest, corpus.get());
  if (!manifest) return fail_runtime();

  protoret_train_config config = opt.config;
  config.adapter_init = opt.adapter_init == "random" ? PROTORET_INIT_RANDOM
                                                     : PROTORET_INIT_STANDARD;

  std::error_code ec;
  fs::create_directories(opt.out_dir, ec);
  const fs::path dir(opt.out_dir);

  char* history_raw = nullptr;
  int best_epoch = 0;
  double best_top1 = 0.0;

  if (opt.mode == "meta") {
    protoret_model* model_raw = nullptr;
    if (protoret_train_meta(corpus.get(), manifest.get(), &config, &model_raw,
                            &history_raw, &best_epoch, &best_top1) != PROTORET_OK)
      return fail_runtime();
    Model model(model_raw);
    ApiString history(history_raw);
    if (protoret_model_save(model.get(), (dir / "model.ckpt").string().c_str()) !=
        PROTORET_OK)
      return fail_runtime();
    if (!write_file(dir / "history.csv", history.get()))
      return fail_usage("cannot write history.csv");
  } else {
    protoret_classifier* model_raw = nullptr;
    if (protoret_train_classifier(corpus.get(), manifest.get(), &config, &model_raw,
                                  &history_raw, &best_epoch,
                                  &best_top1) != PROTORET_OK)
      return fail_runtime();
    Classifier model(model_raw);
    ApiString history(history_raw);
    if (protoret_classifier_save(model.get(),
                                 (dir / "model.ckpt").string().c_str()) !=
        PROTORET_OK)
      return fail_runtime();
    if (!write_file(dir / "history.csv", history.get()))
      return fail_usage("cannot write history.csv");
  }

  std::cout << "best epoch " << best_epoch << " val_top1 " << best_top1 << '\n';
  std::cout << "wrote " << (dir / "model.ckpt").string() << " and "
            << (dir / "history.csv").string() << '\n';
  return kExitOk;
}

/* ------------------------------------------------------------------ */

struct EvalOptions {
  std::string embeddings;
  std::string manifest;
  std::string model_path;
  std::string classifier_path;
  std::string protocol = "frequent";
  std::string aggregation = "min";
  std::string format = "json";
  uint64_t seed = 0;
  std::string out_dir;
};

int run_eval(const EvalOptions& opt) {
  Corpus corpus = load_corpus_or_null(opt.embeddings);
  if (!corpus) return fail_runtime();
  Manifest manifest = load_manifest_or_null(opt.manifest, corpus.get());
  if (!manifest) return fail_runtime();

  const bool want_classification = opt.protocol == "classification" || opt.protocol == "all";
  const bool want_frequent = opt.protocol == "frequent" || opt.protocol == "all";
  const bool want_rare = opt.protocol == "rare-cv" || opt.protocol == "all";
  const int agg = opt.aggregation == "mean" ? PROTORET_AGG_MEAN : PROTORET_AGG_MIN;

  // Resolve checkpoints. --model may hold either kind; --classifier names a
  // classifier checkpoint explicitly (needed together with --protocol all).
  Model model;
  Classifier classifier;
  std::string model_kind_path = opt.model_path;
  if (!model_kind_path.empty()) {
    int kind = 0;
    if (protoret_checkpoint_kind(model_kind_path.c_str(), &kind) != PROTORET_OK)
      return fail_runtime();
    if (kind == PROTORET_CHECKPOINT_MODEL) {
      protoret_model* raw = nullptr;
      if (protoret_model_load(model_kind_path.c_str(), &raw) != PROTORET_OK)
        return fail_runtime();
      model.reset(raw);
    } else {
      protoret_classifier* raw = nullptr;
      if (protoret_classifier_load(model_kind_path.c_str(), &raw) != PROTORET_OK)
        return fail_runtime();
      classifier.reset(raw);
    }
  }
  if (!opt.classifier_path.empty()) {
    protoret_classifier* raw = nullptr;
    if (protoret_classifier_load(opt.classifier_path.c_str(), &raw) != PROTORET_OK)
      return fail_runtime();
    classifier.reset(raw);
  }

  if ((want_frequent || want_rare) && !model)
    return fail_usage("protocol '" + opt.protocol +
                      "' needs a prototypical checkpoint via --model");
  if (want_classification && !classifier)
    return fail_usage("protocol '" + opt.protocol +
                      "' needs a classifier checkpoint via --classifier (or --model)");

  std::vector<std::pair<std::string, Report>> reports;
  if (want_classification) {
    protoret_report* raw = nullptr;
    if (protoret_eval_classification(classifier.get(), corpus.get(), manifest.get(),
                                     &raw) != PROTORET_OK)
      return fail_runtime();
    reports.emplace_back("classification", Report(raw));
  }
  if (want_frequent) {
    protoret_report* raw = nullptr;
    if (protoret_eval_frequent(model.get(), corpus.get(), manifest.get(), agg,
                               &raw) != PROTORET_OK)
      return fail_runtime();
    reports.emplace_back("frequent_retrieval", Report(raw));
  }
  if (want_rare) {
    protoret_report* raw = nullptr;
    if (protoret_eval_rare_cv(model.get(), corpus.get(), manifest.get(), opt.seed,
                              agg, &raw) != PROTORET_OK)
      return fail_runtime();
    reports.emplace_back("rare_cv", Report(raw));
  }

  std::error_code ec;
  fs::create_directories(opt.out_dir, ec);
  const fs::path dir(opt.out_dir);

  if (opt.format == "json") {
    std::string document;
    if (reports.size() == 1) {
      document = json_report(reports[0].second.get());
    } else {
      nlohmann::ordered_json blocks;
      for (const auto& [name, report] : reports)
        blocks[name] = nlohmann::ordered_json::parse(json_report(report.get()));
      document = blocks.dump(2);
    }
    if (!write_file(dir / "report.json", document + "\n"))
      return fail_usage("cannot write report.json");
    std::cout << "wrote " << (dir / "report.json").string() << '\n';
  } else {
    std::string csv;
    for (std::size_t i = 0; i < reports.size(); ++i) {
      char* raw = nullptr;
      if (protoret_report_csv(reports[i].second.get(), i == 0 ? 1 : 0, &raw) !=
          PROTORET_OK)
        return fail_runtime();
      ApiString row(raw);
      csv += row.get();
    }
    if (!write_file(dir / "report.csv", csv))
      return fail_usage("cannot write report.csv");
    std::cout << "wrote " << (dir / "report.csv").string() << '\n';
  }

  for (const auto& [name, report] : reports)
    print_report_summary(report.get(), name);
  return kExitOk;
}

/* ------------------------------------------------------------------ */

struct FuseOptions {
  std::vector<std::string> inputs;
  std::string out_file;
};

int run_fuse(const FuseOptions& opt) {
  std::vector<Corpus> corpora;
  std::vector<const protoret_corpus*> raw;
  for (const std::string& path : opt.inputs) {
    Corpus c = load_corpus_or_null(path);
    if (!c) return fail_runtime();
    raw.push_back(c.get());
    corpora.push_back(std::move(c));
  }

  protoret_corpus* fused_raw = nullptr;
  if (protoret_corpus_fuse(raw.data(), raw.size(), &fused_raw) != PROTORET_OK)
    return fail_runtime();
  Corpus fused(fused_raw);

  if (protoret_corpus_save(fused.get(), opt.out_file.c_str()) != PROTORET_OK)
    return fail_runtime();
  std::cout << "wrote " << opt.out_file << " (dim "
            << protoret_corpus_dim(fused.get()) << ")\n";
  return kExitOk;
}

/* ------------------------------------------------------------------ */

struct SweepOptions {
  std::string embeddings;
  std::string manifest;
  std::string n_way_list;
  std::string shot_query_list;
  std::string aggregation = "min";
  protoret_train_config config{};
  std::string out_dir;
};

bool parse_int_list(const std::string& text, std::vector<int>& out) {
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size()) return false;
      out.push_back(v);
    } catch (const std::exception&) {
      return false;
    }
  }
  return !out.empty();
}

bool parse_shot_query_list(const std::string& text,
                           std::vector<std::pair<int, int>>& out) {
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::size_t slash = item.find('/');
    if (slash == std::string::npos) return false;
    try {
      const int shot = std::stoi(item.substr(0, slash));
      const int query = std::stoi(item.substr(slash + 1));
      out.emplace_back(shot, query);
    } catch (const std::exception&) {
      return false;
    }
  }
  return !out.empty();
}

int run_sweep(const SweepOptions& opt) {
  std::vector<int> ways;
  if (!opt.n_way_list.empty()) {
    if (!parse_int_list(opt.n_way_list, ways))
      return fail_usage("bad --n-way list: " + opt.n_way_list);
  } else {
    ways.push_back(opt.config.n_way);
  }
  std::vector<std::pair<int, int>> shot_queries;
  if (!opt.shot_query_list.empty()) {
    if (!parse_shot_query_list(opt.shot_query_list, shot_queries))
      return fail_usage("bad --shot-query list: " + opt.shot_query_list);
  } else {
    shot_queries.emplace_back(opt.config.n_shot, opt.config.n_query);
  }

  Corpus corpus = load_corpus_or_null(opt.embeddings);
  if (!corpus) return fail_runtime();
  Manifest manifest = load_manifest_or_null(opt.manifest, corpus.get());
  if (!manifest) return fail_runtime();

  const int agg = opt.aggregation == "mean" ? PROTORET_AGG_MEAN : PROTORET_AGG_MIN;

  std::ostringstream csv;
  csv << "n_way,n_shot,n_query,tasks_per_episode,seed,status,"
         "freq_top1,freq_top5,freq_top10,freq_top30,"
         "rare_top1,rare_top5,rare_top10,rare_top30,error\n";

  uint64_t cell_index = 0;
  for (int way : ways) {
    for (const auto& [shot, query] : shot_queries) {
      protoret_train_config config = opt.config;
      config.n_way = way;
      config.n_shot = shot;
      config.n_query = query;
      config.seed = protoret_derive_seed(opt.config.seed, cell_index);
      ++cell_index;

      csv << way << ',' << shot << ',' << query << ',' << config.tasks_per_episode
          << ',' << config.seed << ',';

      std::string error;
      double freq[4] = {0, 0, 0, 0};
      double rare[4] = {0, 0, 0, 0};
      bool ok = true;

      protoret_model* model_raw = nullptr;
      if (protoret_train_meta(corpus.get(), manifest.get(), &config, &model_raw,
                              nullptr, nullptr, nullptr) != PROTORET_OK) {
        error = protoret_last_error();
        ok = false;
      }
      Model model(model_raw);

      if (ok) {
        protoret_report* freq_raw = nullptr;
        protoret_report* rare_raw = nullptr;
        if (protoret_eval_frequent(model.get(), corpus.get(), manifest.get(), agg,
                                   &freq_raw) != PROTORET_OK ||
            protoret_eval_rare_cv(model.get(), corpus.get(), manifest.get(),
                                  config.seed, agg, &rare_raw) != PROTORET_OK) {
          error = protoret_last_error();
          ok = false;
        }
        Report freq_report(freq_raw);
        Report rare_report(rare_raw);
        if (ok) {
          const int ks[4] = {1, 5, 10, 30};
          for (int i = 0; i < 4; ++i) {
            protoret_report_topk(freq_report.get(), ks[i], &freq[i]);
            protoret_report_topk(rare_report.get(), ks[i], &rare[i]);
          }
        }
      }

      if (ok) {
        csv << "ok";
        for (double v : freq) csv << ',' << fmt(v);
        for (double v : rare) csv << ',' << fmt(v);
        csv << ",\n";
      } else {
        for (char& c : error)
          if (c == ',' || c == '\n') c = ';';
        csv << "failed,,,,,,,,," << error << '\n';
        std::cerr << "cell " << way << "-way " << shot << "/" << query
                  << " failed: " << error << '\n';
      }
    }
  }

  std::error_code ec;
  fs::create_directories(opt.out_dir, ec);
  const fs::path out_path = fs::path(opt.out_dir) / "sweep.csv";
  if (!write_file(out_path, csv.str()))
    return fail_usage("cannot write " + out_path.string());
  std::cout << csv.str();
  std::cout << "wrote " << out_path.string() << '\n';
  return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"protoret: few-shot prototypical meta-learning and retrieval "
               "evaluation over embedding vectors"};
  app.require_subcommand(1);

  int exit_code = kExitOk;

  protoret_train_config defaults{};
  protoret_train_config_default(&defaults);
  protoret_synth_spec synth_defaults{};
  protoret_synth_spec_default(&synth_defaults);

  // gen-synth
  GenSynthOptions gen;
  gen.spec = synth_defaults;
  auto* gen_cmd = app.add_subcommand(
      "gen-synth", "Generate a synthetic long-tailed corpus and manifest");
  gen_cmd->add_option("--classes", gen.spec.n_classes, "number of classes");
  gen_cmd->add_option("--dim", gen.spec.dim, "embedding dimension");
  gen_cmd->add_option("--zipf-s", gen.spec.zipf_s, "Zipf tail exponent");
  gen_cmd->add_option("--count-min", gen.spec.count_min, "min samples per class");
  gen_cmd->add_option("--count-max", gen.spec.count_max, "max samples per class");
  gen_cmd->add_option("--noise", gen.spec.noise_sigma, "intra-class noise sigma");
  gen_cmd->add_option("--seed", gen.spec.seed, "generator seed");
  gen_cmd->add_option("--rare-threshold", gen.rare_threshold,
                      "classes with count <= threshold are tagged rare");
  gen_cmd->add_option("--out", gen.out_dir, "output directory")->required();
  gen_cmd->callback([&] { exit_code = run_gen_synth(gen); });

  // sample-episodes
  SampleEpisodesOptions sample;
  sample.n_way = defaults.n_way;
  sample.n_shot = defaults.n_shot;
  sample.n_query = defaults.n_query;
  sample.tasks = defaults.tasks_per_episode;
  sample.episodes = defaults.episodes_per_epoch;
  auto* sample_cmd = app.add_subcommand(
      "sample-episodes", "Dump sampled episodes as JSON lines");
  sample_cmd->add_option("--embeddings", sample.embeddings, "embeddings CSV")
      ->required();
  sample_cmd->add_option("--manifest", sample.manifest,
                         "manifest CSV (samples the train split)");
  sample_cmd->add_option("--n-way", sample.n_way, "classes per task");
  sample_cmd->add_option("--n-shot", sample.n_shot, "support samples per class");
  sample_cmd->add_option("--n-query", sample.n_query, "query samples per class");
  sample_cmd->add_option("--tasks", sample.tasks, "tasks per episode");
  sample_cmd->add_option("--episodes", sample.episodes, "episodes to dump");
  sample_cmd->add_option("--seed", sample.seed, "generator seed");
  sample_cmd->add_option("--out", sample.out_file, "output file (default stdout)");
  sample_cmd->callback([&] { exit_code = run_sample_episodes(sample); });

  // train
  TrainOptions train;
  train.config = defaults;
  auto* train_cmd =
      app.add_subcommand("train", "Train the meta head or the classifier baseline");
  train_cmd->add_option("--embeddings", train.embeddings, "embeddings CSV")
      ->required();
  train_cmd->add_option("--manifest", train.manifest, "manifest CSV")->required();
  train_cmd->add_option("--mode", train.mode, "meta | classifier")
      ->check(CLI::IsMember({"meta", "classifier"}));
  train_cmd->add_option("--lr", train.config.learning_rate, "learning rate");
  train_cmd->add_option("--weight-decay", train.config.weight_decay, "weight decay");
  train_cmd->add_option("--epochs", train.config.epochs, "epochs");
  train_cmd->add_option("--episodes", train.config.episodes_per_epoch,
                        "episodes per epoch");
  train_cmd->add_option("--n-way", train.config.n_way, "classes per task");
  train_cmd->add_option("--n-shot", train.config.n_shot, "support per class");
  train_cmd->add_option("--n-query", train.config.n_query, "queries per class");
  train_cmd->add_option("--tasks", train.config.tasks_per_episode,
                        "tasks per episode");
  train_cmd->add_option("--seed", train.config.seed, "training seed");
  train_cmd->add_option("--adapter-dim", train.config.adapter_dim,
                        "adapter output dim (0 = input dim)");
  train_cmd->add_option("--adapter-init", train.adapter_init, "identity | random")
      ->check(CLI::IsMember({"identity", "random"}));
  train_cmd->add_option("--out", train.out_dir, "output directory")->required();
  train_cmd->callback([&] { exit_code = run_train(train); });

  // eval
  EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate retrieval protocols");
  eval_cmd->add_option("--embeddings", eval.embeddings, "embeddings CSV")
      ->required();
  eval_cmd->add_option("--manifest", eval.manifest, "manifest CSV")->required();
  eval_cmd->add_option("--model", eval.model_path,
                       "checkpoint (prototypical or classifier)");
  eval_cmd->add_option("--classifier", eval.classifier_path,
                       "classifier checkpoint (for --protocol all)");
  eval_cmd
      ->add_option("--protocol", eval.protocol,
                   "classification | frequent | rare-cv | all")
      ->check(CLI::IsMember({"classification", "frequent", "rare-cv", "all"}));
  eval_cmd->add_option("--aggregation", eval.aggregation, "min | mean")
      ->check(CLI::IsMember({"min", "mean"}));
  eval_cmd->add_option("--format", eval.format, "json | csv")
      ->check(CLI::IsMember({"json", "csv"}));
  eval_cmd->add_option("--seed", eval.seed, "rare CV fold seed");
  eval_cmd->add_option("--out", eval.out_dir, "output directory")->required();
  eval_cmd->callback([&] { exit_code = run_eval(eval); });

  // fuse
  FuseOptions fuse;
  auto* fuse_cmd =
      app.add_subcommand("fuse", "Feature-level fusion of embedding files");
  fuse_cmd->add_option("inputs", fuse.inputs, "embedding CSV files (>= 2)")
      ->required()
      ->expected(2, -1);
  fuse_cmd->add_option("--out", fuse.out_file, "fused embeddings CSV")->required();
  fuse_cmd->callback([&] { exit_code = run_fuse(fuse); });

  // sweep
  SweepOptions sweep;
  sweep.config = defaults;
  auto* sweep_cmd = app.add_subcommand(
      "sweep", "Train + evaluate a grid of episode configurations");
  sweep_cmd->add_option("--embeddings", sweep.embeddings, "embeddings CSV")
      ->required();
  sweep_cmd->add_option("--manifest", sweep.manifest, "manifest CSV")->required();
  sweep_cmd->add_option("--n-way", sweep.n_way_list, "comma list, e.g. 5,10,15,20");
  sweep_cmd->add_option("--shot-query", sweep.shot_query_list,
                        "comma list of shot/query, e.g. 1/4,2/3,3/2,4/1");
  sweep_cmd->add_option("--lr", sweep.config.learning_rate, "learning rate");
  sweep_cmd->add_option("--weight-decay", sweep.config.weight_decay, "weight decay");
  sweep_cmd->add_option("--epochs", sweep.config.epochs, "epochs per cell");
  sweep_cmd->add_option("--episodes", sweep.config.episodes_per_epoch,
                        "episodes per epoch");
  sweep_cmd->add_option("--tasks", sweep.config.tasks_per_episode,
                        "tasks per episode");
  sweep_cmd->add_option("--seed", sweep.config.seed, "base seed");
  sweep_cmd->add_option("--aggregation", sweep.aggregation, "min | mean")
      ->check(CLI::IsMember({"min", "mean"}));
  sweep_cmd->add_option("--out", sweep.out_dir, "output directory")->required();
  sweep_cmd->callback([&] { exit_code = run_sweep(sweep); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  return exit_code;
}
