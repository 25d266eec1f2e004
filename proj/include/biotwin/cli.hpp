#pragma once

// Command implementations behind the biotwin tool. Every command reads and
// writes text artifacts only and leaves a manifest.json in its output
// directory from which the run can be replayed.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "biotwin/corpus_io.hpp"
#include "biotwin/datakit.hpp"
#include "biotwin/error.hpp"
#include "biotwin/evalkit.hpp"
#include "biotwin/forest.hpp"
#include "biotwin/mtwin.hpp"
#include "biotwin/neural.hpp"
#include "biotwin/seq.hpp"

namespace biotwin::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr const char* kManifestName = "manifest.json";

struct GenerateOptions {
  fs::path out;
  std::uint64_t seed = 0;
  std::string spec;  // corpus spec JSON; empty selects the default corpus
  bool noise_free = false;
  unsigned threads = 0;
};

struct StaticOptions {
  fs::path corpus;
  fs::path out;
  std::string model = "rf";  // rf | nn | nn-baseline
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
  // neural networks
  int epochs = 50;
  int batch_size = 32;
  double learning_rate = 1e-3;
  // forest
  bool search = true;
  std::size_t n_iter = 10;
  std::size_t folds = 5;
  int n_estimators = 100;
  int max_depth = 10;
  int min_samples_split = 2;
  int min_samples_leaf = 1;
};

struct DynamicOptions {
  fs::path corpus;
  fs::path out;
  std::uint64_t seed = 0;
  int epochs = 30;
  int batch_size = 32;
  int hidden = seq::kHidden;
  int dense = seq::kDense;
  double learning_rate = 1e-3;
  std::string split = "windows";  // windows | experiments
  bool keep_best = false;
};

struct EvaluateOptions {
  fs::path model;
  fs::path corpus;
  fs::path out;
  // Restrict to the test partition of this split seed; all rows otherwise.
  std::optional<std::uint64_t> split_seed;
  double train_fraction = 0.8;
  std::string split = "windows";
};

struct ForecastOptions {
  fs::path model;
  fs::path trace;
  fs::path out;
  std::string mode = "teacher_forced";
  double quiet_period_s = 4.0;
  double stim_duration_s = 0.0;  // 0: stimulation runs to the end of the trace
  std::size_t zoom_steps = 100;
};

// ---------------------------------------------------------------------------
// Option (de)serialization for manifests

inline json to_json(const GenerateOptions& o) {
  return {{"out", o.out.string()}, {"seed", o.seed}, {"spec", o.spec}, {"noise_free", o.noise_free},
          {"threads", o.threads}};
}
inline void from_json(const json& j, GenerateOptions& o) {
  o.out = j.at("out").get<std::string>();
  o.seed = j.at("seed").get<std::uint64_t>();
  o.spec = j.at("spec").get<std::string>();
  o.noise_free = j.at("noise_free").get<bool>();
  o.threads = j.at("threads").get<unsigned>();
}

inline json to_json(const StaticOptions& o) {
  return {{"corpus", o.corpus.string()},
          {"out", o.out.string()},
          {"model", o.model},
          {"seed", o.seed},
          {"train_fraction", o.train_fraction},
          {"epochs", o.epochs},
          {"batch_size", o.batch_size},
          {"learning_rate", o.learning_rate},
          {"search", o.search},
          {"n_iter", o.n_iter},
          {"folds", o.folds},
          {"n_estimators", o.n_estimators},
          {"max_depth", o.max_depth},
          {"min_samples_split", o.min_samples_split},
          {"min_samples_leaf", o.min_samples_leaf}};
}
inline void from_json(const json& j, StaticOptions& o) {
  o.corpus = j.at("corpus").get<std::string>();
  o.out = j.at("out").get<std::string>();
  o.model = j.at("model").get<std::string>();
  o.seed = j.at("seed").get<std::uint64_t>();
  o.train_fraction = j.at("train_fraction").get<double>();
  o.epochs = j.at("epochs").get<int>();
  o.batch_size = j.at("batch_size").get<int>();
  o.learning_rate = j.at("learning_rate").get<double>();
  o.search = j.at("search").get<bool>();
  o.n_iter = j.at("n_iter").get<std::size_t>();
  o.folds = j.at("folds").get<std::size_t>();
  o.n_estimators = j.at("n_estimators").get<int>();
  o.max_depth = j.at("max_depth").get<int>();
  o.min_samples_split = j.at("min_samples_split").get<int>();
  o.min_samples_leaf = j.at("min_samples_leaf").get<int>();
}

inline json to_json(const DynamicOptions& o) {
  return {{"corpus", o.corpus.string()}, {"out", o.out.string()},     {"seed", o.seed},
          {"epochs", o.epochs},          {"batch_size", o.batch_size}, {"hidden", o.hidden},
          {"dense", o.dense},            {"learning_rate", o.learning_rate}, {"split", o.split},
          {"keep_best", o.keep_best}};
}
inline void from_json(const json& j, DynamicOptions& o) {
  o.corpus = j.at("corpus").get<std::string>();
  o.out = j.at("out").get<std::string>();
  o.seed = j.at("seed").get<std::uint64_t>();
  o.epochs = j.at("epochs").get<int>();
  o.batch_size = j.at("batch_size").get<int>();
  o.hidden = j.at("hidden").get<int>();
  o.dense = j.at("dense").get<int>();
  o.learning_rate = j.at("learning_rate").get<double>();
  o.split = j.at("split").get<std::string>();
  o.keep_best = j.at("keep_best").get<bool>();
}

inline json to_json(const EvaluateOptions& o) {
  json j = {{"model", o.model.string()}, {"corpus", o.corpus.string()}, {"out", o.out.string()},
            {"train_fraction", o.train_fraction}, {"split", o.split}, {"split_seed", nullptr}};
  if (o.split_seed) j["split_seed"] = *o.split_seed;
  return j;
}
inline void from_json(const json& j, EvaluateOptions& o) {
  o.model = j.at("model").get<std::string>();
  o.corpus = j.at("corpus").get<std::string>();
  o.out = j.at("out").get<std::string>();
  o.train_fraction = j.at("train_fraction").get<double>();
  o.split = j.at("split").get<std::string>();
  o.split_seed.reset();
  if (!j.at("split_seed").is_null()) o.split_seed = j.at("split_seed").get<std::uint64_t>();
}

inline json to_json(const ForecastOptions& o) {
  return {{"model", o.model.string()},          {"trace", o.trace.string()},
          {"out", o.out.string()},              {"mode", o.mode},
          {"quiet_period_s", o.quiet_period_s}, {"stim_duration_s", o.stim_duration_s},
          {"zoom_steps", o.zoom_steps}};
}
inline void from_json(const json& j, ForecastOptions& o) {
  o.model = j.at("model").get<std::string>();
  o.trace = j.at("trace").get<std::string>();
  o.out = j.at("out").get<std::string>();
  o.mode = j.at("mode").get<std::string>();
  o.quiet_period_s = j.at("quiet_period_s").get<double>();
  o.stim_duration_s = j.at("stim_duration_s").get<double>();
  o.zoom_steps = j.at("zoom_steps").get<std::size_t>();
}

// ---------------------------------------------------------------------------
// Shared helpers

/// What a command produced, recorded in its manifest.
struct RunRecord {
  json inputs = json::object();
  json outputs = json::object();
  json seeds = json::object();
};

inline void ensure_dir(const fs::path& dir) {
  require(!dir.empty(), ErrorKind::InvalidArgument, "an output directory is required");
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorKind::Io, "cannot create output directory " + dir.string());
}

inline json read_json(const fs::path& path) {
  try {
    return json::parse(corpus_io::read_text(path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const json& j) { corpus_io::write_text(path, j.dump(2) + "\n"); }

inline std::string utc_now() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Runs `body` and writes <out>/manifest.json around it.
template <class Options, class Body>
RunRecord run_with_manifest(const std::string& command, const Options& opts, Body&& body) {
  ensure_dir(opts.out);
  const auto started = utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  RunRecord rec = body();
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json manifest = {{"tool", "biotwin"},
                   {"version", kToolVersion},
                   {"command", command},
                   {"config", to_json(opts)},
                   {"seeds", rec.seeds},
                   {"inputs", rec.inputs},
                   {"outputs", rec.outputs},
                   {"started_utc", started},
                   {"duration_s", seconds}};
  write_json(opts.out / kManifestName, manifest);
  return rec;
}

inline datakit::Encoder::Domain corpus_domain(const std::vector<mtwin::ForceTrace>& traces) {
  auto domain = datakit::Encoder::waveform_domain();
  std::set<std::string> ids;
  for (const auto& t : traces) ids.insert(t.sample_id);
  domain.sample_ids.assign(ids.begin(), ids.end());
  return domain;
}

template <class T>
std::vector<T> pick(const std::vector<T>& all, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(all[i]);
  return out;
}

inline void write_split(const fs::path& path, const std::vector<datakit::StaticRow>& rows,
                        const datakit::SplitAssignment& split) {
  std::string out = "experiment_id,partition\n";
  for (std::size_t i = 0; i < rows.size(); ++i)
    out += rows[i].experiment_id + "," + std::string(datakit::to_string(split.labels[i])) + "\n";
  corpus_io::write_text(path, out);
}

inline void write_history(const fs::path& path, const std::vector<std::string>& columns,
                          const std::vector<const std::vector<double>*>& series) {
  std::string out = "epoch";
  for (const auto& c : columns) out += "," + c;
  out += "\n";
  std::size_t rows = 0;
  for (auto* s : series) rows = std::max(rows, s->size());
  for (std::size_t e = 0; e < rows; ++e) {
    out += std::to_string(e);
    for (auto* s : series) out += "," + (e < s->size() ? corpus_io::format_double((*s)[e]) : std::string());
    out += "\n";
  }
  corpus_io::write_text(path, out);
}

inline std::vector<mtwin::ForceTrace> load_corpus(const fs::path& dir) {
  require(fs::exists(dir / corpus_io::kManifestName), ErrorKind::Io, "no corpus found at " + dir.string());
  return corpus_io::read_corpus(dir);
}

// ---------------------------------------------------------------------------
// Static artifacts

inline constexpr const char* kForestFormat = "biotwin-forest";

struct ForestArtifact {
  datakit::Encoder encoder;
  forest::ForestModel model;
};

inline json to_json(const ForestArtifact& a) {
  return {{"format", kForestFormat}, {"version", 1}, {"encoder", a.encoder.to_json()}, {"forest", forest::to_json(a.model)}};
}

inline ForestArtifact forest_artifact_from_json(const json& j) {
  require(j.value("format", std::string()) == kForestFormat && j.value("version", 0) == 1,
          ErrorKind::IncompatibleArtifact, "artifact is not a forest model");
  try {
    ForestArtifact a{datakit::Encoder::from_json(j.at("encoder")), forest::forest_from_json(j.at("forest"))};
    require(a.encoder.width() == a.model.feature_width, ErrorKind::IncompatibleArtifact,
            "encoder width does not match the forest");
    return a;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("forest artifact: ") + e.what());
  }
}

inline std::vector<double> predict(const ForestArtifact& a, std::span<const datakit::StaticRow> rows) {
  return forest::predict(a.model, neural::encode_rows(a.encoder, rows));
}

// ---------------------------------------------------------------------------
// Commands

inline RunRecord cmd_generate(const GenerateOptions& o) {
  return run_with_manifest("generate", o, [&] {
    mtwin::CorpusSpec spec;
    if (o.spec.empty()) {
      spec = mtwin::default_corpus_spec(o.seed);
    } else {
      spec = mtwin::corpus_spec_from_json(read_json(o.spec));
      spec.seed = o.seed;
    }
    if (o.noise_free) spec.noise_free = true;
    auto traces = mtwin::generate_corpus(spec, o.threads);
    corpus_io::write_corpus(o.out, traces, spec);
    RunRecord rec;
    rec.seeds = {{"corpus", o.seed}};
    rec.inputs = {{"spec", o.spec.empty() ? std::string("default") : o.spec}};
    rec.outputs = {{"corpus", o.out.string()}, {"experiments", traces.size()}};
    return rec;
  });
}

inline RunRecord cmd_train_static(const StaticOptions& o) {
  require(o.model == "rf" || o.model == "nn" || o.model == "nn-baseline", ErrorKind::UnknownModel,
          "unknown static model '" + o.model + "' (expected rf, nn or nn-baseline)");
  return run_with_manifest("train-static", o, [&] {
    auto traces = load_corpus(o.corpus);
    require(traces.size() >= 2, ErrorKind::CorpusTooSmall, "static training needs at least 2 experiments");
    const bool baseline = o.model == "nn-baseline";
    auto rows = datakit::extract_static_rows(traces, baseline);
    auto split = datakit::split_static(rows.size(), o.seed, o.train_fraction, 1.0 - o.train_fraction);
    auto train = pick(rows, split.indices(datakit::Partition::Train));
    auto test = pick(rows, split.indices(datakit::Partition::Test));
    require(!train.empty() && !test.empty(), ErrorKind::CorpusTooSmall, "split left an empty partition");
    const auto domain = corpus_domain(traces);
    const auto y_train = neural::targets_of(train);
    const auto y_test = neural::targets_of(test);

    RunRecord rec;
    rec.seeds = {{"split", o.seed}, {"model", o.seed}};
    rec.inputs = {{"corpus", o.corpus.string()}};
    std::vector<double> predicted, fitted;
    evalkit::SummaryRows summary;
    if (o.model == "rf") {
      auto enc = datakit::Encoder::fit(train, false, domain);
      auto x_train = neural::encode_rows(enc, train);
      forest::ForestParams params{o.n_estimators, o.max_depth, o.min_samples_split, o.min_samples_leaf, o.seed};
      if (o.search) {
        auto result = forest::randomized_search_cv(forest::ForestGrid{}, o.n_iter, o.folds, x_train, y_train, o.seed);
        params = result.best;
        std::string table = "rank,n_estimators,max_depth,min_samples_split,min_samples_leaf,mean_mse\n";
        for (std::size_t s = 0; s < result.table.size(); ++s) {
          const auto& r = result.table[s];
          table += std::to_string(s) + "," + std::to_string(r.params.n_estimators) + "," +
                   std::to_string(r.params.max_depth) + "," + std::to_string(r.params.min_samples_split) + "," +
                   std::to_string(r.params.min_samples_leaf) + "," + corpus_io::format_double(r.mean_mse) + "\n";
        }
        corpus_io::write_text(o.out / "search.csv", table);
        write_json(o.out / "best_params.json", forest::to_json(params));
        rec.outputs["search"] = (o.out / "search.csv").string();
        rec.outputs["best_params"] = (o.out / "best_params.json").string();
      }
      ForestArtifact art{enc, forest::fit_forest(x_train, y_train, params)};
      predicted = predict(art, test);
      fitted = predict(art, train);
      write_json(o.out / "model.json", to_json(art));
      summary.emplace_back("n_estimators", params.n_estimators);
      summary.emplace_back("max_depth", params.max_depth);
      summary.emplace_back("min_samples_split", params.min_samples_split);
      summary.emplace_back("min_samples_leaf", params.min_samples_leaf);
    } else {
      neural::TrainConfig cfg;
      cfg.epochs = o.epochs;
      cfg.batch_size = o.batch_size;
      cfg.adam.learning_rate = o.learning_rate;
      auto fit = neural::train_static(train, cfg, baseline, o.seed, domain);
      predicted = neural::predict(fit.network, test);
      fitted = neural::predict(fit.network, train);
      write_json(o.out / "model.json", neural::to_json(fit.network));
      write_history(o.out / "history.csv", {"train_mse"}, {&fit.history});
      rec.outputs["history"] = (o.out / "history.csv").string();
    }
    evalkit::write_regression_report(o.out, y_test, predicted, summary);
    auto train_metrics = evalkit::summarize(y_train, fitted);
    summary.emplace_back("train_mse", train_metrics.mse);
    summary.emplace_back("train_r2", train_metrics.r2);
    evalkit::write_summary(o.out / "summary.csv", summary);
    write_split(o.out / "split.csv", rows, split);
    rec.outputs["model"] = (o.out / "model.json").string();
    rec.outputs["summary"] = (o.out / "summary.csv").string();
    return rec;
  });
}

inline datakit::SplitAssignment dynamic_split(const std::string& how, const datakit::SlidingWindowSet& set,
                                              std::size_t experiments, std::uint64_t seed) {
  if (how == "windows") return datakit::split_dynamic(set.size(), seed);
  if (how == "experiments") return datakit::split_dynamic_by_experiment(set, experiments, seed);
  throw Error(ErrorKind::InvalidArgument, "unknown split '" + how + "' (expected windows or experiments)");
}

/// Writes the one-step report in scaled units and, prefixed newton_, in
/// newtons.
inline void write_dynamic_report(const fs::path& dir, const datakit::SlidingWindowSet& set,
                                 std::span<const std::size_t> idx, std::span<const double> predicted,
                                 evalkit::SummaryRows& summary) {
  std::vector<double> truth, truth_n, pred_n;
  for (auto i : idx) truth.push_back(set.targets[i]);
  for (std::size_t k = 0; k < truth.size(); ++k) {
    truth_n.push_back(set.scaler.invert(truth[k]));
    pred_n.push_back(set.scaler.invert(predicted[k]));
  }
  evalkit::write_regression_report(dir, truth, predicted, summary);
  evalkit::write_regression_report(dir, truth_n, pred_n, summary, "newton_");
}

inline RunRecord cmd_train_dynamic(const DynamicOptions& o) {
  seq::TrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch_size;
  cfg.hidden = o.hidden;
  cfg.dense = o.dense;
  cfg.adam.learning_rate = o.learning_rate;
  cfg.keep_best_validation = o.keep_best;
  seq::validate(cfg);
  return run_with_manifest("train-dynamic", o, [&] {
    auto traces = load_corpus(o.corpus);
    require(traces.size() >= 2, ErrorKind::CorpusTooSmall, "dynamic training needs at least 2 experiments");
    auto set = datakit::make_windows(traces);
    auto split = dynamic_split(o.split, set, traces.size(), o.seed);
    require(split.count(datakit::Partition::Test) > 0, ErrorKind::CorpusTooSmall, "test partition is empty");
    datakit::apply_scaler(set, datakit::fit_minmax(set, split));
    auto fit = seq::train_dynamic(set, split, cfg, o.seed);

    seq::DynamicModel model{fit.params, set.scaler, set.width};
    write_json(o.out / "model.json", seq::to_json(model));
    write_history(o.out / "history.csv", {"train_mse", "validation_mse"},
                  {&fit.history.train_loss, &fit.history.validation_loss});
    auto test = split.indices(datakit::Partition::Test);
    auto predicted = seq::predict_windows(fit.params, set, test);
    evalkit::SummaryRows summary;
    write_dynamic_report(o.out, set, test, predicted, summary);
    summary.emplace_back("windows", static_cast<double>(set.size()));
    summary.emplace_back("train_windows", static_cast<double>(split.count(datakit::Partition::Train)));
    summary.emplace_back("validation_windows", static_cast<double>(split.count(datakit::Partition::Validation)));
    summary.emplace_back("test_windows", static_cast<double>(test.size()));
    summary.emplace_back("selected_epoch", fit.history.selected_epoch);
    evalkit::write_summary(o.out / "summary.csv", summary);

    RunRecord rec;
    rec.seeds = {{"split", o.seed}, {"model", o.seed}};
    rec.inputs = {{"corpus", o.corpus.string()}};
    rec.outputs = {{"model", (o.out / "model.json").string()},
                   {"summary", (o.out / "summary.csv").string()},
                   {"history", (o.out / "history.csv").string()}};
    return rec;
  });
}

inline RunRecord cmd_evaluate(const EvaluateOptions& o) {
  return run_with_manifest("evaluate", o, [&] {
    auto artifact = read_json(o.model);
    auto traces = load_corpus(o.corpus);
    const auto format = artifact.value("format", std::string());
    evalkit::SummaryRows summary;
    if (format == "biotwin-lstm") {
      auto model = seq::dynamic_model_from_json(artifact);
      auto set = datakit::make_windows(traces, model.width);
      std::vector<std::size_t> idx(set.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      if (o.split_seed) idx = dynamic_split(o.split, set, traces.size(), *o.split_seed).indices(datakit::Partition::Test);
      require(!idx.empty(), ErrorKind::EmptyInput, "nothing to evaluate");
      datakit::apply_scaler(set, model.scaler);
      auto predicted = seq::predict_windows(model.params, set, idx);
      write_dynamic_report(o.out, set, idx, predicted, summary);
    } else {
      std::function<std::vector<double>(std::span<const datakit::StaticRow>)> predict_rows;
      bool baseline = false;
      if (format == kForestFormat) {
        auto art = std::make_shared<ForestArtifact>(forest_artifact_from_json(artifact));
        baseline = art->encoder.include_baseline();
        predict_rows = [art](std::span<const datakit::StaticRow> r) { return predict(*art, r); };
      } else if (format == "biotwin-mlp") {
        auto net = std::make_shared<neural::StaticNetwork>(neural::static_network_from_json(artifact));
        baseline = net->encoder.include_baseline();
        predict_rows = [net](std::span<const datakit::StaticRow> r) { return neural::predict(*net, r); };
      } else {
        throw Error(ErrorKind::IncompatibleArtifact, o.model.string() + " is not a biotwin model artifact");
      }
      auto rows = datakit::extract_static_rows(traces, baseline);
      if (o.split_seed) {
        auto split = datakit::split_static(rows.size(), *o.split_seed, o.train_fraction, 1.0 - o.train_fraction);
        rows = pick(rows, split.indices(datakit::Partition::Test));
      }
      auto predicted = predict_rows(rows);
      evalkit::write_regression_report(o.out, neural::targets_of(rows), predicted, summary);
    }
    evalkit::write_summary(o.out / "summary.csv", summary);
    RunRecord rec;
    rec.inputs = {{"model", o.model.string()}, {"corpus", o.corpus.string()}};
    rec.seeds = {{"split", o.split_seed ? json(*o.split_seed) : json(nullptr)}};
    rec.outputs = {{"summary", (o.out / "summary.csv").string()}};
    return rec;
  });
}

inline RunRecord cmd_forecast(const ForecastOptions& o) {
  const auto mode = seq::parse_forecast_mode(o.mode);
  return run_with_manifest("forecast", o, [&] {
    auto model = seq::dynamic_model_from_json(read_json(o.model));
    require(fs::exists(o.trace), ErrorKind::Io, "trace file " + o.trace.string() + " does not exist");
    auto trace = corpus_io::read_trace(o.trace);
    auto fc = seq::forecast(model.params, trace.forces_N, model.scaler, mode, model.width);

    auto table = [&](std::size_t rows) {
      std::string out = "time_s,true_force_N,predicted_force_N,mode\n";
      for (std::size_t k = 0; k < rows; ++k) {
        const std::size_t idx = k + fc.offset;
        out += corpus_io::format_double(static_cast<double>(idx) * mtwin::kSamplePeriodS) + "," +
               corpus_io::format_double(trace.forces_N[idx]) + "," + corpus_io::format_double(fc.newtons[k]) + "," +
               std::string(seq::to_string(mode)) + "\n";
      }
      return out;
    };
    corpus_io::write_text(o.out / "forecast.csv", table(fc.newtons.size()));
    corpus_io::write_text(o.out / "forecast_zoom.csv", table(std::min(o.zoom_steps, fc.newtons.size())));

    std::vector<double> truth(trace.forces_N.begin() + static_cast<std::ptrdiff_t>(fc.offset), trace.forces_N.end());
    evalkit::SummaryRows summary;
    summary.emplace_back("mse", evalkit::mse(truth, fc.newtons));
    if (truth.size() >= 2 && *std::min_element(truth.begin(), truth.end()) < *std::max_element(truth.begin(), truth.end()))
      summary.emplace_back("r2", evalkit::r_squared(truth, fc.newtons));
    const auto onset = static_cast<std::size_t>(mtwin::steps_for(o.quiet_period_s));
    const std::size_t stim_end = o.stim_duration_s > 0.0
                                     ? onset + static_cast<std::size_t>(mtwin::steps_for(o.stim_duration_s))
                                     : trace.forces_N.size();
    auto transient = seq::transient_report(trace.forces_N, fc, onset, stim_end);
    summary.emplace_back("onset_mae", transient.onset_mae);
    summary.emplace_back("plateau_mae", transient.plateau_mae);
    summary.emplace_back("onset_points", static_cast<double>(transient.onset_points));
    summary.emplace_back("plateau_points", static_cast<double>(transient.plateau_points));
    evalkit::write_summary(o.out / "summary.csv", summary);

    RunRecord rec;
    rec.inputs = {{"model", o.model.string()}, {"trace", o.trace.string()}};
    rec.outputs = {{"forecast", (o.out / "forecast.csv").string()},
                   {"zoom", (o.out / "forecast_zoom.csv").string()},
                   {"summary", (o.out / "summary.csv").string()}};
    return rec;
  });
}

/// Re-executes the command recorded in a manifest, optionally into a
/// different output directory.
inline RunRecord cmd_replay(const fs::path& manifest_path, const fs::path& out_override = {}) {
  auto manifest = read_json(manifest_path);
  const auto command = manifest.value("command", std::string());
  auto config = manifest.at("config");
  if (!out_override.empty()) config["out"] = out_override.string();
  try {
    if (command == "generate") return cmd_generate(config.get<GenerateOptions>());
    if (command == "train-static") return cmd_train_static(config.get<StaticOptions>());
    if (command == "train-dynamic") return cmd_train_dynamic(config.get<DynamicOptions>());
    if (command == "evaluate") return cmd_evaluate(config.get<EvaluateOptions>());
    if (command == "forecast") return cmd_forecast(config.get<ForecastOptions>());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, "manifest config: " + std::string(e.what()));
  }
  throw Error(ErrorKind::Parse, manifest_path.string() + " names no replayable command");
}

}  // namespace biotwin::cli
