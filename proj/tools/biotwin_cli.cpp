#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "biotwin/cli.hpp"

namespace {

using namespace biotwin;

void add_config(CLI::App* sub) {
  sub->set_config("--config", "", "Read options from a TOML/INI file; command-line flags win");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Biohybrid muscle actuator twin: synthetic corpus, static and dynamic force models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(cli::kToolVersion));

  cli::GenerateOptions gen;
  auto* g = app.add_subcommand("generate", "Simulate a stimulation corpus");
  add_config(g);
  g->add_option("--out", gen.out, "Output corpus directory")->required();
  g->add_option("--seed", gen.seed, "Corpus seed")->capture_default_str();
  g->add_option("--spec", gen.spec, "Corpus spec JSON (default: the built-in 161-experiment corpus)");
  g->add_flag("--noise-free", gen.noise_free, "Disable measurement noise");
  g->add_option("--threads", gen.threads, "Worker threads (0: hardware concurrency); output does not depend on it");

  cli::StaticOptions st;
  auto* s = app.add_subcommand("train-static", "Train a max-force model (rf, nn or nn-baseline)");
  add_config(s);
  s->add_option("--corpus", st.corpus, "Corpus directory")->required();
  s->add_option("--out", st.out, "Output directory")->required();
  s->add_option("--model", st.model, "rf | nn | nn-baseline")->capture_default_str();
  s->add_option("--seed", st.seed, "Split and model seed")->capture_default_str();
  s->add_option("--train-fraction", st.train_fraction)->capture_default_str();
  s->add_option("--epochs", st.epochs)->capture_default_str();
  s->add_option("--batch-size", st.batch_size)->capture_default_str();
  s->add_option("--learning-rate", st.learning_rate)->capture_default_str();
  s->add_flag("--search,!--no-search", st.search, "Randomized grid search with k-fold CV (rf)")->capture_default_str();
  s->add_option("--n-iter", st.n_iter, "Search points (rf)")->capture_default_str();
  s->add_option("--folds", st.folds, "CV folds (rf)")->capture_default_str();
  s->add_option("--n-estimators", st.n_estimators, "Used without search (rf)")->capture_default_str();
  s->add_option("--max-depth", st.max_depth, "Used without search (rf)")->capture_default_str();
  s->add_option("--min-samples-split", st.min_samples_split, "Used without search (rf)")->capture_default_str();
  s->add_option("--min-samples-leaf", st.min_samples_leaf, "Used without search (rf)")->capture_default_str();

  cli::DynamicOptions dy;
  auto* d = app.add_subcommand("train-dynamic", "Train the one-step force forecaster");
  add_config(d);
  d->add_option("--corpus", dy.corpus, "Corpus directory")->required();
  d->add_option("--out", dy.out, "Output directory")->required();
  d->add_option("--seed", dy.seed, "Split and model seed")->capture_default_str();
  d->add_option("--epochs", dy.epochs)->capture_default_str();
  d->add_option("--batch-size", dy.batch_size)->capture_default_str();
  d->add_option("--hidden", dy.hidden, "Recurrent units")->capture_default_str();
  d->add_option("--dense", dy.dense, "Dense units")->capture_default_str();
  d->add_option("--learning-rate", dy.learning_rate)->capture_default_str();
  d->add_option("--split", dy.split, "windows | experiments")->capture_default_str();
  d->add_flag("--keep-best", dy.keep_best, "Return the best-validation epoch instead of the last");

  cli::EvaluateOptions ev;
  std::uint64_t split_seed = 0;
  auto* e = app.add_subcommand("evaluate", "Score a model artifact on a corpus");
  add_config(e);
  e->add_option("--model", ev.model, "Model artifact (model.json)")->required();
  e->add_option("--corpus", ev.corpus, "Corpus directory")->required();
  e->add_option("--out", ev.out, "Output directory")->required();
  auto* split_opt = e->add_option("--split-seed", split_seed, "Evaluate only the test partition of this split");
  e->add_option("--train-fraction", ev.train_fraction, "Static split fraction")->capture_default_str();
  e->add_option("--split", ev.split, "Dynamic split: windows | experiments")->capture_default_str();

  cli::ForecastOptions fc;
  auto* f = app.add_subcommand("forecast", "Forecast a force trace with a dynamic model");
  add_config(f);
  f->add_option("--model", fc.model, "Dynamic model artifact")->required();
  f->add_option("--trace", fc.trace, "Trace table (time_s,force_N)")->required();
  f->add_option("--out", fc.out, "Output directory")->required();
  f->add_option("--mode", fc.mode, "teacher_forced | autoregressive")->capture_default_str();
  f->add_option("--quiet-period", fc.quiet_period_s, "Seconds before stimulation onset")->capture_default_str();
  f->add_option("--stim-duration", fc.stim_duration_s, "Stimulation seconds (0: to the end)")->capture_default_str();
  f->add_option("--zoom-steps", fc.zoom_steps, "Rows in forecast_zoom.csv")->capture_default_str();

  std::string manifest, replay_out;
  auto* r = app.add_subcommand("replay", "Re-run a command from its manifest.json");
  r->add_option("--manifest", manifest, "Manifest to replay")->required();
  r->add_option("--out", replay_out, "Write outputs here instead of the recorded directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }

  try {
    if (*g) cli::cmd_generate(gen);
    if (*s) cli::cmd_train_static(st);
    if (*d) cli::cmd_train_dynamic(dy);
    if (*e) {
      if (*split_opt) ev.split_seed = split_seed;
      cli::cmd_evaluate(ev);
    }
    if (*f) cli::cmd_forecast(fc);
    if (*r) cli::cmd_replay(manifest, replay_out);
  } catch (const Error& err) {
    std::cerr << "error: " << err.category() << ": " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: internal: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
