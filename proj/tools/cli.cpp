#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "commands.hpp"

namespace tribert::cli {
namespace {

struct Common {
  std::string config, out, dataset, seed, classes;
  std::vector<std::string> sets;

  void attach(CLI::App* app, bool with_dataset) {
    app->add_option("--config", config, "INI configuration file")->check(CLI::ExistingFile);
    app->add_option("--out", out, "Output directory");
    if (with_dataset) app->add_option("--dataset", dataset, "Dataset directory");
    app->add_option("--seed", seed, "Run seed (overrides TRIB_SEED and the config file)");
    app->add_option("--set", sets, "Override a key: section.key=value")->take_all();
  }

  Overrides flags() const {
    Overrides o;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw CommandError("--set expects section.key=value, got '" + s + "'");
      o.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    if (!out.empty()) o.emplace_back("run.out", out);
    if (!dataset.empty()) o.emplace_back("run.dataset", dataset);
    if (!seed.empty()) o.emplace_back("run.seed", seed);
    if (!classes.empty()) o.emplace_back("synth.classes", classes);
    return o;
  }

  RunConfig resolve(Overrides extra = {}) const {
    Overrides o = flags();
    o.insert(o.end(), extra.begin(), extra.end());
    try {
      return resolve_config(config, o, std::getenv("TRIB_SEED"));
    } catch (const std::invalid_argument& e) {
      throw CommandError(e.what());
    }
  }
};

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Tri-modal separation and retrieval on synthetic scenes"};
  app.require_subcommand(1);

  Common synth_c, train_c, sep_c, eval_c, ret_c;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset into --out");
  synth_c.attach(synth, false);
  std::string num_scenes;
  bool force = false;
  synth->add_option("--classes", synth_c.classes, "Number of instrument classes");
  synth->add_option("--scenes", num_scenes, "Number of scenes");
  synth->add_flag("--force", force, "Overwrite a non-empty output directory");

  auto* train = app.add_subcommand("train", "Train the joint model");
  train_c.attach(train, true);
  TrainArgs targs;
  std::string steps, batch, lr;
  train->add_option("--steps", steps, "Total training steps");
  train->add_option("--batch", batch, "Pairs per step");
  train->add_option("--lr", lr, "Learning rate");
  auto* resume = train->add_option("--resume", targs.resume, "Continue from a checkpoint");
  auto* fine = train->add_option("--fine-tune", targs.fine_tune, "Start from a checkpoint with new class heads");
  train->add_option("--classes", targs.classes, "Class count for fine-tuning");
  resume->excludes(fine);

  auto* sep = app.add_subcommand("separate", "Separate one mixture with a trained model");
  sep_c.attach(sep, true);
  SeparateArgs sargs;
  sep->add_option("--checkpoint", sargs.checkpoint, "Model checkpoint")->required();
  auto* pair = sep->add_option("--pair", sargs.pair, "Dataset pair <sceneA>+<sceneB>");
  auto* mix = sep->add_option("--mixture", sargs.mixture, "Mixture WAV");
  sep->add_option("--scenes", sargs.scenes, "Conditioning scenes for --mixture: A,B")->delimiter(',');
  sep->add_flag("--binary", sargs.binary, "Give each bin to the source with the largest mask");
  pair->excludes(mix);

  auto* ev = app.add_subcommand("eval", "Separation and classification metrics on the test split");
  eval_c.attach(ev, true);
  std::filesystem::path eval_ckpt;
  std::string pairs, jobs;
  bool binary = false;
  ev->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required();
  ev->add_option("--pairs", pairs, "Number of evaluation pairs");
  ev->add_option("--jobs", jobs, "Worker threads");
  ev->add_flag("--binary", binary, "Give each bin to the source with the largest mask");

  auto* ret = app.add_subcommand("retrieve", "Cross-modal retrieval on extracted embeddings");
  ret_c.attach(ret, true);
  std::filesystem::path ret_ckpt;
  std::string ret_jobs, epochs;
  std::vector<std::string> ret_sources;
  ret->add_option("--checkpoint", ret_ckpt, "Model checkpoint")->required();
  ret->add_option("--epochs", epochs, "Training epochs per variant");
  ret->add_option("--jobs", ret_jobs, "Worker threads");
  ret->add_option("--source", ret_sources, "post_transformer and/or pre_transformer (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  auto opt = [](Overrides& o, const char* key, const std::string& v) {
    if (!v.empty()) o.emplace_back(key, v);
  };
  try {
    if (synth->parsed()) {
      Overrides o;
      opt(o, "synth.num_scenes", num_scenes);
      cmd_synth(synth_c.resolve(o), force);
    } else if (train->parsed()) {
      if (targs.classes && targs.fine_tune.empty()) throw CommandError("--classes applies only with --fine-tune");
      Overrides o;
      opt(o, "train.steps", steps);
      opt(o, "train.batch", batch);
      opt(o, "train.lr", lr);
      cmd_train(train_c.resolve(o), targs);
    } else if (sep->parsed()) {
      cmd_separate(sep_c.resolve(), sargs);
    } else if (ev->parsed()) {
      Overrides o;
      opt(o, "eval.pairs", pairs);
      opt(o, "eval.jobs", jobs);
      if (binary) o.emplace_back("eval.binary", "true");
      cmd_eval(eval_c.resolve(o), eval_ckpt);
    } else if (ret->parsed()) {
      Overrides o;
      opt(o, "retrieve.epochs", epochs);
      opt(o, "retrieve.jobs", ret_jobs);
      if (!ret_sources.empty()) {
        std::string joined;
        for (const auto& src : ret_sources) joined += (joined.empty() ? "" : ",") + src;
        o.emplace_back("retrieve.sources", joined);
      }
      cmd_retrieve(ret_c.resolve(o), ret_ckpt);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace tribert::cli
