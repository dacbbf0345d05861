// Command-line front end: one subcommand per pipeline stage.

#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "eegscribe/pipeline/pipeline.hpp"

namespace ep = eegscribe::pipeline;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool all = false;
};

ep::ExperimentConfig resolve(const Options& o) {
  ep::ExperimentConfig c;
  try {
    c = o.config.empty() ? ep::default_config() : ep::load_config(o.config);
  } catch (const std::exception& e) {
    throw ep::PipelineError("config", e.what(), std::current_exception());
  }
  if (!o.out.empty()) c.out_dir = o.out;
  if (o.seed) c.seed = *o.seed;
  return c;
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "INI experiment config (defaults apply when omitted)")->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "Output directory, overrides experiment.out_dir");
  cmd->add_option("--seed", o.seed, "Master seed, overrides experiment.seed");
  cmd->add_flag("--all", o.all, "Run every upstream stage first");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EEG handwriting decoding: preprocessing, contrastive embeddings, fusion classifiers"};
  app.require_subcommand(1);
  app.fallthrough();
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only log warnings and errors");

  Options o;
  std::map<std::string, std::function<void(const ep::ExperimentConfig&, bool)>> stages{
      {"generate", [](const ep::ExperimentConfig& c, bool) { ep::cmd_generate(c); }},
      {"preprocess",
       [](const ep::ExperimentConfig& c, bool all) {
         if (all && c.data.synthetic) ep::cmd_generate(c);
         ep::cmd_preprocess(c);
       }},
      {"train-embed",
       [](const ep::ExperimentConfig& c, bool all) {
         if (all) {
           if (c.data.synthetic) ep::cmd_generate(c);
           ep::cmd_preprocess(c);
         }
         ep::cmd_train_embed(c);
       }},
      {"run", [](const ep::ExperimentConfig& c, bool all) { ep::cmd_run(c, all); }},
  };
  const std::map<std::string, std::string> help{
      {"generate", "Write a synthetic session with ground truth"},
      {"preprocess", "Filter, remove blink components, epoch and split into folds"},
      {"train-embed", "Fit one contrastive encoder per embedding width and fold round"},
      {"run", "Cross-validate every configured model and write result tables"},
  };
  for (const auto& [name, text] : help) add_common(app.add_subcommand(name, text), o);

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    stages.at(name)(resolve(o), o.all);
  } catch (const ep::PipelineError& e) {
    std::cerr << "eegscribe " << name << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "eegscribe " << name << ": [" << name << "] " << e.what() << '\n';
    return 1;
  }
  return 0;
}
