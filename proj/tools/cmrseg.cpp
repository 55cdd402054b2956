#include <CLI11.hpp>

#include <csignal>
#include <iostream>

#include <fmt/format.h>

#include "cmr/io/phantom.hpp"
#include "cmr/io/text_file.hpp"
#include "cmr/pipeline/pipeline.hpp"
#include "cmr/review/server.hpp"

namespace {

using namespace cmr;
using nlohmann::json;

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kMissing = 3 };

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string output;
  std::string dataset;
  std::string arch, loss, umap;
  int T = 0;
  double threshold = -1;
  std::vector<int> folds;
  bool force = false;
  bool quiet = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "experiment config (JSON)");
  app->add_option("-s,--set", c.overrides, "override a config key, e.g. segmentation.iterations=5000");
  app->add_option("-o,--output", c.output, "experiment directory (output_root)");
  app->add_option("-d,--dataset", c.dataset, fmt::format("dataset root (else ${})", pipeline::kDatasetEnv));
  app->add_option("--arch", c.arch, "dn | drn | unet");
  app->add_option("--loss", c.loss, "soft-dice | ce | brier");
  app->add_option("--umap", c.umap, "entropy | bayesian");
  app->add_option("--T", c.T, "MC samples");
  app->add_option("--threshold", c.threshold, "detection decision threshold");
  app->add_option("--folds", c.folds, "folds to process (default: all)");
  app->add_flag("-f,--force", c.force, "rerun completed stages");
  app->add_flag("-q,--quiet", c.quiet, "no progress output");
}

pipeline::ExperimentConfig resolve(const Common& c) {
  json doc = json::object();
  if (!c.config.empty()) {
    try {
      doc = json::parse(io::read_text(c.config));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ConfigError, fmt::format("{}: {}", c.config, e.what()));
    } catch (const Error& e) {
      throw Error(ErrorCode::ConfigError, e.what());
    }
  }
  for (const auto& o : c.overrides) pipeline::apply_override(doc, o);
  if (!c.output.empty()) doc["output_root"] = c.output;
  if (!c.dataset.empty()) doc["dataset_root"] = c.dataset;
  if (!c.arch.empty()) doc["arch"] = c.arch;
  if (!c.loss.empty()) doc["loss"] = c.loss;
  if (!c.umap.empty()) doc["umap"] = c.umap;
  if (c.T > 0) doc["T"] = c.T;
  if (c.threshold >= 0) doc["threshold"] = c.threshold;
  if (!c.folds.empty()) doc["folds"] = c.folds;
  return pipeline::config_from_json(doc);
}

pipeline::RunOptions run_options(const Common& c) {
  pipeline::RunOptions o;
  o.force = c.force;
  if (!c.quiet) o.log = [](const std::string& m) { std::cerr << m << std::endl; };
  return o;
}

int report_error(const Error& e) {
  std::cerr << "error: " << e.what() << std::endl;
  switch (e.code()) {
    case ErrorCode::ConfigError: return kConfig;
    case ErrorCode::MissingDependency: return kMissing;
    default: return kFailure;
  }
}

review::ReviewServer* g_server = nullptr;
void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cardiac MR segmentation with uncertainty-driven failure detection"};
  app.require_subcommand(1);
  Common common;

  auto* phantom = app.add_subcommand("phantom", "write a synthetic dataset in ACDC layout");
  std::string phantom_out;
  int per_group = 6;
  std::uint64_t phantom_seed = 1;
  phantom->add_option("out", phantom_out, "target directory")->required();
  phantom->add_option("--per-group", per_group, "patients per disease group");
  phantom->add_option("--seed", phantom_seed, "generator seed");

  std::map<CLI::App*, std::set<pipeline::Stage>> stage_cmds;
  for (pipeline::Stage s : pipeline::kAllStages) {
    if (s == pipeline::Stage::Correct) continue;
    auto* cmd = app.add_subcommand(std::string(pipeline::to_string(s)), fmt::format("run the {} stage", pipeline::to_string(s)));
    add_common(cmd, common);
    stage_cmds[cmd] = {s};
  }

  auto* correct = app.add_subcommand("correct", "simulate correction of flagged regions, or serve them for review");
  add_common(correct, common);
  std::string mode = "simulate";
  review::ServerOptions server_opts;
  correct->add_option("--mode", mode, "simulate | serve")->check(CLI::IsMember({"simulate", "serve"}));
  correct->add_option("--host", server_opts.host, "bind address (serve)");
  correct->add_option("--port", server_opts.port, "port (serve)");
  correct->add_option("--token", server_opts.token, "static bearer token (serve)");

  auto* run = app.add_subcommand("run", "run a list of stages (default: all)");
  add_common(run, common);
  std::vector<std::string> run_stages;
  run->add_option("stages", run_stages, "stage names");

  auto* ablate = app.add_subcommand("ablate", "sweep MC samples, patch size or tolerance");
  add_common(ablate, common);
  std::string ablation_kind;
  std::vector<int> ablation_values;
  ablate->add_option("kind", ablation_kind, "mc_samples | patch_size | tolerance")->required();
  ablate->add_option("--values", ablation_values, "subset of the swept values");

  auto* show = app.add_subcommand("config", "print the resolved configuration");
  add_common(show, common);

  CLI11_PARSE(app, argc, argv);

  try {
    if (phantom->parsed()) {
      io::PhantomOptions po;
      po.seed = phantom_seed;
      const auto ids = io::write_phantom_dataset(phantom_out, per_group, po);
      std::cout << fmt::format("wrote {} patients to {}", ids.size(), phantom_out) << std::endl;
      return kOk;
    }
    const auto cfg = resolve(common);
    if (show->parsed()) {
      std::cout << pipeline::to_json(cfg).dump(2) << std::endl;
      return kOk;
    }
    if (ablate->parsed()) {
      const auto out =
          pipeline::run_ablation(pipeline::parse_ablation(ablation_kind), cfg, ablation_values, run_options(common));
      std::cout << out.dump(2) << std::endl;
      return kOk;
    }
    if (correct->parsed() && mode == "serve") {
      review::ReviewService service(review::load_review_cases(cfg.output_root, cfg.active_folds(), cfg.umap_kind),
                                    cfg.output_root / "review");
      review::ReviewServer server(service, server_opts);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << fmt::format("serving review API on http://{}:{}", server_opts.host, server_opts.port) << std::endl;
      return server.listen() ? kOk : kFailure;
    }
    std::set<pipeline::Stage> stages;
    if (correct->parsed()) stages = {pipeline::Stage::Correct};
    for (const auto& [cmd, s] : stage_cmds)
      if (cmd->parsed()) stages = s;
    if (run->parsed()) {
      if (run_stages.empty()) stages.insert(pipeline::kAllStages.begin(), pipeline::kAllStages.end());
      for (const auto& name : run_stages) stages.insert(pipeline::parse_stage(name));
    }
    const auto result = pipeline::run_pipeline(cfg, stages, run_options(common));
    for (const auto& o : result.outcomes)
      std::cout << fmt::format("{}{}: {}", pipeline::to_string(o.stage), o.fold ? fmt::format(" fold {}", *o.fold) : "",
                               o.skipped ? "skipped" : "done")
                << std::endl;
    for (const auto& p : result.reports) std::cout << "report: " << p.string() << std::endl;
    return kOk;
  } catch (const Error& e) {
    return report_error(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kFailure;
  }
}
