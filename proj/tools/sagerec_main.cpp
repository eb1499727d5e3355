#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "sagerec/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"item co-interaction graph embeddings + two-tower retrieval pipeline"};
  app.fallthrough();

  std::string config_path;
  std::int64_t seed = -1;
  int threads = -1;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "pipeline config file (key = value lines)");
  app.add_option("--seed", seed, "global seed, propagated to every stage");
  app.add_option("--threads", threads, "worker threads (1 = deterministic reference mode)");
  app.add_option("--set", sets, "override any config key, e.g. --set hgnn.epochs=3")
      ->take_all();

  app.require_subcommand(1);
  auto* gen = app.add_subcommand("gen-data", "generate a seeded synthetic dataset");
  auto* graph = app.add_subcommand("build-graph", "build the co-interaction graph");
  auto* hgnn = app.add_subcommand("train-hgnn", "train the foundation layer, export embeddings");
  auto* tt = app.add_subcommand("train-2t", "train the two-tower adaptation layer");
  auto* eval = app.add_subcommand("evaluate", "temporal-split HR@K report");
  auto* ablate = app.add_subcommand("ablate", "run the standard ablation matrix");
  auto* rec = app.add_subcommand("recommend", "top-k recommendations for one user");
  std::int64_t user = -1;
  int k = -1;
  rec->add_option("--user", user, "user id")->required();
  rec->add_option("--k", k, "list length (defaults to eval.k)");

  CLI11_PARSE(app, argc, argv);

  try {
    sagerec::PipelineConfig cfg;
    if (!config_path.empty()) cfg = sagerec::PipelineConfig::from_file(config_path);
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const std::string& s : sets) {
      std::size_t eq = s.find('=');
      if (eq == std::string::npos) {
        std::cerr << "sagerec: --set expects key=value, got '" << s << "'\n";
        return 2;
      }
      overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    if (seed >= 0) overrides.emplace_back("seed", std::to_string(seed));
    if (threads >= 0) overrides.emplace_back("threads", std::to_string(threads));
    cfg.apply(overrides);

    std::string command;
    std::vector<std::pair<std::string, std::string>> extras;
    for (CLI::App* sub : {gen, graph, hgnn, tt, eval, ablate, rec})
      if (sub->parsed()) command = sub->get_name();
    if (rec->parsed()) {
      extras.emplace_back("user", std::to_string(user));
      if (k > 0) extras.emplace_back("k", std::to_string(k));
    }
    return sagerec::run_command(command, cfg, extras);
  } catch (const std::exception& e) {
    std::cerr << "sagerec: " << e.what() << '\n';
    return 1;
  }
}
