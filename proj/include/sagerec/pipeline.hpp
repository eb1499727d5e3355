#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "sagerec/cograph.hpp"
#include "sagerec/corpus.hpp"
#include "sagerec/evalharness.hpp"
#include "sagerec/hgnn.hpp"
#include "sagerec/two_tower.hpp"

namespace sagerec {

// Full pipeline configuration: a flat `key = value` file with dotted section
// prefixes (synth.*, graph.*, hgnn.*, twotower.*, eval.*). A bare `seed` key
// propagates to every sub-config unless that sub-config sets its own.
struct PipelineConfig {
  std::string interactions_path;  // defaults to <workdir>/interactions.tsv
  std::string catalog_path;       // defaults to <workdir>/catalog.tsv
  std::string workdir = "work";
  std::uint64_t seed = 42;
  int threads = 1;

  SyntheticConfig synth;
  GraphBuildConfig graph;
  HgnnConfig hgnn;
  TwoTowerConfig twotower;

  int eval_k = 10;
  int train_days = 90;
  int test_days = 14;
  int ablation_lag_days = 7;

  static PipelineConfig from_file(const std::string& path);
  // later entries win; `overrides` uses the same keys as the file
  void apply(const std::vector<std::pair<std::string, std::string>>& overrides);

  std::string resolved_interactions() const;
  std::string resolved_catalog() const;

  // canonical sorted key=value dump; hashing it fingerprints a run
  std::string canonical_text() const;
  std::string config_hash() const;
};

// Subcommands: gen-data, build-graph, train-hgnn, train-2t, evaluate,
// ablate, recommend. Each writes its artifacts plus a `<command>.manifest`
// into the workdir and returns 0 on success. Diagnostics go to `err`.
int run_command(const std::string& command, const PipelineConfig& cfg,
                const std::vector<std::pair<std::string, std::string>>& extras = {},
                std::ostream* out = nullptr, std::ostream* err = nullptr);

}  // namespace sagerec
