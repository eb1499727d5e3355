#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "sagerec/error.hpp"
#include "sagerec/pipeline.hpp"

using namespace sagerec;
namespace fs = std::filesystem;

namespace {

// small, fast settings for end-to-end pipeline tests
PipelineConfig tiny_config(const std::string& workdir) {
  PipelineConfig cfg;
  cfg.workdir = workdir;
  cfg.synth.n_users = 50;
  cfg.synth.items_per_type = {{"show", 14}, {"audiobook", 6}};
  cfg.synth.n_topics = 3;
  cfg.synth.d_text = 6;
  cfg.synth.events_per_user = 12;
  cfg.synth.horizon_days = 104;
  cfg.hgnn.n_layers = 2;
  cfg.hgnn.hidden_dim = 8;
  cfg.hgnn.out_dim = 8;
  cfg.hgnn.fanouts = {4, 4};
  cfg.hgnn.epochs = 1;
  cfg.hgnn.batch_size = 64;
  cfg.twotower.d_final = 8;
  cfg.twotower.hidden = {8};
  cfg.twotower.epochs = 1;
  cfg.twotower.batch_size = 32;
  cfg.twotower.d_id = 4;
  cfg.twotower.d_aux = 2;
  cfg.eval_k = 5;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("full pipeline writes every artifact and a report") {
  TempDir dir("sagerec_pipe_full");
  PipelineConfig cfg = tiny_config(dir.path.string());
  std::ostringstream out, err;
  for (const char* cmd : {"gen-data", "build-graph", "train-hgnn", "train-2t", "evaluate"}) {
    INFO("command: ", cmd, " stderr: ", err.str());
    CHECK(run_command(cmd, cfg, {}, &out, &err) == 0);
  }
  for (const char* artifact : {"interactions.tsv", "catalog.tsv", "graph.txt", "embeddings.tsv",
                               "twotower.ckpt", "report.tsv"})
    CHECK(fs::exists(dir.path / artifact));
  CHECK(fs::exists(dir.path / "evaluate.manifest"));
  const std::string manifest = slurp(dir.path / "evaluate.manifest");
  CHECK(manifest.find("config_hash = ") != std::string::npos);
  CHECK(manifest.find("seed = 42") != std::string::npos);
  const std::string report = slurp(dir.path / "report.tsv");
  CHECK(report.find("unified\t") == 0);
}

TEST_CASE("train-2t without the embedding store names the missing artifact") {
  TempDir dir("sagerec_pipe_missing");
  PipelineConfig cfg = tiny_config(dir.path.string());
  std::ostringstream out, err;
  REQUIRE(run_command("gen-data", cfg, {}, &out, &err) == 0);
  CHECK(run_command("train-2t", cfg, {}, &out, &err) != 0);
  CHECK(err.str().find("embeddings.tsv") != std::string::npos);
  CHECK(!fs::exists(dir.path / "twotower.ckpt"));
}

TEST_CASE("train-2t without gnn features runs storeless") {
  TempDir dir("sagerec_pipe_nognn");
  PipelineConfig cfg = tiny_config(dir.path.string());
  cfg.twotower.use_gnn_features = false;
  std::ostringstream out, err;
  REQUIRE(run_command("gen-data", cfg, {}, &out, &err) == 0);
  INFO(err.str());
  CHECK(run_command("train-2t", cfg, {}, &out, &err) == 0);
  CHECK(fs::exists(dir.path / "twotower.ckpt"));
}

TEST_CASE("unknown command is a distinct nonzero status") {
  TempDir dir("sagerec_pipe_unknown");
  PipelineConfig cfg = tiny_config(dir.path.string());
  std::ostringstream out, err;
  CHECK(run_command("frobnicate", cfg, {}, &out, &err) == 2);
  CHECK(err.str().find("unknown command") != std::string::npos);
}

TEST_CASE("evaluate is byte-deterministic for a fixed seed") {
  TempDir dir_a("sagerec_pipe_det_a");
  TempDir dir_b("sagerec_pipe_det_b");
  std::ostringstream out, err;
  for (const auto& dir : {dir_a.path, dir_b.path}) {
    PipelineConfig cfg = tiny_config(dir.string());
    for (const char* cmd : {"gen-data", "build-graph", "train-hgnn", "train-2t", "evaluate"}) {
      INFO(err.str());
      REQUIRE(run_command(cmd, cfg, {}, &out, &err) == 0);
    }
  }
  CHECK(slurp(dir_a.path / "report.tsv") == slurp(dir_b.path / "report.tsv"));
  CHECK(slurp(dir_a.path / "interactions.tsv") == slurp(dir_b.path / "interactions.tsv"));
  CHECK(slurp(dir_a.path / "embeddings.tsv") == slurp(dir_b.path / "embeddings.tsv"));
}

TEST_CASE("recommend prints a ranked list for a user") {
  TempDir dir("sagerec_pipe_rec");
  PipelineConfig cfg = tiny_config(dir.path.string());
  std::ostringstream out, err;
  for (const char* cmd : {"gen-data", "build-graph", "train-hgnn", "train-2t"})
    REQUIRE(run_command(cmd, cfg, {}, &out, &err) == 0);
  std::ostringstream rec_out;
  CHECK(run_command("recommend", cfg, {{"user", "3"}, {"k", "4"}}, &rec_out, &err) == 0);
  INFO(err.str());
  std::istringstream lines(rec_out.str());
  std::string line;
  int count = 0;
  while (std::getline(lines, line))
    if (line.find("item=") != std::string::npos) ++count;
  CHECK(count == 4);
}

TEST_CASE("recommend requires --user") {
  TempDir dir("sagerec_pipe_rec_nouser");
  PipelineConfig cfg = tiny_config(dir.path.string());
  std::ostringstream out, err;
  CHECK(run_command("recommend", cfg, {}, &out, &err) != 0);
  CHECK(err.str().find("--user") != std::string::npos);
}

TEST_CASE("config file parsing, overrides and the seed broadcast") {
  TempDir dir("sagerec_pipe_cfg");
  const fs::path cfg_path = dir.path / "pipeline.cfg";
  {
    std::ofstream out(cfg_path);
    out << "# comment\n";
    out << "workdir = " << (dir.path / "w").string() << "\n";
    out << "seed = 7\n";
    out << "hgnn.seed = 9\n";
    out << "hgnn.fanouts = 3,2\n";
    out << "synth.items_per_type = show:5,audiobook:3\n";
    out << "twotower.use_gnn_features = false\n";
  }
  PipelineConfig cfg = PipelineConfig::from_file(cfg_path.string());
  CHECK(cfg.seed == 7);
  CHECK(cfg.synth.seed == 7);      // broadcast
  CHECK(cfg.twotower.seed == 7);   // broadcast
  CHECK(cfg.hgnn.seed == 9);       // later section key wins
  CHECK(cfg.hgnn.fanouts == std::vector<int>{3, 2});
  CHECK(cfg.synth.items_per_type ==
        std::vector<std::pair<std::string, int>>{{"show", 5}, {"audiobook", 3}});
  CHECK(cfg.twotower.use_gnn_features == false);

  cfg.apply({{"twotower.epochs", "9"}, {"eval.k", "3"}});
  CHECK(cfg.twotower.epochs == 9);
  CHECK(cfg.eval_k == 3);
  CHECK_THROWS_AS(cfg.apply({{"nonsense.key", "1"}}), ValidationError);
  CHECK_THROWS_AS(cfg.apply({{"hgnn.epochs", "abc"}}), ValidationError);
}

TEST_CASE("config hash tracks content changes") {
  PipelineConfig a = tiny_config("w");
  PipelineConfig b = a;
  CHECK(a.config_hash() == b.config_hash());
  b.twotower.temperature = 0.123;
  CHECK(a.config_hash() != b.config_hash());
}

TEST_CASE("ablate runs the standard matrix on a small dataset") {
  TempDir dir("sagerec_pipe_ablate");
  PipelineConfig cfg = tiny_config(dir.path.string());
  cfg.twotower.epochs = 1;
  cfg.hgnn.epochs = 1;
  std::ostringstream out, err;
  REQUIRE(run_command("gen-data", cfg, {}, &out, &err) == 0);
  INFO(err.str());
  CHECK(run_command("ablate", cfg, {}, &out, &err) == 0);
  const std::string report = slurp(dir.path / "ablation.tsv");
  CHECK(report.find("unified\t") != std::string::npos);
  CHECK(report.find("specific:audiobook\t") != std::string::npos);
  CHECK(report.find("unified-no-gnn\t") != std::string::npos);
  CHECK(report.find("unified-frozen-hgnn\t") != std::string::npos);
}
