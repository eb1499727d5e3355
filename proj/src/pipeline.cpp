#include "sagerec/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sagerec/error.hpp"
#include "sagerec/rng.hpp"

namespace sagerec {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t p = s.find(sep, start);
    if (p == std::string::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, p - start));
    start = p + 1;
  }
}

std::int64_t to_i64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    std::int64_t v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "': expected integer, got '" + value + "'");
  }
}

double to_f64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "': expected number, got '" + value + "'");
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ValidationError("config key '" + key + "': expected true/false, got '" + value + "'");
}

std::vector<int> to_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  for (const std::string& tok : split(value, ','))
    if (!trim(tok).empty()) out.push_back(static_cast<int>(to_i64(key, trim(tok))));
  return out;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void apply_one(PipelineConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "interactions") {
    cfg.interactions_path = value;
  } else if (key == "catalog") {
    cfg.catalog_path = value;
  } else if (key == "workdir") {
    cfg.workdir = value;
  } else if (key == "seed") {
    // broadcast: later per-section keys may still override
    cfg.seed = static_cast<std::uint64_t>(to_i64(key, value));
    cfg.synth.seed = cfg.seed;
    cfg.hgnn.seed = cfg.seed;
    cfg.twotower.seed = cfg.seed;
  } else if (key == "threads") {
    cfg.threads = static_cast<int>(to_i64(key, value));
  } else if (key == "eval.k") {
    cfg.eval_k = static_cast<int>(to_i64(key, value));
  } else if (key == "eval.train_days") {
    cfg.train_days = static_cast<int>(to_i64(key, value));
  } else if (key == "eval.test_days") {
    cfg.test_days = static_cast<int>(to_i64(key, value));
  } else if (key == "eval.ablation_lag_days") {
    cfg.ablation_lag_days = static_cast<int>(to_i64(key, value));
  } else if (key.rfind("synth.", 0) == 0) {
    try {
      apply_synthetic_config_key(cfg.synth, key.substr(6), value);
    } catch (const ParseError& e) {
      throw ValidationError("config key '" + key + "': " + e.what());
    }
  } else if (key == "graph.min_co_users") {
    cfg.graph.min_co_users = static_cast<int>(to_i64(key, value));
  } else if (key == "graph.max_items_per_user") {
    cfg.graph.max_items_per_user = static_cast<int>(to_i64(key, value));
  } else if (key == "hgnn.n_layers") {
    cfg.hgnn.n_layers = static_cast<int>(to_i64(key, value));
  } else if (key == "hgnn.hidden_dim") {
    cfg.hgnn.hidden_dim = static_cast<int>(to_i64(key, value));
  } else if (key == "hgnn.out_dim") {
    cfg.hgnn.out_dim = static_cast<int>(to_i64(key, value));
  } else if (key == "hgnn.fanouts") {
    cfg.hgnn.fanouts = to_int_list(key, value);
  } else if (key == "hgnn.margin") {
    cfg.hgnn.margin = to_f64(key, value);
  } else if (key == "hgnn.negatives_per_positive") {
    cfg.hgnn.negatives_per_positive = static_cast<int>(to_i64(key, value));
  } else if (key == "hgnn.epochs") {
    cfg.hgnn.epochs = static_cast<int>(to_i64(key, value));
  } else if (key == "hgnn.batch_size") {
    cfg.hgnn.batch_size = static_cast<int>(to_i64(key, value));
  } else if (key == "hgnn.lr") {
    cfg.hgnn.lr = to_f64(key, value);
  } else if (key == "hgnn.val_fraction") {
    cfg.hgnn.val_fraction = to_f64(key, value);
  } else if (key == "hgnn.seed") {
    cfg.hgnn.seed = static_cast<std::uint64_t>(to_i64(key, value));
  } else if (key == "twotower.d_final") {
    cfg.twotower.d_final = static_cast<int>(to_i64(key, value));
  } else if (key == "twotower.hidden") {
    cfg.twotower.hidden = to_int_list(key, value);
  } else if (key == "twotower.temperature") {
    cfg.twotower.temperature = to_f64(key, value);
  } else if (key == "twotower.window_days") {
    cfg.twotower.window_days = static_cast<int>(to_i64(key, value));
  } else if (key == "twotower.batch_size") {
    cfg.twotower.batch_size = static_cast<int>(to_i64(key, value));
  } else if (key == "twotower.epochs") {
    cfg.twotower.epochs = static_cast<int>(to_i64(key, value));
  } else if (key == "twotower.lr") {
    cfg.twotower.lr = to_f64(key, value);
  } else if (key == "twotower.seed") {
    cfg.twotower.seed = static_cast<std::uint64_t>(to_i64(key, value));
  } else if (key == "twotower.use_gnn_features") {
    cfg.twotower.use_gnn_features = to_bool(key, value);
  } else if (key == "twotower.unified") {
    cfg.twotower.unified = to_bool(key, value);
  } else if (key == "twotower.type_filter") {
    cfg.twotower.type_filter = value;
  } else if (key == "twotower.d_id") {
    cfg.twotower.d_id = static_cast<int>(to_i64(key, value));
  } else if (key == "twotower.d_aux") {
    cfg.twotower.d_aux = static_cast<int>(to_i64(key, value));
  } else {
    throw ValidationError("unknown config key '" + key + "'");
  }
}

}  // namespace

PipelineConfig PipelineConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path);
  PipelineConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos) throw ParseError("expected `key = value`", lineno);
    try {
      apply_one(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return cfg;
}

void PipelineConfig::apply(const std::vector<std::pair<std::string, std::string>>& overrides) {
  for (const auto& [key, value] : overrides) apply_one(*this, key, value);
}

std::string PipelineConfig::resolved_interactions() const {
  return interactions_path.empty() ? (fs::path(workdir) / "interactions.tsv").string()
                                   : interactions_path;
}

std::string PipelineConfig::resolved_catalog() const {
  return catalog_path.empty() ? (fs::path(workdir) / "catalog.tsv").string() : catalog_path;
}

std::string PipelineConfig::canonical_text() const {
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("interactions", resolved_interactions());
  kv.emplace_back("catalog", resolved_catalog());
  kv.emplace_back("workdir", workdir);
  kv.emplace_back("seed", std::to_string(seed));
  kv.emplace_back("threads", std::to_string(threads));
  kv.emplace_back("eval.k", std::to_string(eval_k));
  kv.emplace_back("eval.train_days", std::to_string(train_days));
  kv.emplace_back("eval.test_days", std::to_string(test_days));
  kv.emplace_back("eval.ablation_lag_days", std::to_string(ablation_lag_days));
  {
    std::stringstream synth_ss;
    serialize_synthetic_config(synth, synth_ss);
    std::string l;
    while (std::getline(synth_ss, l)) {
      std::size_t eq = l.find('=');
      kv.emplace_back("synth." + trim(l.substr(0, eq)), trim(l.substr(eq + 1)));
    }
  }
  kv.emplace_back("graph.min_co_users", std::to_string(graph.min_co_users));
  kv.emplace_back("graph.max_items_per_user", std::to_string(graph.max_items_per_user));
  kv.emplace_back("hgnn.n_layers", std::to_string(hgnn.n_layers));
  kv.emplace_back("hgnn.hidden_dim", std::to_string(hgnn.hidden_dim));
  kv.emplace_back("hgnn.out_dim", std::to_string(hgnn.out_dim));
  {
    std::string f;
    for (std::size_t i = 0; i < hgnn.fanouts.size(); ++i)
      f += (i ? "," : "") + std::to_string(hgnn.fanouts[i]);
    kv.emplace_back("hgnn.fanouts", f);
  }
  kv.emplace_back("hgnn.margin", fmt_double(hgnn.margin));
  kv.emplace_back("hgnn.negatives_per_positive", std::to_string(hgnn.negatives_per_positive));
  kv.emplace_back("hgnn.epochs", std::to_string(hgnn.epochs));
  kv.emplace_back("hgnn.batch_size", std::to_string(hgnn.batch_size));
  kv.emplace_back("hgnn.lr", fmt_double(hgnn.lr));
  kv.emplace_back("hgnn.val_fraction", fmt_double(hgnn.val_fraction));
  kv.emplace_back("hgnn.seed", std::to_string(hgnn.seed));
  kv.emplace_back("twotower.d_final", std::to_string(twotower.d_final));
  {
    std::string h;
    for (std::size_t i = 0; i < twotower.hidden.size(); ++i)
      h += (i ? "," : "") + std::to_string(twotower.hidden[i]);
    kv.emplace_back("twotower.hidden", h);
  }
  kv.emplace_back("twotower.temperature", fmt_double(twotower.temperature));
  kv.emplace_back("twotower.window_days", std::to_string(twotower.window_days));
  kv.emplace_back("twotower.batch_size", std::to_string(twotower.batch_size));
  kv.emplace_back("twotower.epochs", std::to_string(twotower.epochs));
  kv.emplace_back("twotower.lr", fmt_double(twotower.lr));
  kv.emplace_back("twotower.seed", std::to_string(twotower.seed));
  kv.emplace_back("twotower.use_gnn_features", twotower.use_gnn_features ? "true" : "false");
  kv.emplace_back("twotower.unified", twotower.unified ? "true" : "false");
  kv.emplace_back("twotower.type_filter", twotower.type_filter);
  kv.emplace_back("twotower.d_id", std::to_string(twotower.d_id));
  kv.emplace_back("twotower.d_aux", std::to_string(twotower.d_aux));
  std::sort(kv.begin(), kv.end());
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::string PipelineConfig::config_hash() const {
  // FNV-1a 64
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : canonical_text()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

void require_file(const std::string& path, const std::string& hint) {
  if (!fs::exists(path))
    throw IoError("missing artifact: " + path + " (" + hint + ")");
}

std::vector<InteractionEvent> load_events(const PipelineConfig& cfg) {
  const std::string path = cfg.resolved_interactions();
  require_file(path, "provide an interactions file or run gen-data first");
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  return parse_interactions(in);
}

Catalog load_catalog(const PipelineConfig& cfg) {
  const std::string path = cfg.resolved_catalog();
  require_file(path, "provide a catalog file or run gen-data first");
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  return parse_catalog(in);
}

ItemEmbeddingStore load_store(const PipelineConfig& cfg) {
  const std::string path = (fs::path(cfg.workdir) / "embeddings.tsv").string();
  require_file(path, "run train-hgnn first");
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  return ItemEmbeddingStore::load(in);
}

TwoTowerParams load_checkpoint(const PipelineConfig& cfg) {
  const std::string path = (fs::path(cfg.workdir) / "twotower.ckpt").string();
  require_file(path, "run train-2t first");
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  return TwoTowerParams::load(in);
}

void write_manifest(const PipelineConfig& cfg, const std::string& command, long long wall_ms) {
  std::ofstream out(fs::path(cfg.workdir) / (command + ".manifest"));
  out << "command = " << command << '\n';
  out << "seed = " << cfg.seed << '\n';
  out << "threads = " << cfg.threads << '\n';
  out << "config_hash = " << cfg.config_hash() << '\n';
  out << "wall_ms = " << wall_ms << '\n';
  std::stringstream canon(cfg.canonical_text());
  std::string line;
  while (std::getline(canon, line)) out << "config." << line << '\n';
}

std::string model_variant_name(const TwoTowerConfig& cfg) {
  if (!cfg.unified) return "specific:" + cfg.type_filter;
  return cfg.use_gnn_features ? "unified" : "unified-no-gnn";
}

void cmd_gen_data(const PipelineConfig& cfg) {
  auto [catalog, events] = generate_synthetic(cfg.synth);
  {
    std::ofstream out(fs::path(cfg.workdir) / "catalog.tsv");
    serialize_catalog(catalog, out);
  }
  {
    std::ofstream out(fs::path(cfg.workdir) / "interactions.tsv");
    serialize_interactions(events, out);
  }
}

void cmd_build_graph(const PipelineConfig& cfg, std::ostream& log) {
  Catalog catalog = load_catalog(cfg);
  std::vector<InteractionEvent> events = load_events(cfg);
  EvalSplit split = temporal_split(events, cfg.train_days, cfg.test_days);
  GraphBuildConfig gcfg = cfg.graph;
  gcfg.window_end = split.cutoff_time;
  gcfg.window_start = split.cutoff_time - static_cast<Timestamp>(cfg.train_days) * 86400;
  HeteroGraph graph = build_graph(events, catalog, gcfg);
  std::ofstream out(fs::path(cfg.workdir) / "graph.txt");
  graph.save(out);
  log << "graph: " << graph.n_nodes() << " nodes, " << graph.n_edges() << " edges, "
      << graph.n_relations() << " relations\n";
}

void cmd_train_hgnn(const PipelineConfig& cfg, std::ostream& log) {
  const std::string gpath = (fs::path(cfg.workdir) / "graph.txt").string();
  require_file(gpath, "run build-graph first");
  std::ifstream gin(gpath);
  HeteroGraph graph = HeteroGraph::load(gin);
  Catalog catalog = load_catalog(cfg);
  Matrix features = node_features(graph, catalog);
  HgnnTrainResult result = train_hgnn(graph, features, cfg.hgnn);
  for (std::size_t e = 0; e < result.history.size(); ++e) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "epoch %zu: loss=%.6f val_auc=%.4f", e,
                  result.history[e].mean_loss, result.history[e].val_auc);
    log << buf << '\n';
  }
  ItemEmbeddingStore store =
      export_embeddings(graph, features, result.params, cfg.hgnn.fanouts,
                        mix64(cfg.hgnn.seed, 0x51), "hgnn-seed" + std::to_string(cfg.hgnn.seed));
  std::ofstream out(fs::path(cfg.workdir) / "embeddings.tsv");
  store.save(out);
}

void cmd_train_2t(const PipelineConfig& cfg, std::ostream& log) {
  Catalog catalog = load_catalog(cfg);
  std::vector<InteractionEvent> events = load_events(cfg);
  EvalSplit split = temporal_split(events, cfg.train_days, cfg.test_days);
  TwoTowerConfig tcfg = cfg.twotower;
  tcfg.d_gnn = cfg.hgnn.out_dim;
  ItemEmbeddingStore store;
  const ItemEmbeddingStore* store_ptr = nullptr;
  if (tcfg.use_gnn_features) {
    store = load_store(cfg);
    store_ptr = &store;
  }
  TwoTowerTrainResult result = train_two_tower(split.train, catalog, store_ptr, tcfg);
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "epoch %zu: loss=%.6f", e, result.epoch_loss[e]);
    log << buf << '\n';
  }
  std::ofstream out(fs::path(cfg.workdir) / "twotower.ckpt");
  result.params.save(out);
}

void cmd_evaluate(const PipelineConfig& cfg, std::ostream& log) {
  Catalog catalog = load_catalog(cfg);
  std::vector<InteractionEvent> events = load_events(cfg);
  EvalSplit split = temporal_split(events, cfg.train_days, cfg.test_days);
  TwoTowerConfig tcfg = cfg.twotower;
  tcfg.d_gnn = cfg.hgnn.out_dim;
  ItemEmbeddingStore store;
  RetrievalModel model;
  model.catalog = &catalog;
  model.cfg = tcfg;
  if (tcfg.use_gnn_features) {
    store = load_store(cfg);
    model.store = &store;
  }
  model.params = load_checkpoint(cfg);

  std::vector<HitRateRow> rows = hit_rate_at_k(split, model, cfg.eval_k, cfg.threads);
  AblationReport report;
  const std::string variant = model_variant_name(tcfg);
  for (const HitRateRow& r : rows)
    report.rows.push_back({variant, r.item_type, r.k, r.hit_rate, r.n_events});
  std::ofstream out(fs::path(cfg.workdir) / "report.tsv");
  report.save(out);
  log << report.table();
}

void cmd_ablate(const PipelineConfig& cfg, std::ostream& log) {
  Catalog catalog = load_catalog(cfg);
  std::vector<InteractionEvent> events = load_events(cfg);
  AblationInput input;
  input.events = &events;
  input.catalog = &catalog;
  input.graph_cfg = cfg.graph;
  input.hgnn_cfg = cfg.hgnn;
  input.tt_cfg = cfg.twotower;
  input.k = cfg.eval_k;
  input.train_days = cfg.train_days;
  input.test_days = cfg.test_days;
  input.threads = cfg.threads;
  AblationReport report =
      run_ablations(input, standard_ablation_variants(catalog, cfg.ablation_lag_days));
  std::ofstream out(fs::path(cfg.workdir) / "ablation.tsv");
  report.save(out);
  log << report.table();
}

void cmd_recommend(const PipelineConfig& cfg,
                   const std::vector<std::pair<std::string, std::string>>& extras,
                   std::ostream& log) {
  UserId user = -1;
  int k = cfg.eval_k;
  for (const auto& [key, value] : extras) {
    if (key == "user")
      user = to_i64(key, value);
    else if (key == "k")
      k = static_cast<int>(to_i64(key, value));
    else
      throw ValidationError("recommend: unknown option '" + key + "'");
  }
  if (user < 0) throw ValidationError("recommend: --user <id> is required");

  Catalog catalog = load_catalog(cfg);
  std::vector<InteractionEvent> events = load_events(cfg);
  TwoTowerConfig tcfg = cfg.twotower;
  tcfg.d_gnn = cfg.hgnn.out_dim;
  ItemEmbeddingStore store;
  RetrievalModel model;
  model.catalog = &catalog;
  model.cfg = tcfg;
  if (tcfg.use_gnn_features) {
    store = load_store(cfg);
    model.store = &store;
  }
  model.params = load_checkpoint(cfg);

  Timestamp t_max = 0;
  std::vector<InteractionEvent> user_events;
  for (const InteractionEvent& ev : events) {
    t_max = std::max(t_max, ev.timestamp);
    if (ev.user_id == user) user_events.push_back(ev);
  }
  const Timestamp cutoff = t_max + 1;
  const int d_gnn = model.store ? model.store->dim() : tcfg.d_gnn;
  UserProfile profile = build_user_profile(user_events, cutoff, tcfg.window_days, model.store,
                                           catalog, d_gnn, tcfg.d_aux);
  profile.user_id = user;
  std::unordered_set<ItemId> exclusions;
  const Timestamp window_start = cutoff - static_cast<Timestamp>(tcfg.window_days) * 86400;
  for (const InteractionEvent& ev : user_events)
    if (ev.timestamp >= window_start && ev.timestamp < cutoff)
      exclusions.insert(catalog.top_level_id(ev.item_id));

  // rank the full top-level catalog across all types
  std::vector<double> user_vec = user_tower_forward(profile, model.params);
  std::vector<std::pair<double, ItemId>> scored;
  for (const std::string& type : catalog.top_level_type_names()) {
    ItemIndex index = build_item_index(model, type);
    for (std::size_t r = 0; r < index.items.size(); ++r) {
      const ItemId id = catalog.items()[index.items[r]].item_id;
      if (exclusions.count(id)) continue;
      scored.emplace_back(
          dot(index.vectors.row(static_cast<int>(r)), user_vec.data(), index.vectors.cols), id);
    }
  }
  if (scored.empty()) throw ValidationError("recommend: no candidates left after exclusions");
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  const std::size_t take = std::min<std::size_t>(k, scored.size());
  for (std::size_t i = 0; i < take; ++i) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%2zu  item=%lld  type=%s  score=%.4f", i + 1,
                  static_cast<long long>(scored[i].second),
                  catalog.get(scored[i].second).item_type.c_str(), scored[i].first);
    log << buf << '\n';
  }
}

}  // namespace

int run_command(const std::string& command, const PipelineConfig& cfg,
                const std::vector<std::pair<std::string, std::string>>& extras,
                std::ostream* out, std::ostream* err) {
  std::ostream& log = out ? *out : std::cout;
  std::ostream& diag = err ? *err : std::cerr;
  const auto start = std::chrono::steady_clock::now();
  try {
    fs::create_directories(cfg.workdir);
    if (command == "gen-data")
      cmd_gen_data(cfg);
    else if (command == "build-graph")
      cmd_build_graph(cfg, log);
    else if (command == "train-hgnn")
      cmd_train_hgnn(cfg, log);
    else if (command == "train-2t")
      cmd_train_2t(cfg, log);
    else if (command == "evaluate")
      cmd_evaluate(cfg, log);
    else if (command == "ablate")
      cmd_ablate(cfg, log);
    else if (command == "recommend")
      cmd_recommend(cfg, extras, log);
    else {
      diag << "sagerec: unknown command '" << command << "'\n";
      return 2;
    }
  } catch (const std::exception& e) {
    diag << "sagerec " << command << ": " << e.what() << '\n';
    return 1;
  }
  const auto wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::steady_clock::now() - start)
                           .count();
  write_manifest(cfg, command, wall_ms);
  return 0;
}

}  // namespace sagerec
