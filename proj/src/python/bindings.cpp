#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>
#include <sstream>

#include "sagerec/cograph.hpp"
#include "sagerec/corpus.hpp"
#include "sagerec/error.hpp"
#include "sagerec/evalharness.hpp"
#include "sagerec/hgnn.hpp"
#include "sagerec/pipeline.hpp"
#include "sagerec/rng.hpp"
#include "sagerec/two_tower.hpp"

namespace py = pybind11;
using namespace sagerec;

namespace {

std::vector<std::vector<double>> matrix_to_rows(const Matrix& m) {
  std::vector<std::vector<double>> rows(m.rows);
  for (int i = 0; i < m.rows; ++i) rows[i].assign(m.row(i), m.row(i) + m.cols);
  return rows;
}

template <typename T>
void save_to_path(const T& obj, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  obj.save(out);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "item co-interaction graph embeddings and two-tower retrieval";

  py::register_exception<Error>(m, "SagerecError");

  py::class_<InteractionEvent>(m, "InteractionEvent")
      .def(py::init([](UserId u, ItemId i, Timestamp t) {
             return InteractionEvent{u, i, t};
           }),
           py::arg("user_id"), py::arg("item_id"), py::arg("timestamp"))
      .def_readwrite("user_id", &InteractionEvent::user_id)
      .def_readwrite("item_id", &InteractionEvent::item_id)
      .def_readwrite("timestamp", &InteractionEvent::timestamp)
      .def("__repr__", [](const InteractionEvent& e) {
        std::ostringstream ss;
        ss << "InteractionEvent(user_id=" << e.user_id << ", item_id=" << e.item_id
           << ", timestamp=" << e.timestamp << ")";
        return ss.str();
      });

  py::class_<Catalog>(m, "Catalog")
      .def(py::init<>())
      .def("add",
           [](Catalog& c, ItemId id, const std::string& type, std::optional<ItemId> parent,
              std::vector<double> features) {
             c.add({id, type, parent, std::move(features)});
           },
           py::arg("item_id"), py::arg("item_type"), py::arg("parent_id") = std::nullopt,
           py::arg("features") = std::vector<double>{})
      .def_property_readonly("size", &Catalog::size)
      .def_property_readonly("d_text", &Catalog::d_text)
      .def("item_ids",
           [](const Catalog& c) {
             std::vector<ItemId> ids;
             for (const auto& rec : c.items()) ids.push_back(rec.item_id);
             return ids;
           })
      .def("item_type", [](const Catalog& c, ItemId id) { return c.get(id).item_type; })
      .def("features", [](const Catalog& c, ItemId id) { return c.get(id).features; })
      .def("top_level_id", &Catalog::top_level_id)
      .def("top_level_type_names", &Catalog::top_level_type_names)
      .def("save",
           [](const Catalog& c, const std::string& path) {
             std::ofstream out(path);
             if (!out) throw IoError("cannot write " + path);
             serialize_catalog(c, out);
           })
      .def_static("load", [](const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot read " + path);
        return parse_catalog(in);
      });

  m.def("save_interactions",
        [](const std::vector<InteractionEvent>& ev, const std::string& path) {
          std::ofstream out(path);
          if (!out) throw IoError("cannot write " + path);
          serialize_interactions(ev, out);
        });
  m.def("load_interactions", [](const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    return parse_interactions(in);
  });

  py::class_<SyntheticConfig>(m, "SyntheticConfig")
      .def(py::init([](int n_users, std::vector<std::pair<std::string, int>> items_per_type,
                       int n_topics, int d_text, double noise_std, int events_per_user,
                       int horizon_days, std::uint64_t seed) {
             SyntheticConfig cfg;
             cfg.n_users = n_users;
             if (!items_per_type.empty()) cfg.items_per_type = std::move(items_per_type);
             cfg.n_topics = n_topics;
             cfg.d_text = d_text;
             cfg.noise_std = noise_std;
             cfg.events_per_user = events_per_user;
             cfg.horizon_days = horizon_days;
             cfg.seed = seed;
             return cfg;
           }),
           py::arg("n_users") = 2000,
           py::arg("items_per_type") = std::vector<std::pair<std::string, int>>{},
           py::arg("n_topics") = 8, py::arg("d_text") = 16, py::arg("noise_std") = 0.1,
           py::arg("events_per_user") = 30, py::arg("horizon_days") = 104, py::arg("seed") = 42)
      .def_readwrite("n_users", &SyntheticConfig::n_users)
      .def_readwrite("items_per_type", &SyntheticConfig::items_per_type)
      .def_readwrite("n_topics", &SyntheticConfig::n_topics)
      .def_readwrite("d_text", &SyntheticConfig::d_text)
      .def_readwrite("noise_std", &SyntheticConfig::noise_std)
      .def_readwrite("events_per_user", &SyntheticConfig::events_per_user)
      .def_readwrite("horizon_days", &SyntheticConfig::horizon_days)
      .def_readwrite("seed", &SyntheticConfig::seed);

  m.def("generate_synthetic",
        [](const SyntheticConfig& cfg) { return generate_synthetic(cfg, nullptr); },
        py::arg("config"));

  py::class_<GraphBuildConfig>(m, "GraphBuildConfig")
      .def(py::init([](int min_co_users, int max_items_per_user, Timestamp window_start,
                       Timestamp window_end) {
             GraphBuildConfig cfg;
             cfg.min_co_users = min_co_users;
             cfg.max_items_per_user = max_items_per_user;
             cfg.window_start = window_start;
             cfg.window_end = window_end;
             return cfg;
           }),
           py::arg("min_co_users") = 1, py::arg("max_items_per_user") = 100,
           py::arg("window_start") = -1,
           py::arg("window_end") = std::numeric_limits<Timestamp>::max())
      .def_readwrite("min_co_users", &GraphBuildConfig::min_co_users)
      .def_readwrite("max_items_per_user", &GraphBuildConfig::max_items_per_user)
      .def_readwrite("window_start", &GraphBuildConfig::window_start)
      .def_readwrite("window_end", &GraphBuildConfig::window_end);

  py::class_<HeteroGraph>(m, "HeteroGraph")
      .def_property_readonly("n_nodes", &HeteroGraph::n_nodes)
      .def_property_readonly("n_edges", &HeteroGraph::n_edges)
      .def("relations",
           [](const HeteroGraph& g) {
             std::vector<std::string> names;
             for (const auto& r : g.relations()) names.push_back(r.name());
             return names;
           })
      .def("neighbor_sample",
           [](const HeteroGraph& g, ItemId node, int fanout, std::uint64_t seed) {
             return neighbor_sample(g, node, fanout, seed);
           },
           py::arg("node"), py::arg("fanout"), py::arg("seed"))
      .def("save", &save_to_path<HeteroGraph>)
      .def_static("load", [](const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot read " + path);
        return HeteroGraph::load(in);
      });

  m.def("build_graph", &build_graph, py::arg("events"), py::arg("catalog"), py::arg("config"));

  py::class_<HgnnConfig>(m, "HgnnConfig")
      .def(py::init([](int n_layers, int hidden_dim, int out_dim, std::vector<int> fanouts,
                       double margin, int negatives_per_positive, int epochs, int batch_size,
                       double lr, double val_fraction, std::uint64_t seed) {
             HgnnConfig cfg;
             cfg.n_layers = n_layers;
             cfg.hidden_dim = hidden_dim;
             cfg.out_dim = out_dim;
             cfg.fanouts = std::move(fanouts);
             cfg.margin = margin;
             cfg.negatives_per_positive = negatives_per_positive;
             cfg.epochs = epochs;
             cfg.batch_size = batch_size;
             cfg.lr = lr;
             cfg.val_fraction = val_fraction;
             cfg.seed = seed;
             return cfg;
           }),
           py::arg("n_layers") = 2, py::arg("hidden_dim") = 64, py::arg("out_dim") = 64,
           py::arg("fanouts") = std::vector<int>{15, 10}, py::arg("margin") = 0.4,
           py::arg("negatives_per_positive") = 5, py::arg("epochs") = 5,
           py::arg("batch_size") = 128, py::arg("lr") = 1e-3, py::arg("val_fraction") = 0.1,
           py::arg("seed") = 42)
      .def_readwrite("n_layers", &HgnnConfig::n_layers)
      .def_readwrite("hidden_dim", &HgnnConfig::hidden_dim)
      .def_readwrite("out_dim", &HgnnConfig::out_dim)
      .def_readwrite("fanouts", &HgnnConfig::fanouts)
      .def_readwrite("margin", &HgnnConfig::margin)
      .def_readwrite("epochs", &HgnnConfig::epochs)
      .def_readwrite("batch_size", &HgnnConfig::batch_size)
      .def_readwrite("lr", &HgnnConfig::lr)
      .def_readwrite("val_fraction", &HgnnConfig::val_fraction)
      .def_readwrite("seed", &HgnnConfig::seed);

  py::class_<HgnnParams>(m, "HgnnParams");

  py::class_<HgnnTrainResult>(m, "HgnnTrainResult")
      .def_readonly("params", &HgnnTrainResult::params)
      .def_property_readonly("history", [](const HgnnTrainResult& r) {
        std::vector<std::pair<double, double>> out;
        for (const auto& h : r.history) out.emplace_back(h.mean_loss, h.val_auc);
        return out;
      });

  m.def("train_hgnn",
        [](const HeteroGraph& graph, const Catalog& catalog, const HgnnConfig& cfg) {
          return train_hgnn(graph, node_features(graph, catalog), cfg);
        },
        py::arg("graph"), py::arg("catalog"), py::arg("config"));

  py::class_<ItemEmbeddingStore>(m, "ItemEmbeddingStore")
      .def_property_readonly("dim", &ItemEmbeddingStore::dim)
      .def_property_readonly("snapshot", &ItemEmbeddingStore::snapshot)
      .def("__len__", &ItemEmbeddingStore::size)
      .def("__contains__", &ItemEmbeddingStore::contains)
      .def("get", &ItemEmbeddingStore::get)
      .def("item_ids", &ItemEmbeddingStore::item_ids)
      .def("save", &save_to_path<ItemEmbeddingStore>)
      .def_static("load", [](const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot read " + path);
        return ItemEmbeddingStore::load(in);
      });

  m.def("export_embeddings",
        [](const HeteroGraph& graph, const Catalog& catalog, const HgnnParams& params,
           const HgnnConfig& cfg, const std::string& snapshot_id) {
          return export_embeddings(graph, node_features(graph, catalog), params, cfg.fanouts,
                                   mix64(cfg.seed, 0x51), snapshot_id);
        },
        py::arg("graph"), py::arg("catalog"), py::arg("params"), py::arg("config"),
        py::arg("snapshot_id"));

  m.def("infer_new_item",
        [](const HeteroGraph& graph, const Catalog& catalog, const HgnnParams& params,
           const std::string& item_type, ItemId new_id, const std::vector<double>& features,
           const std::vector<ItemId>& edges, const HgnnConfig& cfg, std::uint64_t seed) {
          return infer_new_item(graph, node_features(graph, catalog), params, item_type, new_id,
                                features, edges, cfg.fanouts, seed);
        },
        py::arg("graph"), py::arg("catalog"), py::arg("params"), py::arg("item_type"),
        py::arg("new_id"), py::arg("features"), py::arg("edges"), py::arg("config"),
        py::arg("seed"));

  m.def("resolve_item_embedding",
        [](ItemId item, const ItemEmbeddingStore& store, const Catalog& catalog) {
          return resolve_item_embedding(item, store, catalog);
        },
        py::arg("item"), py::arg("store"), py::arg("catalog"));

  py::class_<TwoTowerConfig>(m, "TwoTowerConfig")
      .def(py::init([](int d_final, std::vector<int> hidden, double temperature, int window_days,
                       int batch_size, int epochs, double lr, std::uint64_t seed,
                       bool use_gnn_features, bool unified, const std::string& type_filter,
                       int d_id, int d_aux, int d_gnn) {
             TwoTowerConfig cfg;
             cfg.d_final = d_final;
             cfg.hidden = std::move(hidden);
             cfg.temperature = temperature;
             cfg.window_days = window_days;
             cfg.batch_size = batch_size;
             cfg.epochs = epochs;
             cfg.lr = lr;
             cfg.seed = seed;
             cfg.use_gnn_features = use_gnn_features;
             cfg.unified = unified;
             cfg.type_filter = type_filter;
             cfg.d_id = d_id;
             cfg.d_aux = d_aux;
             cfg.d_gnn = d_gnn;
             return cfg;
           }),
           py::arg("d_final") = 64, py::arg("hidden") = std::vector<int>{128},
           py::arg("temperature") = 0.05, py::arg("window_days") = 90,
           py::arg("batch_size") = 256, py::arg("epochs") = 4, py::arg("lr") = 1e-3,
           py::arg("seed") = 42, py::arg("use_gnn_features") = true, py::arg("unified") = true,
           py::arg("type_filter") = "", py::arg("d_id") = 32, py::arg("d_aux") = 8,
           py::arg("d_gnn") = 64)
      .def_readwrite("d_final", &TwoTowerConfig::d_final)
      .def_readwrite("hidden", &TwoTowerConfig::hidden)
      .def_readwrite("temperature", &TwoTowerConfig::temperature)
      .def_readwrite("window_days", &TwoTowerConfig::window_days)
      .def_readwrite("batch_size", &TwoTowerConfig::batch_size)
      .def_readwrite("epochs", &TwoTowerConfig::epochs)
      .def_readwrite("lr", &TwoTowerConfig::lr)
      .def_readwrite("seed", &TwoTowerConfig::seed)
      .def_readwrite("use_gnn_features", &TwoTowerConfig::use_gnn_features)
      .def_readwrite("unified", &TwoTowerConfig::unified)
      .def_readwrite("type_filter", &TwoTowerConfig::type_filter)
      .def_readwrite("d_id", &TwoTowerConfig::d_id)
      .def_readwrite("d_aux", &TwoTowerConfig::d_aux)
      .def_readwrite("d_gnn", &TwoTowerConfig::d_gnn);

  py::class_<TwoTowerParams>(m, "TwoTowerParams")
      .def("save", &save_to_path<TwoTowerParams>)
      .def_static("load", [](const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot read " + path);
        return TwoTowerParams::load(in);
      });

  py::class_<TwoTowerTrainResult>(m, "TwoTowerTrainResult")
      .def_readonly("params", &TwoTowerTrainResult::params)
      .def_readonly("epoch_loss", &TwoTowerTrainResult::epoch_loss);

  m.def("train_two_tower",
        [](const std::vector<InteractionEvent>& events, const Catalog& catalog,
           const ItemEmbeddingStore* store, const TwoTowerConfig& cfg) {
          return train_two_tower(events, catalog, store, cfg);
        },
        py::arg("events"), py::arg("catalog"), py::arg("store").none(true), py::arg("config"));

  py::class_<EvalSplit>(m, "EvalSplit")
      .def_readonly("train", &EvalSplit::train)
      .def_readonly("test", &EvalSplit::test)
      .def_readonly("cutoff_time", &EvalSplit::cutoff_time);

  m.def("temporal_split", &temporal_split, py::arg("events"), py::arg("train_days") = 90,
        py::arg("test_days") = 14);

  py::class_<HitRateRow>(m, "HitRateRow")
      .def_readonly("item_type", &HitRateRow::item_type)
      .def_readonly("k", &HitRateRow::k)
      .def_readonly("hit_rate", &HitRateRow::hit_rate)
      .def_readonly("n_events", &HitRateRow::n_events)
      .def("__repr__", [](const HitRateRow& r) {
        std::ostringstream ss;
        ss << "HitRateRow(item_type='" << r.item_type << "', k=" << r.k
           << ", hit_rate=" << r.hit_rate << ", n_events=" << r.n_events << ")";
        return ss.str();
      });

  m.def("hit_rate_at_k",
        [](const EvalSplit& split, const Catalog& catalog, const ItemEmbeddingStore* store,
           const TwoTowerParams& params, const TwoTowerConfig& cfg, int k, int threads) {
          RetrievalModel model;
          model.catalog = &catalog;
          model.store = store;
          model.params = params;
          model.cfg = cfg;
          return hit_rate_at_k(split, model, k, threads);
        },
        py::arg("split"), py::arg("catalog"), py::arg("store").none(true), py::arg("params"),
        py::arg("config"), py::arg("k") = 10, py::arg("threads") = 1);

  m.def("run_pipeline",
        [](const std::string& command, const std::string& config_path,
           const std::vector<std::pair<std::string, std::string>>& overrides) {
          PipelineConfig cfg;
          if (!config_path.empty()) cfg = PipelineConfig::from_file(config_path);
          cfg.apply(overrides);
          return run_command(command, cfg);
        },
        py::arg("command"), py::arg("config_path") = "",
        py::arg("overrides") = std::vector<std::pair<std::string, std::string>>{});

  m.def("text_features",
        [](const Catalog& catalog) {
          return matrix_to_rows(text_features(catalog, TextFeatureProvider::precomputed()));
        },
        py::arg("catalog"));
}
