#include <array>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "sagerec/error.hpp"
#include "sagerec/hgnn.hpp"
#include "sagerec/rng.hpp"

using namespace sagerec;

namespace {

// single-relation graph over `n` show nodes with explicit edges
HeteroGraph show_graph(int n, const std::vector<std::tuple<ItemId, ItemId, int>>& edges,
                       int d_text) {
  std::vector<std::pair<ItemId, std::string>> nodes;
  for (ItemId i = 0; i < n; ++i) nodes.emplace_back(i, "show");
  return HeteroGraph::from_parts(nodes, {"show"}, d_text, edges);
}

HgnnParams one_layer_params(std::vector<double> w_row, double bias) {
  HgnnParams p;
  Matrix w(1, static_cast<int>(w_row.size()));
  w.data = std::move(w_row);
  p.w.push_back(std::move(w));
  Matrix b(1, 1);
  b.at(0, 0) = bias;
  p.b.push_back(std::move(b));
  return p;
}

struct GradInstance {
  HeteroGraph graph = show_graph(1, {}, 1);
  Matrix features;
  HgnnParams params;
  std::vector<std::array<int, 3>> triples;
  std::vector<int> fanouts;
  double margin = 0.4;
  std::uint64_t seed = 0;
};

GradInstance make_grad_instance(std::uint64_t seed) {
  GradInstance inst;
  Rng rng(seed);
  const int n = 8, d_text = 3;
  std::vector<std::tuple<ItemId, ItemId, int>> edges;
  for (ItemId i = 0; i < n; ++i)
    for (ItemId j = i + 1; j < n; ++j)
      if (rng.uniform01() < 0.45) edges.emplace_back(i, j, 1);
  inst.graph = show_graph(n, edges, d_text);
  inst.features = Matrix(n, d_text);
  for (double& v : inst.features.data) v = rng.uniform01() * 2 - 1;
  HgnnConfig cfg;
  cfg.n_layers = 2;
  cfg.hidden_dim = 4;
  cfg.out_dim = 4;
  cfg.fanouts = {3, 2};
  cfg.seed = seed;
  inst.params = HgnnParams::init(d_text, cfg);
  inst.fanouts = cfg.fanouts;
  inst.seed = mix64(seed, 0xF00D);
  for (int t = 0; t < 6; ++t) {
    int q = static_cast<int>(rng.below(n));
    int p = static_cast<int>(rng.below(n));
    int g = static_cast<int>(rng.below(n));
    if (q == p) p = (p + 1) % n;
    inst.triples.push_back({q, p, g});
  }
  return inst;
}

}  // namespace

TEST_CASE("hgnn_forward 1-layer hand instance") {
  // self feature 2, neighbors {3, 5}, W = [1 1], b = 0
  HeteroGraph g = show_graph(3, {{0, 1, 1}, {0, 2, 1}}, 1);
  Matrix features(3, 1);
  features.at(0, 0) = 2.0;
  features.at(1, 0) = 3.0;
  features.at(2, 0) = 5.0;
  HgnnParams p = one_layer_params({1.0, 1.0}, 0.0);
  Matrix z = hgnn_forward(g, features, p, {0}, {10}, 1);
  // concat [2, 4] -> 6 -> normalized scalar 1.0
  CHECK(z.at(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("hgnn_forward isolated node uses a zero neighbor vector") {
  HeteroGraph g = show_graph(2, {}, 1);
  Matrix features(2, 1);
  features.at(0, 0) = 2.0;
  HgnnParams p = one_layer_params({1.0, 1.0}, 0.0);
  Matrix z = hgnn_forward(g, features, p, {0}, {10}, 1);
  CHECK(z.at(0, 0) == doctest::Approx(1.0));  // concat [2, 0] -> 2 -> 1.0
}

TEST_CASE("hgnn_forward all-zero weights give a zero vector") {
  HeteroGraph g = show_graph(3, {{0, 1, 1}}, 1);
  Matrix features(3, 1);
  features.at(0, 0) = 2.0;
  HgnnParams p = one_layer_params({0.0, 0.0}, 0.0);
  Matrix z = hgnn_forward(g, features, p, {0}, {10}, 1);
  CHECK(z.at(0, 0) == 0.0);
}

TEST_CASE("hgnn_forward output rows are unit or zero") {
  GradInstance inst = make_grad_instance(21);
  std::vector<ItemId> all;
  for (int v = 0; v < inst.graph.n_nodes(); ++v) all.push_back(inst.graph.item_id(v));
  Matrix z = hgnn_forward(inst.graph, inst.features, inst.params, all, inst.fanouts, 3);
  for (int i = 0; i < z.rows; ++i) {
    double n = norm2(z.row(i), z.cols);
    CHECK((std::abs(n - 1.0) < 1e-9 || n == 0.0));
  }
}

TEST_CASE("margin_loss inactive case") {
  std::vector<double> zq = {1.0, 0.0};
  std::vector<double> zp = {0.9, 0.1};  // zq.zp = 0.9
  std::vector<double> zn = {0.2, 0.5};  // zq.zn = 0.2
  MarginLossResult r = margin_loss(zq, zp, zn, 0.4);
  CHECK(r.loss == 0.0);
  for (double v : r.d_query) CHECK(v == 0.0);
  for (double v : r.d_pos) CHECK(v == 0.0);
  for (double v : r.d_neg) CHECK(v == 0.0);
}

TEST_CASE("margin_loss active case with gradients") {
  std::vector<double> zq = {1.0, 0.0};
  std::vector<double> zp = {0.1, 0.3};  // zq.zp = 0.1
  std::vector<double> zn = {0.6, 0.2};  // zq.zn = 0.6
  MarginLossResult r = margin_loss(zq, zp, zn, 0.4);
  CHECK(r.loss == doctest::Approx(0.9));
  CHECK(r.d_query[0] == doctest::Approx(zn[0] - zp[0]));
  CHECK(r.d_query[1] == doctest::Approx(zn[1] - zp[1]));
  CHECK(r.d_pos[0] == doctest::Approx(-1.0));
  CHECK(r.d_neg[0] == doctest::Approx(1.0));
}

TEST_CASE("margin_loss equals the margin when positive and negative tie") {
  std::vector<double> zq = {0.5, 0.5};
  std::vector<double> zpn = {0.3, 0.1};
  MarginLossResult r = margin_loss(zq, zpn, zpn, 0.4);
  CHECK(r.loss == doctest::Approx(0.4));
}

TEST_CASE("hgnn gradients match central differences") {
  GradInstance inst = make_grad_instance(77);
  HgnnGrads grads = HgnnGrads::zeros_like(inst.params);
  hgnn_batch_loss(inst.graph, inst.features, inst.params, inst.triples, inst.margin,
                  inst.fanouts, inst.seed, &grads);
  std::vector<double> analytic;
  for (int k = 0; k < inst.params.n_layers(); ++k) {
    analytic.insert(analytic.end(), grads.dw[k].data.begin(), grads.dw[k].data.end());
    analytic.insert(analytic.end(), grads.db[k].data.begin(), grads.db[k].data.end());
  }
  HgnnParams probe = inst.params;
  auto f = [&](const std::vector<double>& flat) {
    probe.from_vector(flat);
    return hgnn_batch_loss(inst.graph, inst.features, probe, inst.triples, inst.margin,
                           inst.fanouts, inst.seed, nullptr);
  };
  CHECK(grad_check(f, analytic, inst.params.to_vector()) < 1e-4);
}

TEST_CASE("train_hgnn with lr=0 keeps the initialization") {
  GradInstance inst = make_grad_instance(5);
  HgnnConfig cfg;
  cfg.n_layers = 2;
  cfg.hidden_dim = 4;
  cfg.out_dim = 4;
  cfg.fanouts = {3, 2};
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.lr = 0.0;
  cfg.seed = 5;
  HgnnTrainResult r = train_hgnn(inst.graph, inst.features, cfg);
  CHECK(r.params.to_vector() == HgnnParams::init(inst.graph.d_text(), cfg).to_vector());
}

TEST_CASE("train_hgnn is deterministic given the seed") {
  GradInstance inst = make_grad_instance(6);
  HgnnConfig cfg;
  cfg.n_layers = 2;
  cfg.hidden_dim = 4;
  cfg.out_dim = 4;
  cfg.fanouts = {3, 2};
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.seed = 1234;
  HgnnTrainResult a = train_hgnn(inst.graph, inst.features, cfg);
  HgnnTrainResult b = train_hgnn(inst.graph, inst.features, cfg);
  CHECK(a.params.to_vector() == b.params.to_vector());
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i)
    CHECK(a.history[i].mean_loss == b.history[i].mean_loss);
}

TEST_CASE("train_hgnn rejects an edgeless graph") {
  HeteroGraph g = show_graph(3, {}, 1);
  Matrix features(3, 1);
  HgnnConfig cfg;
  cfg.fanouts = {2, 2};
  CHECK_THROWS_AS(train_hgnn(g, features, cfg), ValidationError);
}

TEST_CASE("infer_new_item equals in-graph forward for a duplicated node") {
  // graph with degrees above the fanout, so sampling is active
  Rng rng(31);
  const int n = 9, d_text = 3;
  std::vector<std::tuple<ItemId, ItemId, int>> edges;
  for (ItemId i = 0; i < n; ++i)
    for (ItemId j = i + 1; j < n; ++j)
      if (rng.uniform01() < 0.6) edges.emplace_back(i, j, 1);
  HeteroGraph g = show_graph(n, edges, d_text);
  Matrix features(n, d_text);
  for (double& v : features.data) v = rng.uniform01();
  HgnnConfig cfg;
  cfg.n_layers = 2;
  cfg.hidden_dim = 4;
  cfg.out_dim = 4;
  cfg.fanouts = {3, 2};
  cfg.seed = 31;
  HgnnParams params = HgnnParams::init(d_text, cfg);

  // duplicate node 2: same features, same neighbors, new id n
  std::vector<ItemId> dup_edges;
  for (int r = 0; r < g.n_relations(); ++r)
    for (int u : g.neighbors(g.node_of(2), r)) dup_edges.push_back(g.item_id(u));
  std::vector<double> dup_feat(features.row(g.node_of(2)), features.row(g.node_of(2)) + d_text);

  std::vector<double> inferred =
      infer_new_item(g, features, params, "show", n, dup_feat, dup_edges, cfg.fanouts, 99);

  // in-graph version: rebuild with the duplicate as a real node
  std::vector<std::pair<ItemId, std::string>> nodes;
  for (ItemId i = 0; i <= n; ++i) nodes.emplace_back(i, "show");
  std::vector<std::tuple<ItemId, ItemId, int>> edges2 = edges;
  for (ItemId u : dup_edges) edges2.emplace_back(static_cast<ItemId>(n), u, 1);
  HeteroGraph g2 = HeteroGraph::from_parts(nodes, {"show"}, d_text, edges2);
  Matrix features2(n + 1, d_text);
  for (int v = 0; v < n; ++v)
    std::copy(features.row(v), features.row(v) + d_text, features2.row(v));
  std::copy(dup_feat.begin(), dup_feat.end(), features2.row(n));
  Matrix z = hgnn_forward(g2, features2, params, {n}, cfg.fanouts, 99);

  REQUIRE(static_cast<int>(inferred.size()) == z.cols);
  for (int j = 0; j < z.cols; ++j) CHECK(inferred[j] == z.at(0, j));  // bit-for-bit
}

TEST_CASE("infer_new_item with no edges equals an isolated forward") {
  HeteroGraph g = show_graph(3, {{0, 1, 1}}, 1);
  Matrix features(3, 1);
  features.at(0, 0) = 1.0;
  features.at(1, 0) = 2.0;
  features.at(2, 0) = 4.0;  // node 2 is isolated
  HgnnParams p = one_layer_params({0.5, -0.25}, 0.1);
  std::vector<double> inferred = infer_new_item(g, features, p, "show", 77, {4.0}, {}, {5}, 3);
  Matrix z = hgnn_forward(g, features, p, {2}, {5}, 3);
  CHECK(inferred[0] == z.at(0, 0));
}

TEST_CASE("infer_new_item 1-layer hand instance") {
  HeteroGraph g = show_graph(2, {}, 1);
  Matrix features(2, 1);
  features.at(0, 0) = 3.0;
  features.at(1, 0) = 5.0;
  HgnnParams p = one_layer_params({1.0, 1.0}, 0.0);
  std::vector<double> z = infer_new_item(g, features, p, "show", 9, {2.0}, {0, 1}, {10}, 1);
  CHECK(z[0] == doctest::Approx(1.0));  // concat [2, 4] -> 6 -> 1.0
}

TEST_CASE("infer_new_item rejects edges to unknown nodes") {
  HeteroGraph g = show_graph(2, {}, 1);
  Matrix features(2, 1);
  HgnnParams p = one_layer_params({1.0, 1.0}, 0.0);
  CHECK_THROWS_AS(infer_new_item(g, features, p, "show", 9, {1.0}, {42}, {10}, 1), LookupError);
}

TEST_CASE("permutation equivariance with complete sampling") {
  Rng rng(13);
  const int n = 7, d_text = 2;
  std::vector<std::tuple<ItemId, ItemId, int>> edges;
  for (ItemId i = 0; i < n; ++i)
    for (ItemId j = i + 1; j < n; ++j)
      if (rng.uniform01() < 0.5) edges.emplace_back(i, j, 1);
  HeteroGraph g = show_graph(n, edges, d_text);
  Matrix features(n, d_text);
  for (double& v : features.data) v = rng.uniform01();
  HgnnConfig cfg;
  cfg.n_layers = 2;
  cfg.hidden_dim = 3;
  cfg.out_dim = 3;
  cfg.fanouts = {n, n};  // fanout >= max degree: sampling is complete
  cfg.seed = 13;
  HgnnParams params = HgnnParams::init(d_text, cfg);

  // relabel ids via i -> 100 + (n-1-i)
  auto perm = [&](ItemId i) { return static_cast<ItemId>(100 + (n - 1 - i)); };
  std::vector<std::pair<ItemId, std::string>> nodes2;
  for (ItemId i = 0; i < n; ++i) nodes2.emplace_back(perm(i), "show");
  std::vector<std::tuple<ItemId, ItemId, int>> edges2;
  for (auto& [a, b, w] : edges) edges2.emplace_back(perm(a), perm(b), w);
  HeteroGraph g2 = HeteroGraph::from_parts(nodes2, {"show"}, d_text, edges2);
  Matrix features2(n, d_text);
  for (ItemId i = 0; i < n; ++i)
    std::copy(features.row(g.node_of(i)), features.row(g.node_of(i)) + d_text,
              features2.row(g2.node_of(perm(i))));

  std::vector<ItemId> targets1, targets2;
  for (ItemId i = 0; i < n; ++i) {
    targets1.push_back(i);
    targets2.push_back(perm(i));
  }
  Matrix z1 = hgnn_forward(g, features, params, targets1, cfg.fanouts, 55);
  Matrix z2 = hgnn_forward(g2, features2, params, targets2, cfg.fanouts, 55);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < z1.cols; ++j)
      CHECK(z1.at(i, j) == doctest::Approx(z2.at(i, j)).epsilon(1e-12));
}

TEST_CASE("embedding store put/get/save/load") {
  ItemEmbeddingStore store(2, "snap-1");
  store.put(4, {1.0, 0.0});
  store.put(9, {0.0, 0.0});
  CHECK_THROWS_AS(store.put(1, {0.5, 0.5}), ValidationError);  // norm != 1
  CHECK_THROWS_AS(store.put(1, {1.0}), DimensionError);
  CHECK_THROWS_AS(store.get(123), LookupError);
  CHECK(store.get(4)[0] == 1.0);

  std::ostringstream out;
  store.save(out);
  std::istringstream in(out.str());
  ItemEmbeddingStore back = ItemEmbeddingStore::load(in);
  CHECK(back.dim() == 2);
  CHECK(back.snapshot() == "snap-1");
  CHECK(back.size() == 2);
  CHECK(back.get(4) == store.get(4));
  CHECK(back.get(9) == store.get(9));
}

TEST_CASE("export_embeddings covers every node with unit rows") {
  GradInstance inst = make_grad_instance(3);
  ItemEmbeddingStore store =
      export_embeddings(inst.graph, inst.features, inst.params, inst.fanouts, 8, "t");
  CHECK(static_cast<int>(store.size()) == inst.graph.n_nodes());
  for (int v = 0; v < inst.graph.n_nodes(); ++v)
    CHECK(store.contains(inst.graph.item_id(v)));
}
