#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "sagerec/cograph.hpp"
#include "sagerec/numerics.hpp"

namespace sagerec {

struct HgnnConfig {
  int n_layers = 2;
  int hidden_dim = 64;
  int out_dim = 64;
  std::vector<int> fanouts = {15, 10};
  double margin = 0.4;
  int negatives_per_positive = 5;
  int epochs = 5;
  int batch_size = 128;
  double lr = 1e-3;
  double val_fraction = 0.1;  // edges held out for the AUC metric
  std::uint64_t seed = 42;

  void validate() const;
};

// Layer k applies W_k (d_out x 2*d_in) to [self || aggregated-neighbors].
struct HgnnParams {
  std::vector<Matrix> w;
  std::vector<Matrix> b;  // 1 x d_out

  int n_layers() const { return static_cast<int>(w.size()); }
  int out_dim() const { return w.empty() ? 0 : w.back().rows; }

  // Xavier-uniform weights, zero biases, seeded.
  static HgnnParams init(int d_text, const HgnnConfig& cfg);

  std::vector<double> to_vector() const;
  void from_vector(const std::vector<double>& flat);
};

struct HgnnGrads {
  std::vector<Matrix> dw;
  std::vector<Matrix> db;

  static HgnnGrads zeros_like(const HgnnParams& p);
};

// Exported per-item foundation embeddings; every vector has unit norm or is
// all-zero.
class ItemEmbeddingStore {
 public:
  ItemEmbeddingStore() = default;
  ItemEmbeddingStore(int dim, std::string snapshot_id)
      : dim_(dim), snapshot_(std::move(snapshot_id)) {}

  int dim() const { return dim_; }
  const std::string& snapshot() const { return snapshot_; }
  std::size_t size() const { return order_.size(); }
  bool contains(ItemId id) const { return vectors_.count(id) != 0; }
  const std::vector<double>& get(ItemId id) const;
  void put(ItemId id, std::vector<double> v);
  const std::vector<ItemId>& item_ids() const { return order_; }

  void save(std::ostream& out) const;
  static ItemEmbeddingStore load(std::istream& in);

 private:
  int dim_ = 0;
  std::string snapshot_;
  std::unordered_map<ItemId, std::vector<double>> vectors_;
  std::vector<ItemId> order_;
};

// GraphSAGE forward pass over sampled neighborhoods. Per relation the
// sampled neighbor representations are averaged, non-empty relations are
// averaged unweighted, isolated nodes aggregate a zero vector. Hidden layers
// use ReLU, the final layer is linear, output rows are L2-normalized.
// Feature rows follow graph node order. Deterministic given seed.
Matrix hgnn_forward(const HeteroGraph& graph, const Matrix& features, const HgnnParams& params,
                    const std::vector<ItemId>& targets, const std::vector<int>& fanouts,
                    std::uint64_t seed);

struct MarginLossResult {
  double loss = 0.0;
  std::vector<double> d_query, d_pos, d_neg;
};

// loss = max(0, zq.zn - zq.zp + margin); gradients are zero when inactive.
MarginLossResult margin_loss(const std::vector<double>& z_query, const std::vector<double>& z_pos,
                             const std::vector<double>& z_neg, double margin);

// Full-batch hinge loss over (query, positive, negative) node triples, with
// analytic gradients for every layer weight. Shared by the trainer and the
// gradient-check suite.
double hgnn_batch_loss(const HeteroGraph& graph, const Matrix& features, const HgnnParams& params,
                       const std::vector<std::array<int, 3>>& triples, double margin,
                       const std::vector<int>& fanouts, std::uint64_t seed,
                       HgnnGrads* grads = nullptr);

struct HgnnEpochMetrics {
  double mean_loss = 0.0;
  double val_auc = 0.0;
};

struct HgnnTrainResult {
  HgnnParams params;
  std::vector<HgnnEpochMetrics> history;
  std::vector<GraphEdge> held_out_edges;  // node indices on the input graph
};

// Self-supervised link prediction: mini-batches of edges as (query, positive)
// pairs with uniform random negatives, Adam updates, per-epoch mean loss and
// held-out edge AUC. Deterministic given cfg.seed.
HgnnTrainResult train_hgnn(const HeteroGraph& graph, const Matrix& features,
                           const HgnnConfig& cfg);

// Inductive forward for an unseen item wired by `edges` to existing nodes.
// Matches hgnn_forward on a graph that contained the node, bit for bit,
// under the same sampling seed.
std::vector<double> infer_new_item(const HeteroGraph& graph, const Matrix& features,
                                   const HgnnParams& params, const std::string& item_type,
                                   ItemId new_id, const std::vector<double>& new_features,
                                   const std::vector<ItemId>& edges,
                                   const std::vector<int>& fanouts, std::uint64_t seed);

ItemEmbeddingStore export_embeddings(const HeteroGraph& graph, const Matrix& features,
                                     const HgnnParams& params, const std::vector<int>& fanouts,
                                     std::uint64_t seed, const std::string& snapshot_id);

}  // namespace sagerec
