#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "sagerec/corpus.hpp"
#include "sagerec/hgnn.hpp"
#include "sagerec/numerics.hpp"

namespace sagerec {

struct TwoTowerConfig {
  int d_final = 64;
  std::vector<int> hidden = {128};
  double temperature = 0.05;
  int window_days = 90;  // user history window
  int batch_size = 256;
  int epochs = 4;
  double lr = 1e-3;
  std::uint64_t seed = 42;
  bool use_gnn_features = true;  // false zeroes the gnn slot in both towers
  bool unified = true;           // false restricts training events to type_filter
  std::string type_filter;       // top-level type name, used when !unified
  int d_id = 32;                 // shared id-embedding width
  int d_aux = 8;                 // auxiliary taste slot (zeros by default)
  int d_gnn = 64;                // gnn slot width when no embedding store is attached

  void validate() const;
};

struct FeedForward {
  std::vector<Matrix> w;  // layer: (out x in)
  std::vector<Matrix> b;  // 1 x out

  int n_layers() const { return static_cast<int>(w.size()); }
};

// User-tower and item-tower weights plus the item-identifier embedding
// table. The table is a single instance read by both towers: the item tower
// consumes its own row, the user tower consumes the mean of history rows.
struct TwoTowerParams {
  Matrix id_table;  // n_items x d_id, row = catalog index
  FeedForward item_tower;
  FeedForward user_tower;
  int d_gnn = 0;
  int d_text = 0;
  int d_id = 0;
  int d_aux = 0;
  int d_final = 0;

  int item_input_dim() const { return d_gnn + d_text + d_id; }
  int user_input_dim() const { return d_gnn + d_id + d_aux; }

  static TwoTowerParams init(int n_items, int d_gnn, int d_text, const TwoTowerConfig& cfg);

  std::vector<double> to_vector() const;
  void from_vector(const std::vector<double>& flat);

  void save(std::ostream& out) const;
  static TwoTowerParams load(std::istream& in);
};

// A user's state at some cutoff time. The id-history mean is recomputed from
// the live table at forward time, so the profile carries the history item
// rows instead of a materialized vector.
struct UserProfile {
  UserId user_id = 0;
  std::vector<double> gnn_history_mean;  // d_gnn, zeros when empty
  std::vector<int> history_items;        // catalog indices, one per window event
  std::vector<double> aux_taste;         // d_aux, zeros when unavailable
};

// Type-agnostic item input: identical layout for every item type.
struct ItemFeatureBundle {
  std::vector<double> gnn;
  std::vector<double> text;
  int item_index = -1;  // row of the shared id table
};

// Top-level items read their stored vector, children read their parent's.
// Items absent from the store resolve through `inductive_fallback` when one
// is supplied, otherwise the lookup fails naming the item.
std::vector<double> resolve_item_embedding(
    ItemId item, const ItemEmbeddingStore& store, const Catalog& catalog,
    const std::function<std::vector<double>(ItemId)>& inductive_fallback = {});

// Events in [cutoff - window_days*86400, cutoff), one contribution per event.
// Pass a null store to zero the gnn history (gnn-less ablation). Events must
// all belong to one user.
UserProfile build_user_profile(std::span<const InteractionEvent> user_events, Timestamp cutoff,
                               int window_days, const ItemEmbeddingStore* store,
                               const Catalog& catalog, int d_gnn, int d_aux);

// concat(gnn, text, id row) -> feed forward (ReLU hidden, linear out) -> L2
std::vector<double> item_tower_forward(const ItemFeatureBundle& bundle,
                                       const TwoTowerParams& params);
// concat(gnn history mean, id history mean, aux) -> same tower shape
std::vector<double> user_tower_forward(const UserProfile& profile, const TwoTowerParams& params);

Matrix pairwise_logits(const Matrix& user_vecs, const Matrix& item_vecs, double temperature);

struct SoftmaxLossResult {
  double loss = 0.0;
  Matrix d_user;
  Matrix d_item;
};

// Sampled-softmax with diagonal positives and in-batch negatives:
// loss = mean_i -log softmax(U V^T / tau)_ii. Requires batch size >= 2.
SoftmaxLossResult in_batch_softmax_loss(const Matrix& user_vecs, const Matrix& item_vecs,
                                        double temperature);

// Fixed per-item inputs shared across a training run.
struct TwoTowerContext {
  const Catalog* catalog = nullptr;
  Matrix text;  // catalog order
  Matrix gnn;   // catalog order; all-zero when use_gnn is off
  bool use_gnn = true;
};

TwoTowerContext make_two_tower_context(const Catalog& catalog, const ItemEmbeddingStore* store,
                                       const TwoTowerConfig& cfg);

struct TrainingExample {
  UserProfile profile;  // state strictly before the positive
  int pos_item = -1;    // catalog index of the lifted positive
  Timestamp ts = 0;
};

// One example per training event: the user profile at the event timestamp
// (no future leakage) and the lifted positive item. Profiles draw on the
// user's full history; unified=false filters positives only.
std::vector<TrainingExample> make_training_examples(const std::vector<InteractionEvent>& events,
                                                    const Catalog& catalog,
                                                    const ItemEmbeddingStore* store,
                                                    const TwoTowerConfig& cfg);

struct TwoTowerGrads {
  FeedForward d_item;  // same shapes as the towers
  FeedForward d_user;
  Matrix d_table;
  Matrix d_table_item_path;  // decomposition of d_table by usage path
  Matrix d_table_user_path;

  static TwoTowerGrads zeros_like(const TwoTowerParams& p);
};

double two_tower_batch_loss(const TwoTowerContext& ctx,
                            std::span<const TrainingExample> batch, const TwoTowerParams& params,
                            double temperature, TwoTowerGrads* grads = nullptr);

struct TwoTowerTrainResult {
  TwoTowerParams params;
  std::vector<double> epoch_loss;
};

// Shuffled mini-batches over training examples, in-batch softmax, Adam.
// Deterministic given cfg.seed.
TwoTowerTrainResult train_two_tower(const std::vector<InteractionEvent>& events,
                                    const Catalog& catalog, const ItemEmbeddingStore* store,
                                    const TwoTowerConfig& cfg);

}  // namespace sagerec
