#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_set>
#include <vector>

#include "sagerec/cograph.hpp"
#include "sagerec/corpus.hpp"
#include "sagerec/hgnn.hpp"
#include "sagerec/two_tower.hpp"

namespace sagerec {

// Temporal train/test partition anchored at the newest event.
struct EvalSplit {
  std::vector<InteractionEvent> train;
  std::vector<InteractionEvent> test;
  Timestamp cutoff_time = 0;  // end of the train window
};

// Anchored at the max timestamp T: test = (T - test_days, T],
// train = (T - (train_days + test_days), T - test_days]; older events are
// discarded.
EvalSplit temporal_split(const std::vector<InteractionEvent>& events, int train_days = 90,
                         int test_days = 14);

// Precomputed item-tower vectors for a candidate set.
struct ItemIndex {
  std::vector<int> items;  // catalog indices
  Matrix vectors;          // row-aligned with items
};

// Everything needed to score users against items.
struct RetrievalModel {
  const Catalog* catalog = nullptr;
  const ItemEmbeddingStore* store = nullptr;  // null when gnn features are off
  TwoTowerParams params;
  TwoTowerConfig cfg;
};

// Item-tower vectors for every item of one top-level type.
ItemIndex build_item_index(const RetrievalModel& model, const std::string& type_name);

// Brute-force exact scoring: descending dot(user, item), ties by ascending
// item id, exclusions removed before ranking. Errors when the candidate set
// is empty after exclusions.
std::vector<ItemId> recommend_top_k(const UserProfile& profile, const RetrievalModel& model,
                                    const ItemIndex& index, int k,
                                    const std::unordered_set<ItemId>& exclusions);

struct HitRateRow {
  std::string item_type;
  int k = 0;
  double hit_rate = 0.0;
  std::int64_t n_events = 0;
};

// Per-item-type HR@K over the test window. Profiles are built from
// train-window events only; each user's train-window consumptions are
// excluded from their candidates; candidates are the full catalog of the
// test item's top-level type. Each test event counts independently. Types
// with zero test events are omitted. Results are independent of `threads`.
std::vector<HitRateRow> hit_rate_at_k(const EvalSplit& split, const RetrievalModel& model,
                                      int k = 10, int threads = 1);

struct AblationRow {
  std::string variant;
  std::string item_type;
  int k = 0;
  double hit_rate = 0.0;
  std::int64_t n_events = 0;
};

struct AblationReport {
  std::vector<AblationRow> rows;

  std::string table() const;          // human-readable aligned table
  void save(std::ostream& out) const;  // variant<TAB>type<TAB>k<TAB>hr<TAB>n
};

struct AblationVariant {
  std::string name;
  bool unified = true;
  std::string type_filter;  // used when !unified
  bool use_gnn = true;
  int hgnn_lag_days = 0;  // >0 freezes the foundation at an older window
};

struct AblationInput {
  const std::vector<InteractionEvent>* events = nullptr;
  const Catalog* catalog = nullptr;
  GraphBuildConfig graph_cfg;  // observation window is derived per variant
  HgnnConfig hgnn_cfg;
  TwoTowerConfig tt_cfg;
  int k = 10;
  int train_days = 90;
  int test_days = 14;
  int threads = 1;
};

// Runs each variant end to end (graph -> foundation embeddings -> two-tower
// -> HR@K) on a shared temporal split. Foundation runs are cached per lag so
// variants differing only in the adaptation layer reuse the same embeddings.
// Type-specific variants report only their trained type.
AblationReport run_ablations(const AblationInput& input,
                             const std::vector<AblationVariant>& variants);

// The standard variant set: unified, per-type specific, unified without gnn
// features, unified with the foundation frozen `lag_days` back.
std::vector<AblationVariant> standard_ablation_variants(const Catalog& catalog, int lag_days = 7);

}  // namespace sagerec
