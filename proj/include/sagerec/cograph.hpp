#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sagerec/corpus.hpp"

namespace sagerec {

// Unordered pair of top-level item types, stored canonically.
struct RelationType {
  std::string type_a;
  std::string type_b;  // type_a <= type_b lexicographically

  static RelationType of(std::string a, std::string b);
  bool operator==(const RelationType&) const = default;
  std::string name() const { return type_a + ":" + type_b; }
};

struct GraphBuildConfig {
  int min_co_users = 1;
  int max_items_per_user = 100;  // most recent distinct items kept per user
  // events with window_start < t <= window_end are observed
  Timestamp window_start = -1;
  Timestamp window_end = std::numeric_limits<Timestamp>::max();

  void validate() const;
};

// Edge in node-index space; src < dst.
struct GraphEdge {
  int rel = 0;
  int src = 0;
  int dst = 0;
  int weight = 0;

  bool operator==(const GraphEdge&) const = default;
};

// Item-item co-interaction graph over top-level items. Nodes are ordered by
// ascending item id; adjacency is symmetric CSR per relation, rows sorted by
// neighbor index. Immutable once built, safe to share across readers.
class HeteroGraph {
 public:
  int n_nodes() const { return static_cast<int>(node_ids_.size()); }
  std::int64_t n_edges() const { return n_edges_; }
  int n_relations() const { return static_cast<int>(relations_.size()); }
  int d_text() const { return d_text_; }

  const std::vector<RelationType>& relations() const { return relations_; }
  const std::vector<std::string>& type_names() const { return type_names_; }

  ItemId item_id(int node) const { return node_ids_[node]; }
  const std::string& node_type(int node) const { return type_names_[node_type_[node]]; }
  bool has_node(ItemId id) const { return id_to_node_.count(id) != 0; }
  int node_of(ItemId id) const;

  std::span<const int> neighbors(int node, int rel) const;
  std::span<const int> edge_weights(int node, int rel) const;
  int degree(int node) const;
  bool has_edge(int a, int b) const;
  // relation index for a type pair; -1 when the pair is not in the schema
  int relation_index(const std::string& a, const std::string& b) const;

  // undirected edges, src < dst, ordered by (rel, src, dst)
  std::vector<GraphEdge> edge_list() const;

  static HeteroGraph from_parts(const std::vector<std::pair<ItemId, std::string>>& nodes,
                                const std::vector<std::string>& top_level_types, int d_text,
                                const std::vector<std::tuple<ItemId, ItemId, int>>& edges);

  void save(std::ostream& out) const;
  static HeteroGraph load(std::istream& in);

 private:
  friend HeteroGraph build_from_edges(std::vector<ItemId> ids, std::vector<int> node_type,
                                      std::vector<std::string> type_names, int d_text,
                                      const std::vector<GraphEdge>& edges);

  struct Csr {
    std::vector<std::int64_t> offsets;  // n_nodes + 1
    std::vector<int> nbr;
    std::vector<int> weight;
  };

  std::vector<ItemId> node_ids_;
  std::vector<int> node_type_;
  std::vector<std::string> type_names_;      // sorted top-level type names
  std::vector<RelationType> relations_;      // all unordered type pairs, sorted
  std::unordered_map<ItemId, int> id_to_node_;
  std::unordered_map<std::string, int> relation_by_name_;
  std::vector<Csr> adj_;
  std::int64_t n_edges_ = 0;
  int d_text_ = 0;
};

// Episode events are lifted to their show; each user's distinct top-level
// items (capped at the most recent max_items_per_user) contribute all
// unordered pairs; an edge survives iff its co-user count reaches
// min_co_users.
HeteroGraph build_graph(const std::vector<InteractionEvent>& events, const Catalog& catalog,
                        const GraphBuildConfig& cfg);

// Per-relation neighbor ids of `node`. Degree <= fanout returns the full
// list; otherwise a uniform sample without replacement, deterministic in
// (seed, node).
std::vector<std::vector<ItemId>> neighbor_sample(const HeteroGraph& graph, ItemId node,
                                                 int fanout, std::uint64_t seed);

// Uniformly held-out validation edges, removed symmetrically from the train
// graph; |validation| = floor(holdout_fraction * |edges|). All nodes are
// retained.
std::pair<HeteroGraph, std::vector<GraphEdge>> edge_split(const HeteroGraph& graph,
                                                          double holdout_fraction,
                                                          std::uint64_t seed);

// Feature rows in graph node order, taken from the catalog.
Matrix node_features(const HeteroGraph& graph, const Catalog& catalog);

}  // namespace sagerec
