#include "sagerec/cograph.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>
#include <tuple>

#include "sagerec/error.hpp"
#include "sagerec/rng.hpp"

namespace sagerec {

namespace {

std::uint64_t pack_pair(int a, int b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

}  // namespace

RelationType RelationType::of(std::string a, std::string b) {
  if (b < a) std::swap(a, b);
  return RelationType{std::move(a), std::move(b)};
}

void GraphBuildConfig::validate() const {
  if (min_co_users < 1) throw ValidationError("graph config: min_co_users must be >= 1");
  if (max_items_per_user < 2) throw ValidationError("graph config: max_items_per_user must be >= 2");
  if (window_start >= window_end) throw ValidationError("graph config: empty observation window");
}

int HeteroGraph::node_of(ItemId id) const {
  auto it = id_to_node_.find(id);
  if (it == id_to_node_.end()) throw LookupError("unknown graph node " + std::to_string(id));
  return it->second;
}

std::span<const int> HeteroGraph::neighbors(int node, int rel) const {
  const Csr& c = adj_[rel];
  return {c.nbr.data() + c.offsets[node], c.nbr.data() + c.offsets[node + 1]};
}

std::span<const int> HeteroGraph::edge_weights(int node, int rel) const {
  const Csr& c = adj_[rel];
  return {c.weight.data() + c.offsets[node], c.weight.data() + c.offsets[node + 1]};
}

int HeteroGraph::degree(int node) const {
  int d = 0;
  for (int r = 0; r < n_relations(); ++r)
    d += static_cast<int>(adj_[r].offsets[node + 1] - adj_[r].offsets[node]);
  return d;
}

bool HeteroGraph::has_edge(int a, int b) const {
  int rel = relation_index(node_type(a), node_type(b));
  if (rel < 0) return false;
  auto nb = neighbors(a, rel);
  return std::binary_search(nb.begin(), nb.end(), b);
}

int HeteroGraph::relation_index(const std::string& a, const std::string& b) const {
  auto it = relation_by_name_.find(RelationType::of(a, b).name());
  return it == relation_by_name_.end() ? -1 : it->second;
}

std::vector<GraphEdge> HeteroGraph::edge_list() const {
  std::vector<GraphEdge> out;
  out.reserve(static_cast<std::size_t>(n_edges_));
  for (int r = 0; r < n_relations(); ++r) {
    for (int v = 0; v < n_nodes(); ++v) {
      auto nb = neighbors(v, r);
      auto w = edge_weights(v, r);
      for (std::size_t i = 0; i < nb.size(); ++i)
        if (v < nb[i]) out.push_back({r, v, nb[i], w[i]});
    }
  }
  return out;
}

// shared assembly path for build_graph / from_parts / load / edge_split
HeteroGraph build_from_edges(std::vector<ItemId> ids, std::vector<int> node_type,
                             std::vector<std::string> type_names, int d_text,
                             const std::vector<GraphEdge>& edges) {
  HeteroGraph g;
  g.node_ids_ = std::move(ids);
  g.node_type_ = std::move(node_type);
  g.type_names_ = std::move(type_names);
  g.d_text_ = d_text;
  for (int i = 0; i < g.n_nodes(); ++i) g.id_to_node_.emplace(g.node_ids_[i], i);
  if (static_cast<int>(g.id_to_node_.size()) != g.n_nodes())
    throw ValidationError("graph nodes: duplicate item id");

  for (std::size_t a = 0; a < g.type_names_.size(); ++a)
    for (std::size_t b = a; b < g.type_names_.size(); ++b)
      g.relations_.push_back(RelationType::of(g.type_names_[a], g.type_names_[b]));
  std::sort(g.relations_.begin(), g.relations_.end(),
            [](const RelationType& x, const RelationType& y) {
              return std::tie(x.type_a, x.type_b) < std::tie(y.type_a, y.type_b);
            });
  for (int r = 0; r < g.n_relations(); ++r) g.relation_by_name_.emplace(g.relations_[r].name(), r);

  const int n = g.n_nodes();
  std::vector<std::vector<std::pair<int, int>>> rows(
      static_cast<std::size_t>(g.n_relations()) * n);
  for (const GraphEdge& e : edges) {
    if (e.src == e.dst) throw ValidationError("graph edge is a self-loop");
    if (e.src < 0 || e.src >= n || e.dst < 0 || e.dst >= n)
      throw ValidationError("graph edge endpoint out of range");
    int rel = g.relation_index(g.node_type(e.src), g.node_type(e.dst));
    if (rel != e.rel) throw ValidationError("graph edge relation does not match endpoint types");
    rows[static_cast<std::size_t>(rel) * n + e.src].emplace_back(e.dst, e.weight);
    rows[static_cast<std::size_t>(rel) * n + e.dst].emplace_back(e.src, e.weight);
  }

  g.adj_.resize(g.n_relations());
  for (int r = 0; r < g.n_relations(); ++r) {
    HeteroGraph::Csr& c = g.adj_[r];
    c.offsets.assign(n + 1, 0);
    for (int v = 0; v < n; ++v) {
      auto& row = rows[static_cast<std::size_t>(r) * n + v];
      std::sort(row.begin(), row.end());
      for (std::size_t i = 1; i < row.size(); ++i)
        if (row[i].first == row[i - 1].first)
          throw ValidationError("duplicate graph edge");
      c.offsets[v + 1] = c.offsets[v] + static_cast<std::int64_t>(row.size());
    }
    c.nbr.reserve(static_cast<std::size_t>(c.offsets[n]));
    c.weight.reserve(static_cast<std::size_t>(c.offsets[n]));
    for (int v = 0; v < n; ++v) {
      for (auto& [nbr, w] : rows[static_cast<std::size_t>(r) * n + v]) {
        c.nbr.push_back(nbr);
        c.weight.push_back(w);
      }
    }
  }
  g.n_edges_ = static_cast<std::int64_t>(edges.size());
  return g;
}

HeteroGraph build_graph(const std::vector<InteractionEvent>& events, const Catalog& catalog,
                        const GraphBuildConfig& cfg) {
  cfg.validate();

  // nodes: all top-level catalog items, ascending id
  std::vector<ItemId> ids;
  std::vector<std::string> item_type_of;
  for (const ItemRecord& rec : catalog.items())
    if (catalog.type_named(rec.item_type).top_level()) ids.push_back(rec.item_id);
  std::sort(ids.begin(), ids.end());

  std::vector<std::string> type_names = catalog.top_level_type_names();
  std::unordered_map<std::string, int> type_idx;
  for (int i = 0; i < static_cast<int>(type_names.size()); ++i) type_idx[type_names[i]] = i;
  std::vector<int> node_type(ids.size());
  std::unordered_map<ItemId, int> node_of;
  for (int i = 0; i < static_cast<int>(ids.size()); ++i) {
    node_type[i] = type_idx[catalog.get(ids[i]).item_type];
    node_of[ids[i]] = i;
  }

  // per user: lifted item -> latest observed timestamp
  std::unordered_map<UserId, std::unordered_map<int, Timestamp>> per_user;
  for (const InteractionEvent& ev : events) {
    if (!catalog.has(ev.item_id))
      throw LookupError("event references unknown item " + std::to_string(ev.item_id));
    if (ev.timestamp <= cfg.window_start || ev.timestamp > cfg.window_end) continue;
    ItemId top = catalog.top_level_id(ev.item_id);
    auto& last = per_user[ev.user_id][node_of.at(top)];
    last = std::max(last, ev.timestamp);
  }

  std::unordered_map<std::uint64_t, int> pair_count;
  std::vector<std::pair<Timestamp, int>> recency;  // (last_ts, node)
  for (auto& [user, items] : per_user) {
    recency.clear();
    for (auto& [node, ts] : items) recency.emplace_back(ts, node);
    // keep the most recent items when a heavy user exceeds the cap
    std::sort(recency.begin(), recency.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    if (static_cast<int>(recency.size()) > cfg.max_items_per_user)
      recency.resize(cfg.max_items_per_user);
    std::vector<int> kept;
    kept.reserve(recency.size());
    for (auto& [ts, node] : recency) kept.push_back(node);
    std::sort(kept.begin(), kept.end());
    for (std::size_t i = 0; i < kept.size(); ++i)
      for (std::size_t j = i + 1; j < kept.size(); ++j)
        pair_count[pack_pair(kept[i], kept[j])] += 1;
  }

  std::vector<GraphEdge> edges;
  for (auto& [key, count] : pair_count) {
    if (count < cfg.min_co_users) continue;
    int u = static_cast<int>(key >> 32);
    int v = static_cast<int>(key & 0xffffffffULL);
    GraphEdge e;
    e.src = u;
    e.dst = v;
    e.weight = count;
    edges.push_back(e);
  }
  // relation indices require the assembled schema; fill afterwards via a
  // throwaway lookup
  std::vector<RelationType> rels;
  for (std::size_t a = 0; a < type_names.size(); ++a)
    for (std::size_t b = a; b < type_names.size(); ++b)
      rels.push_back(RelationType::of(type_names[a], type_names[b]));
  std::sort(rels.begin(), rels.end(), [](const RelationType& x, const RelationType& y) {
    return std::tie(x.type_a, x.type_b) < std::tie(y.type_a, y.type_b);
  });
  std::unordered_map<std::string, int> rel_idx;
  for (int r = 0; r < static_cast<int>(rels.size()); ++r) rel_idx[rels[r].name()] = r;
  for (GraphEdge& e : edges) {
    e.rel = rel_idx.at(
        RelationType::of(type_names[node_type[e.src]], type_names[node_type[e.dst]]).name());
  }
  std::sort(edges.begin(), edges.end(), [](const GraphEdge& a, const GraphEdge& b) {
    return std::tie(a.rel, a.src, a.dst) < std::tie(b.rel, b.src, b.dst);
  });

  return build_from_edges(std::move(ids), std::move(node_type), std::move(type_names),
                          catalog.d_text(), edges);
}

std::vector<std::vector<ItemId>> neighbor_sample(const HeteroGraph& graph, ItemId node,
                                                 int fanout, std::uint64_t seed) {
  if (fanout < 1) throw ValidationError("neighbor_sample: fanout must be >= 1");
  int v = graph.node_of(node);
  std::vector<std::vector<ItemId>> out(graph.n_relations());
  for (int r = 0; r < graph.n_relations(); ++r) {
    auto nb = graph.neighbors(v, r);
    std::vector<int> sel;
    if (static_cast<int>(nb.size()) <= fanout) {
      sel.assign(nb.begin(), nb.end());
    } else {
      // fanout smallest hash keys = uniform subset, stable under relabeling
      std::vector<std::pair<std::uint64_t, int>> keyed;
      keyed.reserve(nb.size());
      for (int u : nb)
        keyed.emplace_back(mix64(seed, static_cast<std::uint64_t>(graph.item_id(u))), u);
      std::nth_element(keyed.begin(), keyed.begin() + fanout - 1, keyed.end());
      for (int i = 0; i < fanout; ++i) sel.push_back(keyed[i].second);
      std::sort(sel.begin(), sel.end());
    }
    out[r].reserve(sel.size());
    for (int u : sel) out[r].push_back(graph.item_id(u));
  }
  return out;
}

std::pair<HeteroGraph, std::vector<GraphEdge>> edge_split(const HeteroGraph& graph,
                                                          double holdout_fraction,
                                                          std::uint64_t seed) {
  if (holdout_fraction < 0.0 || holdout_fraction >= 1.0)
    throw ValidationError("edge_split: holdout fraction must be in [0, 1)");
  std::vector<GraphEdge> edges = graph.edge_list();
  const std::size_t n_val =
      static_cast<std::size_t>(holdout_fraction * static_cast<double>(edges.size()));
  Rng rng(seed);
  // partial Fisher-Yates: the first n_val slots become the validation set
  for (std::size_t i = 0; i < n_val; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.below(edges.size() - i));
    std::swap(edges[i], edges[j]);
  }
  std::vector<GraphEdge> val(edges.begin(), edges.begin() + n_val);
  std::vector<GraphEdge> train(edges.begin() + n_val, edges.end());
  std::sort(train.begin(), train.end(), [](const GraphEdge& a, const GraphEdge& b) {
    return std::tie(a.rel, a.src, a.dst) < std::tie(b.rel, b.src, b.dst);
  });

  std::vector<ItemId> ids(graph.n_nodes());
  std::vector<int> node_type(graph.n_nodes());
  for (int v = 0; v < graph.n_nodes(); ++v) {
    ids[v] = graph.item_id(v);
    for (int t = 0; t < static_cast<int>(graph.type_names().size()); ++t)
      if (graph.type_names()[t] == graph.node_type(v)) node_type[v] = t;
  }
  HeteroGraph train_graph = build_from_edges(std::move(ids), std::move(node_type),
                                             graph.type_names(), graph.d_text(), train);
  return {std::move(train_graph), std::move(val)};
}

Matrix node_features(const HeteroGraph& graph, const Catalog& catalog) {
  Matrix out(graph.n_nodes(), catalog.d_text());
  for (int v = 0; v < graph.n_nodes(); ++v) {
    const ItemRecord& rec = catalog.get(graph.item_id(v));
    std::copy(rec.features.begin(), rec.features.end(), out.row(v));
  }
  return out;
}

HeteroGraph HeteroGraph::from_parts(const std::vector<std::pair<ItemId, std::string>>& nodes,
                                    const std::vector<std::string>& top_level_types, int d_text,
                                    const std::vector<std::tuple<ItemId, ItemId, int>>& edges) {
  std::vector<std::pair<ItemId, std::string>> sorted_nodes = nodes;
  std::sort(sorted_nodes.begin(), sorted_nodes.end());
  std::vector<std::string> type_names = top_level_types;
  std::sort(type_names.begin(), type_names.end());
  std::unordered_map<std::string, int> type_idx;
  for (int i = 0; i < static_cast<int>(type_names.size()); ++i) type_idx[type_names[i]] = i;

  std::vector<ItemId> ids;
  std::vector<int> node_type;
  std::unordered_map<ItemId, int> node_of;
  for (auto& [id, ty] : sorted_nodes) {
    auto it = type_idx.find(ty);
    if (it == type_idx.end())
      throw ValidationError("graph node " + std::to_string(id) + " has non-top-level type '" +
                            ty + "'");
    node_of[id] = static_cast<int>(ids.size());
    ids.push_back(id);
    node_type.push_back(it->second);
  }

  std::vector<RelationType> rels;
  for (std::size_t a = 0; a < type_names.size(); ++a)
    for (std::size_t b = a; b < type_names.size(); ++b)
      rels.push_back(RelationType::of(type_names[a], type_names[b]));
  std::sort(rels.begin(), rels.end(), [](const RelationType& x, const RelationType& y) {
    return std::tie(x.type_a, x.type_b) < std::tie(y.type_a, y.type_b);
  });
  std::unordered_map<std::string, int> rel_idx;
  for (int r = 0; r < static_cast<int>(rels.size()); ++r) rel_idx[rels[r].name()] = r;

  std::vector<GraphEdge> built;
  for (auto& [a, b, w] : edges) {
    auto ia = node_of.find(a);
    auto ib = node_of.find(b);
    if (ia == node_of.end() || ib == node_of.end())
      throw ValidationError("graph edge references unknown node");
    GraphEdge e;
    e.src = std::min(ia->second, ib->second);
    e.dst = std::max(ia->second, ib->second);
    e.weight = w;
    e.rel = rel_idx.at(RelationType::of(type_names[node_type[e.src]],
                                        type_names[node_type[e.dst]])
                           .name());
    built.push_back(e);
  }
  return build_from_edges(std::move(ids), std::move(node_type), std::move(type_names), d_text,
                          built);
}

void HeteroGraph::save(std::ostream& out) const {
  out << "nodes=" << n_nodes() << " relations=" << n_relations() << " d_text=" << d_text_
      << '\n';
  for (int v = 0; v < n_nodes(); ++v) out << node_ids_[v] << '\t' << node_type(v) << '\n';
  std::vector<GraphEdge> edges = edge_list();
  std::vector<std::int64_t> per_rel(n_relations(), 0);
  for (const GraphEdge& e : edges) per_rel[e.rel]++;
  std::size_t pos = 0;
  for (int r = 0; r < n_relations(); ++r) {
    out << "relation=" << relations_[r].name() << " edges=" << per_rel[r] << '\n';
    for (; pos < edges.size() && edges[pos].rel == r; ++pos) {
      const GraphEdge& e = edges[pos];
      // src < dst holds in item-id space because node order is id order
      out << item_id(e.src) << '\t' << item_id(e.dst) << '\t' << e.weight << '\n';
    }
  }
}

HeteroGraph HeteroGraph::load(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing graph header", 1);
  int n = 0, r = 0, d = 0;
  if (std::sscanf(line.c_str(), "nodes=%d relations=%d d_text=%d", &n, &r, &d) != 3)
    throw ParseError("bad graph header '" + line + "'", 1);
  int lineno = 1;
  std::vector<std::pair<ItemId, std::string>> nodes;
  std::vector<std::string> types;
  for (int i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw ParseError("truncated node table", lineno + 1);
    ++lineno;
    std::istringstream ls(line);
    ItemId id;
    std::string ty;
    if (!(ls >> id >> ty)) throw ParseError("bad node line '" + line + "'", lineno);
    nodes.emplace_back(id, ty);
  }
  std::vector<std::tuple<ItemId, ItemId, int>> edges;
  for (int rel = 0; rel < r; ++rel) {
    if (!std::getline(in, line)) throw ParseError("truncated relation table", lineno + 1);
    ++lineno;
    char ta[128], tb[128];
    long long m = 0;
    if (std::sscanf(line.c_str(), "relation=%127[^:]:%127[^ ] edges=%lld", ta, tb, &m) != 3)
      throw ParseError("bad relation header '" + line + "'", lineno);
    types.emplace_back(ta);
    types.emplace_back(tb);
    for (long long i = 0; i < m; ++i) {
      if (!std::getline(in, line)) throw ParseError("truncated edge list", lineno + 1);
      ++lineno;
      std::istringstream ls(line);
      ItemId a, b;
      int w;
      if (!(ls >> a >> b >> w)) throw ParseError("bad edge line '" + line + "'", lineno);
      edges.emplace_back(a, b, w);
    }
  }
  std::sort(types.begin(), types.end());
  types.erase(std::unique(types.begin(), types.end()), types.end());
  return from_parts(nodes, types, d, edges);
}

}  // namespace sagerec
