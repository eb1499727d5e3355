#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "sagerec/cograph.hpp"
#include "sagerec/error.hpp"
#include "sagerec/rng.hpp"

using namespace sagerec;

namespace {

Catalog abc_catalog() {
  Catalog c;
  c.add({0, "show", std::nullopt, {1.0}});       // A
  c.add({1, "audiobook", std::nullopt, {2.0}});  // B
  c.add({2, "show", std::nullopt, {3.0}});       // C
  return c;
}

GraphBuildConfig open_window() {
  GraphBuildConfig cfg;
  cfg.window_start = -1;
  cfg.window_end = 1'000'000'000;
  return cfg;
}

// weighted adjacency as an order-free map, for symmetry checks
std::map<std::tuple<int, ItemId, ItemId>, int> adjacency_map(const HeteroGraph& g) {
  std::map<std::tuple<int, ItemId, ItemId>, int> out;
  for (int r = 0; r < g.n_relations(); ++r)
    for (int v = 0; v < g.n_nodes(); ++v) {
      auto nb = g.neighbors(v, r);
      auto w = g.edge_weights(v, r);
      for (std::size_t i = 0; i < nb.size(); ++i)
        out[{r, g.item_id(v), g.item_id(nb[i])}] = w[i];
    }
  return out;
}

// random catalog + events covering episodes, used by property tests
std::pair<Catalog, std::vector<InteractionEvent>> random_instance(Rng& rng) {
  Catalog c;
  const int n_shows = 2 + static_cast<int>(rng.below(6));
  const int n_books = 1 + static_cast<int>(rng.below(5));
  ItemId next = 0;
  std::vector<ItemId> shows;
  for (int i = 0; i < n_shows; ++i, ++next) {
    c.add({next, "show", std::nullopt, {rng.uniform01()}});
    shows.push_back(next);
  }
  for (int i = 0; i < n_books; ++i, ++next) c.add({next, "audiobook", std::nullopt, {rng.uniform01()}});
  const int n_episodes = static_cast<int>(rng.below(6));
  for (int i = 0; i < n_episodes; ++i, ++next)
    c.add({next, "episode", shows[rng.below(shows.size())], {rng.uniform01()}});

  std::vector<InteractionEvent> events;
  const int n_users = 2 + static_cast<int>(rng.below(10));
  for (UserId u = 0; u < n_users; ++u) {
    const int n_ev = 1 + static_cast<int>(rng.below(12));
    for (int e = 0; e < n_ev; ++e)
      events.push_back({u, static_cast<ItemId>(rng.below(static_cast<std::uint64_t>(next))),
                        static_cast<Timestamp>(rng.below(100'000))});
  }
  return {std::move(c), std::move(events)};
}

}  // namespace

TEST_CASE("build_graph hand-enumerated co-interactions") {
  Catalog c = abc_catalog();
  std::vector<InteractionEvent> events = {
      {1, 0, 10}, {1, 1, 20},  // u1 streams A, B
      {2, 1, 30}, {2, 2, 40},  // u2 streams B, C
  };
  HeteroGraph g = build_graph(events, c, open_window());
  CHECK(g.n_nodes() == 3);
  CHECK(g.n_edges() == 2);
  auto adj = adjacency_map(g);
  int rel_ab = g.relation_index("show", "audiobook");
  CHECK(adj.count({rel_ab, 0, 1}));  // A-B
  CHECK(adj.at({rel_ab, 0, 1}) == 1);
  CHECK(adj.count({rel_ab, 1, 2}));  // B-C
  CHECK(!adj.count({g.relation_index("show", "show"), 0, 2}));  // no A-C
}

TEST_CASE("build_graph single user single item has zero edges") {
  Catalog c = abc_catalog();
  std::vector<InteractionEvent> events = {{1, 0, 10}};
  HeteroGraph g = build_graph(events, c, open_window());
  CHECK(g.n_nodes() == 3);
  CHECK(g.n_edges() == 0);
}

TEST_CASE("build_graph min_co_users threshold") {
  Catalog c = abc_catalog();
  std::vector<InteractionEvent> events = {
      {1, 0, 10}, {1, 1, 20}, {2, 0, 30}, {2, 1, 40},
  };
  GraphBuildConfig cfg = open_window();
  cfg.min_co_users = 2;
  HeteroGraph g2 = build_graph(events, c, cfg);
  CHECK(g2.n_edges() == 1);
  auto adj = adjacency_map(g2);
  CHECK(adj.at({g2.relation_index("show", "audiobook"), 0, 1}) == 2);
  cfg.min_co_users = 3;
  CHECK(build_graph(events, c, cfg).n_edges() == 0);
}

TEST_CASE("build_graph rejects events for unknown items") {
  Catalog c = abc_catalog();
  std::vector<InteractionEvent> events = {{1, 99, 10}};
  CHECK_THROWS_AS(build_graph(events, c, open_window()), LookupError);
}

TEST_CASE("build_graph with no events yields an empty-edge graph") {
  Catalog c = abc_catalog();
  HeteroGraph g = build_graph({}, c, open_window());
  CHECK(g.n_nodes() == 3);
  CHECK(g.n_edges() == 0);
}

TEST_CASE("build_graph lifts episode events to their show") {
  Catalog c;
  c.add({0, "show", std::nullopt, {1.0}});
  c.add({1, "audiobook", std::nullopt, {1.0}});
  c.add({10, "episode", 0, {1.0}});
  std::vector<InteractionEvent> events = {{1, 10, 5}, {1, 1, 6}};
  HeteroGraph g = build_graph(events, c, open_window());
  CHECK(g.n_nodes() == 2);  // no episode node
  CHECK(!g.has_node(10));
  CHECK(g.n_edges() == 1);
  CHECK(g.has_edge(g.node_of(0), g.node_of(1)));
}

TEST_CASE("build_graph caps pairing at the most recent items") {
  Catalog c;
  for (ItemId i = 0; i < 4; ++i) c.add({i, "show", std::nullopt, {1.0}});
  // one user touching 4 items; cap 2 keeps the two most recent (2, 3)
  std::vector<InteractionEvent> events = {{1, 0, 10}, {1, 1, 20}, {1, 2, 30}, {1, 3, 40}};
  GraphBuildConfig cfg = open_window();
  cfg.max_items_per_user = 2;
  HeteroGraph g = build_graph(events, c, cfg);
  CHECK(g.n_edges() == 1);
  CHECK(g.has_edge(g.node_of(2), g.node_of(3)));
}

TEST_CASE("build_graph honors the observation window") {
  Catalog c = abc_catalog();
  std::vector<InteractionEvent> events = {{1, 0, 10}, {1, 1, 500}};
  GraphBuildConfig cfg = open_window();
  cfg.window_start = 0;
  cfg.window_end = 100;  // drops the second event
  CHECK(build_graph(events, c, cfg).n_edges() == 0);
  cfg.window_end = 500;  // inclusive right boundary
  CHECK(build_graph(events, c, cfg).n_edges() == 1);
}

TEST_CASE("neighbor_sample returns full lists under the fanout") {
  Catalog c;
  for (ItemId i = 0; i < 5; ++i) c.add({i, "show", std::nullopt, {1.0}});
  std::vector<InteractionEvent> events;
  for (ItemId i = 1; i < 4; ++i) events.push_back({1, i, 10 + i});
  events.push_back({1, 0, 5});
  HeteroGraph g = build_graph(events, c, open_window());  // clique over 0..3
  auto sample = neighbor_sample(g, 0, 10, 123);
  int rel = g.relation_index("show", "show");
  CHECK(sample[rel].size() == 3);
}

TEST_CASE("neighbor_sample draws exactly fanout distinct neighbors") {
  Catalog c;
  for (ItemId i = 0; i <= 50; ++i) c.add({i, "show", std::nullopt, {1.0}});
  std::vector<InteractionEvent> events;
  for (UserId u = 1; u <= 50; ++u) {
    events.push_back({u, 0, 10});
    events.push_back({u, static_cast<ItemId>(u), 20});
  }
  HeteroGraph g = build_graph(events, c, open_window());  // star around item 0
  auto sample = neighbor_sample(g, 0, 10, 9);
  int rel = g.relation_index("show", "show");
  REQUIRE(sample[rel].size() == 10);
  std::set<ItemId> distinct(sample[rel].begin(), sample[rel].end());
  CHECK(distinct.size() == 10);
  CHECK(neighbor_sample(g, 0, 10, 9) == sample);           // deterministic
  CHECK(neighbor_sample(g, 0, 10, 10) != sample);          // seed-sensitive
}

TEST_CASE("edge_split floor arithmetic and symmetry removal") {
  Catalog c;
  for (ItemId i = 0; i < 5; ++i) c.add({i, "show", std::nullopt, {1.0}});
  std::vector<InteractionEvent> events;
  // one heavy user covering all pairs of 5 items -> 10 edges
  for (ItemId i = 0; i < 5; ++i) events.push_back({1, i, 10 + i});
  HeteroGraph g = build_graph(events, c, open_window());
  REQUIRE(g.n_edges() == 10);

  auto [train, val] = edge_split(g, 0.2, 7);
  CHECK(val.size() == 2);
  CHECK(train.n_edges() == 8);
  CHECK(train.n_nodes() == g.n_nodes());
  for (const GraphEdge& e : val) {
    CHECK(!train.has_edge(e.src, e.dst));
    CHECK(!train.has_edge(e.dst, e.src));
  }

  auto [same, none] = edge_split(g, 0.0, 7);
  CHECK(none.empty());
  CHECK(adjacency_map(same) == adjacency_map(g));
}

TEST_CASE("graph invariants on random instances") {
  Rng rng(2024);
  for (int trial = 0; trial < 30; ++trial) {
    auto [catalog, events] = random_instance(rng);
    GraphBuildConfig cfg = open_window();
    cfg.min_co_users = 1 + static_cast<int>(rng.below(2));
    HeteroGraph g = build_graph(events, catalog, cfg);

    // symmetry: adjacency equals its transpose, weights included
    auto adj = adjacency_map(g);
    for (const auto& [key, w] : adj) {
      auto [r, a, b] = key;
      CHECK(a != b);  // no self-loops
      CHECK(adj.at({r, b, a}) == w);
    }
    // episode lifting: no child-type nodes
    for (int v = 0; v < g.n_nodes(); ++v) CHECK(g.node_type(v) != "episode");
    // determinism
    CHECK(adjacency_map(build_graph(events, catalog, cfg)) == adj);
    // threshold monotonicity
    GraphBuildConfig stricter = cfg;
    stricter.min_co_users = cfg.min_co_users + 1;
    auto strict_adj = adjacency_map(build_graph(events, catalog, stricter));
    for (const auto& [key, w] : strict_adj) {
      CHECK(adj.count(key));
      CHECK(adj.at(key) == w);
    }
  }
}

TEST_CASE("graph snapshot round-trip") {
  Rng rng(5);
  auto [catalog, events] = random_instance(rng);
  HeteroGraph g = build_graph(events, catalog, open_window());
  std::ostringstream out;
  g.save(out);
  std::istringstream in(out.str());
  HeteroGraph back = HeteroGraph::load(in);
  CHECK(back.n_nodes() == g.n_nodes());
  CHECK(back.n_edges() == g.n_edges());
  CHECK(back.d_text() == g.d_text());
  CHECK(adjacency_map(back) == adjacency_map(g));
  std::ostringstream out2;
  back.save(out2);
  CHECK(out2.str() == out.str());
}

TEST_CASE("from_parts validates endpoints and self-loops") {
  std::vector<std::pair<ItemId, std::string>> nodes = {{0, "show"}, {1, "show"}};
  std::vector<std::string> types = {"show"};
  CHECK_THROWS_AS(HeteroGraph::from_parts(nodes, types, 1, {{0, 0, 1}}), ValidationError);
  CHECK_THROWS_AS(HeteroGraph::from_parts(nodes, types, 1, {{0, 9, 1}}), ValidationError);
  HeteroGraph g = HeteroGraph::from_parts(nodes, types, 1, {{0, 1, 3}});
  CHECK(g.n_edges() == 1);
  CHECK(g.edge_weights(0, 0)[0] == 3);
}
