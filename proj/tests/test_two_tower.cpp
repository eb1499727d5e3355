#include <cmath>
#include <sstream>

#include "doctest.h"
#include "sagerec/error.hpp"
#include "sagerec/rng.hpp"
#include "sagerec/two_tower.hpp"

using namespace sagerec;

namespace {

Catalog catalog_with_episode() {
  Catalog c;
  c.add({0, "show", std::nullopt, {1.0, 0.0}});
  c.add({1, "audiobook", std::nullopt, {0.0, 1.0}});
  c.add({2, "episode", 0, {0.5, 0.5}});
  return c;
}

ItemEmbeddingStore unit_store() {
  ItemEmbeddingStore store(2, "test");
  store.put(0, {1.0, 0.0});
  store.put(1, {0.0, 1.0});
  return store;
}

// towers with a single linear layer mapping everything through given weights
TwoTowerParams passthrough_params(int n_items, int d_gnn, int d_text, int d_id, int d_aux,
                                  std::vector<double> item_row, std::vector<double> user_row) {
  TwoTowerParams p;
  p.d_gnn = d_gnn;
  p.d_text = d_text;
  p.d_id = d_id;
  p.d_aux = d_aux;
  p.d_final = 1;
  p.id_table = Matrix(n_items, d_id);
  Matrix wi(1, d_gnn + d_text + d_id);
  wi.data = std::move(item_row);
  p.item_tower.w.push_back(std::move(wi));
  p.item_tower.b.emplace_back(1, 1);
  Matrix wu(1, d_gnn + d_id + d_aux);
  wu.data = std::move(user_row);
  p.user_tower.w.push_back(std::move(wu));
  p.user_tower.b.emplace_back(1, 1);
  return p;
}

struct GradFixture {
  Catalog catalog;
  TwoTowerContext ctx;
  TwoTowerParams params;
  std::vector<TrainingExample> batch;
};

// B=3 batch with shared id rows across item and history paths
GradFixture make_grad_fixture(std::uint64_t seed) {
  GradFixture fx;
  Rng rng(seed);
  const int n_items = 5;
  for (ItemId i = 0; i < n_items; ++i) {
    ItemRecord rec;
    rec.item_id = i;
    rec.item_type = i < 3 ? "show" : "audiobook";
    rec.features = {rng.uniform01(), rng.uniform01()};
    fx.catalog.add(std::move(rec));
  }
  TwoTowerConfig cfg;
  cfg.d_final = 3;
  cfg.hidden = {4};
  cfg.temperature = 0.3;
  cfg.d_id = 2;
  cfg.d_aux = 2;
  cfg.d_gnn = 3;
  cfg.seed = seed;
  cfg.use_gnn_features = false;  // gnn slots zeroed; id/text paths still live
  fx.ctx = make_two_tower_context(fx.catalog, nullptr, cfg);
  fx.params = TwoTowerParams::init(n_items, cfg.d_gnn, 2, cfg);
  for (int b = 0; b < 3; ++b) {
    TrainingExample ex;
    ex.pos_item = b;
    ex.profile.user_id = b;
    ex.profile.gnn_history_mean.assign(cfg.d_gnn, 0.0);
    ex.profile.aux_taste.assign(cfg.d_aux, 0.0);
    ex.profile.history_items = {b, (b + 1) % n_items};
    fx.batch.push_back(std::move(ex));
  }
  return fx;
}

}  // namespace

TEST_CASE("resolve_item_embedding inheritance and identity") {
  Catalog c = catalog_with_episode();
  ItemEmbeddingStore store = unit_store();
  CHECK(resolve_item_embedding(0, store, c) == store.get(0));
  // episode 2 inherits show 0 bit for bit
  CHECK(resolve_item_embedding(2, store, c) == store.get(0));
}

TEST_CASE("resolve_item_embedding fallback contract") {
  Catalog c = catalog_with_episode();
  ItemEmbeddingStore store(2, "empty");
  std::vector<double> fallback = {0.6, 0.8};
  auto fb = [&](ItemId) { return fallback; };
  CHECK(resolve_item_embedding(1, store, c, fb) == fallback);
  try {
    resolve_item_embedding(1, store, c);
    FAIL("expected LookupError");
  } catch (const LookupError& e) {
    CHECK(std::string(e.what()).find("1") != std::string::npos);  // names the item
  }
}

TEST_CASE("item_tower_forward zero bundle with zero weights") {
  TwoTowerParams p = passthrough_params(3, 1, 1, 1, 1, {0, 0, 0}, {0, 0, 0});
  ItemFeatureBundle b;
  b.gnn = {0.0};
  b.text = {0.0};
  b.item_index = 0;
  std::vector<double> out = item_tower_forward(b, p);
  CHECK(out == std::vector<double>{0.0});
}

TEST_CASE("item_tower_forward d=1 hand instance") {
  TwoTowerParams p = passthrough_params(3, 1, 1, 1, 1, {1, 1, 1}, {1, 1, 1});
  p.id_table.at(0, 0) = 4.0;
  ItemFeatureBundle b;
  b.gnn = {2.0};
  b.text = {3.0};
  b.item_index = 0;
  std::vector<double> out = item_tower_forward(b, p);
  CHECK(out[0] == doctest::Approx(1.0));  // 2+3+4 = 9 -> normalized
}

TEST_CASE("item tower output norm is 1 for nonzero preactivations") {
  GradFixture fx = make_grad_fixture(4);
  for (int i = 0; i < 5; ++i) {
    ItemFeatureBundle b;
    const double* g = fx.ctx.gnn.row(i);
    b.gnn.assign(g, g + fx.ctx.gnn.cols);
    const double* t = fx.ctx.text.row(i);
    b.text.assign(t, t + fx.ctx.text.cols);
    b.item_index = i;
    std::vector<double> out = item_tower_forward(b, fx.params);
    CHECK(norm2(out) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("user_tower_forward zero profile with zero weights") {
  TwoTowerParams p = passthrough_params(3, 1, 1, 1, 1, {0, 0, 0}, {0, 0, 0});
  UserProfile u;
  u.gnn_history_mean = {0.0};
  u.aux_taste = {0.0};
  CHECK(user_tower_forward(u, p) == std::vector<double>{0.0});
}

TEST_CASE("user_tower_forward d=1 hand instance") {
  TwoTowerParams p = passthrough_params(3, 1, 1, 1, 1, {1, 1, 1}, {1, 1, 1});
  p.id_table.at(2, 0) = 2.0;
  UserProfile u;
  u.gnn_history_mean = {1.0};
  u.history_items = {2};  // id mean = 2
  u.aux_taste = {3.0};
  std::vector<double> out = user_tower_forward(u, p);
  CHECK(out[0] == doctest::Approx(1.0));  // 1+2+3 = 6 -> normalized
}

TEST_CASE("towers are type-agnostic: identical numbers give identical outputs") {
  GradFixture fx = make_grad_fixture(9);
  ItemFeatureBundle show_b, book_b;
  show_b.gnn = book_b.gnn = {0.1, 0.2, 0.3};
  show_b.text = book_b.text = {0.4, 0.5};
  show_b.item_index = 0;  // a show row
  book_b.item_index = 3;  // an audiobook row
  fx.params.id_table = Matrix(5, 2);  // equalize the id rows
  CHECK(item_tower_forward(show_b, fx.params) == item_tower_forward(book_b, fx.params));
}

TEST_CASE("build_user_profile averages resolved vectors") {
  Catalog c = catalog_with_episode();
  ItemEmbeddingStore store = unit_store();
  std::vector<InteractionEvent> events = {{7, 0, 100}, {7, 1, 200}};
  UserProfile u = build_user_profile(events, 1000, 90, &store, c, 2, 3);
  CHECK(u.gnn_history_mean[0] == doctest::Approx(0.5));
  CHECK(u.gnn_history_mean[1] == doctest::Approx(0.5));
  CHECK(u.history_items == std::vector<int>{0, 1});
  CHECK(u.aux_taste == std::vector<double>(3, 0.0));
}

TEST_CASE("build_user_profile empty window gives zero vectors") {
  Catalog c = catalog_with_episode();
  ItemEmbeddingStore store = unit_store();
  std::vector<InteractionEvent> events = {{7, 0, 5000}};  // after cutoff
  UserProfile u = build_user_profile(events, 1000, 90, &store, c, 2, 3);
  CHECK(u.gnn_history_mean == std::vector<double>(2, 0.0));
  CHECK(u.history_items.empty());
}

TEST_CASE("build_user_profile excludes stale events") {
  Catalog c = catalog_with_episode();
  ItemEmbeddingStore store = unit_store();
  const Timestamp cutoff = 100 * 86400;
  std::vector<InteractionEvent> events = {
      {7, 0, cutoff - 10},            // in window
      {7, 1, cutoff - 20},            // in window
      {7, 1, cutoff - 95L * 86400},   // stale, outside 90 days
  };
  UserProfile u = build_user_profile(events, cutoff, 90, &store, c, 2, 1);
  CHECK(u.history_items.size() == 2);
  CHECK(u.gnn_history_mean[0] == doctest::Approx(0.5));
  CHECK(u.gnn_history_mean[1] == doctest::Approx(0.5));
}

TEST_CASE("build_user_profile lifts episodes through the store") {
  Catalog c = catalog_with_episode();
  ItemEmbeddingStore store = unit_store();
  std::vector<InteractionEvent> events = {{7, 2, 100}};  // an episode of show 0
  UserProfile u = build_user_profile(events, 1000, 90, &store, c, 2, 1);
  CHECK(u.gnn_history_mean == store.get(0));
  CHECK(u.history_items == std::vector<int>{0});
}

TEST_CASE("in_batch_softmax_loss hand instance") {
  // orthonormal pairs: S = I at tau=1
  Matrix u(2, 2), v(2, 2);
  u.at(0, 0) = 1.0;
  u.at(1, 1) = 1.0;
  v.at(0, 0) = 1.0;
  v.at(1, 1) = 1.0;
  SoftmaxLossResult r = in_batch_softmax_loss(u, v, 1.0);
  const double expected = std::log((std::exp(1.0) + 1.0) / std::exp(1.0));
  CHECK(r.loss == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("in_batch_softmax_loss equal scores give ln(B)") {
  Matrix u(4, 2), v(4, 2);
  for (int i = 0; i < 4; ++i) {
    u.at(i, 0) = 1.0;
    v.at(i, 0) = 1.0;
  }
  SoftmaxLossResult r = in_batch_softmax_loss(u, v, 0.5);
  CHECK(r.loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("halving the temperature doubles every logit") {
  Rng rng(8);
  Matrix u(3, 4), v(3, 4);
  for (double& x : u.data) x = rng.uniform01();
  for (double& x : v.data) x = rng.uniform01();
  Matrix s1 = pairwise_logits(u, v, 0.2);
  Matrix s2 = pairwise_logits(u, v, 0.1);
  for (std::size_t i = 0; i < s1.data.size(); ++i)
    CHECK(s2.data[i] == doctest::Approx(2.0 * s1.data[i]).epsilon(1e-12));
}

TEST_CASE("in_batch_softmax_loss rejects B < 2") {
  Matrix u(1, 2), v(1, 2);
  CHECK_THROWS_AS(in_batch_softmax_loss(u, v, 1.0), ValidationError);
}

TEST_CASE("two-tower gradients match central differences") {
  GradFixture fx = make_grad_fixture(123);
  TwoTowerGrads grads = TwoTowerGrads::zeros_like(fx.params);
  two_tower_batch_loss(fx.ctx, fx.batch, fx.params, 0.3, &grads);
  std::vector<double> analytic;
  auto push = [&](const Matrix& m) {
    analytic.insert(analytic.end(), m.data.begin(), m.data.end());
  };
  push(grads.d_table);
  for (const FeedForward* ff : {&grads.d_item, &grads.d_user})
    for (int l = 0; l < ff->n_layers(); ++l) {
      push(ff->w[l]);
      push(ff->b[l]);
    }
  TwoTowerParams probe = fx.params;
  auto f = [&](const std::vector<double>& flat) {
    probe.from_vector(flat);
    return two_tower_batch_loss(fx.ctx, fx.batch, probe, 0.3, nullptr);
  };
  CHECK(grad_check(f, analytic, fx.params.to_vector()) < 1e-4);
}

TEST_CASE("shared table row is fed by both paths; dropping the item path shrinks it") {
  GradFixture fx = make_grad_fixture(321);
  // example 0 touches row 0 through its positive item AND through history
  TwoTowerGrads grads = TwoTowerGrads::zeros_like(fx.params);
  two_tower_batch_loss(fx.ctx, fx.batch, fx.params, 0.3, &grads);
  const int d = fx.params.d_id;
  const double user_only = norm2(grads.d_table_user_path.row(0), d);
  const double item_only = norm2(grads.d_table_item_path.row(0), d);
  const double full = norm2(grads.d_table.row(0), d);
  CHECK(user_only > 0.0);
  CHECK(item_only > 0.0);
  CHECK(user_only < full);  // zeroing the item path strictly reduces the row gradient
}

TEST_CASE("training examples never leak future events into profiles") {
  Catalog c = catalog_with_episode();
  ItemEmbeddingStore store = unit_store();
  std::vector<InteractionEvent> events = {
      {1, 0, 100}, {1, 1, 200}, {1, 0, 200},  // same-timestamp pair
      {2, 1, 50},
  };
  TwoTowerConfig cfg;
  cfg.d_gnn = 2;
  cfg.d_id = 2;
  cfg.d_aux = 1;
  cfg.hidden = {};
  cfg.d_final = 2;
  auto examples = make_training_examples(events, c, &store, cfg);
  REQUIRE(examples.size() == 4);
  for (const auto& ex : examples) {
    // profile history must predate the positive strictly
    const std::size_t before = [&] {
      std::size_t n = 0;
      for (const auto& ev : events)
        if (ev.user_id == ex.profile.user_id && ev.timestamp < ex.ts) ++n;
      return n;
    }();
    CHECK(ex.profile.history_items.size() == before);
  }
}

TEST_CASE("train_two_tower with lr=0 keeps the initialization") {
  SyntheticConfig scfg;
  scfg.n_users = 30;
  scfg.items_per_type = {{"show", 10}, {"audiobook", 5}};
  scfg.n_topics = 3;
  scfg.d_text = 4;
  scfg.events_per_user = 6;
  scfg.horizon_days = 10;
  auto [catalog, events] = generate_synthetic(scfg);
  TwoTowerConfig cfg;
  cfg.d_final = 4;
  cfg.hidden = {4};
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.lr = 0.0;
  cfg.use_gnn_features = false;
  cfg.d_gnn = 4;
  cfg.d_id = 3;
  cfg.d_aux = 2;
  TwoTowerTrainResult r = train_two_tower(events, catalog, nullptr, cfg);
  TwoTowerParams init =
      TwoTowerParams::init(static_cast<int>(catalog.size()), cfg.d_gnn, scfg.d_text, cfg);
  CHECK(r.params.to_vector() == init.to_vector());
}

TEST_CASE("train_two_tower is deterministic and reduces the loss") {
  SyntheticConfig scfg;
  scfg.n_users = 80;
  scfg.items_per_type = {{"show", 20}, {"audiobook", 8}};
  scfg.n_topics = 4;
  scfg.d_text = 6;
  scfg.events_per_user = 10;
  scfg.horizon_days = 20;
  scfg.seed = 3;
  auto [catalog, events] = generate_synthetic(scfg);
  TwoTowerConfig cfg;
  cfg.d_final = 8;
  cfg.hidden = {16};
  cfg.window_days = 20;
  cfg.epochs = 4;
  cfg.batch_size = 64;
  cfg.use_gnn_features = false;
  cfg.d_gnn = 4;
  cfg.d_id = 4;
  cfg.d_aux = 2;
  cfg.seed = 11;
  TwoTowerTrainResult a = train_two_tower(events, catalog, nullptr, cfg);
  TwoTowerTrainResult b = train_two_tower(events, catalog, nullptr, cfg);
  CHECK(a.params.to_vector() == b.params.to_vector());
  CHECK(a.epoch_loss == b.epoch_loss);
  REQUIRE(a.epoch_loss.size() == 4);
  CHECK(a.epoch_loss.back() < 0.8 * a.epoch_loss.front());  // >= 20% reduction
}

TEST_CASE("train_two_tower rejects an empty training set") {
  Catalog c = catalog_with_episode();
  TwoTowerConfig cfg;
  cfg.use_gnn_features = false;
  CHECK_THROWS_AS(train_two_tower({}, c, nullptr, cfg), ValidationError);
}

TEST_CASE("type filter restricts positives but keeps full-history profiles") {
  Catalog c = catalog_with_episode();
  ItemEmbeddingStore store = unit_store();
  std::vector<InteractionEvent> events = {{1, 0, 100}, {1, 1, 200}, {1, 1, 300}};
  TwoTowerConfig cfg;
  cfg.unified = false;
  cfg.type_filter = "audiobook";
  cfg.d_gnn = 2;
  cfg.d_id = 2;
  cfg.d_aux = 1;
  auto examples = make_training_examples(events, c, &store, cfg);
  REQUIRE(examples.size() == 2);  // only audiobook positives
  CHECK(examples[0].pos_item == c.index_of(1));
  // the later example's profile still includes the show event
  CHECK(examples[1].profile.history_items.size() == 2);
}

TEST_CASE("checkpoint round-trip is bit-exact and validates dims") {
  GradFixture fx = make_grad_fixture(55);
  std::ostringstream out;
  fx.params.save(out);
  std::istringstream in(out.str());
  TwoTowerParams back = TwoTowerParams::load(in);
  CHECK(back.to_vector() == fx.params.to_vector());
  CHECK(back.d_gnn == fx.params.d_gnn);

  // corrupt the declared item count -> hard error
  std::string text = out.str();
  auto pos = text.find("n_items=5");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 9, "n_items=6");
  std::istringstream bad(text);
  CHECK_THROWS_AS(TwoTowerParams::load(bad), ValidationError);
}
