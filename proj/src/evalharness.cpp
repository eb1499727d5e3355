#include "sagerec/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "sagerec/error.hpp"
#include "sagerec/rng.hpp"

namespace sagerec {

EvalSplit temporal_split(const std::vector<InteractionEvent>& events, int train_days,
                         int test_days) {
  if (events.empty()) throw ValidationError("temporal_split: no events");
  if (train_days < 1 || test_days < 1)
    throw ValidationError("temporal_split: window lengths must be >= 1 day");
  Timestamp t_max = events.front().timestamp;
  for (const InteractionEvent& ev : events) t_max = std::max(t_max, ev.timestamp);
  const Timestamp test_lo = t_max - static_cast<Timestamp>(test_days) * 86400;
  const Timestamp train_lo = test_lo - static_cast<Timestamp>(train_days) * 86400;

  EvalSplit split;
  split.cutoff_time = test_lo;
  for (const InteractionEvent& ev : events) {
    if (ev.timestamp > test_lo)
      split.test.push_back(ev);
    else if (ev.timestamp > train_lo)
      split.train.push_back(ev);
  }
  return split;
}

ItemIndex build_item_index(const RetrievalModel& model, const std::string& type_name) {
  const Catalog& catalog = *model.catalog;
  if (!catalog.type_named(type_name).top_level())
    throw ValidationError("item index requires a top-level type, got '" + type_name + "'");
  TwoTowerContext ctx = make_two_tower_context(catalog, model.store, model.cfg);

  ItemIndex index;
  for (std::size_t i = 0; i < catalog.size(); ++i)
    if (catalog.items()[i].item_type == type_name) index.items.push_back(static_cast<int>(i));
  index.vectors = Matrix(static_cast<int>(index.items.size()), model.params.d_final);
  for (std::size_t r = 0; r < index.items.size(); ++r) {
    ItemFeatureBundle b;
    const double* g = ctx.gnn.row(index.items[r]);
    b.gnn.assign(g, g + ctx.gnn.cols);
    const double* t = ctx.text.row(index.items[r]);
    b.text.assign(t, t + ctx.text.cols);
    b.item_index = index.items[r];
    std::vector<double> v = item_tower_forward(b, model.params);
    std::copy(v.begin(), v.end(), index.vectors.row(static_cast<int>(r)));
  }
  return index;
}

namespace {

std::vector<std::pair<double, ItemId>> scored_candidates(
    const std::vector<double>& user_vec, const RetrievalModel& model, const ItemIndex& index,
    const std::unordered_set<ItemId>& exclusions) {
  std::vector<std::pair<double, ItemId>> scored;
  scored.reserve(index.items.size());
  for (std::size_t r = 0; r < index.items.size(); ++r) {
    const ItemId id = model.catalog->items()[index.items[r]].item_id;
    if (exclusions.count(id)) continue;
    scored.emplace_back(dot(index.vectors.row(static_cast<int>(r)), user_vec.data(),
                            index.vectors.cols),
                        id);
  }
  return scored;
}

}  // namespace

std::vector<ItemId> recommend_top_k(const UserProfile& profile, const RetrievalModel& model,
                                    const ItemIndex& index, int k,
                                    const std::unordered_set<ItemId>& exclusions) {
  if (k < 1) throw ValidationError("recommend_top_k: k must be >= 1");
  std::vector<double> user_vec = user_tower_forward(profile, model.params);
  auto scored = scored_candidates(user_vec, model, index, exclusions);
  if (scored.empty())
    throw ValidationError("recommend_top_k: no candidates left after exclusions");
  const std::size_t take = std::min<std::size_t>(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + take, scored.end(),
                    [](const auto& a, const auto& b) {
                      if (a.first != b.first) return a.first > b.first;
                      return a.second < b.second;
                    });
  std::vector<ItemId> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(scored[i].second);
  return out;
}

std::vector<HitRateRow> hit_rate_at_k(const EvalSplit& split, const RetrievalModel& model,
                                      int k, int threads) {
  const Catalog& catalog = *model.catalog;

  // group train events and exclusions per user
  std::unordered_map<UserId, std::vector<InteractionEvent>> train_by_user;
  for (const InteractionEvent& ev : split.train) train_by_user[ev.user_id].push_back(ev);

  // users and the candidate types their test events need
  struct UserWork {
    UserId user = 0;
    std::vector<std::string> types;
  };
  std::unordered_map<UserId, std::unordered_set<std::string>> needed;
  for (const InteractionEvent& ev : split.test) {
    const ItemId top = catalog.top_level_id(ev.item_id);
    needed[ev.user_id].insert(catalog.get(top).item_type);
  }
  std::vector<UserWork> work;
  work.reserve(needed.size());
  for (auto& [user, types] : needed) {
    UserWork w;
    w.user = user;
    w.types.assign(types.begin(), types.end());
    std::sort(w.types.begin(), w.types.end());
    work.push_back(std::move(w));
  }
  std::sort(work.begin(), work.end(),
            [](const UserWork& a, const UserWork& b) { return a.user < b.user; });

  // shared per-type candidate indexes
  std::map<std::string, ItemIndex> indexes;
  for (const UserWork& w : work)
    for (const std::string& t : w.types)
      if (!indexes.count(t)) indexes.emplace(t, build_item_index(model, t));

  const int d_gnn = model.cfg.use_gnn_features && model.store ? model.store->dim()
                                                              : model.cfg.d_gnn;
  const Timestamp profile_cutoff = split.cutoff_time + 1;  // include the whole train window

  // per (user, type) top-k sets; embarrassingly parallel over users
  std::vector<std::unordered_map<std::string, std::unordered_set<ItemId>>> topk(work.size());
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto run_range = [&](std::size_t lo, std::size_t hi) {
    try {
      static const std::vector<InteractionEvent> kNoEvents;
      for (std::size_t i = lo; i < hi; ++i) {
        const UserWork& w = work[i];
        auto it = train_by_user.find(w.user);
        const std::vector<InteractionEvent>& train_events =
            it == train_by_user.end() ? kNoEvents : it->second;
        UserProfile profile =
            build_user_profile(train_events, profile_cutoff, model.cfg.window_days, model.store,
                               catalog, d_gnn, model.cfg.d_aux);
        profile.user_id = w.user;  // cold-start users keep a zero profile
        std::unordered_set<ItemId> exclusions;
        for (const InteractionEvent& ev : train_events)
          exclusions.insert(catalog.top_level_id(ev.item_id));
        for (const std::string& t : w.types) {
          auto recs = recommend_top_k(profile, model, indexes.at(t), k, exclusions);
          topk[i][t] = std::unordered_set<ItemId>(recs.begin(), recs.end());
        }
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mu);
      if (!failure) failure = std::current_exception();
    }
  };
  if (threads <= 1 || work.size() < 2) {
    run_range(0, work.size());
  } else {
    const int n_threads = std::min<int>(threads, static_cast<int>(work.size()));
    std::vector<std::thread> pool;
    const std::size_t chunk = (work.size() + n_threads - 1) / n_threads;
    for (int t = 0; t < n_threads; ++t) {
      const std::size_t lo = t * chunk;
      const std::size_t hi = std::min(work.size(), lo + chunk);
      if (lo < hi) pool.emplace_back(run_range, lo, hi);
    }
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::unordered_map<UserId, std::size_t> slot_of;
  for (std::size_t i = 0; i < work.size(); ++i) slot_of[work[i].user] = i;

  std::map<std::string, std::pair<std::int64_t, std::int64_t>> counts;  // type -> (hits, total)
  for (const InteractionEvent& ev : split.test) {
    const ItemId top = catalog.top_level_id(ev.item_id);
    const std::string& type = catalog.get(top).item_type;
    auto& c = counts[type];
    c.second += 1;
    const auto& sets = topk[slot_of.at(ev.user_id)];
    if (sets.at(type).count(top)) c.first += 1;
  }

  std::vector<HitRateRow> rows;
  for (const auto& [type, c] : counts) {
    HitRateRow row;
    row.item_type = type;
    row.k = k;
    row.hit_rate = static_cast<double>(c.first) / static_cast<double>(c.second);
    row.n_events = c.second;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string AblationReport::table() const {
  // group rows by variant, one column pair per item type
  std::vector<std::string> variants;
  std::vector<std::string> types;
  for (const AblationRow& r : rows) {
    if (std::find(variants.begin(), variants.end(), r.variant) == variants.end())
      variants.push_back(r.variant);
    if (std::find(types.begin(), types.end(), r.item_type) == types.end())
      types.push_back(r.item_type);
  }
  std::sort(types.begin(), types.end());
  std::size_t name_w = 7;
  for (const auto& v : variants) name_w = std::max(name_w, v.size());

  std::ostringstream out;
  out << std::string(name_w, ' ');
  char buf[64];
  for (const auto& t : types) {
    std::snprintf(buf, sizeof(buf), " | %12s", t.c_str());
    out << buf;
  }
  out << '\n';
  for (const auto& v : variants) {
    out << v << std::string(name_w - v.size(), ' ');
    for (const auto& t : types) {
      const AblationRow* found = nullptr;
      for (const AblationRow& r : rows)
        if (r.variant == v && r.item_type == t) found = &r;
      if (found)
        std::snprintf(buf, sizeof(buf), " | %12.3f", found->hit_rate);
      else
        std::snprintf(buf, sizeof(buf), " | %12s", "-");
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

void AblationReport::save(std::ostream& out) const {
  char buf[64];
  for (const AblationRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.6f", r.hit_rate);
    out << r.variant << '\t' << r.item_type << '\t' << r.k << '\t' << buf << '\t' << r.n_events
        << '\n';
  }
}

AblationReport run_ablations(const AblationInput& input,
                             const std::vector<AblationVariant>& variants) {
  if (!input.events || !input.catalog) throw ValidationError("run_ablations: missing inputs");
  const Catalog& catalog = *input.catalog;
  if (catalog.top_level_type_names().size() < 2)
    throw ValidationError("run_ablations: dataset needs at least two item types");

  EvalSplit split = temporal_split(*input.events, input.train_days, input.test_days);
  if (split.train.empty()) throw ValidationError("run_ablations: empty train window");

  // foundation embeddings per lag, shared across adaptation variants
  std::map<int, ItemEmbeddingStore> store_by_lag;
  auto store_for_lag = [&](int lag_days) -> const ItemEmbeddingStore& {
    auto it = store_by_lag.find(lag_days);
    if (it != store_by_lag.end()) return it->second;
    GraphBuildConfig gcfg = input.graph_cfg;
    gcfg.window_end = split.cutoff_time - static_cast<Timestamp>(lag_days) * 86400;
    gcfg.window_start = gcfg.window_end - static_cast<Timestamp>(input.train_days) * 86400;
    HeteroGraph graph = build_graph(*input.events, catalog, gcfg);
    Matrix features = node_features(graph, catalog);
    HgnnTrainResult res = train_hgnn(graph, features, input.hgnn_cfg);
    ItemEmbeddingStore store =
        export_embeddings(graph, features, res.params, input.hgnn_cfg.fanouts,
                          mix64(input.hgnn_cfg.seed, 0x51), "lag" + std::to_string(lag_days));
    return store_by_lag.emplace(lag_days, std::move(store)).first->second;
  };

  AblationReport report;
  for (const AblationVariant& variant : variants) {
    TwoTowerConfig cfg = input.tt_cfg;
    cfg.unified = variant.unified;
    cfg.type_filter = variant.type_filter;
    cfg.use_gnn_features = variant.use_gnn;
    cfg.d_gnn = input.hgnn_cfg.out_dim;  // slot width matches the foundation either way

    const ItemEmbeddingStore* store =
        variant.use_gnn ? &store_for_lag(variant.hgnn_lag_days) : nullptr;
    TwoTowerTrainResult trained = train_two_tower(split.train, catalog, store, cfg);

    RetrievalModel model;
    model.catalog = &catalog;
    model.store = store;
    model.params = std::move(trained.params);
    model.cfg = cfg;
    for (const HitRateRow& row : hit_rate_at_k(split, model, input.k, input.threads)) {
      if (!variant.unified && row.item_type != variant.type_filter) continue;
      report.rows.push_back({variant.name, row.item_type, row.k, row.hit_rate, row.n_events});
    }
  }
  return report;
}

std::vector<AblationVariant> standard_ablation_variants(const Catalog& catalog, int lag_days) {
  std::vector<AblationVariant> variants;
  variants.push_back({"unified", true, "", true, 0});
  for (const std::string& type : catalog.top_level_type_names())
    variants.push_back({"specific:" + type, false, type, true, 0});
  variants.push_back({"unified-no-gnn", true, "", false, 0});
  variants.push_back({"unified-frozen-hgnn", true, "", true, lag_days});
  return variants;
}

}  // namespace sagerec
