#include "sagerec/two_tower.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "sagerec/error.hpp"
#include "sagerec/rng.hpp"

namespace sagerec {

namespace {

constexpr std::uint64_t kTagTowerInit = 0x41;
constexpr std::uint64_t kTagTableInit = 0x42;
constexpr std::uint64_t kTagEpoch = 0x43;

FeedForward init_tower(int d_in, const std::vector<int>& hidden, int d_out, std::uint64_t seed) {
  FeedForward ff;
  std::vector<int> dims;
  dims.push_back(d_in);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(d_out);
  for (std::size_t k = 1; k < dims.size(); ++k) {
    Matrix w(dims[k], dims[k - 1]);
    const double bound = std::sqrt(6.0 / static_cast<double>(dims[k - 1] + dims[k]));
    Rng rng(mix64(seed, static_cast<std::uint64_t>(k)));
    for (double& x : w.data) x = (rng.uniform01() * 2.0 - 1.0) * bound;
    ff.w.push_back(std::move(w));
    ff.b.emplace_back(1, dims[k]);
  }
  return ff;
}

struct TowerCache {
  std::vector<std::vector<double>> acts;  // acts[0] = input, acts[l] = output of layer l
  std::vector<std::vector<double>> pre;   // preactivations per layer
};

// final layer linear, hidden layers ReLU
std::vector<double> tower_forward(const FeedForward& ff, std::vector<double> x,
                                  TowerCache* cache) {
  if (cache) {
    cache->acts.clear();
    cache->pre.clear();
    cache->acts.push_back(x);
  }
  const int L = ff.n_layers();
  for (int l = 0; l < L; ++l) {
    const Matrix& w = ff.w[l];
    if (static_cast<int>(x.size()) != w.cols)
      throw DimensionError("tower forward: input dim " + std::to_string(x.size()) +
                           " != " + std::to_string(w.cols));
    std::vector<double> y(w.rows);
    for (int j = 0; j < w.rows; ++j)
      y[j] = ff.b[l].at(0, j) + dot(w.row(j), x.data(), w.cols);
    if (cache) cache->pre.push_back(y);
    if (l < L - 1)
      for (double& v : y)
        if (v < 0.0) v = 0.0;
    if (cache) cache->acts.push_back(y);
    x = std::move(y);
  }
  return x;
}

// d_out -> gradient w.r.t. the tower input; accumulates weight grads
std::vector<double> tower_backward(const FeedForward& ff, const TowerCache& cache,
                                   std::vector<double> d_out, FeedForward& grads) {
  for (int l = ff.n_layers() - 1; l >= 0; --l) {
    const Matrix& w = ff.w[l];
    if (l < ff.n_layers() - 1) {
      const std::vector<double>& pre = cache.pre[l];
      for (int j = 0; j < w.rows; ++j)
        if (pre[j] < 0.0) d_out[j] = 0.0;
    }
    const std::vector<double>& in = cache.acts[l];
    for (int j = 0; j < w.rows; ++j) {
      if (d_out[j] == 0.0) continue;
      grads.b[l].at(0, j) += d_out[j];
      double* grow = grads.w[l].row(j);
      for (int d = 0; d < w.cols; ++d) grow[d] += d_out[j] * in[d];
    }
    std::vector<double> d_in(w.cols, 0.0);
    for (int j = 0; j < w.rows; ++j) {
      if (d_out[j] == 0.0) continue;
      const double* wrow = w.row(j);
      for (int d = 0; d < w.cols; ++d) d_in[d] += d_out[j] * wrow[d];
    }
    d_out = std::move(d_in);
  }
  return d_out;
}

std::vector<double> normalize_vec(std::vector<double> v, double* norm_out) {
  const double n = norm2(v);
  if (norm_out) *norm_out = n;
  if (n != 0.0)
    for (double& x : v) x /= n;
  return v;
}

// gradient through z = y/|y| given dz; zero rows pass through with zero grad
std::vector<double> normalize_backward_vec(const std::vector<double>& z, double norm,
                                           const std::vector<double>& dz) {
  std::vector<double> dy(z.size(), 0.0);
  if (norm == 0.0) return dy;
  double zdot = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) zdot += z[j] * dz[j];
  for (std::size_t j = 0; j < z.size(); ++j) dy[j] = (dz[j] - z[j] * zdot) / norm;
  return dy;
}

std::vector<double> user_input(const UserProfile& profile, const TwoTowerParams& params) {
  std::vector<double> x;
  x.reserve(params.user_input_dim());
  if (static_cast<int>(profile.gnn_history_mean.size()) != params.d_gnn)
    throw DimensionError("user tower: gnn history dim mismatch");
  if (static_cast<int>(profile.aux_taste.size()) != params.d_aux)
    throw DimensionError("user tower: aux slot dim mismatch");
  x.insert(x.end(), profile.gnn_history_mean.begin(), profile.gnn_history_mean.end());
  std::vector<double> id_mean(params.d_id, 0.0);
  if (!profile.history_items.empty()) {
    for (int row : profile.history_items) {
      const double* r = params.id_table.row(row);
      for (int d = 0; d < params.d_id; ++d) id_mean[d] += r[d];
    }
    const double inv = 1.0 / static_cast<double>(profile.history_items.size());
    for (double& v : id_mean) v *= inv;
  }
  x.insert(x.end(), id_mean.begin(), id_mean.end());
  x.insert(x.end(), profile.aux_taste.begin(), profile.aux_taste.end());
  return x;
}

std::vector<double> item_input(const ItemFeatureBundle& bundle, const TwoTowerParams& params) {
  if (static_cast<int>(bundle.gnn.size()) != params.d_gnn)
    throw DimensionError("item tower: gnn slot dim mismatch");
  if (static_cast<int>(bundle.text.size()) != params.d_text)
    throw DimensionError("item tower: text slot dim mismatch");
  if (bundle.item_index < 0 || bundle.item_index >= params.id_table.rows)
    throw DimensionError("item tower: id row out of range");
  std::vector<double> x;
  x.reserve(params.item_input_dim());
  x.insert(x.end(), bundle.gnn.begin(), bundle.gnn.end());
  x.insert(x.end(), bundle.text.begin(), bundle.text.end());
  const double* r = params.id_table.row(bundle.item_index);
  x.insert(x.end(), r, r + params.d_id);
  return x;
}

ItemFeatureBundle bundle_for(const TwoTowerContext& ctx, int item_index) {
  ItemFeatureBundle b;
  const double* g = ctx.gnn.row(item_index);
  b.gnn.assign(g, g + ctx.gnn.cols);
  const double* t = ctx.text.row(item_index);
  b.text.assign(t, t + ctx.text.cols);
  b.item_index = item_index;
  return b;
}

void write_matrix(std::ostream& out, const char* name, const Matrix& m) {
  out << "matrix=" << name << " rows=" << m.rows << " cols=" << m.cols << '\n';
  char buf[32];
  for (int i = 0; i < m.rows; ++i) {
    for (int j = 0; j < m.cols; ++j) {
      if (j) out << ' ';
      std::snprintf(buf, sizeof(buf), "%.17g", m.at(i, j));
      out << buf;
    }
    out << '\n';
  }
}

Matrix read_matrix(std::istream& in, const std::string& expect_name, int& lineno) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("truncated checkpoint", lineno + 1);
  ++lineno;
  char name[64];
  int rows = 0, cols = 0;
  if (std::sscanf(line.c_str(), "matrix=%63s rows=%d cols=%d", name, &rows, &cols) != 3 ||
      expect_name != name)
    throw ParseError("bad checkpoint matrix header '" + line + "'", lineno);
  if (rows < 0 || cols < 0) throw ParseError("negative matrix dims", lineno);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    if (!std::getline(in, line)) throw ParseError("truncated matrix data", lineno + 1);
    ++lineno;
    const char* p = line.c_str();
    char* end = nullptr;
    for (int j = 0; j < cols; ++j) {
      m.at(i, j) = std::strtod(p, &end);
      if (end == p) throw ParseError("bad matrix row", lineno);
      p = end;
    }
  }
  return m;
}

}  // namespace

void TwoTowerConfig::validate() const {
  if (d_final < 1) throw ValidationError("two-tower config: d_final must be >= 1");
  for (int h : hidden)
    if (h < 1) throw ValidationError("two-tower config: hidden sizes must be >= 1");
  if (temperature <= 0.0) throw ValidationError("two-tower config: temperature must be > 0");
  if (window_days < 1) throw ValidationError("two-tower config: window_days must be >= 1");
  if (batch_size < 2) throw ValidationError("two-tower config: batch_size must be >= 2");
  if (epochs < 0) throw ValidationError("two-tower config: epochs must be >= 0");
  if (lr < 0.0) throw ValidationError("two-tower config: lr must be >= 0");
  if (!unified && type_filter.empty())
    throw ValidationError("two-tower config: type_filter required when unified=false");
  if (d_id < 1 || d_aux < 1 || d_gnn < 1)
    throw ValidationError("two-tower config: slot dims must be >= 1");
}

TwoTowerParams TwoTowerParams::init(int n_items, int d_gnn, int d_text,
                                    const TwoTowerConfig& cfg) {
  cfg.validate();
  if (n_items < 1) throw ValidationError("two-tower init: empty catalog");
  if (d_text < 1) throw ValidationError("two-tower init: d_text must be >= 1");
  TwoTowerParams p;
  p.d_gnn = d_gnn;
  p.d_text = d_text;
  p.d_id = cfg.d_id;
  p.d_aux = cfg.d_aux;
  p.d_final = cfg.d_final;
  p.id_table = Matrix(n_items, cfg.d_id);
  Rng rng(mix64(cfg.seed, kTagTableInit));
  for (double& x : p.id_table.data) x = (rng.uniform01() * 2.0 - 1.0) * 0.05;
  p.item_tower = init_tower(p.item_input_dim(), cfg.hidden, cfg.d_final,
                            mix64(cfg.seed, kTagTowerInit, 1));
  p.user_tower = init_tower(p.user_input_dim(), cfg.hidden, cfg.d_final,
                            mix64(cfg.seed, kTagTowerInit, 2));
  return p;
}

std::vector<double> TwoTowerParams::to_vector() const {
  std::vector<double> flat;
  auto push = [&](const Matrix& m) { flat.insert(flat.end(), m.data.begin(), m.data.end()); };
  push(id_table);
  for (const auto& ff : {&item_tower, &user_tower})
    for (int l = 0; l < ff->n_layers(); ++l) {
      push(ff->w[l]);
      push(ff->b[l]);
    }
  return flat;
}

void TwoTowerParams::from_vector(const std::vector<double>& flat) {
  std::size_t pos = 0;
  auto pull = [&](Matrix& m) {
    std::copy(flat.begin() + pos, flat.begin() + pos + m.data.size(), m.data.begin());
    pos += m.data.size();
  };
  pull(id_table);
  for (auto* ff : {&item_tower, &user_tower})
    for (int l = 0; l < ff->n_layers(); ++l) {
      pull(ff->w[l]);
      pull(ff->b[l]);
    }
  if (pos != flat.size()) throw DimensionError("two-tower params: flat vector size mismatch");
}

void TwoTowerParams::save(std::ostream& out) const {
  out << "sagerec-2t v1\n";
  out << "d_gnn=" << d_gnn << " d_text=" << d_text << " d_id=" << d_id << " d_aux=" << d_aux
      << " d_final=" << d_final << " n_items=" << id_table.rows << '\n';
  out << "hidden=";
  for (int l = 0; l + 1 < item_tower.n_layers(); ++l) {
    if (l) out << ',';
    out << item_tower.w[l].rows;
  }
  out << '\n';
  write_matrix(out, "id_table", id_table);
  for (int l = 0; l < item_tower.n_layers(); ++l) {
    write_matrix(out, ("item_w" + std::to_string(l)).c_str(), item_tower.w[l]);
    write_matrix(out, ("item_b" + std::to_string(l)).c_str(), item_tower.b[l]);
  }
  for (int l = 0; l < user_tower.n_layers(); ++l) {
    write_matrix(out, ("user_w" + std::to_string(l)).c_str(), user_tower.w[l]);
    write_matrix(out, ("user_b" + std::to_string(l)).c_str(), user_tower.b[l]);
  }
}

TwoTowerParams TwoTowerParams::load(std::istream& in) {
  std::string line;
  int lineno = 0;
  if (!std::getline(in, line) || line != "sagerec-2t v1")
    throw ParseError("bad checkpoint version line", 1);
  ++lineno;
  if (!std::getline(in, line)) throw ParseError("missing checkpoint dims", 2);
  ++lineno;
  TwoTowerParams p;
  int n_items = 0;
  if (std::sscanf(line.c_str(), "d_gnn=%d d_text=%d d_id=%d d_aux=%d d_final=%d n_items=%d",
                  &p.d_gnn, &p.d_text, &p.d_id, &p.d_aux, &p.d_final, &n_items) != 6)
    throw ParseError("bad checkpoint dims '" + line + "'", lineno);
  if (!std::getline(in, line) || line.rfind("hidden=", 0) != 0)
    throw ParseError("missing hidden sizes", lineno + 1);
  ++lineno;
  std::vector<int> hidden;
  {
    std::string rest = line.substr(7);
    std::stringstream ss(rest);
    std::string tok;
    while (std::getline(ss, tok, ','))
      if (!tok.empty()) hidden.push_back(std::stoi(tok));
  }
  p.id_table = read_matrix(in, "id_table", lineno);
  if (p.id_table.rows != n_items || p.id_table.cols != p.d_id)
    throw ValidationError("checkpoint: id_table dims do not match header");

  auto check_tower = [&](const FeedForward& ff, int d_in, const char* which) {
    int cur = d_in;
    for (int l = 0; l < ff.n_layers(); ++l) {
      const int expect_out = (l == ff.n_layers() - 1) ? p.d_final : hidden[l];
      if (ff.w[l].cols != cur || ff.w[l].rows != expect_out || ff.b[l].cols != expect_out)
        throw ValidationError(std::string("checkpoint: ") + which +
                              " tower dims do not match header");
      cur = expect_out;
    }
  };
  const int n_tower_layers = static_cast<int>(hidden.size()) + 1;
  for (int l = 0; l < n_tower_layers; ++l) {
    p.item_tower.w.push_back(read_matrix(in, "item_w" + std::to_string(l), lineno));
    p.item_tower.b.push_back(read_matrix(in, "item_b" + std::to_string(l), lineno));
  }
  for (int l = 0; l < n_tower_layers; ++l) {
    p.user_tower.w.push_back(read_matrix(in, "user_w" + std::to_string(l), lineno));
    p.user_tower.b.push_back(read_matrix(in, "user_b" + std::to_string(l), lineno));
  }
  check_tower(p.item_tower, p.item_input_dim(), "item");
  check_tower(p.user_tower, p.user_input_dim(), "user");
  return p;
}

std::vector<double> resolve_item_embedding(
    ItemId item, const ItemEmbeddingStore& store, const Catalog& catalog,
    const std::function<std::vector<double>(ItemId)>& inductive_fallback) {
  const ItemId top = catalog.top_level_id(item);
  if (store.contains(top)) return store.get(top);
  if (inductive_fallback) return inductive_fallback(top);
  throw LookupError("item " + std::to_string(item) + " (top-level " + std::to_string(top) +
                    ") has no stored embedding and no inductive fallback");
}

UserProfile build_user_profile(std::span<const InteractionEvent> user_events, Timestamp cutoff,
                               int window_days, const ItemEmbeddingStore* store,
                               const Catalog& catalog, int d_gnn, int d_aux) {
  UserProfile profile;
  profile.gnn_history_mean.assign(d_gnn, 0.0);
  profile.aux_taste.assign(d_aux, 0.0);
  if (user_events.empty()) return profile;
  profile.user_id = user_events.front().user_id;

  std::vector<InteractionEvent> sorted(user_events.begin(), user_events.end());
  for (const InteractionEvent& ev : sorted)
    if (ev.user_id != profile.user_id)
      throw ValidationError("build_user_profile: events span multiple users");
  std::sort(sorted.begin(), sorted.end(), [](const InteractionEvent& a, const InteractionEvent& b) {
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    return a.item_id < b.item_id;
  });

  const Timestamp window_start = cutoff - static_cast<Timestamp>(window_days) * 86400;
  int count = 0;
  for (const InteractionEvent& ev : sorted) {
    if (ev.timestamp < window_start || ev.timestamp >= cutoff) continue;
    const ItemId top = catalog.top_level_id(ev.item_id);
    profile.history_items.push_back(catalog.index_of(top));
    if (store) {
      const std::vector<double>& v = resolve_item_embedding(ev.item_id, *store, catalog);
      if (static_cast<int>(v.size()) != d_gnn)
        throw DimensionError("build_user_profile: store dim != d_gnn");
      for (int d = 0; d < d_gnn; ++d) profile.gnn_history_mean[d] += v[d];
    }
    ++count;
  }
  if (count > 0 && store) {
    const double inv = 1.0 / static_cast<double>(count);
    for (double& v : profile.gnn_history_mean) v *= inv;
  }
  return profile;
}

std::vector<double> item_tower_forward(const ItemFeatureBundle& bundle,
                                       const TwoTowerParams& params) {
  return normalize_vec(tower_forward(params.item_tower, item_input(bundle, params), nullptr),
                       nullptr);
}

std::vector<double> user_tower_forward(const UserProfile& profile, const TwoTowerParams& params) {
  return normalize_vec(tower_forward(params.user_tower, user_input(profile, params), nullptr),
                       nullptr);
}

Matrix pairwise_logits(const Matrix& user_vecs, const Matrix& item_vecs, double temperature) {
  if (user_vecs.rows != item_vecs.rows || user_vecs.cols != item_vecs.cols)
    throw DimensionError("pairwise_logits: batch shapes disagree");
  if (temperature <= 0.0) throw ValidationError("pairwise_logits: temperature must be > 0");
  const int n = user_vecs.rows;
  Matrix s(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      s.at(i, j) = dot(user_vecs.row(i), item_vecs.row(j), user_vecs.cols) / temperature;
  return s;
}

SoftmaxLossResult in_batch_softmax_loss(const Matrix& user_vecs, const Matrix& item_vecs,
                                        double temperature) {
  const int n = user_vecs.rows;
  if (n < 2) throw ValidationError("in_batch_softmax_loss: batch size must be >= 2");
  Matrix s = pairwise_logits(user_vecs, item_vecs, temperature);

  SoftmaxLossResult res;
  Matrix p(n, n);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* row = s.row(i);
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) sum += std::exp(row[j] - mx);
    const double logz = mx + std::log(sum);
    loss += logz - row[i];
    for (int j = 0; j < n; ++j) p.at(i, j) = std::exp(row[j] - logz);
  }
  res.loss = loss / n;

  // dL/dS = (softmax - I)/n, then back through S = U V^T / tau
  Matrix ds(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      ds.at(i, j) = (p.at(i, j) - (i == j ? 1.0 : 0.0)) / (n * temperature);
  res.d_user = matmul(ds, item_vecs);
  res.d_item = matmul(transpose(ds), user_vecs);
  return res;
}

TwoTowerContext make_two_tower_context(const Catalog& catalog, const ItemEmbeddingStore* store,
                                       const TwoTowerConfig& cfg) {
  TwoTowerContext ctx;
  ctx.catalog = &catalog;
  ctx.use_gnn = cfg.use_gnn_features;
  ctx.text = text_features(catalog, TextFeatureProvider::precomputed());
  const int d_gnn = (cfg.use_gnn_features && store) ? store->dim() : cfg.d_gnn;
  ctx.gnn = Matrix(static_cast<int>(catalog.size()), d_gnn);
  if (cfg.use_gnn_features) {
    if (!store)
      throw ValidationError("two-tower context: use_gnn_features requires an embedding store");
    for (std::size_t i = 0; i < catalog.size(); ++i) {
      const std::vector<double>& v =
          resolve_item_embedding(catalog.items()[i].item_id, *store, catalog);
      std::copy(v.begin(), v.end(), ctx.gnn.row(static_cast<int>(i)));
    }
  }
  return ctx;
}

std::vector<TrainingExample> make_training_examples(const std::vector<InteractionEvent>& events,
                                                    const Catalog& catalog,
                                                    const ItemEmbeddingStore* store,
                                                    const TwoTowerConfig& cfg) {
  cfg.validate();
  const int d_gnn = (cfg.use_gnn_features && store) ? store->dim() : cfg.d_gnn;
  const ItemEmbeddingStore* profile_store = cfg.use_gnn_features ? store : nullptr;
  if (cfg.use_gnn_features && !store)
    throw ValidationError("two-tower training: use_gnn_features requires an embedding store");

  std::unordered_map<UserId, std::vector<InteractionEvent>> by_user;
  for (const InteractionEvent& ev : events) {
    if (!catalog.has(ev.item_id))
      throw LookupError("event references unknown item " + std::to_string(ev.item_id));
    by_user[ev.user_id].push_back(ev);
  }
  std::vector<UserId> users;
  users.reserve(by_user.size());
  for (auto& [u, _] : by_user) users.push_back(u);
  std::sort(users.begin(), users.end());

  std::vector<TrainingExample> examples;
  for (UserId u : users) {
    auto& evs = by_user[u];
    std::sort(evs.begin(), evs.end(), [](const InteractionEvent& a, const InteractionEvent& b) {
      if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
      return a.item_id < b.item_id;
    });
    for (const InteractionEvent& ev : evs) {
      const ItemId top = catalog.top_level_id(ev.item_id);
      if (!cfg.unified && catalog.get(top).item_type != cfg.type_filter) continue;
      TrainingExample ex;
      ex.ts = ev.timestamp;
      ex.pos_item = catalog.index_of(top);
      ex.profile = build_user_profile(evs, ev.timestamp, cfg.window_days, profile_store, catalog,
                                      d_gnn, cfg.d_aux);
      examples.push_back(std::move(ex));
    }
  }
  return examples;
}

TwoTowerGrads TwoTowerGrads::zeros_like(const TwoTowerParams& p) {
  TwoTowerGrads g;
  auto zero_ff = [](const FeedForward& ff) {
    FeedForward z;
    for (int l = 0; l < ff.n_layers(); ++l) {
      z.w.emplace_back(ff.w[l].rows, ff.w[l].cols);
      z.b.emplace_back(1, ff.b[l].cols);
    }
    return z;
  };
  g.d_item = zero_ff(p.item_tower);
  g.d_user = zero_ff(p.user_tower);
  g.d_table = Matrix(p.id_table.rows, p.id_table.cols);
  g.d_table_item_path = Matrix(p.id_table.rows, p.id_table.cols);
  g.d_table_user_path = Matrix(p.id_table.rows, p.id_table.cols);
  return g;
}

double two_tower_batch_loss(const TwoTowerContext& ctx,
                            std::span<const TrainingExample> batch, const TwoTowerParams& params,
                            double temperature, TwoTowerGrads* grads) {
  const int n = static_cast<int>(batch.size());
  if (n < 2) throw ValidationError("two_tower_batch_loss: batch size must be >= 2");

  std::vector<TowerCache> user_caches(n), item_caches(n);
  std::vector<std::vector<double>> user_z(n), item_z(n);
  std::vector<double> user_norm(n), item_norm(n);
  Matrix u(n, params.d_final), v(n, params.d_final);
  for (int i = 0; i < n; ++i) {
    const TrainingExample& ex = batch[i];
    user_z[i] = normalize_vec(
        tower_forward(params.user_tower, user_input(ex.profile, params), &user_caches[i]),
        &user_norm[i]);
    item_z[i] = normalize_vec(
        tower_forward(params.item_tower, item_input(bundle_for(ctx, ex.pos_item), params),
                      &item_caches[i]),
        &item_norm[i]);
    std::copy(user_z[i].begin(), user_z[i].end(), u.row(i));
    std::copy(item_z[i].begin(), item_z[i].end(), v.row(i));
  }

  SoftmaxLossResult sm = in_batch_softmax_loss(u, v, temperature);
  if (!grads) return sm.loss;

  for (int i = 0; i < n; ++i) {
    const TrainingExample& ex = batch[i];
    // user side
    std::vector<double> dz(sm.d_user.row(i), sm.d_user.row(i) + params.d_final);
    std::vector<double> dy = normalize_backward_vec(user_z[i], user_norm[i], dz);
    std::vector<double> dx = tower_backward(params.user_tower, user_caches[i], std::move(dy),
                                            grads->d_user);
    if (!ex.profile.history_items.empty()) {
      const double inv = 1.0 / static_cast<double>(ex.profile.history_items.size());
      for (int row : ex.profile.history_items) {
        double* dst = grads->d_table_user_path.row(row);
        for (int d = 0; d < params.d_id; ++d) dst[d] += dx[params.d_gnn + d] * inv;
      }
    }
    // item side
    std::vector<double> dzi(sm.d_item.row(i), sm.d_item.row(i) + params.d_final);
    std::vector<double> dyi = normalize_backward_vec(item_z[i], item_norm[i], dzi);
    std::vector<double> dxi = tower_backward(params.item_tower, item_caches[i], std::move(dyi),
                                             grads->d_item);
    double* dst = grads->d_table_item_path.row(ex.pos_item);
    const int off = params.d_gnn + params.d_text;
    for (int d = 0; d < params.d_id; ++d) dst[d] += dxi[off + d];
  }
  for (std::size_t i = 0; i < grads->d_table.data.size(); ++i)
    grads->d_table.data[i] = grads->d_table_item_path.data[i] + grads->d_table_user_path.data[i];
  return sm.loss;
}

TwoTowerTrainResult train_two_tower(const std::vector<InteractionEvent>& events,
                                    const Catalog& catalog, const ItemEmbeddingStore* store,
                                    const TwoTowerConfig& cfg) {
  cfg.validate();
  if (events.empty()) throw ValidationError("train_two_tower: empty training set");

  TwoTowerContext ctx = make_two_tower_context(catalog, store, cfg);
  std::vector<TrainingExample> examples = make_training_examples(events, catalog, store, cfg);
  if (examples.empty())
    throw ValidationError("train_two_tower: no training examples" +
                          std::string(cfg.unified ? "" : " for type '" + cfg.type_filter + "'"));

  TwoTowerTrainResult result;
  result.params = TwoTowerParams::init(static_cast<int>(catalog.size()), ctx.gnn.cols,
                                       ctx.text.cols, cfg);

  AdamState table_state = AdamState::for_param(result.params.id_table, cfg.lr);
  std::vector<AdamState> item_w, item_b, user_w, user_b;
  for (int l = 0; l < result.params.item_tower.n_layers(); ++l) {
    item_w.push_back(AdamState::for_param(result.params.item_tower.w[l], cfg.lr));
    item_b.push_back(AdamState::for_param(result.params.item_tower.b[l], cfg.lr));
  }
  for (int l = 0; l < result.params.user_tower.n_layers(); ++l) {
    user_w.push_back(AdamState::for_param(result.params.user_tower.w[l], cfg.lr));
    user_b.push_back(AdamState::for_param(result.params.user_tower.b[l], cfg.lr));
  }

  std::vector<int> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::vector<TrainingExample> batch;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng epoch_rng(mix64(cfg.seed, kTagEpoch, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[epoch_rng.below(i)]);

    double loss_sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
      if (hi - lo < 2) break;  // a tail of one example has no in-batch negatives
      batch.clear();
      for (std::size_t i = lo; i < hi; ++i) batch.push_back(examples[order[i]]);
      TwoTowerGrads grads = TwoTowerGrads::zeros_like(result.params);
      const double loss =
          two_tower_batch_loss(ctx, batch, result.params, cfg.temperature, &grads);
      adam_step(result.params.id_table, grads.d_table, table_state);
      for (int l = 0; l < result.params.item_tower.n_layers(); ++l) {
        adam_step(result.params.item_tower.w[l], grads.d_item.w[l], item_w[l]);
        adam_step(result.params.item_tower.b[l], grads.d_item.b[l], item_b[l]);
      }
      for (int l = 0; l < result.params.user_tower.n_layers(); ++l) {
        adam_step(result.params.user_tower.w[l], grads.d_user.w[l], user_w[l]);
        adam_step(result.params.user_tower.b[l], grads.d_user.b[l], user_b[l]);
      }
      loss_sum += loss * static_cast<double>(hi - lo);
      counted += hi - lo;
    }
    result.epoch_loss.push_back(counted ? loss_sum / static_cast<double>(counted) : 0.0);
  }
  return result;
}

}  // namespace sagerec
