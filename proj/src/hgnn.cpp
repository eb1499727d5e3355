#include "sagerec/hgnn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <unordered_set>

#include "sagerec/error.hpp"
#include "sagerec/rng.hpp"

namespace sagerec {

namespace {

constexpr std::uint64_t kTagInit = 0x31;
constexpr std::uint64_t kTagSplit = 0x32;
constexpr std::uint64_t kTagEpoch = 0x33;
constexpr std::uint64_t kTagNeg = 0x34;
constexpr std::uint64_t kTagSample = 0x35;
constexpr std::uint64_t kTagEval = 0x36;
constexpr std::uint64_t kTagNonEdge = 0x37;

// Graph plus an optional unseen node overlaid on top. The overlay makes the
// new node visible from both endpoints of its edges so a forward pass is
// indistinguishable from one on a graph that really contains it.
struct Access {
  const HeteroGraph* g = nullptr;
  const Matrix* feats = nullptr;
  bool overlay = false;
  int new_index = -1;
  ItemId new_id = -1;
  const std::vector<double>* new_feats = nullptr;
  std::vector<std::vector<int>> new_nbrs;  // per relation, sorted node indices

  int n_relations() const { return g->n_relations(); }

  ItemId id_of(int v) const {
    return (overlay && v == new_index) ? new_id : g->item_id(v);
  }

  const double* feat_row(int v) const {
    return (overlay && v == new_index) ? new_feats->data() : feats->row(v);
  }

  void neighbors(int v, int r, std::vector<int>& out) const {
    out.clear();
    if (overlay && v == new_index) {
      out = new_nbrs[r];
      return;
    }
    auto span = g->neighbors(v, r);
    out.assign(span.begin(), span.end());
    if (overlay && std::binary_search(new_nbrs[r].begin(), new_nbrs[r].end(), v))
      out.push_back(new_index);
  }
};

// fanout-smallest hash keys over item ids: a uniform subset that does not
// depend on node indexing, so identically wired nodes sample identically
std::vector<int> select_neighbors(const Access& a, const std::vector<int>& nbrs, int fanout,
                                  std::uint64_t layer_seed) {
  std::vector<int> sel;
  if (static_cast<int>(nbrs.size()) <= fanout) {
    sel = nbrs;
  } else {
    std::vector<std::pair<std::uint64_t, int>> keyed;
    keyed.reserve(nbrs.size());
    for (int u : nbrs)
      keyed.emplace_back(mix64(layer_seed, static_cast<std::uint64_t>(a.id_of(u))), u);
    std::nth_element(keyed.begin(), keyed.begin() + fanout - 1, keyed.end());
    sel.reserve(fanout);
    for (int i = 0; i < fanout; ++i) sel.push_back(keyed[i].second);
  }
  // canonical aggregation order
  std::sort(sel.begin(), sel.end(), [&](int x, int y) { return a.id_of(x) < a.id_of(y); });
  return sel;
}

struct ForwardCache {
  int n_layers = 0;
  std::vector<std::vector<int>> nodes;               // per level 0..L
  std::vector<std::unordered_map<int, int>> pos;     // node -> row per level
  std::vector<Matrix> h;                             // 0..L
  std::vector<Matrix> pre;                           // [k-1] preactivation of layer k
  std::vector<Matrix> agg;                           // [k-1] aggregated neighbor input
  std::vector<std::vector<std::vector<std::vector<int>>>> samples;  // [k-1][row][rel]
};

void forward_pass(const Access& a, const HgnnParams& params, const std::vector<int>& targets,
                  const std::vector<int>& fanouts, std::uint64_t seed, ForwardCache& c) {
  const int L = params.n_layers();
  if (static_cast<int>(fanouts.size()) != L)
    throw DimensionError("hgnn forward: fanouts length != n_layers");
  c.n_layers = L;
  c.nodes.assign(L + 1, {});
  c.pos.assign(L + 1, {});
  c.samples.assign(L, {});
  c.h.assign(L + 1, {});
  c.pre.assign(L, {});
  c.agg.assign(L, {});

  auto add_node = [&](int level, int v) {
    auto [it, inserted] = c.pos[level].emplace(v, static_cast<int>(c.nodes[level].size()));
    if (inserted) c.nodes[level].push_back(v);
    return it->second;
  };
  for (int t : targets) add_node(L, t);

  // plan sampled neighborhoods top-down
  std::vector<int> nbrs;
  for (int k = L; k >= 1; --k) {
    const std::uint64_t layer_seed = mix64(seed, static_cast<std::uint64_t>(k));
    c.samples[k - 1].resize(c.nodes[k].size());
    for (std::size_t i = 0; i < c.nodes[k].size(); ++i) {
      const int v = c.nodes[k][i];
      add_node(k - 1, v);
      c.samples[k - 1][i].resize(a.n_relations());
      for (int r = 0; r < a.n_relations(); ++r) {
        a.neighbors(v, r, nbrs);
        if (nbrs.empty()) continue;
        c.samples[k - 1][i][r] = select_neighbors(a, nbrs, fanouts[k - 1], layer_seed);
        for (int u : c.samples[k - 1][i][r]) add_node(k - 1, u);
      }
    }
  }

  // level-0 representations are the input features
  const int d_text = params.w.empty() ? 0 : params.w[0].cols / 2;
  c.h[0] = Matrix(static_cast<int>(c.nodes[0].size()), d_text);
  for (std::size_t i = 0; i < c.nodes[0].size(); ++i) {
    const double* src = a.feat_row(c.nodes[0][i]);
    std::copy(src, src + d_text, c.h[0].row(static_cast<int>(i)));
  }

  std::vector<double> nvec, mean, concat;
  for (int k = 1; k <= L; ++k) {
    const Matrix& w = params.w[k - 1];
    const Matrix& bias = params.b[k - 1];
    const int d_in = w.cols / 2;
    const int d_out = w.rows;
    const int rows = static_cast<int>(c.nodes[k].size());
    c.pre[k - 1] = Matrix(rows, d_out);
    c.agg[k - 1] = Matrix(rows, d_in);
    c.h[k] = Matrix(rows, d_out);
    nvec.resize(d_in);
    mean.resize(d_in);
    concat.resize(2 * d_in);
    for (int i = 0; i < rows; ++i) {
      const int v = c.nodes[k][i];
      std::fill(nvec.begin(), nvec.end(), 0.0);
      int active_relations = 0;
      for (int r = 0; r < a.n_relations(); ++r) {
        const auto& sel = c.samples[k - 1][i][r];
        if (sel.empty()) continue;
        ++active_relations;
        std::fill(mean.begin(), mean.end(), 0.0);
        for (int u : sel) {
          const double* hu = c.h[k - 1].row(c.pos[k - 1].at(u));
          for (int d = 0; d < d_in; ++d) mean[d] += hu[d];
        }
        const double inv = 1.0 / static_cast<double>(sel.size());
        for (int d = 0; d < d_in; ++d) nvec[d] += mean[d] * inv;
      }
      if (active_relations > 0) {
        const double inv = 1.0 / static_cast<double>(active_relations);
        for (int d = 0; d < d_in; ++d) nvec[d] *= inv;
      }
      const double* self = c.h[k - 1].row(c.pos[k - 1].at(v));
      std::copy(self, self + d_in, concat.begin());
      std::copy(nvec.begin(), nvec.end(), concat.begin() + d_in);
      std::copy(nvec.begin(), nvec.end(), c.agg[k - 1].row(i));
      double* p = c.pre[k - 1].row(i);
      double* hv = c.h[k].row(i);
      for (int j = 0; j < d_out; ++j) {
        double s = bias.at(0, j);
        const double* wrow = w.row(j);
        for (int d = 0; d < 2 * d_in; ++d) s += wrow[d] * concat[d];
        p[j] = s;
        hv[j] = (k < L && s < 0.0) ? 0.0 : s;  // ReLU except the final layer
      }
    }
  }
}

// d(loss)/d(h^L rows) given d(loss)/d(normalized rows)
void normalize_backward(const Matrix& h_top, const Matrix& dz, Matrix& dh) {
  dh = Matrix(h_top.rows, h_top.cols);
  for (int i = 0; i < h_top.rows; ++i) {
    const double* h = h_top.row(i);
    const double* g = dz.row(i);
    double* out = dh.row(i);
    const double n = norm2(h, h_top.cols);
    if (n == 0.0) continue;  // zero rows pass through normalization unchanged
    double zdot = 0.0;
    for (int j = 0; j < h_top.cols; ++j) zdot += (h[j] / n) * g[j];
    for (int j = 0; j < h_top.cols; ++j) out[j] = (g[j] - (h[j] / n) * zdot) / n;
  }
}

void backward_pass(const Access& a, const HgnnParams& params, const ForwardCache& c,
                   const Matrix& d_top, HgnnGrads& grads) {
  (void)a;
  const int L = c.n_layers;
  Matrix g_cur = d_top;  // aligned with c.nodes[L]
  std::vector<double> gp, da;
  for (int k = L; k >= 1; --k) {
    const Matrix& w = params.w[k - 1];
    const int d_in = w.cols / 2;
    const int d_out = w.rows;
    Matrix g_prev(static_cast<int>(c.nodes[k - 1].size()), d_in);
    gp.resize(d_out);
    da.resize(2 * d_in);
    for (std::size_t i = 0; i < c.nodes[k].size(); ++i) {
      const int v = c.nodes[k][i];
      const double* gin = g_cur.row(static_cast<int>(i));
      const double* pre = c.pre[k - 1].row(static_cast<int>(i));
      bool any = false;
      for (int j = 0; j < d_out; ++j) {
        gp[j] = (k < L && pre[j] < 0.0) ? 0.0 : gin[j];
        any = any || gp[j] != 0.0;
      }
      if (!any) continue;
      const double* self = c.h[k - 1].row(c.pos[k - 1].at(v));
      const double* agg = c.agg[k - 1].row(static_cast<int>(i));
      double* dbrow = grads.db[k - 1].row(0);
      for (int j = 0; j < d_out; ++j) {
        if (gp[j] == 0.0) continue;
        dbrow[j] += gp[j];
        double* dwrow = grads.dw[k - 1].row(j);
        for (int d = 0; d < d_in; ++d) {
          dwrow[d] += gp[j] * self[d];
          dwrow[d_in + d] += gp[j] * agg[d];
        }
      }
      std::fill(da.begin(), da.end(), 0.0);
      for (int j = 0; j < d_out; ++j) {
        if (gp[j] == 0.0) continue;
        const double* wrow = w.row(j);
        for (int d = 0; d < 2 * d_in; ++d) da[d] += gp[j] * wrow[d];
      }
      // self path
      {
        double* dst = g_prev.row(c.pos[k - 1].at(v));
        for (int d = 0; d < d_in; ++d) dst[d] += da[d];
      }
      // aggregation path
      int active_relations = 0;
      for (const auto& sel : c.samples[k - 1][i])
        if (!sel.empty()) ++active_relations;
      if (active_relations == 0) continue;
      for (const auto& sel : c.samples[k - 1][i]) {
        if (sel.empty()) continue;
        const double coeff = 1.0 / (static_cast<double>(active_relations) *
                                    static_cast<double>(sel.size()));
        for (int u : sel) {
          double* dst = g_prev.row(c.pos[k - 1].at(u));
          for (int d = 0; d < d_in; ++d) dst[d] += coeff * da[d_in + d];
        }
      }
    }
    if (k == 1) break;  // level-0 inputs are constants
    g_cur = std::move(g_prev);
  }
}

std::vector<int> unique_targets(const std::vector<int>& targets) {
  std::vector<int> out;
  std::unordered_set<int> seen;
  for (int t : targets)
    if (seen.insert(t).second) out.push_back(t);
  return out;
}

double relu_hinge(double margin_term) { return margin_term > 0.0 ? margin_term : 0.0; }

}  // namespace

void HgnnConfig::validate() const {
  if (n_layers < 1) throw ValidationError("hgnn config: n_layers must be >= 1");
  if (hidden_dim < 1 || out_dim < 1) throw ValidationError("hgnn config: dims must be >= 1");
  if (static_cast<int>(fanouts.size()) != n_layers)
    throw ValidationError("hgnn config: fanouts length must equal n_layers");
  for (int f : fanouts)
    if (f < 1) throw ValidationError("hgnn config: fanouts must be >= 1");
  if (margin <= 0.0) throw ValidationError("hgnn config: margin must be > 0");
  if (negatives_per_positive < 1)
    throw ValidationError("hgnn config: negatives_per_positive must be >= 1");
  if (epochs < 0) throw ValidationError("hgnn config: epochs must be >= 0");
  if (batch_size < 1) throw ValidationError("hgnn config: batch_size must be >= 1");
  if (lr < 0.0) throw ValidationError("hgnn config: lr must be >= 0");
  if (val_fraction < 0.0 || val_fraction >= 1.0)
    throw ValidationError("hgnn config: val_fraction must be in [0, 1)");
}

HgnnParams HgnnParams::init(int d_text, const HgnnConfig& cfg) {
  cfg.validate();
  if (d_text < 1) throw ValidationError("hgnn init: d_text must be >= 1");
  HgnnParams p;
  int d_in = d_text;
  for (int k = 1; k <= cfg.n_layers; ++k) {
    const int d_out = (k == cfg.n_layers) ? cfg.out_dim : cfg.hidden_dim;
    Matrix w(d_out, 2 * d_in);
    const double bound = std::sqrt(6.0 / static_cast<double>(2 * d_in + d_out));
    Rng rng(mix64(cfg.seed, kTagInit, static_cast<std::uint64_t>(k)));
    for (double& x : w.data) x = (rng.uniform01() * 2.0 - 1.0) * bound;
    p.w.push_back(std::move(w));
    p.b.emplace_back(1, d_out);
    d_in = d_out;
  }
  return p;
}

std::vector<double> HgnnParams::to_vector() const {
  std::vector<double> flat;
  for (int k = 0; k < n_layers(); ++k) {
    flat.insert(flat.end(), w[k].data.begin(), w[k].data.end());
    flat.insert(flat.end(), b[k].data.begin(), b[k].data.end());
  }
  return flat;
}

void HgnnParams::from_vector(const std::vector<double>& flat) {
  std::size_t pos = 0;
  for (int k = 0; k < n_layers(); ++k) {
    std::copy(flat.begin() + pos, flat.begin() + pos + w[k].data.size(), w[k].data.begin());
    pos += w[k].data.size();
    std::copy(flat.begin() + pos, flat.begin() + pos + b[k].data.size(), b[k].data.begin());
    pos += b[k].data.size();
  }
  if (pos != flat.size()) throw DimensionError("hgnn params: flat vector size mismatch");
}

HgnnGrads HgnnGrads::zeros_like(const HgnnParams& p) {
  HgnnGrads g;
  for (int k = 0; k < p.n_layers(); ++k) {
    g.dw.emplace_back(p.w[k].rows, p.w[k].cols);
    g.db.emplace_back(1, p.b[k].cols);
  }
  return g;
}

const std::vector<double>& ItemEmbeddingStore::get(ItemId id) const {
  auto it = vectors_.find(id);
  if (it == vectors_.end())
    throw LookupError("no stored embedding for item " + std::to_string(id));
  return it->second;
}

void ItemEmbeddingStore::put(ItemId id, std::vector<double> v) {
  if (static_cast<int>(v.size()) != dim_)
    throw DimensionError("embedding store: vector dim " + std::to_string(v.size()) +
                         " != " + std::to_string(dim_));
  const double n = norm2(v);
  if (n != 0.0 && std::abs(n - 1.0) > 1e-6)
    throw ValidationError("embedding store: vector norm " + std::to_string(n) +
                          " is neither 0 nor 1");
  auto it = vectors_.find(id);
  if (it == vectors_.end()) {
    vectors_.emplace(id, std::move(v));
    order_.push_back(id);
  } else {
    it->second = std::move(v);
  }
}

void ItemEmbeddingStore::save(std::ostream& out) const {
  out << "d=" << dim_ << " n=" << order_.size() << " snapshot=" << snapshot_ << '\n';
  char buf[32];
  for (ItemId id : order_) {
    out << id << '\t';
    const auto& v = vectors_.at(id);
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) out << ',';
      std::snprintf(buf, sizeof(buf), "%.17g", v[i]);
      out << buf;
    }
    out << '\n';
  }
}

ItemEmbeddingStore ItemEmbeddingStore::load(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing embedding store header", 1);
  int d = 0;
  long long n = 0;
  std::size_t snap_pos = line.find("snapshot=");
  if (std::sscanf(line.c_str(), "d=%d n=%lld", &d, &n) != 2 || snap_pos == std::string::npos)
    throw ParseError("bad embedding store header '" + line + "'", 1);
  ItemEmbeddingStore store(d, line.substr(snap_pos + 9));
  int lineno = 1;
  for (long long i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw ParseError("truncated embedding store", lineno + 1);
    ++lineno;
    std::size_t tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("bad embedding line", lineno);
    ItemId id = std::stoll(line.substr(0, tab));
    std::vector<double> v;
    v.reserve(d);
    std::size_t start = tab + 1;
    while (start <= line.size()) {
      std::size_t comma = line.find(',', start);
      std::string tok = line.substr(start, comma == std::string::npos ? std::string::npos
                                                                      : comma - start);
      v.push_back(std::strtod(tok.c_str(), nullptr));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    store.put(id, std::move(v));
  }
  return store;
}

Matrix hgnn_forward(const HeteroGraph& graph, const Matrix& features, const HgnnParams& params,
                    const std::vector<ItemId>& targets, const std::vector<int>& fanouts,
                    std::uint64_t seed) {
  if (features.rows != graph.n_nodes())
    throw DimensionError("hgnn forward: feature rows != graph nodes");
  if (!params.w.empty() && features.cols != params.w[0].cols / 2)
    throw DimensionError("hgnn forward: feature dim != layer-0 input dim");
  Access a;
  a.g = &graph;
  a.feats = &features;
  std::vector<int> target_nodes;
  target_nodes.reserve(targets.size());
  for (ItemId id : targets) target_nodes.push_back(graph.node_of(id));

  ForwardCache c;
  forward_pass(a, params, unique_targets(target_nodes), fanouts, seed, c);
  Matrix top = l2_normalize_rows(c.h[params.n_layers()]);
  Matrix out(static_cast<int>(target_nodes.size()), params.out_dim());
  for (std::size_t i = 0; i < target_nodes.size(); ++i) {
    const double* src = top.row(c.pos[params.n_layers()].at(target_nodes[i]));
    std::copy(src, src + out.cols, out.row(static_cast<int>(i)));
  }
  return out;
}

MarginLossResult margin_loss(const std::vector<double>& z_query, const std::vector<double>& z_pos,
                             const std::vector<double>& z_neg, double margin) {
  if (z_query.size() != z_pos.size() || z_query.size() != z_neg.size())
    throw DimensionError("margin_loss: vector dims disagree");
  MarginLossResult res;
  const std::size_t d = z_query.size();
  res.d_query.assign(d, 0.0);
  res.d_pos.assign(d, 0.0);
  res.d_neg.assign(d, 0.0);
  const double term = dot(z_query, z_neg) - dot(z_query, z_pos) + margin;
  res.loss = relu_hinge(term);
  if (term > 0.0) {
    for (std::size_t i = 0; i < d; ++i) {
      res.d_query[i] = z_neg[i] - z_pos[i];
      res.d_pos[i] = -z_query[i];
      res.d_neg[i] = z_query[i];
    }
  }
  return res;
}

double hgnn_batch_loss(const HeteroGraph& graph, const Matrix& features, const HgnnParams& params,
                       const std::vector<std::array<int, 3>>& triples, double margin,
                       const std::vector<int>& fanouts, std::uint64_t seed, HgnnGrads* grads) {
  if (triples.empty()) return 0.0;
  Access a;
  a.g = &graph;
  a.feats = &features;

  std::vector<int> flat;
  flat.reserve(triples.size() * 3);
  for (const auto& t : triples) {
    flat.push_back(t[0]);
    flat.push_back(t[1]);
    flat.push_back(t[2]);
  }
  ForwardCache c;
  forward_pass(a, params, unique_targets(flat), fanouts, seed, c);
  const int L = params.n_layers();
  Matrix z = l2_normalize_rows(c.h[L]);
  const auto& pos = c.pos[L];
  const int d = z.cols;

  Matrix dz(z.rows, z.cols);
  const double inv_m = 1.0 / static_cast<double>(triples.size());
  double loss = 0.0;
  for (const auto& t : triples) {
    const int iq = pos.at(t[0]), ip = pos.at(t[1]), in = pos.at(t[2]);
    const double* zq = z.row(iq);
    const double* zp = z.row(ip);
    const double* zn = z.row(in);
    const double term = dot(zq, zn, d) - dot(zq, zp, d) + margin;
    if (term <= 0.0) continue;
    loss += term;
    if (!grads) continue;
    double* gq = dz.row(iq);
    double* gp = dz.row(ip);
    double* gn = dz.row(in);
    for (int j = 0; j < d; ++j) {
      gq[j] += (zn[j] - zp[j]) * inv_m;
      gp[j] -= zq[j] * inv_m;
      gn[j] += zq[j] * inv_m;
    }
  }
  loss *= inv_m;
  if (grads) {
    Matrix d_top;
    normalize_backward(c.h[L], dz, d_top);
    backward_pass(a, params, c, d_top, *grads);
  }
  return loss;
}

namespace {

double pairwise_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  if (pos.empty() || neg.empty()) return std::nan("");
  double wins = 0.0;
  for (double p : pos)
    for (double n : neg) {
      if (p > n)
        wins += 1.0;
      else if (p == n)
        wins += 0.5;
    }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

std::vector<std::pair<int, int>> sample_non_edges(const HeteroGraph& graph, std::size_t count,
                                                  std::uint64_t seed) {
  std::vector<std::pair<int, int>> out;
  std::unordered_set<std::uint64_t> seen;
  Rng rng(seed);
  const int n = graph.n_nodes();
  std::size_t attempts = 0;
  const std::size_t max_attempts = 1000 * (count + 1);
  while (out.size() < count && attempts < max_attempts) {
    ++attempts;
    int u = static_cast<int>(rng.below(n));
    int v = static_cast<int>(rng.below(n));
    if (u == v) continue;
    if (u > v) std::swap(u, v);
    std::uint64_t key = (static_cast<std::uint64_t>(u) << 32) | static_cast<std::uint32_t>(v);
    if (seen.count(key)) continue;
    if (graph.has_edge(u, v)) continue;
    seen.insert(key);
    out.emplace_back(u, v);
  }
  return out;
}

}  // namespace

HgnnTrainResult train_hgnn(const HeteroGraph& graph, const Matrix& features,
                           const HgnnConfig& cfg) {
  cfg.validate();
  if (graph.n_edges() == 0) throw ValidationError("train_hgnn: graph has no edges");
  if (features.rows != graph.n_nodes() || features.cols != graph.d_text())
    throw DimensionError("train_hgnn: feature matrix shape does not match graph");

  auto [train_graph, val_edges] = edge_split(graph, cfg.val_fraction, mix64(cfg.seed, kTagSplit));

  HgnnTrainResult result;
  result.params = HgnnParams::init(graph.d_text(), cfg);
  result.held_out_edges = val_edges;

  std::vector<AdamState> w_state, b_state;
  for (int k = 0; k < result.params.n_layers(); ++k) {
    w_state.push_back(AdamState::for_param(result.params.w[k], cfg.lr));
    b_state.push_back(AdamState::for_param(result.params.b[k], cfg.lr));
  }

  std::vector<GraphEdge> edges = train_graph.edge_list();
  if (edges.empty()) throw ValidationError("train_hgnn: no edges left after validation split");

  // fixed non-edge pool so the AUC metric is comparable across epochs
  auto neg_pairs = sample_non_edges(graph, val_edges.size(), mix64(cfg.seed, kTagNonEdge));
  std::vector<ItemId> eval_ids;
  {
    std::unordered_set<int> nodes;
    for (const GraphEdge& e : val_edges) {
      nodes.insert(e.src);
      nodes.insert(e.dst);
    }
    for (const auto& [u, v] : neg_pairs) {
      nodes.insert(u);
      nodes.insert(v);
    }
    for (int v : nodes) eval_ids.push_back(graph.item_id(v));
    std::sort(eval_ids.begin(), eval_ids.end());
  }

  const int n_nodes = train_graph.n_nodes();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng epoch_rng(mix64(cfg.seed, kTagEpoch, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = edges.size(); i > 1; --i)
      std::swap(edges[i - 1], edges[epoch_rng.below(i)]);

    double loss_sum = 0.0;
    std::size_t triple_count = 0;
    const std::size_t n_batches = (edges.size() + cfg.batch_size - 1) / cfg.batch_size;
    for (std::size_t bi = 0; bi < n_batches; ++bi) {
      const std::size_t lo = bi * cfg.batch_size;
      const std::size_t hi = std::min(edges.size(), lo + cfg.batch_size);
      Rng neg_rng(mix64(mix64(cfg.seed, kTagNeg), static_cast<std::uint64_t>(epoch),
                        static_cast<std::uint64_t>(bi)));
      std::vector<std::array<int, 3>> triples;
      triples.reserve((hi - lo) * cfg.negatives_per_positive);
      for (std::size_t i = lo; i < hi; ++i) {
        int q = edges[i].src, p = edges[i].dst;
        if (neg_rng.below(2) == 1) std::swap(q, p);
        for (int j = 0; j < cfg.negatives_per_positive; ++j) {
          int n;
          do {
            n = static_cast<int>(neg_rng.below(n_nodes));
          } while (n == p);
          triples.push_back({q, p, n});
        }
      }
      HgnnGrads grads = HgnnGrads::zeros_like(result.params);
      const std::uint64_t sample_seed = mix64(mix64(cfg.seed, kTagSample),
                                              static_cast<std::uint64_t>(epoch),
                                              static_cast<std::uint64_t>(bi));
      const double loss = hgnn_batch_loss(train_graph, features, result.params, triples,
                                          cfg.margin, cfg.fanouts, sample_seed, &grads);
      for (int k = 0; k < result.params.n_layers(); ++k) {
        adam_step(result.params.w[k], grads.dw[k], w_state[k]);
        adam_step(result.params.b[k], grads.db[k], b_state[k]);
      }
      loss_sum += loss * static_cast<double>(triples.size());
      triple_count += triples.size();
    }

    HgnnEpochMetrics m;
    m.mean_loss = triple_count ? loss_sum / static_cast<double>(triple_count) : 0.0;
    m.val_auc = std::nan("");
    if (!val_edges.empty() && !neg_pairs.empty()) {
      Matrix emb = hgnn_forward(train_graph, features, result.params, eval_ids, cfg.fanouts,
                                mix64(cfg.seed, kTagEval));
      std::unordered_map<int, int> row_of;
      for (std::size_t i = 0; i < eval_ids.size(); ++i)
        row_of[train_graph.node_of(eval_ids[i])] = static_cast<int>(i);
      std::vector<double> pos_scores, neg_scores;
      for (const GraphEdge& e : val_edges)
        pos_scores.push_back(dot(emb.row(row_of.at(e.src)), emb.row(row_of.at(e.dst)), emb.cols));
      for (const auto& [u, v] : neg_pairs)
        neg_scores.push_back(dot(emb.row(row_of.at(u)), emb.row(row_of.at(v)), emb.cols));
      m.val_auc = pairwise_auc(pos_scores, neg_scores);
    }
    result.history.push_back(m);
  }
  return result;
}

std::vector<double> infer_new_item(const HeteroGraph& graph, const Matrix& features,
                                   const HgnnParams& params, const std::string& item_type,
                                   ItemId new_id, const std::vector<double>& new_features,
                                   const std::vector<ItemId>& edges,
                                   const std::vector<int>& fanouts, std::uint64_t seed) {
  if (graph.has_node(new_id))
    throw ValidationError("infer_new_item: item " + std::to_string(new_id) +
                          " is already in the graph");
  if (features.rows != graph.n_nodes())
    throw DimensionError("infer_new_item: feature rows != graph nodes");
  if (static_cast<int>(new_features.size()) != graph.d_text())
    throw DimensionError("infer_new_item: new item feature dim != d_text");
  bool type_known = false;
  for (const std::string& t : graph.type_names()) type_known = type_known || t == item_type;
  if (!type_known)
    throw ValidationError("infer_new_item: unknown top-level type '" + item_type + "'");

  Access a;
  a.g = &graph;
  a.feats = &features;
  a.overlay = true;
  a.new_index = graph.n_nodes();
  a.new_id = new_id;
  a.new_feats = &new_features;
  a.new_nbrs.assign(graph.n_relations(), {});
  for (ItemId nbr : edges) {
    if (nbr == new_id) throw ValidationError("infer_new_item: self edge");
    const int v = graph.node_of(nbr);  // throws LookupError for unknown nodes
    const int rel = graph.relation_index(item_type, graph.node_type(v));
    a.new_nbrs[rel].push_back(v);
  }
  for (auto& lst : a.new_nbrs) {
    std::sort(lst.begin(), lst.end());
    if (std::adjacent_find(lst.begin(), lst.end()) != lst.end())
      throw ValidationError("infer_new_item: duplicate edge");
  }

  ForwardCache c;
  forward_pass(a, params, {a.new_index}, fanouts, seed, c);
  Matrix top = l2_normalize_rows(c.h[params.n_layers()]);
  const double* row = top.row(c.pos[params.n_layers()].at(a.new_index));
  return std::vector<double>(row, row + top.cols);
}

ItemEmbeddingStore export_embeddings(const HeteroGraph& graph, const Matrix& features,
                                     const HgnnParams& params, const std::vector<int>& fanouts,
                                     std::uint64_t seed, const std::string& snapshot_id) {
  std::vector<ItemId> ids;
  ids.reserve(graph.n_nodes());
  for (int v = 0; v < graph.n_nodes(); ++v) ids.push_back(graph.item_id(v));
  Matrix emb = hgnn_forward(graph, features, params, ids, fanouts, seed);
  ItemEmbeddingStore store(params.out_dim(), snapshot_id);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double* row = emb.row(static_cast<int>(i));
    store.put(ids[i], std::vector<double>(row, row + emb.cols));
  }
  return store;
}

}  // namespace sagerec
