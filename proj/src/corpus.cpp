#include "sagerec/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "sagerec/error.hpp"
#include "sagerec/rng.hpp"

namespace sagerec {

namespace {

// seed derivation tags
constexpr std::uint64_t kTagItemTopic = 0x11;
constexpr std::uint64_t kTagItemNoise = 0x12;
constexpr std::uint64_t kTagUserTopic = 0x21;
constexpr std::uint64_t kTagUserEvents = 0x22;

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t p = s.find(sep, start);
    if (p == std::string::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, p - start));
    start = p + 1;
  }
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::int64_t parse_i64(const std::string& s, const char* what, int line) {
  std::int64_t v = 0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || s.empty()) {
    throw ParseError(std::string("expected integer for ") + what + ", got '" + s + "'", line);
  }
  return v;
}

double parse_f64(const std::string& s, const char* what, int line) {
  if (s.empty()) throw ParseError(std::string("expected number for ") + what, line);
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || !std::isfinite(v)) {
    throw ParseError(std::string("expected finite number for ") + what + ", got '" + s + "'",
                     line);
  }
  return v;
}

void write_f64(std::ostream& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out << buf;
}

// mixture -> d_text dims: topic weights occupy the leading coordinates
void embed_mixture(const std::vector<double>& mixture, int d_text, double noise_std,
                   Rng& noise_rng, double* out) {
  for (int j = 0; j < d_text; ++j) {
    double base = j < static_cast<int>(mixture.size()) ? mixture[j] : 0.0;
    out[j] = base + (noise_std > 0.0 ? noise_std * noise_rng.normal() : 0.0);
  }
}

}  // namespace

std::vector<ItemType> default_item_types() {
  return {{"show", ""}, {"audiobook", ""}, {"episode", "show"}};
}

Catalog::Catalog(std::vector<ItemType> types) : types_(std::move(types)) {
  for (int i = 0; i < static_cast<int>(types_.size()); ++i) {
    const ItemType& t = types_[i];
    if (t.name.empty()) throw ValidationError("item type with empty name");
    if (!type_index_.emplace(t.name, i).second)
      throw ValidationError("duplicate item type '" + t.name + "'");
  }
  for (const ItemType& t : types_) {
    if (t.parent_type.empty()) continue;
    if (t.parent_type == t.name)
      throw ValidationError("item type '" + t.name + "' is its own parent");
    auto it = type_index_.find(t.parent_type);
    if (it == type_index_.end())
      throw ValidationError("item type '" + t.name + "' has unknown parent type '" +
                            t.parent_type + "'");
    if (!types_[it->second].parent_type.empty())
      throw ValidationError("item type '" + t.name + "' nests deeper than one level");
  }
}

Catalog::Catalog(std::vector<ItemType> types, std::vector<ItemRecord> records)
    : Catalog(std::move(types)) {
  // two-phase so a child may precede its parent in the record list
  for (ItemRecord& rec : records) validate_and_insert(std::move(rec), false);
  for (const ItemRecord& rec : items_) {
    if (!rec.parent_id) continue;
    const ItemType& ty = type_named(rec.item_type);
    auto it = index_.find(*rec.parent_id);
    if (it == index_.end())
      throw ValidationError("item " + std::to_string(rec.item_id) + " references missing parent " +
                            std::to_string(*rec.parent_id));
    if (items_[it->second].item_type != ty.parent_type)
      throw ValidationError("item " + std::to_string(rec.item_id) + " parent " +
                            std::to_string(*rec.parent_id) + " is not of type '" +
                            ty.parent_type + "'");
  }
}

void Catalog::add(ItemRecord rec) { validate_and_insert(std::move(rec), true); }

void Catalog::validate_and_insert(ItemRecord rec, bool parent_must_exist) {
  if (rec.item_id < 0) throw ValidationError("negative item id");
  auto ti = type_index_.find(rec.item_type);
  if (ti == type_index_.end())
    throw ValidationError("item " + std::to_string(rec.item_id) + " has unknown type '" +
                          rec.item_type + "'");
  const ItemType& ty = types_[ti->second];
  if (ty.top_level() && rec.parent_id)
    throw ValidationError("item " + std::to_string(rec.item_id) +
                          " of top-level type has a parent_id");
  if (!ty.top_level() && !rec.parent_id)
    throw ValidationError("item " + std::to_string(rec.item_id) + " of type '" + ty.name +
                          "' requires a parent_id");
  if (d_text_ >= 0 && static_cast<int>(rec.features.size()) != d_text_)
    throw ValidationError("item " + std::to_string(rec.item_id) + " feature dim " +
                          std::to_string(rec.features.size()) + " != d_text " +
                          std::to_string(d_text_));
  for (double f : rec.features)
    if (!std::isfinite(f))
      throw ValidationError("item " + std::to_string(rec.item_id) + " has non-finite feature");
  if (parent_must_exist && rec.parent_id) {
    auto it = index_.find(*rec.parent_id);
    if (it == index_.end())
      throw ValidationError("item " + std::to_string(rec.item_id) + " references missing parent " +
                            std::to_string(*rec.parent_id));
    if (items_[it->second].item_type != ty.parent_type)
      throw ValidationError("item " + std::to_string(rec.item_id) + " parent " +
                            std::to_string(*rec.parent_id) + " is not of type '" +
                            ty.parent_type + "'");
  }
  if (!index_.emplace(rec.item_id, static_cast<int>(items_.size())).second)
    throw ValidationError("duplicate item id " + std::to_string(rec.item_id));
  if (d_text_ < 0) d_text_ = static_cast<int>(rec.features.size());
  items_.push_back(std::move(rec));
}

const ItemRecord& Catalog::get(ItemId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw LookupError("unknown item " + std::to_string(id));
  return items_[it->second];
}

int Catalog::index_of(ItemId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw LookupError("unknown item " + std::to_string(id));
  return it->second;
}

const ItemType& Catalog::type_named(const std::string& name) const {
  auto it = type_index_.find(name);
  if (it == type_index_.end()) throw LookupError("unknown item type '" + name + "'");
  return types_[it->second];
}

bool Catalog::is_top_level(ItemId id) const { return type_named(get(id).item_type).top_level(); }

ItemId Catalog::top_level_id(ItemId id) const {
  const ItemRecord& rec = get(id);
  if (type_named(rec.item_type).top_level()) return id;
  return *rec.parent_id;
}

std::vector<std::string> Catalog::top_level_type_names() const {
  std::vector<std::string> out;
  for (const ItemType& t : types_)
    if (t.top_level()) out.push_back(t.name);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<InteractionEvent> parse_interactions(std::istream& in) {
  std::vector<InteractionEvent> events;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split(line, '\t');
    if (fields.size() != 3)
      throw ParseError("expected user<TAB>item<TAB>timestamp, got " +
                           std::to_string(fields.size()) + " field(s)",
                       lineno);
    InteractionEvent ev;
    ev.user_id = parse_i64(fields[0], "user_id", lineno);
    ev.item_id = parse_i64(fields[1], "item_id", lineno);
    ev.timestamp = parse_i64(fields[2], "timestamp", lineno);
    if (ev.user_id < 0) throw ValidationError("line " + std::to_string(lineno) + ": negative user id");
    if (ev.item_id < 0) throw ValidationError("line " + std::to_string(lineno) + ": negative item id");
    if (ev.timestamp < 0)
      throw ValidationError("line " + std::to_string(lineno) + ": negative timestamp");
    events.push_back(ev);
  }
  return events;
}

void serialize_interactions(const std::vector<InteractionEvent>& events, std::ostream& out) {
  for (const InteractionEvent& ev : events)
    out << ev.user_id << '\t' << ev.item_id << '\t' << ev.timestamp << '\n';
}

Catalog parse_catalog(std::istream& in, std::vector<ItemType> types) {
  std::vector<ItemRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split(line, '\t');
    if (fields.size() != 4)
      throw ParseError("expected item_id<TAB>item_type<TAB>parent_id<TAB>features, got " +
                           std::to_string(fields.size()) + " field(s)",
                       lineno);
    ItemRecord rec;
    rec.item_id = parse_i64(fields[0], "item_id", lineno);
    rec.item_type = fields[1];
    if (!fields[2].empty()) rec.parent_id = parse_i64(fields[2], "parent_id", lineno);
    if (!fields[3].empty()) {
      for (const std::string& f : split(fields[3], ','))
        rec.features.push_back(parse_f64(f, "feature", lineno));
    }
    records.push_back(std::move(rec));
  }
  return Catalog(std::move(types), std::move(records));
}

void serialize_catalog(const Catalog& catalog, std::ostream& out) {
  for (const ItemRecord& rec : catalog.items()) {
    out << rec.item_id << '\t' << rec.item_type << '\t';
    if (rec.parent_id) out << *rec.parent_id;
    out << '\t';
    for (std::size_t i = 0; i < rec.features.size(); ++i) {
      if (i) out << ',';
      write_f64(out, rec.features[i]);
    }
    out << '\n';
  }
}

TextFeatureProvider TextFeatureProvider::synthetic_topic(int n_topics, int d_text,
                                                         double noise_std, std::uint64_t seed) {
  TextFeatureProvider p;
  p.kind = Kind::SyntheticTopic;
  p.n_topics = n_topics;
  p.d_text = d_text;
  p.noise_std = noise_std;
  p.seed = seed;
  return p;
}

std::vector<double> topic_mixture(int n_topics, int dominant) {
  std::vector<double> m(n_topics, 0.0);
  if (n_topics == 1) {
    m[0] = 1.0;
    return m;
  }
  const double rest = 0.3 / (n_topics - 1);
  for (int k = 0; k < n_topics; ++k) m[k] = (k == dominant) ? 0.7 : rest;
  return m;
}

Matrix text_features(const Catalog& catalog, const TextFeatureProvider& provider) {
  const int n = static_cast<int>(catalog.size());
  if (provider.kind == TextFeatureProvider::Kind::Precomputed) {
    const int d = catalog.d_text();
    if (d <= 0) throw ValidationError("precomputed provider: catalog has no features");
    Matrix out(n, d);
    for (int i = 0; i < n; ++i) {
      const ItemRecord& rec = catalog.items()[i];
      if (static_cast<int>(rec.features.size()) != d)
        throw ValidationError("precomputed provider: item " + std::to_string(rec.item_id) +
                              " missing features");
      std::copy(rec.features.begin(), rec.features.end(), out.row(i));
    }
    return out;
  }
  if (provider.n_topics < 1 || provider.d_text < 1)
    throw ValidationError("synthetic-topic provider: n_topics and d_text must be >= 1");
  if (provider.d_text < provider.n_topics)
    throw ValidationError("synthetic-topic provider: d_text must be >= n_topics");
  Matrix out(n, provider.d_text);
  for (int i = 0; i < n; ++i) {
    const ItemId id = catalog.items()[i].item_id;
    std::vector<double> mixture;
    auto it = provider.mixtures.find(id);
    if (it != provider.mixtures.end()) {
      mixture = it->second;
      if (static_cast<int>(mixture.size()) != provider.n_topics)
        throw ValidationError("mixture dim mismatch for item " + std::to_string(id));
    } else {
      Rng topic_rng(mix64(provider.seed, kTagItemTopic, static_cast<std::uint64_t>(id)));
      mixture = topic_mixture(provider.n_topics,
                              static_cast<int>(topic_rng.below(provider.n_topics)));
    }
    Rng noise_rng(mix64(provider.seed, kTagItemNoise, static_cast<std::uint64_t>(id)));
    embed_mixture(mixture, provider.d_text, provider.noise_std, noise_rng, out.row(i));
  }
  return out;
}

void SyntheticConfig::validate() const {
  if (n_users < 1) throw ValidationError("synthetic config: n_users must be >= 1");
  if (items_per_type.empty()) throw ValidationError("synthetic config: items_per_type empty");
  for (const auto& [name, count] : items_per_type)
    if (count < 1)
      throw ValidationError("synthetic config: item count for '" + name + "' must be >= 1");
  if (n_topics < 1) throw ValidationError("synthetic config: n_topics must be >= 1");
  if (d_text < 1) throw ValidationError("synthetic config: d_text must be >= 1");
  if (d_text < n_topics) throw ValidationError("synthetic config: d_text must be >= n_topics");
  if (noise_std < 0) throw ValidationError("synthetic config: noise_std must be >= 0");
  if (events_per_user < 1) throw ValidationError("synthetic config: events_per_user must be >= 1");
  if (horizon_days < 1) throw ValidationError("synthetic config: horizon_days must be >= 1");
}

namespace {

void apply_synth_key_at(SyntheticConfig& cfg, const std::string& key, const std::string& value,
                        int lineno) {
  if (key == "n_users") {
    cfg.n_users = static_cast<int>(parse_i64(value, key.c_str(), lineno));
  } else if (key == "items_per_type") {
    // either a bare count applied to the default top-level types, or a
    // `type:count,type:count` list
    std::vector<std::pair<std::string, int>> parsed;
    if (value.find(':') == std::string::npos) {
      int count = static_cast<int>(parse_i64(value, key.c_str(), lineno));
      parsed = {{"show", count}, {"audiobook", count}};
    } else {
      for (const std::string& part : split(value, ',')) {
        auto kv = split(trim(part), ':');
        if (kv.size() != 2) throw ParseError("bad items_per_type entry '" + part + "'", lineno);
        parsed.emplace_back(trim(kv[0]),
                            static_cast<int>(parse_i64(trim(kv[1]), key.c_str(), lineno)));
      }
    }
    cfg.items_per_type = std::move(parsed);
  } else if (key == "n_topics") {
    cfg.n_topics = static_cast<int>(parse_i64(value, key.c_str(), lineno));
  } else if (key == "d_text") {
    cfg.d_text = static_cast<int>(parse_i64(value, key.c_str(), lineno));
  } else if (key == "noise_std") {
    cfg.noise_std = parse_f64(value, key.c_str(), lineno);
  } else if (key == "events_per_user") {
    cfg.events_per_user = static_cast<int>(parse_i64(value, key.c_str(), lineno));
  } else if (key == "horizon_days") {
    cfg.horizon_days = static_cast<int>(parse_i64(value, key.c_str(), lineno));
  } else if (key == "seed") {
    cfg.seed = static_cast<std::uint64_t>(parse_i64(value, key.c_str(), lineno));
  } else {
    throw ParseError("unknown synthetic config key '" + key + "'", lineno);
  }
}

}  // namespace

void apply_synthetic_config_key(SyntheticConfig& cfg, const std::string& key,
                                const std::string& value) {
  apply_synth_key_at(cfg, key, value, 0);
}

SyntheticConfig parse_synthetic_config(std::istream& in) {
  SyntheticConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos) throw ParseError("expected `key = value`", lineno);
    apply_synth_key_at(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)), lineno);
  }
  cfg.validate();
  return cfg;
}

void serialize_synthetic_config(const SyntheticConfig& cfg, std::ostream& out) {
  out << "n_users = " << cfg.n_users << '\n';
  out << "items_per_type = ";
  for (std::size_t i = 0; i < cfg.items_per_type.size(); ++i) {
    if (i) out << ',';
    out << cfg.items_per_type[i].first << ':' << cfg.items_per_type[i].second;
  }
  out << '\n';
  out << "n_topics = " << cfg.n_topics << '\n';
  out << "d_text = " << cfg.d_text << '\n';
  out << "noise_std = ";
  write_f64(out, cfg.noise_std);
  out << '\n';
  out << "events_per_user = " << cfg.events_per_user << '\n';
  out << "horizon_days = " << cfg.horizon_days << '\n';
  out << "seed = " << cfg.seed << '\n';
}

std::pair<Catalog, std::vector<InteractionEvent>> generate_synthetic(const SyntheticConfig& cfg,
                                                                     SyntheticTruth* truth) {
  cfg.validate();

  std::vector<ItemType> types = default_item_types();
  for (const auto& [name, _] : cfg.items_per_type) {
    bool known = false;
    for (const ItemType& t : types) known = known || (t.name == name && t.top_level());
    if (!known) throw ValidationError("items_per_type references unknown top-level type '" +
                                      name + "'");
  }

  Catalog catalog(types);
  std::vector<int> item_dominant;
  std::vector<std::vector<double>> item_mixture;
  ItemId next_id = 0;
  for (const auto& [type_name, count] : cfg.items_per_type) {
    for (int i = 0; i < count; ++i, ++next_id) {
      Rng topic_rng(mix64(cfg.seed, kTagItemTopic, static_cast<std::uint64_t>(next_id)));
      int dominant = static_cast<int>(topic_rng.below(cfg.n_topics));
      std::vector<double> mixture = topic_mixture(cfg.n_topics, dominant);
      ItemRecord rec;
      rec.item_id = next_id;
      rec.item_type = type_name;
      rec.features.resize(cfg.d_text);
      Rng noise_rng(mix64(cfg.seed, kTagItemNoise, static_cast<std::uint64_t>(next_id)));
      embed_mixture(mixture, cfg.d_text, cfg.noise_std, noise_rng, rec.features.data());
      catalog.add(std::move(rec));
      item_dominant.push_back(dominant);
      item_mixture.push_back(std::move(mixture));
    }
  }

  const int n_items = static_cast<int>(catalog.size());
  const std::int64_t horizon_seconds = static_cast<std::int64_t>(cfg.horizon_days) * 86400;
  std::vector<InteractionEvent> events;
  events.reserve(static_cast<std::size_t>(cfg.n_users) * cfg.events_per_user);
  std::vector<int> user_dominant(cfg.n_users);

  std::vector<double> cdf(n_items);
  for (UserId u = 0; u < cfg.n_users; ++u) {
    Rng pref_rng(mix64(cfg.seed, kTagUserTopic, static_cast<std::uint64_t>(u)));
    int dominant = static_cast<int>(pref_rng.below(cfg.n_topics));
    user_dominant[u] = dominant;
    std::vector<double> prefs = topic_mixture(cfg.n_topics, dominant);

    double total = 0.0;
    for (int i = 0; i < n_items; ++i) {
      total += dot(prefs, item_mixture[i]);
      cdf[i] = total;
    }

    Rng ev_rng(mix64(cfg.seed, kTagUserEvents, static_cast<std::uint64_t>(u)));
    for (int e = 0; e < cfg.events_per_user; ++e) {
      double r = ev_rng.uniform01() * total;
      int idx = static_cast<int>(std::lower_bound(cdf.begin(), cdf.end(), r) - cdf.begin());
      if (idx >= n_items) idx = n_items - 1;
      InteractionEvent ev;
      ev.user_id = u;
      ev.item_id = catalog.items()[idx].item_id;
      ev.timestamp = static_cast<Timestamp>(ev_rng.below(horizon_seconds));
      events.push_back(ev);
    }
  }

  if (truth) {
    truth->item_dominant_topic = std::move(item_dominant);
    truth->user_dominant_topic = std::move(user_dominant);
  }
  return {std::move(catalog), std::move(events)};
}

}  // namespace sagerec
