#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sagerec/numerics.hpp"

namespace sagerec {

using ItemId = std::int64_t;
using UserId = std::int64_t;
using Timestamp = std::int64_t;

// An item type, optionally nested one level under a parent type
// (episodes under shows). No deeper nesting.
struct ItemType {
  std::string name;
  std::string parent_type;  // empty = top level

  bool top_level() const { return parent_type.empty(); }
};

// show/audiobook at the top level, episode nested under show.
std::vector<ItemType> default_item_types();

struct ItemRecord {
  ItemId item_id = 0;
  std::string item_type;
  std::optional<ItemId> parent_id;
  std::vector<double> features;  // d_text, identical for every item
};

// One (user, item, timestamp) consumption record.
struct InteractionEvent {
  UserId user_id = 0;
  ItemId item_id = 0;
  Timestamp timestamp = 0;

  bool operator==(const InteractionEvent&) const = default;
};

// Item catalog with a closed type set. Immutable once built; lookups are
// O(1) by item id.
class Catalog {
 public:
  Catalog() : Catalog(default_item_types()) {}
  explicit Catalog(std::vector<ItemType> types);
  Catalog(std::vector<ItemType> types, std::vector<ItemRecord> records);

  // Incremental insert; the parent, when required, must already be present.
  void add(ItemRecord rec);

  const std::vector<ItemRecord>& items() const { return items_; }
  const std::vector<ItemType>& types() const { return types_; }
  std::size_t size() const { return items_.size(); }
  int d_text() const { return d_text_; }

  bool has(ItemId id) const { return index_.count(id) != 0; }
  const ItemRecord& get(ItemId id) const;
  int index_of(ItemId id) const;  // position in items()

  const ItemType& type_named(const std::string& name) const;
  bool is_top_level(ItemId id) const;
  // Episodes resolve to their show; top-level items resolve to themselves.
  ItemId top_level_id(ItemId id) const;
  // Sorted names of top-level types in the type set.
  std::vector<std::string> top_level_type_names() const;

 private:
  void validate_and_insert(ItemRecord rec, bool parent_must_exist);

  std::vector<ItemType> types_;
  std::unordered_map<std::string, int> type_index_;
  std::vector<ItemRecord> items_;
  std::unordered_map<ItemId, int> index_;
  int d_text_ = -1;  // -1 until the first item fixes it
};

// interactions file: one `user_id<TAB>item_id<TAB>timestamp` per line.
std::vector<InteractionEvent> parse_interactions(std::istream& in);
void serialize_interactions(const std::vector<InteractionEvent>& events, std::ostream& out);

// catalog file: `item_id<TAB>item_type<TAB>parent_id<TAB>features` per line,
// parent_id may be empty, features are comma-separated decimals.
Catalog parse_catalog(std::istream& in, std::vector<ItemType> types = default_item_types());
void serialize_catalog(const Catalog& catalog, std::ostream& out);

// Text-feature source. "precomputed" returns catalog features verbatim;
// "synthetic-topic" embeds a per-item topic mixture into d_text dims plus
// Gaussian noise. Mixtures may be supplied explicitly; otherwise they are
// derived deterministically from (seed, item_id).
struct TextFeatureProvider {
  enum class Kind { Precomputed, SyntheticTopic };
  Kind kind = Kind::Precomputed;
  int n_topics = 0;
  int d_text = 0;
  double noise_std = 0.0;
  std::uint64_t seed = 0;
  std::unordered_map<ItemId, std::vector<double>> mixtures;

  static TextFeatureProvider precomputed() { return {}; }
  static TextFeatureProvider synthetic_topic(int n_topics, int d_text, double noise_std,
                                             std::uint64_t seed);
};

// Row i holds the feature vector of catalog item i (catalog order).
Matrix text_features(const Catalog& catalog, const TextFeatureProvider& provider);

// Topic mixture with a fixed 0.7 dominant weight and the remainder spread
// evenly over the other topics.
std::vector<double> topic_mixture(int n_topics, int dominant);

struct SyntheticConfig {
  int n_users = 2000;
  // top-level type name -> item count; order fixes item id assignment
  std::vector<std::pair<std::string, int>> items_per_type = {{"show", 300}, {"audiobook", 60}};
  int n_topics = 8;
  int d_text = 16;
  double noise_std = 0.1;
  int events_per_user = 30;
  int horizon_days = 104;
  std::uint64_t seed = 42;

  void validate() const;
};

// flat `key = value` text file
SyntheticConfig parse_synthetic_config(std::istream& in);
void serialize_synthetic_config(const SyntheticConfig& cfg, std::ostream& out);
// single-key update; validation happens when the config is used
void apply_synthetic_config_key(SyntheticConfig& cfg, const std::string& key,
                                const std::string& value);

// Planted structure behind a generated dataset, for test oracles.
struct SyntheticTruth {
  std::vector<int> item_dominant_topic;  // catalog order
  std::vector<int> user_dominant_topic;  // user id order
};

// Seeded generator: items draw a dominant topic per type, users draw topic
// preferences shared across item types, events sample items proportionally
// to user-topic x item-topic affinity. Pure function of cfg.
std::pair<Catalog, std::vector<InteractionEvent>> generate_synthetic(
    const SyntheticConfig& cfg, SyntheticTruth* truth = nullptr);

}  // namespace sagerec
