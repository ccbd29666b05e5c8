#pragma once

// Synthetic recommendation data. Each item carries one token per attribute
// field; each user has a hidden preference over attribute values. Histories
// are drawn in proportion to exp(affinity), positives come from the
// highest-affinity unseen items and fillers from the lower half, so relevance
// is recoverable from attribute co-occurrence with the history.

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "invarirank/layout.hpp"
#include "invarirank/scoring.hpp"

namespace invarirank {

inline constexpr int kDatasetVersion = 1;

struct GeneratorConfig {
  int n_users = 4000;
  int n_items = 1000;
  int n_attr_vocab = 16;  // values per attribute field
  int n_attributes = 2;   // fields per item
  int list_size = 25;     // K
  int history_len = 20;
  int positives_per_list = 3;
  std::uint64_t seed = 0;

  void Validate() const;
  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

struct Item {
  int id = 0;
  std::vector<int> attributes;
  friend bool operator==(const Item&, const Item&) = default;
};

struct RankedQuery {
  std::int64_t id = 0;
  std::vector<int> instruction;  // token ids
  std::vector<int> history;      // item ids, oldest first
  std::vector<int> candidates;   // item ids, ascending
  std::vector<int> labels;       // aligned with candidates
  /// Hidden preference[field][value]; only the reference scorer reads it.
  std::vector<std::vector<double>> preference;
  friend bool operator==(const RankedQuery&, const RankedQuery&) = default;
};

struct Dataset {
  std::string split;
  GeneratorConfig config;
  std::vector<Item> catalog;
  std::vector<RankedQuery> queries;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct DatasetSplits {
  Dataset train;
  Dataset validation;
  Dataset test;
};

/// Token ids: 0 [PAD], 1 [SPAN], 2 [/SPAN], 3 [ITEM], 4 [/ITEM], 5 [SEP],
/// then instruction words, item ids, and attribute values field by field.
class Vocabulary {
 public:
  explicit Vocabulary(const GeneratorConfig& config);

  int size() const { return static_cast<int>(tokens_.size()); }
  int Encode(const std::string& token) const;
  const std::string& Decode(int id) const;
  int ItemToken(int item) const;
  int AttributeToken(int field, int value) const;
  const std::vector<int>& InstructionTokens() const { return instruction_; }
  SpecialTokens special() const { return {}; }
  /// FNV-1a over the token strings, as 16 hex digits.
  std::string Hash() const;

 private:
  int n_items_;
  int n_attr_vocab_;
  int n_attributes_;
  int item_base_;
  int attr_base_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::vector<int> instruction_;
};

double Affinity(const std::vector<std::vector<double>>& preference, const Item& item);

/// Deterministic given config.seed; 70/10/20 split over users.
DatasetSplits GenerateSynthetic(const GeneratorConfig& config);

/// Content tokens per candidate: item id token then one token per attribute.
/// History items render the same way, oldest first. Throws VocabularyError
/// for items outside the catalog.
TokenizedQuery TokenizeQuery(const RankedQuery& query, const std::vector<Item>& catalog,
                             const Vocabulary& vocab);

/// Tokenized queries with labels and oracle affinities.
std::vector<LabeledQuery> LabeledQueries(const Dataset& dataset, const Vocabulary& vocab);

/// One JSON header line then one JSON record per query.
void WriteDataset(const std::filesystem::path& path, const Dataset& dataset);
/// Throws VersionError for a foreign header and ParseError naming the line
/// for malformed or truncated records.
Dataset ReadDataset(const std::filesystem::path& path);
std::string SerializeDataset(const Dataset& dataset);
Dataset ParseDataset(const std::string& text);

}  // namespace invarirank
