#include "invarirank/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "invarirank/errors.hpp"
#include "invarirank/util.hpp"

namespace invarirank {

namespace {

// Spread of the hidden per-value preferences.
constexpr double kPreferenceScale = 1.5;
// Positives are drawn from this top fraction of unseen items by affinity.
constexpr double kPositivePoolFraction = 0.1;
constexpr const char* kInstructionWords[] = {"rank", "these", "candidates"};
constexpr const char* kSpecialTokens[] = {"[PAD]", "[SPAN]", "[/SPAN]", "[ITEM]", "[/ITEM]", "[SEP]"};

}  // namespace

void GeneratorConfig::Validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("data config: " + what);
  };
  require(n_users >= 1, "n_users must be positive");
  require(n_attr_vocab >= 1, "n_attr_vocab must be positive");
  require(n_attributes >= 0, "n_attributes must be non-negative");
  require(list_size >= 1, "K must be positive");
  require(history_len >= 0, "history_len must be non-negative");
  require(positives_per_list >= 0 && positives_per_list <= list_size,
          "positives_per_list must be in 0..K");
  require(n_items >= list_size, "n_items (" + std::to_string(n_items) + ") must be at least K (" +
                                    std::to_string(list_size) + ")");
  require(n_items >= list_size + history_len, "n_items must cover history_len + K distinct items");
}

Vocabulary::Vocabulary(const GeneratorConfig& config)
    : n_items_(config.n_items),
      n_attr_vocab_(config.n_attr_vocab),
      n_attributes_(config.n_attributes) {
  for (const char* t : kSpecialTokens) tokens_.emplace_back(t);
  for (const char* w : kInstructionWords) {
    instruction_.push_back(static_cast<int>(tokens_.size()));
    tokens_.emplace_back(w);
  }
  item_base_ = static_cast<int>(tokens_.size());
  for (int i = 0; i < n_items_; ++i) tokens_.push_back("item:" + std::to_string(i));
  attr_base_ = static_cast<int>(tokens_.size());
  for (int f = 0; f < n_attributes_; ++f) {
    for (int v = 0; v < n_attr_vocab_; ++v) {
      tokens_.push_back("attr" + std::to_string(f) + ":" + std::to_string(v));
    }
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
}

int Vocabulary::Encode(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) throw VocabularyError("unknown token '" + token + "'");
  return it->second;
}

const std::string& Vocabulary::Decode(int id) const {
  if (id < 0 || id >= size()) throw VocabularyError("unknown token id " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocabulary::ItemToken(int item) const {
  if (item < 0 || item >= n_items_) throw VocabularyError("unknown item " + std::to_string(item));
  return item_base_ + item;
}

int Vocabulary::AttributeToken(int field, int value) const {
  if (field < 0 || field >= n_attributes_ || value < 0 || value >= n_attr_vocab_) {
    throw VocabularyError("unknown attribute " + std::to_string(field) + ":" +
                          std::to_string(value));
  }
  return attr_base_ + field * n_attr_vocab_ + value;
}

std::string Vocabulary::Hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tokens_) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

double Affinity(const std::vector<std::vector<double>>& preference, const Item& item) {
  double total = 0.0;
  for (std::size_t f = 0; f < item.attributes.size(); ++f) {
    total += preference.at(f).at(static_cast<std::size_t>(item.attributes[f]));
  }
  return total;
}

namespace {

// Draws `count` distinct indices with probability proportional to weight.
std::vector<int> WeightedSampleWithoutReplacement(std::vector<double> weights, int count,
                                                  std::mt19937_64& rng) {
  std::vector<int> picked;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int n = 0; n < count; ++n) {
    double total = 0.0;
    for (double w : weights) total += w;
    double target = unit(rng) * total;
    std::size_t chosen = weights.size();
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] <= 0.0) continue;
      chosen = i;
      target -= weights[i];
      if (target < 0.0) break;
    }
    picked.push_back(static_cast<int>(chosen));
    weights[chosen] = 0.0;
  }
  return picked;
}

std::vector<int> UniformSample(const std::vector<int>& pool, int count, std::mt19937_64& rng) {
  std::vector<int> copy = pool;
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), copy.size() - 1);
    std::swap(copy[static_cast<std::size_t>(i)], copy[pick(rng)]);
  }
  copy.resize(static_cast<std::size_t>(count));
  return copy;
}

RankedQuery GenerateQuery(const GeneratorConfig& c, const std::vector<Item>& catalog,
                          const Vocabulary& vocab, std::int64_t user) {
  std::mt19937_64 rng(MixSeed(c.seed, 1000003ULL + static_cast<std::uint64_t>(user)));
  std::normal_distribution<double> normal(0.0, 1.0);
  RankedQuery q;
  q.id = user;
  q.instruction = vocab.InstructionTokens();
  q.preference.assign(static_cast<std::size_t>(c.n_attributes),
                      std::vector<double>(static_cast<std::size_t>(c.n_attr_vocab)));
  for (auto& field : q.preference) {
    for (double& v : field) v = kPreferenceScale * normal(rng);
  }
  std::vector<double> affinity(catalog.size());
  for (std::size_t i = 0; i < catalog.size(); ++i) affinity[i] = Affinity(q.preference, catalog[i]);

  std::vector<double> weights(catalog.size());
  for (std::size_t i = 0; i < catalog.size(); ++i) weights[i] = std::exp(affinity[i]);
  q.history = WeightedSampleWithoutReplacement(weights, c.history_len, rng);

  std::vector<bool> seen(catalog.size(), false);
  for (int h : q.history) seen[static_cast<std::size_t>(h)] = true;
  std::vector<int> unseen;
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    if (!seen[i]) unseen.push_back(static_cast<int>(i));
  }
  std::stable_sort(unseen.begin(), unseen.end(), [&affinity](int a, int b) {
    return affinity[static_cast<std::size_t>(a)] > affinity[static_cast<std::size_t>(b)];
  });

  const int n_unseen = static_cast<int>(unseen.size());
  const int n_fillers = c.list_size - c.positives_per_list;
  const int pos_pool = std::max(c.positives_per_list,
                                static_cast<int>(kPositivePoolFraction * n_unseen));
  const int filler_begin = std::max(pos_pool, n_unseen - std::max(n_fillers, n_unseen / 2));
  const std::vector<int> top(unseen.begin(), unseen.begin() + pos_pool);
  std::vector<int> bottom(unseen.begin() + std::min(filler_begin, n_unseen - n_fillers),
                          unseen.end());
  // When the pools would overlap, the positive pool wins.
  if (filler_begin > n_unseen - n_fillers) {
    bottom.assign(unseen.end() - n_fillers, unseen.end());
  }

  std::vector<std::pair<int, int>> list;  // (item, label)
  for (int item : UniformSample(top, c.positives_per_list, rng)) list.emplace_back(item, 1);
  std::vector<int> filler_pool;
  for (int item : bottom) {
    bool taken = false;
    for (const auto& [it, label] : list) taken = taken || it == item;
    if (!taken) filler_pool.push_back(item);
  }
  for (int item : UniformSample(filler_pool, n_fillers, rng)) list.emplace_back(item, 0);
  std::sort(list.begin(), list.end());
  for (const auto& [item, label] : list) {
    q.candidates.push_back(item);
    q.labels.push_back(label);
  }
  return q;
}

}  // namespace

DatasetSplits GenerateSynthetic(const GeneratorConfig& config) {
  config.Validate();
  const Vocabulary vocab(config);
  std::mt19937_64 rng(MixSeed(config.seed, 0));
  std::uniform_int_distribution<int> value(0, config.n_attr_vocab - 1);
  std::vector<Item> catalog(static_cast<std::size_t>(config.n_items));
  for (int i = 0; i < config.n_items; ++i) {
    catalog[static_cast<std::size_t>(i)].id = i;
    for (int f = 0; f < config.n_attributes; ++f) {
      catalog[static_cast<std::size_t>(i)].attributes.push_back(value(rng));
    }
  }

  DatasetSplits splits;
  for (Dataset* d : {&splits.train, &splits.validation, &splits.test}) {
    d->config = config;
    d->catalog = catalog;
  }
  splits.train.split = "train";
  splits.validation.split = "validation";
  splits.test.split = "test";
  const std::int64_t n = config.n_users;
  const std::int64_t train_end = n * 7 / 10;
  const std::int64_t valid_end = n * 8 / 10;
  for (std::int64_t u = 0; u < n; ++u) {
    RankedQuery q = GenerateQuery(config, catalog, vocab, u);
    Dataset& target = u < train_end ? splits.train : u < valid_end ? splits.validation : splits.test;
    target.queries.push_back(std::move(q));
  }
  return splits;
}

TokenizedQuery TokenizeQuery(const RankedQuery& query, const std::vector<Item>& catalog,
                             const Vocabulary& vocab) {
  auto render = [&](int item) {
    if (item < 0 || static_cast<std::size_t>(item) >= catalog.size()) {
      throw VocabularyError("item " + std::to_string(item) + " is not in the catalog");
    }
    const Item& it = catalog[static_cast<std::size_t>(item)];
    std::vector<int> tokens{vocab.ItemToken(it.id)};
    for (std::size_t f = 0; f < it.attributes.size(); ++f) {
      tokens.push_back(vocab.AttributeToken(static_cast<int>(f), it.attributes[f]));
    }
    return tokens;
  };
  TokenizedQuery out;
  for (int t : query.instruction) {
    vocab.Decode(t);
    out.instruction.push_back(t);
  }
  for (int item : query.history) {
    auto tokens = render(item);
    out.history.insert(out.history.end(), tokens.begin(), tokens.end());
  }
  for (int item : query.candidates) out.candidates.push_back(render(item));
  return out;
}

std::vector<LabeledQuery> LabeledQueries(const Dataset& dataset, const Vocabulary& vocab) {
  std::vector<LabeledQuery> out;
  out.reserve(dataset.queries.size());
  for (const auto& q : dataset.queries) {
    LabeledQuery lq;
    lq.id = q.id;
    lq.query = TokenizeQuery(q, dataset.catalog, vocab);
    lq.labels.assign(q.labels.begin(), q.labels.end());
    if (!q.preference.empty()) {
      for (int item : q.candidates) {
        lq.oracle_scores.push_back(
            Affinity(q.preference, dataset.catalog[static_cast<std::size_t>(item)]));
      }
    }
    out.push_back(std::move(lq));
  }
  return out;
}

namespace {

nlohmann::json ConfigJson(const GeneratorConfig& c) {
  return {{"n_users", c.n_users},
          {"n_items", c.n_items},
          {"n_attr_vocab", c.n_attr_vocab},
          {"n_attributes", c.n_attributes},
          {"K", c.list_size},
          {"history_len", c.history_len},
          {"positives_per_list", c.positives_per_list},
          {"seed", c.seed}};
}

GeneratorConfig ConfigFromJson(const nlohmann::json& j) {
  GeneratorConfig c;
  c.n_users = j.at("n_users").get<int>();
  c.n_items = j.at("n_items").get<int>();
  c.n_attr_vocab = j.at("n_attr_vocab").get<int>();
  c.n_attributes = j.at("n_attributes").get<int>();
  c.list_size = j.at("K").get<int>();
  c.history_len = j.at("history_len").get<int>();
  c.positives_per_list = j.at("positives_per_list").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

std::string SerializeDataset(const Dataset& dataset) {
  const Vocabulary vocab(dataset.config);
  nlohmann::json catalog = nlohmann::json::array();
  for (const auto& item : dataset.catalog) catalog.push_back(item.attributes);
  nlohmann::json header = {{"format", "invarirank-dataset"},
                           {"version", kDatasetVersion},
                           {"split", dataset.split},
                           {"K", dataset.config.list_size},
                           {"history_len", dataset.config.history_len},
                           {"vocab_size", vocab.size()},
                           {"vocab_hash", vocab.Hash()},
                           {"generator", ConfigJson(dataset.config)},
                           {"catalog", catalog}};
  std::string out = header.dump() + '\n';
  for (const auto& q : dataset.queries) {
    nlohmann::json record = {{"id", q.id},
                             {"instruction", q.instruction},
                             {"history", q.history},
                             {"candidates", q.candidates},
                             {"labels", q.labels},
                             {"preference", q.preference}};
    out += record.dump();
    out += '\n';
  }
  return out;
}

Dataset ParseDataset(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto parse_line = [&](const std::string& s) {
    try {
      return nlohmann::json::parse(s);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed record: ") + e.what(), line_no);
    }
  };

  if (!std::getline(in, line)) throw ParseError("empty dataset file", 1);
  ++line_no;
  const nlohmann::json header = parse_line(line);
  if (!header.is_object() || header.value("format", "") != "invarirank-dataset") {
    throw VersionError("not an invarirank dataset (bad header format)");
  }
  if (header.value("version", -1) != kDatasetVersion) {
    throw VersionError("dataset version " + header.value("version", nlohmann::json()).dump() +
                       ", expected " + std::to_string(kDatasetVersion));
  }
  Dataset d;
  try {
    d.split = header.at("split").get<std::string>();
    d.config = ConfigFromJson(header.at("generator"));
    int id = 0;
    for (const auto& attrs : header.at("catalog")) {
      d.catalog.push_back({id++, attrs.get<std::vector<int>>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad header: ") + e.what(), line_no);
  }
  const Vocabulary vocab(d.config);
  if (header.value("vocab_hash", "") != vocab.Hash()) {
    throw VersionError("dataset vocabulary hash does not match its generator config");
  }
  if (header.value("K", -1) != d.config.list_size ||
      header.value("history_len", -1) != d.config.history_len) {
    throw ParseError("header K/history_len disagree with the generator config", line_no);
  }

  const bool terminated = !text.empty() && text.back() == '\n';
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (in.eof() && !terminated) {
      // A final line without its newline was cut short by a partial write.
      throw ParseError("truncated record (missing line terminator)", line_no);
    }
    const nlohmann::json j = parse_line(line);
    RankedQuery q;
    try {
      q.id = j.at("id").get<std::int64_t>();
      q.instruction = j.at("instruction").get<std::vector<int>>();
      q.history = j.at("history").get<std::vector<int>>();
      q.candidates = j.at("candidates").get<std::vector<int>>();
      q.labels = j.at("labels").get<std::vector<int>>();
      q.preference = j.at("preference").get<std::vector<std::vector<double>>>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad record: ") + e.what(), line_no);
    }
    if (q.candidates.size() != static_cast<std::size_t>(d.config.list_size) ||
        q.labels.size() != q.candidates.size()) {
      throw ParseError("record has " + std::to_string(q.candidates.size()) + " candidates and " +
                           std::to_string(q.labels.size()) + " labels, expected K = " +
                           std::to_string(d.config.list_size),
                       line_no);
    }
    d.queries.push_back(std::move(q));
  }
  return d;
}

void WriteDataset(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << SerializeDataset(dataset);
  if (!out) throw Error("failed writing " + path.string());
}

Dataset ReadDataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dataset " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return ParseDataset(buf.str());
}

}  // namespace invarirank
