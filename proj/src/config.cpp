#include "invarirank/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "invarirank/errors.hpp"

namespace invarirank {
namespace {

std::string Trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

template <typename T>
T ParseNumber(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = first + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
  }
  return out;
}

bool ParseBool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + value + "'");
}

std::string FormatDouble(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string FormatModes(const std::vector<InvarianceMode>& modes) {
  std::string out;
  for (std::size_t i = 0; i < modes.size(); ++i) {
    if (i) out += ',';
    out += ModeName(modes[i]);
  }
  return out;
}

std::vector<InvarianceMode> ParseModes(const std::string& value) {
  std::vector<InvarianceMode> modes;
  std::stringstream in(value);
  std::string name;
  while (std::getline(in, name, ',')) modes.push_back(ParseMode(Trim(name)));
  if (modes.empty()) throw ConfigError("eval.modes must name at least one mode");
  return modes;
}

struct Entry {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define INT_ENTRY(KEY, FIELD, TYPE)                                                          \
  Entry {                                                                                    \
    KEY, [](RunConfig& c, const std::string& v) { c.FIELD = ParseNumber<TYPE>(KEY, v); },    \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                           \
  }
#define REAL_ENTRY(KEY, FIELD)                                                               \
  Entry {                                                                                    \
    KEY, [](RunConfig& c, const std::string& v) { c.FIELD = ParseNumber<double>(KEY, v); },  \
        [](const RunConfig& c) { return FormatDouble(c.FIELD); }                             \
  }

const std::vector<Entry>& Entries() {
  static const std::vector<Entry> entries = {
      INT_ENTRY("seed", seed, std::uint64_t),
      INT_ENTRY("data.n_users", data.n_users, int),
      INT_ENTRY("data.n_items", data.n_items, int),
      INT_ENTRY("data.n_attr_vocab", data.n_attr_vocab, int),
      INT_ENTRY("data.n_attributes", data.n_attributes, int),
      INT_ENTRY("data.K", data.list_size, int),
      INT_ENTRY("data.history_len", data.history_len, int),
      INT_ENTRY("data.positives_per_list", data.positives_per_list, int),
      INT_ENTRY("data.seed", data.seed, std::uint64_t),
      INT_ENTRY("model.vocab_size", model.vocab_size, int),
      INT_ENTRY("model.d_model", model.d_model, int),
      INT_ENTRY("model.n_heads", model.n_heads, int),
      INT_ENTRY("model.n_layers", model.n_layers, int),
      INT_ENTRY("model.d_ff", model.d_ff, int),
      REAL_ENTRY("model.rope_base", model.rope_base),
      INT_ENTRY("model.max_seq_len", model.max_seq_len, int),
      Entry{"model.dtype",
            [](RunConfig&, const std::string& v) {
              if (v != "f64") throw ConfigError("model.dtype: only f64 is supported, got '" + v + "'");
            },
            [](const RunConfig&) { return std::string("f64"); }},
      INT_ENTRY("model.seed", model.seed, std::uint64_t),
      INT_ENTRY("train.steps", train.steps, int),
      INT_ENTRY("train.batch_size", train.batch_size, int),
      REAL_ENTRY("train.learning_rate", train.learning_rate),
      REAL_ENTRY("train.warmup_fraction", train.warmup_fraction),
      REAL_ENTRY("train.sigma", train.sigma),
      Entry{"train.mode",
            [](RunConfig& c, const std::string& v) { c.train.mode = ParseMode(v); },
            [](const RunConfig& c) { return std::string(ModeName(c.train.mode)); }},
      INT_ENTRY("train.seed", train.seed, std::uint64_t),
      REAL_ENTRY("train.grad_clip_norm", train.grad_clip_norm),
      REAL_ENTRY("train.weight_decay", train.weight_decay),
      REAL_ENTRY("train.beta1", train.beta1),
      REAL_ENTRY("train.beta2", train.beta2),
      REAL_ENTRY("train.adam_epsilon", train.adam_epsilon),
      INT_ENTRY("train.eval_interval", train.eval_interval, int),
      INT_ENTRY("train.eval_max_queries", train.eval_max_queries, int),
      INT_ENTRY("train.checkpoint_interval", train.checkpoint_interval, int),
      Entry{"train.shuffle_candidates",
            [](RunConfig& c, const std::string& v) {
              c.train.shuffle_candidates = ParseBool("train.shuffle_candidates", v);
            },
            [](const RunConfig& c) {
              return std::string(c.train.shuffle_candidates ? "true" : "false");
            }},
      INT_ENTRY("train.order_seed", train.order_seed, std::uint64_t),
      INT_ENTRY("eval.permutations", eval.permutations, std::size_t),
      INT_ENTRY("eval.seed", eval.seed, std::uint64_t),
      INT_ENTRY("eval.topk", eval.topk, std::size_t),
      INT_ENTRY("eval.exposure_k", eval.exposure_k, std::size_t),
      INT_ENTRY("eval.max_queries", eval.max_queries, std::size_t),
      Entry{"eval.modes",
            [](RunConfig& c, const std::string& v) { c.eval.modes = ParseModes(v); },
            [](const RunConfig& c) { return FormatModes(c.eval.modes); }},
      INT_ENTRY("eval.bootstrap_replicates", eval.bootstrap_replicates, std::size_t),
  };
  return entries;
}

#undef INT_ENTRY
#undef REAL_ENTRY

const Entry& Find(const std::string& key) {
  for (const auto& e : Entries()) {
    if (e.key == key) return e;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

std::vector<std::string> ConfigKeys() {
  std::vector<std::string> keys;
  for (const auto& e : Entries()) keys.push_back(e.key);
  return keys;
}

void RunConfig::Set(const std::string& key, const std::string& value) {
  Find(key).set(*this, Trim(value));
  explicit_keys.insert(key);
}

void RunConfig::Resolve() {
  const std::pair<const char*, std::uint64_t*> seeds[] = {
      {"data.seed", &data.seed},
      {"model.seed", &model.seed},
      {"train.seed", &train.seed},
      {"train.order_seed", &train.order_seed},
      {"eval.seed", &eval.seed},
  };
  for (const auto& [key, field] : seeds) {
    if (!explicit_keys.count(key)) *field = seed;
  }
  data.Validate();
  if (!explicit_keys.count("model.vocab_size")) model.vocab_size = Vocabulary(data).size();
  model.Validate();
  train.Validate();
  if (eval.permutations < 2) {
    throw ConfigError("eval.permutations must be at least 2 to compare orders");
  }
  if (eval.topk == 0 || eval.exposure_k == 0) throw ConfigError("eval.topk and eval.exposure_k must be positive");
  if (eval.bootstrap_replicates == 1) {
    throw ConfigError("eval.bootstrap_replicates must be 0 (off) or at least 2");
  }
}

std::map<std::string, std::string> RunConfig::Values() const {
  std::map<std::string, std::string> out;
  for (const auto& e : Entries()) out.emplace(e.key, e.get(*this));
  return out;
}

std::string RunConfig::Serialize() const {
  std::string out;
  for (const auto& [key, value] : Values()) out += key + " = " + value + "\n";
  return out;
}

std::pair<std::string, std::string> SplitAssignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("expected key=value, got '" + assignment + "'");
  }
  std::string key = Trim(assignment.substr(0, eq));
  if (key.empty()) throw ConfigError("empty key in '" + assignment + "'");
  return {key, Trim(assignment.substr(eq + 1))};
}

void ApplyConfigText(RunConfig& config, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (Trim(line).empty()) continue;
    try {
      const auto [key, value] = SplitAssignment(line);
      config.Set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void ApplyConfigFile(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  ApplyConfigText(config, buf.str());
}

}  // namespace invarirank
