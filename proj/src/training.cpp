#include "invarirank/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "invarirank/errors.hpp"
#include "invarirank/numerics/ops.hpp"
#include "invarirank/util.hpp"

namespace invarirank {

using numerics::Graph;
using numerics::Tensor;

double Dcg(std::span<const double> gains_in_rank_order, std::size_t k) {
  if (k == 0) throw ContractError("dcg: k must be at least 1");
  double total = 0.0;
  const std::size_t limit = std::min(k, gains_in_rank_order.size());
  for (std::size_t r = 0; r < limit; ++r) {
    total += gains_in_rank_order[r] / std::log2(static_cast<double>(r) + 2.0);
  }
  return total;
}

namespace {

double IdealDcg(std::span<const double> labels, std::size_t k) {
  std::vector<double> ideal(labels.begin(), labels.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  return Dcg(ideal, k);
}

void CheckLabels(std::span<const double> labels) {
  for (double y : labels) {
    if (!(y >= 0.0)) throw ContractError("labels must be non-negative");
  }
}

}  // namespace

double NdcgOfRanking(std::span<const int> ranking, std::span<const double> labels, std::size_t k) {
  if (ranking.size() != labels.size()) throw DimensionError("ndcg: ranking and labels differ");
  CheckLabels(labels);
  const double ideal = IdealDcg(labels, k);
  if (ideal == 0.0) return 0.0;
  std::vector<double> gains(ranking.size());
  for (std::size_t r = 0; r < ranking.size(); ++r) {
    gains[r] = labels[static_cast<std::size_t>(ranking[r])];
  }
  return Dcg(gains, k) / ideal;
}

double NdcgAtK(std::span<const double> scores, std::span<const double> labels, std::size_t k) {
  if (scores.size() != labels.size()) throw DimensionError("ndcg: scores and labels differ");
  return NdcgOfRanking(Rank(scores), labels, k);
}

namespace {

// 1-based rank position of every identity.
std::vector<std::size_t> RankPositions(std::span<const double> scores) {
  const Permutation ranking = Rank(scores);
  std::vector<std::size_t> pos(ranking.size());
  for (std::size_t r = 0; r < ranking.size(); ++r) pos[static_cast<std::size_t>(ranking[r])] = r + 1;
  return pos;
}

double SwapDelta(std::span<const double> labels, const std::vector<std::size_t>& pos,
                 double ideal, std::size_t i, std::size_t j) {
  if (ideal == 0.0) return 0.0;
  const double di = 1.0 / std::log2(static_cast<double>(pos[i]) + 1.0);
  const double dj = 1.0 / std::log2(static_cast<double>(pos[j]) + 1.0);
  return std::abs((labels[i] - labels[j]) * (di - dj)) / ideal;
}

}  // namespace

double DeltaNdcg(std::span<const double> scores, std::span<const double> labels, std::size_t i,
                 std::size_t j) {
  if (scores.size() != labels.size()) throw DimensionError("delta_ndcg: scores and labels differ");
  if (i == j || i >= scores.size() || j >= scores.size()) {
    throw ContractError("delta_ndcg: needs two distinct valid candidates");
  }
  CheckLabels(labels);
  return SwapDelta(labels, RankPositions(scores), IdealDcg(labels, labels.size()), i, j);
}

LambdaPairs BuildLambdaPairs(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw DimensionError("lambda pairs: scores and labels differ");
  CheckLabels(labels);
  const auto pos = RankPositions(scores);
  const double ideal = IdealDcg(labels, labels.size());
  LambdaPairs pairs;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (labels[i] > labels[j]) {
        pairs.winners.push_back(i);
        pairs.losers.push_back(j);
        pairs.weights.push_back(SwapDelta(labels, pos, ideal, i, j));
      }
    }
  }
  return pairs;
}

std::optional<Tensor> LambdaRankLoss(const Tensor& scores, std::span<const double> labels,
                                     double sigma) {
  if (!(sigma > 0.0)) throw ContractError("lambdarank: sigma must be positive");
  if (scores.rank() != 1) throw DimensionError("lambdarank: scores must be a vector");
  const LambdaPairs pairs = BuildLambdaPairs(scores.data(), labels);
  if (pairs.empty()) return std::nullopt;
  Graph& g = scores.graph();
  Tensor margin = numerics::Sub(numerics::Take(scores, pairs.winners),
                                numerics::Take(scores, pairs.losers));
  Tensor logistic = numerics::Softplus(numerics::MulScalar(margin, -sigma));
  Tensor weights = g.Constant({pairs.weights.size()}, pairs.weights);
  return numerics::Mean(numerics::Mul(weights, logistic));
}

std::optional<double> LambdaRankLossValue(std::span<const double> scores,
                                          std::span<const double> labels, double sigma) {
  Graph g(numerics::GradMode::kNoGrad);
  Tensor s = g.Constant({scores.size()}, {scores.begin(), scores.end()});
  auto loss = LambdaRankLoss(s, labels, sigma);
  if (!loss) return std::nullopt;
  return loss->item();
}

void TrainConfig::Validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("train config: " + what);
  };
  require(steps >= 0, "steps must be non-negative");
  require(batch_size >= 1, "batch_size must be at least 1");
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(warmup_fraction >= 0.0 && warmup_fraction < 1.0, "warmup_fraction must be in [0, 1)");
  require(sigma > 0.0, "sigma must be positive");
  require(weight_decay >= 0.0, "weight_decay must be non-negative");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "betas must be in [0, 1)");
  require(adam_epsilon > 0.0, "adam_epsilon must be positive");
  require(eval_interval >= 0 && checkpoint_interval >= 0 && eval_max_queries >= 0,
          "intervals must be non-negative");
}

double LearningRateAt(std::int64_t step_index, const TrainConfig& config) {
  const auto warmup = static_cast<std::int64_t>(
      std::floor(config.warmup_fraction * static_cast<double>(config.steps)));
  if (warmup <= 0 || step_index >= warmup) return config.learning_rate;
  return config.learning_rate * static_cast<double>(step_index + 1) / static_cast<double>(warmup);
}

double OptimizerStep(ModelParams& params, std::vector<std::vector<double>>& grads,
                     std::int64_t step_index, const TrainConfig& config, AdamState& state) {
  if (grads.size() != params.tensors.size()) {
    throw DimensionError("optimizer: gradient list does not match parameters");
  }
  double sq = 0.0;
  for (std::size_t p = 0; p < grads.size(); ++p) {
    if (grads[p].size() != params.tensors[p].values.size()) {
      throw DimensionError("optimizer: gradient of " + params.tensors[p].name + " misshapen");
    }
    for (double g : grads[p]) {
      if (!std::isfinite(g)) {
        throw NumericError("optimizer: non-finite gradient in " + params.tensors[p].name +
                           " at step " + std::to_string(step_index));
      }
      sq += g * g;
    }
  }
  const double norm = std::sqrt(sq);
  if (config.grad_clip_norm > 0.0 && norm > config.grad_clip_norm) {
    const double factor = config.grad_clip_norm / norm;
    for (auto& g : grads) {
      for (double& v : g) v *= factor;
    }
  }
  if (state.m.empty()) {
    for (const auto& t : params.tensors) {
      state.m.emplace_back(t.values.size(), 0.0);
      state.v.emplace_back(t.values.size(), 0.0);
    }
  }
  state.t += 1;
  const double lr = LearningRateAt(step_index, config);
  const double bias1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double bias2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
  for (std::size_t p = 0; p < grads.size(); ++p) {
    auto& w = params.tensors[p].values;
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = grads[p][i];
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
      const double update = (m[i] / bias1) / (std::sqrt(v[i] / bias2) + config.adam_epsilon);
      w[i] -= lr * (update + config.weight_decay * w[i]);
    }
  }
  return norm;
}

namespace {

bool HasPreferencePair(std::span<const double> labels) {
  for (double y : labels) {
    if (y != labels.front()) return true;
  }
  return false;
}

}  // namespace

std::optional<ExampleGradient> ComputeExampleGradient(const ModelParams& params,
                                                      const LabeledQuery& example,
                                                      std::span<const int> order,
                                                      InvarianceMode mode, double sigma) {
  if (example.labels.size() != example.query.candidates.size()) {
    throw DimensionError("example labels do not align with candidates");
  }
  if (!HasPreferencePair(example.labels)) return std::nullopt;
  Graph graph;
  BoundModel model = Bind(graph, params);
  const PromptLayout layout =
      LayoutFor(example.query, order, static_cast<std::size_t>(params.config.max_seq_len));
  Tensor scores = ScoreLayout(model, layout, mode);
  auto loss = LambdaRankLoss(scores, example.labels, sigma);
  if (!loss) return std::nullopt;
  graph.Backward(*loss);
  ExampleGradient out;
  out.loss = loss->item();
  out.grads.reserve(model.tensors.size());
  for (const Tensor& t : model.tensors) {
    auto grad = t.grad();
    if (grad.empty()) {
      out.grads.emplace_back(t.size(), 0.0);
    } else {
      out.grads.emplace_back(grad.begin(), grad.end());
    }
  }
  return out;
}

double ValidationNdcg(const ModelParams& params, std::span<const LabeledQuery> queries,
                      InvarianceMode mode, int max_queries) {
  std::size_t n = queries.size();
  if (max_queries > 0) n = std::min(n, static_cast<std::size_t>(max_queries));
  if (n == 0) return 0.0;
  std::vector<double> ndcg(n);
  ParallelFor(n, [&](std::size_t q) {
    const auto& query = queries[q];
    const Permutation order = IdentityPermutation(query.query.candidates.size());
    const ScoredList scored = ScoreCandidates(params, query.query, mode, order);
    ndcg[q] = NdcgOfRanking(scored.ranking, query.labels, 10);
  });
  double total = 0.0;
  for (double v : ndcg) total += v;
  return total / static_cast<double>(n);
}

TrainLog Train(TrainState& state, std::span<const LabeledQuery> train,
               std::span<const LabeledQuery> validation, const TrainConfig& config,
               const std::function<void(const TrainState&)>& on_checkpoint,
               const std::function<void(const TrainLogEntry&)>& on_entry) {
  config.Validate();
  ValidateParams(state.params);
  TrainLog log;
  if (state.step >= config.steps) return log;
  if (train.empty()) throw ContractError("train: empty dataset");

  const auto started = std::chrono::steady_clock::now();
  const std::size_t n = train.size();
  const auto batch = static_cast<std::size_t>(config.batch_size);
  std::int64_t cached_epoch = -1;
  std::vector<int> epoch_order;

  for (std::int64_t step = state.step; step < config.steps; ++step) {
    std::vector<std::size_t> picks(batch);
    std::vector<Permutation> orders(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto global = static_cast<std::uint64_t>(step) * batch + b;
      const auto epoch = static_cast<std::int64_t>(global / n);
      if (epoch != cached_epoch) {
        std::mt19937_64 rng(MixSeed(config.seed, static_cast<std::uint64_t>(epoch)));
        epoch_order = RandomPermutation(n, rng);
        cached_epoch = epoch;
      }
      picks[b] = static_cast<std::size_t>(epoch_order[global % n]);
      const std::size_t k = train[picks[b]].query.candidates.size();
      if (config.shuffle_candidates) {
        std::mt19937_64 rng(MixSeed(config.order_seed, global));
        orders[b] = RandomPermutation(k, rng);
      } else {
        orders[b] = IdentityPermutation(k);
      }
    }

    std::vector<std::optional<ExampleGradient>> results(batch);
    ParallelFor(batch, [&](std::size_t b) {
      results[b] = ComputeExampleGradient(state.params, train[picks[b]], orders[b], config.mode,
                                          config.sigma);
    });

    TrainLogEntry entry;
    entry.step = step;
    entry.learning_rate = LearningRateAt(step, config);
    std::vector<std::vector<double>> grads;
    double loss_total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      if (!results[b]) {
        ++entry.skipped;
        continue;
      }
      ++entry.examples;
      loss_total += results[b]->loss;
      if (grads.empty()) {
        grads = std::move(results[b]->grads);
      } else {
        for (std::size_t p = 0; p < grads.size(); ++p) {
          const auto& src = results[b]->grads[p];
          for (std::size_t i = 0; i < src.size(); ++i) grads[p][i] += src[i];
        }
      }
      results[b].reset();
    }
    if (entry.examples > 0) {
      const double inv = 1.0 / static_cast<double>(entry.examples);
      for (auto& g : grads) {
        for (double& v : g) v *= inv;
      }
      entry.loss = loss_total * inv;
      entry.grad_norm = OptimizerStep(state.params, grads, step, config, state.optimizer);
    }
    state.step = step + 1;

    const bool last = state.step == config.steps;
    if (config.eval_interval > 0 && !validation.empty() &&
        (state.step % config.eval_interval == 0 || last)) {
      entry.validation_ndcg10 =
          ValidationNdcg(state.params, validation, config.mode, config.eval_max_queries);
    }
    log.entries.push_back(entry);
    if (on_entry) on_entry(entry);
    if (on_checkpoint && config.checkpoint_interval > 0 &&
        state.step % config.checkpoint_interval == 0) {
      on_checkpoint(state);
    }
  }
  log.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return log;
}

Checkpoint CheckpointFromState(const TrainState& state) {
  Checkpoint ck = CheckpointFromParams(state.params, state.step);
  ck.metadata["adam_t"] = std::to_string(state.optimizer.t);
  if (!state.optimizer.m.empty()) {
    for (std::size_t p = 0; p < state.params.tensors.size(); ++p) {
      const auto& t = state.params.tensors[p];
      ck.blobs.push_back({"adam.m." + t.name, t.shape, state.optimizer.m[p]});
    }
    for (std::size_t p = 0; p < state.params.tensors.size(); ++p) {
      const auto& t = state.params.tensors[p];
      ck.blobs.push_back({"adam.v." + t.name, t.shape, state.optimizer.v[p]});
    }
  }
  return ck;
}

TrainState StateFromCheckpoint(const Checkpoint& checkpoint) {
  TrainState state;
  state.params = ParamsFromCheckpoint(checkpoint);
  state.step = checkpoint.step;
  auto find = [&checkpoint](const std::string& name) -> const NamedTensor* {
    for (const auto& b : checkpoint.blobs) {
      if (b.name == name) return &b;
    }
    return nullptr;
  };
  bool has_moments = true;
  for (const auto& t : state.params.tensors) {
    const NamedTensor* m = find("adam.m." + t.name);
    const NamedTensor* v = find("adam.v." + t.name);
    if (m == nullptr || v == nullptr) {
      has_moments = false;
      break;
    }
    state.optimizer.m.push_back(m->values);
    state.optimizer.v.push_back(v->values);
  }
  if (!has_moments) {
    state.optimizer = {};
  } else if (auto it = checkpoint.metadata.find("adam_t"); it != checkpoint.metadata.end()) {
    state.optimizer.t = std::stoll(it->second);
  }
  return state;
}

std::string TrainLogJsonl(const TrainLog& log, bool include_wall_clock) {
  std::ostringstream out;
  for (const auto& e : log.entries) {
    nlohmann::json j = {{"step", e.step},         {"loss", e.loss},
                        {"lr", e.learning_rate},  {"grad_norm", e.grad_norm},
                        {"examples", e.examples}, {"skipped", e.skipped}};
    if (e.validation_ndcg10) j["val_ndcg10"] = *e.validation_ndcg10;
    out << j.dump() << '\n';
  }
  if (include_wall_clock) {
    out << nlohmann::json{{"wall_clock_seconds", log.wall_clock_seconds}}.dump() << '\n';
  }
  return out.str();
}

}  // namespace invarirank
