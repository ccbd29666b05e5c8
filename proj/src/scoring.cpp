#include "invarirank/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "invarirank/errors.hpp"
#include "invarirank/numerics/ops.hpp"

namespace invarirank {

using numerics::Tensor;

SpanPlan PlanSpans(const PromptLayout& layout) {
  ValidateLayout(layout);
  SpanPlan plan;
  const int anchor = static_cast<int>(layout.context.end) - 1;
  plan.offsets.push_back(0);
  for (const TokenRange& r : layout.candidate_ranges) {
    for (std::size_t t = r.begin; t < r.end; ++t) {
      plan.source_rows.push_back(t == r.begin ? anchor : static_cast<int>(t) - 1);
      plan.targets.push_back(layout.tokens[t]);
    }
    plan.offsets.push_back(plan.targets.size());
  }
  return plan;
}

std::vector<std::vector<double>> SpanLogProbs(std::span<const double> logits, std::size_t vocab,
                                              const PromptLayout& layout) {
  if (logits.size() != layout.tokens.size() * vocab) {
    throw DimensionError("span_log_probs: logits do not match the layout");
  }
  const SpanPlan plan = PlanSpans(layout);
  std::vector<std::vector<double>> out(layout.num_candidates());
  for (std::size_t slot = 0; slot < layout.num_candidates(); ++slot) {
    auto& dst = out[static_cast<std::size_t>(layout.candidate_order[slot])];
    for (std::size_t i = plan.offsets[slot]; i < plan.offsets[slot + 1]; ++i) {
      const double* row = logits.data() + static_cast<std::size_t>(plan.source_rows[i]) * vocab;
      const double mx = *std::max_element(row, row + vocab);
      double sum = 0.0;
      for (std::size_t c = 0; c < vocab; ++c) sum += std::exp(row[c] - mx);
      dst.push_back(row[plan.targets[i]] - mx - std::log(sum));
    }
  }
  return out;
}

Tensor ScoreLayout(const BoundModel& model, const PromptLayout& layout, InvarianceMode mode) {
  const AttentionMask mask = BuildAttentionMask(layout, mode);
  const PositionIds positions = AssignPositions(layout, mode);
  const SpanPlan plan = PlanSpans(layout);

  Tensor hidden = ForwardHidden(model, layout.tokens, positions, mask);
  Tensor logp = numerics::LogSoftmax(LmHead(model, numerics::GatherRows(hidden, plan.source_rows)));
  Tensor token_logp = numerics::Pick(logp, plan.targets);
  Tensor slot_scores = numerics::SegmentMean(token_logp, plan.offsets);

  std::vector<std::size_t> slot_of_identity(layout.num_candidates());
  for (std::size_t s = 0; s < layout.num_candidates(); ++s) {
    slot_of_identity[static_cast<std::size_t>(layout.candidate_order[s])] = s;
  }
  return numerics::Take(slot_scores, slot_of_identity);
}

PromptLayout LayoutFor(const TokenizedQuery& query, std::span<const int> order,
                       std::size_t max_seq_len) {
  return AssemblePrompt(query.instruction, query.history, query.candidates, order, max_seq_len);
}

ScoredList ScoreCandidates(const ModelParams& params, const TokenizedQuery& query,
                           InvarianceMode mode, std::span<const int> order) {
  const PromptLayout layout =
      LayoutFor(query, order, static_cast<std::size_t>(params.config.max_seq_len));
  numerics::Graph graph(numerics::GradMode::kNoGrad);
  BoundModel model = Bind(graph, params);
  Tensor scores = ScoreLayout(model, layout, mode);
  ScoredList out;
  out.scores.assign(scores.data().begin(), scores.data().end());
  out.ranking = Rank(out.scores);
  return out;
}

Permutation Rank(std::span<const double> scores) {
  for (double s : scores) {
    if (std::isnan(s)) throw ContractError("rank: NaN score");
  }
  Permutation order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&scores](int a, int b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  return order;
}

std::string ScoreRecordJson(std::int64_t query_id, std::span<const int> order, InvarianceMode mode,
                            const ScoredList& scored) {
  nlohmann::json record = {{"query_id", query_id},
                           {"mode", std::string(ModeName(mode))},
                           {"order", std::vector<int>(order.begin(), order.end())},
                           {"scores", scored.scores},
                           {"ranking", scored.ranking}};
  return record.dump();
}

}  // namespace invarirank
