#pragma once

// Single-pass listwise scoring. A candidate's score is the mean
// log-probability of its span tokens, delimiters included. The first span
// token is predicted from the last shared-context position rather than from
// the physically preceding token, which belongs to another candidate.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "invarirank/layout.hpp"
#include "invarirank/model.hpp"
#include "invarirank/numerics/tensor.hpp"

namespace invarirank {

/// Token content of one query, before delimiters are added.
/// candidates[i] is the content of candidate identity i.
struct TokenizedQuery {
  std::vector<int> instruction;
  std::vector<int> history;
  std::vector<std::vector<int>> candidates;
};

/// A tokenized query with graded relevance labels aligned to candidate
/// identities. `oracle_scores`, when present, are hidden-preference
/// affinities available only to the reference scorer.
struct LabeledQuery {
  std::int64_t id = 0;
  TokenizedQuery query;
  std::vector<double> labels;
  std::vector<double> oracle_scores;
};

struct ScoredList {
  /// scores[i] is the score of candidate identity i.
  std::vector<double> scores;
  /// Identities, best first.
  Permutation ranking;
};

/// Which logits row predicts which token, for every candidate span.
struct SpanPlan {
  std::vector<int> source_rows;
  std::vector<int> targets;
  /// Span of slot s occupies [offsets[s], offsets[s+1]) in the two vectors above.
  std::vector<std::size_t> offsets;
};

SpanPlan PlanSpans(const PromptLayout& layout);

/// Token log-probabilities of every candidate span, indexed by identity.
/// `logits` is row-major [seq x vocab] from a forward pass over `layout`.
std::vector<std::vector<double>> SpanLogProbs(std::span<const double> logits, std::size_t vocab,
                                              const PromptLayout& layout);

/// Differentiable scores [N] indexed by identity, from one forward pass.
numerics::Tensor ScoreLayout(const BoundModel& model, const PromptLayout& layout,
                             InvarianceMode mode);

PromptLayout LayoutFor(const TokenizedQuery& query, std::span<const int> order,
                       std::size_t max_seq_len);

ScoredList ScoreCandidates(const ModelParams& params, const TokenizedQuery& query,
                           InvarianceMode mode, std::span<const int> order);

/// Stable descending sort of identities; ties go to the lower identity.
/// Throws ContractError for NaN.
Permutation Rank(std::span<const double> scores);

/// One line-delimited JSON record for the harness.
std::string ScoreRecordJson(std::int64_t query_id, std::span<const int> order, InvarianceMode mode,
                            const ScoredList& scored);

}  // namespace invarirank
