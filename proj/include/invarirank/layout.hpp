#pragma once

// Serialized prompt layout, segment attention mask and position assignment.
//
// A prompt is one shared-context segment followed by N candidate segments:
//
//   [SPAN] instruction [SEP] history [/SPAN]  [ITEM] c_a [/ITEM]  [ITEM] c_b [/ITEM] ...
//
// Sequence indices are 0-based. Position ids are 1-based.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "invarirank/numerics/attention_mask.hpp"

namespace invarirank {

enum class InvarianceMode {
  kStandard,  // causal mask, sequential positions
  kPosOnly,   // causal mask, shared positional framing
  kAttnOnly,  // segment mask, sequential positions
  kFull,      // segment mask, shared positional framing
};

inline constexpr InvarianceMode kAllModes[] = {InvarianceMode::kStandard, InvarianceMode::kPosOnly,
                                               InvarianceMode::kAttnOnly, InvarianceMode::kFull};

bool UsesSegmentMask(InvarianceMode mode);
bool UsesSharedFraming(InvarianceMode mode);

/// "standard", "pos", "attn", "full".
std::string_view ModeName(InvarianceMode mode);
/// Inverse of ModeName; throws ConfigError for unknown names.
InvarianceMode ParseMode(std::string_view name);

struct SpecialTokens {
  int span_open = 1;
  int span_close = 2;
  int item_open = 3;
  int item_close = 4;
  int separator = 5;
};

/// Half-open index interval [begin, end).
struct TokenRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool contains(std::size_t t) const { return t >= begin && t < end; }
  friend bool operator==(const TokenRange&, const TokenRange&) = default;
};

/// A permutation of 0..n-1 stored as slot -> identity.
using Permutation = std::vector<int>;

bool IsPermutation(std::span<const int> p);
Permutation IdentityPermutation(std::size_t n);
Permutation InversePermutation(std::span<const int> p);

struct PromptLayout {
  std::vector<int> tokens;
  TokenRange context;
  /// Candidate segments in slot order, tiling [context.end, tokens.size()).
  std::vector<TokenRange> candidate_ranges;
  /// candidate_order[slot] = identity of the candidate placed at that slot.
  Permutation candidate_order;

  std::size_t num_candidates() const { return candidate_ranges.size(); }
  /// Slot holding a candidate identity.
  std::size_t SlotOf(int identity) const;
  /// Segment index of token t: -1 for context, else the slot.
  long SegmentOf(std::size_t t) const;
  std::span<const int> SegmentTokens(const TokenRange& range) const;

  friend bool operator==(const PromptLayout&, const PromptLayout&) = default;
};

using PositionIds = std::vector<int>;

/// Builds a layout from already-delimited segments. `blocks[slot]` is the
/// full token block (delimiters included) of the candidate at that slot and
/// `order[slot]` its identity. Throws LayoutError on an invalid structure.
PromptLayout MakeLayout(std::vector<int> context_tokens,
                        const std::vector<std::vector<int>>& blocks, Permutation order);

/// Serializes instruction, history and candidates. `candidates[i]` holds the
/// content tokens of identity i; slot s receives identity `order[s]`.
/// Throws LayoutError when the result exceeds `max_seq_len`.
PromptLayout AssemblePrompt(std::span<const int> instruction, std::span<const int> history,
                            const std::vector<std::vector<int>>& candidates,
                            std::span<const int> order, std::size_t max_seq_len,
                            const SpecialTokens& special = {});

/// Context attends context, each candidate attends itself and the context.
AttentionMask BuildSegmentMask(const PromptLayout& layout);
/// seg(t, u) && u <= t.
AttentionMask CombineCausal(const AttentionMask& seg);
AttentionMask CausalMask(std::size_t side);
/// The mask a mode feeds to the model.
AttentionMask BuildAttentionMask(const PromptLayout& layout, InvarianceMode mode);

PositionIds AssignPositions(const PromptLayout& layout, InvarianceMode mode);

/// New slot s holds the candidate previously at slot pi[s]. Throws
/// ContractError when pi is not a bijection over the slots.
PromptLayout PermuteLayout(const PromptLayout& layout, std::span<const int> pi);

/// Validates the tiling and ordering invariants; throws LayoutError.
void ValidateLayout(const PromptLayout& layout);

/// One row per query: '1' permitted, '.' forbidden.
std::string FormatMaskGrid(const AttentionMask& mask);
std::string FormatPositions(const PositionIds& positions);

}  // namespace invarirank
