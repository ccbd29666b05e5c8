#include "invarirank/layout.hpp"

#include <algorithm>
#include <sstream>

#include "invarirank/errors.hpp"

namespace invarirank {

bool UsesSegmentMask(InvarianceMode mode) {
  return mode == InvarianceMode::kAttnOnly || mode == InvarianceMode::kFull;
}

bool UsesSharedFraming(InvarianceMode mode) {
  return mode == InvarianceMode::kPosOnly || mode == InvarianceMode::kFull;
}

std::string_view ModeName(InvarianceMode mode) {
  switch (mode) {
    case InvarianceMode::kStandard:
      return "standard";
    case InvarianceMode::kPosOnly:
      return "pos";
    case InvarianceMode::kAttnOnly:
      return "attn";
    case InvarianceMode::kFull:
      return "full";
  }
  return "unknown";
}

InvarianceMode ParseMode(std::string_view name) {
  for (InvarianceMode mode : kAllModes) {
    if (ModeName(mode) == name) return mode;
  }
  throw ConfigError("unknown mode '" + std::string(name) +
                    "', expected one of standard|pos|attn|full");
}

bool IsPermutation(std::span<const int> p) {
  std::vector<bool> seen(p.size(), false);
  for (int v : p) {
    if (v < 0 || static_cast<std::size_t>(v) >= p.size() || seen[static_cast<std::size_t>(v)]) {
      return false;
    }
    seen[static_cast<std::size_t>(v)] = true;
  }
  return true;
}

Permutation IdentityPermutation(std::size_t n) {
  Permutation p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<int>(i);
  return p;
}

Permutation InversePermutation(std::span<const int> p) {
  if (!IsPermutation(p)) throw ContractError("inverse of a non-permutation");
  Permutation inv(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) inv[static_cast<std::size_t>(p[i])] = static_cast<int>(i);
  return inv;
}

std::size_t PromptLayout::SlotOf(int identity) const {
  for (std::size_t s = 0; s < candidate_order.size(); ++s) {
    if (candidate_order[s] == identity) return s;
  }
  throw ContractError("candidate identity " + std::to_string(identity) + " not in layout");
}

long PromptLayout::SegmentOf(std::size_t t) const {
  if (context.contains(t)) return -1;
  // Candidate ranges are sorted and contiguous.
  auto it = std::upper_bound(candidate_ranges.begin(), candidate_ranges.end(), t,
                             [](std::size_t v, const TokenRange& r) { return v < r.end; });
  if (it == candidate_ranges.end() || !it->contains(t)) {
    throw ContractError("token index " + std::to_string(t) + " outside the layout");
  }
  return static_cast<long>(it - candidate_ranges.begin());
}

std::span<const int> PromptLayout::SegmentTokens(const TokenRange& range) const {
  return std::span<const int>(tokens).subspan(range.begin, range.size());
}

void ValidateLayout(const PromptLayout& layout) {
  if (layout.candidate_ranges.empty()) throw LayoutError("layout has no candidates");
  if (layout.context.begin != 0 || layout.context.size() == 0) {
    throw LayoutError("context segment must be non-empty and start the sequence");
  }
  std::size_t cursor = layout.context.end;
  for (const TokenRange& r : layout.candidate_ranges) {
    if (r.begin != cursor || r.size() == 0) {
      throw LayoutError("candidate segments must be non-empty and tile the tail contiguously");
    }
    cursor = r.end;
  }
  if (cursor != layout.tokens.size()) throw LayoutError("segments do not cover the sequence");
  if (layout.candidate_order.size() != layout.candidate_ranges.size() ||
      !IsPermutation(layout.candidate_order)) {
    throw LayoutError("candidate_order is not a permutation of the slots");
  }
}

PromptLayout MakeLayout(std::vector<int> context_tokens,
                        const std::vector<std::vector<int>>& blocks, Permutation order) {
  PromptLayout layout;
  layout.tokens = std::move(context_tokens);
  layout.context = {0, layout.tokens.size()};
  for (const auto& block : blocks) {
    const std::size_t begin = layout.tokens.size();
    layout.tokens.insert(layout.tokens.end(), block.begin(), block.end());
    layout.candidate_ranges.push_back({begin, layout.tokens.size()});
  }
  layout.candidate_order = std::move(order);
  ValidateLayout(layout);
  return layout;
}

PromptLayout AssemblePrompt(std::span<const int> instruction, std::span<const int> history,
                            const std::vector<std::vector<int>>& candidates,
                            std::span<const int> order, std::size_t max_seq_len,
                            const SpecialTokens& special) {
  if (candidates.empty()) throw LayoutError("at least one candidate is required");
  if (order.size() != candidates.size() || !IsPermutation(order)) {
    throw LayoutError("order must be a bijection over the candidates");
  }
  std::size_t total = 2 + instruction.size() + history.size() + (history.empty() ? 0 : 1);
  for (const auto& c : candidates) total += c.size() + 2;
  if (total > max_seq_len) {
    throw LayoutError("prompt of " + std::to_string(total) + " tokens exceeds max_seq_len " +
                      std::to_string(max_seq_len));
  }

  std::vector<int> context;
  context.reserve(total);
  context.push_back(special.span_open);
  context.insert(context.end(), instruction.begin(), instruction.end());
  if (!history.empty()) {
    context.push_back(special.separator);
    context.insert(context.end(), history.begin(), history.end());
  }
  context.push_back(special.span_close);

  std::vector<std::vector<int>> blocks;
  blocks.reserve(candidates.size());
  for (int identity : order) {
    const auto& content = candidates[static_cast<std::size_t>(identity)];
    std::vector<int> block;
    block.reserve(content.size() + 2);
    block.push_back(special.item_open);
    block.insert(block.end(), content.begin(), content.end());
    block.push_back(special.item_close);
    blocks.push_back(std::move(block));
  }
  return MakeLayout(std::move(context), blocks, Permutation(order.begin(), order.end()));
}

AttentionMask BuildSegmentMask(const PromptLayout& layout) {
  ValidateLayout(layout);
  const std::size_t n = layout.tokens.size();
  AttentionMask mask(n, false);
  const TokenRange& ctx = layout.context;
  for (std::size_t t = ctx.begin; t < ctx.end; ++t) {
    for (std::size_t u = ctx.begin; u < ctx.end; ++u) mask.set(t, u, true);
  }
  for (const TokenRange& seg : layout.candidate_ranges) {
    for (std::size_t t = seg.begin; t < seg.end; ++t) {
      for (std::size_t u = ctx.begin; u < ctx.end; ++u) mask.set(t, u, true);
      for (std::size_t u = seg.begin; u < seg.end; ++u) mask.set(t, u, true);
    }
  }
  return mask;
}

AttentionMask CombineCausal(const AttentionMask& seg) {
  AttentionMask out = seg;
  for (std::size_t t = 0; t < seg.side(); ++t) {
    for (std::size_t u = t + 1; u < seg.side(); ++u) out.set(t, u, false);
  }
  return out;
}

AttentionMask CausalMask(std::size_t side) { return CombineCausal(AttentionMask(side, true)); }

AttentionMask BuildAttentionMask(const PromptLayout& layout, InvarianceMode mode) {
  if (UsesSegmentMask(mode)) return CombineCausal(BuildSegmentMask(layout));
  ValidateLayout(layout);
  return CausalMask(layout.tokens.size());
}

PositionIds AssignPositions(const PromptLayout& layout, InvarianceMode mode) {
  ValidateLayout(layout);
  PositionIds positions(layout.tokens.size());
  for (std::size_t t = 0; t < positions.size(); ++t) positions[t] = static_cast<int>(t) + 1;
  if (UsesSharedFraming(mode)) {
    const int frame = static_cast<int>(layout.context.size());
    for (const TokenRange& seg : layout.candidate_ranges) {
      for (std::size_t t = seg.begin; t < seg.end; ++t) {
        positions[t] = frame + 1 + static_cast<int>(t - seg.begin);
      }
    }
  }
  return positions;
}

PromptLayout PermuteLayout(const PromptLayout& layout, std::span<const int> pi) {
  if (pi.size() != layout.num_candidates() || !IsPermutation(pi)) {
    throw ContractError("permute_layout: pi is not a bijection over " +
                        std::to_string(layout.num_candidates()) + " slots");
  }
  std::vector<int> context(layout.tokens.begin(),
                           layout.tokens.begin() + static_cast<std::ptrdiff_t>(layout.context.end));
  std::vector<std::vector<int>> blocks;
  Permutation order;
  for (int from : pi) {
    const TokenRange& r = layout.candidate_ranges[static_cast<std::size_t>(from)];
    auto seg = layout.SegmentTokens(r);
    blocks.emplace_back(seg.begin(), seg.end());
    order.push_back(layout.candidate_order[static_cast<std::size_t>(from)]);
  }
  return MakeLayout(std::move(context), blocks, std::move(order));
}

std::string FormatMaskGrid(const AttentionMask& mask) {
  std::string out;
  out.reserve(mask.side() * (mask.side() + 1));
  for (std::size_t t = 0; t < mask.side(); ++t) {
    for (std::size_t u = 0; u < mask.side(); ++u) out.push_back(mask(t, u) ? '1' : '.');
    out.push_back('\n');
  }
  return out;
}

std::string FormatPositions(const PositionIds& positions) {
  std::ostringstream out;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (i > 0) out << ' ';
    out << positions[i];
  }
  out << '\n';
  return out.str();
}

}  // namespace invarirank
