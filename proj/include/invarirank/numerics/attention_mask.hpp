#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace invarirank {

/// Square boolean matrix; entry (t, u) is true when query t may attend key u.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t side, bool fill)
      : side_(side), cells_(side * side, fill ? 1 : 0) {}

  std::size_t side() const { return side_; }

  bool operator()(std::size_t t, std::size_t u) const {
    return cells_[t * side_ + u] != 0;
  }
  void set(std::size_t t, std::size_t u, bool allowed) {
    cells_[t * side_ + u] = allowed ? 1 : 0;
  }

  /// Row t as a contiguous 0/1 run of length side().
  const std::uint8_t* row(std::size_t t) const {
    return cells_.data() + t * side_;
  }

  bool RowHasPermittedKey(std::size_t t) const {
    for (std::size_t u = 0; u < side_; ++u) {
      if (cells_[t * side_ + u] != 0) return true;
    }
    return false;
  }

  friend bool operator==(const AttentionMask&, const AttentionMask&) = default;

 private:
  std::size_t side_ = 0;
  std::vector<std::uint8_t> cells_;
};

}  // namespace invarirank
