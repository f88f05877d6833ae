#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace mlmlab {

// n×n allow-matrix: row i lists which key positions j query i may attend to.
struct AttentionMask {
  std::size_t n = 0;
  std::vector<std::uint8_t> allowed;  // row-major, 1 = allowed

  static AttentionMask all_allowed(std::size_t n) { return {n, std::vector<std::uint8_t>(n * n, 1)}; }

  bool allows(std::size_t i, std::size_t j) const { return allowed[i * n + j] != 0; }
  std::size_t allowed_count() const {
    std::size_t c = 0;
    for (auto a : allowed) c += a != 0;
    return c;
  }
};

}  // namespace mlmlab
