#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

namespace invprune {

// Keep/drop bookkeeping for linear-layer weights. keep[i] is aligned with the
// network's layer list: byte-per-weight for linear layers, empty otherwise.
// Bias, batchnorm, and decoder entries are never pruned; the decoder's mask is
// all ones. prunable/kept count encoder weights only.
struct PruneMask {
  std::vector<std::vector<std::uint8_t>> keep;
  double requested_r = 1.0;
  std::size_t prunable = 0;
  std::size_t kept = 0;

  double achieved_ratio() const {
    if (kept == 0) return std::numeric_limits<double>::infinity();
    return static_cast<double>(prunable) / static_cast<double>(kept);
  }
};

}  // namespace invprune
