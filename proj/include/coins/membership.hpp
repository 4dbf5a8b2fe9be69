#pragma once

#include <cstdint>
#include <vector>

namespace coins {

/// Cluster assignment μ, one cluster id per instance.
struct Membership {
  std::vector<std::uint32_t> assignment;  // n entries in [0, num_clusters)
  std::size_t num_clusters = 0;
  bool within_coarse = false;
  double objective = 0.0;  // Σ_i ‖w_i − proxy_{μ(i)}‖²

  bool operator==(const Membership&) const = default;
};

}  // namespace coins
