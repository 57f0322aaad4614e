#include "dxp/sum_tree.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

namespace dxp::replay {

SumTree::SumTree(std::size_t min_leaves)
    : capacity_(std::bit_ceil(std::max<std::size_t>(min_leaves, 1))), nodes_(2 * capacity_, 0.0) {}

void SumTree::set(std::size_t i, double priority) {
  if (i >= capacity_) {
    throw std::out_of_range("SumTree::set: leaf index out of range");
  }
  if (!(priority >= 0.0) || !std::isfinite(priority)) {
    throw std::invalid_argument("SumTree::set: priority must be finite and nonnegative");
  }
  std::size_t node = capacity_ + i;
  nodes_[node] = priority;
  // Recompute rather than add a delta so parents are exact sums of children.
  for (node /= 2; node >= 1; node /= 2) {
    nodes_[node] = nodes_[2 * node] + nodes_[2 * node + 1];
  }
}

std::size_t SumTree::find_prefix(double u) const {
  if (!(total() > 0.0)) {
    throw std::logic_error("SumTree::find_prefix: tree holds no priority mass");
  }
  std::size_t node = 1;
  while (node < capacity_) {
    const std::size_t left = 2 * node;
    const double left_sum = nodes_[left];
    if ((u <= left_sum && left_sum > 0.0) || nodes_[left + 1] <= 0.0) {
      node = left;
    } else {
      u -= left_sum;
      node = left + 1;
    }
  }
  return node - capacity_;
}

double SumTree::max_consistency_error() const {
  double worst = 0.0;
  for (std::size_t node = 1; node < capacity_; ++node) {
    worst = std::max(worst, std::abs(nodes_[node] - (nodes_[2 * node] + nodes_[2 * node + 1])));
  }
  return worst;
}

}  // namespace dxp::replay
