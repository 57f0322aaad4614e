#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dxp::replay {

// Complete binary tree of priority sums. Node 1 is the root and leaf i
// lives at node capacity + i; node 0 is unused.
class SumTree {
 public:
  // `min_leaves` is rounded up to a power of two.
  explicit SumTree(std::size_t min_leaves);

  std::size_t capacity() const { return capacity_; }
  double total() const { return nodes_[1]; }
  double leaf(std::size_t i) const { return nodes_[capacity_ + i]; }
  std::span<const double> nodes() const { return nodes_; }

  // Sets leaf i and refreshes its ancestors.
  void set(std::size_t i, double priority);

  // Smallest leaf j whose inclusive prefix sum is >= u, for u in (0, total].
  // Values past the total clamp to the last positive leaf.
  std::size_t find_prefix(double u) const;

  // Largest absolute violation of node == left + right over all internal
  // nodes.
  double max_consistency_error() const;

 private:
  std::size_t capacity_;
  std::vector<double> nodes_;
};

}  // namespace dxp::replay
