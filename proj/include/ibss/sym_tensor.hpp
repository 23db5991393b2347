#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ibss/common.hpp"

namespace ibss {

// Fully symmetric tensor of a given order over indices {0..dim-1}.
// Only canonical (non-decreasing) index tuples are stored; any entry is read
// by sorting its indices first. A dense order-5 tensor at dim 12 has 248832
// entries against 4368 canonical ones, which is why this exists.
class SymTensor {
 public:
  SymTensor() = default;
  SymTensor(int dim, int order);

  int dim() const { return dim_; }
  int order() const { return order_; }
  bool empty() const { return values_.empty(); }

  // Number of canonical tuples: C(dim + order - 1, order).
  std::size_t size() const { return values_.size(); }

  // Canonical tuples in lexicographic order; shared per (dim, order).
  const std::vector<std::vector<int>>& tuples() const;

  // Count of distinct permutations of a canonical tuple.
  static std::size_t multiplicity(const std::vector<int>& tuple);

  double at(std::span<const int> idx) const;
  double at_flat(std::size_t flat) const { return values_[flat]; }
  double& at_flat(std::size_t flat) { return values_[flat]; }
  std::size_t flat_of(std::span<const int> idx) const;

  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  Mat to_matrix() const;
  static SymTensor from_matrix(const Mat& m);

  // Row-major dense expansion, dim^order entries.
  std::vector<double> dense() const;
  static SymTensor from_dense(int dim, int order, const std::vector<double>& d);

  // Mode-wise contraction out_{kl...} = sum_{k'l'...} m_{kk'} m_{ll'} ... in_{k'l'...}.
  // m need not be orthogonal; the result is read back canonically so full
  // symmetry is preserved exactly.
  SymTensor transform(const Mat& m) const;

  bool all_finite() const;

 private:
  int dim_ = 0;
  int order_ = 0;
  std::vector<double> values_;
};

}  // namespace ibss
