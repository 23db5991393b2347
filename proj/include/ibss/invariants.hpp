#pragma once

#include <string>
#include <vector>

#include "ibss/frames.hpp"

namespace ibss {

// Bipartition of the frame axes into groups A and B.
struct IndexGrouping {
  std::vector<int> group_a;
  std::vector<int> group_b;

  int d_a() const { return static_cast<int>(group_a.size()); }
  int d_b() const { return static_cast<int>(group_b.size()); }
};

IndexGrouping make_grouping(int n, std::vector<int> group_a);

// Frame-transformed correlations per cell, orders 3..max_order, plus the
// grouped multiplet vectors once build_multiplets has run. Invalid cells
// mirror the frame field's exclusions.
struct InvariantField {
  int n = 0;
  int max_order = 5;
  std::vector<std::vector<SymTensor>> cells;  // [cell][order - 3]
  std::vector<char> valid;

  IndexGrouping grouping;
  bool multiplets_built = false;
  std::vector<Vec> multiplet_a;  // per cell, empty when invalid
  std::vector<Vec> multiplet_b;
  std::vector<std::string> labels_a;  // e.g. "I_111", fixed ordering
  std::vector<std::string> labels_b;

  // per-string sampling noise, same layout as a cell entry, estimated by
  // smooth_invariant_field; empty until that runs
  std::vector<SymTensor> noise_scale;
  Vec noise_a;  // noise per multiplet coordinate, filled with the multiplets
  Vec noise_b;
};

// I_{kl...} = sum M_{kk'} M_{ll'} ... C_{k'l'...} for orders 3..max_order.
// The order-2 transform must come out as the identity (that is the whitening
// condition) and is asserted rather than stored.
std::vector<SymTensor> transform_correlations(const MFrame& frame, const MomentTensors& mt,
                                              int max_order);

InvariantField compute_invariant_field(const FrameField& frames, const MomentField& moments,
                                       int max_order);

// Count-weighted averaging of each cell's invariants with its neighbors.
// Per-cell estimates carry sampling noise that scales with the tail weight of
// the local velocity law; one or two passes trade a little blur along the
// underlying surface for a large variance cut. Requires aligned frames (the
// values must live in comparable axes) and runs before multiplet grouping.
InvariantField smooth_invariant_field(const InvariantField& field, const NeighborhoodIndex& idx,
                                      int passes);

// Fills multiplet vectors: all canonical index strings lying entirely inside
// one group, ordered by tensor order then lexicographically. Each group needs
// more strings than twice its dimension.
InvariantField build_multiplets(const InvariantField& field, const IndexGrouping& grouping);

struct ScalarityResult {
  Mat best_signed_permutation;
  double median_relative_error = 0.0;
};

// Compares invariant values of the same trajectory expressed in two
// coordinate systems. correspondence[i] pairs sample i's cell in the x field
// with its cell in the y field (-1 entries are skipped). Test harness only.
ScalarityResult scalarity_residual(const InvariantField& field_x, const InvariantField& field_y,
                                   const std::vector<std::pair<std::ptrdiff_t, std::ptrdiff_t>>& correspondence);

// All signed permutation matrices of size n (2^n * n! of them); n <= 4.
std::vector<Mat> enumerate_signed_permutations(int n);

}  // namespace ibss
