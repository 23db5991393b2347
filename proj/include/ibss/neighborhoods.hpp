#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "ibss/series.hpp"

namespace ibss {

struct NeighborhoodCell {
  Vec center;
  std::vector<std::size_t> member_indices;
};

// Partition of state space into local neighborhoods. Grid mode assigns each
// sample to exactly one retained cell; knn mode allows overlapping members.
struct NeighborhoodIndex {
  std::vector<NeighborhoodCell> cells;
  // undirected, stored once per pair with first < second
  std::vector<std::pair<std::size_t, std::size_t>> adjacency;
  std::size_t min_count = 0;
  bool disjoint_membership = true;
  // grid mode: cell id per velocity-series sample, -1 when the sample fell in
  // a dropped cell; knn mode: nearest retained center
  std::vector<std::ptrdiff_t> cell_of_sample;

  std::size_t n_cells() const { return cells.size(); }
  std::vector<std::vector<std::size_t>> adjacency_lists() const;
};

struct GridStrategy {
  int cells_per_axis = 8;
};

struct KnnStrategy {
  int k = 0;
};

// Default min_count covers estimating all moment entries through order 5.
std::size_t default_min_count(int n_channels);

NeighborhoodIndex build_neighborhoods(const VelocitySeries& vs, const GridStrategy& strategy,
                                      std::size_t min_count);
NeighborhoodIndex build_neighborhoods(const VelocitySeries& vs, const KnnStrategy& strategy,
                                      std::size_t min_count);

}  // namespace ibss
