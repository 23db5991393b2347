#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ibss/manifold.hpp"
#include "ibss/rng.hpp"

namespace ibss {

struct FactorizationConfig {
  int n_functions = 12;      // per side, library truncated in graded order
  double threshold = 0.05;
  // sigma is piecewise constant over cells, so raw central differences are
  // spike trains at the cell transitions and both sides spike at the same
  // instants; averaging sigma over a short window first restores a usable
  // derivative column
  int smooth_radius = 0;
  bool calibrate_null = false;  // estimate the null scale from shuffled pairings
  int null_reps = 16;
  std::uint64_t null_seed = 0x1B55;
};

struct FactorizationReport {
  double statistic = 0.0;
  double threshold = 0.0;       // the threshold actually applied
  bool factorizes = false;
  struct Entry {
    std::string pair_id;
    double normalized_cov = 0.0;
  };
  std::vector<Entry> breakdown;
  std::size_t skipped_zero_variance = 0;
  double null_scale = 0.0;  // 0 when calibration is off
};

// Cross-correlation of bounded test functions over (sigma, sigma_dot) between
// the two groups. Affine changes of either sigma cancel in the internal
// standardization, so the verdict only reacts to actual dependence.
FactorizationReport factorization_test(const SourceMap& map, const VelocitySeries& vs,
                                       const FactorizationConfig& config);
FactorizationReport factorization_test(const SourceMap& map, const VelocitySeries& vs,
                                       int n_functions, double threshold);

struct PartitionSearchConfig {
  int manifold_k = 12;
  double manifold_threshold = 0.10;
  ChartConfig chart;
  FactorizationConfig factorization;
};

struct PartitionCandidate {
  IndexGrouping grouping;
  ManifoldTest test_a;
  ManifoldTest test_b;
  bool manifold_passed = false;
  std::optional<FactorizationReport> factorization;
  std::string failure;  // non-empty when a stage could not run
  bool passed = false;
};

struct PartitionSearchResult {
  std::vector<PartitionCandidate> candidates;
  bool separable = false;
  int winning_index = -1;  // into candidates
  bool truncated = false;  // enumeration limited for large N
  // chart output of the winning grouping (or, short of a winner, the first
  // grouping whose clouds charted) kept for downstream evaluation
  int mapped_index = -1;
  std::optional<SourceMap> map;
  std::optional<Chart> chart_a;
  std::optional<Chart> chart_b;

  const IndexGrouping& winning_grouping() const;
};

// Enumerates index bipartitions (ascending d_A, lexicographic, up to A/B
// exchange), tests each multiplet cloud for its group dimension, charts and
// tests factorization for the survivors. Verdict is the first fully passing
// grouping in enumeration order.
PartitionSearchResult partition_search(const InvariantField& inv_base, const NeighborhoodIndex& idx,
                                       const VelocitySeries& vs,
                                       const PartitionSearchConfig& config);

struct LinearityThresholds {
  double direction_cov = 0.05;
  std::size_t min_cells = 10;
  bool smooth_sigma = false;  // average cell values over the adjacency stencil first
  FactorizationConfig factorization;
};

struct GroupDirections {
  Mat u_vectors;             // d rows spanning the constant gradient subspace
  double direction_cov = 0.0;
  std::size_t used_cells = 0;
  std::size_t skipped_cells = 0;
};

struct LinearityReport {
  std::vector<GroupDirections> groups;  // group A then group B
  bool directions_pass = false;
  bool linear = false;
  std::optional<FactorizationReport> hat_s_factorization;
};

// Checks whether the recovered coordinates are linear functions of the
// measurements: per-cell gradients of sigma against x must span a constant
// subspace per group, and the resulting linear readout must factorize.
LinearityReport linearity_test(const SourceMap& map, const VelocitySeries& vs,
                               const NeighborhoodIndex& idx, const LinearityThresholds& thresholds);

}  // namespace ibss
