#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ibss/neighborhoods.hpp"
#include "ibss/sym_tensor.hpp"

namespace ibss {

// Central velocity moments of one neighborhood. Orders above max_order are
// left empty. c2 is kept both as a matrix (for whitening) and implicitly as
// the order-2 tensor.
struct MomentTensors {
  Vec mean_velocity;
  Mat c2;
  SymTensor c3;
  SymTensor c4;
  SymTensor c5;
  std::size_t sample_count = 0;

  const SymTensor& tensor(int order) const;
};

struct MomentField {
  std::vector<MomentTensors> cells;
  int max_order = 5;
};

// Per-cell central moments of the velocities, orders 2..max_order.
// Two passes per cell: mean first, then centered products, which keeps
// fifth-order sums away from catastrophic cancellation.
MomentField local_moments(const VelocitySeries& vs, const NeighborhoodIndex& idx, int max_order);

// Joint density over (x, velocity) evaluated pointwise. Only the velocity
// argument varies during quadrature.
using Density = std::function<double(const Vec& x, const Vec& v)>;

struct QuadratureConfig {
  Vec lo;  // velocity box, one entry per channel
  Vec hi;
  int initial_points_per_axis = 17;  // composite Simpson, must be odd
  int max_refinements = 6;
  double tol = 1e-8;
};

// Central moment tensor of the conditional velocity density at a state point,
// by deterministic nested quadrature. Test oracle, not a pipeline stage.
SymTensor moments_from_density(const Density& density, const Vec& point, int order,
                               const QuadratureConfig& config);

// Checkpoint serialization into the section container format.
void save_moment_field(const MomentField& field, const std::string& path);
MomentField load_moment_field(const std::string& path);

}  // namespace ibss
