#pragma once

#include <string>
#include <vector>

#include "ibss/common.hpp"

namespace ibss {

// Uniformly sampled N-channel trajectory. Rows of `samples` are time steps.
struct TimeSeries {
  double dt = 0.0;
  Mat samples;
  std::vector<std::string> channel_names;

  int n_channels() const { return static_cast<int>(samples.cols()); }
  std::size_t length() const { return static_cast<std::size_t>(samples.rows()); }
};

// Validates dt > 0, N >= 2, length >= 3, all entries finite.
void validate_series(const TimeSeries& ts);

// Position and central-difference velocity at the interior samples.
// Index i corresponds to original sample i + 1.
struct VelocitySeries {
  double dt = 0.0;
  Mat positions;
  Mat velocities;

  int n_channels() const { return static_cast<int>(positions.cols()); }
  std::size_t length() const { return static_cast<std::size_t>(positions.rows()); }
};

enum class SeriesFormat { k_csv, k_binary };

// CSV with header "t,x1,...,xN" (uniform time column) or "dt=<v>,x1,...,xN".
// Binary: magic IBSS, version u16, N u16, length u64, dt f64, row-major f64,
// little-endian throughout.
TimeSeries load_series(const std::string& path, SeriesFormat format);
void save_series(const TimeSeries& ts, const std::string& path, SeriesFormat format);

enum class VelocityScheme { k_central };

VelocitySeries estimate_velocity(const TimeSeries& ts, VelocityScheme scheme = VelocityScheme::k_central);

}  // namespace ibss
