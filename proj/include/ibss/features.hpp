#pragma once

#include "ibss/audio.hpp"
#include "ibss/manifold.hpp"
#include "ibss/series.hpp"

namespace ibss {

struct FeatureConfig {
  double preemphasis = 0.97;
  double frame_len_ms = 25.0;
  double hop_ms = 5.0;
  int fft_size = 512;
  int n_mel = 12;
  double mel_lo_hz = 0.0;
  double mel_hi_hz = 8000.0;
  double log_floor = 1e-10;
  bool pair_average = true;  // halves the frame rate to 10 ms
};

// mel(f) = 2595 * log10(1 + f/700)
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangle weights, one row per filter, over fft_size/2+1 power bins.
Mat mel_filterbank(const FeatureConfig& config, int sample_rate);

// Log mel filter energies of Hann-windowed frames.
TimeSeries featurize(const WavData& audio, const FeatureConfig& config = {});

struct ReductionModel {
  Vec feature_mean;
  Mat global_basis;          // feature dim x kept components
  Vec explained;             // variance fraction per kept component
  Vec residual_profile;      // tail variance fraction of local fits vs dim
  double residual = 1.0;     // profile value at target_dim
  int intrinsic_dim_estimate = 0;
  double stitch_disagreement = 0.0;
  int target_dim = 0;
};

struct ReducedSeries {
  TimeSeries series;
  ReductionModel model;
};

// Global PCA prefix (top min(N,6) components) followed by stitched
// local-PCA charts at target_dim.
ReducedSeries reduce_dimension(const TimeSeries& features, int target_dim,
                               int neighborhood_count = 24, double residual_limit = 0.15,
                               int patch_k = 0);

}  // namespace ibss
