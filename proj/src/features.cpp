#include "ibss/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ibss/common.hpp"
#include "ibss/parallel.hpp"

namespace ibss {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Mat mel_filterbank(const FeatureConfig& config, int sample_rate) {
  const int n_bins = config.fft_size / 2 + 1;
  const double bin_hz = static_cast<double>(sample_rate) / config.fft_size;
  const double mel_lo = hz_to_mel(config.mel_lo_hz);
  const double mel_hi = hz_to_mel(config.mel_hi_hz);

  std::vector<double> edges(static_cast<std::size_t>(config.n_mel) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const double mel = mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                    static_cast<double>(config.n_mel + 1);
    edges[i] = mel_to_hz(mel);
  }

  Mat fb = Mat::Zero(config.n_mel, n_bins);
  for (int m = 0; m < config.n_mel; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double center = edges[static_cast<std::size_t>(m) + 1];
    const double hi = edges[static_cast<std::size_t>(m) + 2];
    if (center <= lo || hi <= center) {
      throw Error(ErrorCategory::k_invalid_argument, "mel filter edges collapse");
    }
    for (int k = 0; k < n_bins; ++k) {
      const double f = k * bin_hz;
      const double rise = (f - lo) / (center - lo);
      const double fall = (hi - f) / (hi - center);
      fb(m, k) = std::max(0.0, std::min(rise, fall));
    }
  }
  return fb;
}

TimeSeries featurize(const WavData& audio, const FeatureConfig& config) {
  if (audio.sample_rate <= 0) {
    throw Error(ErrorCategory::k_invalid_argument, "audio sample rate must be positive");
  }
  if (config.preemphasis < 0.0 || config.preemphasis >= 1.0) {
    throw Error(ErrorCategory::k_invalid_argument, "preemphasis must lie in [0, 1)");
  }
  if (config.frame_len_ms <= config.hop_ms || config.hop_ms <= 0.0) {
    throw Error(ErrorCategory::k_invalid_argument, "frame length must exceed the hop");
  }
  if (config.n_mel < 1) {
    throw Error(ErrorCategory::k_invalid_argument, "need at least one mel filter");
  }
  if (config.mel_hi_hz > 0.5 * audio.sample_rate || config.mel_hi_hz <= config.mel_lo_hz) {
    throw Error(ErrorCategory::k_invalid_argument, "mel band must fit below Nyquist");
  }

  const double fs = static_cast<double>(audio.sample_rate);
  const std::size_t frame_len =
      static_cast<std::size_t>(std::llround(config.frame_len_ms * 1e-3 * fs));
  const std::size_t hop = static_cast<std::size_t>(std::llround(config.hop_ms * 1e-3 * fs));
  if (config.fft_size < static_cast<int>(frame_len) ||
      (config.fft_size & (config.fft_size - 1)) != 0) {
    throw Error(ErrorCategory::k_invalid_argument, "FFT size must be a power of two >= frame");
  }
  if (audio.samples.size() < frame_len) {
    throw Error(ErrorCategory::k_insufficient_data, "waveform shorter than one frame");
  }

  std::vector<double> emphasized(audio.samples.size());
  emphasized[0] = audio.samples[0];
  for (std::size_t i = 1; i < audio.samples.size(); ++i) {
    emphasized[i] = audio.samples[i] - config.preemphasis * audio.samples[i - 1];
  }

  std::vector<double> window(frame_len);
  for (std::size_t i = 0; i < frame_len; ++i) {
    window[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * static_cast<double>(i) /
                                      static_cast<double>(frame_len - 1)));
  }
  const Mat fb = mel_filterbank(config, audio.sample_rate);

  const std::size_t n_frames = 1 + (audio.samples.size() - frame_len) / hop;
  Mat logs(static_cast<Eigen::Index>(n_frames), config.n_mel);
  parallel_for(n_frames, [&](std::size_t f) {
    std::vector<double> frame(static_cast<std::size_t>(config.fft_size), 0.0);
    const std::size_t start = f * hop;
    for (std::size_t i = 0; i < frame_len; ++i) {
      frame[i] = emphasized[start + i] * window[i];
    }
    const std::vector<double> power = power_spectrum(frame);
    Eigen::Map<const Vec> p(power.data(), static_cast<Eigen::Index>(power.size()));
    Vec energies = fb * p;
    for (int m = 0; m < config.n_mel; ++m) {
      logs(static_cast<Eigen::Index>(f), m) = std::log(std::max(energies(m), config.log_floor));
    }
  });

  TimeSeries out;
  if (config.pair_average) {
    const std::size_t n_out = n_frames / 2;
    if (n_out < 3) {
      throw Error(ErrorCategory::k_insufficient_data, "too few frames after pair averaging");
    }
    out.samples.resize(static_cast<Eigen::Index>(n_out), config.n_mel);
    for (std::size_t j = 0; j < n_out; ++j) {
      out.samples.row(static_cast<Eigen::Index>(j)) =
          0.5 * (logs.row(static_cast<Eigen::Index>(2 * j)) +
                 logs.row(static_cast<Eigen::Index>(2 * j + 1)));
    }
    out.dt = 2.0 * static_cast<double>(hop) / fs;
  } else {
    out.samples = logs;
    out.dt = static_cast<double>(hop) / fs;
  }
  for (int m = 0; m < config.n_mel; ++m) {
    out.channel_names.push_back("mel" + std::to_string(m + 1));
  }
  return out;
}

ReducedSeries reduce_dimension(const TimeSeries& features, int target_dim,
                               int neighborhood_count, double residual_limit, int patch_k) {
  validate_series(features);
  const int n = static_cast<int>(features.n_channels());
  const std::size_t m = features.length();
  if (target_dim < 1 || target_dim >= n) {
    throw Error(ErrorCategory::k_invalid_argument, "target dimension must lie in [1, N)");
  }
  if (neighborhood_count < 2) {
    throw Error(ErrorCategory::k_invalid_argument, "need at least two neighborhoods");
  }
  if (m < 4 * static_cast<std::size_t>(neighborhood_count)) {
    throw Error(ErrorCategory::k_insufficient_data,
                "too few samples for the requested neighborhood count");
  }

  ReductionModel model;
  model.target_dim = target_dim;
  model.feature_mean = features.samples.colwise().mean().transpose();
  Mat centered = features.samples.rowwise() - model.feature_mean.transpose();
  Mat cov = centered.transpose() * centered / static_cast<double>(m);
  Eigen::SelfAdjointEigenSolver<Mat> es(cov);
  if (es.info() != Eigen::Success) {
    throw Error(ErrorCategory::k_numeric, "feature covariance eigensolve failed");
  }
  const int n_keep = std::min(n, 6);
  const double total_var = std::max(es.eigenvalues().sum(), 1e-300);
  model.global_basis.resize(n, n_keep);
  model.explained.resize(n_keep);
  for (int j = 0; j < n_keep; ++j) {
    Vec col = es.eigenvectors().col(n - 1 - j);
    int arg = 0;
    col.cwiseAbs().maxCoeff(&arg);
    if (col[arg] < 0.0) col = -col;
    model.global_basis.col(j) = col;
    model.explained(j) = es.eigenvalues()(n - 1 - j) / total_var;
  }
  Mat prefix = centered * model.global_basis;

  int k_eff = patch_k;
  if (k_eff <= 0) {
    // aim for roughly 3x coverage so patches overlap generously
    k_eff = static_cast<int>(
        std::min<std::size_t>(m, std::max<std::size_t>(
                                     3 * m / static_cast<std::size_t>(neighborhood_count), 24)));
  }
  StitchResult stitch = stitch_local_pca(prefix, target_dim, neighborhood_count, k_eff);

  model.residual_profile.resize(n_keep);
  double weight_total = 0.0;
  Vec tail_acc = Vec::Zero(n_keep);
  for (Eigen::Index p = 0; p < stitch.patch_spectra.rows(); ++p) {
    const double w = static_cast<double>(stitch.patch_sizes[static_cast<std::size_t>(p)]);
    const double spectrum_total = stitch.patch_spectra.row(p).sum();
    if (spectrum_total <= 0.0) continue;
    weight_total += w;
    double tail = spectrum_total;
    for (int d = 0; d < n_keep; ++d) {
      tail -= stitch.patch_spectra(p, d);
      tail_acc(d) += w * std::max(tail, 0.0) / spectrum_total;
    }
  }
  if (weight_total <= 0.0) {
    throw Error(ErrorCategory::k_degenerate, "all local fits saw zero variance");
  }
  model.residual_profile = tail_acc / weight_total;
  model.residual = model.residual_profile(target_dim - 1);
  model.intrinsic_dim_estimate = n_keep;
  for (int d = 1; d <= n_keep; ++d) {
    if (model.residual_profile(d - 1) <= residual_limit) {
      model.intrinsic_dim_estimate = d;
      break;
    }
  }
  model.stitch_disagreement = stitch.overlap_disagreement;
  if (model.residual > residual_limit) {
    throw Error(ErrorCategory::k_degenerate,
                "reduction residual " + std::to_string(model.residual) + " at dimension " +
                    std::to_string(target_dim) + " exceeds " + std::to_string(residual_limit) +
                    "; estimated intrinsic dimension " +
                    std::to_string(model.intrinsic_dim_estimate));
  }

  ReducedSeries out;
  out.model = model;
  out.series.dt = features.dt;
  out.series.samples = stitch.coords;
  for (int j = 0; j < target_dim; ++j) {
    out.series.channel_names.push_back("x" + std::to_string(j + 1));
  }
  return out;
}

}  // namespace ibss
