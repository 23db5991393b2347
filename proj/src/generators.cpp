#include "ibss/generators.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ibss/common.hpp"

namespace ibss {
namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 step keeps per-stream generators decorrelated
  std::uint64_t z = seed + salt * 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double smoothstep(double tau) { return tau * tau * (3.0 - 2.0 * tau); }

StateProcess random_target_process(Rng& rng, double duration, double interval_lo,
                                   double interval_hi, double value_lo, double value_hi) {
  if (duration <= 0.0 || interval_lo <= 0.0 || interval_hi < interval_lo) {
    throw Error(ErrorCategory::k_invalid_argument, "bad state process parameters");
  }
  StateProcess p;
  p.duration = duration;
  double t = 0.0;
  p.knot_times.push_back(0.0);
  p.targets.push_back(rng.uniform(value_lo, value_hi));
  while (t < duration) {
    t += rng.uniform(interval_lo, interval_hi);
    p.knot_times.push_back(t);
    p.targets.push_back(rng.uniform(value_lo, value_hi));
  }
  return p;
}

}  // namespace

double StateProcess::value(double t) const {
  if (knot_times.empty()) {
    throw Error(ErrorCategory::k_invalid_argument, "state process has no knots");
  }
  if (t <= knot_times.front()) return targets.front();
  if (t >= knot_times.back()) return targets.back();
  auto it = std::upper_bound(knot_times.begin(), knot_times.end(), t);
  std::size_t hi = static_cast<std::size_t>(it - knot_times.begin());
  std::size_t lo = hi - 1;
  double span = knot_times[hi] - knot_times[lo];
  double tau = span > 0.0 ? (t - knot_times[lo]) / span : 0.0;
  return targets[lo] + (targets[hi] - targets[lo]) * smoothstep(tau);
}

std::vector<double> StateProcess::sample(double dt) const {
  if (dt <= 0.0) {
    throw Error(ErrorCategory::k_invalid_argument, "state sample step must be positive");
  }
  std::size_t n = static_cast<std::size_t>(std::floor(duration / dt)) + 1;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = value(static_cast<double>(i) * dt);
  return out;
}

StateProcess synth_state_process(const VoiceSpec& spec, double duration_s) {
  Rng rng(spec.seed);
  return random_target_process(rng, duration_s, spec.state_interval_lo_ms * 1e-3,
                               spec.state_interval_hi_ms * 1e-3, 0.0, 1.0);
}

std::vector<double> synth_voice(const VoiceSpec& spec, const StateProcess& states,
                                int sample_rate) {
  if (sample_rate <= 0) {
    throw Error(ErrorCategory::k_invalid_argument, "sample rate must be positive");
  }
  if (spec.pitch_hz <= 0.0) {
    throw Error(ErrorCategory::k_invalid_argument, "pitch must be positive");
  }
  const double fs = static_cast<double>(sample_rate);
  const double duration = states.duration;
  const std::size_t n = static_cast<std::size_t>(std::llround(duration * fs));
  std::vector<double> wave(n, 0.0);

  const std::size_t n_pulses = static_cast<std::size_t>(std::floor(duration * spec.pitch_hz));
  // response persists until the envelope decays to 1e-4 of its onset value
  const double decay_log = std::log(1e4);

  for (std::size_t p = 0; p < n_pulses; ++p) {
    const double t0 = static_cast<double>(p) / spec.pitch_hz;
    const double u = states.value(t0);
    const double freq = spec.freq_hz(u);
    const double gamma = spec.damping(u);
    const double amp = spec.amp(u);
    if (freq <= 0.0 || freq >= 0.5 * fs) {
      throw Error(ErrorCategory::k_invalid_argument,
                  "resonant frequency " + std::to_string(freq) +
                      " Hz outside (0, Nyquist) for sample rate " + std::to_string(sample_rate));
    }
    if (gamma <= 0.0) {
      throw Error(ErrorCategory::k_invalid_argument, "damping must be positive");
    }
    const std::size_t n0 = static_cast<std::size_t>(std::llround(t0 * fs));
    if (n0 >= n) break;
    std::size_t len = static_cast<std::size_t>(std::ceil(decay_log / gamma * fs));
    len = std::min(len, n - n0);
    const double omega = 2.0 * M_PI * freq / fs;
    const double decay = std::exp(-gamma / fs);
    // incremental complex rotation avoids a sin() call per sample
    double env = amp;
    double ph_re = 1.0, ph_im = 0.0;
    const double rot_re = std::cos(omega), rot_im = std::sin(omega);
    for (std::size_t k = 0; k < len; ++k) {
      wave[n0 + k] += env * ph_im;
      env *= decay;
      const double re = ph_re * rot_re - ph_im * rot_im;
      ph_im = ph_re * rot_im + ph_im * rot_re;
      ph_re = re;
    }
  }
  return wave;
}

SceneSpec default_scene(double duration_s, std::uint64_t seed) {
  SceneSpec scene;
  VoiceSpec v1;
  v1.pitch_hz = 100.0;
  v1.amp = {0.8, 0.4};
  v1.freq_hz = {400.0, 700.0};
  v1.damping = {80.0, 60.0};
  v1.seed = mix_seed(seed, 1);
  VoiceSpec v2;
  v2.pitch_hz = 160.0;
  v2.amp = {0.8, 0.4};
  v2.freq_hz = {1400.0, 1200.0};
  v2.damping = {80.0, 60.0};
  v2.seed = mix_seed(seed, 2);
  scene.voices = {v1, v2};
  scene.relative_gain_db = {0.0, -2.4};
  scene.duration_s = duration_s;
  return scene;
}

SceneResult mix_scene(const SceneSpec& spec, double truth_dt) {
  if (spec.voices.empty()) {
    throw Error(ErrorCategory::k_invalid_argument, "scene needs at least one voice");
  }
  if (spec.relative_gain_db.size() != spec.voices.size()) {
    throw Error(ErrorCategory::k_invalid_argument, "one relative gain per voice required");
  }
  if (spec.duration_s <= 0.0 || truth_dt <= 0.0) {
    throw Error(ErrorCategory::k_invalid_argument, "duration and truth step must be positive");
  }
  if (spec.bit_depth != 16) {
    throw Error(ErrorCategory::k_invalid_argument, "only 16-bit output is supported");
  }

  const std::size_t n_voices = spec.voices.size();
  std::vector<StateProcess> states(n_voices);
  std::vector<std::vector<double>> waves(n_voices);
  for (std::size_t v = 0; v < n_voices; ++v) {
    states[v] = synth_state_process(spec.voices[v], spec.duration_s);
    waves[v] = synth_voice(spec.voices[v], states[v], spec.sample_rate);
  }

  std::vector<double> energy(n_voices, 0.0);
  for (std::size_t v = 0; v < n_voices; ++v) {
    for (double s : waves[v]) energy[v] += s * s;
    if (energy[v] <= 0.0) {
      throw Error(ErrorCategory::k_degenerate, "voice " + std::to_string(v + 1) + " is silent");
    }
  }

  SceneResult result;
  result.applied_scale.assign(n_voices, 1.0);
  for (std::size_t v = 0; v < n_voices; ++v) {
    const double want_ratio = std::pow(10.0, spec.relative_gain_db[v] / 10.0);
    result.applied_scale[v] = std::sqrt(want_ratio * energy[0] / energy[v]);
  }
  for (std::size_t v = 0; v < n_voices; ++v) {
    const double got_db = 10.0 * std::log10(result.applied_scale[v] * result.applied_scale[v] *
                                            energy[v] / energy[0]);
    if (std::abs(got_db - spec.relative_gain_db[v]) > 0.1) {
      throw Error(ErrorCategory::k_numeric, "voice gain deviates from requested ratio");
    }
  }

  const std::size_t n = waves[0].size();
  result.waveform.assign(n, 0.0);
  for (std::size_t v = 0; v < n_voices; ++v) {
    const double s = result.applied_scale[v];
    for (std::size_t i = 0; i < n; ++i) result.waveform[i] += s * waves[v][i];
  }
  double peak = 0.0;
  for (double s : result.waveform) peak = std::max(peak, std::abs(s));
  if (peak <= 0.0) {
    throw Error(ErrorCategory::k_degenerate, "mixed scene is silent");
  }
  const double norm = 0.99 / peak;
  for (double& s : result.waveform) s *= norm;

  result.pcm.resize(n);
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double q = std::round(result.waveform[i] * 32767.0);
    if (q > 32767.0 || q < -32768.0) {
      ++clipped;
      q = std::clamp(q, -32768.0, 32767.0);
    }
    result.pcm[i] = static_cast<std::int16_t>(q);
  }
  if (static_cast<double>(clipped) > 1e-3 * static_cast<double>(n)) {
    throw Error(ErrorCategory::k_numeric, "more than 0.1% of samples clipped");
  }

  std::size_t n_truth = static_cast<std::size_t>(std::floor(spec.duration_s / truth_dt)) + 1;
  result.ground_truth.dt = truth_dt;
  result.ground_truth.samples.resize(n_truth, static_cast<Eigen::Index>(n_voices));
  result.ground_truth.channel_names.clear();
  for (std::size_t v = 0; v < n_voices; ++v) {
    std::vector<double> track = states[v].sample(truth_dt);
    for (std::size_t i = 0; i < n_truth; ++i) {
      result.ground_truth.samples(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(v)) =
          track[i];
    }
    result.ground_truth.channel_names.push_back("state_voice" + std::to_string(v + 1));
  }
  return result;
}

DiffeoSpec identity_diffeo(int n) {
  if (n < 1) throw Error(ErrorCategory::k_invalid_argument, "dimension must be positive");
  DiffeoLayer layer;
  layer.rotation = Mat::Identity(n, n);
  layer.a.assign(static_cast<std::size_t>(n), 0.0);
  layer.b.assign(static_cast<std::size_t>(n), 1.0);
  layer.c.assign(static_cast<std::size_t>(n), 0.0);
  return DiffeoSpec{{layer}};
}

DiffeoSpec random_diffeo(int n, std::uint64_t seed, double strength, int n_layers) {
  if (n < 1 || n_layers < 1) {
    throw Error(ErrorCategory::k_invalid_argument, "bad diffeomorphism shape");
  }
  if (strength < 0.0) {
    throw Error(ErrorCategory::k_invalid_argument, "warp strength must be nonnegative");
  }
  Rng rng(mix_seed(seed, 0xD1FFull));
  DiffeoSpec spec;
  for (int layer_i = 0; layer_i < n_layers; ++layer_i) {
    DiffeoLayer layer;
    Mat g(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) g(i, j) = rng.normal();
    Eigen::HouseholderQR<Mat> qr(g);
    Mat q = qr.householderQ();
    Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int j = 0; j < n; ++j) {
      if (r(j, j) < 0.0) q.col(j) *= -1.0;
    }
    layer.rotation = q;
    layer.a.resize(static_cast<std::size_t>(n));
    layer.b.resize(static_cast<std::size_t>(n));
    layer.c.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      // a >= 0 with b > 0 keeps each warp strictly increasing
      layer.a[static_cast<std::size_t>(i)] = strength * rng.uniform(0.5, 1.0);
      layer.b[static_cast<std::size_t>(i)] = rng.uniform(1.5, 3.0);
      layer.c[static_cast<std::size_t>(i)] = rng.uniform(0.1, 0.9);
    }
    spec.layers.push_back(std::move(layer));
  }
  return spec;
}

namespace {

double warp_one(double x, double a, double b, double c) {
  return x + a * std::tanh(b * (x - c));
}

double unwarp_one(double y, double a, double b, double c, double tol) {
  if (a == 0.0) return y;
  // strictly increasing with slope >= 1, so Newton from a shifted start converges
  double x = y - a * std::tanh(b * (y - c));
  for (int it = 0; it < 100; ++it) {
    const double th = std::tanh(b * (x - c));
    const double f = x + a * th - y;
    if (std::abs(f) < tol) return x;
    const double slope = 1.0 + a * b * (1.0 - th * th);
    x -= f / slope;
  }
  throw Error(ErrorCategory::k_numeric, "warp inversion did not converge");
}

}  // namespace

Vec diffeo_forward(const DiffeoSpec& spec, Vec x) {
  for (const DiffeoLayer& layer : spec.layers) {
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const std::size_t k = static_cast<std::size_t>(i);
      x(i) = warp_one(x(i), layer.a[k], layer.b[k], layer.c[k]);
    }
    x = layer.rotation * x;
  }
  return x;
}

Vec diffeo_inverse(const DiffeoSpec& spec, Vec y, double tol) {
  for (auto it = spec.layers.rbegin(); it != spec.layers.rend(); ++it) {
    y = it->rotation.transpose() * y;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const std::size_t k = static_cast<std::size_t>(i);
      y(i) = unwarp_one(y(i), it->a[k], it->b[k], it->c[k], tol);
    }
  }
  return y;
}

double diffeo_jacobian_det(const DiffeoSpec& spec, const Vec& x, double step) {
  const Eigen::Index n = x.size();
  Mat j(n, n);
  for (Eigen::Index col = 0; col < n; ++col) {
    Vec hi = x, lo = x;
    hi(col) += step;
    lo(col) -= step;
    j.col(col) = (diffeo_forward(spec, hi) - diffeo_forward(spec, lo)) / (2.0 * step);
  }
  return j.determinant();
}

TimeSeries apply_diffeomorphism(const TimeSeries& ts, const DiffeoSpec& spec) {
  validate_series(ts);
  if (spec.dim() != static_cast<int>(ts.n_channels())) {
    throw Error(ErrorCategory::k_invalid_argument, "map dimension does not match series");
  }
  TimeSeries out;
  out.dt = ts.dt;
  out.samples.resizeLike(ts.samples);
  for (Eigen::Index i = 0; i < ts.samples.rows(); ++i) {
    out.samples.row(i) = diffeo_forward(spec, ts.samples.row(i).transpose()).transpose();
  }
  out.channel_names.reserve(ts.n_channels());
  for (std::size_t k = 0; k < static_cast<std::size_t>(ts.n_channels()); ++k) {
    out.channel_names.push_back("x" + std::to_string(k + 1));
  }
  return out;
}

namespace {

// First-order source: a random-target track on [0,1] with smoothstep ramps.
// Rises use short ramps and falls long ones, so the speed conditional on any
// state value is a mixture of a fast positive and a slow negative scale; the
// duration ratio sets both the velocity skewness and how far the conditional
// fourth moment sits above the single-scale baseline.  The level gains scale
// ramp durations by the ramp midpoint (rises quicken toward the top, falls
// slacken), so the fast/slow contrast grows with the state and every
// conditional moment slopes along it.  That monotone profile is what keeps
// the per-cell statistics distinct across the state range.
struct SourcePersonality {
  double up_lo_s;  // rise-ramp duration bounds
  double up_hi_s;
  double down_lo_s;  // fall-ramp duration bounds
  double down_hi_s;
  double up_level_gain;    // in [0,1), rise shortening per unit of midpoint
  double down_level_gain;  // fall lengthening per unit of midpoint
  double target_tilt;      // >0 favors high targets, exponent of the power-law draw
};

constexpr SourcePersonality k_low_kurt{0.10, 0.16, 0.25, 0.40, 0.3, 0.9, 0.0};
constexpr SourcePersonality k_high_kurt{0.10, 0.16, 0.40, 0.64, 0.6, 0.9, 0.0};

double draw_tilted_target(Rng& rng, double tilt) {
  const double u = rng.uniform();
  if (tilt > 0.0) return std::pow(u, 1.0 / (1.0 + tilt));
  if (tilt < 0.0) return 1.0 - std::pow(u, 1.0 / (1.0 - tilt));
  return u;
}

// lead time dropped from the front of every simulated track so the first
// samples do not share the deterministic knot at t = 0
constexpr double k_lead_s = 2.0;

constexpr double k_carrier_lo_s = 0.2;
constexpr double k_carrier_hi_s = 0.4;
constexpr std::size_t k_burn_in = 1000;

StateProcess build_source_track(Rng& rng, double duration, const SourcePersonality& p) {
  StateProcess track;
  track.duration = duration;
  double prev = draw_tilted_target(rng, p.target_tilt);
  track.knot_times.push_back(0.0);
  track.targets.push_back(prev);
  double t = 0.0;
  while (t < duration) {
    const double next = draw_tilted_target(rng, p.target_tilt);
    const double mid = 0.5 * (prev + next);
    t += next >= prev ? rng.uniform(p.up_lo_s, p.up_hi_s) * (1.0 - p.up_level_gain * mid)
                      : rng.uniform(p.down_lo_s, p.down_hi_s) * (1.0 + p.down_level_gain * mid);
    track.knot_times.push_back(t);
    track.targets.push_back(next);
    prev = next;
  }
  return track;
}

Mat simulate_smoothed_sources(const std::vector<SourcePersonality>& personalities,
                              std::size_t n_samples, double dt, std::uint64_t seed) {
  const std::size_t n_src = personalities.size();
  const double duration = k_lead_s + static_cast<double>(n_samples + 1) * dt + 1.0;

  Mat out(static_cast<Eigen::Index>(n_samples), static_cast<Eigen::Index>(n_src));
  for (std::size_t k = 0; k < n_src; ++k) {
    Rng rng(mix_seed(seed, 0x50 + k));
    const StateProcess track = build_source_track(rng, duration, personalities[k]);
    for (std::size_t i = 0; i < n_samples; ++i) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          track.value(k_lead_s + static_cast<double>(i) * dt);
    }
  }
  return out;
}

// Second-order pair: two damped driven oscillators.  Coupling modulates each
// oscillator's damping by the partner's displacement, so the conditional
// velocity statistics of either coordinate depend on both positions while
// the pair stays dissipative at any coupling strength.
Mat simulate_oscillator_pair(double coupling, std::size_t n_samples, double dt,
                             std::uint64_t seed) {
  const std::size_t total = n_samples + k_burn_in;
  const double duration = static_cast<double>(total) * dt + 1.0;

  StateProcess carrier[2];
  for (int k = 0; k < 2; ++k) {
    Rng rng(mix_seed(seed, 0x05C + static_cast<std::uint64_t>(k)));
    carrier[k] = random_target_process(rng, duration, k_carrier_lo_s, k_carrier_hi_s, -1.0, 1.0);
  }

  const double omega[2] = {5.0, 8.2};
  const double zeta[2] = {0.35, 0.45};
  const double drive[2] = {7.0, 18.0};

  Mat out(static_cast<Eigen::Index>(n_samples), 2);
  double p[2] = {0.5, 0.5};
  double u[2] = {0.0, 0.0};
  for (std::size_t i = 0; i < total; ++i) {
    if (i >= k_burn_in) {
      out(static_cast<Eigen::Index>(i - k_burn_in), 0) = p[0];
      out(static_cast<Eigen::Index>(i - k_burn_in), 1) = p[1];
    }
    const double t = static_cast<double>(i) * dt;
    double w0 = carrier[0].value(t);
    double w1 = carrier[1].value(t);
    const double damp0 = 1.0 + coupling * 16.0 * (p[1] - 0.5) * (p[1] - 0.5);
    const double damp1 = 1.0 + coupling * 16.0 * (p[0] - 0.5) * (p[0] - 0.5);
    double acc0 = omega[0] * omega[0] * (0.5 - p[0]) -
                  2.0 * zeta[0] * omega[0] * u[0] * damp0 + drive[0] * w0;
    double acc1 = omega[1] * omega[1] * (0.5 - p[1]) -
                  2.0 * zeta[1] * omega[1] * u[1] * damp1 + drive[1] * w1;
    // semi-implicit update keeps the damped pair stable at this step size
    u[0] += dt * acc0;
    u[1] += dt * acc1;
    p[0] += dt * u[0];
    p[1] += dt * u[1];
  }
  return out;
}

void check_mixing_invertible(const DiffeoSpec& spec, const Mat& sources) {
  const Eigen::Index n = sources.cols();
  Vec lo = sources.colwise().minCoeff();
  Vec hi = sources.colwise().maxCoeff();
  // probe |det J| on a coarse grid spanning the sampled box
  const int per_axis = 4;
  std::size_t n_probes = 1;
  for (Eigen::Index k = 0; k < n; ++k) n_probes *= per_axis;
  for (std::size_t p = 0; p < n_probes; ++p) {
    Vec x(n);
    std::size_t rem = p;
    for (Eigen::Index k = 0; k < n; ++k) {
      const int cell = static_cast<int>(rem % per_axis);
      rem /= per_axis;
      const double frac = (static_cast<double>(cell) + 0.5) / per_axis;
      x(k) = lo(k) + frac * (hi(k) - lo(k));
    }
    const double det = diffeo_jacobian_det(spec, x);
    if (!std::isfinite(det) || std::abs(det) < 1e-3) {
      throw Error(ErrorCategory::k_degenerate,
                  "mixing map is near-singular on the sampled domain");
    }
  }
}

TimeSeries series_from(const Mat& samples, double dt, const std::string& prefix) {
  TimeSeries ts;
  ts.dt = dt;
  ts.samples = samples;
  for (Eigen::Index k = 0; k < samples.cols(); ++k) {
    ts.channel_names.push_back(prefix + std::to_string(k + 1));
  }
  return ts;
}

}  // namespace

ToyData make_toy_system(const ToySystemSpec& spec, std::size_t n_samples, double dt) {
  if (n_samples < 16) {
    throw Error(ErrorCategory::k_invalid_argument, "toy system needs at least 16 samples");
  }
  if (dt <= 0.0) {
    throw Error(ErrorCategory::k_invalid_argument, "time step must be positive");
  }

  Mat sources;
  switch (spec.kind) {
    case ToyKind::k_separable_product:
    case ToyKind::k_linear_mix:
      sources = simulate_smoothed_sources({k_low_kurt, k_high_kurt}, n_samples, dt, spec.seed);
      break;
    case ToyKind::k_coupled:
      sources = simulate_oscillator_pair(spec.coupling, n_samples, dt, spec.seed);
      break;
    case ToyKind::k_subspace_1plus2: {
      Mat lone = simulate_smoothed_sources({k_high_kurt}, n_samples, dt, spec.seed);
      Mat pair = simulate_oscillator_pair(1.0, n_samples, dt, mix_seed(spec.seed, 0x12));
      sources.resize(static_cast<Eigen::Index>(n_samples), 3);
      sources.col(0) = lone.col(0);
      sources.col(1) = pair.col(0);
      sources.col(2) = pair.col(1);
      break;
    }
  }

  ToyData data;
  data.sources = series_from(sources, dt, "s");

  if (spec.kind == ToyKind::k_linear_mix) {
    Mat w = spec.mix_w;
    if (w.size() == 0) {
      w.resize(2, 2);
      const double r = 1.0 / std::sqrt(2.0);
      w << r, r, r, -r;
    }
    if (w.rows() != sources.cols() || w.cols() != sources.cols()) {
      throw Error(ErrorCategory::k_invalid_argument, "mixing matrix shape mismatch");
    }
    if (std::abs(w.determinant()) < 1e-9) {
      throw Error(ErrorCategory::k_degenerate, "mixing matrix is singular");
    }
    data.observed = series_from((w * sources.transpose()).transpose(), dt, "x");
    return data;
  }

  if (spec.mixing.layers.empty()) {
    data.observed = series_from(sources, dt, "x");
    return data;
  }
  check_mixing_invertible(spec.mixing, sources);
  data.observed = apply_diffeomorphism(data.sources, spec.mixing);
  return data;
}

}  // namespace ibss
