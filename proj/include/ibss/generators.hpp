#pragma once

#include <cstdint>
#include <vector>

#include "ibss/rng.hpp"
#include "ibss/series.hpp"

namespace ibss {

// affine response map from the normalized state u in [0,1]
struct AffineMap {
  double base = 0.0;
  double span = 0.0;
  double operator()(double u) const { return base + span * u; }
};

struct VoiceSpec {
  double pitch_hz = 100.0;
  AffineMap amp{0.8, 0.4};
  AffineMap freq_hz{400.0, 700.0};
  AffineMap damping{80.0, 60.0};  // 1/s
  double state_interval_lo_ms = 100.0;
  double state_interval_hi_ms = 120.0;
  std::uint64_t seed = 1;
};

struct SceneSpec {
  std::vector<VoiceSpec> voices;
  std::vector<double> relative_gain_db;
  double duration_s = 960.0;
  int sample_rate = 16000;
  int bit_depth = 16;
};

// Two voices with non-overlapping resonance bands and the documented pitch
// and gain defaults.
SceneSpec default_scene(double duration_s, std::uint64_t seed = 42);

// Piecewise random targets joined by cubic smoothstep segments.
struct StateProcess {
  std::vector<double> knot_times;
  std::vector<double> targets;
  double duration = 0.0;

  double value(double t) const;
  std::vector<double> sample(double dt) const;
};

StateProcess synth_state_process(const VoiceSpec& spec, double duration_s);

// Glottal impulse train convolved with a one-pole-pair impulse response that
// is frozen at each pulse onset.
std::vector<double> synth_voice(const VoiceSpec& spec, const StateProcess& states,
                                int sample_rate);

struct SceneResult {
  std::vector<double> waveform;       // peak-normalized mix, pre-quantization
  std::vector<std::int16_t> pcm;
  TimeSeries ground_truth;            // per-voice state at truth_dt
  std::vector<double> applied_scale;  // per-voice gain factors
};

SceneResult mix_scene(const SceneSpec& spec, double truth_dt = 0.01);

// Smooth invertible measurement maps: alternating componentwise monotone
// warps and rotations.
struct DiffeoLayer {
  Mat rotation;              // orthogonal
  std::vector<double> a;     // warp y = x + a * tanh(b * (x - c)), a >= 0
  std::vector<double> b;
  std::vector<double> c;
};

struct DiffeoSpec {
  std::vector<DiffeoLayer> layers;
  int dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().rotation.rows()); }
};

DiffeoSpec identity_diffeo(int n);
DiffeoSpec random_diffeo(int n, std::uint64_t seed, double strength = 0.5, int n_layers = 2);

Vec diffeo_forward(const DiffeoSpec& spec, Vec x);
Vec diffeo_inverse(const DiffeoSpec& spec, Vec y, double tol = 1e-12);
double diffeo_jacobian_det(const DiffeoSpec& spec, const Vec& x, double step = 1e-6);

TimeSeries apply_diffeomorphism(const TimeSeries& ts, const DiffeoSpec& spec);

enum class ToyKind {
  k_separable_product,
  k_coupled,
  k_linear_mix,
  k_subspace_1plus2,
};

struct ToySystemSpec {
  ToyKind kind = ToyKind::k_separable_product;
  double coupling = 0.0;  // coupled kind; 0 reduces to the separable path
  Mat mix_w;              // linear_mix matrix; default [[1,1],[1,-1]]/sqrt(2)
  DiffeoSpec mixing;      // smooth mixing; empty means identity
  std::uint64_t seed = 7;
};

struct ToyData {
  TimeSeries observed;
  TimeSeries sources;
};

ToyData make_toy_system(const ToySystemSpec& spec, std::size_t n_samples, double dt);

}  // namespace ibss
