#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

namespace ibss {

struct WavData {
  int sample_rate = 0;
  std::vector<double> samples;  // mono, scaled to [-1, 1)
};

void write_wav(const std::string& path, const std::vector<std::int16_t>& pcm, int sample_rate);
WavData read_wav(const std::string& path);

// In-place iterative radix-2 transform; size must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& buf);

// |X_k|^2 for k = 0..n/2 of a real frame; frame size must be a power of two.
std::vector<double> power_spectrum(const std::vector<double>& frame);

}  // namespace ibss
