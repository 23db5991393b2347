#include "ibss/audio.hpp"

#include <cmath>
#include <cstddef>
#include <fstream>

#include "ibss/common.hpp"
#include "ibss/io_detail.hpp"

namespace ibss {

namespace {

void write_tag(std::ostream& out, const char tag[4]) { out.write(tag, 4); }

std::string read_tag(std::istream& in) {
  char tag[4];
  in.read(tag, 4);
  if (!in) throw Error(ErrorCategory::k_format, "truncated WAV header");
  return std::string(tag, 4);
}

}  // namespace

void write_wav(const std::string& path, const std::vector<std::int16_t>& pcm, int sample_rate) {
  if (sample_rate <= 0) {
    throw Error(ErrorCategory::k_invalid_argument, "sample rate must be positive");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCategory::k_io, "cannot open " + path + " for writing");

  const std::uint32_t data_bytes = static_cast<std::uint32_t>(pcm.size() * 2);
  write_tag(out, "RIFF");
  io::write_u32(out, 36 + data_bytes);
  write_tag(out, "WAVE");
  write_tag(out, "fmt ");
  io::write_u32(out, 16);
  io::write_u16(out, 1);  // PCM
  io::write_u16(out, 1);  // mono
  io::write_u32(out, static_cast<std::uint32_t>(sample_rate));
  io::write_u32(out, static_cast<std::uint32_t>(sample_rate) * 2u);
  io::write_u16(out, 2);   // block align
  io::write_u16(out, 16);  // bits per sample
  write_tag(out, "data");
  io::write_u32(out, data_bytes);
  for (std::int16_t s : pcm) {
    io::write_u16(out, static_cast<std::uint16_t>(s));
  }
  if (!out) throw Error(ErrorCategory::k_io, "failed writing " + path);
}

WavData read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCategory::k_io, "cannot open " + path);

  if (read_tag(in) != "RIFF") throw Error(ErrorCategory::k_format, "not a RIFF file: " + path);
  io::read_u32(in);
  if (read_tag(in) != "WAVE") throw Error(ErrorCategory::k_format, "not a WAVE file: " + path);

  WavData wav;
  bool have_fmt = false;
  bool have_data = false;
  while (in && !have_data) {
    std::string tag;
    {
      char raw[4];
      in.read(raw, 4);
      if (!in) break;
      tag.assign(raw, 4);
    }
    const std::uint32_t size = io::read_u32(in);
    if (tag == "fmt ") {
      if (size < 16) throw Error(ErrorCategory::k_format, "malformed fmt chunk");
      const std::uint16_t format = io::read_u16(in);
      const std::uint16_t channels = io::read_u16(in);
      const std::uint32_t rate = io::read_u32(in);
      io::read_u32(in);  // byte rate
      io::read_u16(in);  // block align
      const std::uint16_t bits = io::read_u16(in);
      if (format != 1 || bits != 16) {
        throw Error(ErrorCategory::k_format, "only PCM 16-bit WAV is supported");
      }
      if (channels != 1) {
        throw Error(ErrorCategory::k_format, "only mono WAV is supported");
      }
      wav.sample_rate = static_cast<int>(rate);
      if (size > 16) in.seekg(size - 16, std::ios::cur);
      have_fmt = true;
    } else if (tag == "data") {
      if (!have_fmt) throw Error(ErrorCategory::k_format, "data chunk precedes fmt chunk");
      const std::size_t n = size / 2;
      wav.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::int16_t s = static_cast<std::int16_t>(io::read_u16(in));
        wav.samples[i] = static_cast<double>(s) / 32768.0;
      }
      if (!in) throw Error(ErrorCategory::k_format, "truncated data chunk");
      have_data = true;
    } else {
      in.seekg(size + (size & 1u), std::ios::cur);
    }
  }
  if (!have_data) throw Error(ErrorCategory::k_format, "no data chunk in " + path);
  return wav;
}

void fft_inplace(std::vector<std::complex<double>>& buf) {
  const std::size_t n = buf.size();
  if (n == 0 || (n & (n - 1)) != 0) {
    throw Error(ErrorCategory::k_invalid_argument, "FFT size must be a power of two");
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(buf[i], buf[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = buf[i + k];
        const std::complex<double> v = buf[i + k + len / 2] * w;
        buf[i + k] = u + v;
        buf[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

std::vector<double> power_spectrum(const std::vector<double>& frame) {
  std::vector<std::complex<double>> buf(frame.begin(), frame.end());
  fft_inplace(buf);
  std::vector<double> power(frame.size() / 2 + 1);
  for (std::size_t k = 0; k < power.size(); ++k) {
    power[k] = std::norm(buf[k]);
  }
  return power;
}

}  // namespace ibss
