#include "ibss/series.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ibss/io_detail.hpp"

namespace ibss {

void validate_series(const TimeSeries& ts) {
  if (!(ts.dt > 0.0)) {
    throw Error(ErrorCategory::k_invalid_argument, "time series: dt must be positive");
  }
  if (ts.n_channels() < 2) {
    throw Error(ErrorCategory::k_invalid_argument, "time series: need at least 2 channels");
  }
  if (ts.length() < 3) {
    throw Error(ErrorCategory::k_insufficient_data, "time series: need at least 3 samples");
  }
  if (!ts.samples.allFinite()) {
    throw Error(ErrorCategory::k_numeric, "time series: non-finite sample");
  }
  if (!ts.channel_names.empty() &&
      ts.channel_names.size() != static_cast<std::size_t>(ts.n_channels())) {
    throw Error(ErrorCategory::k_invalid_argument, "time series: channel name count mismatch");
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, std::size_t row) {
  const char* begin = s.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  while (end && *end == ' ') ++end;
  if (end == begin || (end && *end != '\0')) {
    throw Error(ErrorCategory::k_format,
                "malformed value '" + s + "' (row " + std::to_string(row) + ")");
  }
  if (!std::isfinite(v)) {
    throw Error(ErrorCategory::k_format, "non-finite value (row " + std::to_string(row) + ")");
  }
  return v;
}

TimeSeries load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCategory::k_io, "cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCategory::k_format, "empty file " + path);
  std::vector<std::string> header = split_csv_line(line);
  if (header.size() < 2) {
    throw Error(ErrorCategory::k_format, "header needs a time declaration and channels (row 1)");
  }

  bool has_time_column = header[0] == "t";
  double declared_dt = 0.0;
  if (!has_time_column) {
    if (header[0].rfind("dt=", 0) != 0) {
      throw Error(ErrorCategory::k_format, "header must start with 't' or 'dt=<value>' (row 1)");
    }
    declared_dt = parse_double(header[0].substr(3), 1);
  }

  TimeSeries ts;
  ts.channel_names.assign(header.begin() + 1, header.end());
  std::size_t n = header.size() - 1;

  std::vector<double> flat;
  std::vector<double> times;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorCategory::k_format,
                  "malformed row: expected " + std::to_string(header.size()) + " fields, got " +
                      std::to_string(cells.size()) + " (row " + std::to_string(row) + ")");
    }
    std::size_t offset = has_time_column ? 1 : 0;
    if (has_time_column) times.push_back(parse_double(cells[0], row));
    if (!has_time_column && offset == 0) {
      // dt declared in the header, every cell is a channel except cell 0 label
    }
    for (std::size_t c = 1; c < cells.size(); ++c) flat.push_back(parse_double(cells[c], row));
  }

  std::size_t len = flat.size() / n;
  if (len * n != flat.size()) {
    throw Error(ErrorCategory::k_format, "ragged data block in " + path);
  }
  if (has_time_column) {
    if (times.size() < 2) {
      throw Error(ErrorCategory::k_insufficient_data, "need at least 2 rows to infer dt");
    }
    double dt = times[1] - times[0];
    if (!(dt > 0.0)) {
      throw Error(ErrorCategory::k_format, "non-increasing time column (row 3)");
    }
    for (std::size_t i = 1; i < times.size(); ++i) {
      double step = times[i] - times[i - 1];
      if (std::abs(step - dt) > 1e-6 * std::max(std::abs(dt), 1e-300)) {
        throw Error(ErrorCategory::k_format,
                    "non-uniform time spacing (row " + std::to_string(i + 2) + ")");
      }
    }
    ts.dt = dt;
  } else {
    ts.dt = declared_dt;
  }

  ts.samples = Mat(static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t c = 0; c < n; ++c) {
      ts.samples(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = flat[i * n + c];
    }
  }
  validate_series(ts);
  return ts;
}

void save_csv(const TimeSeries& ts, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCategory::k_io, "cannot write " + path);
  out << "t";
  for (int c = 0; c < ts.n_channels(); ++c) {
    if (!ts.channel_names.empty()) {
      out << ',' << ts.channel_names[static_cast<std::size_t>(c)];
    } else {
      out << ",x" << c + 1;
    }
  }
  out << '\n';
  char buf[40];
  for (std::size_t i = 0; i < ts.length(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(i) * ts.dt);
    out << buf;
    for (int c = 0; c < ts.n_channels(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", ts.samples(static_cast<Eigen::Index>(i), c));
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCategory::k_io, "write failed for " + path);
}

TimeSeries load_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCategory::k_io, "cannot open " + path);
  io::expect_magic(in, path);
  std::uint16_t version = io::read_u16(in);
  if (version != io::k_format_version) {
    throw Error(ErrorCategory::k_format, "unsupported format version in " + path);
  }
  std::uint16_t n = io::read_u16(in);
  if (n == io::k_container_marker) {
    throw Error(ErrorCategory::k_format, path + " is a section container, not a plain series");
  }
  std::uint64_t len = io::read_u64(in);
  double dt = io::read_f64(in);
  TimeSeries ts;
  ts.dt = dt;
  ts.samples = Mat(static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(n));
  for (std::uint64_t i = 0; i < len; ++i) {
    for (std::uint16_t c = 0; c < n; ++c) {
      ts.samples(static_cast<Eigen::Index>(i), c) = io::read_f64(in);
    }
  }
  if (!in) throw Error(ErrorCategory::k_format, "truncated series file " + path);
  validate_series(ts);
  return ts;
}

void save_binary(const TimeSeries& ts, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCategory::k_io, "cannot write " + path);
  io::write_magic(out);
  io::write_u16(out, io::k_format_version);
  io::write_u16(out, static_cast<std::uint16_t>(ts.n_channels()));
  io::write_u64(out, ts.length());
  io::write_f64(out, ts.dt);
  for (std::size_t i = 0; i < ts.length(); ++i) {
    for (int c = 0; c < ts.n_channels(); ++c) {
      io::write_f64(out, ts.samples(static_cast<Eigen::Index>(i), c));
    }
  }
  if (!out) throw Error(ErrorCategory::k_io, "write failed for " + path);
}

}  // namespace

TimeSeries load_series(const std::string& path, SeriesFormat format) {
  return format == SeriesFormat::k_csv ? load_csv(path) : load_binary(path);
}

void save_series(const TimeSeries& ts, const std::string& path, SeriesFormat format) {
  validate_series(ts);
  if (format == SeriesFormat::k_csv) {
    save_csv(ts, path);
  } else {
    save_binary(ts, path);
  }
}

VelocitySeries estimate_velocity(const TimeSeries& ts, VelocityScheme scheme) {
  validate_series(ts);
  if (scheme != VelocityScheme::k_central) {
    throw Error(ErrorCategory::k_invalid_argument, "unknown velocity scheme");
  }
  std::size_t len = ts.length();
  VelocitySeries vs;
  vs.dt = ts.dt;
  vs.positions = ts.samples.middleRows(1, static_cast<Eigen::Index>(len - 2));
  vs.velocities =
      (ts.samples.bottomRows(static_cast<Eigen::Index>(len - 2)) -
       ts.samples.topRows(static_cast<Eigen::Index>(len - 2))) /
      (2.0 * ts.dt);
  return vs;
}

}  // namespace ibss
