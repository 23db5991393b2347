#include "ibss/moments.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "ibss/io_detail.hpp"
#include "ibss/parallel.hpp"

namespace ibss {

const SymTensor& MomentTensors::tensor(int order) const {
  switch (order) {
    case 3: return c3;
    case 4: return c4;
    case 5: return c5;
    default:
      throw Error(ErrorCategory::k_invalid_argument,
                  "moment tensor of order " + std::to_string(order) + " not stored");
  }
}

MomentField local_moments(const VelocitySeries& vs, const NeighborhoodIndex& idx, int max_order) {
  if (max_order < 2 || max_order > 5) {
    throw Error(ErrorCategory::k_invalid_argument, "local_moments: max_order must be in [2,5]");
  }
  int n = vs.n_channels();
  const Mat& vel = vs.velocities;

  MomentField field;
  field.max_order = max_order;
  field.cells.resize(idx.n_cells());

  for (const auto& cell : idx.cells) {
    if (cell.member_indices.size() < 2) {
      throw Error(ErrorCategory::k_insufficient_data,
                  "local_moments: cell with fewer than 2 members, variance undefined");
    }
  }

  parallel_for(idx.n_cells(), [&](std::size_t c) {
    const auto& members = idx.cells[c].member_indices;
    double count = static_cast<double>(members.size());

    Vec mean = Vec::Zero(n);
    for (std::size_t i : members) mean += vel.row(static_cast<Eigen::Index>(i)).transpose();
    mean /= count;

    MomentTensors mt;
    mt.mean_velocity = mean;
    mt.sample_count = members.size();

    std::vector<SymTensor> acc;
    for (int order = 2; order <= max_order; ++order) acc.emplace_back(n, order);

    Vec d(n);
    Vec residual_sum = Vec::Zero(n);
    double scale = 0.0;
    for (std::size_t i : members) {
      d = vel.row(static_cast<Eigen::Index>(i)).transpose() - mean;
      scale += d.cwiseAbs().sum();
      residual_sum += d;
      for (int order = 2; order <= max_order; ++order) {
        SymTensor& t = acc[static_cast<std::size_t>(order - 2)];
        const auto& tuples = t.tuples();
        for (std::size_t r = 0; r < tuples.size(); ++r) {
          double prod = 1.0;
          for (int ix : tuples[r]) prod *= d[ix];
          t.at_flat(r) += prod;
        }
      }
    }
    // mean subtraction must cancel the first moment to rounding
    if (scale > 0.0 && residual_sum.cwiseAbs().maxCoeff() > 1e-9 * scale) {
      throw Error(ErrorCategory::k_numeric, "local_moments: centered velocities do not sum to zero");
    }
    for (auto& t : acc) {
      for (double& v : t.values()) v /= count;
    }

    mt.c2 = acc[0].to_matrix();
    if (max_order >= 3) mt.c3 = std::move(acc[1]);
    if (max_order >= 4) mt.c4 = std::move(acc[2]);
    if (max_order >= 5) mt.c5 = std::move(acc[3]);
    field.cells[c] = std::move(mt);
  });
  return field;
}

namespace {

// composite Simpson weights on an odd-length uniform grid
std::vector<double> simpson_weights(int points, double h) {
  std::vector<double> w(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) {
    double c = (i == 0 || i == points - 1) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    w[static_cast<std::size_t>(i)] = c * h / 3.0;
  }
  return w;
}

struct QuadraturePass {
  double z = 0.0;
  Vec mean;
  SymTensor central;
};

QuadraturePass run_quadrature(const Density& density, const Vec& point, int order,
                              const QuadratureConfig& config, int points) {
  int n = static_cast<int>(config.lo.size());
  std::vector<std::vector<double>> nodes(static_cast<std::size_t>(n));
  std::vector<std::vector<double>> weights(static_cast<std::size_t>(n));
  for (int a = 0; a < n; ++a) {
    double h = (config.hi[a] - config.lo[a]) / (points - 1);
    weights[static_cast<std::size_t>(a)] = simpson_weights(points, h);
    auto& col = nodes[static_cast<std::size_t>(a)];
    col.resize(static_cast<std::size_t>(points));
    for (int i = 0; i < points; ++i) col[static_cast<std::size_t>(i)] = config.lo[a] + i * h;
  }

  std::size_t total = 1;
  for (int a = 0; a < n; ++a) total *= static_cast<std::size_t>(points);

  // first sweep: normalization and mean
  QuadraturePass pass;
  pass.mean = Vec::Zero(n);
  Vec v(n);
  std::vector<int> ix(static_cast<std::size_t>(n), 0);
  std::vector<double> rho(total);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t rem = flat;
    double w = 1.0;
    for (int a = n - 1; a >= 0; --a) {
      int i = static_cast<int>(rem % static_cast<std::size_t>(points));
      rem /= static_cast<std::size_t>(points);
      ix[static_cast<std::size_t>(a)] = i;
      v[a] = nodes[static_cast<std::size_t>(a)][static_cast<std::size_t>(i)];
      w *= weights[static_cast<std::size_t>(a)][static_cast<std::size_t>(i)];
    }
    double r = density(point, v) * w;
    rho[flat] = r;
    pass.z += r;
    pass.mean += r * v;
  }
  if (!(pass.z > 0.0)) {
    throw Error(ErrorCategory::k_numeric, "moments_from_density: density integrates to zero");
  }
  pass.mean /= pass.z;

  pass.central = SymTensor(n, order);
  const auto& tuples = pass.central.tuples();
  for (std::size_t flat = 0; flat < total; ++flat) {
    if (rho[flat] == 0.0) continue;
    std::size_t rem = flat;
    for (int a = n - 1; a >= 0; --a) {
      int i = static_cast<int>(rem % static_cast<std::size_t>(points));
      rem /= static_cast<std::size_t>(points);
      v[a] = nodes[static_cast<std::size_t>(a)][static_cast<std::size_t>(i)] - pass.mean[a];
    }
    for (std::size_t r = 0; r < tuples.size(); ++r) {
      double prod = 1.0;
      for (int k : tuples[r]) prod *= v[k];
      pass.central.at_flat(r) += rho[flat] * prod;
    }
  }
  for (double& x : pass.central.values()) x /= pass.z;
  return pass;
}

}  // namespace

SymTensor moments_from_density(const Density& density, const Vec& point, int order,
                               const QuadratureConfig& config) {
  if (order < 1 || order > 5) {
    throw Error(ErrorCategory::k_invalid_argument, "moments_from_density: order must be in [1,5]");
  }
  if (config.lo.size() != config.hi.size() || config.lo.size() == 0) {
    throw Error(ErrorCategory::k_invalid_argument, "moments_from_density: bad quadrature box");
  }
  int points = config.initial_points_per_axis;
  if (points < 3 || points % 2 == 0) {
    throw Error(ErrorCategory::k_invalid_argument,
                "moments_from_density: points per axis must be odd and >= 3");
  }
  QuadraturePass prev = run_quadrature(density, point, order, config, points);
  for (int level = 0; level < config.max_refinements; ++level) {
    points = 2 * points - 1;
    QuadraturePass next = run_quadrature(density, point, order, config, points);
    double delta = 0.0;
    for (std::size_t r = 0; r < prev.central.size(); ++r) {
      delta = std::max(delta, std::abs(next.central.at_flat(r) - prev.central.at_flat(r)));
    }
    if (delta <= config.tol) return next.central;
    prev = std::move(next);
  }
  throw Error(ErrorCategory::k_numeric,
              "moments_from_density: quadrature did not converge within tolerance");
}

namespace {

void append_f64(std::vector<unsigned char>& buf, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xFF));
}

void append_u64(std::vector<unsigned char>& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

double take_f64(const std::vector<unsigned char>& buf, std::size_t& at) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[at++]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

std::uint64_t take_u64(const std::vector<unsigned char>& buf, std::size_t& at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[at++]) << (8 * i);
  return v;
}

}  // namespace

void save_moment_field(const MomentField& field, const std::string& path) {
  if (field.cells.empty()) {
    throw Error(ErrorCategory::k_invalid_argument, "save_moment_field: empty field");
  }
  int n = static_cast<int>(field.cells.front().mean_velocity.size());

  io::Section meta{"moment_field_meta", {}};
  append_u64(meta.payload, static_cast<std::uint64_t>(n));
  append_u64(meta.payload, static_cast<std::uint64_t>(field.max_order));
  append_u64(meta.payload, field.cells.size());

  io::Section cells{"moment_field_cells", {}};
  for (const auto& mt : field.cells) {
    append_u64(cells.payload, mt.sample_count);
    for (int a = 0; a < n; ++a) append_f64(cells.payload, mt.mean_velocity[a]);
    SymTensor c2t = SymTensor::from_matrix(mt.c2);
    for (double v : c2t.values()) append_f64(cells.payload, v);
    for (int order = 3; order <= field.max_order; ++order) {
      for (double v : mt.tensor(order).values()) append_f64(cells.payload, v);
    }
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCategory::k_io, "cannot write " + path);
  io::write_container(out, {meta, cells});
  if (!out) throw Error(ErrorCategory::k_io, "write failed for " + path);
}

MomentField load_moment_field(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCategory::k_io, "cannot open " + path);
  auto sections = io::read_container(in, path);
  const io::Section* meta = nullptr;
  const io::Section* cells = nullptr;
  for (const auto& s : sections) {
    if (s.name == "moment_field_meta") meta = &s;
    if (s.name == "moment_field_cells") cells = &s;
  }
  if (!meta || !cells) {
    throw Error(ErrorCategory::k_format, "missing moment field sections in " + path);
  }
  std::size_t at = 0;
  int n = static_cast<int>(take_u64(meta->payload, at));
  int max_order = static_cast<int>(take_u64(meta->payload, at));
  std::size_t n_cells = take_u64(meta->payload, at);

  MomentField field;
  field.max_order = max_order;
  field.cells.resize(n_cells);
  at = 0;
  for (auto& mt : field.cells) {
    mt.sample_count = take_u64(cells->payload, at);
    mt.mean_velocity = Vec(n);
    for (int a = 0; a < n; ++a) mt.mean_velocity[a] = take_f64(cells->payload, at);
    SymTensor c2t(n, 2);
    for (double& v : c2t.values()) v = take_f64(cells->payload, at);
    mt.c2 = c2t.to_matrix();
    for (int order = 3; order <= max_order; ++order) {
      SymTensor t(n, order);
      for (double& v : t.values()) v = take_f64(cells->payload, at);
      if (order == 3) mt.c3 = std::move(t);
      if (order == 4) mt.c4 = std::move(t);
      if (order == 5) mt.c5 = std::move(t);
    }
  }
  return field;
}

}  // namespace ibss
