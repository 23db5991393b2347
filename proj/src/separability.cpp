#include "ibss/separability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ibss/parallel.hpp"
#include "ibss/stats.hpp"

namespace ibss {

namespace {

struct FunctionLibrary {
  std::vector<std::vector<int>> exponents;  // per function, exponent per variable
  std::vector<std::string> names;
};

void enumerate_exponents(int n_vars, int remaining, std::size_t pos, std::vector<int>& cur,
                         std::vector<std::vector<int>>& out) {
  if (pos + 1 == static_cast<std::size_t>(n_vars)) {
    cur[pos] = remaining;
    out.push_back(cur);
    return;
  }
  for (int p = remaining; p >= 0; --p) {
    cur[pos] = p;
    enumerate_exponents(n_vars, remaining - p, pos + 1, cur, out);
  }
}

FunctionLibrary build_library(const std::vector<std::string>& var_names, int n_functions) {
  int n_vars = static_cast<int>(var_names.size());
  FunctionLibrary lib;
  for (int degree = 1; degree <= 3; ++degree) {
    std::vector<std::vector<int>> tuples;
    std::vector<int> cur(static_cast<std::size_t>(n_vars), 0);
    enumerate_exponents(n_vars, degree, 0, cur, tuples);
    for (auto& t : tuples) {
      if (static_cast<int>(lib.exponents.size()) >= n_functions) return lib;
      std::string name;
      for (int v = 0; v < n_vars; ++v) {
        int p = t[static_cast<std::size_t>(v)];
        if (p == 0) continue;
        if (!name.empty()) name += '*';
        name += var_names[static_cast<std::size_t>(v)];
        if (p > 1) name += '^' + std::to_string(p);
      }
      lib.names.push_back(std::move(name));
      lib.exponents.push_back(std::move(t));
    }
  }
  return lib;
}

// standardized variables -> clipped monomial products, one column per function
Mat evaluate_library(const Mat& vars, const FunctionLibrary& lib, std::vector<char>& usable) {
  Eigen::Index rows = vars.rows();
  Mat z = vars;
  std::vector<char> var_ok(static_cast<std::size_t>(vars.cols()), 1);
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    double mean = z.col(c).mean();
    double var = (z.col(c).array() - mean).square().mean();
    if (var <= 1e-24) {
      var_ok[static_cast<std::size_t>(c)] = 0;
      z.col(c).setZero();
    } else {
      z.col(c) = (z.col(c).array() - mean) / std::sqrt(var);
    }
  }
  Mat out(rows, static_cast<Eigen::Index>(lib.exponents.size()));
  usable.assign(lib.exponents.size(), 1);
  for (std::size_t f = 0; f < lib.exponents.size(); ++f) {
    const auto& exps = lib.exponents[f];
    bool ok = true;
    for (std::size_t v = 0; v < exps.size(); ++v) {
      if (exps[v] > 0 && !var_ok[v]) ok = false;
    }
    Vec col = Vec::Ones(rows);
    if (ok) {
      for (std::size_t v = 0; v < exps.size(); ++v) {
        for (int p = 0; p < exps[v]; ++p) {
          col = col.cwiseProduct(z.col(static_cast<Eigen::Index>(v)));
        }
      }
      col = col.cwiseMax(-3.0).cwiseMin(3.0);
      double mean = col.mean();
      double var = (col.array() - mean).square().mean();
      if (var <= 1e-24) {
        ok = false;
      } else {
        col = (col.array() - mean) / std::sqrt(var);
      }
    }
    if (!ok) {
      usable[f] = 0;
      col.setZero();
    }
    out.col(static_cast<Eigen::Index>(f)) = col;
  }
  return out;
}

std::vector<std::string> side_var_names(const char* side, int dim) {
  std::vector<std::string> names;
  for (int i = 0; i < dim; ++i) names.push_back(std::string("s") + side + std::to_string(i + 1));
  for (int i = 0; i < dim; ++i) names.push_back(std::string("ds") + side + std::to_string(i + 1));
  return names;
}

double max_abs_corr(const Mat& g, const Mat& h, const std::vector<char>& g_ok,
                    const std::vector<char>& h_ok) {
  // columns are already standardized, so correlation is a mean of products
  double best = 0.0;
  double inv_rows = 1.0 / static_cast<double>(g.rows());
  for (Eigen::Index a = 0; a < g.cols(); ++a) {
    if (!g_ok[static_cast<std::size_t>(a)]) continue;
    for (Eigen::Index b = 0; b < h.cols(); ++b) {
      if (!h_ok[static_cast<std::size_t>(b)]) continue;
      best = std::max(best, std::abs(g.col(a).dot(h.col(b)) * inv_rows));
    }
  }
  return best;
}

}  // namespace

FactorizationReport factorization_test(const SourceMap& map, const VelocitySeries& vs,
                                       const FactorizationConfig& config) {
  if (config.n_functions < 4) {
    throw Error(ErrorCategory::k_invalid_argument, "factorization_test: need n_functions >= 4");
  }
  std::size_t len = map.length();
  if (len != vs.length()) {
    throw Error(ErrorCategory::k_invalid_argument, "factorization_test: map does not match series");
  }
  std::size_t defined = 0;
  for (char d : map.defined) defined += d ? 1 : 0;
  if (defined * 10 < len * 8) {
    throw Error(ErrorCategory::k_insufficient_data,
                "factorization_test: sigma defined on under 80% of samples");
  }
  std::vector<std::size_t> used;
  for (std::size_t i = 1; i + 1 < len; ++i) {
    if (map.defined[i - 1] && map.defined[i] && map.defined[i + 1]) used.push_back(i);
  }
  if (used.size() < 50) {
    throw Error(ErrorCategory::k_insufficient_data, "factorization_test: too few usable samples");
  }

  int d_a = static_cast<int>(map.sigma_a.cols());
  int d_b = static_cast<int>(map.sigma_b.cols());
  auto smoothed = [&](const Mat& sigma) {
    if (config.smooth_radius <= 0) return sigma;
    const std::ptrdiff_t r = config.smooth_radius;
    Mat out = sigma;
    parallel_for(len, [&](std::size_t i) {
      if (!map.defined[i]) return;
      const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i);
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, si - r);
      const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(len) - 1, si + r);
      Vec acc = Vec::Zero(sigma.cols());
      double count = 0.0;
      for (std::ptrdiff_t j = lo; j <= hi; ++j) {
        if (!map.defined[static_cast<std::size_t>(j)]) continue;
        acc += sigma.row(static_cast<Eigen::Index>(j));
        count += 1.0;
      }
      out.row(static_cast<Eigen::Index>(si)) = acc.transpose() / count;
    });
    return out;
  };
  const Mat sig_a = smoothed(map.sigma_a);
  const Mat sig_b = smoothed(map.sigma_b);
  Eigen::Index rows = static_cast<Eigen::Index>(used.size());
  Mat vars_a(rows, 2 * d_a);
  Mat vars_b(rows, 2 * d_b);
  double inv_2dt = 1.0 / (2.0 * map.dt);
  for (Eigen::Index r = 0; r < rows; ++r) {
    std::size_t i = used[static_cast<std::size_t>(r)];
    for (int c = 0; c < d_a; ++c) {
      vars_a(r, c) = sig_a(static_cast<Eigen::Index>(i), c);
      vars_a(r, d_a + c) = (sig_a(static_cast<Eigen::Index>(i + 1), c) -
                            sig_a(static_cast<Eigen::Index>(i - 1), c)) *
                           inv_2dt;
    }
    for (int c = 0; c < d_b; ++c) {
      vars_b(r, c) = sig_b(static_cast<Eigen::Index>(i), c);
      vars_b(r, d_b + c) = (sig_b(static_cast<Eigen::Index>(i + 1), c) -
                            sig_b(static_cast<Eigen::Index>(i - 1), c)) *
                           inv_2dt;
    }
  }

  FunctionLibrary lib_a = build_library(side_var_names("A", d_a), config.n_functions);
  FunctionLibrary lib_b = build_library(side_var_names("B", d_b), config.n_functions);
  std::vector<char> ok_a, ok_b;
  Mat g = evaluate_library(vars_a, lib_a, ok_a);
  Mat h = evaluate_library(vars_b, lib_b, ok_b);

  FactorizationReport report;
  report.skipped_zero_variance =
      static_cast<std::size_t>(std::count(ok_a.begin(), ok_a.end(), 0) +
                               std::count(ok_b.begin(), ok_b.end(), 0));
  double inv_rows = 1.0 / static_cast<double>(rows);
  for (Eigen::Index a = 0; a < g.cols(); ++a) {
    if (!ok_a[static_cast<std::size_t>(a)]) continue;
    for (Eigen::Index b = 0; b < h.cols(); ++b) {
      if (!ok_b[static_cast<std::size_t>(b)]) continue;
      double corr = g.col(a).dot(h.col(b)) * inv_rows;
      report.breakdown.push_back({lib_a.names[static_cast<std::size_t>(a)] + "|" +
                                      lib_b.names[static_cast<std::size_t>(b)],
                                  corr});
      report.statistic = std::max(report.statistic, std::abs(corr));
    }
  }
  if (report.breakdown.empty()) {
    throw Error(ErrorCategory::k_degenerate, "factorization_test: every test function degenerated");
  }

  double threshold = config.threshold;
  if (config.calibrate_null) {
    // dependence scale expected from finite samples alone: shuffle the B side
    // (sigma and sigma_dot rows move together, so only the pairing breaks)
    Rng rng(config.null_seed);
    std::vector<double> null_stats;
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(rows));
    std::iota(perm.begin(), perm.end(), 0);
    for (int rep = 0; rep < config.null_reps; ++rep) {
      for (std::size_t i = perm.size(); i > 1; --i) {
        std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.index(i))]);
      }
      Mat h_shuffled(h.rows(), h.cols());
      for (Eigen::Index r = 0; r < rows; ++r) {
        h_shuffled.row(r) = h.row(perm[static_cast<std::size_t>(r)]);
      }
      null_stats.push_back(max_abs_corr(g, h_shuffled, ok_a, ok_b));
    }
    report.null_scale = median_of(null_stats);
    threshold = std::max(threshold, 3.0 * report.null_scale);
  }
  report.threshold = threshold;
  report.factorizes = report.statistic <= threshold;
  return report;
}

FactorizationReport factorization_test(const SourceMap& map, const VelocitySeries& vs,
                                       int n_functions, double threshold) {
  FactorizationConfig config;
  config.n_functions = n_functions;
  config.threshold = threshold;
  return factorization_test(map, vs, config);
}

const IndexGrouping& PartitionSearchResult::winning_grouping() const {
  if (winning_index < 0) {
    throw Error(ErrorCategory::k_invalid_argument, "partition result: no separable grouping");
  }
  return candidates[static_cast<std::size_t>(winning_index)].grouping;
}

namespace {

void enumerate_subsets(int n, int size, int start, std::vector<int>& cur,
                       std::vector<std::vector<int>>& out) {
  if (static_cast<int>(cur.size()) == size) {
    out.push_back(cur);
    return;
  }
  for (int v = start; v < n; ++v) {
    cur.push_back(v);
    enumerate_subsets(n, size, v + 1, cur, out);
    cur.pop_back();
  }
}

int dimension_test_k(int configured, Eigen::Index cloud_size) {
  const int frac = static_cast<int>((7 * cloud_size) / 10);
  return std::min(std::max(configured, frac), static_cast<int>(cloud_size) - 1);
}

}  // namespace

PartitionSearchResult partition_search(const InvariantField& inv_base,
                                       const NeighborhoodIndex& idx, const VelocitySeries& vs,
                                       const PartitionSearchConfig& config) {
  int n = inv_base.n;
  if (n < 2) {
    throw Error(ErrorCategory::k_invalid_argument, "partition_search: need at least 2 channels");
  }

  PartitionSearchResult result;
  int max_da = n / 2;
  if (n > 8) {
    max_da = 1;  // exhaustive enumeration is off the table, singletons only
    result.truncated = true;
  }

  std::vector<std::vector<int>> groupings;
  for (int d_a = 1; d_a <= max_da; ++d_a) {
    std::vector<std::vector<int>> subsets;
    std::vector<int> cur;
    enumerate_subsets(n, d_a, 0, cur, subsets);
    for (auto& s : subsets) {
      // unordered bipartitions: at the halfway size keep only subsets
      // containing index 0 so each split appears once
      if (2 * d_a == n && s.front() != 0) continue;
      groupings.push_back(std::move(s));
    }
  }

  for (const auto& ga : groupings) {
    PartitionCandidate cand;
    try {
      cand.grouping = make_grouping(n, ga);
      InvariantField with_multiplets = build_multiplets(inv_base, cand.grouping);
      PointCloud cloud_a = cloud_from_multiplets(with_multiplets, idx, true);
      PointCloud cloud_b = cloud_from_multiplets(with_multiplets, idx, false);
      // invariant strings carry a near constant sampling error per cell, so
      // inside a small neighborhood the curve's own spread can drown in that
      // noise; on these cell clouds the test neighborhood covers a fixed
      // fraction of the points instead of a fixed count
      const int k_a = dimension_test_k(config.manifold_k, cloud_a.points.rows());
      const int k_b = dimension_test_k(config.manifold_k, cloud_b.points.rows());
      cand.test_a = estimate_dimension(cloud_a, k_a, cand.grouping.d_a(),
                                       config.manifold_threshold);
      cand.test_b = estimate_dimension(cloud_b, k_b, cand.grouping.d_b(),
                                       config.manifold_threshold);
      cand.manifold_passed = cand.test_a.passes && cand.test_b.passes;
      if (cand.manifold_passed) {
        Chart chart_a = fit_chart(cloud_a, cand.grouping.d_a(), config.chart);
        Chart chart_b = fit_chart(cloud_b, cand.grouping.d_b(), config.chart);
        SourceMap map = evaluate_sigma(chart_a, chart_b, with_multiplets, idx, vs);
        cand.factorization = factorization_test(map, vs, config.factorization);
        cand.passed = cand.factorization->factorizes;
        // keep coordinates from the first charted grouping so callers can
        // inspect sigma even when the verdict path stops at factorization;
        // a fully passing grouping takes precedence
        const bool take = (cand.passed && !result.separable) || result.mapped_index < 0;
        if (take) {
          result.mapped_index = static_cast<int>(result.candidates.size());
          result.map = std::move(map);
          result.chart_a = std::move(chart_a);
          result.chart_b = std::move(chart_b);
        }
        if (cand.passed && !result.separable) {
          result.separable = true;
          result.winning_index = static_cast<int>(result.candidates.size());
        }
      }
    } catch (const Error& e) {
      cand.failure = std::string(error_category_name(e.category())) + ": " + e.what();
    }
    result.candidates.push_back(std::move(cand));
  }
  return result;
}

LinearityReport linearity_test(const SourceMap& map, const VelocitySeries& vs,
                               const NeighborhoodIndex& idx,
                               const LinearityThresholds& thresholds) {
  int n = vs.n_channels();
  std::size_t n_cells = idx.n_cells();
  int d_a = static_cast<int>(map.sigma_a.cols());
  int d_b = static_cast<int>(map.sigma_b.cols());
  int d_total = d_a + d_b;

  // sigma is piecewise constant per cell; recover the per-cell table
  Mat cell_sigma(static_cast<Eigen::Index>(n_cells), d_total);
  std::vector<char> cell_has(n_cells, 0);
  for (std::size_t i = 0; i < map.length(); ++i) {
    if (!map.defined[i]) continue;
    std::ptrdiff_t c = idx.cell_of_sample[i];
    if (c < 0 || cell_has[static_cast<std::size_t>(c)]) continue;
    cell_sigma.block(static_cast<Eigen::Index>(c), 0, 1, d_a) =
        map.sigma_a.row(static_cast<Eigen::Index>(i));
    cell_sigma.block(static_cast<Eigen::Index>(c), d_a, 1, d_b) =
        map.sigma_b.row(static_cast<Eigen::Index>(i));
    cell_has[static_cast<std::size_t>(c)] = 1;
  }
  std::vector<std::size_t> cells;
  for (std::size_t c = 0; c < n_cells; ++c) {
    if (cell_has[c]) cells.push_back(c);
  }
  if (cells.size() < thresholds.min_cells) {
    throw Error(ErrorCategory::k_insufficient_data,
                "linearity_test: need at least " + std::to_string(thresholds.min_cells) +
                    " cells with defined sigma");
  }

  double max_std = 0.0;
  for (int comp = 0; comp < d_total; ++comp) {
    std::vector<double> vals;
    for (std::size_t c : cells) vals.push_back(cell_sigma(static_cast<Eigen::Index>(c), comp));
    double mean = mean_of(vals);
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    max_std = std::max(max_std, std::sqrt(var / static_cast<double>(vals.size())));
  }
  if (max_std <= 1e-12) {
    throw Error(ErrorCategory::k_degenerate, "linearity_test: insufficient variation in sigma");
  }

  auto lists = idx.adjacency_lists();

  Mat values = cell_sigma;
  if (thresholds.smooth_sigma) {
    for (std::size_t c : cells) {
      double w_self = 2.0 * static_cast<double>(idx.cells[c].member_indices.size());
      Vec acc = w_self * cell_sigma.row(static_cast<Eigen::Index>(c)).transpose();
      double wacc = w_self;
      for (std::size_t b : lists[c]) {
        if (!cell_has[b]) continue;
        double w = static_cast<double>(idx.cells[b].member_indices.size());
        acc += w * cell_sigma.row(static_cast<Eigen::Index>(b)).transpose();
        wacc += w;
      }
      values.row(static_cast<Eigen::Index>(c)) = (acc / wacc).transpose();
    }
  }

  // least-squares gradient of each sigma component over the cell stencil
  std::vector<std::vector<Vec>> gradients(n_cells);  // per cell, per component
  std::size_t skipped = 0;
  for (std::size_t c : cells) {
    std::vector<std::size_t> stencil{c};
    for (std::size_t b : lists[c]) {
      if (cell_has[b]) stencil.push_back(b);
    }
    if (static_cast<int>(stencil.size()) < n + 1) {
      ++skipped;
      continue;
    }
    Mat design(static_cast<Eigen::Index>(stencil.size()), n + 1);
    for (std::size_t s = 0; s < stencil.size(); ++s) {
      design.block(static_cast<Eigen::Index>(s), 0, 1, n) =
          (idx.cells[stencil[s]].center - idx.cells[c].center).transpose();
      design(static_cast<Eigen::Index>(s), n) = 1.0;
    }
    auto qr = design.colPivHouseholderQr();
    if (qr.rank() < n + 1) {
      ++skipped;
      continue;
    }
    Mat rhs(static_cast<Eigen::Index>(stencil.size()), d_total);
    for (std::size_t s = 0; s < stencil.size(); ++s) {
      rhs.row(static_cast<Eigen::Index>(s)) = values.row(static_cast<Eigen::Index>(stencil[s]));
    }
    Mat beta = qr.solve(rhs);  // (n+1) x d_total
    auto& per_comp = gradients[c];
    per_comp.resize(static_cast<std::size_t>(d_total));
    for (int comp = 0; comp < d_total; ++comp) {
      per_comp[static_cast<std::size_t>(comp)] = beta.block(0, comp, n, 1);
    }
  }

  LinearityReport report;
  report.directions_pass = true;
  std::vector<std::pair<int, int>> group_ranges = {{0, d_a}, {d_a, d_total}};
  for (auto [lo, hi] : group_ranges) {
    GroupDirections gd;
    Mat scatter = Mat::Zero(n, n);
    double total_w = 0.0;
    for (std::size_t c : cells) {
      if (gradients[c].empty()) continue;
      double w = static_cast<double>(idx.cells[c].member_indices.size());
      bool counted = false;
      for (int comp = lo; comp < hi; ++comp) {
        Vec gvec = gradients[c][static_cast<std::size_t>(comp)];
        double norm = gvec.norm();
        if (norm <= 1e-12) continue;
        gvec /= norm;
        scatter += w * gvec * gvec.transpose();
        total_w += w;
        counted = true;
      }
      if (counted) ++gd.used_cells;
    }
    gd.skipped_cells = skipped;
    if (total_w <= 0.0) {
      throw Error(ErrorCategory::k_degenerate, "linearity_test: no usable gradients for a group");
    }
    scatter /= total_w;
    Eigen::SelfAdjointEigenSolver<Mat> es(scatter);
    int d_group = hi - lo;
    double total = es.eigenvalues().sum();
    double head = 0.0;
    for (int j = 0; j < d_group; ++j) head += es.eigenvalues()[n - 1 - j];
    gd.direction_cov = std::sqrt(std::max(0.0, 1.0 - head / std::max(total, 1e-300)));
    gd.u_vectors = Mat(d_group, n);
    for (int j = 0; j < d_group; ++j) {
      Vec col = es.eigenvectors().col(n - 1 - j);
      int arg = 0;
      col.cwiseAbs().maxCoeff(&arg);
      if (col[arg] < 0.0) col = -col;
      gd.u_vectors.row(j) = col.transpose();
    }
    if (gd.direction_cov > thresholds.direction_cov) report.directions_pass = false;
    report.groups.push_back(std::move(gd));
  }

  if (report.directions_pass) {
    SourceMap hat;
    hat.dt = map.dt;
    hat.grouping = map.grouping;
    hat.sigma_a = vs.positions * report.groups[0].u_vectors.transpose();
    hat.sigma_b = vs.positions * report.groups[1].u_vectors.transpose();
    hat.defined.assign(vs.length(), 1);
    report.hat_s_factorization = factorization_test(hat, vs, thresholds.factorization);
    report.linear = report.hat_s_factorization->factorizes;
  }
  return report;
}

}  // namespace ibss
