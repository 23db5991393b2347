#include "ibss/invariants.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "ibss/parallel.hpp"
#include "ibss/stats.hpp"

namespace ibss {

IndexGrouping make_grouping(int n, std::vector<int> group_a) {
  std::sort(group_a.begin(), group_a.end());
  if (group_a.empty() || static_cast<int>(group_a.size()) >= n) {
    throw Error(ErrorCategory::k_invalid_argument, "grouping: need 1 <= |A| < N");
  }
  if (std::adjacent_find(group_a.begin(), group_a.end()) != group_a.end()) {
    throw Error(ErrorCategory::k_invalid_argument, "grouping: duplicate index");
  }
  if (group_a.front() < 0 || group_a.back() >= n) {
    throw Error(ErrorCategory::k_invalid_argument, "grouping: index out of range");
  }
  IndexGrouping g;
  g.group_a = std::move(group_a);
  for (int i = 0; i < n; ++i) {
    if (!std::binary_search(g.group_a.begin(), g.group_a.end(), i)) g.group_b.push_back(i);
  }
  return g;
}

std::vector<SymTensor> transform_correlations(const MFrame& frame, const MomentTensors& mt,
                                              int max_order) {
  if (max_order < 3 || max_order > 5) {
    throw Error(ErrorCategory::k_invalid_argument, "transform_correlations: max_order must be in [3,5]");
  }
  int n = static_cast<int>(frame.m.rows());
  Mat i2 = frame.m * mt.c2 * frame.m.transpose();
  double dev = (i2 - Mat::Identity(n, n)).cwiseAbs().maxCoeff();
  if (dev > 1e-8) {
    throw Error(ErrorCategory::k_numeric,
                "transform_correlations: order-2 transform is not the identity (deviation " +
                    std::to_string(dev) + ")");
  }
  std::vector<SymTensor> out;
  out.reserve(static_cast<std::size_t>(max_order - 2));
  for (int order = 3; order <= max_order; ++order) {
    out.push_back(mt.tensor(order).transform(frame.m));
    if (!out.back().all_finite()) {
      throw Error(ErrorCategory::k_numeric, "transform_correlations: non-finite invariant");
    }
  }
  return out;
}

InvariantField compute_invariant_field(const FrameField& frames, const MomentField& moments,
                                       int max_order) {
  if (frames.frames.size() != moments.cells.size()) {
    throw Error(ErrorCategory::k_invalid_argument, "compute_invariant_field: size mismatch");
  }
  if (max_order > moments.max_order) {
    throw Error(ErrorCategory::k_invalid_argument,
                "compute_invariant_field: moment order " + std::to_string(moments.max_order) +
                    " below requested " + std::to_string(max_order));
  }
  InvariantField field;
  field.max_order = max_order;
  field.n = moments.cells.empty() ? 0 : static_cast<int>(moments.cells.front().c2.rows());
  field.cells.resize(moments.cells.size());
  field.valid.assign(moments.cells.size(), 0);
  parallel_for(moments.cells.size(), [&](std::size_t c) {
    if (!frames.valid[c]) return;
    field.cells[c] = transform_correlations(frames.frames[c], moments.cells[c], max_order);
    field.valid[c] = 1;
  });
  return field;
}

InvariantField smooth_invariant_field(const InvariantField& field, const NeighborhoodIndex& idx,
                                      int passes) {
  if (field.multiplets_built) {
    throw Error(ErrorCategory::k_invalid_argument,
                "smooth_invariant_field: smooth before grouping into multiplets");
  }
  if (idx.n_cells() != field.cells.size()) {
    throw Error(ErrorCategory::k_invalid_argument, "smooth_invariant_field: size mismatch");
  }
  if (passes <= 0) return field;

  InvariantField out = field;
  const auto neighbors = idx.adjacency_lists();
  // residuals of the first pass, per cell and string, corrected for the
  // averaging gain so they estimate the raw per-cell scatter
  std::vector<std::vector<std::vector<double>>> resid(field.cells.size());

  for (int pass = 0; pass < passes; ++pass) {
    const InvariantField prev = out;
    parallel_for(prev.cells.size(), [&](std::size_t c) {
      if (!prev.valid[c]) return;
      const double w0 = static_cast<double>(idx.cells[c].member_indices.size());
      double wsum = w0;
      double wsq_nb = 0.0;
      for (std::size_t t = 0; t < prev.cells[c].size(); ++t) {
        auto& acc = out.cells[c][t].values();
        for (double& v : acc) v *= w0;
      }
      for (std::size_t nb : neighbors[c]) {
        if (!prev.valid[nb]) continue;
        const double w = static_cast<double>(idx.cells[nb].member_indices.size());
        for (std::size_t t = 0; t < prev.cells[c].size(); ++t) {
          auto& acc = out.cells[c][t].values();
          const auto& add = prev.cells[nb][t].values();
          for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += w * add[j];
        }
        wsum += w;
        wsq_nb += w * w;
      }
      for (std::size_t t = 0; t < prev.cells[c].size(); ++t) {
        for (double& v : out.cells[c][t].values()) v /= wsum;
      }
      if (pass == 0 && wsum > w0) {
        // residual = (1 - a)(I_c - neighbor mean) with a = w0/wsum; the
        // neighbor mean carries its own scatter, inflating the variance by
        // roughly sum(w^2)/(wsum - w0)^2
        const double shrink = 1.0 - w0 / wsum;
        const double inflate = 1.0 + wsq_nb / ((wsum - w0) * (wsum - w0));
        const double gain = shrink * std::sqrt(inflate);
        if (gain > 0.0) {
          auto& rc = resid[c];
          rc.resize(prev.cells[c].size());
          for (std::size_t t = 0; t < prev.cells[c].size(); ++t) {
            const auto& before = prev.cells[c][t].values();
            const auto& after = out.cells[c][t].values();
            rc[t].resize(before.size());
            for (std::size_t j = 0; j < before.size(); ++j) {
              rc[t][j] = (before[j] - after[j]) / gain;
            }
          }
        }
      }
    });
  }

  // pool the corrected residuals into one robust scale per string
  out.noise_scale.clear();
  for (std::size_t c = 0; c < field.cells.size(); ++c) {
    if (field.valid[c]) {
      for (const auto& t : field.cells[c]) out.noise_scale.emplace_back(t.dim(), t.order());
      break;
    }
  }
  std::vector<double> pool;
  for (std::size_t t = 0; t < out.noise_scale.size(); ++t) {
    for (std::size_t j = 0; j < out.noise_scale[t].size(); ++j) {
      pool.clear();
      for (std::size_t c = 0; c < resid.size(); ++c) {
        if (resid[c].size() > t && resid[c][t].size() > j) pool.push_back(std::abs(resid[c][t][j]));
      }
      out.noise_scale[t].at_flat(j) = pool.empty() ? 0.0 : 1.4826 * median_of(pool);
    }
  }
  return out;
}

namespace {

void enumerate_group_tuples(const std::vector<int>& group, int order, std::size_t pos,
                            std::vector<int>& cur, std::vector<std::vector<int>>& out) {
  if (static_cast<int>(pos) == order) {
    out.push_back(cur);
    return;
  }
  std::size_t lo = 0;
  if (pos > 0) {
    lo = static_cast<std::size_t>(
        std::lower_bound(group.begin(), group.end(), cur[pos - 1]) - group.begin());
  }
  for (std::size_t g = lo; g < group.size(); ++g) {
    cur[pos] = group[g];
    enumerate_group_tuples(group, order, pos + 1, cur, out);
  }
}

std::string label_of(const std::vector<int>& tuple, int n) {
  std::string s = "I_";
  for (std::size_t i = 0; i < tuple.size(); ++i) {
    if (n > 9 && i > 0) s += '.';
    s += std::to_string(tuple[i] + 1);
  }
  return s;
}

struct GroupStrings {
  std::vector<std::vector<int>> tuples;  // by order then lexicographic
  std::vector<int> orders;
  std::vector<std::string> labels;
};

GroupStrings strings_for_group(const std::vector<int>& group, int max_order, int n) {
  GroupStrings gs;
  for (int order = 3; order <= max_order; ++order) {
    std::vector<std::vector<int>> tuples;
    std::vector<int> cur(static_cast<std::size_t>(order));
    enumerate_group_tuples(group, order, 0, cur, tuples);
    for (auto& t : tuples) {
      gs.orders.push_back(order);
      gs.labels.push_back(label_of(t, n));
      gs.tuples.push_back(std::move(t));
    }
  }
  return gs;
}

}  // namespace

InvariantField build_multiplets(const InvariantField& field, const IndexGrouping& grouping) {
  if (grouping.d_a() + grouping.d_b() != field.n) {
    throw Error(ErrorCategory::k_invalid_argument, "build_multiplets: grouping does not cover all indices");
  }
  GroupStrings ga = strings_for_group(grouping.group_a, field.max_order, field.n);
  GroupStrings gb = strings_for_group(grouping.group_b, field.max_order, field.n);
  if (static_cast<int>(ga.tuples.size()) <= 2 * grouping.d_a()) {
    throw Error(ErrorCategory::k_insufficient_data,
                "build_multiplets: too few invariant strings for group A (" +
                    std::to_string(ga.tuples.size()) + " <= " + std::to_string(2 * grouping.d_a()) +
                    "); raise max_order");
  }
  if (static_cast<int>(gb.tuples.size()) <= 2 * grouping.d_b()) {
    throw Error(ErrorCategory::k_insufficient_data,
                "build_multiplets: too few invariant strings for group B (" +
                    std::to_string(gb.tuples.size()) + " <= " + std::to_string(2 * grouping.d_b()) +
                    "); raise max_order");
  }

  InvariantField out = field;
  out.grouping = grouping;
  out.labels_a = ga.labels;
  out.labels_b = gb.labels;
  out.multiplet_a.assign(field.cells.size(), Vec());
  out.multiplet_b.assign(field.cells.size(), Vec());
  if (!field.noise_scale.empty()) {
    out.noise_a = Vec(static_cast<Eigen::Index>(ga.tuples.size()));
    for (std::size_t s = 0; s < ga.tuples.size(); ++s) {
      out.noise_a[static_cast<Eigen::Index>(s)] =
          field.noise_scale[static_cast<std::size_t>(ga.orders[s] - 3)].at(ga.tuples[s]);
    }
    out.noise_b = Vec(static_cast<Eigen::Index>(gb.tuples.size()));
    for (std::size_t s = 0; s < gb.tuples.size(); ++s) {
      out.noise_b[static_cast<Eigen::Index>(s)] =
          field.noise_scale[static_cast<std::size_t>(gb.orders[s] - 3)].at(gb.tuples[s]);
    }
  }
  parallel_for(field.cells.size(), [&](std::size_t c) {
    if (!field.valid[c]) return;
    Vec ma(static_cast<Eigen::Index>(ga.tuples.size()));
    for (std::size_t s = 0; s < ga.tuples.size(); ++s) {
      const auto& t = field.cells[c][static_cast<std::size_t>(ga.orders[s] - 3)];
      ma[static_cast<Eigen::Index>(s)] = t.at(ga.tuples[s]);
    }
    Vec mb(static_cast<Eigen::Index>(gb.tuples.size()));
    for (std::size_t s = 0; s < gb.tuples.size(); ++s) {
      const auto& t = field.cells[c][static_cast<std::size_t>(gb.orders[s] - 3)];
      mb[static_cast<Eigen::Index>(s)] = t.at(gb.tuples[s]);
    }
    out.multiplet_a[c] = std::move(ma);
    out.multiplet_b[c] = std::move(mb);
  });
  out.multiplets_built = true;
  return out;
}

std::vector<Mat> enumerate_signed_permutations(int n) {
  if (n > 4) {
    throw Error(ErrorCategory::k_invalid_argument,
                "enumerate_signed_permutations: exhaustive search limited to n <= 4");
  }
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<Mat> out;
  do {
    for (int mask = 0; mask < (1 << n); ++mask) {
      Mat p = Mat::Zero(n, n);
      for (int j = 0; j < n; ++j) {
        p(perm[static_cast<std::size_t>(j)], j) = (mask >> j) & 1 ? -1.0 : 1.0;
      }
      out.push_back(p);
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return out;
}

ScalarityResult scalarity_residual(
    const InvariantField& field_x, const InvariantField& field_y,
    const std::vector<std::pair<std::ptrdiff_t, std::ptrdiff_t>>& correspondence) {
  if (correspondence.empty()) {
    throw Error(ErrorCategory::k_invalid_argument, "scalarity_residual: empty correspondence");
  }
  if (field_x.n != field_y.n || field_x.max_order != field_y.max_order) {
    throw Error(ErrorCategory::k_invalid_argument, "scalarity_residual: field shapes differ");
  }

  // collapse the per-sample pairing into weighted cell pairs
  std::map<std::pair<std::ptrdiff_t, std::ptrdiff_t>, double> pair_weight;
  for (auto [cx, cy] : correspondence) {
    if (cx < 0 || cy < 0) continue;
    if (!field_x.valid[static_cast<std::size_t>(cx)] || !field_y.valid[static_cast<std::size_t>(cy)]) continue;
    pair_weight[{cx, cy}] += 1.0;
  }
  if (pair_weight.empty()) {
    throw Error(ErrorCategory::k_insufficient_data, "scalarity_residual: no valid cell pairs");
  }

  std::vector<Mat> candidates = enumerate_signed_permutations(field_x.n);
  ScalarityResult best;
  best.median_relative_error = std::numeric_limits<double>::infinity();

  std::vector<std::ptrdiff_t> y_cells;
  for (const auto& [key, w] : pair_weight) y_cells.push_back(key.second);
  std::sort(y_cells.begin(), y_cells.end());
  y_cells.erase(std::unique(y_cells.begin(), y_cells.end()), y_cells.end());

  for (const Mat& p : candidates) {
    // transform the y-side invariants once per cell under this relabeling
    std::map<std::ptrdiff_t, std::vector<SymTensor>> transformed;
    for (std::ptrdiff_t cy : y_cells) {
      std::vector<SymTensor> ts;
      for (const auto& t : field_y.cells[static_cast<std::size_t>(cy)]) ts.push_back(t.transform(p));
      transformed.emplace(cy, std::move(ts));
    }
    std::vector<double> errors;
    std::vector<double> weights;
    for (const auto& [key, w] : pair_weight) {
      const auto& tx = field_x.cells[static_cast<std::size_t>(key.first)];
      const auto& ty = transformed[key.second];
      for (std::size_t o = 0; o < tx.size(); ++o) {
        for (std::size_t r = 0; r < tx[o].size(); ++r) {
          double a = tx[o].at_flat(r);
          double b = ty[o].at_flat(r);
          // invariants live in whitened units, so 1 is a natural floor
          double rel = std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
          errors.push_back(rel);
          weights.push_back(w);
        }
      }
    }
    double med = weighted_median(std::move(errors), std::move(weights));
    if (med < best.median_relative_error) {
      best.median_relative_error = med;
      best.best_signed_permutation = p;
    }
  }
  return best;
}

}  // namespace ibss
