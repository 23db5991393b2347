#include "ibss/neighborhoods.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "ibss/parallel.hpp"

namespace ibss {

std::vector<std::vector<std::size_t>> NeighborhoodIndex::adjacency_lists() const {
  std::vector<std::vector<std::size_t>> lists(cells.size());
  for (auto [a, b] : adjacency) {
    lists[a].push_back(b);
    lists[b].push_back(a);
  }
  for (auto& l : lists) std::sort(l.begin(), l.end());
  return lists;
}

std::size_t default_min_count(int n_channels) {
  std::size_t n = static_cast<std::size_t>(n_channels);
  std::size_t strings = n + n * n + n * n * n + n * n * n * n + n * n * n * n * n;
  return std::max<std::size_t>(50, 10 * strings);
}

NeighborhoodIndex build_neighborhoods(const VelocitySeries& vs, const GridStrategy& strategy,
                                      std::size_t min_count) {
  if (vs.length() == 0) {
    throw Error(ErrorCategory::k_invalid_argument, "build_neighborhoods: empty velocity series");
  }
  if (strategy.cells_per_axis < 1) {
    throw Error(ErrorCategory::k_invalid_argument, "build_neighborhoods: cells_per_axis must be positive");
  }
  const Mat& pos = vs.positions;
  int n = vs.n_channels();
  std::size_t len = vs.length();
  Vec lo = pos.colwise().minCoeff();
  Vec hi = pos.colwise().maxCoeff();
  int cells_per_axis = strategy.cells_per_axis;

  auto axis_bin = [&](double x, int axis) {
    double extent = hi[axis] - lo[axis];
    if (extent <= 0.0) return 0;  // degenerate axis, everything in bin 0
    int b = static_cast<int>(std::floor((x - lo[axis]) / extent * cells_per_axis));
    return std::clamp(b, 0, cells_per_axis - 1);
  };

  std::vector<std::vector<int>> bins(len, std::vector<int>(static_cast<std::size_t>(n)));
  for (std::size_t i = 0; i < len; ++i) {
    for (int a = 0; a < n; ++a) {
      bins[i][static_cast<std::size_t>(a)] = axis_bin(pos(static_cast<Eigen::Index>(i), a), a);
    }
  }

  // map keys iterate in lexicographic order, which fixes the cell numbering
  std::map<std::vector<int>, std::vector<std::size_t>> members_by_bin;
  for (std::size_t i = 0; i < len; ++i) members_by_bin[bins[i]].push_back(i);

  NeighborhoodIndex idx;
  idx.min_count = min_count;
  idx.disjoint_membership = true;
  std::map<std::vector<int>, std::size_t> cell_id;
  for (auto& [key, members] : members_by_bin) {
    if (members.size() < min_count) continue;
    Vec center(n);
    for (int a = 0; a < n; ++a) {
      double extent = hi[a] - lo[a];
      double width = extent > 0.0 ? extent / cells_per_axis : 0.0;
      center[a] = lo[a] + (key[static_cast<std::size_t>(a)] + 0.5) * width;
      if (extent <= 0.0) center[a] = lo[a];
    }
    cell_id[key] = idx.cells.size();
    idx.cells.push_back({center, members});
  }
  if (idx.cells.empty()) {
    throw Error(ErrorCategory::k_insufficient_data,
                "build_neighborhoods: all cells dropped (data too sparse for min_count " +
                    std::to_string(min_count) + ")");
  }

  idx.cell_of_sample.assign(len, -1);
  for (std::size_t i = 0; i < len; ++i) {
    auto it = cell_id.find(bins[i]);
    if (it != cell_id.end()) idx.cell_of_sample[i] = static_cast<std::ptrdiff_t>(it->second);
  }

  // face adjacency: bins differing by one along exactly one axis
  for (auto& [key, id] : cell_id) {
    std::vector<int> probe = key;
    for (int a = 0; a < n; ++a) {
      probe[static_cast<std::size_t>(a)] += 1;
      auto it = cell_id.find(probe);
      if (it != cell_id.end()) idx.adjacency.emplace_back(id, it->second);
      probe[static_cast<std::size_t>(a)] -= 1;
    }
  }
  for (auto& [a, b] : idx.adjacency) {
    if (a > b) std::swap(a, b);
  }
  std::sort(idx.adjacency.begin(), idx.adjacency.end());
  return idx;
}

NeighborhoodIndex build_neighborhoods(const VelocitySeries& vs, const KnnStrategy& strategy,
                                      std::size_t min_count) {
  if (vs.length() == 0) {
    throw Error(ErrorCategory::k_invalid_argument, "build_neighborhoods: empty velocity series");
  }
  if (strategy.k < 1) {
    throw Error(ErrorCategory::k_invalid_argument, "build_neighborhoods: k must be positive");
  }
  const Mat& pos = vs.positions;
  std::size_t len = vs.length();
  std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(strategy.k), len);

  std::size_t n_centers = std::min<std::size_t>(std::max<std::size_t>(len / k, 1), 4096);
  std::size_t stride = len / n_centers;

  struct Candidate {
    Vec center;
    std::vector<std::size_t> members;
    double radius = 0.0;
  };
  std::vector<Candidate> cands(n_centers);
  parallel_for(n_centers, [&](std::size_t c) {
    std::size_t center_sample = c * stride;
    Vec center = pos.row(static_cast<Eigen::Index>(center_sample)).transpose();
    std::vector<std::pair<double, std::size_t>> dist(len);
    for (std::size_t i = 0; i < len; ++i) {
      dist[i] = {(pos.row(static_cast<Eigen::Index>(i)).transpose() - center).squaredNorm(), i};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    Candidate& cand = cands[c];
    cand.center = center;
    cand.members.resize(k);
    for (std::size_t j = 0; j < k; ++j) cand.members[j] = dist[j].second;
    std::sort(cand.members.begin(), cand.members.end());
    cand.radius = std::sqrt(dist[k - 1].first);
  });

  NeighborhoodIndex idx;
  idx.min_count = min_count;
  idx.disjoint_membership = false;
  std::vector<double> radii;
  for (auto& cand : cands) {
    if (cand.members.size() < min_count) continue;
    idx.cells.push_back({cand.center, cand.members});
    radii.push_back(cand.radius);
  }
  if (idx.cells.empty()) {
    throw Error(ErrorCategory::k_insufficient_data,
                "build_neighborhoods: all cells dropped (data too sparse for min_count " +
                    std::to_string(min_count) + ")");
  }

  // mutual reachability: each center inside the other's kNN radius
  for (std::size_t a = 0; a < idx.cells.size(); ++a) {
    for (std::size_t b = a + 1; b < idx.cells.size(); ++b) {
      double d = (idx.cells[a].center - idx.cells[b].center).norm();
      if (d <= radii[a] && d <= radii[b]) idx.adjacency.emplace_back(a, b);
    }
  }

  idx.cell_of_sample.assign(len, -1);
  parallel_for(len, [&](std::size_t i) {
    double best = std::numeric_limits<double>::infinity();
    std::ptrdiff_t best_id = -1;
    for (std::size_t c = 0; c < idx.cells.size(); ++c) {
      double d = (pos.row(static_cast<Eigen::Index>(i)).transpose() - idx.cells[c].center).squaredNorm();
      if (d < best) {
        best = d;
        best_id = static_cast<std::ptrdiff_t>(c);
      }
    }
    idx.cell_of_sample[i] = best_id;
  });
  return idx;
}

}  // namespace ibss
