#include "ibss/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <iterator>
#include <limits>
#include <numeric>
#include <queue>

#include "ibss/parallel.hpp"
#include "ibss/stats.hpp"

namespace ibss {

PointCloud cloud_from_multiplets(const InvariantField& inv, const NeighborhoodIndex& idx,
                                 bool group_a) {
  if (!inv.multiplets_built) {
    throw Error(ErrorCategory::k_invalid_argument, "cloud_from_multiplets: multiplets not built");
  }
  PointCloud cloud;
  std::size_t m = 0;
  for (std::size_t c = 0; c < inv.cells.size(); ++c) {
    if (inv.valid[c]) ++m;
  }
  if (m == 0) {
    throw Error(ErrorCategory::k_insufficient_data, "cloud_from_multiplets: no valid cells");
  }
  const auto& mult = group_a ? inv.multiplet_a : inv.multiplet_b;
  Eigen::Index width = mult[0].size();
  for (std::size_t c = 0; c < inv.cells.size(); ++c) {
    if (inv.valid[c]) {
      width = mult[c].size();
      break;
    }
  }
  cloud.points = Mat(static_cast<Eigen::Index>(m), width);
  cloud.weights = Vec(static_cast<Eigen::Index>(m));
  cloud.axis_noise = group_a ? inv.noise_a : inv.noise_b;
  cloud.cell_ids.reserve(m);
  Eigen::Index row = 0;
  for (std::size_t c = 0; c < inv.cells.size(); ++c) {
    if (!inv.valid[c]) continue;
    cloud.points.row(row) = mult[c].transpose();
    cloud.weights[row] = static_cast<double>(idx.cells[c].member_indices.size());
    cloud.cell_ids.push_back(c);
    ++row;
  }
  return cloud;
}

namespace {

Mat rescale_columns(const Mat& points, const Vec& scales) {
  Mat out = points;
  for (Eigen::Index j = 0; j < out.cols(); ++j) out.col(j) /= scales[j];
  return out;
}

// noise scales when the cloud carries them, plain Euclidean geometry
// otherwise; zero noise entries borrow the smallest positive one
Vec cloud_axis_scales(const PointCloud& cloud) {
  Vec scales = Vec::Ones(cloud.points.cols());
  if (cloud.axis_noise.size() != cloud.points.cols()) return scales;
  double smallest = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < cloud.axis_noise.size(); ++j) {
    if (cloud.axis_noise[j] > 0.0) smallest = std::min(smallest, cloud.axis_noise[j]);
  }
  if (!std::isfinite(smallest)) return scales;
  for (Eigen::Index j = 0; j < scales.size(); ++j) {
    scales[j] = cloud.axis_noise[j] > 0.0 ? cloud.axis_noise[j] : smallest;
  }
  return scales;
}

// indices of the k nearest rows to row i (self excluded), ties by index
std::vector<std::size_t> k_nearest(const Mat& points, std::size_t i, int k) {
  std::size_t m = static_cast<std::size_t>(points.rows());
  std::vector<std::pair<double, std::size_t>> dist;
  dist.reserve(m - 1);
  for (std::size_t j = 0; j < m; ++j) {
    if (j == i) continue;
    dist.emplace_back((points.row(static_cast<Eigen::Index>(j)) -
                       points.row(static_cast<Eigen::Index>(i)))
                          .squaredNorm(),
                      j);
  }
  std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), dist.size());
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(kk), dist.end());
  std::vector<std::size_t> out(kk);
  for (std::size_t j = 0; j < kk; ++j) out[j] = dist[j].second;
  return out;
}

}  // namespace

ManifoldTest estimate_dimension(const PointCloud& cloud, int k, int target_dim, double threshold) {
  std::size_t m = static_cast<std::size_t>(cloud.points.rows());
  if (target_dim < 1) {
    throw Error(ErrorCategory::k_invalid_argument, "estimate_dimension: target_dim must be positive");
  }
  if (k < 2 * target_dim + 2 || m <= static_cast<std::size_t>(k)) {
    throw Error(ErrorCategory::k_invalid_argument,
                "estimate_dimension: need cloud size > k >= 2*target_dim + 2");
  }

  const Mat scaled = rescale_columns(cloud.points, cloud_axis_scales(cloud));
  std::vector<double> residuals(m, 0.0);
  std::vector<char> skipped(m, 0);
  parallel_for(m, [&](std::size_t i) {
    std::vector<std::size_t> nb = k_nearest(scaled, i, k);
    Mat local(static_cast<Eigen::Index>(nb.size() + 1), scaled.cols());
    local.row(0) = scaled.row(static_cast<Eigen::Index>(i));
    for (std::size_t j = 0; j < nb.size(); ++j) {
      local.row(static_cast<Eigen::Index>(j + 1)) =
          scaled.row(static_cast<Eigen::Index>(nb[j]));
    }
    Mat centered = local.rowwise() - local.colwise().mean();
    Mat cov = centered.transpose() * centered / static_cast<double>(local.rows());
    Eigen::SelfAdjointEigenSolver<Mat> es(cov);
    Vec lambda = es.eigenvalues().reverse();  // descending
    double total = lambda.sum();
    if (total <= 0.0) {
      skipped[i] = 1;
      return;
    }
    double tail = 0.0;
    for (Eigen::Index j = target_dim; j < lambda.size(); ++j) tail += std::max(lambda[j], 0.0);
    residuals[i] = tail / total;
  });

  ManifoldTest test;
  test.target_dim = target_dim;
  test.threshold = threshold;
  double acc = 0.0, wacc = 0.0;
  std::size_t n_skipped = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (skipped[i]) {
      ++n_skipped;
      continue;
    }
    double w = cloud.weights.size() > 0 ? cloud.weights[static_cast<Eigen::Index>(i)] : 1.0;
    acc += w * residuals[i];
    wacc += w;
  }
  if (2 * n_skipped > m) {
    throw Error(ErrorCategory::k_degenerate,
                "estimate_dimension: over half the neighborhoods have zero variance");
  }
  test.skipped = n_skipped;
  test.residual_fraction = wacc > 0.0 ? acc / wacc : 1.0;
  test.passes = test.residual_fraction <= threshold;
  return test;
}

Vec Chart::evaluate(const Vec& point) const {
  if (reference_points.rows() == 0) {
    throw Error(ErrorCategory::k_invalid_argument, "chart: empty reference set");
  }
  if (point.size() != reference_points.cols()) {
    throw Error(ErrorCategory::k_invalid_argument, "chart: query dimension mismatch");
  }
  Vec query = point;
  if (axis_scales.size() == point.size()) query = point.cwiseQuotient(axis_scales);
  Eigen::Index best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index r = 0; r < reference_points.rows(); ++r) {
    double d = (reference_points.row(r) - query.transpose()).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = r;
    }
  }
  return coords.row(best).transpose();
}

namespace {

struct Graph {
  std::vector<std::vector<std::pair<std::size_t, double>>> edges;  // (neighbor, length)
};

Graph knn_graph(const Mat& points, int k) {
  std::size_t m = static_cast<std::size_t>(points.rows());
  Graph g;
  g.edges.resize(m);
  std::vector<std::vector<std::size_t>> nb(m);
  parallel_for(m, [&](std::size_t i) { nb[i] = k_nearest(points, i, k); });
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j : nb[i]) {
      double d = (points.row(static_cast<Eigen::Index>(i)) -
                  points.row(static_cast<Eigen::Index>(j)))
                     .norm();
      g.edges[i].emplace_back(j, d);
      g.edges[j].emplace_back(i, d);  // symmetrize by union
    }
  }
  for (auto& e : g.edges) {
    std::sort(e.begin(), e.end());
    e.erase(std::unique(e.begin(), e.end()), e.end());
  }
  return g;
}

std::vector<int> connected_components(const Graph& g, int& count) {
  std::vector<int> comp(g.edges.size(), -1);
  count = 0;
  for (std::size_t s = 0; s < g.edges.size(); ++s) {
    if (comp[s] >= 0) continue;
    std::deque<std::size_t> queue{s};
    comp[s] = count;
    while (!queue.empty()) {
      std::size_t a = queue.front();
      queue.pop_front();
      for (auto [b, w] : g.edges[a]) {
        if (comp[b] < 0) {
          comp[b] = count;
          queue.push_back(b);
        }
      }
    }
    ++count;
  }
  return comp;
}

struct DijkstraResult {
  std::vector<double> dist;
  std::vector<std::ptrdiff_t> parent;
};

DijkstraResult dijkstra(const Graph& g, std::size_t source) {
  std::size_t m = g.edges.size();
  DijkstraResult r;
  r.dist.assign(m, std::numeric_limits<double>::infinity());
  r.parent.assign(m, -1);
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  r.dist[source] = 0.0;
  heap.emplace(0.0, source);
  while (!heap.empty()) {
    auto [d, a] = heap.top();
    heap.pop();
    if (d > r.dist[a]) continue;
    for (auto [b, w] : g.edges[a]) {
      double nd = d + w;
      if (nd < r.dist[b]) {
        r.dist[b] = nd;
        r.parent[b] = static_cast<std::ptrdiff_t>(a);
        heap.emplace(nd, b);
      }
    }
  }
  return r;
}

std::size_t farthest_reached(const DijkstraResult& r) {
  std::size_t best = 0;
  double best_d = -1.0;
  for (std::size_t i = 0; i < r.dist.size(); ++i) {
    if (std::isfinite(r.dist[i]) && r.dist[i] > best_d) {
      best_d = r.dist[i];
      best = i;
    }
  }
  return best;
}

Chart fit_chart_1d(const PointCloud& cloud, const ChartConfig& config) {
  std::size_t m = static_cast<std::size_t>(cloud.points.rows());
  if (m < 4) {
    throw Error(ErrorCategory::k_insufficient_data, "fit_chart: need at least 4 points");
  }
  int k = std::min<int>(config.graph_k, static_cast<int>(m) - 1);
  Graph g = knn_graph(cloud.points, k);

  int n_comp = 0;
  std::vector<int> comp = connected_components(g, n_comp);
  std::vector<std::size_t> comp_size(static_cast<std::size_t>(n_comp), 0);
  for (int c : comp) ++comp_size[static_cast<std::size_t>(c)];
  int main_comp = static_cast<int>(
      std::max_element(comp_size.begin(), comp_size.end()) - comp_size.begin());
  if (comp_size[static_cast<std::size_t>(main_comp)] < (8 * m + 9) / 10) {
    throw Error(ErrorCategory::k_degenerate,
                "fit_chart: neighbor graph fragmented, largest piece holds under 80% of points");
  }

  // double sweep for an approximate diameter pair (u, v)
  std::size_t start = 0;
  while (comp[start] != main_comp) ++start;
  std::size_t u = farthest_reached(dijkstra(g, start));
  DijkstraResult from_u = dijkstra(g, u);
  std::size_t v = farthest_reached(from_u);
  const double diameter = from_u.dist[v];
  if (!(diameter > 0.0)) {
    throw Error(ErrorCategory::k_degenerate, "fit_chart: backbone collapsed to a point");
  }

  // backbone: the u-to-v shortest path, node positions steadied by a moving
  // average so single noisy cells do not kink the polyline
  std::vector<std::size_t> path;
  for (std::ptrdiff_t a = static_cast<std::ptrdiff_t>(v); a >= 0; a = from_u.parent[static_cast<std::size_t>(a)]) {
    path.push_back(static_cast<std::size_t>(a));
    if (static_cast<std::size_t>(a) == u) break;
  }
  std::reverse(path.begin(), path.end());
  const std::ptrdiff_t n_nodes = static_cast<std::ptrdiff_t>(path.size());
  Mat backbone(n_nodes, cloud.points.cols());
  {
    const std::ptrdiff_t half = std::max(config.smoothing_window, 1) / 2;
    for (std::ptrdiff_t j = 0; j < n_nodes; ++j) {
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, j - half);
      const std::ptrdiff_t hi = std::min(n_nodes - 1, j + half);
      Vec acc = Vec::Zero(cloud.points.cols());
      for (std::ptrdiff_t a = lo; a <= hi; ++a) {
        acc += cloud.points.row(static_cast<Eigen::Index>(path[static_cast<std::size_t>(a)])).transpose();
      }
      backbone.row(j) = acc.transpose() / static_cast<double>(hi - lo + 1);
    }
  }
  std::vector<double> node_pos(static_cast<std::size_t>(n_nodes), 0.0);
  for (std::ptrdiff_t j = 1; j < n_nodes; ++j) {
    node_pos[static_cast<std::size_t>(j)] = node_pos[static_cast<std::size_t>(j - 1)] +
                                            (backbone.row(j) - backbone.row(j - 1)).norm();
  }
  if (!(node_pos.back() > 0.0)) {
    throw Error(ErrorCategory::k_degenerate, "fit_chart: backbone collapsed to a point");
  }

  // each point takes the arclength position of its nearest projection onto
  // the polyline; the terminal segments extend past their ends so points
  // beyond the backbone keep distinct positions instead of piling up
  std::vector<std::size_t> member_rows;
  for (std::size_t i = 0; i < m; ++i) {
    if (comp[i] == main_comp) member_rows.push_back(i);
  }
  std::vector<double> sigma(member_rows.size());
  std::vector<double> offline(member_rows.size());
  parallel_for(member_rows.size(), [&](std::size_t mi) {
    const Vec p = cloud.points.row(static_cast<Eigen::Index>(member_rows[mi])).transpose();
    double best_d2 = std::numeric_limits<double>::infinity();
    double best_pos = 0.0;
    for (std::ptrdiff_t j = 0; j + 1 < n_nodes; ++j) {
      const Vec a = backbone.row(j).transpose();
      const Vec d = backbone.row(j + 1).transpose() - a;
      const double len2 = d.squaredNorm();
      if (len2 <= 0.0) continue;
      double t = (p - a).dot(d) / len2;
      if (j > 0) t = std::max(t, 0.0);
      if (j + 2 < n_nodes) t = std::min(t, 1.0);
      const double d2 = (p - a - t * d).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best_pos = node_pos[static_cast<std::size_t>(j)] + t * std::sqrt(len2);
      }
    }
    sigma[mi] = best_pos;
    offline[mi] = std::sqrt(best_d2);
  });

  double lo_s = *std::min_element(sigma.begin(), sigma.end());
  double hi_s = *std::max_element(sigma.begin(), sigma.end());
  if (hi_s <= lo_s) {
    throw Error(ErrorCategory::k_degenerate, "fit_chart: all points map to one parameter");
  }

  Chart chart;
  chart.dim = 1;
  chart.reference_points = Mat(static_cast<Eigen::Index>(member_rows.size()), cloud.points.cols());
  chart.coords = Mat(static_cast<Eigen::Index>(member_rows.size()), 1);
  chart.source_rows = member_rows;
  for (std::size_t mi = 0; mi < member_rows.size(); ++mi) {
    chart.reference_points.row(static_cast<Eigen::Index>(mi)) =
        cloud.points.row(static_cast<Eigen::Index>(member_rows[mi]));
    chart.coords(static_cast<Eigen::Index>(mi), 0) = (sigma[mi] - lo_s) / (hi_s - lo_s);
  }

  // closed loops and branch points leave many points far off the
  // endpoint-to-endpoint path; record the excess rather than failing the run
  std::size_t far = 0;
  for (double d : offline) {
    if (d > 0.25 * diameter) ++far;
  }
  chart.large_residual_fraction =
      static_cast<double>(far) / static_cast<double>(member_rows.size());
  chart.boundary_cut = chart.large_residual_fraction > 0.10;
  return chart;
}

// farthest point sampling, deterministic from row 0
std::vector<std::size_t> sample_centers(const Mat& points, std::size_t count) {
  std::size_t m = static_cast<std::size_t>(points.rows());
  std::vector<std::size_t> centers{0};
  std::vector<double> min_d(m, std::numeric_limits<double>::infinity());
  while (centers.size() < count) {
    std::size_t last = centers.back();
    for (std::size_t i = 0; i < m; ++i) {
      double d = (points.row(static_cast<Eigen::Index>(i)) -
                  points.row(static_cast<Eigen::Index>(last)))
                     .squaredNorm();
      min_d[i] = std::min(min_d[i], d);
    }
    std::size_t next = static_cast<std::size_t>(
        std::max_element(min_d.begin(), min_d.end()) - min_d.begin());
    if (min_d[next] <= 0.0) break;  // all remaining points coincide with a center
    centers.push_back(next);
    min_d[next] = 0.0;
  }
  return centers;
}

}  // namespace

StitchResult stitch_local_pca(const Mat& points, int dim, int n_patches, int patch_k) {
  std::size_t m = static_cast<std::size_t>(points.rows());
  if (dim < 1 || points.cols() < dim) {
    throw Error(ErrorCategory::k_invalid_argument, "stitch_local_pca: bad target dimension");
  }
  std::size_t want_centers = std::min<std::size_t>(static_cast<std::size_t>(std::max(n_patches, 2)), m);
  std::vector<std::size_t> centers = sample_centers(points, want_centers);
  std::size_t p = centers.size();
  std::size_t k = std::min<std::size_t>(std::max<std::size_t>(static_cast<std::size_t>(patch_k),
                                                              static_cast<std::size_t>(3 * dim + 3)),
                                        m);

  struct Patch {
    std::vector<std::size_t> members;
    Mat local;  // member coords in the patch plane
  };
  std::vector<Patch> patches(p);
  StitchResult result;
  result.patch_spectra = Mat::Zero(static_cast<Eigen::Index>(p), points.cols());
  result.patch_sizes.assign(p, k);
  parallel_for(p, [&](std::size_t pi) {
    Vec center = points.row(static_cast<Eigen::Index>(centers[pi])).transpose();
    std::vector<std::pair<double, std::size_t>> dist(m);
    for (std::size_t i = 0; i < m; ++i) {
      dist[i] = {(points.row(static_cast<Eigen::Index>(i)).transpose() - center).squaredNorm(), i};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    Patch& patch = patches[pi];
    patch.members.resize(k);
    for (std::size_t j = 0; j < k; ++j) patch.members[j] = dist[j].second;
    std::sort(patch.members.begin(), patch.members.end());

    Mat local_pts(static_cast<Eigen::Index>(k), points.cols());
    for (std::size_t j = 0; j < k; ++j) {
      local_pts.row(static_cast<Eigen::Index>(j)) =
          points.row(static_cast<Eigen::Index>(patch.members[j]));
    }
    Vec mean = local_pts.colwise().mean().transpose();
    Mat centered = local_pts.rowwise() - mean.transpose();
    Mat cov = centered.transpose() * centered / static_cast<double>(k);
    Eigen::SelfAdjointEigenSolver<Mat> es(cov);
    for (Eigen::Index j = 0; j < points.cols(); ++j) {
      result.patch_spectra(static_cast<Eigen::Index>(pi), j) =
          es.eigenvalues()(points.cols() - 1 - j);
    }
    Mat basis(points.cols(), dim);
    for (int j = 0; j < dim; ++j) {
      Vec col = es.eigenvectors().col(es.eigenvectors().cols() - 1 - j);
      int arg = 0;
      col.cwiseAbs().maxCoeff(&arg);
      if (col[arg] < 0.0) col = -col;
      basis.col(j) = col;
    }
    patch.local = centered * basis;
  });

  // overlap graph; stitch along a max-overlap spanning tree
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> overlap(p);  // (patch, count)
  for (std::size_t a = 0; a < p; ++a) {
    for (std::size_t b = a + 1; b < p; ++b) {
      std::vector<std::size_t> shared;
      std::set_intersection(patches[a].members.begin(), patches[a].members.end(),
                            patches[b].members.begin(), patches[b].members.end(),
                            std::back_inserter(shared));
      if (static_cast<int>(shared.size()) >= dim + 1) {
        overlap[a].emplace_back(b, shared.size());
        overlap[b].emplace_back(a, shared.size());
      }
    }
  }

  Mat acc = Mat::Zero(static_cast<Eigen::Index>(m), dim);
  Vec acc_count = Vec::Zero(static_cast<Eigen::Index>(m));
  Mat first_copy = Mat::Zero(static_cast<Eigen::Index>(m), dim);
  std::vector<char> placed(p, 0);

  auto deposit = [&](std::size_t pi, const Mat& global_local) {
    const auto& members = patches[pi].members;
    for (std::size_t j = 0; j < members.size(); ++j) {
      const Eigen::Index row = static_cast<Eigen::Index>(members[j]);
      if (acc_count[row] <= 0.0) {
        first_copy.row(row) = global_local.row(static_cast<Eigen::Index>(j));
      } else {
        const double gap =
            (global_local.row(static_cast<Eigen::Index>(j)) - first_copy.row(row)).norm();
        result.overlap_disagreement = std::max(result.overlap_disagreement, gap);
      }
      acc.row(row) += global_local.row(static_cast<Eigen::Index>(j));
      acc_count[row] += 1.0;
    }
  };

  std::vector<Mat> stitched(p);
  stitched[0] = patches[0].local;
  placed[0] = 1;
  deposit(0, stitched[0]);
  std::size_t placed_count = 1;
  while (placed_count < p) {
    // best edge from the stitched set outward
    std::size_t best_from = p, best_to = p, best_shared = 0;
    for (std::size_t a = 0; a < p; ++a) {
      if (!placed[a]) continue;
      for (auto [b, s] : overlap[a]) {
        if (placed[b]) continue;
        if (s > best_shared) {
          best_shared = s;
          best_from = a;
          best_to = b;
        }
      }
    }
    if (best_to == p) {
      throw Error(ErrorCategory::k_degenerate,
                  "stitch_local_pca: patches do not overlap into a single chart");
    }

    const Patch& parent = patches[best_from];
    const Patch& child = patches[best_to];
    std::vector<std::size_t> shared;
    std::set_intersection(parent.members.begin(), parent.members.end(), child.members.begin(),
                          child.members.end(), std::back_inserter(shared));

    // least-squares affine map from child plane coords to parent global coords
    Mat design(static_cast<Eigen::Index>(shared.size()), dim + 1);
    Mat target(static_cast<Eigen::Index>(shared.size()), dim);
    for (std::size_t s = 0; s < shared.size(); ++s) {
      std::size_t row_child = static_cast<std::size_t>(
          std::lower_bound(child.members.begin(), child.members.end(), shared[s]) -
          child.members.begin());
      std::size_t row_parent = static_cast<std::size_t>(
          std::lower_bound(parent.members.begin(), parent.members.end(), shared[s]) -
          parent.members.begin());
      design.block(static_cast<Eigen::Index>(s), 0, 1, dim) =
          child.local.row(static_cast<Eigen::Index>(row_child));
      design(static_cast<Eigen::Index>(s), dim) = 1.0;
      target.row(static_cast<Eigen::Index>(s)) =
          stitched[best_from].row(static_cast<Eigen::Index>(row_parent));
    }
    Mat affine = design.colPivHouseholderQr().solve(target);  // (dim+1) x dim
    Mat child_design(child.local.rows(), dim + 1);
    child_design.leftCols(dim) = child.local;
    child_design.col(dim).setOnes();
    stitched[best_to] = child_design * affine;
    placed[best_to] = 1;
    deposit(best_to, stitched[best_to]);
    ++placed_count;
  }

  for (Eigen::Index i = 0; i < acc.rows(); ++i) {
    if (acc_count[i] > 0.0) {
      acc.row(i) /= acc_count[i];
    }
  }
  // points outside every patch (possible when k * p < m) snap to the nearest
  // covered point's coordinates
  for (Eigen::Index i = 0; i < acc.rows(); ++i) {
    if (acc_count[i] > 0.0) continue;
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index arg = -1;
    for (Eigen::Index j = 0; j < acc.rows(); ++j) {
      if (acc_count[j] <= 0.0) continue;
      double d = (points.row(i) - points.row(j)).squaredNorm();
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    if (arg < 0) {
      throw Error(ErrorCategory::k_degenerate, "stitch_local_pca: no covered points");
    }
    acc.row(i) = acc.row(arg);
  }

  // canonical axes: principal directions of the stitched coordinates
  Mat centered = acc.rowwise() - acc.colwise().mean();
  Mat cov = centered.transpose() * centered / static_cast<double>(m);
  Eigen::SelfAdjointEigenSolver<Mat> es(cov);
  Mat axes(dim, dim);
  for (int j = 0; j < dim; ++j) {
    Vec col = es.eigenvectors().col(dim - 1 - j);
    int arg = 0;
    col.cwiseAbs().maxCoeff(&arg);
    if (col[arg] < 0.0) col = -col;
    axes.col(j) = col;
  }
  result.coords = centered * axes;
  return result;
}

Chart fit_chart(const PointCloud& cloud, int dim, const ChartConfig& config) {
  const Vec scales = cloud_axis_scales(cloud);
  PointCloud scaled = cloud;
  scaled.points = rescale_columns(cloud.points, scales);
  if (dim == 1) {
    Chart chart = fit_chart_1d(scaled, config);
    chart.axis_scales = scales;
    return chart;
  }
  Mat coords = stitch_local_pca(scaled.points, dim, config.n_patches, config.patch_k).coords;
  // scale each axis to [0,1] to match the 1-D convention
  for (Eigen::Index j = 0; j < coords.cols(); ++j) {
    double lo = coords.col(j).minCoeff();
    double hi = coords.col(j).maxCoeff();
    if (hi <= lo) {
      throw Error(ErrorCategory::k_degenerate, "fit_chart: collapsed axis in stitched coordinates");
    }
    coords.col(j) = (coords.col(j).array() - lo) / (hi - lo);
  }
  Chart chart;
  chart.dim = dim;
  chart.reference_points = scaled.points;
  chart.coords = coords;
  chart.axis_scales = scales;
  chart.source_rows.resize(static_cast<std::size_t>(cloud.points.rows()));
  std::iota(chart.source_rows.begin(), chart.source_rows.end(), std::size_t{0});
  return chart;
}

SourceMap evaluate_sigma(const Chart& chart_a, const Chart& chart_b, const InvariantField& inv,
                         const NeighborhoodIndex& idx, const VelocitySeries& samples) {
  if (!inv.multiplets_built) {
    throw Error(ErrorCategory::k_invalid_argument, "evaluate_sigma: multiplets not built");
  }
  std::size_t n_cells = idx.n_cells();
  Mat cell_sigma_a(static_cast<Eigen::Index>(n_cells), chart_a.dim);
  Mat cell_sigma_b(static_cast<Eigen::Index>(n_cells), chart_b.dim);
  std::vector<char> cell_ok(n_cells, 0);
  parallel_for(n_cells, [&](std::size_t c) {
    if (!inv.valid[c]) return;
    cell_sigma_a.row(static_cast<Eigen::Index>(c)) = chart_a.evaluate(inv.multiplet_a[c]).transpose();
    cell_sigma_b.row(static_cast<Eigen::Index>(c)) = chart_b.evaluate(inv.multiplet_b[c]).transpose();
    cell_ok[c] = 1;
  });

  SourceMap map;
  map.dt = samples.dt;
  map.grouping = inv.grouping;
  std::size_t len = samples.length();
  map.sigma_a = Mat::Zero(static_cast<Eigen::Index>(len), chart_a.dim);
  map.sigma_b = Mat::Zero(static_cast<Eigen::Index>(len), chart_b.dim);
  map.defined.assign(len, 0);
  for (std::size_t i = 0; i < len; ++i) {
    std::ptrdiff_t c = idx.cell_of_sample[i];
    if (c < 0 || !cell_ok[static_cast<std::size_t>(c)]) {
      ++map.gap_count;
      continue;
    }
    map.sigma_a.row(static_cast<Eigen::Index>(i)) = cell_sigma_a.row(static_cast<Eigen::Index>(c));
    map.sigma_b.row(static_cast<Eigen::Index>(i)) = cell_sigma_b.row(static_cast<Eigen::Index>(c));
    map.defined[i] = 1;
  }
  return map;
}

}  // namespace ibss
