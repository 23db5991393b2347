#pragma once

#include <cstddef>
#include <vector>

#include "ibss/invariants.hpp"

namespace ibss {

// Multiplet values of the retained cells, one row per cell, weighted by
// member count. axis_noise carries the per-string sampling scatter when the
// invariant field was smoothed; geometry consumers divide each axis by it so
// strings are compared at equal noise, otherwise they fall back to a robust
// spread estimate.
struct PointCloud {
  Mat points;
  Vec weights;
  Vec axis_noise;
  std::vector<std::size_t> cell_ids;  // row -> cell in the NeighborhoodIndex
};

PointCloud cloud_from_multiplets(const InvariantField& inv, const NeighborhoodIndex& idx,
                                 bool group_a);

struct ManifoldTest {
  int target_dim = 1;
  double residual_fraction = 1.0;
  double threshold = 0.10;
  bool passes = false;
  std::size_t skipped = 0;
};

// Local PCA over k nearest neighbors per point; residual_fraction is the
// weighted mean fraction of variance beyond the top target_dim components,
// measured after the same robust per-axis rescaling the charts use.
ManifoldTest estimate_dimension(const PointCloud& cloud, int k, int target_dim, double threshold);

struct ChartConfig {
  int graph_k = 8;           // kNN graph degree for 1-D charting
  int smoothing_window = 5;  // backbone position smoothing
  int n_patches = 24;        // local-PCA patches for dim >= 2
  int patch_k = 24;
};

// Coordinates on the manifold traced by a point cloud. Evaluation of new
// points snaps to the nearest reference point. Geometry is computed after
// dividing each input axis by a robust scale so no single invariant string
// dominates the distances; reference_points are stored already rescaled and
// evaluate() rescales its query the same way.
struct Chart {
  int dim = 1;
  Mat reference_points;                      // points the chart is defined on
  Mat coords;                                // per reference point
  Vec axis_scales;                           // applied to queries
  std::vector<std::size_t> source_rows;      // reference row -> cloud row
  bool boundary_cut = false;                 // many points far off the backbone
  double large_residual_fraction = 0.0;

  Vec evaluate(const Vec& point) const;
};

// dim=1: geodesic backbone of the kNN graph, points projected onto the
// smoothed backbone polyline, coordinate scaled to [0,1].
// dim>=2: overlapping local-PCA patches stitched along a spanning tree.
Chart fit_chart(const PointCloud& cloud, int dim, const ChartConfig& config = {});

// Shared with the feature-reduction pipeline: stitched local-PCA coordinates
// for an arbitrary point set (rows), result centered on principal axes.
// patch_spectra holds each patch's local covariance eigenvalues (descending,
// zero-padded), patch_sizes the member counts; overlap_disagreement is the
// largest distance between stitched copies of a shared point before
// averaging, i.e. the continuity defect across patch seams.
struct StitchResult {
  Mat coords;
  Mat patch_spectra;
  std::vector<std::size_t> patch_sizes;
  double overlap_disagreement = 0.0;
};

StitchResult stitch_local_pca(const Mat& points, int dim, int n_patches, int patch_k);

struct SourceMap {
  Mat sigma_a;                 // length x d_a
  Mat sigma_b;                 // length x d_b
  std::vector<char> defined;   // per sample
  double dt = 0.0;
  IndexGrouping grouping;
  std::size_t gap_count = 0;

  std::size_t length() const { return defined.size(); }
};

// Samples inherit their cell's multiplet values, so sigma is piecewise
// constant at cell resolution.
SourceMap evaluate_sigma(const Chart& chart_a, const Chart& chart_b, const InvariantField& inv,
                         const NeighborhoodIndex& idx, const VelocitySeries& samples);

}  // namespace ibss
