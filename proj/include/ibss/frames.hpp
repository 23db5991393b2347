#pragma once

#include <vector>

#include "ibss/moments.hpp"

namespace ibss {

// Local frame: m whitens the second-order velocity correlation and
// diagonalizes the contracted fourth-order one. d holds the resulting
// diagonal, sorted descending. Unique per cell up to signed permutations,
// which is exactly the freedom align_frames fixes.
struct MFrame {
  Mat m;
  Vec d;
  bool degenerate = false;
  double spectral_gap = 0.0;
};

struct FrameField {
  std::vector<MFrame> frames;       // one slot per cell
  std::vector<char> valid;          // 0 when construction failed or degenerate
  bool alignment_applied = false;
  int component_count = 0;          // connected components among valid cells
  std::vector<int> component_id;    // -1 for invalid cells
};

struct FrameTolerances {
  double eps_pd_scale = 1e-10;   // times trace(c2)/N
  double eps_gap_scale = 1e-6;   // times max |d|
};

// sum over the last two indices set equal: out_{kl} = sum_m c4[k,l,m,m]
Mat contract_fourth(const SymTensor& c4);

MFrame construct_frame(const MomentTensors& mt, const FrameTolerances& tol = {});

// Per-cell frames for a whole field; cells whose c2 is singular or whose
// spectrum is degenerate are marked invalid instead of aborting the run.
FrameField construct_frames(const MomentField& field, const FrameTolerances& tol = {});

// Continuity alignment: breadth-first over the adjacency graph, each cell's
// frame left-multiplied by the signed permutation bringing it closest to its
// already-aligned neighbor. Seeded at the largest spectral gap per component.
FrameField align_frames(const FrameField& field, const NeighborhoodIndex& idx);

// Signed permutation closest to a in Frobenius norm. Exhaustive for n <= 4,
// greedy largest-entry matching above.
Mat nearest_signed_permutation(const Mat& a);

bool is_signed_permutation(const Mat& p, double tol = 1e-9);

// Residuals of the two frame conditions against the cell's moments; used by
// tests and the acceptance gate.
struct FrameResiduals {
  double whitening_abs = 0.0;        // max |M c2 M^T - I|
  double contracted_offdiag = 0.0;   // max off-diagonal relative to largest diagonal
};

FrameResiduals check_frame(const MFrame& frame, const MomentTensors& mt);

}  // namespace ibss
