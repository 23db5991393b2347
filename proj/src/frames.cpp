#include "ibss/frames.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

#include "ibss/parallel.hpp"

namespace ibss {

Mat contract_fourth(const SymTensor& c4) {
  if (c4.order() != 4) {
    throw Error(ErrorCategory::k_invalid_argument, "contract_fourth: tensor order must be 4");
  }
  int n = c4.dim();
  Mat out = Mat::Zero(n, n);
  for (int k = 0; k < n; ++k) {
    for (int l = k; l < n; ++l) {
      double acc = 0.0;
      for (int m = 0; m < n; ++m) {
        int ix[4] = {k, l, m, m};
        acc += c4.at(ix);
      }
      out(k, l) = acc;
      out(l, k) = acc;
    }
  }
  return out;
}

MFrame construct_frame(const MomentTensors& mt, const FrameTolerances& tol) {
  int n = static_cast<int>(mt.c2.rows());
  if (n < 2) {
    throw Error(ErrorCategory::k_invalid_argument, "construct_frame: need at least 2 channels");
  }
  if (mt.c4.empty()) {
    throw Error(ErrorCategory::k_invalid_argument, "construct_frame: fourth-order moments missing");
  }

  Eigen::SelfAdjointEigenSolver<Mat> es2(mt.c2);
  double eps_pd = tol.eps_pd_scale * mt.c2.trace() / n;
  if (es2.eigenvalues()(0) <= eps_pd) {
    throw Error(ErrorCategory::k_degenerate,
                "construct_frame: second-order correlation is singular at this cell");
  }

  // whitening stage: rows scaled by inverse square roots of the eigenvalues
  Mat m0 = es2.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
           es2.eigenvectors().transpose();

  SymTensor g4 = mt.c4.transform(m0);
  Mat q = contract_fourth(g4);
  Eigen::SelfAdjointEigenSolver<Mat> esq(q);

  MFrame frame;
  frame.m = esq.eigenvectors().transpose() * m0;
  frame.d = esq.eigenvalues();

  // canonical representative: rows ordered by descending d, dominant entry positive
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return frame.d[a] > frame.d[b]; });
  Mat m_sorted(n, n);
  Vec d_sorted(n);
  for (int i = 0; i < n; ++i) {
    m_sorted.row(i) = frame.m.row(order[static_cast<std::size_t>(i)]);
    d_sorted[i] = frame.d[order[static_cast<std::size_t>(i)]];
  }
  for (int i = 0; i < n; ++i) {
    int arg = 0;
    m_sorted.row(i).cwiseAbs().maxCoeff(&arg);
    if (m_sorted(i, arg) < 0.0) m_sorted.row(i) = -m_sorted.row(i);
  }
  frame.m = m_sorted;
  frame.d = d_sorted;

  double gap = std::numeric_limits<double>::infinity();
  for (int i = 0; i + 1 < n; ++i) gap = std::min(gap, frame.d[i] - frame.d[i + 1]);
  frame.spectral_gap = gap;
  double d_scale = frame.d.cwiseAbs().maxCoeff();
  frame.degenerate = gap < tol.eps_gap_scale * d_scale || d_scale == 0.0;
  return frame;
}

FrameField construct_frames(const MomentField& field, const FrameTolerances& tol) {
  FrameField out;
  out.frames.resize(field.cells.size());
  out.valid.assign(field.cells.size(), 0);
  out.component_id.assign(field.cells.size(), -1);
  parallel_for(field.cells.size(), [&](std::size_t c) {
    try {
      MFrame f = construct_frame(field.cells[c], tol);
      out.valid[c] = f.degenerate ? 0 : 1;
      out.frames[c] = std::move(f);
    } catch (const Error&) {
      out.valid[c] = 0;  // singular cell, excluded downstream
    }
  });
  return out;
}

Mat nearest_signed_permutation(const Mat& a) {
  int n = static_cast<int>(a.rows());
  if (a.cols() != n || n < 1) {
    throw Error(ErrorCategory::k_invalid_argument, "nearest_signed_permutation: square input required");
  }
  std::vector<int> assign(static_cast<std::size_t>(n));
  if (n <= 4) {
    // exhaustive: signs are forced per permutation, so permutations suffice
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    double best = -std::numeric_limits<double>::infinity();
    do {
      double score = 0.0;
      for (int j = 0; j < n; ++j) score += std::abs(a(perm[static_cast<std::size_t>(j)], j));
      if (score > best) {
        best = score;
        assign = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    std::vector<char> row_used(static_cast<std::size_t>(n), 0);
    std::vector<char> col_used(static_cast<std::size_t>(n), 0);
    for (int step = 0; step < n; ++step) {
      double best = -1.0;
      int bi = -1, bj = -1;
      for (int i = 0; i < n; ++i) {
        if (row_used[static_cast<std::size_t>(i)]) continue;
        for (int j = 0; j < n; ++j) {
          if (col_used[static_cast<std::size_t>(j)]) continue;
          if (std::abs(a(i, j)) > best) {
            best = std::abs(a(i, j));
            bi = i;
            bj = j;
          }
        }
      }
      row_used[static_cast<std::size_t>(bi)] = 1;
      col_used[static_cast<std::size_t>(bj)] = 1;
      assign[static_cast<std::size_t>(bj)] = bi;
    }
  }
  Mat p = Mat::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    int i = assign[static_cast<std::size_t>(j)];
    p(i, j) = a(i, j) < 0.0 ? -1.0 : 1.0;
  }
  return p;
}

bool is_signed_permutation(const Mat& p, double tol) {
  int n = static_cast<int>(p.rows());
  if (p.cols() != n) return false;
  for (int i = 0; i < n; ++i) {
    int row_hits = 0;
    for (int j = 0; j < n; ++j) {
      double v = std::abs(p(i, j));
      if (v > tol && std::abs(v - 1.0) > tol) return false;
      if (v > tol) ++row_hits;
    }
    if (row_hits != 1) return false;
  }
  for (int j = 0; j < n; ++j) {
    int col_hits = 0;
    for (int i = 0; i < n; ++i) {
      if (std::abs(p(i, j)) > tol) ++col_hits;
    }
    if (col_hits != 1) return false;
  }
  return true;
}

FrameField align_frames(const FrameField& field, const NeighborhoodIndex& idx) {
  if (field.frames.size() != idx.n_cells()) {
    throw Error(ErrorCategory::k_invalid_argument, "align_frames: field does not match index");
  }
  FrameField out = field;
  auto lists = idx.adjacency_lists();
  std::size_t n_cells = idx.n_cells();
  std::vector<char> visited(n_cells, 0);
  out.component_id.assign(n_cells, -1);
  int component = 0;

  while (true) {
    // seed the next component at the sharpest remaining spectrum
    std::ptrdiff_t seed = -1;
    double best_gap = -1.0;
    for (std::size_t c = 0; c < n_cells; ++c) {
      if (!out.valid[c] || visited[c]) continue;
      if (out.frames[c].spectral_gap > best_gap) {
        best_gap = out.frames[c].spectral_gap;
        seed = static_cast<std::ptrdiff_t>(c);
      }
    }
    if (seed < 0) break;

    std::deque<std::size_t> queue;
    queue.push_back(static_cast<std::size_t>(seed));
    visited[static_cast<std::size_t>(seed)] = 1;
    out.component_id[static_cast<std::size_t>(seed)] = component;
    while (!queue.empty()) {
      std::size_t a = queue.front();
      queue.pop_front();
      for (std::size_t b : lists[a]) {
        if (!out.valid[b] || visited[b]) continue;
        Mat rel = out.frames[a].m * out.frames[b].m.inverse();
        Mat p = nearest_signed_permutation(rel);
        out.frames[b].m = p * out.frames[b].m;
        // d entries follow their rows through the permutation
        Vec d_new(out.frames[b].d.size());
        for (int i = 0; i < p.rows(); ++i) {
          for (int j = 0; j < p.cols(); ++j) {
            if (p(i, j) != 0.0) d_new[i] = out.frames[b].d[j];
          }
        }
        out.frames[b].d = d_new;
        visited[b] = 1;
        out.component_id[b] = component;
        queue.push_back(b);
      }
    }
    ++component;
  }
  out.component_count = component;
  out.alignment_applied = true;
  return out;
}

FrameResiduals check_frame(const MFrame& frame, const MomentTensors& mt) {
  FrameResiduals res;
  int n = static_cast<int>(frame.m.rows());
  Mat white = frame.m * mt.c2 * frame.m.transpose();
  res.whitening_abs = (white - Mat::Identity(n, n)).cwiseAbs().maxCoeff();

  Mat q = contract_fourth(mt.c4.transform(frame.m));
  double max_diag = q.diagonal().cwiseAbs().maxCoeff();
  double max_off = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i != j) max_off = std::max(max_off, std::abs(q(i, j)));
    }
  }
  res.contracted_offdiag = max_off / std::max(max_diag, 1e-300);
  return res;
}

}  // namespace ibss
