#include "ibss/sym_tensor.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <unordered_map>

namespace ibss {

namespace {

struct TupleTable {
  std::vector<std::vector<int>> tuples;
  std::unordered_map<std::uint64_t, std::size_t> rank_by_key;
};

std::uint64_t key_of(std::span<const int> sorted_idx, int dim) {
  std::uint64_t k = 0;
  for (int v : sorted_idx) k = k * static_cast<std::uint64_t>(dim) + static_cast<std::uint64_t>(v);
  return k;
}

void enumerate(int dim, int order, int pos, std::vector<int>& cur,
               std::vector<std::vector<int>>& out) {
  if (pos == order) {
    out.push_back(cur);
    return;
  }
  int lo = pos == 0 ? 0 : cur[pos - 1];
  for (int v = lo; v < dim; ++v) {
    cur[pos] = v;
    enumerate(dim, order, pos + 1, cur, out);
  }
}

const TupleTable& table_for(int dim, int order) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, TupleTable> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_pair(dim, order);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  TupleTable t;
  std::vector<int> cur(static_cast<std::size_t>(order));
  enumerate(dim, order, 0, cur, t.tuples);
  t.rank_by_key.reserve(t.tuples.size());
  for (std::size_t r = 0; r < t.tuples.size(); ++r) {
    t.rank_by_key.emplace(key_of(t.tuples[r], dim), r);
  }
  return cache.emplace(key, std::move(t)).first->second;
}

}  // namespace

SymTensor::SymTensor(int dim, int order) : dim_(dim), order_(order) {
  if (dim < 1 || order < 1) {
    throw Error(ErrorCategory::k_invalid_argument, "SymTensor: dim and order must be positive");
  }
  values_.assign(table_for(dim, order).tuples.size(), 0.0);
}

const std::vector<std::vector<int>>& SymTensor::tuples() const {
  return table_for(dim_, order_).tuples;
}

std::size_t SymTensor::multiplicity(const std::vector<int>& tuple) {
  // order! / product of factorials of repeat counts
  auto factorial = [](std::size_t n) {
    std::size_t f = 1;
    for (std::size_t i = 2; i <= n; ++i) f *= i;
    return f;
  };
  std::size_t result = factorial(tuple.size());
  std::size_t run = 1;
  for (std::size_t i = 1; i <= tuple.size(); ++i) {
    if (i < tuple.size() && tuple[i] == tuple[i - 1]) {
      ++run;
    } else {
      result /= factorial(run);
      run = 1;
    }
  }
  return result;
}

std::size_t SymTensor::flat_of(std::span<const int> idx) const {
  if (static_cast<int>(idx.size()) != order_) {
    throw Error(ErrorCategory::k_invalid_argument, "SymTensor: index arity mismatch");
  }
  std::vector<int> sorted(idx.begin(), idx.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() < 0 || sorted.back() >= dim_) {
    throw Error(ErrorCategory::k_invalid_argument, "SymTensor: index out of range");
  }
  const auto& t = table_for(dim_, order_);
  return t.rank_by_key.at(key_of(sorted, dim_));
}

double SymTensor::at(std::span<const int> idx) const { return values_[flat_of(idx)]; }

Mat SymTensor::to_matrix() const {
  if (order_ != 2) {
    throw Error(ErrorCategory::k_invalid_argument, "SymTensor: to_matrix requires order 2");
  }
  Mat m(dim_, dim_);
  for (int i = 0; i < dim_; ++i) {
    for (int j = 0; j < dim_; ++j) {
      int idx[2] = {i, j};
      m(i, j) = at(idx);
    }
  }
  return m;
}

SymTensor SymTensor::from_matrix(const Mat& m) {
  if (m.rows() != m.cols()) {
    throw Error(ErrorCategory::k_invalid_argument, "SymTensor: from_matrix needs a square matrix");
  }
  SymTensor t(static_cast<int>(m.rows()), 2);
  const auto& tuples = t.tuples();
  for (std::size_t r = 0; r < tuples.size(); ++r) {
    // off-diagonal pairs are symmetrized so a slightly asymmetric input
    // still produces a valid symmetric tensor
    t.values_[r] = 0.5 * (m(tuples[r][0], tuples[r][1]) + m(tuples[r][1], tuples[r][0]));
  }
  return t;
}

std::vector<double> SymTensor::dense() const {
  std::size_t total = 1;
  for (int i = 0; i < order_; ++i) total *= static_cast<std::size_t>(dim_);
  std::vector<double> out(total);
  std::vector<int> idx(static_cast<std::size_t>(order_), 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t rem = flat;
    for (int k = order_ - 1; k >= 0; --k) {
      idx[static_cast<std::size_t>(k)] = static_cast<int>(rem % static_cast<std::size_t>(dim_));
      rem /= static_cast<std::size_t>(dim_);
    }
    out[flat] = at(idx);
  }
  return out;
}

SymTensor SymTensor::from_dense(int dim, int order, const std::vector<double>& d) {
  SymTensor t(dim, order);
  const auto& tuples = t.tuples();
  for (std::size_t r = 0; r < tuples.size(); ++r) {
    std::size_t flat = 0;
    for (int v : tuples[r]) flat = flat * static_cast<std::size_t>(dim) + static_cast<std::size_t>(v);
    t.values_[r] = d[flat];
  }
  return t;
}

SymTensor SymTensor::transform(const Mat& m) const {
  if (m.rows() != dim_ || m.cols() != dim_) {
    throw Error(ErrorCategory::k_invalid_argument, "SymTensor: transform matrix shape mismatch");
  }
  std::size_t total = 1;
  for (int i = 0; i < order_; ++i) total *= static_cast<std::size_t>(dim_);
  std::vector<double> cur = dense();
  std::vector<double> next(total);
  std::size_t n = static_cast<std::size_t>(dim_);
  // contract one mode at a time; stride of mode k in row-major layout
  for (int mode = 0; mode < order_; ++mode) {
    std::size_t stride = 1;
    for (int k = mode + 1; k < order_; ++k) stride *= n;
    std::size_t outer = total / (stride * n);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t s = 0; s < stride; ++s) {
        std::size_t base = o * stride * n + s;
        for (std::size_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (std::size_t mm = 0; mm < n; ++mm) {
            acc += m(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(mm)) *
                   cur[base + mm * stride];
          }
          next[base + j * stride] = acc;
        }
      }
    }
    std::swap(cur, next);
  }
  return from_dense(dim_, order_, cur);
}

bool SymTensor::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace ibss
