#pragma once

// Dataset selection from target-averaged datamodel vectors.

#include <algorithm>
#include <numeric>
#include <vector>

#include "attribkit/errors.hpp"
#include "attribkit/models.hpp"
#include "attribkit/numerics.hpp"

namespace attribkit {

inline Vec average_datamodel(const std::vector<Vec>& vectors) {
  if (vectors.empty()) throw InvalidInput("average_datamodel: need at least one vector");
  Vec acc = Vec::Zero(vectors.front().size());
  for (const auto& v : vectors) {
    if (v.size() != acc.size()) throw InvalidInput("average_datamodel: length mismatch");
    acc += v;
  }
  return acc / static_cast<double>(vectors.size());
}

/// Column means of a targets x n score matrix.
inline Vec average_datamodel(const Mat& rows) {
  if (rows.rows() < 1) throw InvalidInput("average_datamodel: need at least one vector");
  return rows.colwise().mean().transpose();
}

/// Indices of the n_sel smallest entries, ties resolved toward the smaller
/// index, returned in ascending index order.
inline std::vector<std::size_t> select_bottom_n(const Vec& w, std::size_t n_sel) {
  const auto n = static_cast<std::size_t>(w.size());
  if (n_sel < 1 || n_sel > n) throw InvalidInput("select_bottom_n: n_sel must lie in [1, n]");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto less = [&](std::size_t a, std::size_t b) {
    const double wa = w[static_cast<Index>(a)], wb = w[static_cast<Index>(b)];
    return wa < wb || (wa == wb && a < b);
  };
  std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_sel - 1), idx.end(), less);
  idx.resize(n_sel);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline std::vector<std::size_t> select_top_n(const Vec& w, std::size_t n_sel) {
  return select_bottom_n(-w, n_sel);
}

/// Orientation of attribution scores handed to run_dsdm. Loss-oriented
/// scores estimate each example's contribution to target loss (smaller is
/// better). Output-oriented scores estimate the contribution to a
/// correct-class output such as log-odds (larger is better), so they are
/// negated before selecting.
enum class ScoreOrientation { Loss, Output };

struct Selection {
  std::vector<std::size_t> indices;
  Dataset data;
};

/// Averages the rows of `scores` (targets x n) and keeps the n_sel examples
/// with the lowest predicted target loss.
inline Selection run_dsdm(const Mat& scores, const Dataset& data, std::size_t n_sel,
                          ScoreOrientation orientation = ScoreOrientation::Loss) {
  if (scores.cols() != data.size()) throw InvalidInput("run_dsdm: score columns must match the pool size");
  Vec w = average_datamodel(scores);
  if (orientation == ScoreOrientation::Output) w = -w;
  Selection sel;
  sel.indices = select_bottom_n(w, n_sel);
  sel.data = data.subset(sel.indices);
  return sel;
}

}  // namespace attribkit
