#pragma once

// Shared numerical kernels: seeded randomness, ridge solves, LASSO,
// rank statistics and Gaussian sketches.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "attribkit/errors.hpp"

namespace attribkit {

using Vec = Eigen::VectorXd;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Derives an independent child seed from (seed, stream index).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632BE59BD9B4E019ull));
}

/// Seeded random source. The engine is std::mt19937_64, whose output sequence
/// is fixed by the C++ standard; every derived draw (uniform doubles, bounded
/// integers, normals, shuffles) is computed here rather than through the
/// implementation-defined <random> distributions.
class RandomStream {
 public:
  static constexpr std::string_view algorithm_id = "mt19937_64+u53+polar-box-muller/v1";

  explicit RandomStream(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound), rejection-sampled so it is unbiased.
  std::uint64_t uniform_index(std::uint64_t bound) {
    if (bound == 0) throw InvalidInput("uniform_index: bound must be positive");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % bound;
  }

  /// Standard normal via the Marsaglia polar method.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  /// k distinct indices from [0, n), in draw order (partial Fisher-Yates).
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    if (k > n) throw InvalidInput("sample_without_replacement: k > n");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + uniform_index(n - i);
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Linear solves

/// Solves (A + lambda I) x = b for symmetric A. Only the lower triangle of A
/// is read. One step of iterative refinement is applied after the Cholesky
/// solve.
inline Vec ridge_solve(const Mat& A, const Vec& b, double lambda) {
  if (A.rows() != A.cols()) throw InvalidInput("ridge_solve: matrix must be square");
  if (b.size() != A.rows()) throw InvalidInput("ridge_solve: rhs size mismatch");
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw InvalidInput("ridge_solve: lambda must be finite and nonnegative");
  if (!all_finite(A) || !all_finite(b)) throw InvalidInput("ridge_solve: non-finite input");
  Eigen::MatrixXd M = A.selfadjointView<Eigen::Lower>();
  M.diagonal().array() += lambda;
  Eigen::LLT<Eigen::MatrixXd> llt(M);
  if (llt.info() != Eigen::Success)
    throw SingularMatrix("ridge_solve: matrix is not positive definite after ridge");
  Vec x = llt.solve(b);
  x += llt.solve(b - M * x);
  if (!all_finite(x)) throw SingularMatrix("ridge_solve: solution is not finite");
  return x;
}

/// Multi right-hand-side variant of ridge_solve: returns (A + lambda I)^-1 B.
inline Eigen::MatrixXd ridge_solve_many(const Mat& A, const Eigen::MatrixXd& B, double lambda) {
  if (A.rows() != A.cols()) throw InvalidInput("ridge_solve: matrix must be square");
  if (B.rows() != A.rows()) throw InvalidInput("ridge_solve: rhs size mismatch");
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw InvalidInput("ridge_solve: lambda must be finite and nonnegative");
  if (!all_finite(A) || !all_finite(B)) throw InvalidInput("ridge_solve: non-finite input");
  Eigen::MatrixXd M = A.selfadjointView<Eigen::Lower>();
  M.diagonal().array() += lambda;
  Eigen::LLT<Eigen::MatrixXd> llt(M);
  if (llt.info() != Eigen::Success)
    throw SingularMatrix("ridge_solve: matrix is not positive definite after ridge");
  Eigen::MatrixXd X = llt.solve(B);
  X += llt.solve(B - M * X);
  if (!all_finite(X)) throw SingularMatrix("ridge_solve: solution is not finite");
  return X;
}

// ---------------------------------------------------------------------------
// LASSO

struct LassoOptions {
  double tol = 1e-10;         // objective change between sweeps
  double coord_tol = 1e-9;    // largest coordinate move in the last sweep
  long max_sweeps = 100000;
  bool record_trace = false;  // keep the objective after every sweep
};

struct LassoResult {
  Vec w;
  double intercept = 0.0;
  double objective = 0.0;
  long sweeps = 0;
  bool converged = false;
  std::vector<double> trace;
};

/// (1/M) ||Xw + b0 - y||^2 + beta ||w||_1
template <typename XDerived>
double lasso_objective(const Eigen::MatrixBase<XDerived>& X, const Vec& y, const Vec& w,
                       double b0, double beta) {
  const double m = static_cast<double>(X.rows());
  return ((X * w).array() + b0 - y.array()).matrix().squaredNorm() / m +
         beta * w.lpNorm<1>();
}

/// Cyclic coordinate descent with soft thresholding. The intercept is
/// unpenalized and refreshed at the start of every sweep.
template <typename XDerived>
LassoResult lasso_fit(const Eigen::MatrixBase<XDerived>& X, const Vec& y, double beta,
                      bool fit_intercept, const LassoOptions& opt = {}) {
  const Index m = X.rows();
  const Index n = X.cols();
  if (m < 1 || n < 1) throw InvalidInput("lasso_fit: empty design");
  if (y.size() != m) throw InvalidInput("lasso_fit: response length mismatch");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw InvalidInput("lasso_fit: beta must be >= 0");
  if (!X.allFinite() || !all_finite(y)) throw InvalidInput("lasso_fit: non-finite input");

  const double inv_m = 1.0 / static_cast<double>(m);
  Eigen::MatrixXd Xc = X;  // column-major for contiguous column access
  Vec col_sq(n);
  for (Index j = 0; j < n; ++j) col_sq[j] = Xc.col(j).squaredNorm() * inv_m;

  LassoResult res;
  res.w = Vec::Zero(n);
  double b0 = 0.0;
  Vec r = y;  // residual y - Xw - b0
  const double half_beta = 0.5 * beta;
  double prev = r.squaredNorm() * inv_m;

  for (long sweep = 1; sweep <= opt.max_sweeps; ++sweep) {
    double max_move = 0.0;
    if (fit_intercept) {
      const double shift = r.mean();
      b0 += shift;
      r.array() -= shift;
      max_move = std::abs(shift);
    }
    for (Index j = 0; j < n; ++j) {
      if (col_sq[j] == 0.0) continue;
      const double wj = res.w[j];
      const double rho = Xc.col(j).dot(r) * inv_m + col_sq[j] * wj;
      double nw = 0.0;
      if (rho > half_beta)
        nw = (rho - half_beta) / col_sq[j];
      else if (rho < -half_beta)
        nw = (rho + half_beta) / col_sq[j];
      const double delta = nw - wj;
      if (delta != 0.0) {
        r.noalias() -= delta * Xc.col(j);
        res.w[j] = nw;
        max_move = std::max(max_move, std::abs(delta));
      }
    }
    const double obj = r.squaredNorm() * inv_m + beta * res.w.lpNorm<1>();
    if (opt.record_trace) res.trace.push_back(obj);
    res.sweeps = sweep;
    const bool small_change = std::abs(prev - obj) <= opt.tol;
    prev = obj;
    if (small_change && max_move <= opt.coord_tol) {
      res.converged = true;
      break;
    }
  }
  res.intercept = b0;
  res.objective = lasso_objective(Xc, y, res.w, b0, beta);
  return res;
}

// ---------------------------------------------------------------------------
// Correlation statistics

/// Ranks starting at 1, ties receive the average of the ranks they span.
inline Vec average_ranks(const Vec& v) {
  const Index m = v.size();
  std::vector<Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return v[a] < v[b]; });
  Vec ranks(m);
  Index i = 0;
  while (i < m) {
    Index j = i;
    while (j + 1 < m && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Index t = i; t <= j; ++t) ranks[order[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

/// Pearson correlation; 0 when either input is constant.
inline double pearson(const Vec& u, const Vec& v) {
  if (u.size() != v.size()) throw InvalidInput("pearson: length mismatch");
  if (u.size() < 2) throw InvalidInput("pearson: need at least two points");
  if (!all_finite(u) || !all_finite(v)) throw InvalidInput("pearson: non-finite input");
  const Vec du = u.array() - u.mean();
  const Vec dv = v.array() - v.mean();
  const double su = du.squaredNorm();
  const double sv = dv.squaredNorm();
  if (su == 0.0 || sv == 0.0) return 0.0;
  const double r = du.dot(dv) / std::sqrt(su * sv);
  return std::clamp(r, -1.0, 1.0);
}

/// Squared Pearson correlation (coefficient of determination of the best
/// affine fit); 0 for constant inputs.
inline double pearson_r2(const Vec& u, const Vec& v) {
  const double r = pearson(u, v);
  return r * r;
}

/// Spearman rank correlation with average ranks for ties; 0 if either input
/// is constant.
inline double spearman(const Vec& u, const Vec& v) {
  if (u.size() != v.size()) throw InvalidInput("spearman: length mismatch");
  if (u.size() < 2) throw InvalidInput("spearman: need at least two points");
  return pearson(average_ranks(u), average_ranks(v));
}

// ---------------------------------------------------------------------------
// Random projections

/// p x k matrix with i.i.d. Normal(0, 1/k) entries, filled row-major from the
/// stream so the k-dimensional sketch P^T g preserves inner products in
/// expectation.
inline Mat gaussian_projection(Index p, Index k, RandomStream& stream) {
  if (p < 1 || k < 1) throw InvalidInput("gaussian_projection: dimensions must be positive");
  Mat P(p, k);
  const double scale = 1.0 / std::sqrt(static_cast<double>(k));
  for (Index i = 0; i < p; ++i)
    for (Index j = 0; j < k; ++j) P(i, j) = stream.normal() * scale;
  return P;
}

}  // namespace attribkit
