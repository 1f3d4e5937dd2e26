#pragma once

// Closed-form attribution: leave-one-out influence for logistic regression
// and the projected-gradient (TRAK) estimators, single model and ensembles.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "attribkit/errors.hpp"
#include "attribkit/models.hpp"
#include "attribkit/numerics.hpp"
#include "attribkit/parallel.hpp"

namespace attribkit {

struct FeatureMatrix {
  Mat phi;  // n x k
  std::uint64_t projection_seed = 0;
  std::int64_t model_id = 0;
  Index k = 0;
};

struct CorrectProbVector {
  Vec pstar;  // clamped to [eps, 1 - eps]
};

enum class AttributionMethod { LOO, TrakSingle, TrakMultiQ, TrakMultiNoQ };

inline const char* to_string(AttributionMethod m) {
  switch (m) {
    case AttributionMethod::LOO: return "LOO";
    case AttributionMethod::TrakSingle: return "TRAK_single";
    case AttributionMethod::TrakMultiQ: return "TRAK_multi_Q";
    case AttributionMethod::TrakMultiNoQ: return "TRAK_multi_noQ";
  }
  return "?";
}

struct AttributionScores {
  Mat scores;  // n_test x n
  AttributionMethod method = AttributionMethod::TrakMultiNoQ;
  double ridge_lambda = 0.0;
};

enum class QMode { WithQ, WithoutQ };

inline Vec per_example_gradient(const TrainedModel& m, const Example& z) {
  return output_gradient(m, z, default_output_fn(m.kind));
}

inline Vec per_example_gradient(const TrainedModel& m, const Example& z, OutputFn fn) {
  return output_gradient(m, z, fn);
}

/// Row i holds P^T grad f(z_i). Pass OutputFn::CorrectLogOdds for the
/// training side of a binary logreg so each row follows its own label.
inline FeatureMatrix compute_features(const TrainedModel& m, const Dataset& data, const Mat& P,
                                      OutputFn fn, std::uint64_t projection_seed = 0,
                                      std::int64_t model_id = 0) {
  if (P.rows() != m.param_count())
    throw InvalidInput("compute_features: projection has " + std::to_string(P.rows()) +
                       " rows, model has " + std::to_string(m.param_count()) + " parameters");
  FeatureMatrix fm;
  fm.k = P.cols();
  fm.projection_seed = projection_seed;
  fm.model_id = model_id;
  fm.phi.resize(data.size(), P.cols());
  parallel_for(static_cast<std::size_t>(data.size()), [&](std::size_t i) {
    const Vec g = output_gradient(m, data.example(static_cast<Index>(i)), fn);
    fm.phi.row(static_cast<Index>(i)) = (P.transpose() * g).transpose();
  });
  if (!all_finite(fm.phi)) throw InvalidInput("compute_features: non-finite gradient");
  return fm;
}

inline FeatureMatrix compute_features(const TrainedModel& m, const Dataset& data, const Mat& P) {
  return compute_features(m, data, P, default_output_fn(m.kind));
}

inline CorrectProbVector correct_probabilities(const TrainedModel& m, const Dataset& data) {
  CorrectProbVector q;
  q.pstar.resize(data.size());
  for (Index i = 0; i < data.size(); ++i)
    q.pstar[i] = std::clamp(correct_class_probability(m, data.example(i)), kProbEps, 1.0 - kProbEps);
  return q;
}

/// 1e-8 * trace(Phi^T Phi) / k
inline double default_ridge_lambda(const Mat& gram) {
  return 1e-8 * gram.trace() / static_cast<double>(gram.rows());
}

/// phi(z)^T (Phi^T Phi + lambda I)^-1 Phi^T, scaled example-wise by
/// (1 - p*_i) when q is given.
inline Vec trak_single(const FeatureMatrix& features, const Vec& target_phi,
                       const std::optional<CorrectProbVector>& q, std::optional<double> lambda = {}) {
  const Mat& Phi = features.phi;
  if (target_phi.size() != Phi.cols()) throw InvalidInput("trak_single: target feature length mismatch");
  if (q && q->pstar.size() != Phi.rows()) throw InvalidInput("trak_single: probability vector length mismatch");
  const Mat gram = Phi.transpose() * Phi;
  const double lam = lambda.value_or(default_ridge_lambda(gram));
  const Vec u = ridge_solve(gram, target_phi, lam);
  Vec scores = Phi * u;
  if (q) scores.array() *= 1.0 - q->pstar.array();
  return scores;
}

struct TrakRun {
  FeatureMatrix features;
  Vec target_phi;
  CorrectProbVector q;
};

/// Ensemble estimator. WithQ: mean of the per-run projections times the mean
/// of the per-run Q diagonals. WithoutQ: mean of the per-run projections.
inline Vec trak_multi(std::span<const TrakRun> runs, QMode mode, std::optional<double> lambda = {}) {
  if (runs.empty()) throw InvalidInput("trak_multi: need at least one run");
  const Index n = runs.front().features.phi.rows();
  Vec acc = Vec::Zero(n);
  Vec q_mean = Vec::Zero(n);
  for (const auto& run : runs) {
    if (run.features.phi.rows() != n) throw InvalidInput("trak_multi: runs disagree on n");
    acc += trak_single(run.features, run.target_phi, std::nullopt, lambda);
    if (mode == QMode::WithQ) {
      if (run.q.pstar.size() != n) throw InvalidInput("trak_multi: probability vector length mismatch");
      q_mean += (1.0 - run.q.pstar.array()).matrix();
    }
  }
  const double inv = 1.0 / static_cast<double>(runs.size());
  acc *= inv;
  if (mode == QMode::WithQ) acc.array() *= (q_mean * inv).array();
  return acc;
}

inline Vec trak_multi(const std::vector<TrakRun>& runs, QMode mode, std::optional<double> lambda = {}) {
  return trak_multi(std::span<const TrakRun>(runs), mode, lambda);
}

/// One trained model's contribution to a batched attribution.
struct TrakModelRun {
  FeatureMatrix features;  // training features, n x k
  Mat test_phi;            // n_test x k
  CorrectProbVector q;
};

/// Row t is trak_multi for test example t.
inline AttributionScores attribute_testset(const std::vector<TrakModelRun>& runs, QMode mode,
                                           std::optional<double> lambda = {}) {
  if (runs.empty()) throw InvalidInput("attribute_testset: need at least one run");
  const Index n = runs.front().features.phi.rows();
  const Index n_test = runs.front().test_phi.rows();
  Mat acc = Mat::Zero(n_test, n);
  Vec q_mean = Vec::Zero(n);
  double lam_report = 0.0;
  for (const auto& run : runs) {
    const Mat& Phi = run.features.phi;
    if (Phi.rows() != n) throw InvalidInput("attribute_testset: runs disagree on n");
    if (run.test_phi.rows() != n_test || run.test_phi.cols() != Phi.cols())
      throw InvalidInput("attribute_testset: test feature shape mismatch");
    const Mat gram = Phi.transpose() * Phi;
    const double lam = lambda.value_or(default_ridge_lambda(gram));
    lam_report = lam;
    const Eigen::MatrixXd U = ridge_solve_many(gram, run.test_phi.transpose(), lam);  // k x n_test
    acc.noalias() += U.transpose() * Phi.transpose();
    if (mode == QMode::WithQ) {
      if (run.q.pstar.size() != n) throw InvalidInput("attribute_testset: probability vector length mismatch");
      q_mean += (1.0 - run.q.pstar.array()).matrix();
    }
  }
  const double inv = 1.0 / static_cast<double>(runs.size());
  acc *= inv;
  if (mode == QMode::WithQ) acc.array().rowwise() *= (q_mean * inv).transpose().array();
  AttributionScores out;
  out.scores = std::move(acc);
  out.method = runs.size() == 1 && mode == QMode::WithoutQ ? AttributionMethod::TrakSingle
               : mode == QMode::WithQ                      ? AttributionMethod::TrakMultiQ
                                                           : AttributionMethod::TrakMultiNoQ;
  out.ridge_lambda = lambda.value_or(lam_report);
  return out;
}

// ---------------------------------------------------------------------------
// Leave-one-out influence for logistic regression

struct LooResult {
  Vec tau;
  std::size_t clamped_count = 0;
  std::vector<std::size_t> clamped;  // indices whose denominator was clamped
};

/// One-step Newton approximation of f(z; S) - f(z; S \ {z_i}) for the
/// logistic model with design rows x_i (bias column included, if any):
///
///   tau_i = y_i * x^T H^-1 x_i / (1 - x_i^T H^-1 x_i * p_i (1 - p_i)) * (1 - p_i)
///   H     = X^T R X + ridge * I,  R = diag(p_i (1 - p_i))
///
/// p_i is the correct-class probability and y_i in {-1,+1}.
inline LooResult loo_influence_closed_form(const Mat& X, const Vec& y, const Vec& pstar, const Vec& target,
                                           double ridge) {
  const Index n = X.rows();
  if (y.size() != n || pstar.size() != n || target.size() != X.cols())
    throw InvalidInput("loo_influence: dimension mismatch");
  const Vec r = (pstar.array() * (1.0 - pstar.array())).matrix();
  const Mat H = X.transpose() * r.asDiagonal() * X;
  const Vec u = ridge_solve(H, target, ridge);                               // H^-1 x
  const Eigen::MatrixXd HiXt = ridge_solve_many(H, X.transpose(), ridge);    // H^-1 X^T
  LooResult out;
  out.tau.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double lev = X.row(i).dot(HiXt.col(i));
    double denom = 1.0 - lev * r[i];
    if (denom <= 1e-12) {
      denom = 1e-12;
      out.clamped.push_back(static_cast<std::size_t>(i));
    }
    out.tau[i] = y[i] * X.row(i).dot(u) / denom * (1.0 - pstar[i]);
  }
  out.clamped_count = out.clamped.size();
  return out;
}

/// LOO influence of every training example on the logit of target input x,
/// for a model fit by train_logreg_newton on `data`. The training l2 penalty
/// is included in the Hessian.
inline LooResult loo_influence_logreg(const TrainedModel& m, const Dataset& data, const Vec& x) {
  if (m.kind != ModelKind::BinaryLogReg) throw InvalidInput("loo_influence_logreg: needs a logreg model");
  if (data.dim() != m.input_dim || x.size() != m.input_dim)
    throw InvalidInput("loo_influence_logreg: dimension mismatch");
  const Mat Xa = detail::augment_bias(data.inputs);
  const Vec y = detail::signed_labels(data);
  const Vec pstar = correct_probabilities(m, data).pstar;
  Vec target(x.size() + 1);
  target.head(x.size()) = x;
  target[x.size()] = 1.0;
  return loo_influence_closed_form(Xa, y, pstar, target, m.meta.l2);
}

}  // namespace attribkit
