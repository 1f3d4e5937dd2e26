#pragma once

// Linear datamodeling score, order similarity and the cross-scale
// correlation metrics.

#include <cmath>
#include <cstdint>
#include <vector>

#include "attribkit/datamodels.hpp"
#include "attribkit/errors.hpp"
#include "attribkit/models.hpp"
#include "attribkit/numerics.hpp"
#include "attribkit/parallel.hpp"

namespace attribkit {

struct LdsReport {
  std::vector<double> per_target;
  double mean_lds = 0.0;
  std::size_t m = 0;
  double alpha = 0.5;
  std::uint64_t seed = 0;
};

/// LDS of attribution rows `tau` (targets x n). `outputs_fn(subset_index,
/// sample)` returns the actual outputs of a model retrained on the subset,
/// one per target. The prediction for a subset is its indicator dotted with
/// the target's row; intercepts would only shift predictions, which Spearman
/// ignores.
template <typename OutputsFn>
LdsReport lds_from_outputs(const Mat& tau, OutputsFn&& outputs_fn, std::size_t m, double alpha,
                           RandomStream& stream) {
  if (m < 3) throw InvalidInput("lds: need at least 3 subsets");
  if (tau.rows() < 1 || tau.cols() < 1) throw InvalidInput("lds: empty attribution matrix");
  LdsReport rep;
  rep.m = m;
  rep.alpha = alpha;
  rep.seed = stream.seed();
  const auto subsets = sample_subsets(static_cast<std::size_t>(tau.cols()), alpha, m, stream);
  Mat actual(static_cast<Index>(m), tau.rows());
  parallel_for(m, [&](std::size_t i) {
    Vec out;
    try {
      out = outputs_fn(i, subsets[i]);
    } catch (const SubsetFailure&) {
      throw;
    } catch (const std::exception& e) {
      throw SubsetFailure(i, e.what());
    }
    if (out.size() != tau.rows()) throw SubsetFailure(i, "output count does not match target count");
    actual.row(static_cast<Index>(i)) = out.transpose();
  });
  const Mat predicted = indicator_matrix(subsets) * tau.transpose();  // m x targets
  rep.per_target.resize(static_cast<std::size_t>(tau.rows()));
  double sum = 0.0;
  for (Index t = 0; t < tau.rows(); ++t) {
    rep.per_target[static_cast<std::size_t>(t)] = spearman(actual.col(t), predicted.col(t));
    sum += rep.per_target[static_cast<std::size_t>(t)];
  }
  rep.mean_lds = sum / static_cast<double>(tau.rows());
  return rep;
}

inline LdsReport lds(const Mat& tau, const Trainer& trainer, const Dataset& data, const Dataset& targets,
                     OutputFn fn, std::size_t m, double alpha, RandomStream& stream) {
  if (tau.rows() != targets.size() || tau.cols() != data.size())
    throw InvalidInput("lds: attribution matrix must be targets x training examples");
  return lds_from_outputs(
      tau,
      [&](std::size_t i, const SubsetSample& s) {
        const TrainedModel model = trainer(data.subset_mask(s.mask), i);
        Vec out(targets.size());
        for (Index t = 0; t < targets.size(); ++t) out[t] = model_output(model, targets.example(t), fn);
        return out;
      },
      m, alpha, stream);
}

struct OrderSimilarity {
  std::vector<double> per_target;
  double mean = 0.0;
};

/// Row-wise Spearman correlation between two score matrices.
inline OrderSimilarity order_similarity(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidInput("order_similarity: shape mismatch");
  if (a.rows() < 1) throw InvalidInput("order_similarity: no targets");
  OrderSimilarity out;
  double sum = 0.0;
  for (Index t = 0; t < a.rows(); ++t) {
    out.per_target.push_back(spearman(a.row(t).transpose(), b.row(t).transpose()));
    sum += out.per_target.back();
  }
  out.mean = sum / static_cast<double>(a.rows());
  return out;
}

/// Accuracy minus the 1/c accuracy of uniform guessing.
inline double accuracy_over_random(double acc, int class_count) {
  if (!(acc >= 0.0 && acc <= 1.0)) throw InvalidInput("accuracy_over_random: accuracy outside [0,1]");
  if (class_count < 2) throw InvalidInput("accuracy_over_random: class_count must be >= 2");
  return acc - 1.0 / class_count;
}

struct CrossCorrelation {
  double r2 = 0.0;
  double pearson = 0.0;
  double spearman = 0.0;
};

/// Correlation of proxy and reference losses across training distributions.
inline CrossCorrelation cross_distribution_correlation(const Vec& small_losses, const Vec& large_losses) {
  if (small_losses.size() != large_losses.size()) throw InvalidInput("cross_distribution_correlation: length mismatch");
  if (small_losses.size() < 3) throw InvalidInput("cross_distribution_correlation: need at least 3 distributions");
  CrossCorrelation c;
  c.pearson = pearson(small_losses, large_losses);
  c.r2 = c.pearson * c.pearson;
  c.spearman = spearman(small_losses, large_losses);
  return c;
}

}  // namespace attribkit
