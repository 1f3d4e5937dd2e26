#pragma once

// Resampling-based datamodel estimation: train on many random fixed-size
// subsets, record the target output of each model and regress the outputs
// on the subset indicator vectors with LASSO.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "attribkit/errors.hpp"
#include "attribkit/models.hpp"
#include "attribkit/numerics.hpp"
#include "attribkit/parallel.hpp"

namespace attribkit {

struct SubsetSample {
  std::vector<bool> mask;
  Vec indicator;
  std::size_t size = 0;
};

/// Subset size used for a ratio alpha over n examples: floor(alpha * n), but
/// never below one example.
inline std::size_t subset_size(std::size_t n, double alpha) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(alpha * static_cast<double>(n))));
}

/// M subsets of exactly subset_size(n, alpha) distinct indices each.
inline std::vector<SubsetSample> sample_subsets(std::size_t n, double alpha, std::size_t M,
                                                RandomStream& stream) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("sample_subsets: alpha must lie in (0,1)");
  if (n < 1) throw InvalidInput("sample_subsets: n must be positive");
  const std::size_t k = subset_size(n, alpha);
  std::vector<SubsetSample> out(M);
  for (auto& s : out) {
    s.mask.assign(n, false);
    s.indicator = Vec::Zero(static_cast<Index>(n));
    for (std::size_t i : stream.sample_without_replacement(n, k)) {
      s.mask[i] = true;
      s.indicator[static_cast<Index>(i)] = 1.0;
    }
    s.size = k;
  }
  return out;
}

inline Mat indicator_matrix(const std::vector<SubsetSample>& subsets) {
  if (subsets.empty()) return Mat(0, 0);
  Mat X(static_cast<Index>(subsets.size()), subsets.front().indicator.size());
  for (std::size_t i = 0; i < subsets.size(); ++i) X.row(static_cast<Index>(i)) = subsets[i].indicator.transpose();
  return X;
}

struct DatamodelMeta {
  double alpha = 0.5;
  std::size_t M = 0;
  double beta = 0.0;
  std::uint64_t seed = 0;
  bool fit_intercept = true;
};

struct DatamodelVector {
  Vec w;
  double intercept = 0.0;
  std::int64_t target_id = -1;
  DatamodelMeta meta;
};

/// 1_S' . w + intercept
inline double surrogate_predict(const DatamodelVector& dm, const SubsetSample& sample) {
  if (sample.indicator.size() != dm.w.size()) throw InvalidInput("surrogate_predict: length mismatch");
  return sample.indicator.dot(dm.w) + dm.intercept;
}

inline constexpr std::array<double, 5> kBetaGrid{1e-5, 1e-4, 1e-3, 1e-2, 1e-1};

/// 5-fold cross-validated LASSO penalty over kBetaGrid. Folds are contiguous
/// blocks of subset indices.
inline double cross_validate_beta(const Mat& X, const Vec& y, bool fit_intercept,
                                  const LassoOptions& opt = {}) {
  const Index m = X.rows();
  constexpr Index kFolds = 5;
  if (m < kFolds) throw InvalidInput("cross_validate_beta: need at least 5 subsets");
  double best_beta = kBetaGrid.front();
  double best_err = std::numeric_limits<double>::infinity();
  for (double beta : kBetaGrid) {
    double err = 0.0;
    for (Index f = 0; f < kFolds; ++f) {
      const Index lo = f * m / kFolds, hi = (f + 1) * m / kFolds;
      Mat Xtr(m - (hi - lo), X.cols());
      Vec ytr(m - (hi - lo));
      Index r = 0;
      for (Index i = 0; i < m; ++i) {
        if (i >= lo && i < hi) continue;
        Xtr.row(r) = X.row(i);
        ytr[r++] = y[i];
      }
      const auto fit = lasso_fit(Xtr, ytr, beta, fit_intercept, opt);
      for (Index i = lo; i < hi; ++i) {
        const double e = X.row(i).dot(fit.w) + fit.intercept - y[i];
        err += e * e;
      }
    }
    if (err < best_err) {
      best_err = err;
      best_beta = beta;
    }
  }
  return best_beta;
}

struct DatamodelOptions {
  double alpha = 0.5;
  std::size_t M = 200;
  std::optional<double> beta;  // nullopt: cross-validate
  bool fit_intercept = true;
  LassoOptions lasso;
};

/// Final regression step: LASSO of outputs on indicators.
inline DatamodelVector fit_datamodel(const Mat& indicators, const Vec& outputs, double beta,
                                     bool fit_intercept, const LassoOptions& opt = {}) {
  const auto fit = lasso_fit(indicators, outputs, beta, fit_intercept, opt);
  DatamodelVector dm;
  dm.w = fit.w;
  dm.intercept = fit.intercept;
  dm.meta.beta = beta;
  dm.meta.M = static_cast<std::size_t>(indicators.rows());
  dm.meta.fit_intercept = fit_intercept;
  return dm;
}

struct DatamodelFit {
  std::vector<SubsetSample> subsets;
  Mat outputs;  // M x targets
  std::vector<DatamodelVector> vectors;
};

/// Datamodels for several targets from one set of retrained models.
/// `outputs_fn(subset_index, sample)` returns the model outputs on every
/// target for the model trained on that subset; it may run concurrently for
/// different indices.
template <typename OutputsFn>
DatamodelFit estimate_datamodels_from_outputs(std::size_t n, const std::vector<std::int64_t>& target_ids,
                                              OutputsFn&& outputs_fn, const DatamodelOptions& opt,
                                              RandomStream& stream) {
  if (opt.M < 2) throw InvalidInput("estimate_datamodel: M must be at least 2");
  DatamodelFit fit;
  const std::uint64_t seed = stream.seed();
  fit.subsets = sample_subsets(n, opt.alpha, opt.M, stream);
  const auto t = static_cast<Index>(target_ids.size());
  fit.outputs.resize(static_cast<Index>(opt.M), t);
  parallel_for(opt.M, [&](std::size_t i) {
    Vec out;
    try {
      out = outputs_fn(i, fit.subsets[i]);
    } catch (const SubsetFailure&) {
      throw;
    } catch (const std::exception& e) {
      throw SubsetFailure(i, e.what());
    }
    if (out.size() != t) throw SubsetFailure(i, "output count does not match target count");
    fit.outputs.row(static_cast<Index>(i)) = out.transpose();
  });
  const Mat X = indicator_matrix(fit.subsets);
  fit.vectors.resize(target_ids.size());
  parallel_for(target_ids.size(), [&](std::size_t j) {
    const Vec y = fit.outputs.col(static_cast<Index>(j));
    const double beta = opt.beta ? *opt.beta : cross_validate_beta(X, y, opt.fit_intercept, opt.lasso);
    DatamodelVector dm = fit_datamodel(X, y, beta, opt.fit_intercept, opt.lasso);
    dm.target_id = target_ids[j];
    dm.meta.alpha = opt.alpha;
    dm.meta.seed = seed;
    fit.vectors[j] = std::move(dm);
  });
  return fit;
}

/// Trains a model on `data` restricted to one subset; the subset index lets
/// the trainer pick a per-subset seed.
using Trainer = std::function<TrainedModel(const Dataset&, std::size_t subset_index)>;

/// Datamodels of `targets` for models produced by `trainer` on subsets of
/// `data`, using the output function `fn`.
inline DatamodelFit estimate_datamodels(const Trainer& trainer, const Dataset& data, const Dataset& targets,
                                        OutputFn fn, const DatamodelOptions& opt, RandomStream& stream) {
  return estimate_datamodels_from_outputs(
      static_cast<std::size_t>(data.size()), targets.ids,
      [&](std::size_t i, const SubsetSample& s) {
        const TrainedModel m = trainer(data.subset_mask(s.mask), i);
        Vec out(targets.size());
        for (Index t = 0; t < targets.size(); ++t) out[t] = model_output(m, targets.example(t), fn);
        return out;
      },
      opt, stream);
}

inline DatamodelVector estimate_datamodel(const Trainer& trainer, const Dataset& data, const Example& z,
                                          OutputFn fn, const DatamodelOptions& opt, RandomStream& stream) {
  Dataset target;
  target.inputs = z.x.transpose();
  target.labels = {z.label};
  target.ids = {0};
  target.class_count = data.class_count;
  return estimate_datamodels(trainer, data, target, fn, opt, stream).vectors.front();
}

}  // namespace attribkit
