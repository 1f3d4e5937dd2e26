#pragma once

// Cross-scale proxy study: build perturbed training distributions, train a
// family of MLP widths on each, and correlate proxy losses with those of the
// widest (reference) model.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "attribkit/cost.hpp"
#include "attribkit/errors.hpp"
#include "attribkit/evaluation.hpp"
#include "attribkit/models.hpp"
#include "attribkit/numerics.hpp"
#include "attribkit/parallel.hpp"
#include "attribkit/trak.hpp"

namespace attribkit {

enum class DistributionStrategy { Random, TopInfl, BotInfl, MostSim, LeastSim, SameClass };

inline const char* to_string(DistributionStrategy s) {
  switch (s) {
    case DistributionStrategy::Random: return "random";
    case DistributionStrategy::TopInfl: return "top_infl";
    case DistributionStrategy::BotInfl: return "bot_infl";
    case DistributionStrategy::MostSim: return "most_sim";
    case DistributionStrategy::LeastSim: return "least_sim";
    case DistributionStrategy::SameClass: return "same_class";
  }
  return "?";
}

inline DistributionStrategy parse_strategy(const std::string& s) {
  for (auto st : {DistributionStrategy::Random, DistributionStrategy::TopInfl, DistributionStrategy::BotInfl,
                  DistributionStrategy::MostSim, DistributionStrategy::LeastSim, DistributionStrategy::SameClass})
    if (s == to_string(st)) return st;
  throw InvalidInput("unknown distribution strategy '" + s + "'");
}

struct DistributionSpec {
  DistributionStrategy strategy = DistributionStrategy::Random;
  double fraction = 0.0;               // share of examples removed
  std::optional<int> target_class;     // SameClass only
  std::uint64_t seed = 0;
  double pool_fraction = 0.10;         // ranked pool the removals are drawn from
  bool allow_nonstandard = false;      // lift the fraction limits below

  std::string label() const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s@%g#%llu", to_string(strategy), fraction,
                  static_cast<unsigned long long>(seed));
    return buf;
  }

  void validate() const {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw InvalidInput("distribution fraction must lie in [0,1]");
    if (!(pool_fraction > 0.0 && pool_fraction <= 1.0)) throw InvalidInput("pool fraction must lie in (0,1]");
    if (allow_nonstandard) return;
    if (strategy == DistributionStrategy::SameClass) {
      if (fraction != 0.25 && fraction != 0.5 && fraction != 0.75)
        throw InvalidInput("same_class fraction must be one of 0.25, 0.5, 0.75");
    } else if (fraction > 0.10 + 1e-12) {
      throw InvalidInput(std::string(to_string(strategy)) + " fraction must not exceed 0.10");
    }
  }
};

/// Auxiliary inputs some strategies need.
struct DistributionInputs {
  std::optional<Vec> scores;           // attribution score per training example
  std::optional<Mat> features;         // n x q representation of the training set
  std::optional<Vec> target_features;  // q-vector of the target example
};

namespace detail {

/// Indices sorted by key descending; equal keys keep index order.
inline std::vector<std::size_t> rank_descending(const Vec& key) {
  std::vector<std::size_t> idx(static_cast<std::size_t>(key.size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return key[static_cast<Index>(a)] > key[static_cast<Index>(b)];
  });
  return idx;
}

inline Vec cosine_similarity(const Mat& features, const Vec& target) {
  if (features.cols() != target.size()) throw InvalidInput("cosine similarity: feature width mismatch");
  const double tn = target.norm();
  Vec s(features.rows());
  for (Index i = 0; i < features.rows(); ++i) {
    const double fn = features.row(i).norm();
    s[i] = (fn == 0.0 || tn == 0.0) ? 0.0 : features.row(i).dot(target) / (fn * tn);
  }
  return s;
}

}  // namespace detail

/// Removes floor(fraction * n) examples (SameClass: floor(fraction * n_c)).
/// Ranked strategies draw the removals uniformly from the top
/// ceil(max(pool_fraction, fraction) * n) examples by their criterion.
/// Survivors keep their order, features, labels and ids.
inline Dataset build_distribution(const Dataset& base, const DistributionSpec& spec,
                                  const DistributionInputs& aux = {}) {
  spec.validate();
  const auto n = static_cast<std::size_t>(base.size());
  RandomStream rs(derive_seed(spec.seed, static_cast<std::uint64_t>(spec.strategy)));
  std::vector<std::size_t> eligible;
  std::size_t remove = static_cast<std::size_t>(std::floor(spec.fraction * static_cast<double>(n)));

  auto ranked_pool = [&](const Vec& key) {
    if (key.size() != base.size()) throw InvalidInput("build_distribution: criterion length mismatch");
    const double pf = std::max(spec.pool_fraction, spec.fraction);
    const auto pool = std::min(n, static_cast<std::size_t>(std::ceil(pf * static_cast<double>(n) - 1e-9)));
    auto order = detail::rank_descending(key);
    order.resize(pool);
    return order;
  };

  switch (spec.strategy) {
    case DistributionStrategy::Random:
      eligible.resize(n);
      std::iota(eligible.begin(), eligible.end(), std::size_t{0});
      break;
    case DistributionStrategy::TopInfl:
    case DistributionStrategy::BotInfl: {
      if (!aux.scores) throw InvalidInput("build_distribution: influence strategies need attribution scores");
      const Vec key = spec.strategy == DistributionStrategy::TopInfl ? Vec(*aux.scores) : Vec(-*aux.scores);
      eligible = ranked_pool(key);
      break;
    }
    case DistributionStrategy::MostSim:
    case DistributionStrategy::LeastSim: {
      if (!aux.features || !aux.target_features)
        throw InvalidInput("build_distribution: similarity strategies need features and target features");
      if (aux.features->rows() != base.size()) throw InvalidInput("build_distribution: feature rows mismatch");
      const Vec sim = detail::cosine_similarity(*aux.features, *aux.target_features);
      eligible = ranked_pool(spec.strategy == DistributionStrategy::MostSim ? sim : Vec(-sim));
      break;
    }
    case DistributionStrategy::SameClass: {
      if (!spec.target_class) throw InvalidInput("build_distribution: same_class needs a target class");
      for (std::size_t i = 0; i < n; ++i)
        if (base.labels[i] == *spec.target_class) eligible.push_back(i);
      remove = static_cast<std::size_t>(std::floor(spec.fraction * static_cast<double>(eligible.size())));
      break;
    }
  }
  remove = std::min(remove, eligible.size());
  std::vector<bool> keep(n, true);
  for (std::size_t j : rs.sample_without_replacement(eligible.size(), remove)) keep[eligible[j]] = false;
  return base.subset_mask(keep);
}

inline Vec per_example_r2(const Mat& small, const Mat& large) {
  if (small.rows() != large.rows() || small.cols() != large.cols())
    throw InvalidInput("per_example_r2: shape mismatch");
  if (small.rows() < 3) throw InvalidInput("per_example_r2: need at least 3 distributions");
  Vec out(small.cols());
  for (Index j = 0; j < small.cols(); ++j) out[j] = pearson_r2(small.col(j), large.col(j));
  return out;
}

struct TestSet {
  std::string name;
  Dataset data;
};

struct StudyConfig {
  TrainConfig train;                 // seed is replaced per cell
  std::uint64_t seed = 0;
  int ensemble = 1;                  // models averaged per cell
  std::size_t attribution_target = 0;  // example of test set 0 that Infl/Sim/SameClass refer to
  Index projection_dim = 64;         // TRAK sketch size for the influence strategies
  double tokens_per_example = 1.0;   // T in the training-FLOP column
  std::optional<double> figure_width;  // proxy width written to per_example_r2.csv
};

struct TestSetEval {
  double mean_loss = 0.0;
  double accuracy = 0.0;
  double accuracy_over_random = 0.0;
  std::vector<double> losses;  // per example, averaged over the ensemble
};

struct StudyCell {
  double width = 0.0;
  std::size_t distribution = 0;
  std::size_t train_size = 0;
  Index param_count = 0;
  bool failed = false;
  std::string error;
  std::vector<TestSetEval> per_test;
};

struct StudyCorrelation {
  std::size_t test_set = 0;
  double width = 0.0;
  double compute_flops = 0.0;
  std::size_t distributions_used = 0;
  std::optional<CrossCorrelation> corr;
  std::vector<double> per_example_r2;
};

struct StudyReport {
  std::uint64_t seed = 0;
  std::vector<double> widths;
  std::size_t reference = 0;  // index into widths
  std::vector<std::string> distributions;
  std::vector<std::string> test_sets;
  std::vector<std::vector<std::int64_t>> test_ids;
  std::vector<double> compute_flops;  // per width
  std::vector<StudyCell> cells;       // width-major
  std::vector<StudyCorrelation> correlations;
  double figure_width = 0.0;
  std::vector<std::string> notes;

  const StudyCell& cell(std::size_t w, std::size_t d) const { return cells[w * distributions.size() + d]; }
  bool empty() const { return cells.empty(); }
};

namespace detail {

inline std::uint64_t width_seed(std::uint64_t seed, double width, int member) {
  return derive_seed(derive_seed(seed, std::bit_cast<std::uint64_t>(width)), static_cast<std::uint64_t>(member));
}

}  // namespace detail

/// Auxiliary inputs derived from a reference-width model trained on the full
/// base set: TRAK scores on the target example and penultimate activations.
inline DistributionInputs study_inputs(const Dataset& base, const Example& target, double reference_width,
                                       const StudyConfig& cfg) {
  TrainConfig tc = cfg.train;
  tc.seed = detail::width_seed(cfg.seed, reference_width, -1);
  const TrainedModel ref = train_mlp(base, reference_width, tc);
  DistributionInputs aux;
  const Index p = ref.param_count();
  const Index k = cfg.projection_dim > 0 ? std::min(cfg.projection_dim, p) : p;
  RandomStream prs(derive_seed(cfg.seed, 0x7A4B));
  const Mat P = gaussian_projection(p, k, prs);
  const FeatureMatrix fm = compute_features(ref, base, P, OutputFn::CorrectLogOdds, prs.seed());
  const Vec target_phi = P.transpose() * output_gradient(ref, target, OutputFn::CorrectLogOdds);
  aux.scores = trak_single(fm, target_phi, std::nullopt);
  Mat feats(base.size(), ref.hidden);
  for (Index i = 0; i < base.size(); ++i) feats.row(i) = penultimate_features(ref, base.inputs.row(i).transpose()).transpose();
  aux.features = std::move(feats);
  aux.target_features = penultimate_features(ref, target.x);
  return aux;
}

inline StudyReport run_scale_study(const Dataset& base, const std::vector<TestSet>& test_sets,
                                   const std::vector<double>& widths,
                                   const std::vector<DistributionSpec>& distributions, const StudyConfig& cfg) {
  if (distributions.size() < 3) throw InvalidInput("run_scale_study: need at least 3 distributions");
  if (widths.empty()) throw InvalidInput("run_scale_study: need at least one width");
  if (test_sets.empty()) throw InvalidInput("run_scale_study: need at least one test set");
  if (cfg.ensemble < 1) throw InvalidInput("run_scale_study: ensemble must be >= 1");
  for (double w : widths)
    if (!(w > 0.0)) throw InvalidInput("run_scale_study: widths must be positive");
  for (const auto& ts : test_sets)
    if (ts.data.dim() != base.dim()) throw InvalidInput("run_scale_study: test set '" + ts.name + "' has wrong dimension");
  base.validate();

  StudyReport rep;
  rep.seed = cfg.seed;
  rep.widths = widths;
  rep.reference = 0;
  for (std::size_t w = 1; w < widths.size(); ++w)
    if (widths[w] >= widths[rep.reference]) rep.reference = w;
  for (const auto& d : distributions) rep.distributions.push_back(d.label());
  for (const auto& ts : test_sets) {
    rep.test_sets.push_back(ts.name);
    rep.test_ids.push_back(ts.data.ids);
  }

  const auto& target_set = test_sets.front().data;
  if (cfg.attribution_target >= static_cast<std::size_t>(target_set.size()))
    throw InvalidInput("run_scale_study: attribution target out of range");
  const Example target = target_set.example(static_cast<Index>(cfg.attribution_target));

  bool needs_aux = false;
  for (const auto& d : distributions)
    needs_aux |= d.strategy != DistributionStrategy::Random && d.strategy != DistributionStrategy::SameClass;
  DistributionInputs aux;
  if (needs_aux) aux = study_inputs(base, target, widths[rep.reference], cfg);

  std::vector<Dataset> train_sets;
  train_sets.reserve(distributions.size());
  for (auto spec : distributions) {
    if (spec.strategy == DistributionStrategy::SameClass && !spec.target_class) spec.target_class = target.label;
    train_sets.push_back(build_distribution(base, spec, aux));
  }

  const std::size_t nw = widths.size(), nd = distributions.size();
  rep.cells.resize(nw * nd);
  parallel_for(nw * nd, [&](std::size_t c) {
    StudyCell& cell = rep.cells[c];
    cell.width = widths[c / nd];
    cell.distribution = c % nd;
    const Dataset& train = train_sets[cell.distribution];
    cell.train_size = static_cast<std::size_t>(train.size());
    cell.per_test.resize(test_sets.size());
    for (std::size_t t = 0; t < test_sets.size(); ++t)
      cell.per_test[t].losses.assign(static_cast<std::size_t>(test_sets[t].data.size()), 0.0);
    try {
      for (int e = 0; e < cfg.ensemble; ++e) {
        TrainConfig tc = cfg.train;
        tc.seed = detail::width_seed(cfg.seed, cell.width, e);
        const TrainedModel m = train_mlp(train, cell.width, tc);
        cell.param_count = m.param_count();
        for (std::size_t t = 0; t < test_sets.size(); ++t) {
          const EvalResult ev = evaluate(m, test_sets[t].data);
          auto& out = cell.per_test[t];
          for (std::size_t i = 0; i < ev.per_example.size(); ++i) out.losses[i] += ev.per_example[i].loss / cfg.ensemble;
          out.accuracy += ev.accuracy / cfg.ensemble;
        }
      }
      for (std::size_t t = 0; t < test_sets.size(); ++t) {
        auto& out = cell.per_test[t];
        double s = 0.0;
        for (double l : out.losses) s += l;
        out.mean_loss = s / static_cast<double>(out.losses.size());
        out.accuracy_over_random = accuracy_over_random(std::clamp(out.accuracy, 0.0, 1.0), test_sets[t].data.class_count);
      }
    } catch (const Error& e) {
      cell.failed = true;
      cell.error = e.what();
      cell.per_test.clear();
    }
  });
  for (const auto& cell : rep.cells)
    if (cell.failed)
      rep.notes.push_back("cell width=" + std::to_string(cell.width) + " distribution=" +
                          rep.distributions[cell.distribution] + " failed: " + cell.error);

  rep.compute_flops.resize(nw);
  for (std::size_t w = 0; w < nw; ++w) {
    const int h = hidden_width(cfg.train.hidden_base, widths[w]);
    cost::CostProfile prof;
    prof.p = static_cast<double>(expected_param_count(ModelKind::MLP, static_cast<int>(base.dim()), base.class_count, h));
    prof.T = cfg.tokens_per_example;
    prof.n_train = static_cast<double>(base.size());
    rep.compute_flops[w] = cost::train_cost(prof) * cfg.ensemble;
  }

  // default figure proxy: the smallest non-reference width
  double smallest = widths[rep.reference];
  bool have_proxy = false;
  for (std::size_t w = 0; w < nw; ++w)
    if (w != rep.reference && (!have_proxy || widths[w] < smallest)) {
      smallest = widths[w];
      have_proxy = true;
    }
  rep.figure_width = cfg.figure_width.value_or(smallest);
  for (std::size_t t = 0; t < test_sets.size(); ++t) {
    for (std::size_t w = 0; w < nw; ++w) {
      if (w == rep.reference) continue;
      StudyCorrelation sc;
      sc.test_set = t;
      sc.width = widths[w];
      sc.compute_flops = rep.compute_flops[w];
      std::vector<std::size_t> ok;
      for (std::size_t d = 0; d < nd; ++d)
        if (!rep.cell(w, d).failed && !rep.cell(rep.reference, d).failed) ok.push_back(d);
      sc.distributions_used = ok.size();
      if (ok.size() >= 3) {
        const auto m = static_cast<Index>(ok.size());
        const auto ne = static_cast<Index>(test_sets[t].data.size());
        Vec small(m), large(m);
        Mat small_ex(m, ne), large_ex(m, ne);
        for (Index r = 0; r < m; ++r) {
          const auto& a = rep.cell(w, ok[static_cast<std::size_t>(r)]).per_test[t];
          const auto& b = rep.cell(rep.reference, ok[static_cast<std::size_t>(r)]).per_test[t];
          small[r] = a.mean_loss;
          large[r] = b.mean_loss;
          small_ex.row(r) = Eigen::Map<const Vec>(a.losses.data(), ne).transpose();
          large_ex.row(r) = Eigen::Map<const Vec>(b.losses.data(), ne).transpose();
        }
        sc.corr = cross_distribution_correlation(small, large);
        const Vec r2 = per_example_r2(small_ex, large_ex);
        sc.per_example_r2.assign(r2.data(), r2.data() + r2.size());
      } else {
        rep.notes.push_back("test set " + test_sets[t].name + " width " + std::to_string(widths[w]) +
                            ": fewer than 3 usable distributions, correlation omitted");
      }
      rep.correlations.push_back(std::move(sc));
    }
  }
  return rep;
}

}  // namespace attribkit
