#pragma once

// Datasets and the desk-scale model zoo: l2-regularized binary logistic
// regression (Newton), softmax regression and a one-hidden-layer tanh MLP
// (seeded mini-batch SGD), plus the model-output functions used for
// attribution.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "attribkit/errors.hpp"
#include "attribkit/numerics.hpp"

namespace attribkit {

inline constexpr double kProbEps = 1e-12;

// ---------------------------------------------------------------------------
// Dataset

struct Example {
  Vec x;
  int label = 0;
};

struct Dataset {
  Mat inputs;                      // n x d
  std::vector<int> labels;         // class ids in [0, class_count)
  std::vector<std::int64_t> ids;   // stable, unique
  int class_count = 2;

  Index size() const { return inputs.rows(); }
  Index dim() const { return inputs.cols(); }

  Example example(Index i) const { return {inputs.row(i).transpose(), labels[static_cast<std::size_t>(i)]}; }

  void validate() const {
    const auto n = static_cast<std::size_t>(inputs.rows());
    detail::require(n >= 1, "dataset: must contain at least one example");
    detail::require(labels.size() == n && ids.size() == n, "dataset: column lengths differ");
    detail::require(class_count >= 2, "dataset: class_count must be >= 2");
    detail::require(all_finite(inputs), "dataset: non-finite feature value");
    for (int y : labels)
      detail::require(y >= 0 && y < class_count, "dataset: label out of range");
    std::unordered_set<std::int64_t> seen(ids.begin(), ids.end());
    detail::require(seen.size() == n, "dataset: ids are not unique");
  }

  /// Rows at the given positions, in the given order; ids are carried along.
  Dataset subset(const std::vector<std::size_t>& rows) const {
    Dataset out;
    out.class_count = class_count;
    out.inputs.resize(static_cast<Index>(rows.size()), dim());
    out.labels.reserve(rows.size());
    out.ids.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      detail::require(rows[r] < static_cast<std::size_t>(size()), "dataset: row index out of range");
      out.inputs.row(static_cast<Index>(r)) = inputs.row(static_cast<Index>(rows[r]));
      out.labels.push_back(labels[rows[r]]);
      out.ids.push_back(ids[rows[r]]);
    }
    return out;
  }

  Dataset subset_mask(const std::vector<bool>& mask) const {
    detail::require(mask.size() == static_cast<std::size_t>(size()), "dataset: mask length mismatch");
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) rows.push_back(i);
    return subset(rows);
  }
};

/// Reads `id,label,f0,...,f{d-1}`. class_count defaults to max(label)+1
/// (at least 2).
inline Dataset read_dataset_csv(const std::string& path, std::optional<int> class_count = {}) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open dataset " + path);
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("dataset " + path + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 3 || header[0] != "id" || header[1] != "label")
    throw InvalidInput("dataset " + path + ": header must be id,label,f0,...");
  const std::size_t d = header.size() - 2;
  for (std::size_t j = 0; j < d; ++j)
    if (header[j + 2] != "f" + std::to_string(j))
      throw InvalidInput("dataset " + path + ": feature column " + std::to_string(j) + " misnamed");

  std::vector<double> values;
  Dataset ds;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != d + 2)
      throw InvalidInput("dataset " + path + ": wrong column count on line " + std::to_string(lineno));
    try {
      std::size_t pos = 0;
      ds.ids.push_back(std::stoll(cells[0], &pos));
      ds.labels.push_back(std::stoi(cells[1], &pos));
      for (std::size_t j = 0; j < d; ++j) values.push_back(std::stod(cells[j + 2]));
    } catch (const std::exception&) {
      throw InvalidInput("dataset " + path + ": unparsable value on line " + std::to_string(lineno));
    }
  }
  const auto n = static_cast<Index>(ds.ids.size());
  ds.inputs = Eigen::Map<Mat>(values.data(), n, static_cast<Index>(d));
  int max_label = 1;
  for (int y : ds.labels) max_label = std::max(max_label, y);
  ds.class_count = class_count.value_or(max_label + 1);
  ds.validate();
  return ds;
}

inline std::string dataset_to_csv(const Dataset& ds) {
  std::ostringstream out;
  out.precision(17);
  out << "id,label";
  for (Index j = 0; j < ds.dim(); ++j) out << ",f" << j;
  out << "\n";
  for (Index i = 0; i < ds.size(); ++i) {
    out << ds.ids[static_cast<std::size_t>(i)] << "," << ds.labels[static_cast<std::size_t>(i)];
    for (Index j = 0; j < ds.dim(); ++j) out << "," << ds.inputs(i, j);
    out << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Models

enum class ModelKind { BinaryLogReg, SoftmaxReg, MLP };

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::BinaryLogReg: return "logreg";
    case ModelKind::SoftmaxReg: return "softmax";
    case ModelKind::MLP: return "mlp";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "logreg") return ModelKind::BinaryLogReg;
  if (s == "softmax") return ModelKind::SoftmaxReg;
  if (s == "mlp") return ModelKind::MLP;
  throw InvalidInput("unknown model kind '" + s + "'");
}

struct TrainMeta {
  std::uint64_t seed = 0;
  int epochs = 0;        // SGD epochs, or Newton iterations for logreg
  double tol = 0.0;
  double l2 = 0.0;
  std::int64_t subset_id = -1;
  double final_loss = std::numeric_limits<double>::quiet_NaN();
};

struct TrainedModel {
  ModelKind kind = ModelKind::BinaryLogReg;
  Vec theta;
  double width_factor = 1.0;
  int input_dim = 0;
  int class_count = 2;
  int hidden = 0;  // hidden units; 0 for the linear models
  TrainMeta meta;

  Index param_count() const { return theta.size(); }
};

/// Parameter count implied by a model shape. Layout of theta:
///   logreg  : [w (d), b]
///   softmax : [W (c x d, row-major), b (c)]
///   mlp     : [W1 (h x d), b1 (h), W2 (c x h), b2 (c)]
inline Index expected_param_count(ModelKind kind, int d, int c, int h) {
  switch (kind) {
    case ModelKind::BinaryLogReg: return d + 1;
    case ModelKind::SoftmaxReg: return static_cast<Index>(c) * (d + 1);
    case ModelKind::MLP: return static_cast<Index>(h) * (d + 1) + static_cast<Index>(c) * (h + 1);
  }
  return 0;
}

inline int hidden_width(int hidden_base, double width_factor) {
  if (!(width_factor > 0.0)) throw InvalidInput("width_factor must be positive");
  return std::max(1, static_cast<int>(std::lround(hidden_base * width_factor)));
}

namespace detail {

inline void check_input(const TrainedModel& m, const Vec& x) {
  if (x.size() != m.input_dim)
    throw InvalidInput("model expects " + std::to_string(m.input_dim) + " features, got " +
                       std::to_string(x.size()));
}

inline void check_label(const TrainedModel& m, int label) {
  if (label < 0 || label >= m.class_count) throw InvalidInput("label out of range for model");
}

struct Forward {
  Vec hidden;  // tanh activations (MLP only)
  Vec logits;
};

inline Forward forward(const TrainedModel& m, const Vec& x) {
  check_input(m, x);
  const int d = m.input_dim, c = m.class_count, h = m.hidden;
  const double* t = m.theta.data();
  Forward f;
  switch (m.kind) {
    case ModelKind::BinaryLogReg: {
      f.logits.resize(2);
      f.logits[0] = 0.0;
      f.logits[1] = Eigen::Map<const Vec>(t, d).dot(x) + t[d];
      break;
    }
    case ModelKind::SoftmaxReg: {
      Eigen::Map<const Mat> W(t, c, d);
      Eigen::Map<const Vec> b(t + c * d, c);
      f.logits = W * x + b;
      break;
    }
    case ModelKind::MLP: {
      Eigen::Map<const Mat> W1(t, h, d);
      Eigen::Map<const Vec> b1(t + h * d, h);
      Eigen::Map<const Mat> W2(t + h * (d + 1), c, h);
      Eigen::Map<const Vec> b2(t + h * (d + 1) + c * h, c);
      f.hidden = (W1 * x + b1).array().tanh().matrix();
      f.logits = W2 * f.hidden + b2;
      break;
    }
  }
  return f;
}

/// theta-gradient given dOut/dlogits for one input.
inline Vec backward(const TrainedModel& m, const Vec& x, const Forward& f, const Vec& dlogits) {
  const int d = m.input_dim, c = m.class_count, h = m.hidden;
  Vec g(m.theta.size());
  double* o = g.data();
  switch (m.kind) {
    case ModelKind::BinaryLogReg: {
      // logits are (0, s); only dlogits[1] reaches the parameters
      const double ds = dlogits[1] - 0.0;
      Eigen::Map<Vec>(o, d) = ds * x;
      o[d] = ds;
      break;
    }
    case ModelKind::SoftmaxReg: {
      Eigen::Map<Mat>(o, c, d) = dlogits * x.transpose();
      Eigen::Map<Vec>(o + c * d, c) = dlogits;
      break;
    }
    case ModelKind::MLP: {
      Eigen::Map<const Mat> W2(m.theta.data() + h * (d + 1), c, h);
      const Vec dpre = ((W2.transpose() * dlogits).array() * (1.0 - f.hidden.array().square())).matrix();
      Eigen::Map<Mat>(o, h, d) = dpre * x.transpose();
      Eigen::Map<Vec>(o + h * d, h) = dpre;
      Eigen::Map<Mat>(o + h * (d + 1), c, h) = dlogits * f.hidden.transpose();
      Eigen::Map<Vec>(o + h * (d + 1) + c * h, c) = dlogits;
      break;
    }
  }
  return g;
}

inline double log_sum_exp(const Vec& z) {
  const double mx = z.maxCoeff();
  return mx + std::log((z.array() - mx).exp().sum());
}

inline Vec softmax(const Vec& z) {
  Vec e = (z.array() - z.maxCoeff()).exp().matrix();
  return e / e.sum();
}

/// log-sum-exp over all logits except `skip`.
inline double log_sum_exp_except(const Vec& z, int skip) {
  double mx = -std::numeric_limits<double>::infinity();
  for (Index j = 0; j < z.size(); ++j)
    if (j != skip) mx = std::max(mx, z[j]);
  double s = 0.0;
  for (Index j = 0; j < z.size(); ++j)
    if (j != skip) s += std::exp(z[j] - mx);
  return mx + std::log(s);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Output functions

/// Logit f(z) = x.w + b of a binary logistic regression.
inline double model_output_binary(const TrainedModel& m, const Vec& x) {
  if (m.kind != ModelKind::BinaryLogReg) throw InvalidInput("model_output_binary: not a logreg model");
  detail::check_input(m, x);
  return m.theta.head(m.input_dim).dot(x) + m.theta[m.input_dim];
}

struct OddsValue {
  double value = 0.0;
  bool clamped = false;
};

/// log(p / (1 - p)) with p clamped to [eps, 1 - eps].
inline OddsValue log_odds(double p, double eps = kProbEps) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("log_odds: probability outside [0,1]");
  OddsValue r;
  if (p < eps) {
    p = eps;
    r.clamped = true;
  } else if (p > 1.0 - eps) {
    p = 1.0 - eps;
    r.clamped = true;
  }
  r.value = std::log(p) - std::log1p(-p);
  return r;
}

inline OddsValue raw_odds(double p, double eps = kProbEps) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("raw_odds: probability outside [0,1]");
  OddsValue r;
  if (p < eps) {
    p = eps;
    r.clamped = true;
  } else if (p > 1.0 - eps) {
    p = 1.0 - eps;
    r.clamped = true;
  }
  r.value = p / (1.0 - p);
  return r;
}

/// Probabilities of every class.
inline Vec class_probabilities(const TrainedModel& m, const Vec& x) {
  return detail::softmax(detail::forward(m, x).logits);
}

inline double correct_class_probability(const TrainedModel& m, const Example& z) {
  detail::check_label(m, z.label);
  return class_probabilities(m, z.x)[z.label];
}

/// Correct-class log-odds log(p/(1-p)), evaluated as
/// logit_y - logsumexp(other logits) and clamped to the log-odds of
/// [eps, 1-eps]. For a binary logreg this is y * (x.w + b) with y in {-1,+1}.
inline OddsValue model_output_multiclass(const TrainedModel& m, const Example& z) {
  detail::check_label(m, z.label);
  const Vec logits = detail::forward(m, z.x).logits;
  const double v = logits[z.label] - detail::log_sum_exp_except(logits, z.label);
  const double bound = std::log1p(-kProbEps) - std::log(kProbEps);
  OddsValue r;
  r.value = std::clamp(v, -bound, bound);
  r.clamped = r.value != v;
  return r;
}

struct SequenceProbs {
  std::vector<double> probs;  // correct-token probabilities for positions 2..T
  int context_length = 0;     // T
};

enum class OddsMode { LogOdds, RawOdds };

/// (1/T) * sum over positions 2..T of odds(p_j).
inline double model_output_lm(const SequenceProbs& seq, OddsMode mode = OddsMode::LogOdds) {
  if (seq.context_length < 2) throw InvalidInput("model_output_lm: context length must be >= 2");
  if (seq.probs.size() != static_cast<std::size_t>(seq.context_length - 1))
    throw InvalidInput("model_output_lm: expected T-1 probabilities");
  double sum = 0.0;
  for (double p : seq.probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("model_output_lm: probability outside (0,1)");
    sum += mode == OddsMode::LogOdds ? log_odds(p).value : raw_odds(p).value;
  }
  return sum / seq.context_length;
}

/// Which scalar the attribution machinery differentiates.
enum class OutputFn {
  Logit,           // binary logreg x.w + b (label-independent)
  CorrectLogOdds,  // log(p_y / (1 - p_y)) of the example's own label
};

inline OutputFn default_output_fn(ModelKind k) {
  return k == ModelKind::BinaryLogReg ? OutputFn::Logit : OutputFn::CorrectLogOdds;
}

inline double model_output(const TrainedModel& m, const Example& z, OutputFn fn) {
  if (fn == OutputFn::Logit) return model_output_binary(m, z.x);
  return model_output_multiclass(m, z).value;
}

/// Analytic gradient of the chosen output function with respect to theta.
inline Vec output_gradient(const TrainedModel& m, const Example& z, OutputFn fn) {
  const auto f = detail::forward(m, z.x);
  Vec dlogits = Vec::Zero(m.class_count);
  if (fn == OutputFn::Logit) {
    if (m.kind != ModelKind::BinaryLogReg) throw InvalidInput("logit output needs a logreg model");
    dlogits[1] = 1.0;
  } else {
    detail::check_label(m, z.label);
    // d/dz_j [z_y - lse_{k != y} z_k] = 1 for j = y, -softmax_{-y}(z)_j otherwise
    const double lse = detail::log_sum_exp_except(f.logits, z.label);
    for (int j = 0; j < m.class_count; ++j)
      dlogits[j] = j == z.label ? 1.0 : -std::exp(f.logits[j] - lse);
  }
  return detail::backward(m, z.x, f, dlogits);
}

/// Gradient of the cross-entropy loss -log p_y(z) in theta.
inline Vec loss_gradient(const TrainedModel& m, const Example& z) {
  detail::check_label(m, z.label);
  const auto f = detail::forward(m, z.x);
  Vec dlogits = detail::softmax(f.logits);
  dlogits[z.label] -= 1.0;
  return detail::backward(m, z.x, f, dlogits);
}

/// Hidden-layer activations (the penultimate representation). Linear models
/// return their input.
inline Vec penultimate_features(const TrainedModel& m, const Vec& x) {
  if (m.kind != ModelKind::MLP) {
    detail::check_input(m, x);
    return x;
  }
  return detail::forward(m, x).hidden;
}

// ---------------------------------------------------------------------------
// Evaluation

struct ExampleEval {
  double loss = 0.0;
  double margin = 0.0;
  bool correct = false;
};

struct EvalResult {
  std::vector<ExampleEval> per_example;
  double mean_loss = 0.0;
  double accuracy = 0.0;
};

inline ExampleEval evaluate_example(const TrainedModel& m, const Example& z) {
  detail::check_label(m, z.label);
  const Vec logits = detail::forward(m, z.x).logits;
  ExampleEval e;
  e.loss = detail::log_sum_exp(logits) - logits[z.label];
  double best_other = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < m.class_count; ++j)
    if (j != z.label) best_other = std::max(best_other, logits[j]);
  e.margin = logits[z.label] - best_other;
  Index arg = 0;
  logits.maxCoeff(&arg);
  e.correct = arg == z.label;
  return e;
}

inline EvalResult evaluate(const TrainedModel& m, const Dataset& data) {
  if (data.dim() != m.input_dim) throw InvalidInput("evaluate: dimension mismatch");
  EvalResult r;
  r.per_example.reserve(static_cast<std::size_t>(data.size()));
  double loss = 0.0;
  std::size_t hits = 0;
  for (Index i = 0; i < data.size(); ++i) {
    r.per_example.push_back(evaluate_example(m, data.example(i)));
    loss += r.per_example.back().loss;
    hits += r.per_example.back().correct;
  }
  const double n = static_cast<double>(data.size());
  r.mean_loss = loss / n;
  r.accuracy = static_cast<double>(hits) / n;
  return r;
}

// ---------------------------------------------------------------------------
// Training

struct NewtonOptions {
  double l2 = 0.1;
  double tol = 1e-10;
  int max_iter = 100;
};

namespace detail {

/// Objective sum_i log(1 + exp(-y_i s_i)) + (l2/2)||theta||^2 with s = x.w + b.
inline double logreg_objective(const Mat& Xa, const Vec& y, const Vec& theta, double l2) {
  const Vec s = Xa * theta;
  double obj = 0.0;
  for (Index i = 0; i < s.size(); ++i) {
    const double t = -y[i] * s[i];
    obj += t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
  }
  return obj + 0.5 * l2 * theta.squaredNorm();
}

inline double sigmoid(double t) {
  return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

inline Mat augment_bias(const Mat& X) {
  Mat Xa(X.rows(), X.cols() + 1);
  Xa.leftCols(X.cols()) = X;
  Xa.col(X.cols()).setOnes();
  return Xa;
}

inline Vec signed_labels(const Dataset& data) {
  Vec y(data.size());
  for (Index i = 0; i < data.size(); ++i) y[i] = data.labels[static_cast<std::size_t>(i)] == 1 ? 1.0 : -1.0;
  return y;
}

}  // namespace detail

/// l2-regularized binary logistic regression fit by damped Newton steps.
/// Label 1 maps to y = +1, label 0 to y = -1; the bias is penalized along
/// with the weights so the optimum is unique.
inline TrainedModel train_logreg_newton(const Dataset& data, const NewtonOptions& opt = {}) {
  data.validate();
  if (data.class_count != 2) throw InvalidInput("train_logreg_newton: needs a two-class dataset");
  if (!(opt.l2 > 0.0)) throw InvalidInput("train_logreg_newton: l2 must be positive");
  const Mat Xa = detail::augment_bias(data.inputs);
  const Vec y = detail::signed_labels(data);
  const Index p = Xa.cols();
  Vec theta = Vec::Zero(p);
  int iter = 0;
  for (;; ++iter) {
    const Vec s = Xa * theta;
    Vec coef(s.size());  // -y_i (1 - p_i)
    Vec r(s.size());     // p_i (1 - p_i)
    for (Index i = 0; i < s.size(); ++i) {
      const double pc = detail::sigmoid(y[i] * s[i]);
      coef[i] = -y[i] * (1.0 - pc);
      r[i] = pc * (1.0 - pc);
    }
    const Vec grad = Xa.transpose() * coef + opt.l2 * theta;
    if (grad.norm() <= opt.tol) break;
    if (iter >= opt.max_iter)
      throw NoConvergence("train_logreg_newton: gradient norm " + std::to_string(grad.norm()) +
                          " after " + std::to_string(opt.max_iter) + " iterations");
    Mat H = Xa.transpose() * r.asDiagonal() * Xa;
    const Vec step = ridge_solve(H, grad, opt.l2);
    // backtracking keeps the iteration monotone far from the optimum
    // (skipped once the predicted decrease is at the objective's rounding level)
    Vec next = theta - step;
    const double f0 = detail::logreg_objective(Xa, y, theta, opt.l2);
    const double slope = grad.dot(step);
    if (slope > 1e-10 * std::max(1.0, std::abs(f0))) {
      double t = 1.0;
      while (t > 1e-8 && detail::logreg_objective(Xa, y, next, opt.l2) > f0 - 1e-4 * t * slope) {
        t *= 0.5;
        next = theta - t * step;
      }
    }
    theta = next;
  }
  TrainedModel m;
  m.kind = ModelKind::BinaryLogReg;
  m.theta = theta;
  m.input_dim = static_cast<int>(data.dim());
  m.class_count = 2;
  m.meta.epochs = iter;
  m.meta.tol = opt.tol;
  m.meta.l2 = opt.l2;
  m.meta.final_loss = detail::logreg_objective(Xa, y, theta, opt.l2);
  return m;
}

/// Gradient of the l2-regularized logistic objective at the model's theta.
inline Vec logreg_objective_gradient(const TrainedModel& m, const Dataset& data) {
  const Mat Xa = detail::augment_bias(data.inputs);
  const Vec y = detail::signed_labels(data);
  const Vec s = Xa * m.theta;
  Vec coef(s.size());
  for (Index i = 0; i < s.size(); ++i) coef[i] = -y[i] * (1.0 - detail::sigmoid(y[i] * s[i]));
  return Xa.transpose() * coef + m.meta.l2 * m.theta;
}

struct TrainConfig {
  int epochs = 30;
  double learning_rate = 0.1;
  int batch_size = 32;
  double l2 = 1e-4;
  int hidden_base = 16;
  std::uint64_t seed = 0;
};

/// Untrained network with seeded Normal(0, 1/fan_in) weights and zero biases.
inline TrainedModel init_network(ModelKind kind, int d, int c, int h, std::uint64_t seed) {
  if (kind == ModelKind::BinaryLogReg) throw InvalidInput("init_network: logreg is trained by Newton");
  if (d < 1 || c < 2) throw InvalidInput("init_network: bad shape");
  TrainedModel m;
  m.kind = kind;
  m.input_dim = d;
  m.class_count = c;
  m.hidden = kind == ModelKind::MLP ? h : 0;
  m.theta = Vec::Zero(expected_param_count(kind, d, c, m.hidden));
  m.meta.seed = seed;
  if (kind == ModelKind::MLP) {
    RandomStream rs(derive_seed(seed, 0x1417));
    double* t = m.theta.data();
    const double s1 = 1.0 / std::sqrt(static_cast<double>(d));
    for (int i = 0; i < h * d; ++i) t[i] = rs.normal() * s1;
    const double s2 = 1.0 / std::sqrt(static_cast<double>(h));
    double* w2 = t + h * (d + 1);
    for (int i = 0; i < c * h; ++i) w2[i] = rs.normal() * s2;
  }
  return m;
}

/// Mean cross-entropy and its theta-gradient over the given rows, excluding
/// the l2 term.
inline std::pair<double, Vec> cross_entropy_grad(const TrainedModel& m, const Dataset& data,
                                                 const std::vector<std::size_t>& rows) {
  Vec g = Vec::Zero(m.theta.size());
  double loss = 0.0;
  for (std::size_t r : rows) {
    const Example z = data.example(static_cast<Index>(r));
    const auto f = detail::forward(m, z.x);
    Vec dlogits = detail::softmax(f.logits);
    loss += detail::log_sum_exp(f.logits) - f.logits[z.label];
    dlogits[z.label] -= 1.0;
    g += detail::backward(m, z.x, f, dlogits);
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  return {loss * inv, g * inv};
}

/// Seeded mini-batch SGD on mean cross-entropy + (l2/2)||theta||^2.
inline TrainedModel train_network(const Dataset& data, ModelKind kind, int hidden,
                                  const TrainConfig& cfg) {
  data.validate();
  if (cfg.epochs < 0 || cfg.batch_size < 1 || !(cfg.learning_rate > 0.0))
    throw InvalidInput("train config: epochs >= 0, batch_size >= 1, learning_rate > 0 required");
  TrainedModel m = init_network(kind, static_cast<int>(data.dim()), data.class_count, hidden, cfg.seed);
  RandomStream rs(derive_seed(cfg.seed, 0x5eed));
  std::vector<std::size_t> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::size_t> batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rs.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      batch.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + bs)));
      auto [loss, g] = cross_entropy_grad(m, data, batch);
      if (!std::isfinite(loss) || !all_finite(g))
        throw DivergedTraining("training diverged in epoch " + std::to_string(epoch));
      m.theta -= cfg.learning_rate * (g + cfg.l2 * m.theta);
    }
  }
  m.meta.epochs = cfg.epochs;
  m.meta.l2 = cfg.l2;
  m.meta.seed = cfg.seed;
  m.meta.final_loss = evaluate(m, data).mean_loss;
  if (!std::isfinite(m.meta.final_loss) || !all_finite(m.theta))
    throw DivergedTraining("training produced non-finite parameters");
  return m;
}

inline TrainedModel train_mlp(const Dataset& data, double width_factor, const TrainConfig& cfg) {
  TrainedModel m = train_network(data, ModelKind::MLP, hidden_width(cfg.hidden_base, width_factor), cfg);
  m.width_factor = width_factor;
  return m;
}

inline TrainedModel train_softmax(const Dataset& data, const TrainConfig& cfg) {
  return train_network(data, ModelKind::SoftmaxReg, 0, cfg);
}

}  // namespace attribkit
