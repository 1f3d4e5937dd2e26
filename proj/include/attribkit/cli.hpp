#pragma once

// Command-line driver. Each subcommand reads one JSON config, validates it
// completely before touching any data, runs its pipeline and writes results
// under the output directory.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "attribkit/cost.hpp"
#include "attribkit/datamodels.hpp"
#include "attribkit/errors.hpp"
#include "attribkit/evaluation.hpp"
#include "attribkit/io.hpp"
#include "attribkit/models.hpp"
#include "attribkit/parallel.hpp"
#include "attribkit/selection.hpp"
#include "attribkit/study.hpp"
#include "attribkit/trak.hpp"

namespace attribkit::cli {

namespace fs = std::filesystem;
using io::json;

/// Bad flags or config contents; maps to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Typed access to one JSON object that remembers which keys were read so
/// leftovers can be rejected.
class ConfigReader {
 public:
  ConfigReader(const json& j, std::string context) : j_(j), ctx_(std::move(context)) {
    if (!j_.is_object()) throw ConfigError(ctx_ + ": expected a JSON object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  T require(const std::string& key) {
    if (!j_.contains(key)) throw ConfigError(ctx_ + ": missing required key '" + key + "'");
    return get_as<T>(key);
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    return j_.contains(key) ? get_as<T>(key) : fallback;
  }

  template <typename T>
  std::optional<T> optional(const std::string& key) {
    if (!j_.contains(key) || j_.at(key).is_null()) {
      used_.insert(key);
      return std::nullopt;
    }
    return get_as<T>(key);
  }

  const json& raw(const std::string& key) {
    if (!j_.contains(key)) throw ConfigError(ctx_ + ": missing required key '" + key + "'");
    used_.insert(key);
    return j_.at(key);
  }

  std::string context(const std::string& key) const { return ctx_ + "." + key; }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!used_.count(key)) throw ConfigError(ctx_ + ": unknown key '" + key + "'");
  }

 private:
  template <typename T>
  T get_as(const std::string& key) {
    used_.insert(key);
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, std::uint64_t> || std::is_same_v<T, std::size_t>) {
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
          throw ConfigError(ctx_ + ": '" + key + "' must be a nonnegative integer");
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!v.is_number_integer()) throw ConfigError(ctx_ + ": '" + key + "' must be an integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError(ctx_ + ": '" + key + "' must be a number");
      }
      return v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(ctx_ + ": '" + key + "' has the wrong type (" + e.what() + ")");
    }
  }

  const json& j_;
  std::string ctx_;
  std::set<std::string> used_;
};

// ---------------------------------------------------------------------------
// Shared config pieces

struct ModelSpec {
  ModelKind kind = ModelKind::BinaryLogReg;
  NewtonOptions newton;
  TrainConfig train;
  double width_factor = 1.0;
};

inline ModelSpec parse_model(const json& j, const std::string& ctx) {
  ConfigReader r(j, ctx);
  ModelSpec s;
  try {
    s.kind = parse_model_kind(r.require<std::string>("kind"));
  } catch (const InvalidInput& e) {
    throw ConfigError(ctx + ": " + e.what());
  }
  s.train.seed = r.require<std::uint64_t>("seed");
  if (s.kind == ModelKind::BinaryLogReg) {
    s.newton.l2 = r.get("l2", s.newton.l2);
    s.newton.tol = r.get("tol", s.newton.tol);
    s.newton.max_iter = r.get("max_iter", s.newton.max_iter);
    if (!(s.newton.l2 > 0.0)) throw ConfigError(ctx + ": l2 must be positive for logreg");
  } else {
    s.train.l2 = r.get("l2", s.train.l2);
    s.train.epochs = r.get("epochs", s.train.epochs);
    s.train.learning_rate = r.get("learning_rate", s.train.learning_rate);
    s.train.batch_size = r.get("batch_size", s.train.batch_size);
    if (s.kind == ModelKind::MLP) {
      s.train.hidden_base = r.get("hidden_base", s.train.hidden_base);
      s.width_factor = r.get("width_factor", s.width_factor);
      if (!(s.width_factor > 0.0)) throw ConfigError(ctx + ": width_factor must be positive");
    }
    if (s.train.epochs < 0 || s.train.batch_size < 1 || !(s.train.learning_rate > 0.0))
      throw ConfigError(ctx + ": need epochs >= 0, batch_size >= 1, learning_rate > 0");
  }
  r.finish();
  return s;
}

/// Trains per `spec`; SGD models draw their seed from (spec seed, stream).
inline TrainedModel train_model(const ModelSpec& spec, const Dataset& data, std::optional<std::size_t> stream) {
  if (spec.kind == ModelKind::BinaryLogReg) {
    if (data.class_count != 2) throw InvalidInput("logreg needs a binary dataset");
    TrainedModel m = train_logreg_newton(data, spec.newton);
    if (stream) m.meta.subset_id = static_cast<std::int64_t>(*stream);
    return m;
  }
  TrainConfig tc = spec.train;
  if (stream) tc.seed = derive_seed(spec.train.seed, *stream);
  TrainedModel m = spec.kind == ModelKind::MLP ? train_mlp(data, spec.width_factor, tc) : train_softmax(data, tc);
  if (stream) m.meta.subset_id = static_cast<std::int64_t>(*stream);
  return m;
}

inline OutputFn parse_output_fn(const std::string& s, const std::string& ctx) {
  if (s == "logit") return OutputFn::Logit;
  if (s == "correct_log_odds") return OutputFn::CorrectLogOdds;
  throw ConfigError(ctx + ": output_fn must be 'logit' or 'correct_log_odds'");
}

inline io::ScoreDtype parse_dtype(const std::string& s, const std::string& ctx) {
  if (s == "f64") return io::ScoreDtype::F64;
  if (s == "f32") return io::ScoreDtype::F32;
  throw ConfigError(ctx + ": dtype must be 'f32' or 'f64'");
}

inline double alpha_in_range(double a, const std::string& ctx) {
  if (!(a > 0.0 && a < 1.0)) throw ConfigError(ctx + ": alpha must lie in (0,1)");
  return a;
}

/// Paths in a config are relative to the config file's directory.
struct Context {
  fs::path config_dir;
  fs::path out_dir;
  std::ostream* out = &std::cout;

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : config_dir / path;
  }

  void ensure_out() const {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) throw Error("cannot create output directory " + out_dir.string());
  }
};

inline Dataset load_dataset(const Context& ctx, const std::string& path, std::optional<int> classes = {}) {
  return read_dataset_csv(ctx.resolve(path).string(), classes);
}

inline std::string ids_text(const std::vector<std::int64_t>& ids) {
  std::string s;
  for (auto id : ids) s += std::to_string(id) + "\n";
  return s;
}

// ---------------------------------------------------------------------------
// train

inline int cmd_train(const json& cfg, const Context& ctx) {
  ConfigReader r(cfg, "train");
  const auto data_path = r.require<std::string>("data");
  const auto classes = r.optional<int>("class_count");
  const ModelSpec spec = parse_model(r.raw("model"), r.context("model"));
  const auto test_path = r.optional<std::string>("test");
  r.finish();

  const Dataset data = load_dataset(ctx, data_path, classes);
  const TrainedModel m = train_model(spec, data, std::nullopt);
  json summary;
  summary["train"] = {{"mean_loss", io::number(evaluate(m, data).mean_loss)},
                      {"accuracy", evaluate(m, data).accuracy},
                      {"n", data.size()}};
  if (test_path) {
    const Dataset test = load_dataset(ctx, *test_path, data.class_count);
    const auto ev = evaluate(m, test);
    summary["test"] = {{"mean_loss", io::number(ev.mean_loss)}, {"accuracy", ev.accuracy}, {"n", test.size()}};
  }
  summary["param_count"] = m.param_count();
  ctx.ensure_out();
  io::write_file_atomic(ctx.out_dir / "model.json", io::to_json(m).dump(2) + "\n");
  io::write_file_atomic(ctx.out_dir / "train_summary.json", summary.dump(2) + "\n");
  *ctx.out << summary.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// datamodel

inline int cmd_datamodel(const json& cfg, const Context& ctx) {
  ConfigReader r(cfg, "datamodel");
  const auto data_path = r.require<std::string>("data");
  const auto targets_path = r.require<std::string>("targets");
  const auto classes = r.optional<int>("class_count");
  const ModelSpec spec = parse_model(r.raw("model"), r.context("model"));
  DatamodelOptions opt;
  opt.alpha = alpha_in_range(r.get("alpha", opt.alpha), "datamodel");
  opt.M = r.get<std::size_t>("M", opt.M);
  if (opt.M < 2) throw ConfigError("datamodel: M must be at least 2");
  const json beta = r.has("beta") ? r.raw("beta") : json("auto");
  if (beta.is_number()) {
    opt.beta = beta.get<double>();
    if (!(*opt.beta >= 0.0)) throw ConfigError("datamodel: beta must be nonnegative");
  } else if (!(beta.is_string() && beta.get<std::string>() == "auto")) {
    throw ConfigError("datamodel: beta must be a number or \"auto\"");
  }
  opt.fit_intercept = r.get("fit_intercept", opt.fit_intercept);
  const auto seed = r.require<std::uint64_t>("seed");
  const auto fn_name = r.optional<std::string>("output_fn");
  const auto dtype = parse_dtype(r.get<std::string>("dtype", "f64"), "datamodel");
  r.finish();
  const OutputFn fn = fn_name ? parse_output_fn(*fn_name, "datamodel") : default_output_fn(spec.kind);

  const Dataset data = load_dataset(ctx, data_path, classes);
  const Dataset targets = load_dataset(ctx, targets_path, data.class_count);
  RandomStream stream(seed);
  const Trainer trainer = [&](const Dataset& d, std::size_t i) { return train_model(spec, d, i); };
  const DatamodelFit fit = estimate_datamodels(trainer, data, targets, fn, opt, stream);

  Mat W(targets.size(), data.size());
  json meta;
  meta["alpha"] = opt.alpha;
  meta["M"] = opt.M;
  meta["seed"] = seed;
  meta["fit_intercept"] = opt.fit_intercept;
  meta["train_ids"] = data.ids;
  json vectors = json::array();
  for (std::size_t t = 0; t < fit.vectors.size(); ++t) {
    W.row(static_cast<Index>(t)) = fit.vectors[t].w.transpose();
    vectors.push_back({{"target_id", fit.vectors[t].target_id},
                       {"intercept", fit.vectors[t].intercept},
                       {"beta", fit.vectors[t].meta.beta}});
  }
  meta["targets"] = vectors;
  ctx.ensure_out();
  io::write_scores(ctx.out_dir / "datamodels.bin", W, dtype);
  io::write_file_atomic(ctx.out_dir / "datamodels.json", meta.dump(2) + "\n");
  *ctx.out << "wrote " << W.rows() << " x " << W.cols() << " datamodel matrix\n";
  return 0;
}

// ---------------------------------------------------------------------------
// trak

inline int cmd_trak(const json& cfg, const Context& ctx) {
  ConfigReader r(cfg, "trak");
  const auto data_path = r.require<std::string>("data");
  const auto targets_path = r.require<std::string>("targets");
  const auto classes = r.optional<int>("class_count");
  const ModelSpec spec = parse_model(r.raw("model"), r.context("model"));
  const auto k_opt = r.optional<std::int64_t>("k");
  std::optional<double> lambda;
  if (r.has("lambda")) {
    const json& l = r.raw("lambda");
    if (l.is_number())
      lambda = l.get<double>();
    else if (!(l.is_string() && l.get<std::string>() == "auto"))
      throw ConfigError("trak: lambda must be a number or \"auto\"");
  }
  const auto ensemble = r.get<std::size_t>("ensemble", 1);
  const auto q_name = r.get<std::string>("q", "with_q");
  const auto seed = r.require<std::uint64_t>("seed");
  const auto dtype = parse_dtype(r.get<std::string>("dtype", "f64"), "trak");
  r.finish();
  if (ensemble < 1) throw ConfigError("trak: ensemble must be >= 1");
  if (k_opt && *k_opt < 1) throw ConfigError("trak: k must be positive (omit it for the identity)");
  if (lambda && !(*lambda >= 0.0)) throw ConfigError("trak: lambda must be nonnegative");
  if (q_name != "with_q" && q_name != "without_q") throw ConfigError("trak: q must be 'with_q' or 'without_q'");
  const QMode mode = q_name == "with_q" ? QMode::WithQ : QMode::WithoutQ;

  const Dataset data = load_dataset(ctx, data_path, classes);
  const Dataset targets = load_dataset(ctx, targets_path, data.class_count);
  const OutputFn train_fn = OutputFn::CorrectLogOdds;
  const OutputFn test_fn = default_output_fn(spec.kind);
  std::vector<TrakModelRun> runs(ensemble);
  for (std::size_t e = 0; e < ensemble; ++e) {
    const TrainedModel m = train_model(spec, data, e);
    const Index p = m.param_count();
    Mat P;
    std::uint64_t pseed = derive_seed(seed, e);
    if (k_opt) {
      RandomStream prs(pseed);
      P = gaussian_projection(p, std::min<Index>(*k_opt, p), prs);
    } else {
      P = Mat::Identity(p, p);
    }
    runs[e].features = compute_features(m, data, P, train_fn, pseed, static_cast<std::int64_t>(e));
    runs[e].test_phi.resize(targets.size(), P.cols());
    for (Index t = 0; t < targets.size(); ++t)
      runs[e].test_phi.row(t) = (P.transpose() * output_gradient(m, targets.example(t), test_fn)).transpose();
    if (mode == QMode::WithQ) runs[e].q = correct_probabilities(m, data);
  }
  const AttributionScores scores = attribute_testset(runs, mode, lambda);

  json meta;
  meta["method"] = to_string(scores.method);
  meta["ridge_lambda"] = scores.ridge_lambda;
  meta["ensemble"] = ensemble;
  meta["k"] = runs.front().test_phi.cols();
  meta["seed"] = seed;
  meta["train_ids"] = data.ids;
  meta["target_ids"] = targets.ids;
  ctx.ensure_out();
  io::write_scores(ctx.out_dir / "trak_scores.bin", scores.scores, dtype);
  io::write_file_atomic(ctx.out_dir / "trak.json", meta.dump(2) + "\n");
  *ctx.out << "wrote " << scores.scores.rows() << " x " << scores.scores.cols() << " " << to_string(scores.method)
           << " score matrix\n";
  return 0;
}

// ---------------------------------------------------------------------------
// lds

inline int cmd_lds(const json& cfg, const Context& ctx) {
  ConfigReader r(cfg, "lds");
  const auto data_path = r.require<std::string>("data");
  const auto targets_path = r.require<std::string>("targets");
  const auto scores_path = r.require<std::string>("scores");
  const auto classes = r.optional<int>("class_count");
  const ModelSpec spec = parse_model(r.raw("model"), r.context("model"));
  const auto m = r.get<std::size_t>("m", 50);
  const double alpha = alpha_in_range(r.get("alpha", 0.5), "lds");
  const auto seed = r.require<std::uint64_t>("seed");
  const auto fn_name = r.optional<std::string>("output_fn");
  r.finish();
  if (m < 3) throw ConfigError("lds: m must be at least 3");
  const OutputFn fn = fn_name ? parse_output_fn(*fn_name, "lds") : default_output_fn(spec.kind);

  const Dataset data = load_dataset(ctx, data_path, classes);
  const Dataset targets = load_dataset(ctx, targets_path, data.class_count);
  const Mat tau = io::read_scores(ctx.resolve(scores_path)).values;
  RandomStream stream(seed);
  const Trainer trainer = [&](const Dataset& d, std::size_t i) { return train_model(spec, d, i); };
  const LdsReport rep = lds(tau, trainer, data, targets, fn, m, alpha, stream);
  io::emit_report(rep, ctx.out_dir);
  *ctx.out << "mean LDS " << io::fmt(rep.mean_lds) << " over " << rep.per_target.size() << " targets\n";
  return 0;
}

// ---------------------------------------------------------------------------
// select

inline int cmd_select(const json& cfg, const Context& ctx) {
  ConfigReader r(cfg, "select");
  const auto data_path = r.require<std::string>("data");
  const auto scores_path = r.require<std::string>("scores");
  const auto classes = r.optional<int>("class_count");
  const auto n_sel = r.require<std::size_t>("n_sel");
  const auto orient = r.get<std::string>("orientation", "loss");
  r.finish();
  if (orient != "loss" && orient != "output") throw ConfigError("select: orientation must be 'loss' or 'output'");

  const Dataset data = load_dataset(ctx, data_path, classes);
  const Mat scores = io::read_scores(ctx.resolve(scores_path)).values;
  const Selection sel =
      run_dsdm(scores, data, n_sel, orient == "loss" ? ScoreOrientation::Loss : ScoreOrientation::Output);
  ctx.ensure_out();
  io::write_file_atomic(ctx.out_dir / "selected_ids.txt", ids_text(sel.data.ids));
  io::write_file_atomic(ctx.out_dir / "selected.csv", dataset_to_csv(sel.data));
  *ctx.out << "selected " << sel.indices.size() << " of " << data.size() << " examples\n";
  return 0;
}

// ---------------------------------------------------------------------------
// cost

inline std::string cost_csv(const std::vector<cost::CostProfile>& profiles, bool exact) {
  std::string out = "model,p,n_train,n,n_test,T,k,M,C_train,C_attrib,C_overall,train_ratio_pct,asymptotic_ratio_pct\n";
  auto g = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return std::string(buf);
  };
  for (const auto& c : profiles) {
    const double tr = cost::train_cost(c);
    const double at = cost::attrib_cost(c, exact);
    const auto tot = cost::total_cost(c, exact);
    out += c.name + "," + g(c.p) + "," + g(c.n_train) + "," + g(c.n) + "," + g(c.n_test) + "," + g(c.T) + "," +
           g(c.k) + "," + g(c.M) + "," + g(tr) + "," + g(at) + "," + g(tot.total) + "," + g(100.0 * tot.train_ratio) +
           "," + g(100.0 * cost::asymptotic_ratio(c.T, c.k)) + "\n";
  }
  return out;
}

inline int cmd_cost(const json& cfg, const Context& ctx) {
  ConfigReader r(cfg, "cost");
  const auto preset = r.optional<std::string>("preset");
  const bool exact = r.get("exact", false);
  std::vector<cost::CostProfile> profiles;
  if (preset) {
    if (*preset != "mpt") throw ConfigError("cost: unknown preset '" + *preset + "'");
    profiles = cost::mpt_profiles();
  }
  if (r.has("profiles")) {
    const json& arr = r.raw("profiles");
    if (!arr.is_array()) throw ConfigError("cost: profiles must be an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      ConfigReader pr(arr[i], "cost.profiles[" + std::to_string(i) + "]");
      cost::CostProfile c;
      c.name = pr.require<std::string>("name");
      c.p = pr.require<double>("p");
      c.n_train = pr.require<double>("n_train");
      c.n = pr.require<double>("n");
      c.n_test = pr.require<double>("n_test");
      c.T = pr.require<double>("T");
      c.k = pr.require<double>("k");
      c.M = pr.get("M", 1.0);
      pr.finish();
      try {
        c.validate();
      } catch (const InvalidInput& e) {
        throw ConfigError(e.what());
      }
      profiles.push_back(c);
    }
  }
  r.finish();
  if (profiles.empty()) throw ConfigError("cost: give a preset or at least one profile");

  const std::string csv = cost_csv(profiles, exact);
  ctx.ensure_out();
  io::write_file_atomic(ctx.out_dir / "cost.csv", csv);
  *ctx.out << csv;
  return 0;
}

// ---------------------------------------------------------------------------
// study

inline DistributionSpec parse_distribution(const json& j, const std::string& ctx) {
  ConfigReader r(j, ctx);
  DistributionSpec s;
  try {
    s.strategy = parse_strategy(r.require<std::string>("strategy"));
  } catch (const InvalidInput& e) {
    throw ConfigError(ctx + ": " + e.what());
  }
  s.fraction = r.require<double>("fraction");
  s.seed = r.require<std::uint64_t>("seed");
  s.target_class = r.optional<int>("target_class");
  s.pool_fraction = r.get("pool_fraction", s.pool_fraction);
  s.allow_nonstandard = r.get("allow_nonstandard", s.allow_nonstandard);
  r.finish();
  try {
    s.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(ctx + ": " + e.what());
  }
  return s;
}

inline int cmd_study(const json& cfg, const Context& ctx) {
  ConfigReader r(cfg, "study");
  const auto data_path = r.require<std::string>("data");
  const auto classes = r.optional<int>("class_count");
  std::vector<std::pair<std::string, std::string>> test_paths;
  {
    const json& arr = r.raw("test_sets");
    if (!arr.is_array() || arr.empty()) throw ConfigError("study: test_sets must be a non-empty array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      ConfigReader tr(arr[i], "study.test_sets[" + std::to_string(i) + "]");
      test_paths.emplace_back(tr.require<std::string>("name"), tr.require<std::string>("data"));
      tr.finish();
    }
  }
  const auto widths = r.require<std::vector<double>>("widths");
  std::vector<DistributionSpec> dists;
  {
    const json& arr = r.raw("distributions");
    if (!arr.is_array()) throw ConfigError("study: distributions must be an array");
    for (std::size_t i = 0; i < arr.size(); ++i)
      dists.push_back(parse_distribution(arr[i], "study.distributions[" + std::to_string(i) + "]"));
  }
  StudyConfig sc;
  if (r.has("train")) {
    ConfigReader tr(r.raw("train"), "study.train");
    sc.train.epochs = tr.get("epochs", sc.train.epochs);
    sc.train.learning_rate = tr.get("learning_rate", sc.train.learning_rate);
    sc.train.batch_size = tr.get("batch_size", sc.train.batch_size);
    sc.train.l2 = tr.get("l2", sc.train.l2);
    sc.train.hidden_base = tr.get("hidden_base", sc.train.hidden_base);
    tr.finish();
  }
  sc.seed = r.require<std::uint64_t>("seed");
  sc.ensemble = r.get("ensemble", sc.ensemble);
  sc.attribution_target = r.get<std::size_t>("attribution_target", sc.attribution_target);
  sc.projection_dim = r.get<Index>("projection_dim", sc.projection_dim);
  sc.tokens_per_example = r.get("tokens_per_example", sc.tokens_per_example);
  sc.figure_width = r.optional<double>("figure_width");
  r.finish();
  if (dists.size() < 3) throw ConfigError("study: need at least 3 distributions");
  if (widths.empty()) throw ConfigError("study: need at least one width");
  for (double w : widths)
    if (!(w > 0.0)) throw ConfigError("study: widths must be positive");
  if (sc.ensemble < 1) throw ConfigError("study: ensemble must be >= 1");

  const Dataset base = load_dataset(ctx, data_path, classes);
  std::vector<TestSet> tests;
  for (const auto& [name, path] : test_paths) tests.push_back({name, load_dataset(ctx, path, base.class_count)});
  const StudyReport rep = run_scale_study(base, tests, widths, dists, sc);
  const auto files = io::emit_report(rep, ctx.out_dir);
  for (const auto& c : rep.correlations)
    if (c.corr)
      *ctx.out << rep.test_sets[c.test_set] << " width " << io::fmt(c.width) << ": r2 " << io::fmt(c.corr->r2) << "\n";
  *ctx.out << "wrote " << files.size() << " files\n";
  return 0;
}

// ---------------------------------------------------------------------------
// report

inline int cmd_report(const json& cfg, const Context& ctx) {
  ConfigReader r(cfg, "report");
  const auto input = r.require<std::string>("input");
  r.finish();
  json j;
  try {
    j = json::parse(io::read_file(ctx.resolve(input)));
  } catch (const json::exception& e) {
    throw CorruptFile(std::string("report input: ") + e.what());
  }
  std::vector<fs::path> files;
  if (j.contains("cells")) {
    files = io::emit_report(io::study_report_from_json(j), ctx.out_dir);
  } else if (j.contains("mean_lds")) {
    LdsReport rep;
    try {
      for (const auto& v : j.at("per_target")) rep.per_target.push_back(io::number_or_nan(v));
      rep.mean_lds = io::number_or_nan(j.at("mean_lds"));
      rep.m = j.at("m").get<std::size_t>();
      rep.alpha = j.at("alpha").get<double>();
      rep.seed = j.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
      throw CorruptFile(std::string("lds report: ") + e.what());
    }
    files = io::emit_report(rep, ctx.out_dir);
  } else {
    throw CorruptFile("report input is neither a study nor an LDS report");
  }
  for (const auto& f : files) *ctx.out << f.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Entry point

inline const std::map<std::string, int (*)(const json&, const Context&)>& commands() {
  static const std::map<std::string, int (*)(const json&, const Context&)> table{
      {"train", cmd_train}, {"datamodel", cmd_datamodel}, {"trak", cmd_trak},     {"lds", cmd_lds},
      {"select", cmd_select}, {"cost", cmd_cost},       {"study", cmd_study}, {"report", cmd_report},
  };
  return table;
}

/// Runs one subcommand. Returns 0 on success, 1 on runtime failure and 2 on
/// usage or config errors.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Training-data attribution toolkit", "attribkit"};
  app.require_subcommand(1);
  std::string config, out_dir = "./out";
  unsigned threads = 0;
  static const std::map<std::string, std::string> about{
      {"train", "train one model and write model.json"},
      {"datamodel", "estimate datamodels from retrained subset models"},
      {"trak", "compute TRAK attribution scores"},
      {"lds", "score an attribution matrix by linear datamodeling score"},
      {"select", "select a training subset from attribution scores"},
      {"cost", "tabulate training and attribution compute"},
      {"study", "run the model-scale study and emit its report"},
      {"report", "re-emit tables and figures from a saved study report"},
  };
  for (const auto& [name, _] : commands()) {
    auto* sub = app.add_subcommand(name, about.at(name));
    sub->add_option("--config", config, "JSON run configuration")->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--threads", threads, "worker threads (0 = all cores)");
  }

  if (!args.empty() && !args[0].empty() && args[0][0] != '-' && !commands().count(args[0])) {
    err << "attribkit: unknown subcommand '" << args[0] << "'\n\n" << app.help();
    return 2;
  }
  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "attribkit: " << e.what() << "\n\n" << app.help();
    return 2;
  }
  const std::string name = app.get_subcommands().front()->get_name();

  if (const char* env = std::getenv("ATTRIBKIT_THREADS"); env && *env) {
    try {
      const long v = std::stol(env);
      if (v < 0) throw std::invalid_argument("negative");
      threads = static_cast<unsigned>(v);
    } catch (const std::exception&) {
      err << "attribkit: ATTRIBKIT_THREADS must be a nonnegative integer\n";
      return 2;
    }
  }
  set_thread_count(threads);

  Context ctx;
  ctx.out_dir = out_dir;
  ctx.out = &out;
  ctx.config_dir = fs::path(config).parent_path();
  json cfg;
  try {
    cfg = json::parse(io::read_file(config));
  } catch (const std::exception& e) {
    err << "attribkit: cannot load config " << config << ": " << e.what() << "\n";
    return 2;
  }
  try {
    return commands().at(name)(cfg, ctx);
  } catch (const ConfigError& e) {
    err << "attribkit " << name << ": config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "attribkit " << name << ": " << e.what() << "\n";
    return 1;
  }
}

inline int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args);
}

}  // namespace attribkit::cli
