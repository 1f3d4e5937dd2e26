#pragma once

// Persistence: binary score files, JSON reports and models, figure CSVs and
// minimal SVG scatter plots. Every writer goes through write_file_atomic.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "attribkit/datamodels.hpp"
#include "attribkit/errors.hpp"
#include "attribkit/evaluation.hpp"
#include "attribkit/models.hpp"
#include "attribkit/study.hpp"

namespace attribkit::io {

using json = nlohmann::ordered_json;

/// Writes to `path.tmp` and renames over `path`.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error("cannot rename " + tmp.string() + ": " + ec.message());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Score file
//
//   offset  size  field
//   0       8     magic "ATTRSCR\0"
//   8       4     version, u32 LE (= 1)
//   12      8     rows, u64 LE
//   20      8     cols, u64 LE
//   28      1     dtype (1 = f32, 2 = f64)
//   29      ...   row-major LE payload

inline constexpr std::array<char, 8> kScoreMagic{'A', 'T', 'T', 'R', 'S', 'C', 'R', '\0'};
inline constexpr std::uint32_t kScoreVersion = 1;
inline constexpr std::size_t kScoreHeaderSize = 29;

enum class ScoreDtype : std::uint8_t { F32 = 1, F64 = 2 };

namespace detail {

inline void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_le(const std::string& in, std::size_t off, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  return v;
}

}  // namespace detail

inline std::string encode_scores(const Mat& scores, ScoreDtype dtype = ScoreDtype::F64) {
  std::string out(kScoreMagic.begin(), kScoreMagic.end());
  detail::put_le(out, kScoreVersion, 4);
  detail::put_le(out, static_cast<std::uint64_t>(scores.rows()), 8);
  detail::put_le(out, static_cast<std::uint64_t>(scores.cols()), 8);
  out.push_back(static_cast<char>(dtype));
  const std::size_t width = dtype == ScoreDtype::F32 ? 4 : 8;
  out.reserve(out.size() + static_cast<std::size_t>(scores.size()) * width);
  for (Index i = 0; i < scores.rows(); ++i)
    for (Index j = 0; j < scores.cols(); ++j) {
      if (dtype == ScoreDtype::F32) {
        const float f = static_cast<float>(scores(i, j));
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        detail::put_le(out, bits, 4);
      } else {
        const double d = scores(i, j);
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        detail::put_le(out, bits, 8);
      }
    }
  return out;
}

struct ScoreData {
  ScoreDtype dtype = ScoreDtype::F64;
  Mat values;  // f32 payloads are widened exactly
};

inline ScoreData decode_scores(const std::string& bytes) {
  if (bytes.size() < kScoreHeaderSize) throw CorruptFile("score file: truncated header");
  if (!std::equal(kScoreMagic.begin(), kScoreMagic.end(), bytes.begin())) throw CorruptFile("score file: bad magic");
  const auto version = detail::get_le(bytes, 8, 4);
  if (version != kScoreVersion) throw CorruptFile("score file: unsupported version " + std::to_string(version));
  const auto rows = detail::get_le(bytes, 12, 8);
  const auto cols = detail::get_le(bytes, 20, 8);
  const auto dt = static_cast<unsigned char>(bytes[28]);
  if (dt != 1 && dt != 2) throw CorruptFile("score file: unknown dtype " + std::to_string(dt));
  const std::size_t width = dt == 1 ? 4 : 8;
  if (cols != 0 && rows > (bytes.size() / width) / cols) throw CorruptFile("score file: truncated payload");
  const std::size_t expect = kScoreHeaderSize + rows * cols * width;
  if (bytes.size() < expect) throw CorruptFile("score file: truncated payload");
  if (bytes.size() > expect) throw CorruptFile("score file: trailing bytes after payload");
  ScoreData sd;
  sd.dtype = static_cast<ScoreDtype>(dt);
  sd.values.resize(static_cast<Index>(rows), static_cast<Index>(cols));
  std::size_t off = kScoreHeaderSize;
  for (Index i = 0; i < sd.values.rows(); ++i)
    for (Index j = 0; j < sd.values.cols(); ++j, off += width) {
      if (dt == 1) {
        const auto bits = static_cast<std::uint32_t>(detail::get_le(bytes, off, 4));
        float f;
        std::memcpy(&f, &bits, 4);
        sd.values(i, j) = f;
      } else {
        const auto bits = detail::get_le(bytes, off, 8);
        double d;
        std::memcpy(&d, &bits, 8);
        sd.values(i, j) = d;
      }
    }
  return sd;
}

inline void write_scores(const std::filesystem::path& path, const Mat& scores, ScoreDtype dtype = ScoreDtype::F64) {
  write_file_atomic(path, encode_scores(scores, dtype));
}

inline ScoreData read_scores(const std::filesystem::path& path) { return decode_scores(read_file(path)); }

// ---------------------------------------------------------------------------
// JSON

/// Non-finite doubles become null.
inline json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline double number_or_nan(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline json to_json(const LdsReport& r) {
  json j;
  json per = json::array();
  for (double v : r.per_target) per.push_back(number(v));
  j["per_target"] = per;
  j["mean_lds"] = number(r.mean_lds);
  j["m"] = r.m;
  j["alpha"] = r.alpha;
  j["seed"] = r.seed;
  return j;
}

inline json to_json(const TrainedModel& m) {
  json j;
  j["kind"] = to_string(m.kind);
  j["input_dim"] = m.input_dim;
  j["class_count"] = m.class_count;
  j["hidden"] = m.hidden;
  j["width_factor"] = m.width_factor;
  j["theta"] = std::vector<double>(m.theta.data(), m.theta.data() + m.theta.size());
  j["train_meta"] = {{"seed", m.meta.seed}, {"epochs", m.meta.epochs}, {"tol", m.meta.tol},
                     {"l2", m.meta.l2},     {"subset_id", m.meta.subset_id},
                     {"final_loss", number(m.meta.final_loss)}};
  return j;
}

inline TrainedModel model_from_json(const json& j) {
  TrainedModel m;
  try {
    m.kind = parse_model_kind(j.at("kind").get<std::string>());
    m.input_dim = j.at("input_dim").get<int>();
    m.class_count = j.at("class_count").get<int>();
    m.hidden = j.at("hidden").get<int>();
    m.width_factor = j.at("width_factor").get<double>();
    const auto theta = j.at("theta").get<std::vector<double>>();
    m.theta = Eigen::Map<const Vec>(theta.data(), static_cast<Index>(theta.size()));
    const auto& meta = j.at("train_meta");
    m.meta.seed = meta.at("seed").get<std::uint64_t>();
    m.meta.epochs = meta.at("epochs").get<int>();
    m.meta.tol = meta.at("tol").get<double>();
    m.meta.l2 = meta.at("l2").get<double>();
    m.meta.subset_id = meta.at("subset_id").get<std::int64_t>();
    m.meta.final_loss = number_or_nan(meta.at("final_loss"));
  } catch (const json::exception& e) {
    throw CorruptFile(std::string("model json: ") + e.what());
  }
  if (m.theta.size() != expected_param_count(m.kind, m.input_dim, m.class_count, m.hidden))
    throw CorruptFile("model json: parameter count does not match the model shape");
  return m;
}

inline json to_json(const StudyReport& r) {
  json j;
  j["seed"] = r.seed;
  j["widths"] = r.widths;
  j["reference_width"] = r.widths.empty() ? 0.0 : r.widths[r.reference];
  j["figure_width"] = r.figure_width;
  j["distributions"] = r.distributions;
  j["compute_flops"] = r.compute_flops;
  json sets = json::array();
  for (std::size_t t = 0; t < r.test_sets.size(); ++t)
    sets.push_back({{"name", r.test_sets[t]}, {"ids", r.test_ids[t]}});
  j["test_sets"] = sets;
  json cells = json::array();
  for (const auto& c : r.cells) {
    json cj;
    cj["width"] = c.width;
    cj["distribution"] = r.distributions[c.distribution];
    cj["train_size"] = c.train_size;
    cj["param_count"] = c.param_count;
    cj["failed"] = c.failed;
    if (c.failed) cj["error"] = c.error;
    json per = json::array();
    for (std::size_t t = 0; t < c.per_test.size(); ++t) {
      const auto& e = c.per_test[t];
      json losses = json::array();
      for (double l : e.losses) losses.push_back(number(l));
      per.push_back({{"test_set", r.test_sets[t]},
                     {"mean_loss", number(e.mean_loss)},
                     {"accuracy", number(e.accuracy)},
                     {"accuracy_over_random", number(e.accuracy_over_random)},
                     {"losses", losses}});
    }
    cj["per_test"] = per;
    cells.push_back(cj);
  }
  j["cells"] = cells;
  json corr = json::array();
  for (const auto& c : r.correlations) {
    json cj;
    cj["test_set"] = r.test_sets[c.test_set];
    cj["width"] = c.width;
    cj["compute_flops"] = c.compute_flops;
    cj["distributions_used"] = c.distributions_used;
    if (c.corr) {
      cj["r2"] = number(c.corr->r2);
      cj["pearson"] = number(c.corr->pearson);
      cj["spearman"] = number(c.corr->spearman);
    } else {
      cj["r2"] = nullptr;
      cj["pearson"] = nullptr;
      cj["spearman"] = nullptr;
    }
    json ex = json::array();
    for (double v : c.per_example_r2) ex.push_back(number(v));
    cj["per_example_r2"] = ex;
    corr.push_back(cj);
  }
  j["correlations"] = corr;
  j["notes"] = r.notes;
  return j;
}

inline StudyReport study_report_from_json(const json& j) {
  StudyReport r;
  try {
    r.seed = j.at("seed").get<std::uint64_t>();
    r.widths = j.at("widths").get<std::vector<double>>();
    const double ref = j.at("reference_width").get<double>();
    for (std::size_t w = 0; w < r.widths.size(); ++w)
      if (r.widths[w] == ref) r.reference = w;
    r.figure_width = j.at("figure_width").get<double>();
    r.distributions = j.at("distributions").get<std::vector<std::string>>();
    r.compute_flops = j.at("compute_flops").get<std::vector<double>>();
    for (const auto& s : j.at("test_sets")) {
      r.test_sets.push_back(s.at("name").get<std::string>());
      r.test_ids.push_back(s.at("ids").get<std::vector<std::int64_t>>());
    }
    auto index_of = [](const std::vector<std::string>& v, const std::string& s) {
      const auto it = std::find(v.begin(), v.end(), s);
      if (it == v.end()) throw CorruptFile("study report: unknown name '" + s + "'");
      return static_cast<std::size_t>(it - v.begin());
    };
    for (const auto& cj : j.at("cells")) {
      StudyCell c;
      c.width = cj.at("width").get<double>();
      c.distribution = index_of(r.distributions, cj.at("distribution").get<std::string>());
      c.train_size = cj.at("train_size").get<std::size_t>();
      c.param_count = cj.at("param_count").get<Index>();
      c.failed = cj.at("failed").get<bool>();
      if (c.failed) c.error = cj.at("error").get<std::string>();
      for (const auto& pj : cj.at("per_test")) {
        TestSetEval e;
        e.mean_loss = number_or_nan(pj.at("mean_loss"));
        e.accuracy = number_or_nan(pj.at("accuracy"));
        e.accuracy_over_random = number_or_nan(pj.at("accuracy_over_random"));
        for (const auto& l : pj.at("losses")) e.losses.push_back(number_or_nan(l));
        c.per_test.push_back(std::move(e));
      }
      r.cells.push_back(std::move(c));
    }
    for (const auto& cj : j.at("correlations")) {
      StudyCorrelation c;
      c.test_set = index_of(r.test_sets, cj.at("test_set").get<std::string>());
      c.width = cj.at("width").get<double>();
      c.compute_flops = cj.at("compute_flops").get<double>();
      c.distributions_used = cj.at("distributions_used").get<std::size_t>();
      if (!cj.at("r2").is_null())
        c.corr = CrossCorrelation{number_or_nan(cj.at("r2")), number_or_nan(cj.at("pearson")),
                                  number_or_nan(cj.at("spearman"))};
      for (const auto& v : cj.at("per_example_r2")) c.per_example_r2.push_back(number_or_nan(v));
      r.correlations.push_back(std::move(c));
    }
    r.notes = j.at("notes").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw CorruptFile(std::string("study report: ") + e.what());
  }
  if (r.cells.size() != r.widths.size() * r.distributions.size() && !r.cells.empty())
    throw CorruptFile("study report: cell grid is incomplete");
  return r;
}

// ---------------------------------------------------------------------------
// Figure tables

inline std::string fmt(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// A CSV table whose first `label_cols` columns are text and the rest numeric.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string csv() const {
    std::string out;
    for (std::size_t c = 0; c < header.size(); ++c) out += (c ? "," : "") + header[c];
    out += "\n";
    for (const auto& r : rows) {
      for (std::size_t c = 0; c < r.size(); ++c) out += (c ? "," : "") + r[c];
      out += "\n";
    }
    return out;
  }
};

/// test_set,distribution,width,small_loss,large_loss for every proxy width
/// and distribution where both the proxy and the reference cell trained.
inline Table loss_pairs_table(const StudyReport& r) {
  Table t{{"test_set", "distribution", "width", "small_loss", "large_loss"}, {}};
  for (std::size_t s = 0; s < r.test_sets.size(); ++s)
    for (std::size_t w = 0; w < r.widths.size(); ++w) {
      if (w == r.reference) continue;
      for (std::size_t d = 0; d < r.distributions.size(); ++d) {
        const auto& a = r.cell(w, d);
        const auto& b = r.cell(r.reference, d);
        if (a.failed || b.failed) continue;
        t.rows.push_back({r.test_sets[s], r.distributions[d], fmt(r.widths[w]), fmt(a.per_test[s].mean_loss),
                          fmt(b.per_test[s].mean_loss)});
      }
    }
  return t;
}

inline Table correlation_vs_compute_table(const StudyReport& r) {
  Table t{{"width", "compute_flops", "test_set", "r2"}, {}};
  for (const auto& c : r.correlations)
    if (c.corr) t.rows.push_back({fmt(c.width), fmt(c.compute_flops), r.test_sets[c.test_set], fmt(c.corr->r2)});
  return t;
}

inline Table per_example_r2_table(const StudyReport& r) {
  Table t{{"test_set", "example_id", "r2"}, {}};
  for (const auto& c : r.correlations) {
    if (c.width != r.figure_width || !c.corr) continue;
    const auto& ids = r.test_ids[c.test_set];
    for (std::size_t i = 0; i < c.per_example_r2.size(); ++i)
      t.rows.push_back({r.test_sets[c.test_set], std::to_string(ids[i]), fmt(c.per_example_r2[i])});
  }
  return t;
}

// ---------------------------------------------------------------------------
// SVG scatter

struct PlotFrame {
  double left = 70, top = 20, width = 550, height = 410;
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;

  double px(double x) const { return left + (x - x_min) / (x_max - x_min) * width; }
  double py(double y) const { return top + (y_max - y) / (y_max - y_min) * height; }
};

inline std::pair<double, double> padded_range(const std::vector<double>& v) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double x : v)
    if (std::isfinite(x)) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  if (!std::isfinite(lo)) return {0.0, 1.0};
  if (lo == hi) return {lo - 0.5, hi + 0.5};
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

inline std::string fmt_px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

/// One circle per (x, y) pair in input order. The plot group carries its
/// axis ranges and pixel frame as data attributes.
inline std::string scatter_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                               const std::vector<double>& xs, const std::vector<double>& ys) {
  PlotFrame f;
  std::tie(f.x_min, f.x_max) = padded_range(xs);
  std::tie(f.y_min, f.y_max) = padded_range(ys);
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" viewBox=\"0 0 640 480\">\n";
  s << "<title>" << title << "</title>\n";
  s << "<rect x=\"0\" y=\"0\" width=\"640\" height=\"480\" fill=\"white\"/>\n";
  s << "<g id=\"plot\" data-x-min=\"" << fmt(f.x_min) << "\" data-x-max=\"" << fmt(f.x_max) << "\" data-y-min=\""
    << fmt(f.y_min) << "\" data-y-max=\"" << fmt(f.y_max) << "\" data-left=\"" << fmt(f.left) << "\" data-top=\""
    << fmt(f.top) << "\" data-width=\"" << fmt(f.width) << "\" data-height=\"" << fmt(f.height) << "\">\n";
  s << "<rect x=\"" << f.left << "\" y=\"" << f.top << "\" width=\"" << f.width << "\" height=\"" << f.height
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  s << "<text x=\"" << f.left << "\" y=\"" << f.top + f.height + 18 << "\" font-size=\"11\">" << fmt(f.x_min)
    << "</text>\n";
  s << "<text x=\"" << f.left + f.width << "\" y=\"" << f.top + f.height + 18
    << "\" font-size=\"11\" text-anchor=\"end\">" << fmt(f.x_max) << "</text>\n";
  s << "<text x=\"" << f.left - 4 << "\" y=\"" << f.top + f.height << "\" font-size=\"11\" text-anchor=\"end\">"
    << fmt(f.y_min) << "</text>\n";
  s << "<text x=\"" << f.left - 4 << "\" y=\"" << f.top + 10 << "\" font-size=\"11\" text-anchor=\"end\">"
    << fmt(f.y_max) << "</text>\n";
  s << "<text class=\"x-label\" x=\"" << f.left + f.width / 2 << "\" y=\"" << f.top + f.height + 40
    << "\" font-size=\"13\" text-anchor=\"middle\">" << x_label << "</text>\n";
  s << "<text class=\"y-label\" x=\"16\" y=\"" << f.top + f.height / 2 << "\" font-size=\"13\" text-anchor=\"middle\" "
    << "transform=\"rotate(-90 16 " << f.top + f.height / 2 << ")\">" << y_label << "</text>\n";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) continue;
    s << "<circle cx=\"" << fmt_px(f.px(xs[i])) << "\" cy=\"" << fmt_px(f.py(ys[i]))
      << "\" r=\"3\" fill=\"steelblue\"/>\n";
  }
  s << "</g>\n</svg>\n";
  return s.str();
}

inline std::vector<double> numeric_column(const Table& t, std::size_t col) {
  std::vector<double> v;
  v.reserve(t.rows.size());
  for (const auto& r : t.rows) v.push_back(r[col] == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(r[col]));
  return v;
}

/// Writes study_report.json, and for a non-empty report the three figure
/// CSVs and one SVG per CSV. Returns the written paths.
inline std::vector<std::filesystem::path> emit_report(const StudyReport& r, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> files;
  auto put = [&](const std::string& name, const std::string& bytes) {
    write_file_atomic(out_dir / name, bytes);
    files.push_back(out_dir / name);
  };
  put("study_report.json", to_json(r).dump(2) + "\n");
  if (r.empty()) return files;

  struct Figure {
    std::string stem;
    Table table;
    std::size_t x_col, y_col;
  };
  const std::vector<Figure> figures{
      {"loss_pairs", loss_pairs_table(r), 3, 4},
      {"correlation_vs_compute", correlation_vs_compute_table(r), 1, 3},
      {"per_example_r2", per_example_r2_table(r), 1, 2},
  };
  for (const auto& fig : figures) {
    put(fig.stem + ".csv", fig.table.csv());
    put(fig.stem + ".svg", scatter_svg(fig.stem, fig.table.header[fig.x_col], fig.table.header[fig.y_col],
                                       numeric_column(fig.table, fig.x_col), numeric_column(fig.table, fig.y_col)));
  }
  return files;
}

inline std::vector<std::filesystem::path> emit_report(const LdsReport& r, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create " + out_dir.string() + ": " + ec.message());
  write_file_atomic(out_dir / "lds_report.json", to_json(r).dump(2) + "\n");
  return {out_dir / "lds_report.json"};
}

}  // namespace attribkit::io
