// Writes a seeded Gaussian-blob classification dataset in the dataset CSV
// format, for trying the CLI without external data.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "attribkit/models.hpp"
#include "attribkit/numerics.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Gaussian blob dataset generator", "make_blobs"};
  std::size_t n = 200;
  int d = 2, classes = 2;
  double spread = 1.0, separation = 2.0, flip = 0.0;
  std::uint64_t seed = 0, means_seed = 0;
  std::int64_t first_id = 0;
  std::string out;
  app.add_option("-n", n, "examples");
  app.add_option("-d", d, "features");
  app.add_option("-c,--classes", classes, "classes");
  app.add_option("--spread", spread, "per-coordinate standard deviation");
  app.add_option("--separation", separation, "distance of class means from the origin");
  app.add_option("--flip", flip, "probability of replacing a label by another class");
  app.add_option("--seed", seed, "seed for the samples")->required();
  app.add_option("--means-seed", means_seed, "seed for the class means (shared by train and test files)");
  app.add_option("--first-id", first_id, "id of the first row");
  app.add_option("-o,--out", out, "output CSV")->required();
  CLI11_PARSE(app, argc, argv);
  if (n < 1 || d < 1 || classes < 2) {
    std::cerr << "make_blobs: need n >= 1, d >= 1, classes >= 2\n";
    return 2;
  }

  attribkit::RandomStream mrs(means_seed), rs(seed);
  attribkit::Mat means(classes, d);
  for (int c = 0; c < classes; ++c) {
    attribkit::Vec v(d);
    for (int j = 0; j < d; ++j) v[j] = mrs.normal();
    means.row(c) = (separation * v.normalized()).transpose();
  }
  attribkit::Dataset ds;
  ds.class_count = classes;
  ds.inputs.resize(static_cast<attribkit::Index>(n), d);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(rs.uniform_index(static_cast<std::uint64_t>(classes)));
    for (int j = 0; j < d; ++j) ds.inputs(static_cast<attribkit::Index>(i), j) = means(y, j) + spread * rs.normal();
    int label = y;
    if (rs.uniform() < flip) label = (y + 1 + static_cast<int>(rs.uniform_index(classes - 1))) % classes;
    ds.labels.push_back(label);
    ds.ids.push_back(first_id + static_cast<std::int64_t>(i));
  }
  std::ofstream f(out);
  if (!f) {
    std::cerr << "make_blobs: cannot write " << out << "\n";
    return 1;
  }
  f << attribkit::dataset_to_csv(ds);
  return f ? 0 : 1;
}
