#pragma once

// FLOP model for training a transformer and for attributing it with
// projected gradients.

#include <string>
#include <vector>

#include "attribkit/errors.hpp"

namespace attribkit::cost {

struct CostProfile {
  std::string name;
  double p = 0;        // parameters
  double n_train = 0;  // training examples
  double n = 0;        // pool examples being attributed
  double n_test = 0;   // target examples
  double T = 0;        // tokens per example
  double k = 0;        // projection dimension
  double M = 1;        // ensemble size

  void validate() const {
    if (!(p > 0 && n_train > 0 && n > 0 && n_test > 0 && T > 0 && k > 0 && M > 0))
      throw InvalidInput("cost profile '" + name + "': all fields must be positive");
    if (n_train > n) throw InvalidInput("cost profile '" + name + "': n_train exceeds n");
  }
};

/// 6 p T n_train (forward 2pD plus backward 4pD).
inline double train_cost(const CostProfile& c) { return 6.0 * c.p * c.T * c.n_train; }

/// The eight itemized attribution costs, each matrix product a x b times
/// b x c counted as a c (2b - 1).
struct AttribItems {
  double train_grads, test_grads, train_project, test_project, gram, inverse, solve, scores;
  double sum() const { return train_grads + test_grads + train_project + test_project + gram + inverse + solve + scores; }
};

inline AttribItems attrib_items(const CostProfile& c) {
  return {
      6.0 * c.p * c.T * c.n,
      6.0 * c.p * c.T * c.n_test,
      c.n * c.k * (2.0 * c.p - 1.0),
      c.n_test * c.k * (2.0 * c.p - 1.0),
      c.k * c.k * (2.0 * c.n - 1.0),
      c.k * c.k * c.k,
      c.n * c.k * (2.0 * c.k - 1.0),
      c.n_test * c.n * (2.0 * c.k - 1.0),
  };
}

/// Attribution cost of one model. Approximate form:
/// (6pT + 4k^2 + 2kp) n + 2p (3T + k) n_test + k^3.
inline double attrib_cost(const CostProfile& c, bool exact = false) {
  if (exact) return attrib_items(c).sum();
  return (6.0 * c.p * c.T + 4.0 * c.k * c.k + 2.0 * c.k * c.p) * c.n +
         2.0 * c.p * (3.0 * c.T + c.k) * c.n_test + c.k * c.k * c.k;
}

struct TotalCost {
  double total = 0;        // M (C_train + C_attrib)
  double train_ratio = 0;  // C_train / C_total, as a fraction
};

inline TotalCost total_cost(const CostProfile& c, bool exact = false) {
  const double tr = train_cost(c);
  const double at = attrib_cost(c, exact);
  return {c.M * (tr + at), tr / (tr + at)};
}

/// Limit of the training share as n_train = n grows: 3T / (6T + k).
inline double asymptotic_ratio(double T, double k) {
  if (!(T > 0) || !(k >= 0)) throw InvalidInput("asymptotic_ratio: T must be positive and k nonnegative");
  return 3.0 * T / (6.0 * T + k);
}

/// The four compute profiles of the MPT attribution example, with the
/// rounded input sizes.
inline std::vector<CostProfile> mpt_profiles() {
  auto mk = [](std::string name, double p_m, double ntrain_m) {
    return CostProfile{std::move(name), p_m * 1e6, ntrain_m * 1e6, 80e6, 1000, 2048, 15360, 1};
  };
  return {mk("MPT-125M", 125, 1.33), mk("MPT-350M", 350, 3.68), mk("MPT-760M", 760, 7.47),
          mk("MPT-8B", 8000, 80)};
}

}  // namespace attribkit::cost
