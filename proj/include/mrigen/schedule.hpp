#pragma once

#include <Eigen/Dense>

#include "mrigen/core.hpp"

namespace mrigen {

/// Per-step noise tables: beta_t, alpha_t = 1 - beta_t and the cumulative
/// product alpha_bar_t. Indexing is 1-based through at(), matching the
/// forward process q(x_t | x_0).
struct NoiseSchedule {
  int T = 0;
  Eigen::VectorXd beta;
  Eigen::VectorXd alpha;
  Eigen::VectorXd alpha_bar;

  double beta_at(int t) const { return beta(t - 1); }
  double alpha_at(int t) const { return alpha(t - 1); }
  double alpha_bar_at(int t) const { return alpha_bar(t - 1); }
};

inline constexpr int kDefaultScheduleSteps = 1000;
inline constexpr double kDefaultBetaStart = 1e-4;
inline constexpr double kDefaultBetaEnd = 0.02;

/// Linear beta ramp inclusive of both endpoints.
inline NoiseSchedule make_schedule(int T = kDefaultScheduleSteps, double beta_start = kDefaultBetaStart,
                                   double beta_end = kDefaultBetaEnd) {
  if (T < 1) throw DataError("make_schedule: T must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw DataError("make_schedule: need 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.T = T;
  s.beta.resize(T);
  s.alpha.resize(T);
  s.alpha_bar.resize(T);
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    const double b = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (T - 1.0);
    s.beta(t) = b;
    s.alpha(t) = 1.0 - b;
    prod *= s.alpha(t);
    s.alpha_bar(t) = prod;
  }
  return s;
}

/// Closed-form forward noising x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps.
template <class S>
Mat<S> q_sample(const Mat<S>& x0, int t, const Mat<S>& eps, const NoiseSchedule& sched) {
  if (t < 1 || t > sched.T) throw DataError("q_sample: t out of range");
  if (eps.rows() != x0.rows() || eps.cols() != x0.cols()) {
    throw DataError("q_sample: eps shape does not match x0");
  }
  const double ab = sched.alpha_bar_at(t);
  return (std::sqrt(ab) * x0.template cast<double>() + std::sqrt(1.0 - ab) * eps.template cast<double>())
      .template cast<S>();
}

}  // namespace mrigen
