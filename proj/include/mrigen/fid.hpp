#pragma once

#include <Eigen/Dense>

#include "mrigen/core.hpp"

namespace mrigen {

/// n x d feature rows, one image per row.
using FeatureMatrix = Eigen::MatrixXd;

struct GaussianStats {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;  // symmetric PSD
  int n = 0;              // sample count behind the estimate

  /// Covariance estimation is rank-deficient when n-1 < d; the jittered FID
  /// is still finite.
  bool rank_deficient() const { return n - 1 < mu.size(); }
};

/// Column means and the unbiased sample covariance, symmetrized.
GaussianStats gaussian_stats(const FeatureMatrix& features);

/// Principal square root of a symmetric PSD matrix via eigendecomposition;
/// eigenvalues below -1e-6*||A|| reject the input.
Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& a);

inline constexpr double kFidJitter = 1e-6;

/// Frechet distance between Gaussians, computed through the symmetric form
/// tr(Sa) + tr(Sb) - 2 tr((Sa^{1/2} Sb Sa^{1/2})^{1/2}) + |mu_a - mu_b|^2
/// with kFidJitter*I added to both covariances. Clamped at zero.
double fid(const GaussianStats& a, const GaussianStats& b);

}  // namespace mrigen
