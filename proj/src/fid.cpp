#include "mrigen/fid.hpp"

#include <cmath>
#include <string>

namespace mrigen {

GaussianStats gaussian_stats(const FeatureMatrix& features) {
  const Eigen::Index n = features.rows();
  const Eigen::Index d = features.cols();
  if (n < 2) throw DataError("gaussian_stats: need at least 2 samples");
  if (!features.allFinite()) throw DataError("gaussian_stats: non-finite features");
  GaussianStats s;
  s.n = static_cast<int>(n);
  s.mu = features.colwise().mean();
  const Eigen::MatrixXd centered = features.rowwise() - s.mu.transpose();
  s.sigma = (centered.transpose() * centered) / static_cast<double>(n - 1);
  s.sigma = 0.5 * (s.sigma + s.sigma.transpose()).eval();
  (void)d;
  return s;
}

Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) throw DataError("sqrtm_psd: matrix must be square");
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) {
    throw DataError("sqrtm_psd: matrix is not symmetric within tolerance");
  }
  const Eigen::MatrixXd sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success) throw NumericError("sqrtm_psd: eigendecomposition failed");
  const Eigen::VectorXd lam = es.eigenvalues();
  const double norm = std::max(std::abs(lam.minCoeff()), std::abs(lam.maxCoeff()));
  if (lam.minCoeff() < -1e-6 * std::max(norm, 1e-30)) {
    throw DataError("sqrtm_psd: matrix is not PSD (min eigenvalue " + std::to_string(lam.minCoeff()) + ")");
  }
  const Eigen::VectorXd root = lam.cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd s = es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (s + s.transpose().eval());
}

double fid(const GaussianStats& a, const GaussianStats& b) {
  if (a.mu.size() != b.mu.size()) throw DataError("fid: dimension mismatch");
  const Eigen::Index d = a.mu.size();
  const Eigen::MatrixXd jitter = kFidJitter * Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd sa = a.sigma + jitter;
  const Eigen::MatrixXd sb = b.sigma + jitter;
  const Eigen::MatrixXd ra = sqrtm_psd(sa);
  Eigen::MatrixXd inner = ra * sb * ra;
  inner = 0.5 * (inner + inner.transpose().eval());
  const Eigen::MatrixXd cross = sqrtm_psd(inner);
  const double mean_term = (a.mu - b.mu).squaredNorm();
  double value = mean_term + sa.trace() + sb.trace() - 2.0 * cross.trace();
  if (value < -1e-6) {
    throw NumericError("fid: negative value beyond tolerance: " + std::to_string(value));
  }
  return std::max(value, 0.0);
}

}  // namespace mrigen
