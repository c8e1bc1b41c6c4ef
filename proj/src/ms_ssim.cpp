#include "mrigen/ms_ssim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mrigen/rng.hpp"

namespace mrigen {

namespace {

const std::vector<double>& wang_weights() {
  static const std::vector<double> w = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  return w;
}

Eigen::VectorXd gaussian_kernel(int size, double sigma) {
  Eigen::VectorXd k(size);
  const double c = (size - 1) / 2.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - c;
    k(i) = std::exp(-d * d / (2.0 * sigma * sigma));
  }
  k /= k.sum();
  return k;
}

/// Separable valid-region filtering.
Eigen::MatrixXd smooth_valid(const Eigen::MatrixXd& img, const Eigen::VectorXd& k) {
  const int win = static_cast<int>(k.size());
  const int oh = static_cast<int>(img.rows()) - win + 1;
  const int ow = static_cast<int>(img.cols()) - win + 1;
  Eigen::MatrixXd rows(img.rows(), ow);
  for (Eigen::Index r = 0; r < img.rows(); ++r) {
    for (int c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (int t = 0; t < win; ++t) acc += k(t) * img(r, c + t);
      rows(r, c) = acc;
    }
  }
  Eigen::MatrixXd out(oh, ow);
  for (int c = 0; c < ow; ++c) {
    for (int r = 0; r < oh; ++r) {
      double acc = 0.0;
      for (int t = 0; t < win; ++t) acc += k(t) * rows(r + t, c);
      out(r, c) = acc;
    }
  }
  return out;
}

Eigen::MatrixXd downsample2_mean(const Eigen::MatrixXd& img) {
  const int oh = static_cast<int>(img.rows()) / 2;
  const int ow = static_cast<int>(img.cols()) / 2;
  Eigen::MatrixXd out(oh, ow);
  for (int r = 0; r < oh; ++r) {
    for (int c = 0; c < ow; ++c) {
      out(r, c) = 0.25 * (img(2 * r, 2 * c) + img(2 * r, 2 * c + 1) + img(2 * r + 1, 2 * c) +
                          img(2 * r + 1, 2 * c + 1));
    }
  }
  return out;
}

int max_feasible_scales(int h, int w, int window) {
  int m = 0;
  while (std::min(h, w) >= window) {
    ++m;
    h /= 2;
    w /= 2;
  }
  return m;
}

}  // namespace

MsSsimWeights MsSsimWeights::defaults(int m) {
  if (m < 1 || m > 5) throw DataError("MsSsimWeights: default scale count must be 1..5");
  MsSsimWeights w;
  w.scales = m;
  const auto& base = wang_weights();
  double sum = 0.0;
  for (int j = 0; j < m; ++j) sum += base[static_cast<std::size_t>(j)];
  w.alpha.assign(static_cast<std::size_t>(m), 0.0);
  w.beta.resize(static_cast<std::size_t>(m));
  w.gamma.resize(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    const double v = base[static_cast<std::size_t>(j)] / sum;
    w.beta[static_cast<std::size_t>(j)] = v;
    w.gamma[static_cast<std::size_t>(j)] = v;
  }
  w.alpha[static_cast<std::size_t>(m - 1)] = w.beta[static_cast<std::size_t>(m - 1)];
  return w;
}

MsSsimWeights MsSsimWeights::toy32() {
  MsSsimWeights w = defaults(3);
  w.window = 7;
  return w;
}

MsSsimWeights MsSsimWeights::single_scale() {
  MsSsimWeights w = defaults(1);
  w.alpha = {1.0};
  w.beta = {1.0};
  w.gamma = {1.0};
  return w;
}

double ms_ssim(const ImageSlice& x, const ImageSlice& y, const MsSsimWeights& w) {
  if (x.width() != y.width() || x.height() != y.height()) {
    throw DataError("ms_ssim: image dimensions differ");
  }
  if (w.scales < 1 || w.alpha.size() != static_cast<std::size_t>(w.scales) ||
      w.beta.size() != static_cast<std::size_t>(w.scales) ||
      w.gamma.size() != static_cast<std::size_t>(w.scales)) {
    throw DataError("ms_ssim: weight vectors must match the scale count");
  }
  const int feasible = max_feasible_scales(x.height(), x.width(), w.window);
  if (feasible < w.scales) {
    throw DataError("ms_ssim: image too small for " + std::to_string(w.scales) +
                    " scales; max feasible M = " + std::to_string(feasible));
  }

  const Eigen::VectorXd kernel = gaussian_kernel(w.window, w.window_sigma);
  Eigen::MatrixXd xs = x.data.cast<double>();
  Eigen::MatrixXd ys = y.data.cast<double>();

  double result = 1.0;
  for (int j = 1; j <= w.scales; ++j) {
    const Eigen::MatrixXd ux = smooth_valid(xs, kernel);
    const Eigen::MatrixXd uy = smooth_valid(ys, kernel);
    const Eigen::MatrixXd sxx = smooth_valid(xs.cwiseProduct(xs), kernel) - ux.cwiseProduct(ux);
    const Eigen::MatrixXd syy = smooth_valid(ys.cwiseProduct(ys), kernel) - uy.cwiseProduct(uy);
    const Eigen::MatrixXd sxy = smooth_valid(xs.cwiseProduct(ys), kernel) - ux.cwiseProduct(uy);

    const bool last = j == w.scales;
    const double alpha = w.alpha[static_cast<std::size_t>(j - 1)];
    const double beta = w.beta[static_cast<std::size_t>(j - 1)];
    const double gamma = w.gamma[static_cast<std::size_t>(j - 1)];

    double acc = 0.0;
    for (Eigen::Index r = 0; r < ux.rows(); ++r) {
      for (Eigen::Index c = 0; c < ux.cols(); ++c) {
        const double sx = std::sqrt(std::max(sxx(r, c), 0.0));
        const double sy = std::sqrt(std::max(syy(r, c), 0.0));
        const double cc = (2.0 * sx * sy + w.c2) / (sxx(r, c) + syy(r, c) + w.c2);
        const double ss = std::max((sxy(r, c) + w.c3) / (sx * sy + w.c3), 0.0);
        double v = std::pow(cc, beta) * std::pow(ss, gamma);
        if (last) {
          const double ll = (2.0 * ux(r, c) * uy(r, c) + w.c1) /
                            (ux(r, c) * ux(r, c) + uy(r, c) * uy(r, c) + w.c1);
          v *= std::pow(ll, alpha);
        }
        acc += v;
      }
    }
    result *= acc / static_cast<double>(ux.size());

    if (!last) {
      xs = downsample2_mean(xs);
      ys = downsample2_mean(ys);
    }
  }
  return result;
}

DiversityResult pairwise_diversity(const std::vector<ImageSlice>& images, int n_pairs,
                                   std::uint64_t seed, const MsSsimWeights& w) {
  if (images.size() < 2) throw DataError("pairwise_diversity: need at least 2 images");
  if (n_pairs < 1) throw DataError("pairwise_diversity: n_pairs must be >= 1");

  std::vector<std::pair<int, int>> all_pairs;
  const int n = static_cast<int>(images.size());
  all_pairs.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) all_pairs.emplace_back(i, j);
  }
  const std::size_t take = std::min<std::size_t>(all_pairs.size(), static_cast<std::size_t>(n_pairs));
  Rng rng(seed);
  for (std::size_t k = 0; k < take; ++k) {
    const std::size_t j = k + rng.below(all_pairs.size() - k);
    std::swap(all_pairs[k], all_pairs[j]);
  }

  DiversityResult out;
  out.pairs.reserve(take);
  double sum = 0.0;
  for (std::size_t k = 0; k < take; ++k) {
    const auto [i, j] = all_pairs[k];
    const double v = ms_ssim(images[static_cast<std::size_t>(i)], images[static_cast<std::size_t>(j)], w);
    out.pairs.emplace_back(i, j, v);
    sum += v;
  }
  out.mean_ms_ssim = sum / static_cast<double>(take);
  return out;
}

}  // namespace mrigen
