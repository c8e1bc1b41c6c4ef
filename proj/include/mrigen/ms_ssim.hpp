#pragma once

#include <cstdint>
#include <tuple>
#include <vector>

#include "mrigen/core.hpp"

namespace mrigen {

/// Per-scale exponents and window for the multi-scale structural similarity
/// index. beta sums to 1 for the default sets; alpha applies only at the
/// coarsest scale.
struct MsSsimWeights {
  int scales = 5;
  std::vector<double> alpha;  // size scales; only alpha[scales-1] is used
  std::vector<double> beta;
  std::vector<double> gamma;
  int window = 11;
  double window_sigma = 1.5;
  double c1 = 0.01 * 0.01;  // (K1*L)^2, L = 1 for [0,1] images
  double c2 = 0.03 * 0.03;  // (K2*L)^2
  double c3 = 0.03 * 0.03 / 2.0;

  /// Standard five-scale weights, truncated and renormalized for smaller M.
  static MsSsimWeights defaults(int m = 5);

  /// 32x32 preset: three scales with a 7x7 window (an 11-tap window does not
  /// fit the coarsest scale of a 32-pixel image).
  static MsSsimWeights toy32();

  /// Plain single-scale SSIM: M=1 with unit exponents.
  static MsSsimWeights single_scale();
};

/// Multi-scale similarity in [0,1]; 1 exactly when x == y (including
/// constant images). Throws DataError naming the maximum feasible scale
/// count when the images are too small.
double ms_ssim(const ImageSlice& x, const ImageSlice& y, const MsSsimWeights& w);

struct DiversityResult {
  double mean_ms_ssim = 0.0;
  std::vector<std::tuple<int, int, double>> pairs;  // (i, j, value)
};

/// Mean MS-SSIM over up to n_pairs distinct unordered pairs sampled uniformly
/// (all pairs when fewer exist). Lower means more diverse.
DiversityResult pairwise_diversity(const std::vector<ImageSlice>& images, int n_pairs,
                                   std::uint64_t seed, const MsSsimWeights& w);

}  // namespace mrigen
