#pragma once

#include <cstdint>
#include <vector>

#include "mrigen/core.hpp"
#include "mrigen/rng.hpp"

namespace mrigen {

inline constexpr float kLowFieldNoiseSigma = 0.08f;
inline constexpr float kHighFieldNoiseSigma = 0.02f;

float default_noise_sigma(FieldStrength f);

struct PhantomSpec {
  SliceMeta meta;
  int size = 32;
  float noise_sigma = -1.0f;  // < 0 selects the field-strength default
  std::uint64_t seed = 0;

  float effective_sigma() const {
    return noise_sigma < 0 ? default_noise_sigma(meta.field) : noise_sigma;
  }
};

/// Axis-aligned ellipse semi-axes, pixels. Vertical semi-axis carries the
/// fractional radius (skull 0.45, tissue 0.38, CSF 0.12 of size), horizontal
/// is 0.82x that; both scale with slice index as 0.8 + 0.02*slice.
struct PhantomGeometry {
  double cx, cy;
  double skull_rx, skull_ry;
  double tissue_rx, tissue_ry;
  double csf_rx, csf_ry;
};

PhantomGeometry phantom_geometry(int size, int slice_index);

struct ModalityIntensities {
  float skull, tissue, csf;
};

/// T1: (0.2, 0.8, 0.15); T2: (0.2, 0.45, 0.95); FLAIR: (0.2, 0.75, 0.10).
ModalityIntensities phantom_intensities(Modality m);

/// Region indicator masks (1 = inside) for analysing generated slices.
struct PhantomRegions {
  Mat<std::uint8_t> skull, tissue, csf, background;
};

PhantomRegions phantom_regions(int size, int slice_index);

/// Deterministic synthetic brain-like slice; pure in the spec.
ImageSlice generate_phantom(const PhantomSpec& spec);

/// Linear map to 0..255 with round-half-up; a constant input yields all
/// zeros with degenerate_range set instead of failing.
U8Image normalize_to_u8(const ImageMat& raw);

ImageSlice center_crop(const ImageSlice& src, int target_w, int target_h);

/// First min(k, size()) elements, order preserved; k >= 1.
template <class T>
std::vector<T> retain_head_slices(const std::vector<T>& volume, int k) {
  if (k < 1) throw DataError("retain_head_slices: k must be >= 1");
  const std::size_t n = std::min<std::size_t>(volume.size(), static_cast<std::size_t>(k));
  return std::vector<T>(volume.begin(), volume.begin() + n);
}

template <class T>
struct Split {
  std::vector<T> train, val;
  bool degenerate_warning = false;  // one side empty
};

/// Seeded shuffle then split; |train| = round(ratio * n).
template <class T>
Split<T> split_train_val(const std::vector<T>& items, double ratio, std::uint64_t seed) {
  if (items.empty()) throw DataError("split_train_val: empty input");
  if (!(ratio > 0.0 && ratio < 1.0)) throw DataError("split_train_val: ratio must be in (0,1)");
  std::vector<std::size_t> idx(items.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = idx.size() - 1; i > 0; --i) {
    std::swap(idx[i], idx[rng.below(i + 1)]);
  }
  const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(items.size())));
  Split<T> out;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    (i < n_train ? out.train : out.val).push_back(items[idx[i]]);
  }
  out.degenerate_warning = out.train.empty() || out.val.empty();
  return out;
}

}  // namespace mrigen
