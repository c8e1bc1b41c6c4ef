#include "mrigen/phantom.hpp"

#include <algorithm>
#include <cmath>

namespace mrigen {

namespace {

constexpr double kSkullFrac = 0.45;
constexpr double kTissueFrac = 0.38;
constexpr double kCsfFrac = 0.12;
constexpr double kAspect = 0.82;  // horizontal vs vertical semi-axis

bool inside(double x, double y, double cx, double cy, double rx, double ry) {
  const double dx = (x - cx) / rx;
  const double dy = (y - cy) / ry;
  return dx * dx + dy * dy <= 1.0;
}

}  // namespace

float default_noise_sigma(FieldStrength f) {
  return f == FieldStrength::Low ? kLowFieldNoiseSigma : kHighFieldNoiseSigma;
}

PhantomGeometry phantom_geometry(int size, int slice_index) {
  const double k = 0.8 + 0.02 * slice_index;
  PhantomGeometry g;
  g.cx = (size - 1) / 2.0;
  g.cy = (size - 1) / 2.0;
  g.skull_ry = kSkullFrac * size * k;
  g.tissue_ry = kTissueFrac * size * k;
  g.csf_ry = kCsfFrac * size * k;
  g.skull_rx = kAspect * g.skull_ry;
  g.tissue_rx = kAspect * g.tissue_ry;
  g.csf_rx = kAspect * g.csf_ry;
  return g;
}

ModalityIntensities phantom_intensities(Modality m) {
  switch (m) {
    case Modality::T1: return {0.2f, 0.8f, 0.15f};
    case Modality::T2: return {0.2f, 0.45f, 0.95f};
    case Modality::Flair: return {0.2f, 0.75f, 0.10f};
  }
  throw DataError("invalid Modality value");
}

PhantomRegions phantom_regions(int size, int slice_index) {
  const PhantomGeometry g = phantom_geometry(size, slice_index);
  PhantomRegions regions;
  regions.skull.setZero(size, size);
  regions.tissue.setZero(size, size);
  regions.csf.setZero(size, size);
  regions.background.setZero(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      if (inside(x, y, g.cx, g.cy, g.csf_rx, g.csf_ry)) {
        regions.csf(y, x) = 1;
      } else if (inside(x, y, g.cx, g.cy, g.tissue_rx, g.tissue_ry)) {
        regions.tissue(y, x) = 1;
      } else if (inside(x, y, g.cx, g.cy, g.skull_rx, g.skull_ry)) {
        regions.skull(y, x) = 1;
      } else {
        regions.background(y, x) = 1;
      }
    }
  }
  return regions;
}

ImageSlice generate_phantom(const PhantomSpec& spec) {
  if (spec.size < 8) throw DataError("phantom size must be >= 8");
  validate(spec.meta);
  const float sigma = spec.effective_sigma();
  if (!std::isfinite(sigma) || sigma < 0) throw DataError("phantom noise sigma must be finite and >= 0");

  const PhantomRegions regions = phantom_regions(spec.size, spec.meta.slice_index);
  const ModalityIntensities in = phantom_intensities(spec.meta.modality);

  ImageSlice out;
  out.data.resize(spec.size, spec.size);
  Rng rng(spec.seed);
  for (int y = 0; y < spec.size; ++y) {
    for (int x = 0; x < spec.size; ++x) {
      float v = 0.0f;
      if (regions.csf(y, x)) v = in.csf;
      else if (regions.tissue(y, x)) v = in.tissue;
      else if (regions.skull(y, x)) v = in.skull;
      const double noise = rng.normal();  // drawn for every pixel, fixed order
      out.data(y, x) = std::clamp(v + sigma * static_cast<float>(noise), 0.0f, 1.0f);
    }
  }
  return out;
}

U8Image normalize_to_u8(const ImageMat& raw) {
  if (!raw.allFinite()) throw DataError("normalize_to_u8: non-finite input");
  U8Image out;
  out.height = static_cast<int>(raw.rows());
  out.width = static_cast<int>(raw.cols());
  out.pixels.assign(static_cast<std::size_t>(out.width) * out.height, 0);

  const float lo = raw.minCoeff();
  const float hi = raw.maxCoeff();
  if (hi == lo) {
    out.degenerate_range = true;  // constant image: all zeros, flagged
    return out;
  }
  const double scale = 255.0 / (static_cast<double>(hi) - static_cast<double>(lo));
  for (int r = 0; r < out.height; ++r) {
    for (int c = 0; c < out.width; ++c) {
      const double v = (static_cast<double>(raw(r, c)) - lo) * scale;
      out.pixels[static_cast<std::size_t>(r) * out.width + c] =
          static_cast<std::uint8_t>(std::floor(v + 0.5));
    }
  }
  return out;
}

ImageSlice center_crop(const ImageSlice& src, int target_w, int target_h) {
  if (target_w < 1 || target_h < 1) throw DataError("center_crop: target must be positive");
  if (target_w > src.width() || target_h > src.height()) {
    throw DataError("center_crop: target exceeds source (" + std::to_string(target_w) + "x" +
                    std::to_string(target_h) + " from " + std::to_string(src.width()) + "x" +
                    std::to_string(src.height()) + ")");
  }
  const int off_x = (src.width() - target_w) / 2;
  const int off_y = (src.height() - target_h) / 2;
  ImageSlice out;
  out.data = src.data.block(off_y, off_x, target_h, target_w);
  return out;
}

}  // namespace mrigen
