#include "mrigen/core.hpp"

#include <cmath>

namespace mrigen {

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::T1: return "T1";
    case Modality::T2: return "T2";
    case Modality::Flair: return "FLAIR";
  }
  throw DataError("invalid Modality value");
}

std::string_view to_string(FieldStrength f) {
  switch (f) {
    case FieldStrength::Low: return "0.3T";
    case FieldStrength::High: return "3T";
  }
  throw DataError("invalid FieldStrength value");
}

Modality modality_from_string(std::string_view s) {
  if (s == "T1") return Modality::T1;
  if (s == "T2") return Modality::T2;
  if (s == "FLAIR") return Modality::Flair;
  throw DataError("unknown modality '" + std::string(s) + "'");
}

FieldStrength field_from_string(std::string_view s) {
  if (s == "0.3T") return FieldStrength::Low;
  if (s == "3T") return FieldStrength::High;
  throw DataError("unknown field strength '" + std::string(s) + "'");
}

void validate(const SliceMeta& meta) {
  if (meta.slice_index < 1 || meta.slice_index > kMaxSliceIndex) {
    throw DataError("slice index out of range: " + std::to_string(meta.slice_index));
  }
}

ImageSlice to_slice(const U8Image& img) {
  ImageSlice out;
  out.data.resize(img.height, img.width);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      out.data(r, c) = static_cast<float>(img.pixels[static_cast<std::size_t>(r) * img.width + c]) / 255.0f;
    }
  }
  return out;
}

U8Image to_u8(const ImageSlice& slice) {
  U8Image out;
  out.width = slice.width();
  out.height = slice.height();
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height);
  for (int r = 0; r < out.height; ++r) {
    for (int c = 0; c < out.width; ++c) {
      const double v = std::clamp(static_cast<double>(slice.data(r, c)), 0.0, 1.0);
      out.pixels[static_cast<std::size_t>(r) * out.width + c] =
          static_cast<std::uint8_t>(std::floor(255.0 * v + 0.5));
    }
  }
  return out;
}

}  // namespace mrigen
