#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mrigen {

/// Dense row-major storage; for images (row, col) == (y, x).
template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using ImageMat = Mat<float>;

// ---- error taxonomy (CLI exit codes: usage 1, data 2, numeric 3) ----------

/// Rejected inputs, malformed files, contract violations.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite state detected during numeric work.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Command-line misuse; thrown only by the CLI layer.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- acquisition metadata --------------------------------------------------

enum class Modality { T1, T2, Flair };
enum class FieldStrength { Low, High };  // canonical forms "0.3T" and "3T"

std::string_view to_string(Modality m);
std::string_view to_string(FieldStrength f);
Modality modality_from_string(std::string_view s);
FieldStrength field_from_string(std::string_view s);

inline constexpr int kMaxSliceIndex = 18;
inline constexpr int kFastMriRetainedSlices = 10;

struct SliceMeta {
  FieldStrength field = FieldStrength::Low;
  Modality modality = Modality::T1;
  int slice_index = 1;  // 1-based
  std::string subject_id;

  bool operator==(const SliceMeta&) const = default;
};

/// Throws DataError when slice_index is outside 1..kMaxSliceIndex.
void validate(const SliceMeta& meta);

// ---- images ----------------------------------------------------------------

/// Single-channel intensity image; values live in [0,1] internally.
struct ImageSlice {
  ImageMat data;  // height x width

  int width() const { return static_cast<int>(data.cols()); }
  int height() const { return static_cast<int>(data.rows()); }
};

/// 8-bit image as stored on disk.
struct U8Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, width*height
  bool degenerate_range = false;     // set by normalize_to_u8 on constant input
};

ImageSlice to_slice(const U8Image& img);
U8Image to_u8(const ImageSlice& slice);  // round-half-up of 255*clamp(x,0,1)

}  // namespace mrigen
