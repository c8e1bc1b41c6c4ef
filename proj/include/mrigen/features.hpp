#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "mrigen/core.hpp"
#include "mrigen/fid.hpp"

namespace mrigen {

inline constexpr std::uint64_t kDefaultEmbedderSeed = 0xE17B3DD3;

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual FeatureMatrix embed(const std::vector<ImageSlice>& images) const = 0;
};

/// Fixed-seed random 3-layer stride-2 conv stack with tanh nonlinearities and
/// global average pooling to 64 features. Weights are frozen at construction;
/// arithmetic order is fixed, so identical inputs give identical features.
class TinyConvEmbedder : public Embedder {
 public:
  explicit TinyConvEmbedder(std::uint64_t seed = kDefaultEmbedderSeed);

  FeatureMatrix embed(const std::vector<ImageSlice>& images) const override;
  Eigen::VectorXd embed_one(const ImageSlice& image) const;

  static constexpr int kFeatureDim = 64;

 private:
  Mat<float> w1_, w2_, w3_;  // out_ch x (in_ch*9)
  Eigen::VectorXf b1_, b2_, b3_;
};

/// Positional adapter for precomputed features: row i of the file stands for
/// image i. The image count must match the stored row count.
class FileEmbedder : public Embedder {
 public:
  explicit FileEmbedder(const std::filesystem::path& path);

  FeatureMatrix embed(const std::vector<ImageSlice>& images) const override;
  const FeatureMatrix& features() const { return features_; }

 private:
  FeatureMatrix features_;
};

/// Rows follow image order; all images must share dimensions.
FeatureMatrix embed_images(const std::vector<ImageSlice>& images, const Embedder& embedder);

// Feature file: magic "MRIGFEA1" | u32 version | u32 n | u32 d |
// float32 little-endian row-major payload.
void write_feature_file(const std::filesystem::path& path, const FeatureMatrix& features);
FeatureMatrix read_feature_file(const std::filesystem::path& path);

// CSV alternative with header row f0..f{d-1}.
void write_feature_csv(const std::filesystem::path& path, const FeatureMatrix& features);
FeatureMatrix read_feature_csv(const std::filesystem::path& path);

}  // namespace mrigen
