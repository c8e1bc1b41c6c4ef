#include "mrigen/features.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mrigen/rng.hpp"

namespace mrigen {

namespace {

constexpr char kFeatureMagic[8] = {'M', 'R', 'I', 'G', 'F', 'E', 'A', '1'};
constexpr std::uint32_t kFeatureVersion = 1;

void fill_fan_in(Mat<float>& w, Rng& rng, int fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      w(r, c) = static_cast<float>(rng.uniform(-bound, bound));
    }
  }
}

/// 3x3 stride-2 pad-1 convolution on channel-major maps, then tanh.
Mat<float> conv_tanh_s2(const Mat<float>& x, int h, int w, const Mat<float>& weight,
                        const Eigen::VectorXf& bias, int& oh, int& ow) {
  const int in_ch = static_cast<int>(x.rows());
  const int out_ch = static_cast<int>(weight.rows());
  oh = (h + 2 - 3) / 2 + 1;
  ow = (w + 2 - 3) / 2 + 1;
  Mat<float> y(out_ch, static_cast<Eigen::Index>(oh) * ow);
  for (int oc = 0; oc < out_ch; ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        float acc = bias(oc);
        for (int ic = 0; ic < in_ch; ++ic) {
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * 2 + ky - 1;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox * 2 + kx - 1;
              if (ix < 0 || ix >= w) continue;
              acc += weight(oc, (ic * 3 + ky) * 3 + kx) * x(ic, iy * w + ix);
            }
          }
        }
        y(oc, oy * ow + ox) = std::tanh(acc);
      }
    }
  }
  return y;
}

}  // namespace

TinyConvEmbedder::TinyConvEmbedder(std::uint64_t seed) {
  Rng rng(seed);
  w1_.resize(16, 9);
  w2_.resize(32, 16 * 9);
  w3_.resize(kFeatureDim, 32 * 9);
  fill_fan_in(w1_, rng, 9);
  fill_fan_in(w2_, rng, 16 * 9);
  fill_fan_in(w3_, rng, 32 * 9);
  b1_.setZero(16);
  b2_.setZero(32);
  b3_.setZero(kFeatureDim);
}

Eigen::VectorXd TinyConvEmbedder::embed_one(const ImageSlice& image) const {
  const int h = image.height();
  const int w = image.width();
  if (h < 8 || w < 8) throw DataError("TinyConvEmbedder: image smaller than 8x8");
  Mat<float> x(1, static_cast<Eigen::Index>(h) * w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) x(0, r * w + c) = image.data(r, c);
  }
  int oh = 0, ow = 0;
  Mat<float> a = conv_tanh_s2(x, h, w, w1_, b1_, oh, ow);
  int oh2 = 0, ow2 = 0;
  Mat<float> b = conv_tanh_s2(a, oh, ow, w2_, b2_, oh2, ow2);
  int oh3 = 0, ow3 = 0;
  Mat<float> c = conv_tanh_s2(b, oh2, ow2, w3_, b3_, oh3, ow3);
  Eigen::VectorXd out(kFeatureDim);
  for (int ch = 0; ch < kFeatureDim; ++ch) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < c.cols(); ++i) acc += static_cast<double>(c(ch, i));
    out(ch) = acc / static_cast<double>(c.cols());
  }
  return out;
}

FeatureMatrix TinyConvEmbedder::embed(const std::vector<ImageSlice>& images) const {
  FeatureMatrix out(static_cast<Eigen::Index>(images.size()), kFeatureDim);
  for (std::size_t i = 0; i < images.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = embed_one(images[i]).transpose();
  }
  return out;
}

FileEmbedder::FileEmbedder(const std::filesystem::path& path) {
  if (path.extension() == ".csv") {
    features_ = read_feature_csv(path);
  } else {
    features_ = read_feature_file(path);
  }
}

FeatureMatrix FileEmbedder::embed(const std::vector<ImageSlice>& images) const {
  if (static_cast<Eigen::Index>(images.size()) != features_.rows()) {
    throw DataError("FileEmbedder: stored features have " + std::to_string(features_.rows()) +
                    " rows, got " + std::to_string(images.size()) + " images");
  }
  return features_;
}

FeatureMatrix embed_images(const std::vector<ImageSlice>& images, const Embedder& embedder) {
  if (images.empty()) throw DataError("embed_images: empty image list");
  const int w = images[0].width();
  const int h = images[0].height();
  for (std::size_t i = 1; i < images.size(); ++i) {
    if (images[i].width() != w || images[i].height() != h) {
      throw DataError("embed_images: dimension mismatch at image " + std::to_string(i));
    }
  }
  return embedder.embed(images);
}

void write_feature_file(const std::filesystem::path& path, const FeatureMatrix& features) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  os.write(kFeatureMagic, 8);
  auto write_u32 = [&os](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF), static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 24) & 0xFF)};
    os.write(reinterpret_cast<const char*>(b), 4);
  };
  write_u32(kFeatureVersion);
  write_u32(static_cast<std::uint32_t>(features.rows()));
  write_u32(static_cast<std::uint32_t>(features.cols()));
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    for (Eigen::Index c = 0; c < features.cols(); ++c) {
      const float f = static_cast<float>(features(r, c));
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      write_u32(bits);
    }
  }
  if (!os) throw DataError("write failed for '" + path.string() + "'");
}

FeatureMatrix read_feature_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path.string() + "'");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kFeatureMagic, 8) != 0) {
    throw DataError("'" + path.string() + "' is not a feature file");
  }
  auto read_u32 = [&is]() {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  };
  const std::uint32_t version = read_u32();
  if (version != kFeatureVersion) {
    throw DataError("'" + path.string() + "': unsupported feature file version");
  }
  const std::uint32_t n = read_u32();
  const std::uint32_t d = read_u32();
  FeatureMatrix out(n, d);
  for (std::uint32_t r = 0; r < n; ++r) {
    for (std::uint32_t c = 0; c < d; ++c) {
      const std::uint32_t bits = read_u32();
      float f;
      std::memcpy(&f, &bits, 4);
      out(r, c) = static_cast<double>(f);
    }
  }
  if (!is) throw DataError("'" + path.string() + "': truncated feature payload");
  return out;
}

void write_feature_csv(const std::filesystem::path& path, const FeatureMatrix& features) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  for (Eigen::Index c = 0; c < features.cols(); ++c) {
    os << (c ? "," : "") << 'f' << c;
  }
  os << '\n';
  char buf[48];
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    for (Eigen::Index c = 0; c < features.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(static_cast<float>(features(r, c))));
      os << (c ? "," : "") << buf;
    }
    os << '\n';
  }
  if (!os) throw DataError("write failed for '" + path.string() + "'");
}

FeatureMatrix read_feature_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(is, line)) throw DataError("'" + path.string() + "': empty feature CSV");
  Eigen::Index d = 1;
  for (char ch : line) {
    if (ch == ',') ++d;
  }
  std::vector<double> values;
  Eigen::Index rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    Eigen::Index got = 0;
    while (std::getline(ss, cell, ',')) {
      values.push_back(std::stod(cell));
      ++got;
    }
    if (got != d) throw DataError("'" + path.string() + "': ragged CSV row");
    ++rows;
  }
  FeatureMatrix out(rows, d);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < d; ++c) out(r, c) = values[static_cast<std::size_t>(r * d + c)];
  }
  return out;
}

}  // namespace mrigen
