#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mrigen/denoiser.hpp"

namespace mrigen {

// Checkpoint layout (little-endian):
//   magic "MRIGCKP1" | u32 version | u64 manifest_hash | u64 trained_steps |
//   u8 dtype (0=f32, 1=f64) | 7 config u32s | u32 n_tensors |
//   per tensor: u16 name_len, name, u32 rows, u32 cols, payload.
// Loading rejects a manifest-hash mismatch.

inline constexpr char kCheckpointMagic[8] = {'M', 'R', 'I', 'G', 'C', 'K', 'P', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void write_pod(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF);
  }
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  }
  return static_cast<T>(v);
}

inline void write_scalar_payload(std::ostream& os, const float* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &data[i], 4);
    write_pod(os, bits);
  }
}

inline void write_scalar_payload(std::ostream& os, const double* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &data[i], 8);
    write_pod(os, bits);
  }
}

inline void read_scalar_payload(std::istream& is, float* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = read_pod<std::uint32_t>(is);
    std::memcpy(&data[i], &bits, 4);
  }
}

inline void read_scalar_payload(std::istream& is, double* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t bits = read_pod<std::uint64_t>(is);
    std::memcpy(&data[i], &bits, 8);
  }
}

template <class S>
constexpr std::uint8_t dtype_code() {
  return sizeof(S) == 4 ? 0 : 1;
}

}  // namespace detail

struct CheckpointInfo {
  DenoiserConfig cfg;
  std::uint8_t dtype = 0;  // 0=f32, 1=f64
  std::uint64_t trained_steps = 0;
};

template <class S>
void save_checkpoint(const std::filesystem::path& path, const DenoiserParams<S>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint '" + path.string() + "' for writing");
  os.write(kCheckpointMagic, 8);
  detail::write_pod<std::uint32_t>(os, kCheckpointVersion);
  detail::write_pod<std::uint64_t>(os, params.cfg.manifest_hash());
  detail::write_pod<std::uint64_t>(os, params.trained_steps);
  detail::write_pod<std::uint8_t>(os, detail::dtype_code<S>());
  const DenoiserConfig& c = params.cfg;
  for (int v : {c.image_size, c.base_channels, c.text_dim, c.time_dim, c.attn_dim, c.gn_groups, c.vocab_size}) {
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(v));
  }
  std::uint32_t count = 0;
  params.for_each_tensor([&count](const std::string&, const Mat<S>&) { ++count; });
  detail::write_pod<std::uint32_t>(os, count);
  params.for_each_tensor([&os](const std::string& name, const Mat<S>& m) {
    detail::write_pod<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows()));
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols()));
    detail::write_scalar_payload(os, m.data(), static_cast<std::size_t>(m.size()));
  });
  if (!os) throw DataError("write failed for checkpoint '" + path.string() + "'");
}

namespace detail {

inline CheckpointInfo read_header(std::istream& is, const std::string& path) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw DataError("'" + path + "' is not a checkpoint file");
  }
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint '" + path + "': unsupported version " + std::to_string(version));
  }
  const auto stored_hash = read_pod<std::uint64_t>(is);
  CheckpointInfo info;
  info.trained_steps = read_pod<std::uint64_t>(is);
  info.dtype = read_pod<std::uint8_t>(is);
  std::uint32_t vals[7];
  for (auto& v : vals) v = read_pod<std::uint32_t>(is);
  info.cfg.image_size = static_cast<int>(vals[0]);
  info.cfg.base_channels = static_cast<int>(vals[1]);
  info.cfg.text_dim = static_cast<int>(vals[2]);
  info.cfg.time_dim = static_cast<int>(vals[3]);
  info.cfg.attn_dim = static_cast<int>(vals[4]);
  info.cfg.gn_groups = static_cast<int>(vals[5]);
  info.cfg.vocab_size = static_cast<int>(vals[6]);
  if (info.cfg.manifest_hash() != stored_hash) {
    throw DataError("checkpoint '" + path + "': manifest hash mismatch (architecture skew)");
  }
  return info;
}

}  // namespace detail

inline CheckpointInfo peek_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint '" + path.string() + "'");
  return detail::read_header(is, path.string());
}

template <class S>
DenoiserParams<S> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint '" + path.string() + "'");
  const CheckpointInfo info = detail::read_header(is, path.string());
  if (info.dtype != detail::dtype_code<S>()) {
    throw DataError("checkpoint '" + path.string() + "': stored dtype does not match requested scalar");
  }
  DenoiserParams<S> params = make_zero_params<S>(info.cfg);
  params.trained_steps = info.trained_steps;
  const auto n_tensors = detail::read_pod<std::uint32_t>(is);
  std::uint32_t seen = 0;
  params.for_each_tensor([&](const std::string& name, Mat<S>& m) {
    const auto name_len = detail::read_pod<std::uint16_t>(is);
    std::string stored(name_len, '\0');
    is.read(stored.data(), name_len);
    const auto rows = detail::read_pod<std::uint32_t>(is);
    const auto cols = detail::read_pod<std::uint32_t>(is);
    if (stored != name || rows != static_cast<std::uint32_t>(m.rows()) ||
        cols != static_cast<std::uint32_t>(m.cols())) {
      throw DataError("checkpoint '" + path.string() + "': tensor layout mismatch at '" + name + "'");
    }
    detail::read_scalar_payload(is, m.data(), static_cast<std::size_t>(m.size()));
    ++seen;
  });
  if (!is || seen != n_tensors) {
    throw DataError("checkpoint '" + path.string() + "': truncated or inconsistent tensor table");
  }
  if (!params.all_finite()) {
    throw DataError("checkpoint '" + path.string() + "': non-finite parameter values");
  }
  return params;
}

}  // namespace mrigen
