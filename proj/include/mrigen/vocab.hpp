#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "mrigen/core.hpp"

namespace mrigen {

inline constexpr int kTokenSeqLen = 8;
inline constexpr int kPadToken = 0;
inline constexpr int kNullToken = 1;

/// Closed vocabulary with stable ids:
/// <pad>, <null>, 0.3T, 3T, brain, MRI, slice, contrast, T1, T2, FLAIR,
/// 1..18, sks0..sks3.
class Vocabulary {
 public:
  static const Vocabulary& instance();

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  /// -1 when unknown.
  int id(std::string_view token) const;

 private:
  Vocabulary();
  std::vector<std::string> tokens_;
};

struct TokenSeq {
  std::array<int, kTokenSeqLen> ids{};

  bool operator==(const TokenSeq&) const = default;
};

/// Commas stripped, whitespace split, right-padded with <pad>. The empty
/// prompt maps to the unconditional sequence [<null>, <pad>...].
TokenSeq tokenize(std::string_view prompt);

TokenSeq null_tokens();

}  // namespace mrigen
