#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mrigen/core.hpp"

namespace mrigen {

/// Rare tokens usable as DreamBooth-style identifiers.
const std::vector<std::string>& registered_identifiers();  // sks0..sks3
bool is_registered_identifier(std::string_view token);

/// "<field> brain MRI, slice <n>, <modality> contrast", optionally prefixed
/// by a registered identifier.
std::string build_prompt(const SliceMeta& meta,
                         const std::optional<std::string>& identifier = std::nullopt);

struct ParsedPrompt {
  SliceMeta meta;  // subject_id left empty
  std::optional<std::string> identifier;
};

/// Exact inverse of build_prompt on its image; malformed input throws
/// DataError naming the offending token.
ParsedPrompt parse_prompt(std::string_view text);

}  // namespace mrigen
