#include "mrigen/prompt.hpp"

#include <charconv>
#include <sstream>

namespace mrigen {

namespace {

std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ') ++j;
    if (j > i) words.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return words;
}

int parse_slice_number(const std::string& tok) {
  int value = 0;
  const auto* first = tok.data();
  const auto* last = tok.data() + tok.size();
  const auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc() || res.ptr != last) {
    throw DataError("prompt parse error: expected slice number, got '" + tok + "'");
  }
  if (value < 1 || value > kMaxSliceIndex) {
    throw DataError("prompt parse error: slice index out of range: '" + tok + "'");
  }
  return value;
}

}  // namespace

const std::vector<std::string>& registered_identifiers() {
  static const std::vector<std::string> ids = {"sks0", "sks1", "sks2", "sks3"};
  return ids;
}

bool is_registered_identifier(std::string_view token) {
  for (const auto& id : registered_identifiers()) {
    if (id == token) return true;
  }
  return false;
}

std::string build_prompt(const SliceMeta& meta, const std::optional<std::string>& identifier) {
  validate(meta);
  std::ostringstream os;
  if (identifier) {
    if (!is_registered_identifier(*identifier)) {
      throw DataError("unregistered identifier '" + *identifier + "'");
    }
    os << *identifier << ' ';
  }
  os << to_string(meta.field) << " brain MRI, slice " << meta.slice_index << ", "
     << to_string(meta.modality) << " contrast";
  return os.str();
}

ParsedPrompt parse_prompt(std::string_view text) {
  // Segments: "[id] <field> brain MRI" / "slice <n>" / "<modality> contrast"
  std::vector<std::string> segments;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(", ", start);
    if (pos == std::string_view::npos) {
      segments.emplace_back(text.substr(start));
      break;
    }
    segments.emplace_back(text.substr(start, pos - start));
    start = pos + 2;
  }
  if (segments.size() != 3) {
    throw DataError("prompt parse error: expected 3 comma-separated segments, got " +
                    std::to_string(segments.size()));
  }

  ParsedPrompt out;
  auto head = split_words(segments[0]);
  if (head.size() == 4) {
    if (!is_registered_identifier(head[0])) {
      throw DataError("prompt parse error: unknown identifier '" + head[0] + "'");
    }
    out.identifier = head[0];
    head.erase(head.begin());
  }
  if (head.size() != 3) {
    throw DataError("prompt parse error: malformed prompt head '" + segments[0] + "'");
  }
  out.meta.field = field_from_string(head[0]);
  if (head[1] != "brain") throw DataError("prompt parse error: unexpected token '" + head[1] + "'");
  if (head[2] != "MRI") throw DataError("prompt parse error: unexpected token '" + head[2] + "'");

  const auto mid = split_words(segments[1]);
  if (mid.size() != 2 || mid[0] != "slice") {
    throw DataError("prompt parse error: expected 'slice <n>', got '" + segments[1] + "'");
  }
  out.meta.slice_index = parse_slice_number(mid[1]);

  const auto tail = split_words(segments[2]);
  if (tail.size() != 2 || tail[1] != "contrast") {
    throw DataError("prompt parse error: expected '<modality> contrast', got '" + segments[2] + "'");
  }
  out.meta.modality = modality_from_string(tail[0]);
  return out;
}

}  // namespace mrigen
