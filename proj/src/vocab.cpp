#include "mrigen/vocab.hpp"

#include <unordered_map>

#include "mrigen/prompt.hpp"

namespace mrigen {

namespace {

std::unordered_map<std::string, int>& index_map() {
  static std::unordered_map<std::string, int> map = [] {
    std::unordered_map<std::string, int> m;
    const auto& v = Vocabulary::instance();
    for (int i = 0; i < v.size(); ++i) m[v.token(i)] = i;
    return m;
  }();
  return map;
}

}  // namespace

Vocabulary::Vocabulary() {
  tokens_ = {"<pad>", "<null>", "0.3T", "3T", "brain", "MRI", "slice", "contrast", "T1", "T2", "FLAIR"};
  for (int s = 1; s <= kMaxSliceIndex; ++s) tokens_.push_back(std::to_string(s));
  for (const auto& id : registered_identifiers()) tokens_.push_back(id);
}

const Vocabulary& Vocabulary::instance() {
  static const Vocabulary vocab;
  return vocab;
}

int Vocabulary::id(std::string_view token) const {
  const auto& map = index_map();
  const auto it = map.find(std::string(token));
  return it == map.end() ? -1 : it->second;
}

TokenSeq null_tokens() {
  TokenSeq seq;
  seq.ids.fill(kPadToken);
  seq.ids[0] = kNullToken;
  return seq;
}

TokenSeq tokenize(std::string_view prompt) {
  std::string cleaned;
  cleaned.reserve(prompt.size());
  for (char c : prompt) {
    if (c != ',') cleaned.push_back(c);
  }

  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < cleaned.size()) {
    while (i < cleaned.size() && std::isspace(static_cast<unsigned char>(cleaned[i]))) ++i;
    std::size_t j = i;
    while (j < cleaned.size() && !std::isspace(static_cast<unsigned char>(cleaned[j]))) ++j;
    if (j > i) words.push_back(cleaned.substr(i, j - i));
    i = j;
  }

  if (words.empty()) return null_tokens();
  if (words.size() > kTokenSeqLen) {
    throw DataError("prompt has " + std::to_string(words.size()) + " tokens, limit is " +
                    std::to_string(kTokenSeqLen));
  }

  const auto& vocab = Vocabulary::instance();
  TokenSeq seq;
  seq.ids.fill(kPadToken);
  for (std::size_t w = 0; w < words.size(); ++w) {
    const int id = vocab.id(words[w]);
    if (id < 0) throw DataError("unknown token '" + words[w] + "'");
    seq.ids[w] = id;
  }
  return seq;
}

}  // namespace mrigen
