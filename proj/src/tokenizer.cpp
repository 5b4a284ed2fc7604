#include "pft/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <unordered_map>

#include "pft/errors.hpp"

namespace pft {

namespace {

const std::unordered_map<std::string_view, int64_t>& word_index() {
  static const auto table = [] {
    std::unordered_map<std::string_view, int64_t> t;
    auto words = vocab_words();
    for (size_t i = 0; i < words.size(); ++i) {
      t.emplace(words[i], static_cast<int64_t>(i) + Tokenizer::kFirstWord);
    }
    return t;
  }();
  return table;
}

std::vector<std::string> split_lower(std::string_view text) {
  std::string lowered(text);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::istringstream in(lowered);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

}  // namespace

Tokenizer::Tokenizer(int64_t context_length) : context_length_(context_length) {
  if (context_length < 3) {
    throw config_error("context_length must be at least 3, got " +
                       std::to_string(context_length));
  }
}

int64_t Tokenizer::vocab_size() const {
  return static_cast<int64_t>(vocab_words().size()) + kFirstWord;
}

std::vector<int64_t> Tokenizer::word_ids(std::string_view text) const {
  auto words = split_lower(text);
  if (words.empty()) {
    throw data_error("cannot tokenize empty text");
  }
  std::vector<int64_t> ids;
  ids.reserve(words.size());
  const auto& table = word_index();
  for (const auto& w : words) {
    auto it = table.find(w);
    ids.push_back(it == table.end() ? kUnk : it->second);
  }
  return ids;
}

std::vector<int64_t> Tokenizer::encode(std::string_view text) const {
  auto words = word_ids(text);
  int64_t needed = static_cast<int64_t>(words.size()) + 2;
  if (needed > context_length_) {
    throw length_error("text needs " + std::to_string(needed) +
                       " token slots but context_length is " +
                       std::to_string(context_length_));
  }
  std::vector<int64_t> ids(static_cast<size_t>(context_length_), kPad);
  ids[0] = kBos;
  std::copy(words.begin(), words.end(), ids.begin() + 1);
  ids[words.size() + 1] = kEos;
  return ids;
}

int64_t Tokenizer::eos_position(const std::vector<int64_t>& ids) {
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == kEos) return static_cast<int64_t>(i);
  }
  throw data_error("token sequence has no EOS");
}

}  // namespace pft
