#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace pft {

// The fixed 256-word vocabulary shipped with the artifact. Class names and
// prompt templates are built from these words so tokenization is identical
// on every machine.
std::span<const std::string_view> vocab_words();

inline constexpr std::string_view kPromptTemplate = "a photo of a";

// Whitespace word-level tokenizer over the fixed vocabulary, with BOS/EOS
// sentinels and padding to a fixed context length. Unknown words map to UNK.
class Tokenizer {
 public:
  static constexpr std::int64_t kPad = 0;
  static constexpr std::int64_t kBos = 1;
  static constexpr std::int64_t kEos = 2;
  static constexpr std::int64_t kUnk = 3;
  static constexpr std::int64_t kFirstWord = 4;

  explicit Tokenizer(std::int64_t context_length);

  // [BOS, word ids..., EOS, PAD...] of exactly context_length entries.
  std::vector<std::int64_t> encode(std::string_view text) const;

  // Word ids only, no sentinels, no padding.
  std::vector<std::int64_t> word_ids(std::string_view text) const;

  std::int64_t context_length() const { return context_length_; }
  std::int64_t vocab_size() const;

  static std::int64_t eos_position(const std::vector<std::int64_t>& ids);

 private:
  std::int64_t context_length_;
};

}  // namespace pft
