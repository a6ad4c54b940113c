#pragma once

#include <algorithm>
#include <cctype>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hlpd/error.hpp"

namespace hlpd {

using Token = int;

// Byte-level vocabulary: 256 byte values followed by three specials.
inline constexpr Token kBos = 256;
inline constexpr Token kEos = 257;
inline constexpr Token kPad = 258;
inline constexpr int kVocabSize = 259;

inline constexpr bool is_byte_token(Token t) noexcept { return t >= 0 && t < 256; }

// Token stream that always starts with BOS.
class Sequence {
 public:
  Sequence() : tokens_{kBos} {}

  explicit Sequence(std::vector<Token> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.empty() || tokens_.front() != kBos) {
      throw InvalidSequence("sequence must start with BOS");
    }
    for (Token t : tokens_) {
      if (t < 0 || t >= kVocabSize) throw InvalidSequence("token id out of range");
    }
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  Token operator[](std::size_t i) const { return tokens_[i]; }
  std::span<const Token> tokens() const noexcept { return tokens_; }
  const std::vector<Token>& vec() const noexcept { return tokens_; }

  void push_back(Token t) {
    if (t < 0 || t >= kVocabSize) throw InvalidSequence("token id out of range");
    tokens_.push_back(t);
  }

  // First `n` tokens (BOS included).
  Sequence prefix(std::size_t n) const {
    n = std::clamp<std::size_t>(n, 1, tokens_.size());
    return Sequence(std::vector<Token>(tokens_.begin(), tokens_.begin() + static_cast<long>(n)));
  }

  friend bool operator==(const Sequence&, const Sequence&) = default;

 private:
  std::vector<Token> tokens_;
};

inline Sequence tokenize(std::string_view text) {
  const bool blank = std::all_of(text.begin(), text.end(),
                                 [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
  if (blank) throw EmptyText("text is empty after trimming");
  std::vector<Token> tokens;
  tokens.reserve(text.size() + 1);
  tokens.push_back(kBos);
  for (char c : text) tokens.push_back(static_cast<unsigned char>(c));
  return Sequence(std::move(tokens));
}

// Specials are dropped; byte tokens map back one-to-one.
inline std::string detokenize(const Sequence& seq) {
  std::string out;
  out.reserve(seq.size());
  for (Token t : seq.tokens()) {
    if (is_byte_token(t)) out.push_back(static_cast<char>(t));
  }
  return out;
}

// Truncates to at most `context` tokens.
inline Sequence clip_to_context(const Sequence& seq, std::size_t context) {
  return seq.size() <= context ? seq : seq.prefix(context);
}

}  // namespace hlpd
