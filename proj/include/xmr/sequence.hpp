#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "xmr/error.hpp"

namespace xmr {

using TokenId = std::uint32_t;
using Language = std::string;

/// Reserved vocabulary ids. Text tokens start at kFirstTextToken.
namespace special {
inline constexpr TokenId kCls = 0;
inline constexpr TokenId kQuery = 1;
inline constexpr TokenId kPassage = 2;
inline constexpr TokenId kMask = 3;
}  // namespace special

inline constexpr TokenId kFirstTextToken = 4;

inline constexpr std::size_t kDefaultQueryLength = 32;
inline constexpr std::size_t kDefaultPassageLength = 256;

enum class SequenceKind { Query, Passage };

struct PreparedSequence {
  std::vector<TokenId> token_ids;
  SequenceKind kind = SequenceKind::Passage;
  Language language;

  std::size_t length() const noexcept { return token_ids.size(); }

  friend bool operator==(const PreparedSequence&, const PreparedSequence&) = default;
};

/// [CLS] [Q] t1 .. tk [M] .. [M], exactly `n` positions. Text beyond n-2
/// tokens is dropped from the end.
inline PreparedSequence prepare_query(const std::vector<TokenId>& tokens, std::size_t n,
                                      Language lang) {
  require(n >= 3, ErrorCode::InvalidConfig,
          "query length must be >= 3, got " + std::to_string(n));
  PreparedSequence seq{{}, SequenceKind::Query, std::move(lang)};
  seq.token_ids.reserve(n);
  seq.token_ids.push_back(special::kCls);
  seq.token_ids.push_back(special::kQuery);
  for (std::size_t i = 0; i < tokens.size() && seq.token_ids.size() < n; ++i) {
    seq.token_ids.push_back(tokens[i]);
  }
  seq.token_ids.resize(n, special::kMask);
  return seq;
}

/// [CLS] [P] t1 .. tj with at most `m` positions and no padding.
inline PreparedSequence prepare_passage(const std::vector<TokenId>& tokens, std::size_t m,
                                        Language lang = {}) {
  require(m >= 3, ErrorCode::InvalidConfig,
          "passage length must be >= 3, got " + std::to_string(m));
  PreparedSequence seq{{}, SequenceKind::Passage, std::move(lang)};
  const std::size_t kept = std::min(tokens.size(), m - 2);
  seq.token_ids.reserve(kept + 2);
  seq.token_ids.push_back(special::kCls);
  seq.token_ids.push_back(special::kPassage);
  seq.token_ids.insert(seq.token_ids.end(), tokens.begin(), tokens.begin() + kept);
  return seq;
}

inline void check_vocabulary(const PreparedSequence& seq, std::size_t vocab_size) {
  for (TokenId id : seq.token_ids) {
    require(id < vocab_size, ErrorCode::OutOfRange,
            "token id " + std::to_string(id) + " outside vocabulary of size " +
                std::to_string(vocab_size));
  }
}

/// Lowercases, splits on non-alphanumerics and hashes each piece (FNV-1a)
/// into the text range of the vocabulary.
class HashTokenizer {
 public:
  explicit HashTokenizer(std::size_t vocab_size) : vocab_size_(vocab_size) {
    require(vocab_size > kFirstTextToken, ErrorCode::InvalidConfig,
            "vocabulary must have room for text tokens");
  }

  std::vector<TokenId> operator()(std::string_view text) const {
    std::vector<TokenId> out;
    std::string piece;
    auto flush = [&] {
      if (!piece.empty()) {
        out.push_back(to_id(piece));
        piece.clear();
      }
    };
    for (char c : text) {
      const auto uc = static_cast<unsigned char>(c);
      if (std::isalnum(uc) || uc >= 0x80) {
        piece.push_back(static_cast<char>(std::tolower(uc)));
      } else {
        flush();
      }
    }
    flush();
    return out;
  }

  TokenId to_id(std::string_view piece) const {
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : piece) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    return kFirstTextToken + static_cast<TokenId>(h % (vocab_size_ - kFirstTextToken));
  }

  std::size_t vocab_size() const noexcept { return vocab_size_; }

 private:
  std::size_t vocab_size_;
};

}  // namespace xmr
