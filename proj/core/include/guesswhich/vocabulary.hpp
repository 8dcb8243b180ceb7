#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace gw {

using TokenId = std::size_t;

inline constexpr std::string_view kPad = "<pad>";
inline constexpr std::string_view kStart = "<start>";
inline constexpr std::string_view kEnd = "<end>";
inline constexpr std::string_view kUnk = "<unk>";

/// Bidirectional token table. The four specials always occupy ids 0..3.
class Vocabulary {
 public:
  static constexpr TokenId pad = 0;
  static constexpr TokenId start = 1;
  static constexpr TokenId end = 2;
  static constexpr TokenId unk = 3;

  Vocabulary();
  /// Builds from a full token list; throws on duplicates or misplaced specials.
  explicit Vocabulary(std::vector<std::string> tokens);

  /// Appends `token` unless present; returns its id.
  TokenId add(const std::string& token);
  bool contains(std::string_view token) const;
  /// Unknown tokens map to <unk>.
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<TokenId> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<TokenId>& ids) const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Lowercases and splits on whitespace.
std::vector<std::string> tokenize(std::string_view text);
std::string join_tokens(const std::vector<std::string>& tokens);

}  // namespace gw
