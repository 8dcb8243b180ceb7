#include "guesswhich/vocabulary.hpp"

#include <cctype>
#include <sstream>
#include <stdexcept>

namespace gw {

Vocabulary::Vocabulary() {
  for (auto t : {kPad, kStart, kEnd, kUnk}) add(std::string(t));
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
  if (tokens.size() < 4 || tokens[pad] != kPad || tokens[start] != kStart || tokens[end] != kEnd ||
      tokens[unk] != kUnk) {
    throw std::invalid_argument("vocabulary must begin with <pad> <start> <end> <unk>");
  }
  for (auto& t : tokens) {
    if (index_.contains(t)) throw std::invalid_argument("duplicate vocabulary token '" + t + "'");
    index_.emplace(t, tokens_.size());
    tokens_.push_back(std::move(t));
  }
}

TokenId Vocabulary::add(const std::string& token) {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  index_.emplace(token, tokens_.size());
  tokens_.push_back(token);
  return tokens_.size() - 1;
}

bool Vocabulary::contains(std::string_view token) const { return index_.contains(std::string(token)); }

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? unk : it->second;
}

std::vector<TokenId> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<TokenId> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocabulary::decode(const std::vector<TokenId>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto i : ids) out.push_back(token(i));
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::ostringstream os;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) os << ' ';
    os << tokens[i];
  }
  return os.str();
}

}  // namespace gw
