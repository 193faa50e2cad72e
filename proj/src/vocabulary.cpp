#include "kvret/vocabulary.hpp"

#include "kvret/errors.hpp"

namespace kvret {

Vocabulary::Vocabulary() : Vocabulary({}, {}) {}

Vocabulary::Vocabulary(std::vector<std::string> base, std::vector<std::string> canonical) {
  auto push = [this](const std::string& t) {
    if (!index_.emplace(t, tokens_.size()).second) throw DataError("vocabulary: duplicate token '" + t + "'");
    tokens_.push_back(t);
  };
  for (const char* s : kSpecials) push(s);
  for (const auto& t : base) push(t);
  base_size_ = tokens_.size();
  for (const auto& t : canonical) push(t);
}

std::optional<TokenId> Vocabulary::find(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::encode(const std::string& token) const { return find(token).value_or(kUnk); }

std::vector<TokenId> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(encode(t));
  return ids;
}

bool Vocabulary::is_canonical(const std::string& token) const {
  auto id = find(token);
  return id && is_canonical(*id);
}

nlohmann::json Vocabulary::to_json() const {
  std::vector<std::string> base(tokens_.begin() + std::size(kSpecials), tokens_.begin() + base_size_);
  std::vector<std::string> canonical(tokens_.begin() + base_size_, tokens_.end());
  return {{"base", base}, {"canonical", canonical}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  return Vocabulary(j.at("base").get<std::vector<std::string>>(), j.at("canonical").get<std::vector<std::string>>());
}

}  // namespace kvret
