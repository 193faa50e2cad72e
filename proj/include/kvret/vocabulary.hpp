#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace kvret {

using TokenId = std::size_t;

/// Output space of the decoder: a base region (special tokens first) followed
/// by the canonical KB tokens, ids base_size() … size()-1.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr const char* kSpecials[] = {"<pad>", "<s>", "</s>", "<unk>"};

  Vocabulary();
  /// `base` excludes the special tokens, which are always prepended.
  Vocabulary(std::vector<std::string> base, std::vector<std::string> canonical);

  std::size_t size() const { return tokens_.size(); }
  std::size_t base_size() const { return base_size_; }
  std::size_t kb_size() const { return tokens_.size() - base_size_; }

  std::optional<TokenId> find(const std::string& token) const;
  /// Id of `token`, or kUnk.
  TokenId encode(const std::string& token) const;
  std::vector<TokenId> encode(std::span<const std::string> tokens) const;
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  bool is_canonical(TokenId id) const { return id >= base_size_ && id < tokens_.size(); }
  bool is_canonical(const std::string& token) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_ && a.base_size_ == b.base_size_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::size_t base_size_ = 0;
};

}  // namespace kvret
