#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace kvret {

/// Maps entity surface forms to canonical entities, and canonical entities
/// back to their observed surface forms with frequency counts.
///
/// Entities and surface forms are stored as normalized text: tokenized and
/// joined with single spaces ("the 13th", "20 main street").
class Lexicon {
 public:
  /// Registers an entity and its own text as a surface form, together with
  /// rule-based variants ("5pm" <-> "5 pm", "the 13th" -> "13th").
  void add_entity(const std::string& entity);
  /// Maps an extra surface form to an existing entity. Earlier mappings win.
  void add_surface(const std::string& surface, const std::string& entity);
  /// Counts one occurrence of `surface` realizing `entity`.
  void observe(const std::string& entity, const std::string& surface);
  /// Gives every entity without observations a count of 1 on its own text.
  void finalize_counts();

  const std::string* entity_for(const std::string& surface) const;
  bool has_entity(const std::string& entity) const { return counts_.count(entity) > 0; }
  std::size_t entity_count() const { return counts_.size(); }
  std::size_t max_surface_tokens() const { return max_surface_tokens_; }
  const std::map<std::string, std::size_t>& surface_counts(const std::string& entity) const;

  /// Vocabulary symbol for an entity outside any KB: spaces become '_'.
  static std::string entity_token(const std::string& entity);
  /// True when `token` is the entity_token of a registered entity.
  bool is_entity_token(const std::string& token) const { return entity_tokens_.count(token) > 0; }
  /// Inverse of entity_token for registered entities.
  std::optional<std::string> entity_of_token(const std::string& token) const;

  /// Draws a surface form with probability proportional to its count. Falls
  /// back to the entity text when nothing was counted.
  std::string sample_surface(const std::string& entity, std::mt19937_64& rng) const;

  nlohmann::json to_json() const;
  static Lexicon from_json(const nlohmann::json& j);

 private:
  void index_surface(const std::string& surface, const std::string& entity);

  std::map<std::string, std::string> surface_to_entity_;
  std::map<std::string, std::map<std::string, std::size_t>> counts_;
  std::map<std::string, std::string> entity_tokens_;
  std::size_t max_surface_tokens_ = 0;
};

/// Rule-based surface variants of an entity's text, excluding the text itself.
std::vector<std::string> surface_variants(const std::string& entity);

}  // namespace kvret
