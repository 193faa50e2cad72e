#include "kvret/lexicon.hpp"

#include <algorithm>
#include <regex>

#include "kvret/text.hpp"

namespace kvret {

namespace {

std::size_t token_count(const std::string& s) { return text::split(s, " ").size(); }

}  // namespace

std::vector<std::string> surface_variants(const std::string& entity) {
  static const std::regex glued_time(R"(^(\d{1,2}(?::\d{2})?)(am|pm)$)");
  static const std::regex spaced_time(R"(^(\d{1,2}(?::\d{2})?) (am|pm)$)");
  static const std::regex ordinal_date(R"(^the (\d{1,2}(?:st|nd|rd|th))$)");
  std::vector<std::string> out;
  std::smatch m;
  if (std::regex_match(entity, m, glued_time)) out.push_back(m[1].str() + " " + m[2].str());
  if (std::regex_match(entity, m, spaced_time)) out.push_back(m[1].str() + m[2].str());
  if (std::regex_match(entity, m, ordinal_date)) out.push_back(m[1].str());
  return out;
}

std::string Lexicon::entity_token(const std::string& entity) {
  std::string t = entity;
  std::replace(t.begin(), t.end(), ' ', '_');
  return t;
}

void Lexicon::index_surface(const std::string& surface, const std::string& entity) {
  if (surface.empty()) return;
  if (surface_to_entity_.emplace(surface, entity).second) {
    max_surface_tokens_ = std::max(max_surface_tokens_, token_count(surface));
  }
}

void Lexicon::add_entity(const std::string& entity) {
  if (entity.empty() || entity == "-") return;
  if (counts_.count(entity)) return;
  counts_[entity];
  entity_tokens_.emplace(entity_token(entity), entity);
  index_surface(entity, entity);
  for (const auto& v : surface_variants(entity)) index_surface(v, entity);
}

void Lexicon::add_surface(const std::string& surface, const std::string& entity) {
  add_entity(entity);
  index_surface(surface, entity);
}

void Lexicon::observe(const std::string& entity, const std::string& surface) {
  add_entity(entity);
  ++counts_[entity][surface];
}

void Lexicon::finalize_counts() {
  for (auto& [entity, surfaces] : counts_)
    if (surfaces.empty()) surfaces[entity] = 1;
}

const std::string* Lexicon::entity_for(const std::string& surface) const {
  auto it = surface_to_entity_.find(surface);
  return it == surface_to_entity_.end() ? nullptr : &it->second;
}

const std::map<std::string, std::size_t>& Lexicon::surface_counts(const std::string& entity) const {
  static const std::map<std::string, std::size_t> none;
  auto it = counts_.find(entity);
  return it == counts_.end() ? none : it->second;
}

std::optional<std::string> Lexicon::entity_of_token(const std::string& token) const {
  auto it = entity_tokens_.find(token);
  if (it == entity_tokens_.end()) return std::nullopt;
  return it->second;
}

std::string Lexicon::sample_surface(const std::string& entity, std::mt19937_64& rng) const {
  const auto& counts = surface_counts(entity);
  std::size_t total = 0;
  for (const auto& [s, c] : counts) total += c;
  if (total == 0) return entity;
  // Inverse-CDF draw over the ordered surface map.
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  std::size_t r = pick(rng);
  for (const auto& [s, c] : counts) {
    if (r < c) return s;
    r -= c;
  }
  return entity;
}

nlohmann::json Lexicon::to_json() const {
  nlohmann::json entities = nlohmann::json::object();
  for (const auto& [e, surfaces] : counts_) entities[e] = surfaces;
  return {{"entities", entities}, {"surfaces", surface_to_entity_}};
}

Lexicon Lexicon::from_json(const nlohmann::json& j) {
  Lexicon lex;
  for (auto it = j.at("entities").begin(); it != j.at("entities").end(); ++it) {
    lex.add_entity(it.key());
    for (auto s = it.value().begin(); s != it.value().end(); ++s) {
      lex.counts_[it.key()][s.key()] = s.value().get<std::size_t>();
    }
  }
  if (j.contains("surfaces")) {
    lex.surface_to_entity_.clear();
    lex.max_surface_tokens_ = 0;
    for (auto it = j["surfaces"].begin(); it != j["surfaces"].end(); ++it) {
      lex.index_surface(it.key(), it.value().get<std::string>());
    }
  }
  return lex;
}

}  // namespace kvret
