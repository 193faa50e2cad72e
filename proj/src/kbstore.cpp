#include "kvret/kbstore.hpp"

#include <algorithm>

#include <spdlog/spdlog.h>

#include "kvret/text.hpp"

namespace kvret {

TripleStore::TripleStore(std::vector<KbTriple> triples) : triples_(std::move(triples)) {
  for (std::size_t i = 0; i < triples_.size(); ++i) {
    index_[triples_[i].canonical_token].push_back(i);
    if (triples_[i].targetable) by_object_[triples_[i].object].push_back(i);
  }
}

std::span<const std::size_t> TripleStore::positions(const std::string& canonical_token) const {
  auto it = index_.find(canonical_token);
  if (it == index_.end()) return {};
  return it->second;
}

std::span<const std::size_t> TripleStore::positions_of_object(const std::string& object) const {
  auto it = by_object_.find(object);
  if (it == by_object_.end()) return {};
  return it->second;
}

std::string_view subject_column(Domain domain) {
  switch (domain) {
    case Domain::schedule: return "event";
    case Domain::weather: return "location";
    case Domain::navigate: return "poi";
  }
  return "";
}

bool is_untargeted_relation(std::string_view column) { return column == "today"; }

std::vector<std::string> relation_tokens(std::string_view column) {
  std::vector<std::string> out;
  for (const auto& piece : text::split(text::lowercase(column), "_ ")) out.push_back(piece);
  return out;
}

std::string normalize_value(std::string_view value) {
  auto tokens = text::tokenize(value);
  return text::join(tokens);
}

TripleStore normalize_kb(const RawKb& kb, std::string_view subject_col) {
  if (kb.rows.empty()) return {};
  const std::string subject_name(subject_col);
  if (std::find(kb.columns.begin(), kb.columns.end(), subject_name) == kb.columns.end()) {
    throw ConfigError("normalize_kb: subject column '" + subject_name + "' not among KB columns");
  }
  std::vector<KbTriple> triples;
  for (std::size_t r = 0; r < kb.rows.size(); ++r) {
    auto subject = text::tokenize(kb.cell(r, subject_name));
    for (const auto& col : kb.columns) {
      if (col == subject_name) continue;
      KbTriple t;
      t.subject = subject;
      t.relation = relation_tokens(col);
      t.object = normalize_value(kb.cell(r, col));
      if (t.object.empty()) t.object = std::string(RawKb::kMissing);
      std::vector<std::string> key = t.subject;
      key.insert(key.end(), t.relation.begin(), t.relation.end());
      t.canonical_token = text::join(key, "_");
      t.row = r;
      t.targetable = t.object != RawKb::kMissing && !is_untargeted_relation(col);
      triples.push_back(std::move(t));
    }
  }
  return TripleStore(std::move(triples));
}

std::vector<double> key_embedding(std::span<const std::size_t> key_ids, const Tensor& embeddings) {
  std::vector<double> out(embeddings.cols(), 0.0);
  for (auto id : key_ids) {
    if (id >= embeddings.rows()) throw DimensionError("key_embedding: id outside table " + embeddings.shape_string());
    auto row = embeddings.row(id);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += row[c];
  }
  return out;
}

Realization realize(const std::string& canonical_token, const TripleStore& store, const Lexicon& lexicon,
                    std::mt19937_64& rng, std::span<const double> triple_scores) {
  auto pos = store.positions(canonical_token);
  if (pos.empty()) {
    spdlog::debug("realize: '{}' does not resolve in this KB", canonical_token);
    return {canonical_token, false};
  }
  std::size_t best = pos.front();
  if (!triple_scores.empty()) {
    for (auto p : pos)
      if (p < triple_scores.size() && triple_scores[p] > triple_scores[best]) best = p;
  }
  const auto& object = store[best].object;
  return {lexicon.sample_surface(object, rng), true};
}

Realization realize(const std::string& canonical_token, const TripleStore& store, const Lexicon& lexicon,
                    std::uint64_t rng_seed, std::span<const double> triple_scores) {
  std::mt19937_64 rng(rng_seed);
  return realize(canonical_token, store, lexicon, rng, triple_scores);
}

}  // namespace kvret
