#pragma once

// Knowledge bases as (subject, relation, object) triples.
//
// Every non-subject cell of a KB row becomes one triple. The triple's key is
// its subject and relation tokens; its value is exposed to the decoder as a
// canonical token naming the key ("dinner_time"), resolved back to the cell
// through the store at realization time.

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "kvret/dialogue.hpp"
#include "kvret/lexicon.hpp"
#include "kvret/tensor.hpp"

namespace kvret {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct KbTriple {
  std::vector<std::string> subject;
  std::vector<std::string> relation;
  /// Normalized cell text; "-" marks a missing value.
  std::string object;
  std::string canonical_token;
  std::size_t row = 0;
  /// False for missing values and for relations excluded from generation.
  bool targetable = true;
};

class TripleStore {
 public:
  static constexpr std::size_t kMaxTriples = 230;

  TripleStore() = default;
  explicit TripleStore(std::vector<KbTriple> triples);

  const std::vector<KbTriple>& triples() const { return triples_; }
  const KbTriple& operator[](std::size_t i) const { return triples_[i]; }
  std::size_t size() const { return triples_.size(); }
  bool empty() const { return triples_.empty(); }

  bool contains(const std::string& canonical_token) const { return index_.count(canonical_token) > 0; }
  /// Positions of every triple carrying `canonical_token`, in row-major order.
  std::span<const std::size_t> positions(const std::string& canonical_token) const;
  /// Positions of targetable triples whose object equals `object`.
  std::span<const std::size_t> positions_of_object(const std::string& object) const;

 private:
  std::vector<KbTriple> triples_;
  std::map<std::string, std::vector<std::size_t>> index_;
  std::map<std::string, std::vector<std::size_t>> by_object_;
};

/// KB column holding the row subject for each domain.
std::string_view subject_column(Domain domain);
/// Relations kept as triples but never used as generation targets.
bool is_untargeted_relation(std::string_view column);

/// Subject/relation/object normalization; tokens follow text::tokenize, and
/// column names split on '_'.
std::vector<std::string> relation_tokens(std::string_view column);
std::string normalize_value(std::string_view value);

/// One triple per (row, non-subject column), row-major.
TripleStore normalize_kb(const RawKb& kb, std::string_view subject_column);
inline TripleStore normalize_kb(const RawKb& kb, Domain domain) { return normalize_kb(kb, subject_column(domain)); }

/// Σ embeddings[subject ids] + Σ embeddings[relation ids].
std::vector<double> key_embedding(std::span<const std::size_t> key_ids, const Tensor& embeddings);

struct Realization {
  std::string surface;
  bool resolved = false;
};

/// Surface form of a canonical KB token: the object of its triple rendered
/// through the lexicon's surface-form distribution. When several triples
/// share the token, `triple_scores` (indexed like the store) selects the
/// highest-scoring one; without scores the first is used. Unknown tokens
/// come back verbatim with resolved = false.
Realization realize(const std::string& canonical_token, const TripleStore& store, const Lexicon& lexicon,
                    std::mt19937_64& rng, std::span<const double> triple_scores = {});
Realization realize(const std::string& canonical_token, const TripleStore& store, const Lexicon& lexicon,
                    std::uint64_t rng_seed, std::span<const double> triple_scores = {});

}  // namespace kvret
