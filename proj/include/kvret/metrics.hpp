#pragma once

// Response-level evaluation: averaged sentence BLEU-4 and micro-averaged
// entity F1 over canonicalized responses.

#include <array>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kvret/dialogue.hpp"
#include "kvret/kbstore.hpp"
#include "kvret/lexicon.hpp"
#include "kvret/vocabulary.hpp"

namespace kvret {

struct EvalPair {
  std::vector<std::string> gold;
  std::vector<std::string> predicted;
  Domain domain = Domain::schedule;
  std::set<std::string> gold_entities;
  std::set<std::string> predicted_entities;
};

/// Decides which tokens count as entities: canonical KB tokens (from the
/// vocabulary or the dialogue's store) and global lexicon entity tokens.
class EntityDetector {
 public:
  EntityDetector(const Vocabulary* vocab, const Lexicon* lexicon) : vocab_(vocab), lexicon_(lexicon) {}

  bool is_entity(const std::string& token, const TripleStore* store = nullptr) const;
  std::set<std::string> entities(std::span<const std::string> tokens, const TripleStore* store = nullptr) const;

 private:
  const Vocabulary* vocab_;
  const Lexicon* lexicon_;
};

EvalPair make_eval_pair(std::vector<std::string> gold, std::vector<std::string> predicted, Domain domain,
                        const EntityDetector& detector, const TripleStore* store = nullptr);

struct BleuOptions {
  std::size_t max_order = 4;
  /// Stand-in for a zero modified-precision count.
  double epsilon = 1e-9;
};

/// Sentence BLEU in [0, 1]. Orders longer than the prediction are left out of
/// the geometric mean; no unigram match or an empty prediction scores 0.
double sentence_bleu(std::span<const std::string> reference, std::span<const std::string> hypothesis,
                     const BleuOptions& options = {});
/// Mean sentence BLEU over responses, scaled to [0, 100].
double bleu(std::span<const EvalPair> pairs, const BleuOptions& options = {});
/// Corpus-level BLEU (pooled n-gram counts, one brevity penalty), in [0, 100].
double corpus_bleu(std::span<const EvalPair> pairs, const BleuOptions& options = {});

struct F1Score {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t true_positives = 0, false_positives = 0, false_negatives = 0;
  /// Set when no considered response has a gold entity.
  bool no_gold_entities = false;
};

/// Micro-averaged over responses with per-response set semantics.
F1Score entity_f1(std::span<const EvalPair> pairs, std::optional<Domain> domain = std::nullopt);

struct Scores {
  double bleu = 0.0;
  F1Score entity;
  std::array<F1Score, 3> per_domain;

  /// {bleu, entity_f1, scheduling_f1, weather_f1, navigation_f1}.
  nlohmann::json to_json() const;
};

Scores score(std::span<const EvalPair> pairs, const BleuOptions& options = {});

}  // namespace kvret
