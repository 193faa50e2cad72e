#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "kvret/dialogue.hpp"
#include "kvret/kbstore.hpp"
#include "kvret/lexicon.hpp"
#include "kvret/vocabulary.hpp"

namespace kvret {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RecordError {
  std::size_t index = 0;
  std::string dialogue_id;
  std::string message;
};

/// Dialogue ids per split, as shipped with the released data.
struct SplitManifest {
  std::vector<std::string> train, dev, test;
};

struct LoadResult {
  std::vector<Dialogue> dialogues;
  std::vector<RecordError> errors;
  std::optional<SplitManifest> manifest;
  /// Entity values from an accompanying entities file, if any.
  std::vector<std::string> extra_entities;
};

/// Parses one JSON array of dialogue records. Invalid records are reported
/// in `errors` and skipped.
LoadResult parse_corpus(const nlohmann::json& records);

/// Loads a corpus file, or a directory holding either the released
/// `kvret_{train,dev,test}_public.json` files (which fix the split) or a
/// `corpus.json` with an optional `splits.json` manifest. A
/// `kvret_entities.json` / `entities.json` file next to them is read too.
LoadResult load_corpus(const std::filesystem::path& path);

struct EntityMatch {
  std::size_t begin = 0;
  std::size_t length = 0;
  std::string surface;
  std::string entity;
  std::string token;
  bool from_kb = false;
};

/// Replaces entity mentions with canonical tokens, longest span first. A
/// mention of a value held by a targetable triple of `store` becomes that
/// triple's canonical token; when several triples hold the value, the one
/// whose subject (then relation) tokens occur in `focus` wins, ties going to
/// the earliest triple. Other lexicon entities become Lexicon::entity_token.
std::vector<std::string> canonicalize(std::span<const std::string> tokens, const Lexicon& lexicon,
                                      const TripleStore& store, const std::set<std::string>& focus = {},
                                      std::vector<EntityMatch>* matches = nullptr);

/// Entities from every KB cell (subjects included), slot annotations, and
/// `extra` values.
Lexicon build_lexicon(std::span<const Dialogue> dialogues, std::span<const std::string> extra = {});

/// Base region: tokens seen at least `min_count` times plus every KB
/// subject/relation token; canonical region: canonical tokens of the
/// targetable triples in the dialogues' KBs, sorted. Expects canonicalized
/// dialogues.
Vocabulary build_vocabulary(std::span<const Dialogue> train, std::size_t min_count);

struct Splits {
  std::vector<Dialogue> train, validation, test;
  std::vector<std::string> warnings;
};

/// Per-domain stratified 0.8/0.1/0.1 partition, deterministic in `seed`.
Splits split(std::span<const Dialogue> dialogues, std::uint64_t seed);
Splits apply_manifest(std::span<const Dialogue> dialogues, const SplitManifest& manifest);

struct PrepareOptions {
  std::uint64_t seed = 1;
  std::size_t min_count = 1;
};

/// Canonicalized splits plus the lexicon and vocabulary built from them.
struct PreparedCorpus {
  Splits splits;
  Lexicon lexicon;
  Vocabulary vocabulary;
};

PreparedCorpus prepare(const LoadResult& loaded, const PrepareOptions& options);

/// Canonicalizes every turn of `d` in place; returns the entity matches.
std::vector<EntityMatch> canonicalize_dialogue(Dialogue& d, const Lexicon& lexicon);

nlohmann::json dialogue_to_json(const Dialogue& d);
Dialogue dialogue_from_json(const nlohmann::json& j);

/// Writes train/dev/test.json, vocab.json and lexicon.json under `dir`.
void save_prepared(const PreparedCorpus& corpus, const std::filesystem::path& dir);
PreparedCorpus load_prepared(const std::filesystem::path& dir);

}  // namespace kvret
