#pragma once

// Templated retrieval dialogues in the released corpus format.
//
// Every dialogue carries a one-row KB (an appointment or a point of
// interest) drawn from a pool of subjects. Driver questions never name the
// subject, so the answer values can only be recovered through the KB.

#include <cstdint>

#include <json.hpp>

#include "kvret/corpus.hpp"

namespace kvret {

struct SyntheticOptions {
  std::size_t dialogues = 500;
  std::size_t train = 400;
  std::size_t validation = 50;
  std::uint64_t seed = 1;
};

/// Corpus records; ids are "synthetic-<n>".
nlohmann::json synthetic_records(const SyntheticOptions& options);

/// Parsed records with a split manifest: the first `train` dialogues, then
/// `validation`, then the rest as test.
LoadResult synthetic_corpus(const SyntheticOptions& options);

}  // namespace kvret
