#pragma once

#include <filesystem>
#include <string>

#include <unistd.h>

#include "kvret/corpus.hpp"
#include "kvret/network.hpp"
#include "kvret/trainer.hpp"

namespace fixtures {

inline std::filesystem::path data(const std::string& name) { return std::filesystem::path(KVRET_TEST_DATA) / name; }

/// Loads a fixture corpus with every dialogue in the training split.
inline kvret::PreparedCorpus all_train(const std::string& name) {
  auto loaded = kvret::load_corpus(data(name));
  kvret::SplitManifest manifest;
  for (const auto& d : loaded.dialogues) manifest.train.push_back(d.id);
  loaded.manifest = manifest;
  return kvret::prepare(loaded, {});
}

/// Owns a prepared corpus and the examples built from it.
struct Toy {
  kvret::PreparedCorpus corpus;
  std::vector<kvret::Example> examples;

  explicit Toy(const std::string& name) : corpus(all_train(name)) {
    examples = kvret::make_examples(corpus.splits.train, corpus.vocabulary);
  }

  kvret::TrainData data(bool validate_on_train = true) const {
    return {examples, validate_on_train ? examples : std::vector<kvret::Example>{}, &corpus.vocabulary,
            &corpus.lexicon};
  }
};

/// Settings that memorize a handful of dialogues quickly.
inline kvret::TrainConfig overfit_config(std::size_t dim, std::size_t epochs) {
  kvret::TrainConfig c;
  c.dim = dim;
  c.epochs = epochs;
  c.learning_rate = 0.01;
  c.dropout_keep = 1.0;
  c.l2 = 0.0;
  c.patience = 0;
  c.max_decode_len = 30;
  return c;
}

/// A unique scratch directory under the system temp path.
inline std::filesystem::path scratch(const std::string& tag) {
  static int counter = 0;
  auto dir = std::filesystem::temp_directory_path() /
             ("kvret-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
