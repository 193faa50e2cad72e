#pragma once

// Optimization: initialization, Adam, global-norm clipping, the training
// loop with validation-driven checkpointing, and random hyperparameter search.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "kvret/lexicon.hpp"
#include "kvret/metrics.hpp"
#include "kvret/network.hpp"
#include "kvret/vocabulary.hpp"

namespace kvret {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class InitScheme {
  /// Uniform(±√(3/fan_in)).
  fan_in,
  /// Uniform(±√(6/(fan_in + fan_out))).
  fan_average,
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double dropout_keep = 0.9;
  double l2 = 3e-6;
  double clip_value = 10.0;
  std::size_t dim = 200;
  std::size_t epochs = 30;
  std::size_t batch_size = 1;
  std::uint64_t seed = 1;
  /// Epochs without validation improvement before stopping; 0 disables.
  std::size_t patience = 5;
  std::size_t workers = 1;
  std::size_t max_decode_len = 40;
  bool use_encoder_attention = true;
  bool use_kb_attention = true;
  InitScheme init = InitScheme::fan_in;

  /// Sets one field from its key=value spelling; ConfigError on unknown keys
  /// or unparsable values.
  void set(const std::string& key, const std::string& value);
  /// Flat `key=value` lines; blank lines and '#' comments are ignored.
  static TrainConfig parse(const std::string& text, TrainConfig base);
  static TrainConfig load(const std::filesystem::path& path, TrainConfig base);
  std::string to_text() const;
  nlohmann::json to_json() const;

  ModelConfig model_config(const Vocabulary& vocab) const;
};

inline TrainConfig parse_train_config(const std::string& text) { return TrainConfig::parse(text, TrainConfig{}); }

ModelParams init_params(const ModelConfig& config, std::uint64_t seed, InitScheme scheme = InitScheme::fan_in);

/// Scales every gradient by clip_value / norm when the global L2 norm exceeds
/// clip_value. Returns the pre-clip norm. Throws TrainingError on non-finite
/// entries, naming `step`.
double clip_gradients(std::span<Tensor> grads, double clip_value, std::size_t step = 0);
double global_norm(std::span<const Tensor> grads);

struct AdamState {
  std::vector<Tensor> first, second;
  std::size_t step = 0;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;

  AdamState() = default;
  explicit AdamState(std::span<const Tensor> params);
};

void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state, double learning_rate);

/// Loss and gradients of one example, parameters untouched.
struct ExampleGradient {
  double loss = 0.0;
  std::vector<Tensor> grads;
};
ExampleGradient example_gradient(const Model& model, const Example& example, const LossOptions& options);

struct EvalOptions {
  std::size_t max_decode_len = 40;
  bool compute_loss = true;
  bool decode = true;
};

struct EvalResult {
  Scores scores;
  /// Mean teacher-forced cross-entropy, no penalty.
  double loss = 0.0;
  std::vector<EvalPair> pairs;
  std::size_t truncated = 0;
};

EvalResult evaluate(const Model& model, std::span<const Example> examples, const Vocabulary& vocab,
                    const Lexicon& lexicon, const EvalOptions& options = {});

/// Fraction of teacher-forced argmax predictions equal to the gold token,
/// EOS included.
double token_accuracy(const Model& model, std::span<const Example> examples);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_bleu = 0.0;
  double val_entity_f1 = 0.0;
  std::array<double, 3> per_domain_f1{};

  nlohmann::json to_json() const;
};

struct TrainData {
  std::vector<Example> train;
  std::vector<Example> validation;
  const Vocabulary* vocab = nullptr;
  const Lexicon* lexicon = nullptr;
};

struct TrainOptions {
  /// When set: `<run_dir>/metrics.jsonl` and `<run_dir>/best.ckpt`.
  std::optional<std::filesystem::path> run_dir;
  /// Called after every epoch.
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
  ModelConfig model_config;
  ModelParams best_params;
  std::size_t best_epoch = 0;
  double best_val_f1 = 0.0;
  double best_val_loss = 0.0;
  std::vector<EpochMetrics> log;
};

TrainResult train(const TrainData& data, const TrainConfig& config, const TrainOptions& options = {});

struct SearchRanges {
  std::array<double, 2> learning_rate{1e-4, 1e-3};
  std::array<double, 2> dropout_keep{0.8, 0.9};
  std::array<double, 2> l2{3e-6, 1e-5};
};

struct TrialResult {
  TrainConfig config;
  double val_f1 = 0.0;
  double val_loss = 0.0;
  std::size_t best_epoch = 0;
};

struct SearchResult {
  TrainConfig best;
  std::size_t best_index = 0;
  std::vector<TrialResult> trials;
};

/// Samples each trial's learning rate, dropout keep rate and L2 coefficient
/// uniformly from `ranges`; everything else comes from `base`, including the
/// model seed. Best = highest validation entity F1, then lowest validation
/// loss, then earliest trial.
SearchResult random_search(const TrainData& data, const TrainConfig& base, std::size_t trials,
                           const SearchRanges& ranges = {}, std::uint64_t search_seed = 1,
                           const std::function<void(std::size_t, const TrialResult&)>& on_trial = {});

}  // namespace kvret
