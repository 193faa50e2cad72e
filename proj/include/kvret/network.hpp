#pragma once

// Key-value retrieval network.
//
//   encoder         h_i   = LSTM(φ(x_i), h_{i-1})
//   enc. attention  u_i   = wᵀ tanh(W2 tanh(W1 [h_i, h̃_t]))
//                   h̃'_t  = Σ softmax(u)_i h_i
//   KB attention    u_j   = rᵀ tanh(W2' tanh(W1' [k_j, h̃_t])),  k_j = Σ φ(subject) + Σ φ(relation)
//   output          o_t   = U [h̃_t, h̃'_t] + v̄_t
//
// v̄_t is zero outside the canonical-token region; the slot of triple j's
// canonical token receives u_j, summed when triples share a token.

#include <array>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kvret/autograd.hpp"
#include "kvret/dialogue.hpp"
#include "kvret/kbstore.hpp"
#include "kvret/vocabulary.hpp"

namespace kvret {

struct ModelConfig {
  std::size_t dim = 200;
  /// |V| + n.
  std::size_t vocab_size = 0;
  /// |V|, the start of the canonical-token region.
  std::size_t base_vocab_size = 0;
  bool use_encoder_attention = true;
  bool use_kb_attention = true;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

enum class Param : std::size_t {
  embedding,
  enc_wx, enc_wh, enc_b,
  dec_wx, dec_wh, dec_b,
  attn_w1, attn_w2, attn_w,
  kb_w1, kb_w2, kb_r,
  out_u,
};
inline constexpr std::size_t kParamCount = 14;

enum class ParamRole { embedding, weight, bias };

struct ParamSpec {
  std::string name;
  std::vector<std::size_t> shape;
  ParamRole role;
  /// Input width seen by each output unit; 1 for embedding rows.
  std::size_t fan_in;
};

std::array<ParamSpec, kParamCount> param_specs(const ModelConfig& config);

class ModelParams {
 public:
  ModelParams() = default;
  /// Zero-initialized tensors shaped by `config`.
  explicit ModelParams(const ModelConfig& config);

  Tensor& operator[](Param p) { return tensors_[static_cast<std::size_t>(p)]; }
  const Tensor& operator[](Param p) const { return tensors_[static_cast<std::size_t>(p)]; }
  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

 private:
  std::vector<Tensor> tensors_;
};

/// KB triples usable by the decoder, in store order.
struct EncodedKb {
  std::vector<std::vector<TokenId>> keys;
  std::vector<TokenId> values;
  /// Position of each entry in the originating TripleStore.
  std::vector<std::size_t> triple_index;

  bool empty() const { return keys.empty(); }
  std::size_t size() const { return keys.size(); }
};

/// Targetable triples whose canonical token is in the vocabulary.
EncodedKb encode_kb(const TripleStore& store, const Vocabulary& vocab);

/// One training or evaluation example: an assistant turn and the dialogue
/// context preceding it.
struct Example {
  std::string dialogue_id;
  Domain domain = Domain::schedule;
  std::size_t turn = 0;
  std::vector<TokenId> context;
  /// Gold response ids, terminated by Vocabulary::kEos.
  std::vector<TokenId> response;
  /// Gold canonical tokens, including out-of-vocabulary ones.
  std::vector<std::string> gold_tokens;
  EncodedKb kb;
  /// The dialogue's full triple store, shared across its examples.
  std::shared_ptr<const TripleStore> store;
};

/// One example per assistant turn; context = every earlier turn concatenated.
std::vector<Example> make_examples(std::span<const Dialogue> dialogues, const Vocabulary& vocab);

/// Inverted dropout: masks hold 0 or 1/keep.
class DropoutSampler {
 public:
  DropoutSampler(double keep, std::uint64_t seed) : keep_(keep), rng_(seed) {}
  bool active() const { return keep_ < 1.0; }
  Tensor mask(const std::vector<std::size_t>& shape);

 private:
  double keep_;
  std::mt19937_64 rng_;
};

namespace net {

struct Bound {
  std::array<ag::Var, kParamCount> vars;
  ag::Var operator[](Param p) const { return vars[static_cast<std::size_t>(p)]; }
};

Bound bind(ag::Tape& tape, const ModelParams& params);

struct LstmState {
  ag::Var h, c;
};

LstmState lstm_step(ag::Var x, const LstmState& prev, ag::Var wx, ag::Var wh, ag::Var b);

struct EncoderOutput {
  /// [m x d], one row per context token.
  ag::Var states;
  LstmState final;
  std::size_t length = 0;
};

/// Runs the encoder LSTM over `context`; dropout on LSTM inputs and outputs
/// when `dropout` is given and active.
EncoderOutput encode(const Bound& p, std::span<const TokenId> context, DropoutSampler* dropout);

struct Attention {
  ag::Var context;
  ag::Var weights;
};

Attention encoder_attention(const Bound& p, const EncoderOutput& enc, ag::Var query);

/// Key vectors k_j, [m_kb x d].
ag::Var kb_keys(const Bound& p, const EncodedKb& kb);
/// u_j for every KB entry, [m_kb].
ag::Var kb_scores(const Bound& p, ag::Var keys, ag::Var query);
/// v̄ over the full output space.
ag::Var kb_attention(const Bound& p, const EncodedKb& kb, ag::Var query, std::size_t vocab_size);

struct DecoderStepOutput {
  ag::Var logits;
  /// Invalid when encoder attention is disabled.
  ag::Var encoder_weights;
  /// Invalid when KB attention is disabled or the KB is empty.
  ag::Var kb_scores;
  LstmState state;
};

struct KbContext {
  const EncodedKb* kb = nullptr;
  ag::Var keys;
};

KbContext prepare_kb(const Bound& p, const EncodedKb& kb, const ModelConfig& config);

DecoderStepOutput decode_step(const Bound& p, const ModelConfig& config, TokenId prev, const LstmState& state,
                              const EncoderOutput& enc, const KbContext& kb, DropoutSampler* dropout);

}  // namespace net

struct LossOptions {
  double l2 = 0.0;
  DropoutSampler* dropout = nullptr;
};

struct GreedyDecode {
  std::vector<TokenId> tokens;
  /// Per step: encoder attention weights (empty when disabled).
  std::vector<std::vector<double>> encoder_weights;
  /// Per step: u_j indexed like EncodedKb (empty when unused).
  std::vector<std::vector<double>> kb_scores;
  /// True when max_len was reached before EOS.
  bool truncated = false;
};

class Model {
 public:
  Model(ModelConfig config, ModelParams params);

  const ModelConfig& config() const { return config_; }
  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }

  /// Mean per-token cross-entropy under teacher forcing, plus
  /// l2 · Σ ‖W‖² over weight matrices and vectors.
  ag::Var sequence_loss(const net::Bound& p, const Example& example, const LossOptions& options = {}) const;
  ag::Var sequence_loss(ag::Tape& tape, const Example& example, const LossOptions& options = {}) const;

  /// Teacher-forced argmax prediction at every response position.
  std::vector<TokenId> teacher_forced_argmax(const Example& example) const;

  /// BOS-seeded argmax decoding until EOS or `max_len` tokens.
  GreedyDecode decode_greedy(std::span<const TokenId> context, const EncodedKb& kb, std::size_t max_len) const;

 private:
  ModelConfig config_;
  ModelParams params_;
};

}  // namespace kvret
