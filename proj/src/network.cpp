#include "kvret/network.hpp"

#include <algorithm>
#include <cmath>

#include "kvret/errors.hpp"

namespace kvret {

// --------------------------------------------------------------------------
// Config and parameters

nlohmann::json ModelConfig::to_json() const {
  return {{"dim", dim},
          {"vocab_size", vocab_size},
          {"base_vocab_size", base_vocab_size},
          {"use_encoder_attention", use_encoder_attention},
          {"use_kb_attention", use_kb_attention}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.dim = j.at("dim").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.base_vocab_size = j.at("base_vocab_size").get<std::size_t>();
  c.use_encoder_attention = j.at("use_encoder_attention").get<bool>();
  c.use_kb_attention = j.at("use_kb_attention").get<bool>();
  return c;
}

std::array<ParamSpec, kParamCount> param_specs(const ModelConfig& c) {
  const std::size_t d = c.dim, v = c.vocab_size;
  if (d == 0 || v == 0) throw ContractError("param_specs: dim and vocab_size must be positive");
  using R = ParamRole;
  return {{
      {"embedding", {v, d}, R::embedding, 1},
      {"encoder.wx", {4 * d, d}, R::weight, d},
      {"encoder.wh", {4 * d, d}, R::weight, d},
      {"encoder.b", {4 * d}, R::bias, 1},
      {"decoder.wx", {4 * d, d}, R::weight, d},
      {"decoder.wh", {4 * d, d}, R::weight, d},
      {"decoder.b", {4 * d}, R::bias, 1},
      {"attention.w1", {d, 2 * d}, R::weight, 2 * d},
      {"attention.w2", {d, d}, R::weight, d},
      {"attention.w", {d}, R::weight, d},
      {"kb_attention.w1", {d, 2 * d}, R::weight, 2 * d},
      {"kb_attention.w2", {d, d}, R::weight, d},
      {"kb_attention.r", {d}, R::weight, d},
      {"output.u", {v, 2 * d}, R::weight, 2 * d},
  }};
}

ModelParams::ModelParams(const ModelConfig& config) {
  for (const auto& spec : param_specs(config)) tensors_.emplace_back(spec.shape);
}

EncodedKb encode_kb(const TripleStore& store, const Vocabulary& vocab) {
  EncodedKb kb;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& t = store[i];
    if (!t.targetable) continue;
    auto value = vocab.find(t.canonical_token);
    if (!value || !vocab.is_canonical(*value)) continue;
    std::vector<TokenId> key = vocab.encode(t.subject);
    auto rel = vocab.encode(t.relation);
    key.insert(key.end(), rel.begin(), rel.end());
    kb.keys.push_back(std::move(key));
    kb.values.push_back(*value);
    kb.triple_index.push_back(i);
  }
  return kb;
}

std::vector<Example> make_examples(std::span<const Dialogue> dialogues, const Vocabulary& vocab) {
  std::vector<Example> out;
  for (const auto& d : dialogues) {
    auto store = std::make_shared<const TripleStore>(normalize_kb(d.kb, d.domain));
    const EncodedKb kb = encode_kb(*store, vocab);
    std::vector<TokenId> context;
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      const auto& turn = d.turns[t];
      if (turn.speaker == Speaker::assistant && !context.empty()) {
        Example ex;
        ex.dialogue_id = d.id;
        ex.domain = d.domain;
        ex.turn = t;
        ex.context = context;
        ex.response = vocab.encode(turn.tokens);
        ex.response.push_back(Vocabulary::kEos);
        ex.gold_tokens = turn.tokens;
        ex.kb = kb;
        ex.store = store;
        out.push_back(std::move(ex));
      }
      auto ids = vocab.encode(turn.tokens);
      context.insert(context.end(), ids.begin(), ids.end());
    }
  }
  return out;
}

Tensor DropoutSampler::mask(const std::vector<std::size_t>& shape) {
  Tensor m(shape, 1.0);
  if (!active()) return m;
  std::bernoulli_distribution keep(keep_);
  for (auto& v : m.values()) v = keep(rng_) ? 1.0 / keep_ : 0.0;
  return m;
}

// --------------------------------------------------------------------------
// Graph construction

namespace net {

namespace {

ag::Var maybe_dropout(ag::Var x, DropoutSampler* dropout) {
  if (!dropout || !dropout->active()) return x;
  return ag::dropout(x, dropout->mask(x.value().shape()));
}

// vᵀ tanh(W2 tanh(W1 [rows, query])) for every row.
ag::Var mlp_scores(ag::Var rows, ag::Var query, ag::Var w1, ag::Var w2, ag::Var v) {
  ag::Var hidden = ag::tanh(ag::linear(ag::concat(rows, query), w1));
  hidden = ag::tanh(ag::linear(hidden, w2));
  return ag::matmul(hidden, v);
}

}  // namespace

Bound bind(ag::Tape& tape, const ModelParams& params) {
  if (params.tensors().size() != kParamCount) throw ContractError("bind: parameter set is incomplete");
  Bound b;
  for (std::size_t i = 0; i < kParamCount; ++i) b.vars[i] = tape.parameter(params.tensors()[i]);
  return b;
}

LstmState lstm_step(ag::Var x, const LstmState& prev, ag::Var wx, ag::Var wh, ag::Var b) {
  const std::size_t d = prev.h.value().size();
  ag::Var z = ag::add(ag::add(ag::linear(x, wx), ag::linear(prev.h, wh)), b);
  ag::Var in = ag::sigmoid(ag::slice(z, 0, d));
  ag::Var forget = ag::sigmoid(ag::slice(z, d, d));
  ag::Var cand = ag::tanh(ag::slice(z, 2 * d, d));
  ag::Var out = ag::sigmoid(ag::slice(z, 3 * d, d));
  ag::Var c = ag::add(ag::mul(forget, prev.c), ag::mul(in, cand));
  ag::Var h = ag::mul(out, ag::tanh(c));
  return {h, c};
}

EncoderOutput encode(const Bound& p, std::span<const TokenId> context, DropoutSampler* dropout) {
  if (context.empty()) throw ContractError("encode: empty context");
  ag::Tape& tape = p[Param::embedding].tape();
  const std::size_t d = p[Param::embedding].value().cols();
  ag::Var inputs = maybe_dropout(ag::embedding(p[Param::embedding], context), dropout);
  LstmState state{tape.constant(Tensor({d})), tape.constant(Tensor({d}))};
  std::vector<ag::Var> outputs;
  outputs.reserve(context.size());
  for (std::size_t i = 0; i < context.size(); ++i) {
    state = lstm_step(ag::row(inputs, i), state, p[Param::enc_wx], p[Param::enc_wh], p[Param::enc_b]);
    outputs.push_back(state.h);
  }
  EncoderOutput enc;
  enc.states = maybe_dropout(ag::stack(outputs), dropout);
  enc.final = state;
  enc.length = context.size();
  return enc;
}

Attention encoder_attention(const Bound& p, const EncoderOutput& enc, ag::Var query) {
  ag::Var scores = mlp_scores(enc.states, query, p[Param::attn_w1], p[Param::attn_w2], p[Param::attn_w]);
  ag::Var weights = ag::softmax(scores);
  return {ag::matmul(weights, enc.states), weights};
}

ag::Var kb_keys(const Bound& p, const EncodedKb& kb) {
  if (kb.empty()) throw ContractError("kb_keys: empty KB");
  return ag::embedding_bag(p[Param::embedding], kb.keys);
}

ag::Var kb_scores(const Bound& p, ag::Var keys, ag::Var query) {
  return mlp_scores(keys, query, p[Param::kb_w1], p[Param::kb_w2], p[Param::kb_r]);
}

ag::Var kb_attention(const Bound& p, const EncodedKb& kb, ag::Var query, std::size_t vocab_size) {
  ag::Var sparse = query.tape().constant(Tensor({vocab_size}));
  if (kb.empty()) return sparse;
  return ag::scatter_add(sparse, kb_scores(p, kb_keys(p, kb), query), kb.values);
}

KbContext prepare_kb(const Bound& p, const EncodedKb& kb, const ModelConfig& config) {
  KbContext ctx;
  ctx.kb = &kb;
  if (config.use_kb_attention && !kb.empty()) ctx.keys = kb_keys(p, kb);
  return ctx;
}

DecoderStepOutput decode_step(const Bound& p, const ModelConfig& config, TokenId prev, const LstmState& state,
                              const EncoderOutput& enc, const KbContext& kb, DropoutSampler* dropout) {
  ag::Tape& tape = p[Param::embedding].tape();
  const std::size_t d = config.dim;
  ag::Var x = ag::row(ag::embedding(p[Param::embedding], std::span<const TokenId>(&prev, 1)), 0);
  x = maybe_dropout(x, dropout);

  DecoderStepOutput out;
  out.state = lstm_step(x, state, p[Param::dec_wx], p[Param::dec_wh], p[Param::dec_b]);
  ag::Var query = maybe_dropout(out.state.h, dropout);

  ag::Var context;
  if (config.use_encoder_attention) {
    auto att = encoder_attention(p, enc, query);
    context = att.context;
    out.encoder_weights = att.weights;
  } else {
    context = tape.constant(Tensor({d}));
  }
  out.logits = ag::linear(ag::concat(query, context), p[Param::out_u]);
  if (kb.keys.valid()) {
    out.kb_scores = kb_scores(p, kb.keys, query);
    out.logits = ag::scatter_add(out.logits, out.kb_scores, kb.kb->values);
  }
  return out;
}

}  // namespace net

// --------------------------------------------------------------------------
// Model

namespace {

TokenId argmax(std::span<const double> v) {
  return static_cast<TokenId>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<double> to_vector(const ag::Var& v) {
  if (!v.valid()) return {};
  auto vals = v.value().values();
  return {vals.begin(), vals.end()};
}

}  // namespace

Model::Model(ModelConfig config, ModelParams params) : config_(config), params_(std::move(params)) {
  const auto specs = param_specs(config_);
  if (params_.tensors().size() != kParamCount) throw DimensionError("model: expected 14 parameter tensors");
  for (std::size_t i = 0; i < kParamCount; ++i) {
    if (params_.tensors()[i].shape() != specs[i].shape) {
      throw DimensionError("model: parameter " + specs[i].name + " has shape " + params_.tensors()[i].shape_string() +
                           ", expected " + shape_string(specs[i].shape));
    }
  }
}

ag::Var Model::sequence_loss(const net::Bound& p, const Example& example, const LossOptions& options) const {
  if (example.response.empty()) throw ContractError("sequence_loss: empty response");
  for (auto id : example.response) {
    if (id >= config_.vocab_size) throw DataError("sequence_loss: gold token id " + std::to_string(id) + " outside vocabulary");
  }
  auto enc = net::encode(p, example.context, options.dropout);
  auto kb = net::prepare_kb(p, example.kb, config_);
  net::LstmState state = enc.final;
  TokenId prev = Vocabulary::kBos;
  ag::Var total;
  for (auto gold : example.response) {
    auto step = net::decode_step(p, config_, prev, state, enc, kb, options.dropout);
    ag::Var ce = ag::cross_entropy(step.logits, gold);
    total = total.valid() ? ag::add(total, ce) : ce;
    state = step.state;
    prev = gold;
  }
  ag::Var loss = ag::scale(total, 1.0 / static_cast<double>(example.response.size()));
  if (options.l2 > 0.0) {
    const auto specs = param_specs(config_);
    ag::Var penalty;
    for (std::size_t i = 0; i < kParamCount; ++i) {
      if (specs[i].role != ParamRole::weight) continue;
      ag::Var sq = ag::sum_squares(p.vars[i]);
      penalty = penalty.valid() ? ag::add(penalty, sq) : sq;
    }
    loss = ag::add(loss, ag::scale(penalty, options.l2));
  }
  return loss;
}

ag::Var Model::sequence_loss(ag::Tape& tape, const Example& example, const LossOptions& options) const {
  return sequence_loss(net::bind(tape, params_), example, options);
}

std::vector<TokenId> Model::teacher_forced_argmax(const Example& example) const {
  ag::Tape tape;
  auto p = net::bind(tape, params_);
  auto enc = net::encode(p, example.context, nullptr);
  auto kb = net::prepare_kb(p, example.kb, config_);
  net::LstmState state = enc.final;
  TokenId prev = Vocabulary::kBos;
  std::vector<TokenId> out;
  for (auto gold : example.response) {
    auto step = net::decode_step(p, config_, prev, state, enc, kb, nullptr);
    out.push_back(argmax(step.logits.value().values()));
    state = step.state;
    prev = gold;
  }
  return out;
}

GreedyDecode Model::decode_greedy(std::span<const TokenId> context, const EncodedKb& kb_entries,
                                  std::size_t max_len) const {
  if (max_len == 0) throw ContractError("decode_greedy: max_len must be at least 1");
  ag::Tape tape;
  auto p = net::bind(tape, params_);
  auto enc = net::encode(p, context, nullptr);
  auto kb = net::prepare_kb(p, kb_entries, config_);
  net::LstmState state = enc.final;
  TokenId prev = Vocabulary::kBos;
  GreedyDecode out;
  out.truncated = true;
  for (std::size_t t = 0; t < max_len; ++t) {
    auto step = net::decode_step(p, config_, prev, state, enc, kb, nullptr);
    const TokenId next = argmax(step.logits.value().values());
    out.encoder_weights.push_back(to_vector(step.encoder_weights));
    out.kb_scores.push_back(to_vector(step.kb_scores));
    if (next == Vocabulary::kEos) {
      out.truncated = false;
      break;
    }
    out.tokens.push_back(next);
    state = step.state;
    prev = next;
  }
  return out;
}

}  // namespace kvret
