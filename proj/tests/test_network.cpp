#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "kvret/corpus.hpp"
#include "kvret/errors.hpp"
#include "kvret/grad_check.hpp"
#include "kvret/network.hpp"
#include "kvret/trainer.hpp"

using namespace kvret;
using ag::Tape;
using ag::Var;

namespace {

// ---------------------------------------------------------------------------
// Straight-line reference implementation over plain vectors.

using Vec = std::vector<double>;

Vec matvec(const Tensor& w, const Vec& x) {
  Vec out(w.rows(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t c = 0; c < w.cols(); ++c) out[r] += w.at(r, c) * x[c];
  return out;
}

Vec cat(const Vec& a, const Vec& b) {
  Vec out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

Vec vtanh(Vec v) {
  for (auto& x : v) x = std::tanh(x);
  return v;
}

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double dot(const Vec& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Vec embed(const Tensor& table, std::size_t id) {
  auto r = table.row(id);
  return {r.begin(), r.end()};
}

struct RefState {
  Vec h, c;
};

RefState ref_lstm(const Vec& x, const RefState& prev, const Tensor& wx, const Tensor& wh, const Tensor& b) {
  const std::size_t d = prev.h.size();
  Vec zx = matvec(wx, x), zh = matvec(wh, prev.h);
  RefState next{Vec(d), Vec(d)};
  for (std::size_t k = 0; k < d; ++k) {
    const double i = sigm(zx[k] + zh[k] + b[k]);
    const double f = sigm(zx[d + k] + zh[d + k] + b[d + k]);
    const double g = std::tanh(zx[2 * d + k] + zh[2 * d + k] + b[2 * d + k]);
    const double o = sigm(zx[3 * d + k] + zh[3 * d + k] + b[3 * d + k]);
    next.c[k] = f * prev.c[k] + i * g;
    next.h[k] = o * std::tanh(next.c[k]);
  }
  return next;
}

struct RefEncoding {
  std::vector<Vec> states;
  RefState final;
};

RefEncoding ref_encode(const ModelParams& p, const std::vector<TokenId>& context) {
  const std::size_t d = p[Param::embedding].cols();
  RefEncoding out;
  RefState s{Vec(d, 0.0), Vec(d, 0.0)};
  for (auto id : context) {
    s = ref_lstm(embed(p[Param::embedding], id), s, p[Param::enc_wx], p[Param::enc_wh], p[Param::enc_b]);
    out.states.push_back(s.h);
  }
  out.final = s;
  return out;
}

double ref_score(const Vec& row, const Vec& query, const Tensor& w1, const Tensor& w2, const Tensor& v) {
  return dot(vtanh(matvec(w2, vtanh(matvec(w1, cat(row, query))))), v);
}

std::pair<Vec, Vec> ref_attention(const ModelParams& p, const std::vector<Vec>& states, const Vec& query) {
  Vec u;
  for (const auto& h : states) u.push_back(ref_score(h, query, p[Param::attn_w1], p[Param::attn_w2], p[Param::attn_w]));
  const double mx = *std::max_element(u.begin(), u.end());
  double z = 0.0;
  for (auto& x : u) z += (x = std::exp(x - mx));
  for (auto& x : u) x /= z;
  Vec context(query.size(), 0.0);
  for (std::size_t i = 0; i < states.size(); ++i)
    for (std::size_t k = 0; k < context.size(); ++k) context[k] += u[i] * states[i][k];
  return {u, context};
}

Vec ref_kb_key(const ModelParams& p, const std::vector<TokenId>& key) {
  Vec k(p[Param::embedding].cols(), 0.0);
  for (auto id : key) {
    auto e = embed(p[Param::embedding], id);
    for (std::size_t i = 0; i < k.size(); ++i) k[i] += e[i];
  }
  return k;
}

Vec ref_kb_scores(const ModelParams& p, const EncodedKb& kb, const Vec& query) {
  Vec u;
  for (const auto& key : kb.keys) u.push_back(ref_score(ref_kb_key(p, key), query, p[Param::kb_w1], p[Param::kb_w2], p[Param::kb_r]));
  return u;
}

struct RefStep {
  Vec logits;
  Vec weights;
  RefState state;
};

RefStep ref_decode_step(const ModelParams& p, const ModelConfig& cfg, TokenId prev, const RefState& state,
                        const RefEncoding& enc, const EncodedKb& kb) {
  RefStep out;
  out.state = ref_lstm(embed(p[Param::embedding], prev), state, p[Param::dec_wx], p[Param::dec_wh], p[Param::dec_b]);
  Vec context(cfg.dim, 0.0);
  if (cfg.use_encoder_attention) std::tie(out.weights, context) = ref_attention(p, enc.states, out.state.h);
  out.logits = matvec(p[Param::out_u], cat(out.state.h, context));
  if (cfg.use_kb_attention && !kb.empty()) {
    auto u = ref_kb_scores(p, kb, out.state.h);
    for (std::size_t j = 0; j < u.size(); ++j) out.logits[kb.values[j]] += u[j];
  }
  return out;
}

double ref_loss(const ModelParams& p, const ModelConfig& cfg, const Example& ex) {
  auto enc = ref_encode(p, ex.context);
  RefState s = enc.final;
  TokenId prev = Vocabulary::kBos;
  double total = 0.0;
  for (auto gold : ex.response) {
    auto step = ref_decode_step(p, cfg, prev, s, enc, ex.kb);
    const double mx = *std::max_element(step.logits.begin(), step.logits.end());
    double z = 0.0;
    for (double v : step.logits) z += std::exp(v - mx);
    total += mx + std::log(z) - step.logits[gold];
    s = step.state;
    prev = gold;
  }
  return total / static_cast<double>(ex.response.size());
}

// ---------------------------------------------------------------------------
// Fixtures

constexpr std::size_t kDim = 4;
constexpr std::size_t kBase = 12;
constexpr std::size_t kVocab = 18;

ModelConfig small_config(bool enc = true, bool kb = true) {
  ModelConfig c;
  c.dim = kDim;
  c.vocab_size = kVocab;
  c.base_vocab_size = kBase;
  c.use_encoder_attention = enc;
  c.use_kb_attention = kb;
  return c;
}

ModelParams random_params(const ModelConfig& c, std::uint64_t seed, double scale = 0.5) {
  ModelParams p(c);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& t : p.tensors())
    for (auto& v : t.values()) v = u(rng);
  return p;
}

EncodedKb sample_kb() {
  EncodedKb kb;
  kb.keys = {{4, 5}, {4, 6}, {7, 5}, {7, 8, 6}};
  kb.values = {12, 13, 14, 15};
  kb.triple_index = {0, 1, 2, 3};
  return kb;
}

Example sample_example(EncodedKb kb = sample_kb()) {
  Example ex;
  ex.context = {4, 9, 10, 5, 11, 6};
  ex.response = {9, 13, Vocabulary::kEos};
  ex.kb = std::move(kb);
  return ex;
}

void check_close(std::span<const double> got, const Vec& want, double tol = 1e-12) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(tol).scale(1.0));
}

std::vector<double> values(const Var& v) {
  auto s = v.value().values();
  return {s.begin(), s.end()};
}

}  // namespace

TEST_CASE("param shapes follow the model width and vocabulary") {
  auto specs = param_specs(small_config());
  CHECK(specs[static_cast<std::size_t>(Param::embedding)].shape == std::vector<std::size_t>{kVocab, kDim});
  CHECK(specs[static_cast<std::size_t>(Param::enc_wx)].shape == std::vector<std::size_t>{4 * kDim, kDim});
  CHECK(specs[static_cast<std::size_t>(Param::attn_w1)].shape == std::vector<std::size_t>{kDim, 2 * kDim});
  CHECK(specs[static_cast<std::size_t>(Param::kb_r)].shape == std::vector<std::size_t>{kDim});
  CHECK(specs[static_cast<std::size_t>(Param::out_u)].shape == std::vector<std::size_t>{kVocab, 2 * kDim});
  ModelParams wrong(small_config());
  wrong[Param::out_u] = Tensor({kVocab, kDim});
  CHECK_THROWS_AS(Model(small_config(), wrong), DimensionError);
}

TEST_CASE("encode: one token is one LSTM step from the zero state") {
  auto p = random_params(small_config(), 1);
  Tape tape;
  auto b = net::bind(tape, p);
  std::vector<TokenId> ctx{7};
  auto enc = net::encode(b, ctx, nullptr);
  auto ref = ref_lstm(embed(p[Param::embedding], 7), {Vec(kDim, 0.0), Vec(kDim, 0.0)}, p[Param::enc_wx],
                      p[Param::enc_wh], p[Param::enc_b]);
  CHECK(enc.length == 1);
  check_close(enc.states.value().values(), ref.h);
  check_close(enc.final.c.value().values(), ref.c);
  std::vector<TokenId> empty;
  CHECK_THROWS_AS(net::encode(b, empty, nullptr), ContractError);
}

TEST_CASE("encode: zero weights keep every state at zero") {
  ModelParams p(small_config());
  Tape tape;
  auto b = net::bind(tape, p);
  std::vector<TokenId> ctx{4, 5, 6};
  auto enc = net::encode(b, ctx, nullptr);
  for (double v : enc.states.value().values()) CHECK(v == 0.0);
}

TEST_CASE("encode: five tokens match the step-by-step reference") {
  auto p = random_params(small_config(), 2);
  Tape tape;
  auto b = net::bind(tape, p);
  std::vector<TokenId> ctx{4, 9, 10, 5, 11};
  auto enc = net::encode(b, ctx, nullptr);
  auto ref = ref_encode(p, ctx);
  REQUIRE(enc.states.value().rows() == 5);
  for (std::size_t i = 0; i < 5; ++i) check_close(enc.states.value().row(i), ref.states[i]);
  check_close(enc.final.h.value().values(), ref.final.h);
  check_close(enc.final.c.value().values(), ref.final.c);
}

TEST_CASE("encoder attention") {
  auto p = random_params(small_config(), 3);
  Tape tape;
  auto b = net::bind(tape, p);
  auto query = tape.constant(Tensor::vector({0.3, -0.2, 0.5, 0.1}));

  SUBCASE("single state gets all the weight") {
    std::vector<TokenId> ctx{6};
    auto enc = net::encode(b, ctx, nullptr);
    auto att = net::encoder_attention(b, enc, query);
    CHECK(att.weights.value() == Tensor::vector({1.0}));
    check_close(att.context.value().values(), values(enc.final.h));
  }
  SUBCASE("identical states give uniform weights") {
    Vec h{0.1, 0.2, -0.3, 0.4};
    std::vector<Var> rows(3, tape.constant(Tensor::vector(h)));
    net::EncoderOutput enc;
    enc.states = ag::stack(rows);
    enc.length = 3;
    auto att = net::encoder_attention(b, enc, query);
    for (double w : att.weights.value().values()) CHECK(w == doctest::Approx(1.0 / 3.0));
    check_close(att.context.value().values(), h);
  }
  SUBCASE("three random states match the reference") {
    std::vector<TokenId> ctx{4, 8, 11};
    auto enc = net::encode(b, ctx, nullptr);
    auto ref = ref_encode(p, ctx);
    auto att = net::encoder_attention(b, enc, query);
    auto [w, c] = ref_attention(p, ref.states, values(query));
    check_close(att.weights.value().values(), w);
    check_close(att.context.value().values(), c);
    CHECK(std::accumulate(w.begin(), w.end(), 0.0) == doctest::Approx(1.0));
  }
}

TEST_CASE("KB attention injects logits at canonical slots only") {
  auto p = random_params(small_config(), 4);
  Tape tape;
  auto b = net::bind(tape, p);
  auto query = tape.constant(Tensor::vector({-0.4, 0.2, 0.6, 0.0}));

  SUBCASE("empty KB") {
    auto v = net::kb_attention(b, EncodedKb{}, query, kVocab);
    for (double x : v.value().values()) CHECK(x == 0.0);
  }
  SUBCASE("single triple") {
    EncodedKb kb;
    kb.keys = {{4, 5}};
    kb.values = {14};
    kb.triple_index = {0};
    auto v = net::kb_attention(b, kb, query, kVocab);
    for (std::size_t i = 0; i < kVocab; ++i) CHECK((v.value()[i] != 0.0) == (i == 14));
  }
  SUBCASE("four triples with distinct tokens") {
    auto kb = sample_kb();
    auto v = net::kb_attention(b, kb, query, kVocab);
    auto u = ref_kb_scores(p, kb, values(query));
    std::size_t nonzero = 0;
    for (std::size_t i = 0; i < kVocab; ++i) {
      nonzero += v.value()[i] != 0.0;
      if (i < kBase) CHECK(v.value()[i] == 0.0);
    }
    CHECK(nonzero == 4);
    for (std::size_t j = 0; j < 4; ++j) CHECK(v.value()[kb.values[j]] == doctest::Approx(u[j]).epsilon(1e-12));
  }
  SUBCASE("triples sharing a token sum their logits") {
    EncodedKb kb;
    kb.keys = {{4, 5}, {7, 5}};
    kb.values = {13, 13};
    kb.triple_index = {0, 1};
    auto v = net::kb_attention(b, kb, query, kVocab);
    auto u = ref_kb_scores(p, kb, values(query));
    CHECK(v.value()[13] == doctest::Approx(u[0] + u[1]).epsilon(1e-12));
  }
}

TEST_CASE("decode_step matches the reference in every configuration") {
  for (auto [enc_on, kb_on] : {std::pair{true, true}, {true, false}, {false, true}, {false, false}}) {
    CAPTURE(enc_on);
    CAPTURE(kb_on);
    auto cfg = small_config(enc_on, kb_on);
    auto p = random_params(cfg, 5);
    auto ex = sample_example();
    Tape tape;
    auto b = net::bind(tape, p);
    auto enc = net::encode(b, ex.context, nullptr);
    auto kbc = net::prepare_kb(b, ex.kb, cfg);
    auto step = net::decode_step(b, cfg, Vocabulary::kBos, enc.final, enc, kbc, nullptr);
    auto ref_enc = ref_encode(p, ex.context);
    auto ref = ref_decode_step(p, cfg, Vocabulary::kBos, ref_enc.final, ref_enc, ex.kb);
    CHECK(step.logits.value().size() == kVocab);
    check_close(step.logits.value().values(), ref.logits);
    CHECK(step.encoder_weights.valid() == enc_on);
    CHECK(step.kb_scores.valid() == kb_on);
    if (enc_on) {
      auto w = values(step.encoder_weights);
      CHECK(std::accumulate(w.begin(), w.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("decode_step: the KB path is additive in each triple's score") {
  auto p = random_params(small_config(), 6);
  auto ex = sample_example();
  Tape tape;
  auto b = net::bind(tape, p);
  auto enc = net::encode(b, ex.context, nullptr);
  auto with_kb = net::decode_step(b, small_config(), 3, enc.final, enc, net::prepare_kb(b, ex.kb, small_config()), nullptr);
  auto cfg_off = small_config(true, false);
  auto without = net::decode_step(b, cfg_off, 3, enc.final, enc, net::prepare_kb(b, ex.kb, cfg_off), nullptr);
  auto u = values(with_kb.kb_scores);
  for (std::size_t i = 0; i < kVocab; ++i) {
    double expected = without.logits.value()[i];
    for (std::size_t j = 0; j < u.size(); ++j)
      if (ex.kb.values[j] == i) expected += u[j];
    CHECK(with_kb.logits.value()[i] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("decode_step: a large KB score forces the argmax") {
  auto cfg = small_config();
  auto p = random_params(cfg, 7);
  EncodedKb kb;
  kb.keys = {{4, 5}};
  kb.values = {15};
  kb.triple_index = {0};
  std::vector<TokenId> ctx{4, 9, 10};

  // With r = c·z the KB score is c·‖z‖².
  Tape probe;
  auto pb = net::bind(probe, p);
  auto enc = net::encode(pb, ctx, nullptr);
  auto st = net::decode_step(pb, cfg, Vocabulary::kBos, enc.final, enc, net::prepare_kb(pb, kb, cfg), nullptr);
  auto query = values(st.state.h);
  auto key = ref_kb_key(p, kb.keys[0]);
  auto z = vtanh(matvec(p[Param::kb_w2], vtanh(matvec(p[Param::kb_w1], cat(key, query)))));

  auto argmax_for = [&](double c, bool zero_u) {
    ModelParams q = p;
    for (std::size_t k = 0; k < kDim; ++k) q[Param::kb_r][k] = c * z[k];
    if (zero_u) q[Param::out_u].fill(0.0);
    Model m(cfg, q);
    auto out = m.decode_greedy(ctx, kb, 1);
    return out.tokens.empty() ? Vocabulary::kEos : out.tokens[0];
  };
  CHECK(argmax_for(1.0, true) == 15);
  double c = 1.0;
  while (argmax_for(c, false) != 15 && c < 1e6) c *= 2.0;
  CHECK(argmax_for(c, false) == 15);
  CHECK(argmax_for(c * 10.0, false) == 15);
}

TEST_CASE("sequence_loss") {
  SUBCASE("uniform logits give ln K per token") {
    auto cfg = small_config();
    auto p = random_params(cfg, 8);
    p[Param::out_u].fill(0.0);
    Model m(cfg, p);
    Tape tape;
    auto loss = m.sequence_loss(tape, sample_example(EncodedKb{}));
    CHECK(loss.value()[0] == doctest::Approx(std::log(static_cast<double>(kVocab))).epsilon(1e-14));
  }
  SUBCASE("a certain gold token leaves only the penalty") {
    auto cfg = small_config(false, false);
    ModelParams p(cfg);
    for (std::size_t k = 0; k < 4 * kDim; ++k) p[Param::dec_b][k] = k < kDim || k >= 2 * kDim ? 50.0 : 0.0;
    for (std::size_t k = 0; k < kDim; ++k) p[Param::out_u].at(Vocabulary::kEos, k) = 1000.0;
    p[Param::attn_w1].fill(0.25);
    p[Param::kb_r].fill(-0.5);
    p[Param::embedding].fill(3.0);
    Model m(cfg, p);
    Example ex;
    ex.context = {4, 5};
    ex.response = {Vocabulary::kEos};
    const double l2 = 1e-3;
    double penalty = 0.0;
    for (Param w : {Param::enc_wx, Param::enc_wh, Param::dec_wx, Param::dec_wh, Param::attn_w1, Param::attn_w2,
                    Param::attn_w, Param::kb_w1, Param::kb_w2, Param::kb_r, Param::out_u}) {
      for (double v : p[w].values()) penalty += v * v;
    }
    Tape tape;
    CHECK(m.sequence_loss(tape, ex, {l2, nullptr}).value()[0] == doctest::Approx(l2 * penalty).epsilon(1e-12));
    Tape plain;
    CHECK(m.sequence_loss(plain, ex).value()[0] == 0.0);
  }
  SUBCASE("matches the hand-rolled cross-entropy") {
    auto cfg = small_config();
    auto p = random_params(cfg, 9, 1.0);
    Model m(cfg, p);
    Example ex = sample_example();
    ex.response = {13, Vocabulary::kEos};
    Tape tape;
    CHECK(m.sequence_loss(tape, ex).value()[0] == doctest::Approx(ref_loss(p, cfg, ex)).epsilon(1e-10));
  }
  SUBCASE("gold ids outside the output space are rejected") {
    Model m(small_config(), random_params(small_config(), 10));
    Example ex = sample_example();
    ex.response = {kVocab, Vocabulary::kEos};
    Tape tape;
    CHECK_THROWS_AS(m.sequence_loss(tape, ex), DataError);
  }
}

TEST_CASE("sequence_loss gradients pass grad_check for every parameter group") {
  for (auto [enc_on, kb_on, l2] : {std::tuple{true, true, 0.0}, {true, true, 0.05}, {false, true, 0.0}, {true, false, 0.01}}) {
    CAPTURE(enc_on);
    CAPTURE(kb_on);
    CAPTURE(l2);
    auto cfg = small_config(enc_on, kb_on);
    auto params = random_params(cfg, 11);
    Model model(cfg, params);
    const Example ex = sample_example();
    ag::ScalarFunction f = [&](Tape&, std::span<const Var> vars) {
      net::Bound b;
      std::copy(vars.begin(), vars.end(), b.vars.begin());
      return model.sequence_loss(b, ex, {l2, nullptr});
    };
    auto report = ag::grad_check(f, params.tensors());
    INFO(report.worst);
    CHECK(report.passed);
    CHECK(report.max_relative_error < 1e-4);
  }
}

TEST_CASE("dropout masks are applied in training mode only") {
  auto cfg = small_config();
  auto p = random_params(cfg, 12);
  Model m(cfg, p);
  auto ex = sample_example();
  Tape a, b, c;
  DropoutSampler d1(0.5, 3), d2(0.5, 3), none(1.0, 3);
  const double la = m.sequence_loss(a, ex, {0.0, &d1}).value()[0];
  const double lb = m.sequence_loss(b, ex, {0.0, &d2}).value()[0];
  const double lc = m.sequence_loss(c, ex, {0.0, &none}).value()[0];
  Tape e;
  CHECK(la == lb);
  CHECK(la != lc);
  CHECK(lc == m.sequence_loss(e, ex).value()[0]);
  DropoutSampler sampler(0.8, 1);
  auto mask = sampler.mask({1000});
  for (double v : mask.values()) CHECK((v == 0.0 || v == doctest::Approx(1.25)));
}

TEST_CASE("empty KB: KV net and attention seq2seq agree bitwise") {
  auto p = random_params(small_config(), 13);
  Model kv(small_config(true, true), p), seq(small_config(true, false), p);
  auto ex = sample_example(EncodedKb{});
  Tape t1, t2;
  DropoutSampler d1(0.85, 9), d2(0.85, 9);
  CHECK(kv.sequence_loss(t1, ex, {1e-4, &d1}).value()[0] == seq.sequence_loss(t2, ex, {1e-4, &d2}).value()[0]);
  auto a = kv.decode_greedy(ex.context, ex.kb, 8);
  auto b = seq.decode_greedy(ex.context, ex.kb, 8);
  CHECK(a.tokens == b.tokens);
  CHECK(a.encoder_weights == b.encoder_weights);
}

TEST_CASE("decode_greedy") {
  auto cfg = small_config();
  Model m(cfg, random_params(cfg, 14, 1.0));
  auto ex = sample_example();
  auto one = m.decode_greedy(ex.context, ex.kb, 1);
  CHECK(one.encoder_weights.size() == 1);
  CHECK(one.tokens.size() + (one.truncated ? 0 : 1) == 1);
  CHECK_THROWS_AS(m.decode_greedy(ex.context, ex.kb, 0), ContractError);

  auto a = m.decode_greedy(ex.context, ex.kb, 10);
  auto b = m.decode_greedy(ex.context, ex.kb, 10);
  CHECK(a.tokens == b.tokens);
  CHECK(a.kb_scores == b.kb_scores);
  CHECK(a.tokens.size() <= 10);
  CHECK(a.truncated == (a.encoder_weights.size() == a.tokens.size()));
  for (const auto& w : a.encoder_weights) {
    CHECK(w.size() == ex.context.size());
    CHECK(std::accumulate(w.begin(), w.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
  }
  for (const auto& u : a.kb_scores) CHECK(u.size() == ex.kb.size());
}

TEST_CASE("make_examples: one example per assistant turn with the full prior context") {
  auto loaded = load_corpus(std::filesystem::path(KVRET_TEST_DATA) / "mixed10.json");
  auto pc = prepare(loaded, {1, 1});
  const Dialogue& d = pc.splits.train.front();
  auto examples = make_examples(std::span<const Dialogue>(&d, 1), pc.vocabulary);
  REQUIRE(examples.size() == d.turns.size() / 2);
  std::vector<TokenId> context;
  for (std::size_t t = 0; t < d.turns.size(); ++t) {
    if (t % 2 == 1) {
      const auto& ex = examples[t / 2];
      CHECK(ex.context == context);
      CHECK(ex.response.back() == Vocabulary::kEos);
      CHECK(ex.gold_tokens == d.turns[t].tokens);
      CHECK(ex.store);
    }
    auto ids = pc.vocabulary.encode(d.turns[t].tokens);
    context.insert(context.end(), ids.begin(), ids.end());
  }
  for (std::size_t j = 0; j < examples[0].kb.size(); ++j) {
    CHECK(pc.vocabulary.is_canonical(examples[0].kb.values[j]));
    CHECK((*examples[0].store)[examples[0].kb.triple_index[j]].targetable);
  }
}
