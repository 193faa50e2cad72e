#include <doctest.h>

#include <cmath>
#include <fstream>

#include "fixtures.hpp"
#include "kvret/checkpoint.hpp"
#include "kvret/kbstore.hpp"

using namespace kvret;

namespace {

ModelConfig init_config() {
  ModelConfig c;
  c.dim = 64;
  c.vocab_size = 300;
  c.base_vocab_size = 250;
  return c;
}

double variance(std::span<const double> v) {
  double mean = 0.0, sq = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  for (double x : v) sq += (x - mean) * (x - mean);
  return sq / static_cast<double>(v.size());
}

}  // namespace

TEST_CASE("init_params") {
  auto cfg = init_config();
  auto p = init_params(cfg, 3);
  SUBCASE("forget gate biases start at one, other biases at zero") {
    for (Param b : {Param::enc_b, Param::dec_b}) {
      for (std::size_t j = 0; j < 4 * cfg.dim; ++j) CHECK(p[b][j] == (j >= cfg.dim && j < 2 * cfg.dim ? 1.0 : 0.0));
    }
  }
  SUBCASE("seeded and deterministic") {
    CHECK(p == init_params(cfg, 3));
    CHECK_FALSE(p == init_params(cfg, 4));
  }
  SUBCASE("fan-in variance within five percent") {
    CHECK(variance(p[Param::enc_wx].values()) == doctest::Approx(1.0 / 64.0).epsilon(0.05));
    CHECK(variance(p[Param::out_u].values()) == doctest::Approx(1.0 / 128.0).epsilon(0.05));
    CHECK(variance(p[Param::embedding].values()) == doctest::Approx(1.0).epsilon(0.05));
    const double bound = std::sqrt(3.0 / 64.0);
    for (double v : p[Param::dec_wh].values()) CHECK(std::abs(v) <= bound);
  }
  SUBCASE("fan-average scheme") {
    auto q = init_params(cfg, 3, InitScheme::fan_average);
    CHECK(variance(q[Param::enc_wx].values()) == doctest::Approx(2.0 / (64.0 + 256.0)).epsilon(0.05));
  }
}

TEST_CASE("clip_gradients") {
  auto grads_with_norm = [](double norm) {
    std::vector<Tensor> g{Tensor::vector({0.6 * norm}), Tensor::matrix(1, 2, {0.0, 0.8 * norm})};
    return g;
  };
  SUBCASE("below the threshold nothing changes") {
    auto g = grads_with_norm(5.0);
    auto before = g;
    CHECK(clip_gradients(g, 10.0) == doctest::Approx(5.0));
    CHECK(g == before);
  }
  SUBCASE("above the threshold the norm becomes the threshold") {
    for (double norm : {20.0, 1e6}) {
      auto g = grads_with_norm(norm);
      CHECK(clip_gradients(g, 10.0) == doctest::Approx(norm));
      CHECK(global_norm(g) == doctest::Approx(10.0));
      CHECK(g[0][0] / g[1][1] == doctest::Approx(0.75));
    }
  }
  SUBCASE("non-finite gradients are reported") {
    std::vector<Tensor> g{Tensor::vector({1.0, std::nan("")})};
    CHECK_THROWS_AS(clip_gradients(g, 10.0, 17), TrainingError);
    std::vector<Tensor> h{Tensor::vector({INFINITY})};
    CHECK_THROWS_AS(clip_gradients(h, 10.0), TrainingError);
  }
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    std::vector<Tensor> p{Tensor::vector({1.5, -2.0})};
    std::vector<Tensor> g{Tensor::vector({0.0, 0.0})};
    AdamState s(p);
    for (int i = 0; i < 5; ++i) adam_step(p, g, s, 0.1);
    CHECK(p[0] == Tensor::vector({1.5, -2.0}));
  }
  SUBCASE("first step by hand") {
    std::vector<Tensor> p{Tensor::vector({1.0})};
    std::vector<Tensor> g{Tensor::vector({0.5})};
    AdamState s(p);
    adam_step(p, g, s, 0.1);
    // m = 0.05, v = 0.00025; bias-corrected 0.5 and 0.25.
    CHECK(p[0][0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
    CHECK(s.first[0][0] == doctest::Approx(0.05));
    CHECK(s.second[0][0] == doctest::Approx(0.00025));
    g[0][0] = -0.25;
    adam_step(p, g, s, 0.1);
    const double m = 0.9 * 0.05 + 0.1 * -0.25, v = 0.999 * 0.00025 + 0.001 * 0.0625;
    const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
    CHECK(p[0][0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8) - 0.1 * mh / (std::sqrt(vh) + 1e-8)).epsilon(1e-12));
  }
  SUBCASE("minimizes a quadratic bowl") {
    const std::vector<double> centre{3.0, -1.0, 0.5};
    std::vector<Tensor> p{Tensor::vector({0.0, 0.0, 0.0})};
    AdamState s(p);
    for (int i = 0; i < 3000; ++i) {
      std::vector<Tensor> g{Tensor::vector({2 * (p[0][0] - centre[0]), 2 * (p[0][1] - centre[1]), 2 * (p[0][2] - centre[2])})};
      adam_step(p, g, s, 0.05);
    }
    for (std::size_t i = 0; i < 3; ++i) CHECK(p[0][i] == doctest::Approx(centre[i]).epsilon(1e-3));
  }
}

TEST_CASE("TrainConfig text form") {
  auto c = parse_train_config("# tuned\nlearning_rate = 0.01\n\ndim=32\nuse_kb_attention=false\ninit=fan_average\n");
  CHECK(c.learning_rate == 0.01);
  CHECK(c.dim == 32);
  CHECK_FALSE(c.use_kb_attention);
  CHECK(c.init == InitScheme::fan_average);
  CHECK(c.epochs == TrainConfig{}.epochs);
  auto round = parse_train_config(c.to_text());
  CHECK(round.to_text() == c.to_text());
  CHECK_THROWS_AS(parse_train_config("nonsense=1"), ConfigError);
  CHECK_THROWS_AS(parse_train_config("dim=abc"), ConfigError);
  CHECK_THROWS_AS(parse_train_config("dim"), ConfigError);
  CHECK_THROWS_AS(parse_train_config("dropout_keep=1.5"), ConfigError);
}

TEST_CASE("the L2 penalty adds 2·l2·W to weight gradients only") {
  fixtures::Toy toy("meeting.json");
  auto cfg = fixtures::overfit_config(6, 1).model_config(toy.corpus.vocabulary);
  Model m(cfg, init_params(cfg, 5));
  auto plain = example_gradient(m, toy.examples[0], {0.0, nullptr});
  auto penal = example_gradient(m, toy.examples[0], {0.1, nullptr});
  const auto specs = param_specs(cfg);
  for (std::size_t i = 0; i < kParamCount; ++i) {
    CAPTURE(specs[i].name);
    const bool weight = specs[i].role == ParamRole::weight;
    for (std::size_t k = 0; k < plain.grads[i].size(); ++k) {
      const double expected = weight ? 0.2 * m.params().tensors()[i][k] : 0.0;
      CHECK(penal.grads[i][k] - plain.grads[i][k] == doctest::Approx(expected).epsilon(1e-9).scale(1e-12));
    }
  }
}

TEST_CASE("train with zero epochs returns the initialization") {
  fixtures::Toy toy("meeting.json");
  auto cfg = fixtures::overfit_config(8, 0);
  auto dir = fixtures::scratch("zero");
  auto r = train(toy.data(), cfg, {dir, {}});
  CHECK(r.best_params == init_params(r.model_config, cfg.seed));
  CHECK(r.best_epoch == 0);
  auto ckpt = load_checkpoint(dir / "best.ckpt");
  CHECK(ckpt.params == r.best_params);
  std::filesystem::remove_all(dir);
}

TEST_CASE("training is deterministic, including across worker counts") {
  fixtures::Toy toy("mixed10.json");
  auto cfg = fixtures::overfit_config(8, 2);
  cfg.dropout_keep = 0.8;
  cfg.batch_size = 4;
  auto a = train(toy.data(false), cfg);
  auto b = train(toy.data(false), cfg);
  cfg.workers = 3;
  auto c = train(toy.data(false), cfg);
  CHECK(a.best_params == b.best_params);
  CHECK(a.best_params == c.best_params);
  CHECK(a.log[1].train_loss == c.log[1].train_loss);
  cfg.seed = 2;
  CHECK_FALSE(train(toy.data(false), cfg).best_params == a.best_params);
}

TEST_CASE("training writes one metrics line per epoch") {
  fixtures::Toy toy("mixed10.json");
  auto cfg = fixtures::overfit_config(8, 3);
  auto dir = fixtures::scratch("metrics");
  std::size_t callbacks = 0;
  auto r = train(toy.data(), cfg, {dir, [&](const EpochMetrics&) { ++callbacks; }});
  CHECK(callbacks == 3);
  std::ifstream in(dir / "metrics.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    for (const char* key : {"epoch", "train_loss", "val_loss", "val_bleu", "val_entity_f1", "per_domain_f1"})
      CHECK(j.contains(key));
    CHECK(j["epoch"] == ++lines);
  }
  CHECK(lines == 3);
  auto ckpt = load_checkpoint(dir / "best.ckpt");
  CHECK(ckpt.metadata["epoch"] == r.best_epoch);
  CHECK(ckpt.params == r.best_params);
  std::filesystem::remove_all(dir);
}

TEST_CASE("early stopping halts after the patience window") {
  fixtures::Toy toy("meeting.json");
  auto cfg = fixtures::overfit_config(4, 40);
  cfg.learning_rate = 0.0;
  cfg.patience = 3;
  auto r = train(toy.data(), cfg);
  CHECK(r.best_epoch == 1);
  CHECK(r.log.size() == 4);
}

TEST_CASE("a single dialogue is memorized") {
  fixtures::Toy toy("meeting.json");
  auto r = train(toy.data(false), fixtures::overfit_config(32, 60));
  Model m(r.model_config, r.best_params);
  CHECK(token_accuracy(m, toy.examples) == 1.0);
  auto eval = evaluate(m, toy.examples, toy.corpus.vocabulary, toy.corpus.lexicon);
  REQUIRE(eval.pairs.size() == 1);
  CHECK(eval.pairs[0].predicted == eval.pairs[0].gold);
  CHECK(eval.scores.entity.f1 == 1.0);
  CHECK(eval.scores.bleu == doctest::Approx(100.0));
  CHECK(eval.truncated == 0);
}

TEST_CASE("random_search") {
  fixtures::Toy toy("meeting.json");
  auto base = fixtures::overfit_config(6, 2);
  SUBCASE("one trial is the best") {
    auto r = random_search(toy.data(), base, 1);
    CHECK(r.trials.size() == 1);
    CHECK(r.best_index == 0);
  }
  SUBCASE("ties go to the earliest trial") {
    SearchRanges fixed{{1e-3, 1e-3}, {0.9, 0.9}, {1e-5, 1e-5}};
    auto r = random_search(toy.data(), base, 3, fixed);
    CHECK(r.best_index == 0);
    CHECK(r.trials[0].val_f1 == r.trials[2].val_f1);
    CHECK(r.best.learning_rate == 1e-3);
  }
  SUBCASE("the chosen trial has the highest F1 and samples stay in range") {
    std::size_t seen = 0;
    auto r = random_search(toy.data(), base, 4, {}, 9, [&](std::size_t, const TrialResult&) { ++seen; });
    CHECK(seen == 4);
    for (const auto& t : r.trials) {
      CHECK(t.val_f1 <= r.trials[r.best_index].val_f1);
      CHECK(t.config.learning_rate >= 1e-4);
      CHECK(t.config.learning_rate <= 1e-3);
      CHECK(t.config.dropout_keep >= 0.8);
      CHECK(t.config.dropout_keep <= 0.9);
      CHECK(t.config.l2 >= 3e-6);
      CHECK(t.config.l2 <= 1e-5);
      CHECK(t.config.dim == base.dim);
    }
  }
}
