#include "kvret/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "kvret/checkpoint.hpp"
#include "kvret/corpus.hpp"
#include "kvret/errors.hpp"
#include "kvret/kbstore.hpp"
#include "kvret/text.hpp"

namespace kvret {

// --------------------------------------------------------------------------
// Config

namespace {

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size() || !std::isfinite(v)) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects a number, got '" + value + "'");
  }
}

std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("config: " + key + " expects a non-negative integer, got '" + value + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  const auto v = text::lowercase(value);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: " + key + " expects true/false, got '" + value + "'");
}

std::string_view to_string(InitScheme s) { return s == InitScheme::fan_in ? "fan_in" : "fan_average"; }

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "learning_rate") {
    learning_rate = parse_double(key, value);
  } else if (key == "dropout_keep") {
    dropout_keep = parse_double(key, value);
    if (dropout_keep <= 0.0 || dropout_keep > 1.0) throw ConfigError("config: dropout_keep must lie in (0, 1]");
  } else if (key == "l2") {
    l2 = parse_double(key, value);
  } else if (key == "clip_value") {
    clip_value = parse_double(key, value);
  } else if (key == "dim") {
    dim = parse_uint(key, value);
    if (dim == 0) throw ConfigError("config: dim must be positive");
  } else if (key == "epochs") {
    epochs = parse_uint(key, value);
  } else if (key == "batch_size") {
    batch_size = parse_uint(key, value);
    if (batch_size == 0) throw ConfigError("config: batch_size must be positive");
  } else if (key == "seed") {
    seed = parse_uint(key, value);
  } else if (key == "patience") {
    patience = parse_uint(key, value);
  } else if (key == "workers") {
    workers = std::max<std::uint64_t>(1, parse_uint(key, value));
  } else if (key == "max_decode_len") {
    max_decode_len = parse_uint(key, value);
    if (max_decode_len == 0) throw ConfigError("config: max_decode_len must be positive");
  } else if (key == "use_encoder_attention") {
    use_encoder_attention = parse_bool(key, value);
  } else if (key == "use_kb_attention") {
    use_kb_attention = parse_bool(key, value);
  } else if (key == "init") {
    if (value == "fan_in") {
      init = InitScheme::fan_in;
    } else if (value == "fan_average") {
      init = InitScheme::fan_average;
    } else {
      throw ConfigError("config: init must be fan_in or fan_average");
    }
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

TrainConfig TrainConfig::parse(const std::string& text, TrainConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = text::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    base.set(text::trim(line.substr(0, eq)), text::trim(line.substr(eq + 1)));
  }
  return base;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), base);
}

std::string TrainConfig::to_text() const {
  std::ostringstream out;
  out.precision(17);
  out << "learning_rate=" << learning_rate << "\n"
      << "dropout_keep=" << dropout_keep << "\n"
      << "l2=" << l2 << "\n"
      << "clip_value=" << clip_value << "\n"
      << "dim=" << dim << "\n"
      << "epochs=" << epochs << "\n"
      << "batch_size=" << batch_size << "\n"
      << "seed=" << seed << "\n"
      << "patience=" << patience << "\n"
      << "workers=" << workers << "\n"
      << "max_decode_len=" << max_decode_len << "\n"
      << "use_encoder_attention=" << (use_encoder_attention ? "true" : "false") << "\n"
      << "use_kb_attention=" << (use_kb_attention ? "true" : "false") << "\n"
      << "init=" << to_string(init) << "\n";
  return out.str();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate},
          {"dropout_keep", dropout_keep},
          {"l2", l2},
          {"clip_value", clip_value},
          {"dim", dim},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"seed", seed},
          {"patience", patience},
          {"workers", workers},
          {"max_decode_len", max_decode_len},
          {"use_encoder_attention", use_encoder_attention},
          {"use_kb_attention", use_kb_attention},
          {"init", std::string(to_string(init))}};
}

ModelConfig TrainConfig::model_config(const Vocabulary& vocab) const {
  ModelConfig m;
  m.dim = dim;
  m.vocab_size = vocab.size();
  m.base_vocab_size = vocab.base_size();
  m.use_encoder_attention = use_encoder_attention;
  m.use_kb_attention = use_kb_attention;
  return m;
}

// --------------------------------------------------------------------------
// Initialization and optimizer

ModelParams init_params(const ModelConfig& config, std::uint64_t seed, InitScheme scheme) {
  ModelParams params(config);
  std::mt19937_64 rng(seed);
  const auto specs = param_specs(config);
  for (std::size_t i = 0; i < kParamCount; ++i) {
    const auto& spec = specs[i];
    Tensor& t = params.tensors()[i];
    if (spec.role == ParamRole::bias) {
      t.fill(0.0);
      continue;
    }
    double fan = static_cast<double>(spec.fan_in);
    double numerator = 3.0;
    if (scheme == InitScheme::fan_average && spec.role == ParamRole::weight) {
      const double fan_out = spec.shape.size() == 2 ? static_cast<double>(spec.shape[0]) : 1.0;
      fan = fan + fan_out;
      numerator = 6.0;
    }
    std::uniform_real_distribution<double> dist(-std::sqrt(numerator / fan), std::sqrt(numerator / fan));
    for (auto& v : t.values()) v = dist(rng);
  }
  for (Param b : {Param::enc_b, Param::dec_b}) {
    Tensor& bias = params[b];
    for (std::size_t j = config.dim; j < 2 * config.dim; ++j) bias[j] = 1.0;
  }
  return params;
}

double global_norm(std::span<const Tensor> grads) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double v : g.values()) sq += v * v;
  }
  return std::sqrt(sq);
}

double clip_gradients(std::span<Tensor> grads, double clip_value, std::size_t step) {
  for (std::size_t i = 0; i < grads.size(); ++i) {
    for (double v : grads[i].values()) {
      if (!std::isfinite(v)) {
        throw TrainingError("non-finite gradient in tensor " + std::to_string(i) + " at step " + std::to_string(step));
      }
    }
  }
  const double norm = global_norm(grads);
  if (norm > clip_value) {
    const double factor = clip_value / norm;
    for (auto& g : grads) {
      for (auto& v : g.values()) v *= factor;
    }
  }
  return norm;
}

AdamState::AdamState(std::span<const Tensor> params) {
  for (const auto& p : params) {
    first.push_back(Tensor::zeros_like(p));
    second.push_back(Tensor::zeros_like(p));
  }
}

void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state, double learning_rate) {
  if (params.size() != grads.size() || params.size() != state.first.size()) {
    throw DimensionError("adam_step: parameter, gradient and state counts differ");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].same_shape(grads[i]) || !params[i].same_shape(state.first[i])) {
      throw DimensionError("adam_step: shape mismatch at tensor " + std::to_string(i));
    }
    auto p = params[i].values();
    auto g = grads[i].values();
    auto m = state.first[i].values();
    auto v = state.second[i].values();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      p[k] -= learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

ExampleGradient example_gradient(const Model& model, const Example& example, const LossOptions& options) {
  ag::Tape tape;
  auto bound = net::bind(tape, model.params());
  ag::Var loss = model.sequence_loss(bound, example, options);
  tape.backward(loss);
  ExampleGradient out;
  out.loss = loss.value()[0];
  out.grads.reserve(kParamCount);
  for (std::size_t i = 0; i < kParamCount; ++i) out.grads.push_back(tape.gradient(bound.vars[i]));
  return out;
}

// --------------------------------------------------------------------------
// Evaluation

EvalResult evaluate(const Model& model, std::span<const Example> examples, const Vocabulary& vocab,
                    const Lexicon& lexicon, const EvalOptions& options) {
  EvalResult r;
  if (examples.empty()) return r;
  const EntityDetector detector(&vocab, &lexicon);
  double loss_sum = 0.0;
  for (const auto& ex : examples) {
    if (options.compute_loss) {
      ag::Tape tape;
      loss_sum += model.sequence_loss(tape, ex).value()[0];
    }
    if (options.decode) {
      auto decoded = model.decode_greedy(ex.context, ex.kb, options.max_decode_len);
      if (decoded.truncated) ++r.truncated;
      std::vector<std::string> predicted;
      predicted.reserve(decoded.tokens.size());
      for (auto id : decoded.tokens) predicted.push_back(vocab.token(id));
      r.pairs.push_back(make_eval_pair(ex.gold_tokens, std::move(predicted), ex.domain, detector, ex.store.get()));
    }
  }
  r.loss = loss_sum / static_cast<double>(examples.size());
  if (options.decode) r.scores = score(r.pairs);
  return r;
}

double token_accuracy(const Model& model, std::span<const Example> examples) {
  std::size_t correct = 0, total = 0;
  for (const auto& ex : examples) {
    auto predicted = model.teacher_forced_argmax(ex);
    for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == ex.response[i];
    total += predicted.size();
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

nlohmann::json EpochMetrics::to_json() const {
  nlohmann::json per_domain;
  for (Domain d : kAllDomains) per_domain[std::string(kvret::to_string(d))] = per_domain_f1[static_cast<std::size_t>(d)];
  return {{"epoch", epoch},
          {"train_loss", train_loss},
          {"val_loss", val_loss},
          {"val_bleu", val_bleu},
          {"val_entity_f1", val_entity_f1},
          {"per_domain_f1", per_domain}};
}

// --------------------------------------------------------------------------
// Training loop

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b),
                    static_cast<std::uint32_t>(b >> 32), static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

void accumulate(std::vector<Tensor>& into, const std::vector<Tensor>& grads) {
  for (std::size_t i = 0; i < into.size(); ++i) {
    auto dst = into[i].values();
    auto src = grads[i].values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
}

bool better(double f1, double loss, double best_f1, double best_loss) {
  return f1 > best_f1 || (f1 == best_f1 && loss < best_loss);
}

}  // namespace

TrainResult train(const TrainData& data, const TrainConfig& config, const TrainOptions& options) {
  if (!data.vocab || !data.lexicon) throw ContractError("train: vocabulary and lexicon are required");
  TrainResult result;
  result.model_config = config.model_config(*data.vocab);
  Model model(result.model_config, init_params(result.model_config, config.seed, config.init));
  result.best_params = model.params();
  result.best_val_f1 = -1.0;
  result.best_val_loss = std::numeric_limits<double>::infinity();

  std::ofstream metrics_log;
  if (options.run_dir) {
    std::filesystem::create_directories(*options.run_dir);
    metrics_log.open(*options.run_dir / "metrics.jsonl", std::ios::trunc);
    if (!metrics_log) throw IoError("cannot write " + (*options.run_dir / "metrics.jsonl").string());
  }
  auto save_best = [&](std::size_t epoch) {
    if (!options.run_dir) return;
    Checkpoint ckpt{result.model_config, result.best_params, *data.vocab, *data.lexicon,
                    {{"train_config", config.to_json()}, {"epoch", epoch}}};
    if (epoch > 0) {
      ckpt.metadata["val_entity_f1"] = result.best_val_f1;
      ckpt.metadata["val_loss"] = result.best_val_loss;
    }
    save_checkpoint(ckpt, *options.run_dir / "best.ckpt");
  };

  const std::size_t n = data.train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 shuffle_rng(mix_seed(config.seed, 0x5eed, 0));
  AdamState adam(model.params().tensors());
  std::size_t since_improvement = 0;
  const std::size_t workers = std::max<std::size_t>(1, config.workers);

  for (std::size_t epoch = 1; epoch <= config.epochs && n > 0; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, n - start);
      std::vector<ExampleGradient> results(count);
      auto work = [&](std::size_t w) {
        for (std::size_t k = w; k < count; k += workers) {
          const std::size_t idx = order[start + k];
          DropoutSampler dropout(config.dropout_keep, mix_seed(config.seed, epoch, idx));
          results[k] = example_gradient(model, data.train[idx], {config.l2, &dropout});
        }
      };
      if (workers == 1 || count == 1) {
        work(0);
      } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < std::min(workers, count); ++w) pool.emplace_back(work, w);
      }
      std::vector<Tensor> grads = std::move(results[0].grads);
      double batch_loss = results[0].loss;
      for (std::size_t k = 1; k < count; ++k) {
        accumulate(grads, results[k].grads);
        batch_loss += results[k].loss;
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainingError("training diverged at epoch " + std::to_string(epoch) + " (loss " +
                            std::to_string(batch_loss) + "); config: " + config.to_json().dump());
      }
      if (count > 1) {
        for (auto& g : grads) {
          for (auto& v : g.values()) v /= static_cast<double>(count);
        }
      }
      clip_gradients(grads, config.clip_value, adam.step + 1);
      adam_step(model.params().tensors(), grads, adam, config.learning_rate);
      loss_sum += batch_loss;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(n);
    if (!data.validation.empty()) {
      auto eval = evaluate(model, data.validation, *data.vocab, *data.lexicon, {config.max_decode_len, true, true});
      m.val_loss = eval.loss;
      m.val_bleu = eval.scores.bleu;
      m.val_entity_f1 = eval.scores.entity.f1;
      for (std::size_t d = 0; d < 3; ++d) m.per_domain_f1[d] = eval.scores.per_domain[d].f1;
    }
    result.log.push_back(m);
    if (metrics_log.is_open()) metrics_log << m.to_json().dump() << "\n" << std::flush;
    if (options.on_epoch) options.on_epoch(m);
    spdlog::info("epoch {} train_loss {:.4f} val_loss {:.4f} val_bleu {:.2f} val_f1 {:.4f}", epoch, m.train_loss,
                 m.val_loss, m.val_bleu, m.val_entity_f1);

    const bool improved = data.validation.empty() || better(m.val_entity_f1, m.val_loss, result.best_val_f1, result.best_val_loss);
    if (improved) {
      result.best_params = model.params();
      result.best_epoch = epoch;
      result.best_val_f1 = m.val_entity_f1;
      result.best_val_loss = m.val_loss;
      since_improvement = 0;
      save_best(epoch);
    } else if (config.patience > 0 && ++since_improvement >= config.patience) {
      spdlog::info("early stop after epoch {} (best epoch {})", epoch, result.best_epoch);
      break;
    }
  }
  if (result.best_epoch == 0) {
    result.best_val_f1 = 0.0;
    result.best_val_loss = 0.0;
    save_best(0);
  }
  return result;
}

SearchResult random_search(const TrainData& data, const TrainConfig& base, std::size_t trials,
                           const SearchRanges& ranges, std::uint64_t search_seed,
                           const std::function<void(std::size_t, const TrialResult&)>& on_trial) {
  if (trials == 0) throw ContractError("random_search: trials must be at least 1");
  std::mt19937_64 rng(search_seed);
  auto draw = [&](const std::array<double, 2>& r) {
    return r[0] == r[1] ? r[0] : std::uniform_real_distribution<double>(r[0], r[1])(rng);
  };
  SearchResult out;
  for (std::size_t t = 0; t < trials; ++t) {
    TrialResult trial;
    trial.config = base;
    trial.config.learning_rate = draw(ranges.learning_rate);
    trial.config.dropout_keep = draw(ranges.dropout_keep);
    trial.config.l2 = draw(ranges.l2);
    auto r = train(data, trial.config);
    trial.val_f1 = r.best_val_f1;
    trial.val_loss = r.best_val_loss;
    trial.best_epoch = r.best_epoch;
    spdlog::info("trial {} lr {:.3g} keep {:.3f} l2 {:.3g}: val_f1 {:.4f} val_loss {:.4f}", t, trial.config.learning_rate,
                 trial.config.dropout_keep, trial.config.l2, trial.val_f1, trial.val_loss);
    if (on_trial) on_trial(t, trial);
    if (t == 0 || better(trial.val_f1, trial.val_loss, out.trials[out.best_index].val_f1,
                         out.trials[out.best_index].val_loss)) {
      out.best_index = t;
    }
    out.trials.push_back(trial);
  }
  out.best = out.trials[out.best_index].config;
  return out;
}

}  // namespace kvret
