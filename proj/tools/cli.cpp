#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "kvret/checkpoint.hpp"
#include "kvret/corpus.hpp"
#include "kvret/metrics.hpp"
#include "kvret/server.hpp"
#include "kvret/synthetic.hpp"
#include "kvret/text.hpp"
#include "kvret/trainer.hpp"

namespace kvret::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string data_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("KVRET_DATA_DIR"); env && *env) return env;
  throw UsageError("--data is required (or set KVRET_DATA_DIR)");
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::vector<Dialogue>& pick_split(PreparedCorpus& corpus, const std::string& split) {
  if (split == "train") return corpus.splits.train;
  if (split == "dev" || split == "validation") return corpus.splits.validation;
  if (split == "test") return corpus.splits.test;
  throw UsageError("--split must be train, dev or test");
}

TrainConfig apply_overrides(TrainConfig config, const std::vector<std::string>& sets) {
  for (const auto& kv : sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    config.set(text::trim(kv.substr(0, eq)), text::trim(kv.substr(eq + 1)));
  }
  return config;
}

Domain domain_or_throw(const std::string& s) {
  auto d = parse_domain(s);
  if (!d) throw UsageError("unknown domain '" + s + "' (schedule, weather or navigate)");
  return *d;
}

// ---------------------------------------------------------------------------

struct PreprocessArgs {
  std::string corpus, out;
  std::uint64_t seed = 1;
  std::size_t min_count = 1;
};

int preprocess(const PreprocessArgs& a, std::ostream& out) {
  const fs::path corpus_path = data_root(a.corpus);
  auto loaded = load_corpus(corpus_path);
  for (const auto& e : loaded.errors) spdlog::warn("record {} ({}): {}", e.index, e.dialogue_id, e.message);
  auto prepared = prepare(loaded, {a.seed, a.min_count});
  for (const auto& w : prepared.splits.warnings) spdlog::warn("{}", w);
  save_prepared(prepared, a.out);
  json stats = {{"dialogues", loaded.dialogues.size()},
                {"rejected", loaded.errors.size()},
                {"train", prepared.splits.train.size()},
                {"dev", prepared.splits.validation.size()},
                {"test", prepared.splits.test.size()},
                {"vocab_size", prepared.vocabulary.size()},
                {"base_vocab_size", prepared.vocabulary.base_size()},
                {"canonical_tokens", prepared.vocabulary.kb_size()}};
  write_text(fs::path(a.out) / "stats.json", stats.dump(2) + "\n");
  out << stats.dump(2) << "\n";
  return 0;
}

struct TrainArgs {
  std::string data, config, out;
  std::vector<std::string> sets;
};

TrainData train_data(const PreparedCorpus& corpus) {
  TrainData d;
  d.train = make_examples(corpus.splits.train, corpus.vocabulary);
  d.validation = make_examples(corpus.splits.validation, corpus.vocabulary);
  d.vocab = &corpus.vocabulary;
  d.lexicon = &corpus.lexicon;
  return d;
}

int train_cmd(const TrainArgs& a, std::ostream& out) {
  TrainConfig config = a.config.empty() ? TrainConfig{} : TrainConfig::load(a.config, TrainConfig{});
  config = apply_overrides(config, a.sets);
  auto corpus = load_prepared(data_root(a.data));
  auto data = train_data(corpus);
  spdlog::info("training on {} examples, validating on {}", data.train.size(), data.validation.size());
  TrainOptions options;
  options.run_dir = a.out;
  auto result = train(data, config, options);
  write_text(fs::path(a.out) / "config.txt", config.to_text());
  out << json{{"best_epoch", result.best_epoch},
              {"best_val_entity_f1", result.best_val_f1},
              {"best_val_loss", result.best_val_loss},
              {"checkpoint", (fs::path(a.out) / "best.ckpt").string()}}
             .dump(2)
      << "\n";
  return 0;
}

struct SearchArgs {
  std::string data, config, out = "best_config.txt";
  std::size_t trials = 10;
  std::uint64_t seed = 1;
  std::vector<std::string> sets;
};

int search_cmd(const SearchArgs& a, std::ostream& out) {
  TrainConfig base = a.config.empty() ? TrainConfig{} : TrainConfig::load(a.config, TrainConfig{});
  base = apply_overrides(base, a.sets);
  auto corpus = load_prepared(data_root(a.data));
  auto data = train_data(corpus);
  json trials = json::array();
  auto result = random_search(data, base, a.trials, {}, a.seed, [&](std::size_t i, const TrialResult& t) {
    trials.push_back({{"trial", i},
                      {"learning_rate", t.config.learning_rate},
                      {"dropout_keep", t.config.dropout_keep},
                      {"l2", t.config.l2},
                      {"val_entity_f1", t.val_f1},
                      {"val_loss", t.val_loss},
                      {"best_epoch", t.best_epoch}});
  });
  write_text(a.out, result.best.to_text());
  out << json{{"best_trial", result.best_index}, {"config_file", a.out}, {"trials", trials}}.dump(2) << "\n";
  return 0;
}

struct EvalArgs {
  std::string data, ckpt, ablation = "full", split = "test", pairs_out;
  std::size_t max_len = 40;
};

int eval_cmd(const EvalArgs& a, std::ostream& out) {
  auto ckpt = load_checkpoint(a.ckpt);
  auto corpus = load_prepared(data_root(a.data));
  if (!(corpus.vocabulary == ckpt.vocabulary)) throw DataError("checkpoint vocabulary differs from the data directory's");
  ModelConfig config = ckpt.config;
  if (a.ablation == "enc-only") {
    config.use_kb_attention = false;
  } else if (a.ablation == "kb-only") {
    config.use_encoder_attention = false;
  } else if (a.ablation != "full") {
    throw UsageError("--ablation must be enc-only, kb-only or full");
  }
  Model model(config, ckpt.params);
  auto examples = make_examples(pick_split(corpus, a.split), ckpt.vocabulary);
  auto result = evaluate(model, examples, ckpt.vocabulary, ckpt.lexicon, {a.max_len, true, true});
  json report = result.scores.to_json();
  report["corpus_bleu"] = corpus_bleu(result.pairs);
  report["loss"] = result.loss;
  report["responses"] = result.pairs.size();
  report["truncated"] = result.truncated;
  report["ablation"] = a.ablation;
  report["split"] = a.split;
  if (!a.pairs_out.empty()) {
    json pairs = json::array();
    for (const auto& p : result.pairs) {
      pairs.push_back({{"gold", p.gold},
                       {"predicted", p.predicted},
                       {"domain", to_string(p.domain)},
                       {"gold_entities", p.gold_entities},
                       {"predicted_entities", p.predicted_entities}});
    }
    write_text(a.pairs_out, pairs.dump(1) + "\n");
  }
  out << report.dump(2) << "\n";
  return 0;
}

struct ScoreArgs {
  std::string pairs, data;
};

int score_cmd(const ScoreArgs& a, std::ostream& out) {
  const json input = read_json_file(a.pairs);
  if (!input.is_array()) throw DataError(a.pairs + ": expected an array of {gold, predicted, domain}");
  std::optional<PreparedCorpus> corpus;
  if (!a.data.empty()) corpus = load_prepared(a.data);
  std::vector<EvalPair> pairs;
  for (const auto& j : input) {
    auto tokens = [&](const char* key) {
      const auto& v = j.at(key);
      return v.is_string() ? text::tokenize(v.get<std::string>()) : v.get<std::vector<std::string>>();
    };
    const Domain domain = domain_or_throw(j.at("domain").get<std::string>());
    if (j.contains("gold_entities") && j.contains("predicted_entities")) {
      EvalPair p{tokens("gold"), tokens("predicted"), domain, j["gold_entities"].get<std::set<std::string>>(),
                 j["predicted_entities"].get<std::set<std::string>>()};
      pairs.push_back(std::move(p));
    } else if (corpus) {
      EntityDetector detector(&corpus->vocabulary, &corpus->lexicon);
      pairs.push_back(make_eval_pair(tokens("gold"), tokens("predicted"), domain, detector));
    } else {
      throw UsageError("pairs without gold_entities/predicted_entities need --data for entity detection");
    }
  }
  json report = score(pairs).to_json();
  out << report.dump(2) << "\n";
  return 0;
}

struct ServeArgs {
  std::string ckpt, host = "127.0.0.1", cors = "*";
  int port = 8080;
  std::size_t max_len = 40;
  bool reject_concurrent = false;
};

int serve_cmd(const ServeArgs& a) {
  ChatService service({a.max_len, a.reject_concurrent});
  service.add_model(fs::path(a.ckpt).stem().string(), std::make_shared<const Checkpoint>(load_checkpoint(a.ckpt)));
  HttpServer server(service, {a.host, a.port, a.cors});
  if (!server.listen()) throw IoError("cannot listen on " + a.host + ":" + std::to_string(a.port));
  return 0;
}

struct ChatArgs {
  std::string ckpt, kb, domain;
  std::uint64_t seed = 1;
  std::size_t max_len = 40;
  bool show_canonical = false;
};

int chat_cmd(const ChatArgs& a, std::istream& in, std::ostream& out) {
  ChatService service({a.max_len, false});
  service.add_model("model", std::make_shared<const Checkpoint>(load_checkpoint(a.ckpt)));
  json kb = read_json_file(a.kb);
  std::string domain = a.domain;
  if (domain.empty() && kb.is_object() && kb.contains("domain")) domain = kb["domain"].get<std::string>();
  if (domain.empty()) throw UsageError("--domain is required when the KB file has no \"domain\" field");
  if (kb.is_object() && kb.contains("kb")) kb = kb["kb"];
  const auto id = service.create_session(kb, domain_or_throw(domain), std::nullopt, a.seed);
  out << "session " << id << " (" << service.triple_count(id) << " triples); empty line or EOF ends the chat\n";
  std::string line;
  while (out << "driver> " << std::flush, std::getline(in, line)) {
    if (text::trim(line).empty()) break;
    auto reply = service.respond(id, line);
    out << "assistant> " << reply.reply << "\n";
    if (a.show_canonical) out << "  [" << text::join(reply.canonical) << "]\n";
    if (reply.truncated) out << "  (truncated)\n";
    for (const auto& u : reply.unresolved) out << "  (unresolved: " << u << ")\n";
  }
  out << "\n";
  return 0;
}

struct SyntheticArgs {
  std::string out;
  SyntheticOptions options;
};

int synthetic_cmd(const SyntheticArgs& a, std::ostream& out) {
  auto records = synthetic_records(a.options);
  json splits = {{"train", json::array()}, {"dev", json::array()}, {"test", json::array()}};
  for (std::size_t i = 0; i < records.size(); ++i) {
    const char* part = i < a.options.train ? "train" : i < a.options.train + a.options.validation ? "dev" : "test";
    splits[part].push_back(records[i]["scenario"]["uuid"]);
  }
  write_text(fs::path(a.out) / "corpus.json", records.dump(1) + "\n");
  write_text(fs::path(a.out) / "splits.json", splits.dump(1) + "\n");
  out << "wrote " << records.size() << " dialogues to " << a.out << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Key-value retrieval network for task-oriented dialogue", "kvret"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  PreprocessArgs pre;
  auto* p = app.add_subcommand("preprocess", "Canonicalize, split and build the vocabulary and lexicon");
  p->add_option("--corpus", pre.corpus, "Corpus file or directory (default: $KVRET_DATA_DIR)");
  p->add_option("--out", pre.out, "Output directory")->required();
  p->add_option("--seed", pre.seed, "Split seed");
  p->add_option("--min-count", pre.min_count, "Minimum token count for the base vocabulary");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model and keep the best validation checkpoint");
  t->add_option("--data", tr.data, "Preprocessed data directory (default: $KVRET_DATA_DIR)");
  t->add_option("--config", tr.config, "key=value config file");
  t->add_option("--out", tr.out, "Run directory")->required();
  t->add_option("--set", tr.sets, "Override a config key, key=value");

  SearchArgs se;
  auto* s = app.add_subcommand("search", "Random hyperparameter search on the validation split");
  s->add_option("--data", se.data, "Preprocessed data directory (default: $KVRET_DATA_DIR)");
  s->add_option("--trials", se.trials, "Number of trials")->check(CLI::PositiveNumber);
  s->add_option("--config", se.config, "Base key=value config file");
  s->add_option("--set", se.sets, "Override a base config key, key=value");
  s->add_option("--seed", se.seed, "Sampling seed");
  s->add_option("--out", se.out, "Where to write the best config");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score a checkpoint: BLEU and entity F1, aggregate and per domain");
  e->add_option("--data", ev.data, "Preprocessed data directory (default: $KVRET_DATA_DIR)");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint file")->required();
  e->add_option("--ablation", ev.ablation, "enc-only, kb-only or full")
      ->check(CLI::IsMember({"enc-only", "kb-only", "full"}));
  e->add_option("--split", ev.split, "train, dev or test")->check(CLI::IsMember({"train", "dev", "test"}));
  e->add_option("--max-len", ev.max_len, "Decoding length limit")->check(CLI::PositiveNumber);
  e->add_option("--pairs-out", ev.pairs_out, "Write gold/predicted pairs as JSON");

  ScoreArgs sc;
  auto* c = app.add_subcommand("score", "Score gold/predicted pairs from a JSON file");
  c->add_option("--pairs", sc.pairs, "JSON array of {gold, predicted, domain[, gold_entities, predicted_entities]}")
      ->required();
  c->add_option("--data", sc.data, "Preprocessed data directory used for entity detection");

  ServeArgs sv;
  auto* v = app.add_subcommand("serve", "Serve the chat API over HTTP");
  v->add_option("--ckpt", sv.ckpt, "Checkpoint file")->required();
  v->add_option("--port", sv.port, "Port")->check(CLI::Range(1, 65535));
  v->add_option("--host", sv.host, "Bind address");
  v->add_option("--cors-origin", sv.cors, "Allowed browser origin");
  v->add_option("--max-len", sv.max_len, "Decoding length limit")->check(CLI::PositiveNumber);
  v->add_flag("--reject-concurrent", sv.reject_concurrent, "Answer 409 instead of queuing per-session requests");

  ChatArgs ch;
  auto* h = app.add_subcommand("chat", "Interactive terminal chat against one KB");
  h->add_option("--ckpt", ch.ckpt, "Checkpoint file")->required();
  h->add_option("--kb", ch.kb, "KB JSON file")->required();
  h->add_option("--domain", ch.domain, "schedule, weather or navigate");
  h->add_option("--seed", ch.seed, "Realization seed");
  h->add_option("--max-len", ch.max_len, "Decoding length limit")->check(CLI::PositiveNumber);
  h->add_flag("--show-canonical", ch.show_canonical, "Print canonical responses too");

  SyntheticArgs sy;
  auto* y = app.add_subcommand("synthetic", "Write the templated retrieval corpus");
  y->add_option("--out", sy.out, "Output directory")->required();
  y->add_option("--seed", sy.options.seed, "Generator seed");
  y->add_option("--dialogues", sy.options.dialogues, "Total dialogues");
  y->add_option("--train", sy.options.train, "Training dialogues");
  y->add_option("--dev", sy.options.validation, "Validation dialogues");

  std::vector<std::string> argv_storage{"kvret"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_storage) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& ex) {
    app.exit(ex, out, err);
    return 0;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n\n" << app.help();
    return 2;
  }

  spdlog::set_level(spdlog::level::from_str(log_level));
  try {
    if (*p) return preprocess(pre, out);
    if (*t) return train_cmd(tr, out);
    if (*s) return search_cmd(se, out);
    if (*e) return eval_cmd(ev, out);
    if (*c) return score_cmd(sc, out);
    if (*v) return serve_cmd(sv);
    if (*h) return chat_cmd(ch, in, out);
    if (*y) return synthetic_cmd(sy, out);
  } catch (const UsageError& ex) {
    err << "error: " << ex.what() << "\n\n" << app.help();
    return 2;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace kvret::cli
