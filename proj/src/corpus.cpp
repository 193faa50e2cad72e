#include "kvret/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <spdlog/spdlog.h>

#include "kvret/text.hpp"

namespace kvret {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string content = ss.str();
  if (text::trim(content).empty()) return json::array();
  try {
    return json::parse(content);
  } catch (const json::parse_error& e) {
    throw IoError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

std::string record_id(const json& rec, std::size_t index) {
  if (rec.is_object()) {
    if (rec.contains("scenario") && rec["scenario"].is_object() && rec["scenario"].contains("uuid") &&
        rec["scenario"]["uuid"].is_string()) {
      return rec["scenario"]["uuid"].get<std::string>();
    }
    if (rec.contains("id") && rec["id"].is_string()) return rec["id"].get<std::string>();
  }
  return "dialogue-" + std::to_string(index);
}

Dialogue parse_record(const json& rec, const std::string& id) {
  if (!rec.is_object()) throw DataError("record is not an object");
  if (!rec.contains("scenario") || !rec["scenario"].is_object()) throw DataError("missing scenario");
  const auto& scenario = rec["scenario"];
  if (!scenario.contains("task") || !scenario["task"].contains("intent") || !scenario["task"]["intent"].is_string()) {
    throw DataError("missing scenario.task.intent");
  }
  auto domain = parse_domain(scenario["task"]["intent"].get<std::string>());
  if (!domain) throw DataError("unknown domain '" + scenario["task"]["intent"].get<std::string>() + "'");

  Dialogue d;
  d.id = id;
  d.domain = *domain;
  try {
    d.kb = parse_kb(scenario.contains("kb") ? scenario["kb"] : json(), *domain);
  } catch (const KbValidationError& e) {
    std::string msg = e.what();
    for (const auto& p : e.problems()) msg += "; " + p;
    throw DataError(msg);
  }

  if (!rec.contains("dialogue") || !rec["dialogue"].is_array()) throw DataError("missing dialogue array");
  for (std::size_t i = 0; i < rec["dialogue"].size(); ++i) {
    const auto& t = rec["dialogue"][i];
    if (!t.is_object() || !t.contains("turn") || !t["turn"].is_string()) {
      throw DataError("turn " + std::to_string(i) + ": missing speaker");
    }
    auto speaker = parse_speaker(t["turn"].get<std::string>());
    if (!speaker) throw DataError("turn " + std::to_string(i) + ": unknown speaker '" + t["turn"].get<std::string>() + "'");
    const Speaker expected = i % 2 == 0 ? Speaker::driver : Speaker::assistant;
    if (*speaker != expected) {
      throw DataError("turn " + std::to_string(i) + ": expected " + std::string(to_string(expected)) + ", got " +
                      std::string(to_string(*speaker)));
    }
    if (!t.contains("data") || !t["data"].contains("utterance") || !t["data"]["utterance"].is_string()) {
      throw DataError("turn " + std::to_string(i) + ": missing utterance");
    }
    Turn turn;
    turn.speaker = *speaker;
    turn.utterance = t["data"]["utterance"].get<std::string>();
    turn.tokens = text::tokenize(turn.utterance);
    if (t["data"].contains("slots") && t["data"]["slots"].is_object()) {
      for (auto it = t["data"]["slots"].begin(); it != t["data"]["slots"].end(); ++it) {
        if (it.value().is_string()) turn.slots[it.key()] = it.value().get<std::string>();
      }
    }
    d.turns.push_back(std::move(turn));
  }
  return d;
}

void collect_entities(const json& j, std::vector<std::string>& out) {
  if (j.is_string()) {
    out.push_back(j.get<std::string>());
  } else if (j.is_array() || j.is_object()) {
    for (const auto& v : j) collect_entities(v, out);
  }
}

void append(LoadResult& into, LoadResult part) {
  for (auto& e : part.errors) e.index += into.dialogues.size() + into.errors.size();
  into.dialogues.insert(into.dialogues.end(), std::make_move_iterator(part.dialogues.begin()),
                        std::make_move_iterator(part.dialogues.end()));
  into.errors.insert(into.errors.end(), part.errors.begin(), part.errors.end());
}

std::vector<std::string> ids_of(const json& j, const char* key) {
  if (!j.contains(key)) return {};
  return j[key].get<std::vector<std::string>>();
}

}  // namespace

LoadResult parse_corpus(const json& records) {
  LoadResult result;
  if (records.is_null()) return result;
  if (!records.is_array()) throw DataError("corpus: top level must be an array of dialogues");
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::string id = record_id(records[i], i);
    try {
      result.dialogues.push_back(parse_record(records[i], id));
    } catch (const DataError& e) {
      result.errors.push_back({i, id, e.what()});
    } catch (const json::exception& e) {
      result.errors.push_back({i, id, e.what()});
    }
  }
  return result;
}

LoadResult load_corpus(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("corpus path does not exist: " + path.string());
  if (!fs::is_directory(path)) return parse_corpus(read_json(path));

  LoadResult result;
  const fs::path released[] = {path / "kvret_train_public.json", path / "kvret_dev_public.json",
                               path / "kvret_test_public.json"};
  if (std::all_of(std::begin(released), std::end(released), [](const fs::path& p) { return fs::exists(p); })) {
    SplitManifest manifest;
    std::vector<std::string>* targets[] = {&manifest.train, &manifest.dev, &manifest.test};
    for (int s = 0; s < 3; ++s) {
      auto part = parse_corpus(read_json(released[s]));
      for (const auto& d : part.dialogues) targets[s]->push_back(d.id);
      append(result, std::move(part));
    }
    result.manifest = std::move(manifest);
  } else if (fs::exists(path / "corpus.json")) {
    result = parse_corpus(read_json(path / "corpus.json"));
    if (fs::exists(path / "splits.json")) {
      auto m = read_json(path / "splits.json");
      result.manifest = SplitManifest{ids_of(m, "train"), ids_of(m, "dev"), ids_of(m, "test")};
    }
  } else {
    throw IoError("no corpus files found in " + path.string());
  }
  for (const char* name : {"kvret_entities.json", "entities.json"}) {
    if (fs::exists(path / name)) collect_entities(read_json(path / name), result.extra_entities);
  }
  return result;
}

// --------------------------------------------------------------------------
// Canonicalization

namespace {

std::size_t focus_score(const KbTriple& t, const std::set<std::string>& focus) {
  const bool subject = !t.subject.empty() && std::all_of(t.subject.begin(), t.subject.end(),
                                                         [&](const std::string& s) { return focus.count(s); });
  const bool relation = std::any_of(t.relation.begin(), t.relation.end(),
                                    [&](const std::string& s) { return focus.count(s); });
  return (subject ? 2 : 0) + (relation ? 1 : 0);
}

}  // namespace

std::vector<std::string> canonicalize(std::span<const std::string> tokens, const Lexicon& lexicon,
                                      const TripleStore& store, const std::set<std::string>& focus,
                                      std::vector<EntityMatch>* matches) {
  std::vector<std::string> out;
  const std::size_t max_len = lexicon.max_surface_tokens();
  std::size_t i = 0;
  while (i < tokens.size()) {
    bool matched = false;
    for (std::size_t len = std::min(max_len, tokens.size() - i); len >= 1; --len) {
      const std::string surface = text::join(tokens.subspan(i, len));
      const std::string* entity = lexicon.entity_for(surface);
      if (!entity) continue;
      EntityMatch m{i, len, surface, *entity, {}, false};
      auto candidates = store.positions_of_object(*entity);
      if (!candidates.empty()) {
        std::size_t best = candidates.front(), best_score = focus_score(store[best], focus);
        for (auto c : candidates) {
          auto s = focus_score(store[c], focus);
          if (s > best_score) best = c, best_score = s;
        }
        m.token = store[best].canonical_token;
        m.from_kb = true;
      } else {
        m.token = Lexicon::entity_token(*entity);
      }
      out.push_back(m.token);
      if (matches) matches->push_back(std::move(m));
      i += len;
      matched = true;
      break;
    }
    if (!matched) out.push_back(tokens[i++]);
  }
  return out;
}

std::vector<EntityMatch> canonicalize_dialogue(Dialogue& d, const Lexicon& lexicon) {
  const TripleStore store = normalize_kb(d.kb, d.domain);
  std::set<std::string> focus;
  std::vector<EntityMatch> all;
  for (auto& turn : d.turns) {
    focus.insert(turn.tokens.begin(), turn.tokens.end());
    turn.tokens = canonicalize(turn.tokens, lexicon, store, focus, &all);
  }
  return all;
}

Lexicon build_lexicon(std::span<const Dialogue> dialogues, std::span<const std::string> extra) {
  Lexicon lex;
  for (const auto& d : dialogues) {
    for (std::size_t r = 0; r < d.kb.rows.size(); ++r)
      for (const auto& c : d.kb.columns) lex.add_entity(normalize_value(d.kb.cell(r, c)));
    for (const auto& t : d.turns)
      for (const auto& [slot, value] : t.slots) lex.add_entity(normalize_value(value));
  }
  for (const auto& e : extra) lex.add_entity(normalize_value(e));
  return lex;
}

Vocabulary build_vocabulary(std::span<const Dialogue> train, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  std::set<std::string> canonical, key_tokens;
  for (const auto& d : train) {
    const TripleStore store = normalize_kb(d.kb, d.domain);
    for (const auto& t : store.triples()) {
      if (t.targetable) canonical.insert(t.canonical_token);
      key_tokens.insert(t.subject.begin(), t.subject.end());
      key_tokens.insert(t.relation.begin(), t.relation.end());
    }
    for (const auto& turn : d.turns)
      for (const auto& tok : turn.tokens) ++counts[tok];
  }
  std::set<std::string> base(key_tokens.begin(), key_tokens.end());
  for (const auto& [tok, n] : counts)
    if (n >= min_count) base.insert(tok);
  for (const char* s : Vocabulary::kSpecials) base.erase(s);
  for (const auto& c : canonical) base.erase(c);
  return Vocabulary({base.begin(), base.end()}, {canonical.begin(), canonical.end()});
}

// --------------------------------------------------------------------------
// Splits

Splits split(std::span<const Dialogue> dialogues, std::uint64_t seed) {
  Splits out;
  std::mt19937_64 rng(seed);
  std::vector<int> assignment(dialogues.size(), 0);
  for (auto domain : kAllDomains) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < dialogues.size(); ++i)
      if (dialogues[i].domain == domain) idx.push_back(i);
    if (idx.empty()) continue;
    if (idx.size() < 10) {
      out.warnings.push_back("domain " + std::string(to_string(domain)) + " has only " + std::to_string(idx.size()) +
                             " dialogues; split ratios are approximate");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = static_cast<double>(idx.size());
    const std::size_t n_train = std::min(idx.size(), static_cast<std::size_t>(std::lround(0.8 * n)));
    const std::size_t n_val = std::min(idx.size() - n_train, static_cast<std::size_t>(std::lround(0.1 * n)));
    for (std::size_t k = 0; k < idx.size(); ++k) assignment[idx[k]] = k < n_train ? 0 : (k < n_train + n_val ? 1 : 2);
  }
  for (std::size_t i = 0; i < dialogues.size(); ++i) {
    auto& target = assignment[i] == 0 ? out.train : (assignment[i] == 1 ? out.validation : out.test);
    target.push_back(dialogues[i]);
  }
  return out;
}

Splits apply_manifest(std::span<const Dialogue> dialogues, const SplitManifest& manifest) {
  std::map<std::string, int> where;
  for (const auto& id : manifest.train) where[id] = 0;
  for (const auto& id : manifest.dev) where[id] = 1;
  for (const auto& id : manifest.test) where[id] = 2;
  Splits out;
  for (const auto& d : dialogues) {
    auto it = where.find(d.id);
    if (it == where.end()) {
      out.warnings.push_back("dialogue " + d.id + " is not listed in the split manifest; dropped");
      continue;
    }
    (it->second == 0 ? out.train : it->second == 1 ? out.validation : out.test).push_back(d);
  }
  return out;
}

PreparedCorpus prepare(const LoadResult& loaded, const PrepareOptions& options) {
  PreparedCorpus pc;
  pc.lexicon = build_lexicon(loaded.dialogues, loaded.extra_entities);
  pc.splits = loaded.manifest ? apply_manifest(loaded.dialogues, *loaded.manifest) : split(loaded.dialogues, options.seed);
  for (auto* part : {&pc.splits.train, &pc.splits.validation}) {
    for (auto& d : *part)
      for (const auto& m : canonicalize_dialogue(d, pc.lexicon)) pc.lexicon.observe(m.entity, m.surface);
  }
  for (auto& d : pc.splits.test) canonicalize_dialogue(d, pc.lexicon);
  pc.lexicon.finalize_counts();
  pc.vocabulary = build_vocabulary(pc.splits.train, options.min_count);
  return pc;
}

// --------------------------------------------------------------------------
// Persistence

json dialogue_to_json(const Dialogue& d) {
  json turns = json::array();
  for (const auto& t : d.turns) {
    turns.push_back({{"speaker", to_string(t.speaker)}, {"utterance", t.utterance}, {"tokens", t.tokens}});
  }
  return {{"id", d.id}, {"domain", to_string(d.domain)}, {"kb", kb_to_json(d.kb)}, {"turns", turns}};
}

Dialogue dialogue_from_json(const json& j) {
  Dialogue d;
  d.id = j.at("id").get<std::string>();
  auto domain = parse_domain(j.at("domain").get<std::string>());
  if (!domain) throw DataError("dialogue " + d.id + ": unknown domain");
  d.domain = *domain;
  d.kb = parse_kb(j.at("kb"), d.domain);
  for (const auto& t : j.at("turns")) {
    Turn turn;
    auto speaker = parse_speaker(t.at("speaker").get<std::string>());
    if (!speaker) throw DataError("dialogue " + d.id + ": unknown speaker");
    turn.speaker = *speaker;
    turn.utterance = t.value("utterance", "");
    turn.tokens = t.at("tokens").get<std::vector<std::string>>();
    d.turns.push_back(std::move(turn));
  }
  return d;
}

void save_prepared(const PreparedCorpus& corpus, const fs::path& dir) {
  fs::create_directories(dir);
  const std::pair<const char*, const std::vector<Dialogue>*> parts[] = {
      {"train.json", &corpus.splits.train}, {"dev.json", &corpus.splits.validation}, {"test.json", &corpus.splits.test}};
  for (const auto& [name, dialogues] : parts) {
    json arr = json::array();
    for (const auto& d : *dialogues) arr.push_back(dialogue_to_json(d));
    write_json(dir / name, arr);
  }
  write_json(dir / "vocab.json", corpus.vocabulary.to_json());
  write_json(dir / "lexicon.json", corpus.lexicon.to_json());
}

PreparedCorpus load_prepared(const fs::path& dir) {
  PreparedCorpus pc;
  std::vector<Dialogue>* parts[] = {&pc.splits.train, &pc.splits.validation, &pc.splits.test};
  const char* names[] = {"train.json", "dev.json", "test.json"};
  for (int i = 0; i < 3; ++i) {
    for (const auto& j : read_json(dir / names[i])) parts[i]->push_back(dialogue_from_json(j));
  }
  pc.vocabulary = Vocabulary::from_json(read_json(dir / "vocab.json"));
  pc.lexicon = Lexicon::from_json(read_json(dir / "lexicon.json"));
  return pc;
}

}  // namespace kvret
