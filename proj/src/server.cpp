#include "kvret/server.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "kvret/corpus.hpp"
#include "kvret/text.hpp"

namespace kvret {

using nlohmann::json;

// --------------------------------------------------------------------------
// ChatService

json ChatReply::to_json() const {
  json kb = json::array();
  for (const auto& step : kb_attention) {
    json row = json::array();
    for (const auto& v : step) row.push_back(v ? json(*v) : json(nullptr));
    kb.push_back(std::move(row));
  }
  return {{"reply", reply},
          {"canonical", canonical},
          {"attention", {{"encoder", encoder_attention}, {"kb", kb}}},
          {"truncated", truncated},
          {"unresolved", unresolved}};
}

ChatService::ChatService(ChatOptions options) : options_(options), id_rng_(std::random_device{}()) {}

void ChatService::add_model(const std::string& id, std::shared_ptr<const Checkpoint> checkpoint) {
  std::unique_lock lock(sessions_mutex_);
  LoadedModel m;
  m.model = std::make_unique<Model>(checkpoint->config, checkpoint->params);
  m.checkpoint = std::move(checkpoint);
  if (models_.empty()) default_model_ = id;
  models_[id] = std::move(m);
}

std::vector<std::string> ChatService::model_ids() const {
  std::shared_lock lock(sessions_mutex_);
  std::vector<std::string> ids;
  for (const auto& [id, m] : models_) ids.push_back(id);
  return ids;
}

std::string ChatService::create_session(const json& kb, Domain domain, std::optional<std::string> model_id,
                                        std::uint64_t seed) {
  auto session = std::make_shared<Session>();
  try {
    session->kb = parse_kb(kb, domain);
  } catch (const KbValidationError& e) {
    throw ValidationError(e.what(), e.problems());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed KB: ") + e.what());
  }
  try {
    session->store = normalize_kb(session->kb, domain);
  } catch (const ConfigError& e) {
    throw ValidationError(e.what());
  }
  session->domain = domain;
  session->rng.seed(seed);

  std::unique_lock lock(sessions_mutex_);
  const std::string mid = model_id.value_or(default_model_);
  auto it = models_.find(mid);
  if (it == models_.end()) throw NotFoundError("unknown checkpoint '" + mid + "'");
  const Checkpoint& ckpt = *it->second.checkpoint;
  session->model_id = mid;
  session->encoded = encode_kb(session->store, ckpt.vocabulary);
  session->lexicon = ckpt.lexicon;
  for (std::size_t r = 0; r < session->kb.rows.size(); ++r) {
    for (const auto& c : session->kb.columns) session->lexicon.add_entity(normalize_value(session->kb.cell(r, c)));
  }
  std::string id;
  do {
    std::ostringstream s;
    s << std::hex << id_rng_();
    id = s.str();
  } while (sessions_.count(id));
  session->id = id;
  sessions_[id] = std::move(session);
  return id;
}

std::shared_ptr<ChatService::Session> ChatService::find(const std::string& id) const {
  std::shared_lock lock(sessions_mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("no session '" + id + "'");
  return it->second;
}

ChatReply ChatService::respond(const std::string& session_id, const std::string& utterance) {
  auto session = find(session_id);
  std::unique_lock<std::mutex> lock(session->mutex, std::defer_lock);
  if (options_.reject_concurrent) {
    if (!lock.try_lock()) throw BusyError("session '" + session_id + "' is handling another request");
  } else {
    lock.lock();
  }
  if (text::trim(utterance).empty()) throw ValidationError("empty utterance");

  const LoadedModel* loaded;
  {
    std::shared_lock models_lock(sessions_mutex_);
    loaded = &models_.at(session->model_id);
  }
  const Checkpoint& ckpt = *loaded->checkpoint;
  const Vocabulary& vocab = ckpt.vocabulary;

  auto tokens = text::tokenize(utterance);
  session->focus.insert(tokens.begin(), tokens.end());
  TranscriptTurn driver{Speaker::driver, utterance, canonicalize(tokens, session->lexicon, session->store, session->focus)};

  std::vector<TokenId> context;
  for (const auto& t : session->history) {
    auto ids = vocab.encode(t.canonical);
    context.insert(context.end(), ids.begin(), ids.end());
  }
  auto ids = vocab.encode(driver.canonical);
  context.insert(context.end(), ids.begin(), ids.end());

  auto decoded = loaded->model->decode_greedy(context, session->encoded, options_.max_decode_len);

  ChatReply reply;
  reply.truncated = decoded.truncated;
  reply.encoder_attention = decoded.encoder_weights;
  std::vector<std::string> surfaces;
  for (std::size_t step = 0; step < decoded.kb_scores.size(); ++step) {
    std::vector<std::optional<double>> row(session->store.size());
    const auto& scores = decoded.kb_scores[step];
    for (std::size_t j = 0; j < scores.size(); ++j) row[session->encoded.triple_index[j]] = scores[j];
    reply.kb_attention.push_back(std::move(row));
  }
  for (std::size_t step = 0; step < decoded.tokens.size(); ++step) {
    const std::string& tok = vocab.token(decoded.tokens[step]);
    reply.canonical.push_back(tok);
    if (vocab.is_canonical(decoded.tokens[step]) || session->store.contains(tok)) {
      std::vector<double> triple_scores(session->store.size(), -std::numeric_limits<double>::infinity());
      if (step < decoded.kb_scores.size()) {
        const auto& scores = decoded.kb_scores[step];
        for (std::size_t j = 0; j < scores.size(); ++j) triple_scores[session->encoded.triple_index[j]] = scores[j];
      }
      auto r = realize(tok, session->store, session->lexicon, session->rng, triple_scores);
      if (!r.resolved) reply.unresolved.push_back(tok);
      surfaces.push_back(r.surface);
    } else if (auto entity = session->lexicon.entity_of_token(tok)) {
      surfaces.push_back(session->lexicon.sample_surface(*entity, session->rng));
    } else {
      surfaces.push_back(tok);
    }
  }
  reply.reply = text::join(surfaces);
  auto reply_tokens = text::tokenize(reply.reply);
  session->focus.insert(reply_tokens.begin(), reply_tokens.end());
  session->history.push_back(std::move(driver));
  session->history.push_back({Speaker::assistant, reply.reply, reply.canonical});
  return reply;
}

json ChatService::transcript(const std::string& session_id) const {
  auto session = find(session_id);
  std::lock_guard lock(session->mutex);
  json turns = json::array();
  for (const auto& t : session->history) {
    turns.push_back({{"speaker", to_string(t.speaker)}, {"utterance", t.utterance}, {"canonical", t.canonical}});
  }
  return {{"session_id", session->id},
          {"checkpoint", session->model_id},
          {"domain", to_string(session->domain)},
          {"kb", kb_to_json(session->kb)},
          {"triples", session->store.size()},
          {"turns", turns}};
}

std::size_t ChatService::session_count() const {
  std::shared_lock lock(sessions_mutex_);
  return sessions_.size();
}

std::size_t ChatService::triple_count(const std::string& session_id) const { return find(session_id)->store.size(); }

// --------------------------------------------------------------------------
// HTTP

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& error, const std::string& detail,
                const std::vector<std::string>& problems = {}) {
  json body = {{"error", error}, {"detail", detail}};
  if (!problems.empty()) body["problems"] = problems;
  send_json(res, status, body);
}

template <typename Handler>
void guarded(httplib::Response& res, Handler&& handler) {
  try {
    handler();
  } catch (const ValidationError& e) {
    send_error(res, 400, "validation_error", e.what(), e.problems());
  } catch (const json::exception& e) {
    send_error(res, 400, "bad_request", e.what());
  } catch (const NotFoundError& e) {
    send_error(res, 404, "not_found", e.what());
  } catch (const BusyError& e) {
    send_error(res, 409, "busy", e.what());
  } catch (const std::exception& e) {
    spdlog::error("request failed: {}", e.what());
    send_error(res, 500, "internal_error", e.what());
  }
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) throw ValidationError("request body must be a JSON object");
  auto body = json::parse(req.body);
  if (!body.is_object()) throw ValidationError("request body must be a JSON object");
  return body;
}

}  // namespace

HttpServer::HttpServer(ChatService& service, HttpOptions options)
    : service_(service), options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::install_routes() {
  auto& s = *server_;
  s.set_default_headers({{"Access-Control-Allow-Origin", options_.cors_origin},
                         {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                         {"Access-Control-Allow-Headers", "Content-Type"}});
  s.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  s.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"status", "ok"}, {"sessions", service_.session_count()}, {"checkpoints", service_.model_ids()}});
  });

  s.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto body = parse_body(req);
      if (!body.contains("domain") || !body["domain"].is_string()) throw ValidationError("missing string field 'domain'");
      auto domain = parse_domain(body["domain"].get<std::string>());
      if (!domain) throw ValidationError("unknown domain '" + body["domain"].get<std::string>() + "'");
      std::optional<std::string> model;
      if (body.contains("checkpoint")) model = body["checkpoint"].get<std::string>();
      const auto seed = body.value("seed", std::uint64_t{1});
      auto id = service_.create_session(body.value("kb", json()), *domain, model, seed);
      send_json(res, 201, {{"session_id", id}, {"triples", service_.triple_count(id)}});
    });
  });

  s.Post(R"(/sessions/([^/]+)/messages)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto body = parse_body(req);
      if (!body.contains("text") || !body["text"].is_string()) throw ValidationError("missing string field 'text'");
      send_json(res, 200, service_.respond(req.matches[1], body["text"].get<std::string>()).to_json());
    });
  });

  s.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, service_.transcript(req.matches[1])); });
  });

  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) send_error(res, res.status, res.status == 404 ? "not_found" : "error", "no such route");
  });
}

bool HttpServer::listen() {
  spdlog::info("listening on {}:{}", options_.host, options_.port);
  return server_->listen(options_.host, options_.port);
}

int HttpServer::bind_any_port() { return server_->bind_to_any_port(options_.host); }

bool HttpServer::listen_after_bind() { return server_->listen_after_bind(); }

void HttpServer::stop() {
  if (server_) server_->stop();
}

void HttpServer::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace kvret
