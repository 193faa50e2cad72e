#pragma once

// Live chat: per-session dialogue state over a shared read-only model, and
// an HTTP+JSON front end.
//
//   POST /sessions                {kb, domain[, checkpoint, seed]} -> {session_id}
//   POST /sessions/{id}/messages  {text} -> {reply, canonical, attention, truncated, unresolved}
//   GET  /sessions/{id}           transcript
//   GET  /healthz
//
// Errors are {error, detail} with 400/404/409/500.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "kvret/checkpoint.hpp"
#include "kvret/kbstore.hpp"
#include "kvret/network.hpp"

namespace httplib {
class Server;
}

namespace kvret {

class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what, std::vector<std::string> problems = {})
      : std::runtime_error(what), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

/// A request arrived while the session was busy and queuing is disabled.
class BusyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ChatOptions {
  std::size_t max_decode_len = 40;
  /// Reject, rather than queue, a request to a session that is mid-request.
  bool reject_concurrent = false;
};

struct ChatReply {
  std::string reply;
  std::vector<std::string> canonical;
  /// Per decoding step: encoder attention weights over the context tokens.
  std::vector<std::vector<double>> encoder_attention;
  /// Per decoding step: KB attention logits, one per store triple (null
  /// where a triple is not attended).
  std::vector<std::vector<std::optional<double>>> kb_attention;
  bool truncated = false;
  /// Canonical tokens that did not realize through the session's KB.
  std::vector<std::string> unresolved;

  nlohmann::json to_json() const;
};

struct TranscriptTurn {
  Speaker speaker = Speaker::driver;
  std::string utterance;
  std::vector<std::string> canonical;
};

class ChatService {
 public:
  explicit ChatService(ChatOptions options = {});

  /// Registers a loaded model; the first registered one is the default.
  void add_model(const std::string& id, std::shared_ptr<const Checkpoint> checkpoint);
  std::vector<std::string> model_ids() const;

  /// `kb` uses the corpus KB format; null or empty yields an empty store.
  std::string create_session(const nlohmann::json& kb, Domain domain, std::optional<std::string> model_id = {},
                             std::uint64_t seed = 1);
  ChatReply respond(const std::string& session_id, const std::string& text);
  nlohmann::json transcript(const std::string& session_id) const;
  std::size_t session_count() const;
  /// Number of triples in a session's store.
  std::size_t triple_count(const std::string& session_id) const;

 private:
  struct LoadedModel {
    std::shared_ptr<const Checkpoint> checkpoint;
    std::unique_ptr<Model> model;
  };
  struct Session {
    std::string id;
    std::string model_id;
    Domain domain = Domain::schedule;
    RawKb kb;
    TripleStore store;
    EncodedKb encoded;
    Lexicon lexicon;
    std::vector<TranscriptTurn> history;
    std::set<std::string> focus;
    std::mt19937_64 rng;
    std::mutex mutex;
  };

  std::shared_ptr<Session> find(const std::string& id) const;

  ChatOptions options_;
  std::map<std::string, LoadedModel> models_;
  std::string default_model_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  mutable std::shared_mutex sessions_mutex_;
  std::mt19937_64 id_rng_;
};

struct HttpOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string cors_origin = "*";
};

class HttpServer {
 public:
  HttpServer(ChatService& service, HttpOptions options = {});
  ~HttpServer();

  /// Blocks until stop().
  bool listen();
  /// Binds an ephemeral port and returns it; serve with listen_after_bind().
  int bind_any_port();
  bool listen_after_bind();
  void stop();
  void wait_until_ready() const;

 private:
  void install_routes();

  ChatService& service_;
  HttpOptions options_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace kvret
