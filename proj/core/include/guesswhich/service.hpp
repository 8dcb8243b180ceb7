#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "guesswhich/eval.hpp"
#include "guesswhich/qbot.hpp"
#include "guesswhich/world.hpp"

namespace gw {

enum class SessionStatus { active, awaiting_rating, finished };
std::string_view status_name(SessionStatus s);
SessionStatus status_from_name(std::string_view name);

struct Rating {
  int fluency = 0;
  int relevance = 0;
  int comprehension = 0;
  int diversity = 0;
};

/// Throws ServiceError(400) unless all four fields are present integers in 1..5.
Rating rating_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Rating& r);

struct SessionRound {
  std::vector<std::string> question;  // ends with <end>
  std::vector<std::string> answer;
  std::size_t guess_id = 0;
};

struct GameSession {
  std::string id;
  std::string model;
  std::uint64_t seed = 0;
  std::vector<std::size_t> pool;
  std::size_t target_id = 0;
  std::vector<std::string> caption;
  std::vector<SessionRound> transcript;
  std::vector<std::string> pending_question;  // empty once the game is over
  Tensor h;
  Tensor c;
  SessionStatus status = SessionStatus::active;
  std::optional<std::size_t> final_guess_id;
  std::optional<Rating> rating;
  std::string created;
  std::string updated;

  std::size_t round() const { return transcript.size(); }
};

nlohmann::json to_json(const GameSession& s);
GameSession game_session_from_json(const nlohmann::json& j);

class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, const std::string& message) : std::runtime_error(message), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

struct ServiceConfig {
  std::filesystem::path store_dir = "sessions";
  std::size_t pool_size = 20;
  /// Show the agent's per-round guess before the final reveal.
  bool show_guesses = false;
};

nlohmann::json to_json(const ServiceConfig& c);
ServiceConfig service_config_from_json(const nlohmann::json& j);

struct HttpRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// Human-plays-answerer game backend. Models are loaded once and shared
/// read-only; every session's mutations are serialized by its own lock.
class GameService {
 public:
  GameService(const World& world, std::map<std::string, const QBot*> models, ServiceConfig config);

  std::vector<std::string> model_tags() const;

  nlohmann::json create_game(const std::string& model, std::optional<std::uint64_t> seed);
  nlohmann::json snapshot(const std::string& id) const;
  nlohmann::json submit_answer(const std::string& id, const std::string& text);
  void submit_rating(const std::string& id, const Rating& rating);
  /// Finished sessions as JSON lines, optionally filtered by model tag and
  /// by an inclusive [since, until] range on the finish timestamp.
  std::string export_logs(const std::string& model = "", const std::string& since = "",
                          const std::string& until = "") const;

  /// Three anonymized AI-AI transcripts of the same game.
  nlohmann::json compare(std::uint64_t seed) const;
  void record_choice(std::uint64_t seed, const std::string& slot);
  nlohmann::json choice_tally() const;

  GameSession session(const std::string& id) const;

  /// Routes one HTTP request; never throws.
  HttpResponse handle(const HttpRequest& request);

 private:
  struct Entry {
    std::mutex mutex;
    GameSession session;
  };

  std::shared_ptr<Entry> find(const std::string& id) const;
  const QBot& model(const std::string& tag) const;
  void persist(const GameSession& s) const;
  void load_store();
  nlohmann::json session_view(const GameSession& s) const;
  nlohmann::json pool_view(const std::vector<std::size_t>& ids) const;
  std::vector<std::string> compare_slots(std::uint64_t seed) const;
  std::string new_session_id();

  const World& world_;
  std::map<std::string, const QBot*> models_;
  ServiceConfig config_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::mutex choices_mutex_;
  std::mutex id_mutex_;
  std::uint64_t id_counter_ = 0;
  std::uint64_t id_salt_ = 0;
};

/// The logged game with per-round percentiles recomputed from the model.
GameRecord session_record(const GameSession& s, const QBot& bot, const World& world);

/// Re-asks the session's questions offline from its answers and guesses.
std::vector<std::vector<std::string>> replay_questions(const GameSession& s, const QBot& bot, const World& world);

/// HTTP front end for a GameService. A built web client, if given, is served
/// under /ui.
class HttpServer {
 public:
  explicit HttpServer(GameService& service, std::filesystem::path static_dir = {});
  ~HttpServer();
  /// False when the address cannot be bound.
  bool bind(const std::string& host, int port);
  /// Binds to a free port and returns it, or -1.
  int bind_any(const std::string& host);
  /// Serves until stop(); call after a successful bind.
  void listen_after_bind();
  void stop();
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace gw
