#include "guesswhich/service.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

namespace gw {

namespace {

std::string now_iso() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

std::vector<std::string> strip_end(const std::vector<std::string>& tokens) {
  std::vector<std::string> out;
  for (const auto& t : tokens) {
    if (t != kEnd) out.push_back(t);
  }
  return out;
}

std::string text_of(const std::vector<std::string>& tokens) { return join_tokens(strip_end(tokens)); }

void write_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os << content;
    if (!os.flush()) throw std::runtime_error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

DialogState state_of(const GameSession& s) {
  DialogState d;
  d.h = s.h;
  d.c = s.c;
  return d;
}

nlohmann::json parse_body(const std::string& body) {
  if (body.empty()) return nlohmann::json::object();
  try {
    auto j = nlohmann::json::parse(body);
    if (!j.is_object()) throw ServiceError(400, "request body must be a JSON object");
    return j;
  } catch (const nlohmann::json::parse_error&) {
    throw ServiceError(400, "request body is not valid JSON");
  }
}

std::uint64_t parse_seed(const std::string& text) {
  if (text.empty() || text.size() > 20 || !std::all_of(text.begin(), text.end(), ::isdigit)) {
    throw ServiceError(400, "seed must be a non-negative integer");
  }
  try {
    return std::stoull(text);
  } catch (const std::exception&) {
    throw ServiceError(400, "seed out of range");
  }
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : path) {
    if (ch == '/') {
      if (!cur.empty()) parts.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) parts.push_back(std::move(cur));
  return parts;
}

HttpResponse json_response(int status, const nlohmann::json& j) { return {status, "application/json", j.dump()}; }

}  // namespace

std::string_view status_name(SessionStatus s) {
  switch (s) {
    case SessionStatus::active: return "active";
    case SessionStatus::awaiting_rating: return "awaiting_rating";
    case SessionStatus::finished: return "finished";
  }
  return "active";
}

SessionStatus status_from_name(std::string_view name) {
  if (name == "active") return SessionStatus::active;
  if (name == "awaiting_rating") return SessionStatus::awaiting_rating;
  if (name == "finished") return SessionStatus::finished;
  throw std::invalid_argument("unknown session status '" + std::string(name) + "'");
}

Rating rating_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ServiceError(400, "rating must be an object");
  auto field = [&](const char* name) {
    if (!j.contains(name)) throw ServiceError(400, std::string("rating field '") + name + "' missing");
    const auto& v = j.at(name);
    if (!v.is_number_integer()) throw ServiceError(400, std::string("rating field '") + name + "' must be an integer");
    const auto x = v.get<long long>();
    if (x < 1 || x > 5) throw ServiceError(400, std::string("rating field '") + name + "' must be in 1..5");
    return static_cast<int>(x);
  };
  for (const auto& [key, v] : j.items()) {
    (void)v;
    if (key != "fluency" && key != "relevance" && key != "comprehension" && key != "diversity") {
      throw ServiceError(400, "unknown rating field '" + key + "'");
    }
  }
  return Rating{field("fluency"), field("relevance"), field("comprehension"), field("diversity")};
}

nlohmann::json to_json(const Rating& r) {
  return {{"fluency", r.fluency}, {"relevance", r.relevance}, {"comprehension", r.comprehension},
          {"diversity", r.diversity}};
}

nlohmann::json to_json(const GameSession& s) {
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& r : s.transcript) rounds.push_back({{"q", r.question}, {"a", r.answer}, {"guess_id", r.guess_id}});
  nlohmann::json j{{"id", s.id},
                   {"model", s.model},
                   {"seed", s.seed},
                   {"pool", s.pool},
                   {"target_id", s.target_id},
                   {"caption", s.caption},
                   {"transcript", rounds},
                   {"pending_question", s.pending_question},
                   {"h", s.h.values()},
                   {"c", s.c.values()},
                   {"status", status_name(s.status)},
                   {"created", s.created},
                   {"updated", s.updated}};
  j["final_guess_id"] = s.final_guess_id ? nlohmann::json(*s.final_guess_id) : nlohmann::json(nullptr);
  j["rating"] = s.rating ? to_json(*s.rating) : nlohmann::json(nullptr);
  return j;
}

GameSession game_session_from_json(const nlohmann::json& j) {
  GameSession s;
  s.id = j.at("id").get<std::string>();
  s.model = j.at("model").get<std::string>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.pool = j.at("pool").get<std::vector<std::size_t>>();
  s.target_id = j.at("target_id").get<std::size_t>();
  s.caption = j.at("caption").get<std::vector<std::string>>();
  for (const auto& r : j.at("transcript")) {
    s.transcript.push_back({r.at("q").get<std::vector<std::string>>(), r.at("a").get<std::vector<std::string>>(),
                            r.at("guess_id").get<std::size_t>()});
  }
  s.pending_question = j.at("pending_question").get<std::vector<std::string>>();
  const auto h = j.at("h").get<std::vector<double>>();
  const auto c = j.at("c").get<std::vector<double>>();
  s.h = Tensor::vector(h);
  s.c = Tensor::vector(c);
  s.status = status_from_name(j.at("status").get<std::string>());
  s.created = j.at("created").get<std::string>();
  s.updated = j.at("updated").get<std::string>();
  if (!j.at("final_guess_id").is_null()) s.final_guess_id = j.at("final_guess_id").get<std::size_t>();
  if (!j.at("rating").is_null()) s.rating = rating_from_json(j.at("rating"));
  return s;
}

nlohmann::json to_json(const ServiceConfig& c) {
  return {{"store_dir", c.store_dir.string()}, {"pool_size", c.pool_size}, {"show_guesses", c.show_guesses}};
}

ServiceConfig service_config_from_json(const nlohmann::json& j) {
  ServiceConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "store_dir") c.store_dir = v.get<std::string>();
    else if (key == "pool_size") c.pool_size = v.get<std::size_t>();
    else if (key == "show_guesses") c.show_guesses = v.get<bool>();
    else throw std::invalid_argument("unknown service config key '" + key + "'");
  }
  return c;
}

GameService::GameService(const World& world, std::map<std::string, const QBot*> models, ServiceConfig config)
    : world_(world), models_(std::move(models)), config_(std::move(config)) {
  if (models_.empty()) throw std::invalid_argument("game service needs at least one model");
  for (const auto& [tag, bot] : models_) {
    if (!bot) throw std::invalid_argument("model '" + tag + "' is null");
    if (bot->feature_dim() != world_.spec.feature_dim()) {
      throw std::invalid_argument("model '" + tag + "' does not match the world's feature dim");
    }
  }
  if (config_.pool_size == 0 || config_.pool_size > world_.game_images().size()) {
    throw std::invalid_argument("service pool size outside the game image range");
  }
  std::random_device rd;
  id_salt_ = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  std::filesystem::create_directories(config_.store_dir);
  load_store();
}

std::vector<std::string> GameService::model_tags() const {
  std::vector<std::string> tags;
  for (const auto& [tag, bot] : models_) tags.push_back(tag);
  return tags;
}

void GameService::load_store() {
  for (const auto& entry : std::filesystem::directory_iterator(config_.store_dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".json") continue;
    try {
      std::ifstream is(entry.path());
      auto e = std::make_shared<Entry>();
      e->session = game_session_from_json(nlohmann::json::parse(is));
      sessions_[e->session.id] = e;
    } catch (const std::exception& ex) {
      std::cerr << "skipping unreadable session file " << entry.path() << ": " << ex.what() << '\n';
    }
  }
}

std::string GameService::new_session_id() {
  std::lock_guard lock(id_mutex_);
  char buf[20];
  for (;;) {
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(mix_seed(id_salt_, ++id_counter_)));
    std::shared_lock read(sessions_mutex_);
    if (!sessions_.count(buf)) return buf;
  }
}

std::shared_ptr<GameService::Entry> GameService::find(const std::string& id) const {
  std::shared_lock lock(sessions_mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ServiceError(404, "no game '" + id + "'");
  return it->second;
}

const QBot& GameService::model(const std::string& tag) const {
  auto it = models_.find(tag);
  if (it == models_.end()) throw ServiceError(400, "unknown model '" + tag + "'");
  return *it->second;
}

void GameService::persist(const GameSession& s) const {
  write_atomic(config_.store_dir / (s.id + ".json"), to_json(s).dump());
}

nlohmann::json GameService::pool_view(const std::vector<std::size_t>& ids) const {
  nlohmann::json pool = nlohmann::json::array();
  for (auto id : ids) pool.push_back({{"id", id}, {"svg", render_glyph(world_.spec, world_.image(id))}});
  return pool;
}

nlohmann::json GameService::session_view(const GameSession& s) const {
  const bool over = s.status != SessionStatus::active;
  nlohmann::json transcript = nlohmann::json::array();
  for (const auto& r : s.transcript) {
    nlohmann::json row{{"question", text_of(r.question)}, {"answer", text_of(r.answer)}};
    if (config_.show_guesses || over) row["guess_id"] = r.guess_id;
    transcript.push_back(std::move(row));
  }
  std::size_t rounds = s.transcript.size();
  if (auto it = models_.find(s.model); it != models_.end()) rounds = it->second->config().rounds;
  nlohmann::json j{{"id", s.id},
                   {"model", s.model},
                   {"status", status_name(s.status)},
                   {"round", s.round()},
                   {"rounds", rounds},
                   {"caption", text_of(s.caption)},
                   {"pool", pool_view(s.pool)},
                   {"target", {{"id", s.target_id}, {"svg", render_glyph(world_.spec, world_.image(s.target_id))}}},
                   {"transcript", transcript},
                   {"created", s.created},
                   {"updated", s.updated}};
  j["question"] = s.pending_question.empty() ? nlohmann::json(nullptr) : nlohmann::json(text_of(s.pending_question));
  if (over && s.final_guess_id) {
    j["reveal"] = {{"guess_id", *s.final_guess_id}, {"win", *s.final_guess_id == s.target_id}, {"target_id", s.target_id}};
  }
  if (s.rating) j["rating"] = to_json(*s.rating);
  return j;
}

nlohmann::json GameService::create_game(const std::string& tag, std::optional<std::uint64_t> seed) {
  const QBot& bot = model(tag);
  if (!seed) {
    std::random_device rd;
    seed = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  }
  const GameSetup setup = sample_game(world_, config_.pool_size, *seed, 0);
  GameSession s;
  s.id = new_session_id();
  s.model = tag;
  s.seed = *seed;
  s.pool = setup.pool;
  s.target_id = setup.target_id;
  s.caption = world_.image(s.target_id).caption;
  const DialogState state = bot.init_state(s.caption);
  s.h = state.h;
  s.c = state.c;
  Rng unused(0);
  s.pending_question = bot.vocabulary().decode(bot.decode_question(state, DecodeMode::greedy, unused).tokens);
  s.created = s.updated = now_iso();
  persist(s);
  auto e = std::make_shared<Entry>();
  e->session = s;
  {
    std::unique_lock lock(sessions_mutex_);
    sessions_[s.id] = e;
  }
  return session_view(s);
}

nlohmann::json GameService::snapshot(const std::string& id) const {
  auto e = find(id);
  std::lock_guard lock(e->mutex);
  return session_view(e->session);
}

GameSession GameService::session(const std::string& id) const {
  auto e = find(id);
  std::lock_guard lock(e->mutex);
  return e->session;
}

nlohmann::json GameService::submit_answer(const std::string& id, const std::string& text) {
  auto e = find(id);
  std::lock_guard lock(e->mutex);
  GameSession s = e->session;
  if (s.status != SessionStatus::active) {
    throw ServiceError(409, "game '" + id + "' is " + std::string(status_name(s.status)));
  }
  const QBot& bot = model(s.model);
  const auto& vocab = bot.vocabulary();
  std::vector<std::string> answer = tokenize(text);
  if (answer.empty()) answer = {std::string(kUnknownAnswer)};
  // the stored answer is what the model saw, after the <unk> fallback
  answer = vocab.decode(vocab.encode(answer));

  const Database pool = Database::from_ids(world_, s.pool);
  DialogState state = state_of(s);
  const std::size_t g = bot.guess(state.s(), pool);
  state = bot.encode_round(state, vocab.encode(s.pending_question), vocab.encode(answer), pool.feature(g), pool.ids[g]);
  s.transcript.push_back({s.pending_question, answer, pool.ids[g]});
  s.h = state.h;
  s.c = state.c;

  nlohmann::json out{{"round", s.round()}};
  if (s.round() < bot.config().rounds) {
    Rng unused(0);
    s.pending_question = vocab.decode(bot.decode_question(state, DecodeMode::greedy, unused).tokens);
    out["question"] = text_of(s.pending_question);
    if (config_.show_guesses) out["guess_id"] = pool.ids[g];
  } else {
    s.pending_question.clear();
    s.final_guess_id = pool.ids[bot.guess(state.s(), pool)];
    s.status = SessionStatus::awaiting_rating;
    out["reveal"] = {{"guess_id", *s.final_guess_id}, {"win", *s.final_guess_id == s.target_id}, {"target_id", s.target_id}};
  }
  s.updated = now_iso();
  persist(s);
  e->session = std::move(s);
  return out;
}

void GameService::submit_rating(const std::string& id, const Rating& rating) {
  auto e = find(id);
  std::lock_guard lock(e->mutex);
  GameSession s = e->session;
  if (s.status != SessionStatus::awaiting_rating) {
    throw ServiceError(409, "game '" + id + "' is " + std::string(status_name(s.status)) + ", not awaiting a rating");
  }
  s.rating = rating;
  s.status = SessionStatus::finished;
  s.updated = now_iso();
  persist(s);
  e->session = std::move(s);
}

std::string GameService::export_logs(const std::string& model_tag, const std::string& since,
                                     const std::string& until) const {
  std::vector<std::shared_ptr<Entry>> entries;
  {
    std::shared_lock lock(sessions_mutex_);
    for (const auto& [id, e] : sessions_) entries.push_back(e);
  }
  std::ostringstream os;
  for (const auto& e : entries) {
    GameSession s;
    {
      std::lock_guard lock(e->mutex);
      s = e->session;
    }
    if (s.status != SessionStatus::finished) continue;
    if (!model_tag.empty() && s.model != model_tag) continue;
    if (!since.empty() && s.updated < since) continue;
    if (!until.empty() && s.updated > until) continue;
    nlohmann::json line{{"session_id", s.id}, {"model", s.model}, {"seed", s.seed}, {"finished", s.updated}};
    auto it = models_.find(s.model);
    if (it != models_.end()) {
      line["record"] = to_json(session_record(s, *it->second, world_));
    } else {
      GameRecord r;
      r.target_id = s.target_id;
      r.pool = s.pool;
      r.caption = s.caption;
      for (const auto& t : s.transcript) r.rounds.push_back({t.question, t.answer, t.guess_id, 0.0});
      r.final_guess_id = s.final_guess_id.value_or(0);
      r.win = r.final_guess_id == s.target_id;
      line["record"] = to_json(r);
    }
    line["rating"] = to_json(*s.rating);
    os << line.dump() << '\n';
  }
  return os.str();
}

std::vector<std::string> GameService::compare_slots(std::uint64_t seed) const {
  std::vector<std::string> tags = model_tags();
  if (tags.size() > 3) tags.resize(3);
  Rng(seed).fork(0xc0).shuffle(tags);
  return tags;
}

nlohmann::json GameService::compare(std::uint64_t seed) const {
  const auto slots = compare_slots(seed);
  const GameSetup setup = sample_game(world_, config_.pool_size, seed, 0);
  const Database pool = Database::from_ids(world_, setup.pool);
  nlohmann::json transcripts = nlohmann::json::array();
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const QBot& bot = *models_.at(slots[i]);
    Rng answers(seed);
    const GameRecord rec = play_game(bot, world_, pool, setup.target_id, bot.config().rounds, DecodeMode::greedy, answers);
    nlohmann::json rounds = nlohmann::json::array();
    for (const auto& r : rec.rounds) rounds.push_back({{"question", text_of(r.question)}, {"answer", text_of(r.answer)}});
    transcripts.push_back({{"slot", std::string(1, static_cast<char>('A' + i))}, {"rounds", rounds}});
  }
  return {{"seed", seed},
          {"caption", text_of(world_.image(setup.target_id).caption)},
          {"target", {{"id", setup.target_id}, {"svg", render_glyph(world_.spec, world_.image(setup.target_id))}}},
          {"transcripts", transcripts}};
}

void GameService::record_choice(std::uint64_t seed, const std::string& slot) {
  const auto slots = compare_slots(seed);
  if (slot.size() != 1 || slot[0] < 'A' || static_cast<std::size_t>(slot[0] - 'A') >= slots.size()) {
    throw ServiceError(400, "choice must name one of the comparison slots");
  }
  const nlohmann::json line{{"seed", seed}, {"slot", slot}, {"model", slots[slot[0] - 'A']}, {"at", now_iso()}};
  std::lock_guard lock(choices_mutex_);
  std::ofstream os(config_.store_dir / "choices.jsonl", std::ios::app);
  if (!os) throw std::runtime_error("cannot append choices");
  os << line.dump() << '\n';
}

nlohmann::json GameService::choice_tally() const {
  nlohmann::json tally = nlohmann::json::object();
  for (const auto& tag : model_tags()) tally[tag] = 0;
  std::ifstream is(config_.store_dir / "choices.jsonl");
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const auto tag = j.at("model").get<std::string>();
    tally[tag] = tally.value(tag, 0) + 1;
  }
  return tally;
}

HttpResponse GameService::handle(const HttpRequest& req) {
  try {
    const auto parts = split_path(req.path);
    const auto& m = req.method;
    if (parts.size() == 1 && parts[0] == "health") {
      if (m != "GET") throw ServiceError(405, "method not allowed");
      return json_response(200, {{"status", "ok"}, {"models", model_tags()}, {"pool_size", config_.pool_size}});
    }
    if (!parts.empty() && parts[0] == "games") {
      if (parts.size() == 1) {
        if (m != "POST") throw ServiceError(405, "method not allowed");
        const auto body = parse_body(req.body);
        std::string tag;
        if (body.contains("model")) {
          if (!body["model"].is_string()) throw ServiceError(400, "model must be a string");
          tag = body["model"].get<std::string>();
        } else if (models_.size() == 1) {
          tag = models_.begin()->first;
        } else {
          throw ServiceError(400, "model is required");
        }
        std::optional<std::uint64_t> seed;
        if (body.contains("seed") && !body["seed"].is_null()) {
          if (!body["seed"].is_number_unsigned()) throw ServiceError(400, "seed must be a non-negative integer");
          seed = body["seed"].get<std::uint64_t>();
        }
        return json_response(201, create_game(tag, seed));
      }
      const std::string& id = parts[1];
      if (parts.size() == 2) {
        if (m != "GET") throw ServiceError(405, "method not allowed");
        return json_response(200, snapshot(id));
      }
      if (parts.size() == 3 && parts[2] == "answer") {
        if (m != "POST") throw ServiceError(405, "method not allowed");
        find(id);
        const auto body = parse_body(req.body);
        if (!body.contains("text") || !body["text"].is_string()) throw ServiceError(400, "text must be a string");
        return json_response(200, submit_answer(id, body["text"].get<std::string>()));
      }
      if (parts.size() == 3 && parts[2] == "rating") {
        if (m != "POST") throw ServiceError(405, "method not allowed");
        find(id);
        submit_rating(id, rating_from_json(parse_body(req.body)));
        return {204, "application/json", ""};
      }
    }
    if (!parts.empty() && parts[0] == "compare") {
      if (parts.size() == 2 && parts[1] == "tally") {
        if (m != "GET") throw ServiceError(405, "method not allowed");
        return json_response(200, choice_tally());
      }
      if (parts.size() == 2) {
        if (m != "GET") throw ServiceError(405, "method not allowed");
        return json_response(200, compare(parse_seed(parts[1])));
      }
      if (parts.size() == 3 && parts[2] == "choice") {
        if (m != "POST") throw ServiceError(405, "method not allowed");
        const auto seed = parse_seed(parts[1]);
        const auto body = parse_body(req.body);
        if (!body.contains("model") || !body["model"].is_string()) throw ServiceError(400, "model must be a string");
        record_choice(seed, body["model"].get<std::string>());
        return {204, "application/json", ""};
      }
    }
    if (parts.size() == 1 && parts[0] == "export") {
      if (m != "GET") throw ServiceError(405, "method not allowed");
      auto q = [&](const char* k) {
        auto it = req.query.find(k);
        return it == req.query.end() ? std::string() : it->second;
      };
      return {200, "application/x-ndjson", export_logs(q("model"), q("since"), q("until"))};
    }
    throw ServiceError(404, "no route for " + req.method + " " + req.path);
  } catch (const ServiceError& e) {
    return json_response(e.status(), {{"error", e.what()}});
  } catch (const std::exception& e) {
    return json_response(500, {{"error", e.what()}});
  }
}

GameRecord session_record(const GameSession& s, const QBot& bot, const World& world) {
  const auto& vocab = bot.vocabulary();
  const Database pool = Database::from_ids(world, s.pool);
  GameRecord r;
  r.target_id = s.target_id;
  r.pool = s.pool;
  r.caption = s.caption;
  DialogState state = bot.init_state(s.caption);
  for (const auto& t : s.transcript) {
    const std::size_t pos = pool.position(t.guess_id);
    state = bot.encode_round(state, vocab.encode(t.question), vocab.encode(t.answer), pool.feature(pos), t.guess_id);
    r.rounds.push_back({t.question, t.answer, t.guess_id, bot.rank_percentile(state.s(), pool, s.target_id)});
  }
  r.final_guess_id = s.final_guess_id.value_or(pool.ids[bot.guess(state.s(), pool)]);
  r.win = r.final_guess_id == s.target_id;
  return r;
}

std::vector<std::vector<std::string>> replay_questions(const GameSession& s, const QBot& bot, const World& world) {
  const auto& vocab = bot.vocabulary();
  const Database pool = Database::from_ids(world, s.pool);
  Rng unused(0);
  std::vector<std::vector<std::string>> questions;
  DialogState state = bot.init_state(s.caption);
  for (const auto& t : s.transcript) {
    const auto q = bot.decode_question(state, DecodeMode::greedy, unused).tokens;
    questions.push_back(vocab.decode(q));
    const std::size_t g = bot.guess(state.s(), pool);
    state = bot.encode_round(state, q, vocab.encode(t.answer), pool.feature(g), pool.ids[g]);
  }
  return questions;
}

}  // namespace gw
