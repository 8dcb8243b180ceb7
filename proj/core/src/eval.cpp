#include "guesswhich/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace gw {

void QBotAgent::reset(const std::vector<std::string>& caption, const Database& pool) {
  pool_ = &pool;
  state_ = bot_.init_state(caption);
}

std::vector<std::string> QBotAgent::ask() {
  return bot_.vocabulary().decode(bot_.decode_question(state_, mode_, rng_).tokens);
}

std::size_t QBotAgent::guess() { return bot_.guess(state_.s(), *pool_); }

void QBotAgent::observe(const std::vector<std::string>& question, const std::vector<std::string>& answer,
                        std::size_t guess_position) {
  const auto& vocab = bot_.vocabulary();
  state_ = bot_.encode_round(state_, vocab.encode(question), vocab.encode(answer), pool_->feature(guess_position),
                             pool_->ids[guess_position]);
}

std::vector<double> QBotAgent::distances() const { return bot_.distances(state_.s(), *pool_); }

AgentFactory qbot_agent(const QBot& bot, DecodeMode mode) {
  return [&bot, mode] { return std::make_unique<QBotAgent>(bot, mode); };
}

nlohmann::json to_json(const GameRecord& r) {
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& x : r.rounds) {
    rounds.push_back({{"q", x.question}, {"a", x.answer}, {"guess_id", x.guess_id}, {"percentile", x.percentile}});
  }
  return {{"target_id", r.target_id}, {"pool", r.pool},         {"caption", r.caption},
          {"rounds", rounds},         {"final_guess_id", r.final_guess_id}, {"win", r.win}};
}

GameRecord game_record_from_json(const nlohmann::json& j) {
  GameRecord r;
  r.target_id = j.at("target_id").get<std::size_t>();
  r.pool = j.at("pool").get<std::vector<std::size_t>>();
  r.caption = j.at("caption").get<std::vector<std::string>>();
  for (const auto& x : j.at("rounds")) {
    r.rounds.push_back({x.at("q").get<std::vector<std::string>>(), x.at("a").get<std::vector<std::string>>(),
                        x.at("guess_id").get<std::size_t>(), x.at("percentile").get<double>()});
  }
  r.final_guess_id = j.at("final_guess_id").get<std::size_t>();
  r.win = j.at("win").get<bool>();
  return r;
}

GameRecord play_game(GameAgent& agent, const World& world, const Database& pool, std::size_t target_id,
                     std::size_t n_rounds, Rng& answer_rng) {
  const std::size_t target_pos = pool.position(target_id);
  const SynthImage& target = world.image(target_id);
  GameRecord rec;
  rec.target_id = target_id;
  rec.pool = pool.ids;
  rec.caption = target.caption;
  agent.reset(rec.caption, pool);
  for (std::size_t t = 0; t < n_rounds; ++t) {
    GameRound round;
    const std::size_t g = agent.guess();
    round.guess_id = pool.ids[g];
    round.question = agent.ask();
    round.answer = oracle_answer(world.spec, target, round.question, answer_rng);
    agent.observe(round.question, round.answer, g);
    round.percentile = percentile_from_distances(agent.distances(), target_pos);
    rec.rounds.push_back(std::move(round));
  }
  const auto d = agent.distances();
  rec.final_guess_id = pool.ids[argmin_lowest_id(d, pool.ids)];
  rec.win = rec.final_guess_id == target_id;
  return rec;
}

GameRecord play_game(const QBot& bot, const World& world, const Database& pool, std::size_t target_id,
                     std::size_t n_rounds, DecodeMode mode, Rng& answer_rng) {
  QBotAgent agent(bot, mode, answer_rng.fork(0x71).seed());
  return play_game(agent, world, pool, target_id, n_rounds, answer_rng);
}

GameSetup sample_game(const World& world, std::size_t pool_size, std::uint64_t seed, std::size_t index) {
  const auto game = world.game_images();
  if (pool_size == 0 || pool_size > game.size()) {
    throw std::invalid_argument("pool size " + std::to_string(pool_size) + " outside 1.." +
                                std::to_string(game.size()));
  }
  Rng rng = Rng(seed).fork(mix_seed(0x9a, index));
  GameSetup setup;
  if (pool_size == game.size()) {
    for (const auto& img : game) setup.pool.push_back(img.id);
  } else {
    std::vector<std::size_t> ids;
    for (const auto& img : game) ids.push_back(img.id);
    // partial Fisher-Yates
    for (std::size_t k = 0; k < pool_size; ++k) {
      std::swap(ids[k], ids[k + rng.uniform_index(ids.size() - k)]);
    }
    ids.resize(pool_size);
    std::sort(ids.begin(), ids.end());
    setup.pool = std::move(ids);
  }
  setup.target_id = setup.pool[rng.uniform_index(setup.pool.size())];
  return setup;
}

PmrCurve pmr_curve(const AgentFactory& make_agent, const World& world, std::size_t n_rounds, std::size_t n_games,
                   std::size_t pool_size, std::uint64_t seed) {
  if (n_games == 0) throw std::invalid_argument("pmr_curve needs at least one game");
  PmrCurve curve;
  curve.mean.assign(n_rounds, 0.0);
  curve.std_error.assign(n_rounds, 0.0);
  std::vector<double> sq(n_rounds, 0.0);
  std::optional<Database> shared;
  if (pool_size == world.game_images().size()) shared = Database::from_images(world.game_images());
  std::size_t wins = 0;
  for (std::size_t k = 0; k < n_games; ++k) {
    const GameSetup setup = sample_game(world, pool_size, seed, k);
    const Database pool_db = shared ? Database{} : Database::from_ids(world, setup.pool);
    const Database& pool = shared ? *shared : pool_db;
    auto agent = make_agent();
    Rng answer_rng = Rng(seed).fork(mix_seed(0xa5, k));
    GameRecord rec = play_game(*agent, world, pool, setup.target_id, n_rounds, answer_rng);
    for (std::size_t t = 0; t < n_rounds; ++t) {
      curve.mean[t] += rec.rounds[t].percentile;
      sq[t] += rec.rounds[t].percentile * rec.rounds[t].percentile;
    }
    wins += rec.win ? 1 : 0;
    curve.games.push_back(std::move(rec));
  }
  const auto n = static_cast<double>(n_games);
  for (std::size_t t = 0; t < n_rounds; ++t) {
    curve.mean[t] /= n;
    const double var = n > 1 ? std::max(0.0, (sq[t] - n * curve.mean[t] * curve.mean[t]) / (n - 1)) : 0.0;
    curve.std_error[t] = std::sqrt(var / n);
  }
  curve.win_rate = static_cast<double>(wins) / n;
  return curve;
}

double perplexity(const QBot& bot, const std::vector<Dialog>& dialogs, const Environment& env) {
  if (dialogs.empty()) throw std::invalid_argument("perplexity of an empty corpus");
  const auto [nll, tokens] = corpus_nll(bot, dialogs, env);
  if (tokens == 0) throw std::invalid_argument("perplexity over zero tokens");
  return std::exp(nll / static_cast<double>(tokens));
}

double win_rate(const AgentFactory& agent, const World& world, std::size_t n_rounds, std::size_t pool_size,
                std::size_t n_games, std::uint64_t seed) {
  return pmr_curve(agent, world, n_rounds, n_games, pool_size, mix_seed(seed, 0x3417)).win_rate;
}

nlohmann::json to_json(const EvalConfig& c) {
  return {{"pmr_games", c.pmr_games}, {"pmr_pool", c.pmr_pool}, {"win_games", c.win_games},
          {"win_pool", c.win_pool},   {"seed", c.seed}};
}

EvalConfig eval_config_from_json(const nlohmann::json& j) {
  EvalConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "pmr_games") c.pmr_games = v.get<std::size_t>();
    else if (key == "pmr_pool") c.pmr_pool = v.get<std::size_t>();
    else if (key == "win_games") c.win_games = v.get<std::size_t>();
    else if (key == "win_pool") c.win_pool = v.get<std::size_t>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else throw std::invalid_argument("unknown eval config key '" + key + "'");
  }
  return c;
}

std::vector<EvalReport> ablation_report(const std::vector<TaggedModel>& models, const World& world,
                                        const std::vector<Dialog>& heldout, const EvalConfig& config,
                                        const nlohmann::json& config_echo) {
  if (models.empty()) throw std::invalid_argument("ablation_report needs at least one model");
  const Environment replay = Environment::over_train_images(world);
  std::vector<EvalReport> out;
  for (const auto& m : models) {
    if (m.bot->feature_dim() != world.spec.feature_dim()) {
      throw std::invalid_argument("model '" + m.tag + "' does not match the world's feature dim");
    }
    const std::size_t rounds = m.bot->config().rounds;
    EvalReport r;
    r.tag = m.tag;
    r.seed = config.seed;
    r.config = config_echo;
    auto curve = pmr_curve(qbot_agent(*m.bot), world, rounds, config.pmr_games, config.pmr_pool, config.seed);
    r.pmr = curve.mean;
    r.pmr_stderr = curve.std_error;
    r.games = config.pmr_games;
    r.records = std::move(curve.games);
    r.perplexity = heldout.empty() ? 0.0 : perplexity(*m.bot, heldout, replay);
    r.win_rate = config.win_games
                     ? win_rate(qbot_agent(*m.bot), world, rounds, config.win_pool, config.win_games, config.seed)
                     : 0.0;
    out.push_back(std::move(r));
  }
  return out;
}

TrendFlags check_trends(const std::vector<EvalReport>& reports) {
  std::map<std::string, const EvalReport*> by_tag;
  for (const auto& r : reports) by_tag[r.tag] = &r;
  auto get = [&](const char* tag) -> const EvalReport* {
    auto it = by_tag.find(tag);
    return it == by_tag.end() ? nullptr : it->second;
  };
  TrendFlags f;
  const auto* sl = get("sl");
  const auto* alt = get("alt");
  const auto* na = get("na");
  const auto* word = get("word");
  if (sl && !sl->pmr.empty()) {
    f.rl_pmr_at_least_sl = true;
    for (const auto* rl : {alt, na, word}) {
      if (rl && rl->pmr.back() < sl->pmr.back()) f.rl_pmr_at_least_sl = false;
    }
  }
  if (na && alt) f.na_perplexity_above_alt = na->perplexity > alt->perplexity;
  if (word && alt) f.word_perplexity_above_alt = word->perplexity > alt->perplexity;
  return f;
}

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

}  // namespace

void write_report_csv(const std::filesystem::path& path, const std::vector<EvalReport>& reports) {
  auto os = open_out(path);
  std::size_t rounds = 0;
  for (const auto& r : reports) rounds = std::max(rounds, r.pmr.size());
  os << "tag";
  for (std::size_t t = 1; t <= rounds; ++t) os << ",pmr_r" << t;
  os << ",perplexity,win_rate,games,seed,config\n";
  for (const auto& r : reports) {
    os << r.tag;
    for (std::size_t t = 0; t < rounds; ++t) os << ',' << (t < r.pmr.size() ? num(r.pmr[t]) : "");
    std::string cfg = r.config.dump();
    std::string quoted;
    for (char ch : cfg) quoted += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    os << ',' << num(r.perplexity) << ',' << num(r.win_rate) << ',' << r.games << ',' << r.seed << ",\""
       << quoted << "\"\n";
  }
}

void write_curves_csv(const std::filesystem::path& path, const std::vector<EvalReport>& reports) {
  auto os = open_out(path);
  os << "round,tag,pmr,stderr\n";
  for (const auto& r : reports) {
    for (std::size_t t = 0; t < r.pmr.size(); ++t) {
      os << t + 1 << ',' << r.tag << ',' << num(r.pmr[t]) << ',' << num(r.pmr_stderr[t]) << '\n';
    }
  }
}

void write_games_jsonl(const std::filesystem::path& path, const std::vector<EvalReport>& reports) {
  auto os = open_out(path);
  for (const auto& r : reports) {
    for (const auto& g : r.records) {
      auto j = to_json(g);
      j["tag"] = r.tag;
      os << j.dump() << '\n';
    }
  }
}

std::string curves_svg(const std::vector<EvalReport>& reports) {
  static const std::vector<std::string> colors{"#1e88e5", "#e53935", "#43a047", "#8e24aa", "#fb8c00", "#212121"};
  constexpr double width = 480, height = 320, left = 50, right = 110, top = 20, bottom = 40;
  std::size_t rounds = 1;
  double lo = 1.0, hi = 0.0;
  for (const auto& r : reports) {
    rounds = std::max(rounds, r.pmr.size());
    for (double v : r.pmr) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi <= lo) {
    lo = std::max(0.0, lo - 0.05);
    hi = std::min(1.0, hi + 0.05);
    if (hi <= lo) hi = lo + 0.1;
  }
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  auto x_of = [&](std::size_t t) {
    return left + (rounds == 1 ? plot_w / 2 : plot_w * static_cast<double>(t) / static_cast<double>(rounds - 1));
  };
  auto y_of = [&](double v) { return top + plot_h * (1.0 - (v - lo) / (hi - lo)); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">";
  os << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"#ffffff\"/>";
  os << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\""
     << top + plot_h << "\" stroke=\"#000\"/>";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
     << "\" stroke=\"#000\"/>";
  for (std::size_t t = 0; t < rounds; ++t) {
    os << "<text x=\"" << num(x_of(t)) << "\" y=\"" << height - 15 << "\" font-size=\"11\" text-anchor=\"middle\">"
       << t + 1 << "</text>";
  }
  os << "<text x=\"" << left << "\" y=\"" << top - 5 << "\" font-size=\"11\">PMR " << num(hi) << "</text>";
  os << "<text x=\"" << left << "\" y=\"" << top + plot_h + 12 << "\" font-size=\"11\">" << num(lo) << "</text>";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    const auto& color = colors[i % colors.size()];
    os << "<polyline class=\"curve\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t t = 0; t < r.pmr.size(); ++t) os << (t ? " " : "") << num(x_of(t)) << ',' << num(y_of(r.pmr[t]));
    os << "\"/>";
    for (std::size_t t = 0; t < r.pmr.size(); ++t) {
      os << "<circle class=\"point\" cx=\"" << num(x_of(t)) << "\" cy=\"" << num(y_of(r.pmr[t]))
         << "\" r=\"3\" fill=\"" << color << "\"/>";
    }
    os << "<text x=\"" << width - right + 10 << "\" y=\"" << top + 15 * (i + 1) << "\" font-size=\"12\" fill=\""
       << color << "\">" << r.tag << "</text>";
  }
  os << "</svg>";
  return os.str();
}

}  // namespace gw
