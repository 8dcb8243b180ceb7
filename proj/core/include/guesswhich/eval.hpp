#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "guesswhich/corpus.hpp"
#include "guesswhich/qbot.hpp"
#include "guesswhich/training.hpp"

namespace gw {

/// Anything that can play the questioner side of a retrieval game.
class GameAgent {
 public:
  virtual ~GameAgent() = default;
  virtual void reset(const std::vector<std::string>& caption, const Database& pool) = 0;
  virtual std::vector<std::string> ask() = 0;
  /// Pool position guessed this round, from the state before the answer.
  virtual std::size_t guess() = 0;
  virtual void observe(const std::vector<std::string>& question, const std::vector<std::string>& answer,
                       std::size_t guess_position) = 0;
  /// Distances from the current state to every pool entry.
  virtual std::vector<double> distances() const = 0;
};

using AgentFactory = std::function<std::unique_ptr<GameAgent>()>;

class QBotAgent : public GameAgent {
 public:
  QBotAgent(const QBot& bot, DecodeMode mode, std::uint64_t seed = 0) : bot_(bot), mode_(mode), rng_(seed) {}
  void reset(const std::vector<std::string>& caption, const Database& pool) override;
  std::vector<std::string> ask() override;
  std::size_t guess() override;
  void observe(const std::vector<std::string>& question, const std::vector<std::string>& answer,
               std::size_t guess_position) override;
  std::vector<double> distances() const override;
  const DialogState& state() const { return state_; }

 private:
  const QBot& bot_;
  DecodeMode mode_;
  Rng rng_;
  const Database* pool_ = nullptr;
  DialogState state_;
};

AgentFactory qbot_agent(const QBot& bot, DecodeMode mode = DecodeMode::greedy);

struct GameRound {
  std::vector<std::string> question;
  std::vector<std::string> answer;
  std::size_t guess_id = 0;
  double percentile = 0.0;
};

struct GameRecord {
  std::size_t target_id = 0;
  std::vector<std::size_t> pool;
  std::vector<std::string> caption;
  std::vector<GameRound> rounds;
  std::size_t final_guess_id = 0;
  bool win = false;
};

nlohmann::json to_json(const GameRecord& r);
GameRecord game_record_from_json(const nlohmann::json& j);

/// Plays one game against the world's oracle answerer.
GameRecord play_game(GameAgent& agent, const World& world, const Database& pool, std::size_t target_id,
                     std::size_t n_rounds, Rng& answer_rng);
GameRecord play_game(const QBot& bot, const World& world, const Database& pool, std::size_t target_id,
                     std::size_t n_rounds, DecodeMode mode, Rng& answer_rng);

/// Pool and target of evaluation game `index`; a function of (seed, index)
/// only, so every model sees the same games.
struct GameSetup {
  std::vector<std::size_t> pool;
  std::size_t target_id = 0;
};
GameSetup sample_game(const World& world, std::size_t pool_size, std::uint64_t seed, std::size_t index);

struct PmrCurve {
  std::vector<double> mean;    // per round
  std::vector<double> std_error;  // per round
  std::vector<GameRecord> games;
  double win_rate = 0.0;
};

PmrCurve pmr_curve(const AgentFactory& agent, const World& world, std::size_t n_rounds, std::size_t n_games,
                   std::size_t pool_size, std::uint64_t seed);

double perplexity(const QBot& bot, const std::vector<Dialog>& dialogs, const Environment& env);

double win_rate(const AgentFactory& agent, const World& world, std::size_t n_rounds, std::size_t pool_size,
                std::size_t n_games, std::uint64_t seed);

struct EvalConfig {
  std::size_t pmr_games = 500;
  std::size_t pmr_pool = 500;
  std::size_t win_games = 500;
  std::size_t win_pool = 20;
  std::uint64_t seed = 1234;
};

nlohmann::json to_json(const EvalConfig& c);
EvalConfig eval_config_from_json(const nlohmann::json& j);

struct EvalReport {
  std::string tag;
  std::vector<double> pmr;
  std::vector<double> pmr_stderr;
  double perplexity = 0.0;
  double win_rate = 0.0;
  std::size_t games = 0;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  std::vector<GameRecord> records;
};

struct TaggedModel {
  std::string tag;
  const QBot* bot = nullptr;
};

/// Paired evaluation: every model plays the same pools, targets and answers.
std::vector<EvalReport> ablation_report(const std::vector<TaggedModel>& models, const World& world,
                                        const std::vector<Dialog>& heldout, const EvalConfig& config,
                                        const nlohmann::json& config_echo = nlohmann::json::object());

/// Directional checks over a report keyed by tags sl, alt, na, word.
struct TrendFlags {
  bool rl_pmr_at_least_sl = false;
  bool na_perplexity_above_alt = false;
  bool word_perplexity_above_alt = false;
};
TrendFlags check_trends(const std::vector<EvalReport>& reports);

void write_report_csv(const std::filesystem::path& path, const std::vector<EvalReport>& reports);
void write_curves_csv(const std::filesystem::path& path, const std::vector<EvalReport>& reports);
void write_games_jsonl(const std::filesystem::path& path, const std::vector<EvalReport>& reports);
std::string curves_svg(const std::vector<EvalReport>& reports);

}  // namespace gw
