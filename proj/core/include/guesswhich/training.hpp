#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "guesswhich/corpus.hpp"
#include "guesswhich/optimizer.hpp"
#include "guesswhich/qbot.hpp"

namespace gw {

enum class Schedule { alternate, rl_only, word_rl, sl_only };
std::string_view schedule_name(Schedule s);
Schedule schedule_from_name(std::string_view name);

struct TrainConfig {
  double alpha = 1.0;
  double beta = 10.0;
  double gamma = 0.9;
  double sl_learning_rate = 0.01;
  double rl_learning_rate = 0.01;
  double word_learning_rate = 0.01;
  std::size_t episodes_per_epoch = 200;
  std::size_t rollouts = 1;
  Schedule schedule = Schedule::alternate;
  /// Execute i_t* in the trajectory; when false the improved action is only
  /// a label and the greedy guess is executed instead.
  bool execute_improved_action = true;
  DecodeMode rl_question_mode = DecodeMode::sample;
  DecodeMode rollout_question_mode = DecodeMode::greedy;
  SgdConfig sgd;
  std::uint64_t seed = 1234;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Retrieval game environment: the database the agent guesses over and the
/// world that answers its questions.
struct Environment {
  const World* world = nullptr;
  Database database;

  static Environment over_train_images(const World& world);
  static Environment over_game_images(const World& world);
  const SynthImage& image(std::size_t id) const { return world->image(id); }
};

struct RoundRecord {
  Tensor state;                      // s before the round's guess
  std::vector<TokenId> question;
  std::vector<TokenId> answer;
  std::vector<std::size_t> candidates;
  std::vector<double> q_values;
  std::size_t improved_id = 0;
  std::size_t executed_id = 0;
  double reward = 0.0;
};

struct Trajectory {
  std::size_t target_id = 0;
  std::vector<RoundRecord> rounds;
  double episode_return = 0.0;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  std::string phase;
  double joint_loss = 0.0;
  double nll = 0.0;   // mean -log p per question token
  double mse = 0.0;   // mean per state
  double mean_return = 0.0;
  double final_pmr = 0.0;
  std::size_t items = 0;
};

/// sum_{t=1}^{n} gamma^t r_t with the first reward weighted by gamma.
double discounted_return(std::span<const double> rewards, double gamma);

/// State of a game right after round t's question was answered.
struct RoundContext {
  DialogState state;  // s_{t-1}
  std::vector<TokenId> question;
  std::vector<TokenId> answer;
  std::size_t round = 1;  // t, 1-based
  std::size_t target_id = 0;
};

/// Forced-action rollout estimate of Q(s_t, candidate): execute the
/// candidate this round, then continue with the current policy to round n.
double estimate_q(const QBot& bot, const Environment& env, const RoundContext& ctx,
                  std::size_t candidate_position, double gamma, std::size_t rollouts,
                  DecodeMode continuation, const Rng& rng);

struct ImprovedAction {
  std::size_t position = 0;  // database row
  std::size_t id = 0;
  std::vector<double> q_values;  // aligned with the top-K candidates
};

/// Argmax of the rollout Q over the candidates. The greedy candidate wins
/// any tie it takes part in; other ties go to the lowest image id.
ImprovedAction select_improved_action(const QBot& bot, const Environment& env, const RoundContext& ctx,
                                      const TopK& candidates, double gamma, std::size_t rollouts,
                                      DecodeMode continuation, const Rng& rng);

/// Supervised replay of one dialog; accumulates gradients of
/// alpha * sum(-log p(q_t|s_{t-1})) + beta * sum(MSE(z_tgt, s_t)).
struct SlDialogLoss {
  double joint = 0.0;
  double nll = 0.0;
  std::size_t tokens = 0;
  double mse = 0.0;
  std::size_t states = 0;
  double final_percentile = 0.0;
};
SlDialogLoss sl_dialog_loss(QBot& bot, const Dialog& dialog, const Environment& env,
                            const TrainConfig& config, bool accumulate_gradients);

EpochMetrics sl_epoch(QBot& bot, SgdMomentum& opt, const std::vector<Dialog>& dialogs,
                      const Environment& env, const TrainConfig& config, std::size_t epoch);

/// One policy-improvement episode; gradients land in encoder and guesser.
std::pair<Trajectory, double> rl_episode(QBot& bot, const Environment& env, const TrainConfig& config,
                                         Rng& rng);
EpochMetrics rl_epoch(QBot& bot, SgdMomentum& opt, const Environment& env, const TrainConfig& config,
                      std::size_t epoch);

/// REINFORCE over question tokens with percentile-improvement rewards.
std::pair<Trajectory, double> word_rl_episode(QBot& bot, const Environment& env, const TrainConfig& config,
                                              Rng& rng);
EpochMetrics word_rl_epoch(QBot& bot, SgdMomentum& opt, const Environment& env, const TrainConfig& config,
                           std::size_t epoch);

/// Optimizer states kept across a fine-tuning run.
struct Optimizers {
  SgdMomentum sl;
  SgdMomentum rl;
  SgdMomentum word;
  explicit Optimizers(const SgdConfig& c) : sl(c), rl(c), word(c) {}
};

using EpochCallback = std::function<void(const EpochMetrics&, const QBot&, const Optimizers&)>;

/// Phase of fine-tuning epoch `epoch` (1-based) under a schedule.
std::string_view phase_for_epoch(Schedule schedule, std::size_t epoch);

/// Runs epochs [first_epoch, last_epoch] of the schedule. Alternation runs
/// RL on odd epochs and SL on even ones.
void fine_tune(QBot& bot, Optimizers& opts, const std::vector<Dialog>& corpus, const Environment& rl_env,
               const Environment& sl_env, const TrainConfig& config, std::size_t first_epoch,
               std::size_t last_epoch, const EpochCallback& on_epoch);

/// Teacher-forced question NLL over dialogs: (sum of -log p, token count).
std::pair<double, std::size_t> corpus_nll(const QBot& bot, const std::vector<Dialog>& dialogs,
                                          const Environment& env);

/// Copies the optimizer velocities into/out of checkpoint form.
void store_optimizers(Checkpoint& ck, const Optimizers& opts);
void restore_optimizers(const Checkpoint& ck, Optimizers& opts);

}  // namespace gw
