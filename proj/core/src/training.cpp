#include "guesswhich/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gw {

std::string_view schedule_name(Schedule s) {
  switch (s) {
    case Schedule::alternate: return "alt";
    case Schedule::rl_only: return "na";
    case Schedule::word_rl: return "word";
    case Schedule::sl_only: return "sl";
  }
  return "?";
}

Schedule schedule_from_name(std::string_view name) {
  if (name == "alt" || name == "alternate") return Schedule::alternate;
  if (name == "na" || name == "rl-only") return Schedule::rl_only;
  if (name == "word") return Schedule::word_rl;
  if (name == "sl" || name == "sl-only") return Schedule::sl_only;
  throw std::invalid_argument("unknown schedule '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie strictly inside (0, 1)");
  if (alpha < 0.0 || beta < 0.0) throw std::invalid_argument("alpha and beta must be non-negative");
  if (alpha == 0.0 && beta == 0.0) throw std::invalid_argument("alpha and beta cannot both be zero");
  if (rollouts == 0) throw std::invalid_argument("rollouts must be at least 1");
  if (sl_learning_rate <= 0.0 || rl_learning_rate <= 0.0 || word_learning_rate <= 0.0) {
    throw std::invalid_argument("learning rates must be positive");
  }
}

namespace {

std::string_view mode_name(DecodeMode m) { return m == DecodeMode::greedy ? "greedy" : "sample"; }
DecodeMode mode_from_name(const std::string& s) {
  if (s == "greedy") return DecodeMode::greedy;
  if (s == "sample") return DecodeMode::sample;
  throw std::invalid_argument("unknown decode mode '" + s + "'");
}

}  // namespace

nlohmann::json to_json(const TrainConfig& c) {
  return {{"alpha", c.alpha},
          {"beta", c.beta},
          {"gamma", c.gamma},
          {"sl_learning_rate", c.sl_learning_rate},
          {"rl_learning_rate", c.rl_learning_rate},
          {"word_learning_rate", c.word_learning_rate},
          {"episodes_per_epoch", c.episodes_per_epoch},
          {"rollouts", c.rollouts},
          {"schedule", schedule_name(c.schedule)},
          {"execute_improved_action", c.execute_improved_action},
          {"rl_question_mode", mode_name(c.rl_question_mode)},
          {"rollout_question_mode", mode_name(c.rollout_question_mode)},
          {"momentum", c.sgd.momentum},
          {"clip_norm", c.sgd.clip_norm},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "alpha") c.alpha = v.get<double>();
    else if (key == "beta") c.beta = v.get<double>();
    else if (key == "gamma") c.gamma = v.get<double>();
    else if (key == "sl_learning_rate") c.sl_learning_rate = v.get<double>();
    else if (key == "rl_learning_rate") c.rl_learning_rate = v.get<double>();
    else if (key == "word_learning_rate") c.word_learning_rate = v.get<double>();
    else if (key == "episodes_per_epoch") c.episodes_per_epoch = v.get<std::size_t>();
    else if (key == "rollouts") c.rollouts = v.get<std::size_t>();
    else if (key == "schedule") c.schedule = schedule_from_name(v.get<std::string>());
    else if (key == "execute_improved_action") c.execute_improved_action = v.get<bool>();
    else if (key == "rl_question_mode") c.rl_question_mode = mode_from_name(v.get<std::string>());
    else if (key == "rollout_question_mode") c.rollout_question_mode = mode_from_name(v.get<std::string>());
    else if (key == "momentum") c.sgd.momentum = v.get<double>();
    else if (key == "clip_norm") c.sgd.clip_norm = v.get<double>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else throw std::invalid_argument("unknown train config key '" + key + "'");
  }
  return c;
}

Environment Environment::over_train_images(const World& world) {
  return Environment{&world, Database::from_images(world.train_images())};
}

Environment Environment::over_game_images(const World& world) {
  return Environment{&world, Database::from_images(world.game_images())};
}

double discounted_return(std::span<const double> rewards, double gamma) {
  double total = 0.0;
  double weight = gamma;
  for (double r : rewards) {
    total += weight * r;
    weight *= gamma;
  }
  return total;
}

namespace {

std::vector<TokenId> answer_ids(const QBot& bot, const Environment& env, std::size_t target_id,
                                const std::vector<TokenId>& question, Rng& rng) {
  const auto& vocab = bot.vocabulary();
  return vocab.encode(oracle_answer(env.world->spec, env.image(target_id), vocab.decode(question), rng));
}

}  // namespace

double estimate_q(const QBot& bot, const Environment& env, const RoundContext& ctx,
                  std::size_t candidate_position, double gamma, std::size_t rollouts,
                  DecodeMode continuation, const Rng& rng) {
  if (rollouts == 0) throw std::invalid_argument("estimate_q needs at least one rollout");
  const std::size_t n = bot.config().rounds;
  if (ctx.round == 0 || ctx.round > n) throw std::invalid_argument("round outside the game");
  const Database& db = env.database;
  const std::size_t target_pos = db.position(ctx.target_id);
  double total = 0.0;
  for (std::size_t r = 0; r < rollouts; ++r) {
    Rng local = rng.fork(r);
    DialogState s = bot.encode_round(ctx.state, ctx.question, ctx.answer, db.feature(candidate_position),
                                     db.ids[candidate_position]);
    auto d = bot.distances(s.s(), db);
    double weight = std::pow(gamma, static_cast<double>(ctx.round));
    double ret = weight * percentile_from_distances(d, target_pos);
    for (std::size_t t = ctx.round + 1; t <= n; ++t) {
      weight *= gamma;
      const auto q = bot.decode_question(s, continuation, local).tokens;
      const auto a = answer_ids(bot, env, ctx.target_id, q, local);
      const std::size_t g = argmin_lowest_id(d, db.ids);
      s = bot.encode_round(s, q, a, db.feature(g), db.ids[g]);
      d = bot.distances(s.s(), db);
      ret += weight * percentile_from_distances(d, target_pos);
    }
    total += ret;
  }
  return total / static_cast<double>(rollouts);
}

ImprovedAction select_improved_action(const QBot& bot, const Environment& env, const RoundContext& ctx,
                                      const TopK& candidates, double gamma, std::size_t rollouts,
                                      DecodeMode continuation, const Rng& rng) {
  if (candidates.positions.empty()) throw std::invalid_argument("no candidates to improve over");
  ImprovedAction best;
  double best_q = -1.0;
  for (std::size_t k = 0; k < candidates.positions.size(); ++k) {
    const double q = estimate_q(bot, env, ctx, candidates.positions[k], gamma, rollouts, continuation, rng);
    best.q_values.push_back(q);
    const std::size_t id = candidates.ids[k];
    if (q > best_q || (q == best_q && id < best.id)) {
      best_q = q;
      best.position = candidates.positions[k];
      best.id = id;
    }
  }
  // the greedy action keeps its place when nothing beats it
  if (best.q_values.front() == best_q) {
    best.position = candidates.positions.front();
    best.id = candidates.ids.front();
  }
  return best;
}

SlDialogLoss sl_dialog_loss(QBot& bot, const Dialog& dialog, const Environment& env,
                            const TrainConfig& config, bool accumulate_gradients) {
  const auto& vocab = bot.vocabulary();
  const Tensor& z_target = env.image(dialog.image_id).feature;
  if (z_target.size() != bot.config().state_dim) throw ShapeError("world feature dim does not match qbot state dim");
  Graph g(accumulate_gradients);
  QBotGraph qg(g, bot, QBotGraph::Train::all);
  const Var target = g.constant(z_target);

  SlDialogLoss out;
  std::vector<Var> nll_terms;
  std::vector<Var> mse_terms;
  auto state = qg.init_state(vocab.encode(dialog.caption));
  mse_terms.push_back(g.mse(state.h, target));
  for (const auto& round : dialog.rounds) {
    const auto q = vocab.encode(round.question);
    const auto a = vocab.encode(round.answer);
    nll_terms.push_back(qg.question_nll(state.h, q));
    out.tokens += q.size();
    const std::size_t guess = bot.guess(g.value(state.h), env.database);
    state = qg.encode_round(state, q, a, env.database.feature(guess));
    mse_terms.push_back(g.mse(state.h, target));
  }
  const Var nll = g.sum(nll_terms);
  const Var mse = g.sum(mse_terms);
  out.nll = g.scalar(nll);
  out.mse = g.scalar(mse);
  out.states = mse_terms.size();
  const Var joint = g.add(g.scale(nll, config.alpha), g.scale(mse, config.beta));
  out.joint = g.scalar(joint);
  if (env.database.ids.end() != std::find(env.database.ids.begin(), env.database.ids.end(), dialog.image_id)) {
    out.final_percentile = bot.rank_percentile(g.value(state.h), env.database, dialog.image_id);
  }
  if (accumulate_gradients) g.backward(joint);
  return out;
}

EpochMetrics sl_epoch(QBot& bot, SgdMomentum& opt, const std::vector<Dialog>& dialogs,
                      const Environment& env, const TrainConfig& config, std::size_t epoch) {
  config.validate();
  if (dialogs.empty()) throw std::invalid_argument("sl_epoch on an empty corpus");
  std::vector<std::size_t> order(dialogs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng(config.seed).fork(mix_seed(0x51, epoch));
  rng.shuffle(order);

  EpochMetrics m;
  m.epoch = epoch;
  m.phase = "sl";
  double nll = 0.0, mse = 0.0, joint = 0.0, pct = 0.0;
  std::size_t tokens = 0, states = 0;
  for (auto idx : order) {
    const auto loss = sl_dialog_loss(bot, dialogs[idx], env, config, true);
    opt.step(bot.params(), config.sl_learning_rate);
    nll += loss.nll;
    tokens += loss.tokens;
    mse += loss.mse;
    states += loss.states;
    joint += loss.joint;
    pct += loss.final_percentile;
  }
  const auto n = static_cast<double>(dialogs.size());
  m.items = dialogs.size();
  m.nll = tokens ? nll / static_cast<double>(tokens) : 0.0;
  m.mse = states ? mse / static_cast<double>(states) : 0.0;
  m.joint_loss = joint / n;
  m.final_pmr = pct / n;
  return m;
}

std::pair<Trajectory, double> rl_episode(QBot& bot, const Environment& env, const TrainConfig& config,
                                         Rng& rng) {
  const auto& cfg = bot.config();
  const Database& db = env.database;
  if (cfg.top_k > db.size()) throw std::invalid_argument("top_k exceeds database size");
  Trajectory traj;
  traj.target_id = db.ids[rng.uniform_index(db.size())];
  const SynthImage& target = env.image(traj.target_id);
  const std::size_t target_pos = db.position(traj.target_id);

  Graph g(true);
  QBotGraph qg(g, bot, QBotGraph::Train::encoder_and_guesser);
  auto state = qg.init_state(bot.vocabulary().encode(target.caption));
  DialogState snapshot;
  snapshot.h = g.value(state.h);
  snapshot.c = g.value(state.c);

  std::vector<Var> losses;
  std::vector<double> rewards;
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    RoundRecord rec;
    rec.state = snapshot.h;
    rec.question = bot.decode_question(snapshot, config.rl_question_mode, rng).tokens;
    rec.answer = answer_ids(bot, env, traj.target_id, rec.question, rng);

    const TopK topk = bot.policy_topk(snapshot.s(), db, cfg.top_k);
    RoundContext ctx{snapshot, rec.question, rec.answer, t, traj.target_id};
    const Rng rollout_rng = rng.fork(t);
    const ImprovedAction best = select_improved_action(bot, env, ctx, topk, config.gamma, config.rollouts,
                                                       config.rollout_question_mode, rollout_rng);
    rec.candidates = topk.ids;
    rec.q_values = best.q_values;
    rec.improved_id = best.id;
    const std::size_t label =
        static_cast<std::size_t>(std::find(topk.ids.begin(), topk.ids.end(), best.id) - topk.ids.begin());

    std::vector<Tensor> feats;
    feats.reserve(topk.positions.size());
    for (auto p : topk.positions) feats.push_back(db.feature(p));
    losses.push_back(qg.policy_nll(state.h, qg.guesser_rows(feats), label));

    const std::size_t exec_pos = config.execute_improved_action ? best.position : topk.positions.front();
    rec.executed_id = db.ids[exec_pos];
    state = qg.encode_round(state, rec.question, rec.answer, db.feature(exec_pos));
    snapshot.h = g.value(state.h);
    snapshot.c = g.value(state.c);
    snapshot.transcript.push_back({rec.question, rec.answer});
    snapshot.guesses.push_back(rec.executed_id);
    rec.reward = percentile_from_distances(bot.distances(snapshot.s(), db), target_pos);
    rewards.push_back(rec.reward);
    traj.rounds.push_back(std::move(rec));
  }
  traj.episode_return = discounted_return(rewards, config.gamma);
  const Var loss = g.sum(losses);
  g.backward(loss);
  return {std::move(traj), g.scalar(loss)};
}

EpochMetrics rl_epoch(QBot& bot, SgdMomentum& opt, const Environment& env, const TrainConfig& config,
                      std::size_t epoch) {
  config.validate();
  EpochMetrics m;
  m.epoch = epoch;
  m.phase = "rl";
  for (std::size_t e = 0; e < config.episodes_per_epoch; ++e) {
    Rng rng = Rng(config.seed).fork(mix_seed(mix_seed(0x52, epoch), e));
    auto [traj, loss] = rl_episode(bot, env, config, rng);
    opt.step(bot.params(), config.rl_learning_rate, {Partition::encoder, Partition::guesser});
    m.joint_loss += loss;
    m.mean_return += traj.episode_return;
    m.final_pmr += traj.rounds.empty() ? 0.0 : traj.rounds.back().reward;
  }
  m.items = config.episodes_per_epoch;
  if (m.items) {
    const auto n = static_cast<double>(m.items);
    m.joint_loss /= n;
    m.mean_return /= n;
    m.final_pmr /= n;
  }
  return m;
}

std::pair<Trajectory, double> word_rl_episode(QBot& bot, const Environment& env, const TrainConfig& config,
                                              Rng& rng) {
  const auto& cfg = bot.config();
  const Database& db = env.database;
  Trajectory traj;
  traj.target_id = db.ids[rng.uniform_index(db.size())];
  const SynthImage& target = env.image(traj.target_id);
  const std::size_t target_pos = db.position(traj.target_id);

  Graph g(true);
  QBotGraph qg(g, bot, QBotGraph::Train::encoder_and_decoder);
  auto state = qg.init_state(bot.vocabulary().encode(target.caption));
  DialogState snapshot;
  snapshot.h = g.value(state.h);
  snapshot.c = g.value(state.c);
  auto d = bot.distances(snapshot.s(), db);
  double prev = percentile_from_distances(d, target_pos);

  std::vector<Var> nll;
  std::vector<double> gains;
  std::vector<double> rewards;
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    RoundRecord rec;
    rec.state = snapshot.h;
    rec.question = bot.decode_question(snapshot, config.rl_question_mode, rng).tokens;
    rec.answer = answer_ids(bot, env, traj.target_id, rec.question, rng);
    nll.push_back(qg.question_nll(state.h, rec.question));
    const std::size_t guess = argmin_lowest_id(d, db.ids);
    rec.executed_id = db.ids[guess];
    rec.improved_id = rec.executed_id;
    state = qg.encode_round(state, rec.question, rec.answer, db.feature(guess));
    snapshot.h = g.value(state.h);
    snapshot.c = g.value(state.c);
    d = bot.distances(snapshot.s(), db);
    rec.reward = percentile_from_distances(d, target_pos);
    gains.push_back(rec.reward - prev);
    prev = rec.reward;
    rewards.push_back(rec.reward);
    traj.rounds.push_back(std::move(rec));
  }
  traj.episode_return = discounted_return(rewards, config.gamma);

  // loss = -sum_t G_t log p(q_t | s_{t-1}) = sum_t G_t nll_t
  std::vector<Var> terms;
  double to_go = 0.0;
  std::vector<double> returns(gains.size());
  for (std::size_t t = gains.size(); t-- > 0;) {
    to_go = gains[t] + config.gamma * to_go;
    returns[t] = to_go;
  }
  for (std::size_t t = 0; t < nll.size(); ++t) terms.push_back(g.scale(nll[t], returns[t]));
  const Var loss = g.sum(terms);
  g.backward(loss);
  return {std::move(traj), g.scalar(loss)};
}

EpochMetrics word_rl_epoch(QBot& bot, SgdMomentum& opt, const Environment& env, const TrainConfig& config,
                           std::size_t epoch) {
  config.validate();
  EpochMetrics m;
  m.epoch = epoch;
  m.phase = "word";
  for (std::size_t e = 0; e < config.episodes_per_epoch; ++e) {
    Rng rng = Rng(config.seed).fork(mix_seed(mix_seed(0x57, epoch), e));
    auto [traj, loss] = word_rl_episode(bot, env, config, rng);
    opt.step(bot.params(), config.word_learning_rate, {Partition::encoder, Partition::decoder});
    m.joint_loss += loss;
    m.mean_return += traj.episode_return;
    m.final_pmr += traj.rounds.empty() ? 0.0 : traj.rounds.back().reward;
  }
  m.items = config.episodes_per_epoch;
  if (m.items) {
    const auto n = static_cast<double>(m.items);
    m.joint_loss /= n;
    m.mean_return /= n;
    m.final_pmr /= n;
  }
  return m;
}

std::string_view phase_for_epoch(Schedule schedule, std::size_t epoch) {
  switch (schedule) {
    case Schedule::alternate: return epoch % 2 == 1 ? "rl" : "sl";
    case Schedule::rl_only: return "rl";
    case Schedule::word_rl: return "word";
    case Schedule::sl_only: return "sl";
  }
  return "?";
}

void fine_tune(QBot& bot, Optimizers& opts, const std::vector<Dialog>& corpus, const Environment& rl_env,
               const Environment& sl_env, const TrainConfig& config, std::size_t first_epoch,
               std::size_t last_epoch, const EpochCallback& on_epoch) {
  config.validate();
  for (std::size_t epoch = first_epoch; epoch <= last_epoch; ++epoch) {
    const auto phase = phase_for_epoch(config.schedule, epoch);
    EpochMetrics m;
    if (phase == "rl") m = rl_epoch(bot, opts.rl, rl_env, config, epoch);
    else if (phase == "word") m = word_rl_epoch(bot, opts.word, rl_env, config, epoch);
    else m = sl_epoch(bot, opts.sl, corpus, sl_env, config, epoch);
    if (on_epoch) on_epoch(m, bot, opts);
  }
}

std::pair<double, std::size_t> corpus_nll(const QBot& bot, const std::vector<Dialog>& dialogs,
                                          const Environment& env) {
  const auto& vocab = bot.vocabulary();
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& dialog : dialogs) {
    DialogState s = bot.init_state(dialog.caption);
    for (const auto& round : dialog.rounds) {
      const auto q = vocab.encode(round.question);
      total -= bot.score_question(s, q);
      tokens += q.size();
      const std::size_t guess = bot.guess(s.s(), env.database);
      s = bot.encode_round(s, q, vocab.encode(round.answer), env.database.feature(guess),
                           env.database.ids[guess]);
    }
  }
  return {total, tokens};
}

void store_optimizers(Checkpoint& ck, const Optimizers& opts) {
  ck.optimizer_state["sl"] = opts.sl.velocities();
  ck.optimizer_state["rl"] = opts.rl.velocities();
  ck.optimizer_state["word"] = opts.word.velocities();
}

void restore_optimizers(const Checkpoint& ck, Optimizers& opts) {
  auto restore = [&](const char* name, SgdMomentum& opt) {
    opt.reset();
    if (auto it = ck.optimizer_state.find(name); it != ck.optimizer_state.end()) {
      for (const auto& [k, v] : it->second) opt.set_velocity(k, v);
    }
  };
  restore("sl", opts.sl);
  restore("rl", opts.rl);
  restore("word", opts.word);
}

}  // namespace gw
