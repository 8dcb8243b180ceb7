#include <benchmark/benchmark.h>

#include "guesswhich/corpus.hpp"
#include "guesswhich/eval.hpp"
#include "guesswhich/graph.hpp"
#include "guesswhich/qbot.hpp"
#include "guesswhich/training.hpp"
#include "guesswhich/world.hpp"

namespace {

using namespace gw;

Tensor filled(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.raw()) v = rng.uniform_range(-0.1, 0.1);
  return t;
}

// Default-sized model on a small world, shared by the model benchmarks.
struct Bench {
  World world;
  QBot bot;
  Environment env;

  static Bench& get() {
    static Bench b = [] {
      WorldConfig wc;
      wc.train_images = 500;
      wc.game_images = 500;
      World world = generate_world(wc, 7);
      Rng init(7);
      QBot bot(QBotConfig{}, world.spec.vocabulary, world.spec.feature_dim(), init);
      return Bench{std::move(world), std::move(bot), {}};
    }();
    b.env = Environment::over_train_images(b.world);
    return b;
  }
};

void BM_LstmStepForwardBackward(benchmark::State& state) {
  const auto h = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  ParamStore s;
  auto x = s.add("x", filled({h}, rng), Partition::encoder);
  auto wx = s.add("wx", filled({4 * h, h}, rng), Partition::encoder);
  auto wh = s.add("wh", filled({4 * h, h}, rng), Partition::encoder);
  auto b = s.add("b", filled({4 * h}, rng), Partition::encoder);
  const Tensor zero({h});
  for (auto _ : state) {
    Graph g(true);
    auto next = g.lstm_step(g.param(s, x), {g.constant(zero), g.constant(zero)},
                            {g.param(s, wx), g.param(s, wh), g.param(s, b)});
    g.backward(g.mse(next.h, g.constant(zero)));
  }
  s.zero_grad();
}
BENCHMARK(BM_LstmStepForwardBackward)->Arg(32)->Arg(64)->Arg(128);

void BM_SqDistances(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  ParamStore s;
  auto sv = s.add("s", filled({64}, rng), Partition::encoder);
  const Tensor rows = filled({m, 64}, rng);
  for (auto _ : state) {
    Graph g(false);
    benchmark::DoNotOptimize(g.value(g.sq_distances(g.param(s, sv), g.constant(rows))));
  }
}
BENCHMARK(BM_SqDistances)->Arg(20)->Arg(500)->Arg(2000);

void BM_DialogRound(benchmark::State& state) {
  auto& b = Bench::get();
  const Database pool = Database::from_images(std::span(b.world.images).subspan(b.world.train_count, 500));
  const auto& target = b.world.images[b.world.train_count];
  Rng rng(3);
  auto s = b.bot.init_state(target.caption);
  for (auto _ : state) {
    const auto q = b.bot.decode_question(s, DecodeMode::greedy, rng).tokens;
    const auto a = b.bot.vocabulary().encode(oracle_answer(b.world.spec, target, b.bot.vocabulary().decode(q), rng));
    const auto g = b.bot.guess(s.h, pool);
    benchmark::DoNotOptimize(b.bot.encode_round(s, q, a, pool.feature(g), pool.ids[g]));
  }
}
BENCHMARK(BM_DialogRound);

void BM_EvalGame(benchmark::State& state) {
  auto& b = Bench::get();
  std::size_t index = 0;
  for (auto _ : state) {
    const auto setup = sample_game(b.world, 500, 11, index++);
    const Database pool = Database::from_ids(b.world, setup.pool);
    Rng answers(index);
    benchmark::DoNotOptimize(play_game(b.bot, b.world, pool, setup.target_id, 5, DecodeMode::greedy, answers));
  }
}
BENCHMARK(BM_EvalGame)->Unit(benchmark::kMillisecond);

void BM_SupervisedDialog(benchmark::State& state) {
  auto& b = Bench::get();
  Rng rng(5);
  const auto& img = b.world.images[0];
  const Dialog dialog = scripted_dialog(b.world.spec, img, img.caption, 5, rng);
  const TrainConfig tc;
  for (auto _ : state) {
    benchmark::DoNotOptimize(sl_dialog_loss(b.bot, dialog, b.env, tc, true).joint);
  }
  b.bot.params().zero_grad();
}
BENCHMARK(BM_SupervisedDialog)->Unit(benchmark::kMillisecond);

void BM_RlEpisode(benchmark::State& state) {
  auto& b = Bench::get();
  const TrainConfig tc;
  Rng rng(6);
  for (auto _ : state) benchmark::DoNotOptimize(rl_episode(b.bot, b.env, tc, rng).second);
  b.bot.params().zero_grad();
}
BENCHMARK(BM_RlEpisode)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
