#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "gradient_suite.hpp"
#include "guesswhich/checkpoint.hpp"
#include "guesswhich/optimizer.hpp"

using namespace gw;
using gwtest::graph_gradient_error;
using gwtest::random_tensor;

namespace {

Tensor eval(const std::function<Var(Graph&)>& f) {
  Graph g(false);
  return g.value(f(g));
}

double worst_of(const gwtest::CaseBuilder& check, std::size_t trials, std::uint64_t seed) {
  double worst = 0.0;
  for (std::size_t i = 0; i < trials; ++i) {
    Rng rng = Rng(seed).fork(i);
    worst = std::max(worst, check(rng));
  }
  return worst;
}

}  // namespace

TEST_CASE("tensor shape and finiteness") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  CHECK_THROWS_AS(Tensor::vector({1.0, NAN}), NumericError);
  Tensor t = Tensor::vector({1.0, 2.0});
  t[1] = INFINITY;
  CHECK_FALSE(t.all_finite());
  CHECK_THROWS_AS(t.require_finite("t"), NumericError);
  CHECK(Tensor::scalar(4.0).size() == 1);
}

TEST_CASE("rng streams are reproducible and forks are independent of the parent") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(42);
  const auto f1 = c.fork(7).next_u64();
  c.next_u64();
  CHECK(c.fork(7).next_u64() == f1);
  CHECK(Rng(42).fork(8).next_u64() != f1);
}

TEST_CASE("linear values") {
  auto y = eval([](Graph& g) {
    return g.linear(g.constant(Tensor::vector({1, 0})), g.constant(Tensor::matrix(2, 2, {1, 0, 0, 1})),
                    g.constant(Tensor::vector({0, 0})));
  });
  CHECK(y == Tensor::vector({1, 0}));
  y = eval([](Graph& g) {
    return g.linear(g.constant(Tensor::vector({2})), g.constant(Tensor::matrix(1, 1, {3})),
                    g.constant(Tensor::vector({1})));
  });
  CHECK(y[0] == 7.0);
  Graph g(false);
  CHECK_THROWS_AS(g.linear(g.constant(Tensor::vector({1, 2, 3})), g.constant(Tensor::matrix(1, 2, {1, 1})),
                           g.constant(Tensor::vector({0}))),
                  ShapeError);
}

TEST_CASE("embed values") {
  ParamStore s;
  auto table = s.add("t", Tensor::matrix(3, 2, {0, 0, 1, 2, 3, 4}), Partition::encoder);
  Graph g(true);
  CHECK(g.value(g.embed(0, g.param(s, table))) == Tensor::vector({0, 0}));
  CHECK(g.value(g.embed(2, g.param(s, table))) == g.value(g.embed(2, g.param(s, table))));
  CHECK_THROWS_AS(g.embed(3, g.param(s, table)), std::out_of_range);

  Graph g2(true);
  g2.backward(g2.mse(g2.embed(1, g2.param(s, table)), g2.constant(Tensor::vector({0, 0}))));
  const auto& grad = s.grad(table);
  CHECK(grad.at(0, 0) == 0.0);
  CHECK(grad.at(2, 1) == 0.0);
  CHECK(grad.at(1, 0) == doctest::Approx(1.0));
  CHECK(grad.at(1, 1) == doctest::Approx(2.0));
}

TEST_CASE("lstm zero cell stays at zero") {
  Graph g(false);
  const auto z = [&](Shape s) { return g.constant(Tensor(std::move(s))); };
  auto next = g.lstm_step(z({3}), {z({2}), z({2})}, {z({8, 3}), z({8, 2}), z({8})});
  CHECK(g.value(next.h) == Tensor({2}));
  CHECK(g.value(next.c) == Tensor({2}));
}

TEST_CASE("softmax values and stability") {
  auto p = eval([](Graph& g) { return g.softmax(g.constant(Tensor::vector({0, 0}))); });
  CHECK(p[0] == 0.5);
  CHECK(p[1] == 0.5);
  p = eval([](Graph& g) { return g.softmax(g.constant(Tensor::vector({1, 2, 3}))); });
  // direct evaluation: e^k / (e + e^2 + e^3)
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(p[0] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-12));
  CHECK(p[0] == doctest::Approx(0.09003).epsilon(1e-4));
  CHECK(p[1] == doctest::Approx(0.24473).epsilon(1e-4));
  CHECK(p[2] == doctest::Approx(0.66524).epsilon(1e-4));
  p = eval([](Graph& g) { return g.softmax(g.constant(Tensor::vector({1000, 0}))); });
  CHECK(p.all_finite());
  CHECK(p[0] == doctest::Approx(1.0));
  CHECK(p[1] < 1e-300);

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto logits = random_tensor({1 + rng.uniform_index(8)}, rng, 5.0);
    const double shift = rng.uniform_range(-100, 100);
    auto shifted = logits;
    for (auto& v : shifted.raw()) v += shift;
    auto a = eval([&](Graph& g) { return g.softmax(g.constant(logits)); });
    auto b = eval([&](Graph& g) { return g.softmax(g.constant(shifted)); });
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      total += a[i];
      CHECK(std::abs(a[i] - b[i]) < 1e-12);
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("cross entropy values") {
  Graph g(false);
  CHECK(g.scalar(g.cross_entropy(g.constant(Tensor::vector({0.5, 0.5})), 1)) == doctest::Approx(std::log(2.0)));
  CHECK(g.scalar(g.cross_entropy(g.constant(Tensor::vector({1, 0})), 0)) == 0.0);
  CHECK(g.scalar(g.cross_entropy(g.constant(Tensor::vector({0.25, 0.75})), 1)) ==
        doctest::Approx(-std::log(0.75)));
  CHECK(-std::log(0.75) == doctest::Approx(0.28768).epsilon(1e-4));
  CHECK_THROWS_AS(g.cross_entropy(g.constant(Tensor::vector({0.5, 0.5})), 2), std::out_of_range);
}

TEST_CASE("mse values") {
  Graph g(false);
  auto a = g.constant(Tensor::vector({0.3, -1.0}));
  CHECK(g.scalar(g.mse(a, a)) == 0.0);
  CHECK(g.scalar(g.mse(g.constant(Tensor::vector({0, 0})), g.constant(Tensor::vector({1, 1})))) == 1.0);
  CHECK_THROWS_AS(g.mse(a, g.constant(Tensor::vector({1}))), ShapeError);
}

TEST_CASE("per-primitive finite-difference checks") {
  CHECK(worst_of(gwtest::check_linear, 20, 11) < 1e-6);
  CHECK(worst_of(gwtest::check_embed, 20, 12) < 1e-6);
  CHECK(worst_of(gwtest::check_lstm, 20, 13) < 1e-5);
  CHECK(worst_of(gwtest::check_mse, 20, 14) < 1e-8);
  CHECK(worst_of(gwtest::check_softmax, 20, 15) < 1e-4);
  CHECK(worst_of(gwtest::check_softmax_cross_entropy, 20, 16) < 1e-4);
  CHECK(worst_of(gwtest::check_cross_entropy, 20, 17) < 1e-4);
  CHECK(worst_of(gwtest::check_concat_slice, 20, 18) < 1e-4);
  CHECK(worst_of(gwtest::check_sq_distances, 20, 19) < 1e-4);
  CHECK(worst_of(gwtest::check_stack_add_scale_sum, 20, 20) < 1e-4);
  CHECK(worst_of(gwtest::check_linear_lstm_mse, 20, 21) < 1e-4);
}

TEST_CASE("composed training losses pass finite-difference checks") {
  CHECK(worst_of(gwtest::check_supervised_loss, 4, 31) < 1e-4);
  CHECK(worst_of(gwtest::check_policy_loss, 4, 32) < 1e-4);
}

TEST_CASE("backward accumulation") {
  Rng rng(5);
  ParamStore s;
  auto w = s.add("w", random_tensor({3, 2}, rng), Partition::encoder);
  auto x = s.add("x", random_tensor({2}, rng), Partition::guesser);
  const auto t1 = random_tensor({3}, rng), t2 = random_tensor({3}, rng);
  const auto zero_b = Tensor({3});

  auto loss1 = [&](Graph& g) { return g.mse(g.linear(g.param(s, x), g.param(s, w), g.constant(zero_b)), g.constant(t1)); };
  auto loss2 = [&](Graph& g) {
    return g.scale(g.mse(g.linear(g.param(s, x), g.param(s, w), g.constant(zero_b)), g.constant(t2)), 3.0);
  };

  SUBCASE("zero loss graph gives zero gradients") {
    Graph g(true);
    g.backward(g.scale(loss1(g), 0.0));
    CHECK(s.grad(w) == Tensor({3, 2}));
    CHECK(s.grad(x) == Tensor({2}));
  }
  SUBCASE("two backward calls double the gradient") {
    Graph g(true);
    auto l = loss1(g);
    g.backward(l);
    const Tensor once = s.grad(w);
    g.backward(l);
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(s.grad(w)[i] == 2.0 * once[i]);
  }
  SUBCASE("backward of a sum equals the sum of backwards") {
    {
      Graph g(true);
      g.backward(loss1(g));
    }
    {
      Graph g(true);
      g.backward(loss2(g));
    }
    const Tensor separate = s.grad(w);
    s.zero_grad();
    Graph g(true);
    g.backward(g.add(loss1(g), loss2(g)));
    for (std::size_t i = 0; i < separate.size(); ++i) CHECK(s.grad(w)[i] == doctest::Approx(separate[i]).epsilon(1e-12));
  }
  SUBCASE("non-scalar loss is rejected") {
    Graph g(true);
    CHECK_THROWS_AS(g.backward(g.param(s, x)), ShapeError);
  }
  SUBCASE("frozen parameters receive nothing") {
    Graph g(true);
    g.backward(g.mse(g.linear(g.param(s, x), g.frozen_param(s, w), g.constant(zero_b)), g.constant(t1)));
    CHECK(s.grad(w) == Tensor({3, 2}));
    CHECK(s.grad(x) != Tensor({2}));
  }
}

TEST_CASE("optimizer step") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParamStore s;
    auto p = s.add("p", Tensor::vector({1.0, -2.0}), Partition::encoder);
    SgdMomentum opt;
    opt.step(s, 0.1);
    CHECK(s.value(p) == Tensor::vector({1.0, -2.0}));
  }
  SUBCASE("plain gradient step arithmetic") {
    ParamStore s;
    auto p = s.add("p", Tensor::scalar(1.0), Partition::encoder);
    s.grad(p)[0] = 2.0;
    SgdMomentum opt({0.0, 5.0});
    opt.step(s, 0.1);
    CHECK(s.value(p)[0] == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(s.grad(p)[0] == 0.0);
  }
  SUBCASE("momentum converges on a quadratic") {
    ParamStore s;
    auto p = s.add("p", Tensor::scalar(0.0), Partition::encoder);
    SgdMomentum opt;
    for (int i = 0; i < 200; ++i) {
      Graph g(true);
      // (p - 3)^2 as a one-element mse
      g.backward(g.mse(g.param(s, p), g.constant(Tensor::scalar(3.0))));
      opt.step(s, 0.05);
    }
    CHECK(std::abs(s.value(p)[0] - 3.0) < 1e-3);
  }
  SUBCASE("non-finite gradient names the tensor") {
    ParamStore s;
    auto p = s.add("enc.bad", Tensor::scalar(1.0), Partition::encoder);
    s.grad(p)[0] = INFINITY;
    SgdMomentum opt;
    CHECK_THROWS_WITH_AS(opt.step(s, 0.1), doctest::Contains("enc.bad"), NumericError);
  }
  SUBCASE("only listed partitions move") {
    ParamStore s;
    auto a = s.add("a", Tensor::scalar(1.0), Partition::encoder);
    auto d = s.add("d", Tensor::scalar(1.0), Partition::decoder);
    s.grad(a)[0] = 1.0;
    s.grad(d)[0] = 1.0;
    SgdMomentum opt;
    opt.step(s, 0.5, {Partition::encoder});
    CHECK(s.value(a)[0] == 0.5);
    CHECK(s.value(d)[0] == 1.0);
    CHECK(s.grad(d)[0] == 0.0);
  }
  SUBCASE("clipping bounds the applied update") {
    ParamStore s;
    auto p = s.add("p", Tensor::vector({0.0, 0.0}), Partition::encoder);
    s.grad(p)[0] = 30.0;
    s.grad(p)[1] = 40.0;
    SgdMomentum opt({0.0, 5.0});
    CHECK(opt.step(s, 1.0) == doctest::Approx(50.0));
    CHECK(s.value(p)[0] == doctest::Approx(-3.0));
    CHECK(s.value(p)[1] == doctest::Approx(-4.0));
  }
}

TEST_CASE("fixed seed gives bit-identical parameter trajectories") {
  auto run = [] {
    Rng rng(77);
    ParamStore s;
    auto w = s.add_uniform("w", {4, 3}, 3, Partition::encoder, rng);
    auto x = s.add_uniform("x", {3}, 3, Partition::encoder, rng);
    const auto target = random_tensor({4}, rng);
    SgdMomentum opt;
    for (int i = 0; i < 25; ++i) {
      Graph g(true);
      g.backward(g.mse(g.linear(g.param(s, x), g.param(s, w), g.constant(Tensor({4}))), g.constant(target)));
      opt.step(s, 0.1);
    }
    return s;
  };
  CHECK(run() == run());
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(9);
  Checkpoint ck;
  ck.vocabulary = {"<pad>", "<start>", "<end>", "<unk>", "red"};
  ck.params.add_uniform("enc.w", {3, 2}, 2, Partition::encoder, rng);
  ck.params.add_uniform("dec.w", {2}, 2, Partition::decoder, rng);
  ck.params.add("guess.w", Tensor::vector({1.0 / 3.0, -0.0, 1e-300}), Partition::guesser);
  ck.optimizer_state["sl"]["enc.w"] = random_tensor({3, 2}, rng);
  ck.config = {{"seed", 5}, {"alpha", 1.0}};
  ck.meta = {{"epoch", 3}};

  const auto path = std::filesystem::temp_directory_path() / "gwq-neuro-roundtrip.ckpt";
  save_checkpoint(path, ck);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.format_version == kCheckpointFormat);
  CHECK(back.vocabulary == ck.vocabulary);
  CHECK(back.params == ck.params);
  CHECK(back.optimizer_state == ck.optimizer_state);
  CHECK(back.config == ck.config);
  CHECK(back.meta == ck.meta);
  CHECK(partition_bytes(back.params, Partition::decoder) == partition_bytes(ck.params, Partition::decoder));
  CHECK(std::signbit(back.params.value(back.params.id("guess.w"))[1]));

  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  std::filesystem::remove(path);
}
