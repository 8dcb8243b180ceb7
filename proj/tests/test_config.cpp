#include <fstream>

#include "doctest.h"
#include "fixtures.hpp"

#include "guesswhich/config.hpp"

using namespace gw;
using nlohmann::json;

TEST_CASE("defaults round trip through JSON") {
  const RunConfig c;
  const auto j = to_json(c);
  const auto back = run_config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(back.train.seed == back.seed);
  CHECK_FALSE(j.at("train").contains("seed"));
  CHECK(j.at("qbot").at("rounds") == j.at("corpus").at("rounds"));
}

TEST_CASE("overrides set nested values and parse JSON literals") {
  auto j = to_json(RunConfig{});
  apply_override(j, "train.alpha=0.5");
  apply_override(j, "seed=77");
  apply_override(j, "serve.host=0.0.0.0");
  apply_override(j, "train.schedule=\"na\"");
  apply_override(j, "corpus.split=[0.6,0.2,0.2]");
  apply_override(j, "serve.service.show_guesses=true");
  const auto c = run_config_from_json(j);
  CHECK(c.train.alpha == 0.5);
  CHECK(c.seed == 77);
  CHECK(c.train.seed == 77);
  CHECK(c.serve.host == "0.0.0.0");
  CHECK(c.train.schedule == Schedule::rl_only);
  CHECK(c.corpus.split[0] == 0.6);
  CHECK(c.serve.service.show_guesses);
}

TEST_CASE("unknown keys are rejected wherever they appear") {
  auto j = to_json(RunConfig{});
  CHECK_THROWS_AS(apply_override(j, "train.alhpa=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "nothing=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "missing-equals"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "=3"), ConfigError);
  CHECK_THROWS_AS(merge_config(j, {{"qbot", {{"layers", 2}}}}), ConfigError);
  CHECK_THROWS_AS(merge_config(j, json::array()), ConfigError);
  CHECK_THROWS_AS(run_config_from_json({{"extra", 1}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json({{"corpus", {{"size", 1}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json({{"pretrain", {{"epoch", 1}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json::array()), ConfigError);
  try {
    apply_override(j, "train.alhpa=1");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.alhpa") != std::string::npos);
  }
}

TEST_CASE("wrong types and invalid values are config errors") {
  CHECK_THROWS_AS(run_config_from_json({{"seed", "x"}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json({{"train", {{"alpha", "big"}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json({{"train", {{"seed", 3}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json({{"train", {{"gamma", 1.5}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json({{"corpus", {{"split", {0.5, 0.5, 0.5}}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json({{"serve", {{"port", 70000}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json({{"world", {{"feature_dim", 16}}}}), ConfigError);  // qbot state 64
}

TEST_CASE("dialog length must agree between corpus and model") {
  auto j = to_json(RunConfig{});
  apply_override(j, "qbot.rounds=3");
  CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
  apply_override(j, "corpus.rounds=3");
  CHECK(run_config_from_json(j).qbot.rounds == 3);
}

TEST_CASE("a config file is layered under command-line overrides") {
  const auto dir = gwtest::temp_dir("config");
  const auto file = dir / "run.json";
  {
    std::ofstream os(file);
    os << "{\n  // comments are allowed\n  \"seed\": 5,\n  \"train\": {\"beta\": 2.0, \"alpha\": 3.0}\n}\n";
  }
  const auto c = load_run_config(file, {"train.alpha=0.25"});
  CHECK(c.seed == 5);
  CHECK(c.train.beta == 2.0);
  CHECK(c.train.alpha == 0.25);
  CHECK(c.train.gamma == RunConfig{}.train.gamma);

  CHECK(load_run_config({}, {}).seed == RunConfig{}.seed);
  CHECK_THROWS_AS(load_run_config(dir / "absent.json", {}), ConfigError);
  {
    std::ofstream os(dir / "bad.json");
    os << "{\"seed\": ";
  }
  CHECK_THROWS_AS(load_run_config(dir / "bad.json", {}), ConfigError);
  {
    std::ofstream os(dir / "typo.json");
    os << "{\"eval\": {\"pmr_game\": 10}}";
  }
  CHECK_THROWS_AS(load_run_config(dir / "typo.json", {}), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("the world schema is replaced as a whole") {
  auto j = to_json(RunConfig{});
  apply_override(j, R"(world.schema=[{"name":"shape","values":["circle","square"]},{"name":"color","values":["red","blue"]}])");
  apply_override(j, "world.caption_mentions=1");
  const auto c = run_config_from_json(j);
  REQUIRE(c.world.schema.size() == 2);
  CHECK(c.world.schema[1].values == std::vector<std::string>{"red", "blue"});
}
