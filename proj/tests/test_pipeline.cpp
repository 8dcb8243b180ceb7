#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"

#include "guesswhich/checkpoint.hpp"
#include "guesswhich/pipeline.hpp"

using namespace gw;
using namespace gwtest;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_run() {
  RunConfig c;
  c.seed = 11;
  c.world = small_world_config(40, 30);
  c.corpus.dialogs = 40;
  c.corpus.rounds = 3;
  c.qbot = small_qbot_config(8, 3, 3);
  c.train.episodes_per_epoch = 8;
  c.pretrain_epochs = 2;
  c.finetune_epochs = 2;
  c.eval = EvalConfig{12, 10, 12, 5, 3};
  return c;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) out.push_back(line);
  return out;
}

std::vector<std::string> phases(const fs::path& metrics) {
  std::vector<std::string> out;
  for (const auto& line : lines_of(slurp(metrics))) {
    if (line.empty() || line[0] == '#' || line.rfind("epoch,", 0) == 0) continue;
    const auto a = line.find(',');
    out.push_back(line.substr(a + 1, line.find(',', a + 1) - a - 1));
  }
  return out;
}

struct PipelineFixture {
  fs::path root = temp_dir("pipeline");
  RunConfig config = tiny_run();
  Dataset data;

  PipelineFixture() {
    run_datagen(config, root / "data");
    data = load_dataset(root / "data");
  }
  ~PipelineFixture() { fs::remove_all(root); }
};

}  // namespace

TEST_CASE("datagen is byte-identical for the same seed and creates missing directories") {
  const auto root = temp_dir("datagen");
  const auto config = tiny_run();
  run_datagen(config, root / "a" / "nested");
  run_datagen(config, root / "b");
  for (const char* f : {"world.json", "config.json", "corpus/train.jsonl", "corpus/validation.jsonl",
                        "corpus/test.jsonl"}) {
    CAPTURE(f);
    CHECK(fs::exists(root / "b" / f));
    CHECK(slurp(root / "a" / "nested" / f) == slurp(root / "b" / f));
  }
  auto other = config;
  other.seed = 12;
  run_datagen(other, root / "c");
  CHECK(slurp(root / "c" / "world.json") != slurp(root / "b" / "world.json"));

  const auto data = load_dataset(root / "b");
  CHECK(data.corpus.train.size() + data.corpus.validation.size() + data.corpus.test.size() == 40);
  CHECK(data.world.images.size() == 70);
  fs::remove_all(root);
}

TEST_CASE("loading a missing or damaged dataset is a data error") {
  const auto root = temp_dir("nodata");
  CHECK_THROWS_AS(load_dataset(root), DataError);
  run_datagen(tiny_run(), root);
  {
    std::ofstream os(root / "world.json");
    os << "{";
  }
  CHECK_THROWS_AS(load_dataset(root), DataError);
  fs::remove_all(root);
}

TEST_CASE("zero pre-training epochs leaves only the initial checkpoint") {
  PipelineFixture f;
  f.config.pretrain_epochs = 0;
  const auto out = f.root / "sl0";
  const auto final_path = run_pretrain(f.config, f.data, out, false, nullptr);
  CHECK(fs::exists(final_path));
  CHECK(fs::exists(epoch_checkpoint(out, "sl", 0)));
  CHECK_FALSE(fs::exists(epoch_checkpoint(out, "sl", 1)));
  CHECK(latest_epoch(out, "sl") == 0);
  const auto rows = lines_of(slurp(out / "metrics.csv"));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].rfind("# config: ", 0) == 0);
  CHECK(rows[1] == kMetricsHeader);
}

TEST_CASE("pre-training writes one metrics row and one checkpoint per epoch, reproducibly") {
  PipelineFixture f;
  std::ostringstream log;
  const auto a = run_pretrain(f.config, f.data, f.root / "a", false, &log);
  const auto b = run_pretrain(f.config, f.data, f.root / "b", false, nullptr);
  CHECK(log.str().find("epoch 2 sl") != std::string::npos);
  CHECK(phases(f.root / "a" / "metrics.csv") == std::vector<std::string>{"sl", "sl"});
  CHECK(latest_epoch(f.root / "a", "sl") == 2);
  CHECK(slurp(f.root / "a" / "metrics.csv") == slurp(f.root / "b" / "metrics.csv"));
  CHECK(slurp(a) == slurp(b));
  const auto bot = load_qbot(a);
  CHECK(bot.config().rounds == 3);
}

TEST_CASE("resuming after an interruption matches an uninterrupted run") {
  PipelineFixture f;
  const auto full = run_pretrain(f.config, f.data, f.root / "full", false, nullptr);
  const auto out = f.root / "cut";
  run_pretrain(f.config, f.data, out, false, nullptr);
  // lose the last epoch as if the process died while writing it
  fs::remove(epoch_checkpoint(out, "sl", 2));
  fs::remove(out / "sl.ckpt");
  std::ostringstream log;
  const auto resumed = run_pretrain(f.config, f.data, out, true, &log);
  CHECK(log.str().find("resuming pretraining after epoch 1") != std::string::npos);
  CHECK(slurp(out / "metrics.csv") == slurp(f.root / "full" / "metrics.csv"));
  CHECK(slurp(resumed) == slurp(full));
  CHECK(slurp(epoch_checkpoint(out, "sl", 2)) == slurp(epoch_checkpoint(f.root / "full", "sl", 2)));

  auto changed = f.config;
  changed.train.alpha = 0.5;
  fs::remove(epoch_checkpoint(out, "sl", 2));
  CHECK_THROWS_AS(run_pretrain(changed, f.data, out, true, nullptr), ConfigError);
}

TEST_CASE("pre-training checks the model against the data") {
  PipelineFixture f;
  auto wrong = f.config;
  wrong.qbot.state_dim = 6;
  CHECK_THROWS_AS(run_pretrain(wrong, f.data, f.root / "x", false, nullptr), ConfigError);
  auto empty = f.data;
  empty.corpus.train.clear();
  CHECK_THROWS_AS(run_pretrain(f.config, empty, f.root / "y", false, nullptr), DataError);
}

TEST_CASE("fine-tuning variants follow their schedules") {
  PipelineFixture f;
  f.config.finetune_epochs = 4;
  const auto sl = run_pretrain(f.config, f.data, f.root / "sl", false, nullptr);

  const auto na = run_finetune(f.config, Schedule::rl_only, sl, f.data, f.root / "na", false, nullptr);
  CHECK(phases(f.root / "na" / "metrics.csv") == std::vector<std::string>{"rl", "rl", "rl", "rl"});
  CHECK(fs::exists(epoch_checkpoint(f.root / "na", "na", 4)));
  CHECK(fs::exists(na));

  run_finetune(f.config, Schedule::alternate, sl, f.data, f.root / "alt", false, nullptr);
  CHECK(phases(f.root / "alt" / "metrics.csv") == std::vector<std::string>{"rl", "sl", "rl", "sl"});

  const auto word = run_finetune(f.config, Schedule::word_rl, sl, f.data, f.root / "word", false, nullptr);
  CHECK(phases(f.root / "word" / "metrics.csv").size() == 4);
  CHECK(fs::exists(word));

  CHECK_THROWS_AS(run_finetune(f.config, Schedule::sl_only, sl, f.data, f.root / "bad", false, nullptr), ConfigError);
  CHECK_THROWS_AS(run_finetune(f.config, Schedule::alternate, f.root / "absent.ckpt", f.data, f.root / "bad", false,
                               nullptr),
                  DataError);
}

TEST_CASE("decoder parameters are untouched by the RL phases of alt and na") {
  PipelineFixture f;
  f.config.finetune_epochs = 3;
  const auto sl = run_pretrain(f.config, f.data, f.root / "sl", false, nullptr);
  for (auto variant : {Schedule::alternate, Schedule::rl_only}) {
    const std::string name(schedule_name(variant));
    CAPTURE(name);
    run_finetune(f.config, variant, sl, f.data, f.root / name, false, nullptr);
    for (std::size_t e = 1; e <= 3; ++e) {
      const auto before = load_qbot(epoch_checkpoint(f.root / name, name, e - 1));
      const auto after = load_qbot(epoch_checkpoint(f.root / name, name, e));
      const auto phase = phases(f.root / name / "metrics.csv")[e - 1];
      if (phase != "rl") continue;
      for (auto id : after.params().ids()) {
        if (after.params().partition(id) != Partition::decoder) continue;
        CHECK(std::ranges::equal(before.params().value(id).values(), after.params().value(id).values()));
      }
    }
  }
}

TEST_CASE("fine-tuning resumes to the same result") {
  PipelineFixture f;
  f.config.finetune_epochs = 3;
  const auto sl = run_pretrain(f.config, f.data, f.root / "sl", false, nullptr);
  const auto full = run_finetune(f.config, Schedule::alternate, sl, f.data, f.root / "full", false, nullptr);
  const auto out = f.root / "cut";
  run_finetune(f.config, Schedule::alternate, sl, f.data, out, false, nullptr);
  fs::remove(epoch_checkpoint(out, "alt", 3));
  fs::remove(epoch_checkpoint(out, "alt", 2));
  const auto resumed = run_finetune(f.config, Schedule::alternate, sl, f.data, out, true, nullptr);
  CHECK(slurp(out / "metrics.csv") == slurp(f.root / "full" / "metrics.csv"));
  CHECK(slurp(resumed) == slurp(full));
}

TEST_CASE("evaluation writes one row per checkpoint and is reproducible") {
  PipelineFixture f;
  const auto sl = run_pretrain(f.config, f.data, f.root / "sl", false, nullptr);
  const auto alt = run_finetune(f.config, Schedule::alternate, sl, f.data, f.root / "alt", false, nullptr);

  auto one = run_eval(f.config, {{"sl", sl}}, f.data, f.root / "eval1", true, nullptr);
  CHECK(one.size() == 1);
  CHECK(lines_of(slurp(f.root / "eval1" / "report.csv")).size() == 2);

  std::ostringstream log;
  auto two = run_eval(f.config, {{"sl", sl}, {"alt", alt}}, f.data, f.root / "eval2", true, &log);
  CHECK(log.str().find("alt: final pmr") != std::string::npos);
  const auto svg = slurp(f.root / "eval2" / "curves.svg");
  std::size_t points = 0;
  for (auto p = svg.find("class=\"point\""); p != std::string::npos; p = svg.find("class=\"point\"", p + 1)) ++points;
  CHECK(points == 3 * 2);
  CHECK(lines_of(slurp(f.root / "eval2" / "games.jsonl")).size() == 2 * 12);

  run_eval(f.config, {{"sl", sl}, {"alt", alt}}, f.data, f.root / "eval3", false, nullptr);
  CHECK(slurp(f.root / "eval2" / "report.csv") == slurp(f.root / "eval3" / "report.csv"));
  CHECK(slurp(f.root / "eval2" / "curves.csv") == slurp(f.root / "eval3" / "curves.csv"));
  CHECK_FALSE(fs::exists(f.root / "eval3" / "curves.svg"));

  const auto curves = read_curves_csv(f.root / "eval2" / "curves.csv");
  REQUIRE(curves.size() == 2);
  CHECK(curves[1].tag == "alt");
  CHECK(curves[1].pmr.size() == 3);
  CHECK(curves[1].pmr[2] == doctest::Approx(two[1].pmr[2]).epsilon(1e-6));

  CHECK_THROWS_AS(run_eval(f.config, {}, f.data, f.root / "eval4", false, nullptr), ConfigError);
  CHECK_THROWS_AS(run_eval(f.config, {{"x", f.root / "none.ckpt"}}, f.data, f.root / "eval4", false, nullptr),
                  DataError);
  CHECK_THROWS_AS(read_curves_csv(f.root / "eval2" / "report.csv"), DataError);
}

TEST_CASE("metrics rows use a fixed format") {
  EpochMetrics m;
  m.epoch = 3;
  m.phase = "rl";
  m.joint_loss = 0.5;
  m.nll = 1.25;
  m.mse = 0.0;
  m.mean_return = 2.0;
  m.final_pmr = 0.75;
  CHECK(metrics_row(m, 3.5) == "3,rl,0.5,1.25,0,2,0.75,3.5");
  CHECK(epoch_checkpoint("out", "alt", 7) == fs::path("out/checkpoints/alt-e007.ckpt"));
}
