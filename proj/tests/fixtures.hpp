#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "guesswhich/eval.hpp"
#include "guesswhich/qbot.hpp"
#include "guesswhich/training.hpp"
#include "guesswhich/world.hpp"

namespace gwtest {

inline gw::WorldConfig small_world_config(std::size_t train, std::size_t game, std::size_t feature_dim = 8) {
  gw::WorldConfig c;
  c.train_images = train;
  c.game_images = game;
  c.feature_dim = feature_dim;
  return c;
}

inline gw::QBotConfig small_qbot_config(std::size_t feature_dim = 8, std::size_t k = 3, std::size_t rounds = 3) {
  gw::QBotConfig c;
  c.embed_dim = 6;
  c.qa_hidden = 8;
  c.state_dim = feature_dim;
  c.decoder_hidden = feature_dim;
  c.max_question_length = 6;
  c.top_k = k;
  c.rounds = rounds;
  return c;
}

inline gw::QBot make_bot(const gw::World& world, gw::QBotConfig config, std::uint64_t seed) {
  gw::Rng rng(seed);
  return gw::QBot(config, world.spec.vocabulary, world.spec.feature_dim(), rng);
}

inline void zero_params(gw::QBot& bot) {
  for (auto id : bot.params().ids()) bot.params().value(id).fill(0.0);
}

/// Always knows the target: its distances put the target first.
class CheatingAgent : public gw::GameAgent {
 public:
  void set_target(std::size_t id) { target_ = id; }
  void reset(const std::vector<std::string>&, const gw::Database& pool) override { pool_ = &pool; }
  std::vector<std::string> ask() override { return {"what", "color", "<end>"}; }
  std::size_t guess() override { return pool_->position(target_); }
  void observe(const std::vector<std::string>&, const std::vector<std::string>&, std::size_t) override {}
  std::vector<double> distances() const override {
    std::vector<double> d(pool_->size(), 1.0);
    d[pool_->position(target_)] = 0.0;
    return d;
  }

 private:
  std::size_t target_ = 0;
  const gw::Database* pool_ = nullptr;
};

/// Fresh uniformly random distances every round.
class RandomAgent : public gw::GameAgent {
 public:
  explicit RandomAgent(std::uint64_t seed) : rng_(seed) {}
  void reset(const std::vector<std::string>&, const gw::Database& pool) override {
    pool_ = &pool;
    redraw();
  }
  std::vector<std::string> ask() override { return {"what", "shape", "<end>"}; }
  std::size_t guess() override {
    return static_cast<std::size_t>(std::min_element(d_.begin(), d_.end()) - d_.begin());
  }
  void observe(const std::vector<std::string>&, const std::vector<std::string>&, std::size_t) override { redraw(); }
  std::vector<double> distances() const override { return d_; }

 private:
  void redraw() {
    d_.resize(pool_->size());
    for (auto& v : d_) v = rng_.uniform();
  }
  gw::Rng rng_;
  const gw::Database* pool_ = nullptr;
  std::vector<double> d_;
};

inline std::filesystem::path temp_dir(const std::string& name) {
  std::random_device rd;
  auto dir = std::filesystem::temp_directory_path() / ("gwq-" + name + "-" + std::to_string(rd()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace gwtest
