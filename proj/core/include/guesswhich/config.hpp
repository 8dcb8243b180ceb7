#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "guesswhich/eval.hpp"
#include "guesswhich/qbot.hpp"
#include "guesswhich/service.hpp"
#include "guesswhich/training.hpp"
#include "guesswhich/world.hpp"

namespace gw {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CorpusConfig {
  std::size_t dialogs = 1000;
  std::size_t rounds = 5;
  std::array<double, 3> split{0.8, 0.1, 0.1};
};

struct ServeConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  ServiceConfig service;
};

/// Everything a pipeline stage needs, resolved from defaults, a config file
/// and overrides. `seed` drives whichever stage runs.
struct RunConfig {
  std::uint64_t seed = 1234;
  WorldConfig world;
  CorpusConfig corpus;
  QBotConfig qbot;
  TrainConfig train;
  std::size_t pretrain_epochs = 20;
  std::size_t finetune_epochs = 20;
  EvalConfig eval;
  ServeConfig serve;
};

nlohmann::json to_json(const WorldConfig& c);
WorldConfig world_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const RunConfig& c);
/// Rejects unknown keys and values of the wrong type with ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);

/// Recursively overlays `patch` on `base`; every key of `patch` must exist in
/// `base` unless `base` holds an array or scalar at that point.
nlohmann::json merge_config(nlohmann::json base, const nlohmann::json& patch, const std::string& where = "");

/// Applies "a.b.c=value"; the value is parsed as JSON, falling back to a
/// plain string.
void apply_override(nlohmann::json& config, const std::string& assignment);

/// Defaults, then the file (if non-empty), then overrides in order.
RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

}  // namespace gw
