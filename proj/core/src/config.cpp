#include "guesswhich/config.hpp"

#include <fstream>

namespace gw {

namespace {

template <typename F>
auto guarded(const std::string& section, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(section + ": " + e.what());
  }
}

}  // namespace

nlohmann::json to_json(const WorldConfig& c) {
  nlohmann::json schema = nlohmann::json::array();
  for (const auto& a : c.schema) schema.push_back({{"name", a.name}, {"values", a.values}});
  return {{"schema", schema},
          {"feature_noise", c.feature_noise},
          {"answer_noise", c.answer_noise},
          {"feature_dim", c.feature_dim},
          {"train_images", c.train_images},
          {"game_images", c.game_images},
          {"caption_mentions", c.caption_mentions}};
}

WorldConfig world_config_from_json(const nlohmann::json& j) {
  WorldConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "schema") {
      c.schema.clear();
      for (const auto& a : v) c.schema.push_back({a.at("name").get<std::string>(), a.at("values").get<std::vector<std::string>>()});
    } else if (key == "feature_noise") {
      c.feature_noise = v.get<double>();
    } else if (key == "answer_noise") {
      c.answer_noise = v.get<double>();
    } else if (key == "feature_dim") {
      c.feature_dim = v.get<std::size_t>();
    } else if (key == "train_images") {
      c.train_images = v.get<std::size_t>();
    } else if (key == "game_images") {
      c.game_images = v.get<std::size_t>();
    } else if (key == "caption_mentions") {
      c.caption_mentions = v.get<std::size_t>();
    } else {
      throw std::invalid_argument("unknown world config key '" + key + "'");
    }
  }
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  auto train = to_json(c.train);
  train.erase("seed");
  return {{"seed", c.seed},
          {"world", to_json(c.world)},
          {"corpus", {{"dialogs", c.corpus.dialogs}, {"rounds", c.corpus.rounds}, {"split", c.corpus.split}}},
          {"qbot", to_json(c.qbot)},
          {"train", train},
          {"pretrain", {{"epochs", c.pretrain_epochs}}},
          {"finetune", {{"epochs", c.finetune_epochs}}},
          {"eval", to_json(c.eval)},
          {"serve", {{"host", c.serve.host}, {"port", c.serve.port}, {"service", to_json(c.serve.service)}}}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "seed") {
      c.seed = guarded("seed", [&] { return v.get<std::uint64_t>(); });
    } else if (key == "world") {
      c.world = guarded("world", [&] { return world_config_from_json(v); });
    } else if (key == "corpus") {
      guarded("corpus", [&] {
        for (const auto& [k, x] : v.items()) {
          if (k == "dialogs") c.corpus.dialogs = x.get<std::size_t>();
          else if (k == "rounds") c.corpus.rounds = x.get<std::size_t>();
          else if (k == "split") c.corpus.split = x.get<std::array<double, 3>>();
          else throw std::invalid_argument("unknown key '" + k + "'");
        }
        return 0;
      });
    } else if (key == "qbot") {
      c.qbot = guarded("qbot", [&] { return qbot_config_from_json(v); });
    } else if (key == "train") {
      if (v.contains("seed")) throw ConfigError("train: the seed is set at the top level");
      c.train = guarded("train", [&] { return train_config_from_json(v); });
    } else if (key == "pretrain" || key == "finetune") {
      guarded(key, [&] {
        for (const auto& [k, x] : v.items()) {
          if (k != "epochs") throw std::invalid_argument("unknown key '" + k + "'");
          (key == "pretrain" ? c.pretrain_epochs : c.finetune_epochs) = x.get<std::size_t>();
        }
        return 0;
      });
    } else if (key == "eval") {
      c.eval = guarded("eval", [&] { return eval_config_from_json(v); });
    } else if (key == "serve") {
      guarded("serve", [&] {
        for (const auto& [k, x] : v.items()) {
          if (k == "host") c.serve.host = x.get<std::string>();
          else if (k == "port") c.serve.port = x.get<int>();
          else if (k == "service") c.serve.service = service_config_from_json(x);
          else throw std::invalid_argument("unknown key '" + k + "'");
        }
        return 0;
      });
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  c.train.seed = c.seed;
  guarded("train", [&] {
    c.train.validate();
    return 0;
  });
  guarded("qbot", [&] {
    c.qbot.validate(c.world.feature_dim);
    return 0;
  });
  const double split_sum = c.corpus.split[0] + c.corpus.split[1] + c.corpus.split[2];
  if (std::abs(split_sum - 1.0) > 1e-9) throw ConfigError("corpus: split fractions must sum to 1");
  if (c.corpus.rounds != c.qbot.rounds) throw ConfigError("corpus.rounds must equal qbot.rounds");
  if (c.serve.port < 0 || c.serve.port > 65535) throw ConfigError("serve: port out of range");
  return c;
}

nlohmann::json merge_config(nlohmann::json base, const nlohmann::json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError("config" + (where.empty() ? "" : " at '" + where + "'") + " must be an object");
  for (const auto& [key, v] : patch.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    if (base[key].is_object() && key != "schema") {
      base[key] = merge_config(base[key], v, path);
    } else {
      base[key] = v;
    }
  }
  return base;
}

void apply_override(nlohmann::json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  nlohmann::json patch = value;
  std::size_t end = path.size();
  for (;;) {
    const auto dot = path.rfind('.', end - 1);
    const std::size_t start = dot == std::string::npos ? 0 : dot + 1;
    nlohmann::json wrap = nlohmann::json::object();
    wrap[path.substr(start, end - start)] = std::move(patch);
    patch = std::move(wrap);
    if (dot == std::string::npos) break;
    end = dot;
  }
  config = merge_config(config, patch);
}

RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  nlohmann::json config = to_json(RunConfig{});
  if (!file.empty()) {
    std::ifstream is(file);
    if (!is) throw ConfigError("cannot read config file " + file.string());
    nlohmann::json patch;
    try {
      patch = nlohmann::json::parse(is, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config file " + file.string() + ": " + e.what());
    }
    config = merge_config(config, patch);
  }
  for (const auto& o : overrides) apply_override(config, o);
  return run_config_from_json(config);
}

}  // namespace gw
