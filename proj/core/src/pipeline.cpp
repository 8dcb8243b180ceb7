#include "guesswhich/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <regex>
#include <sstream>

#include "guesswhich/checkpoint.hpp"

namespace gw {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

/// Keeps the config line, the header and rows up to `epoch`.
void truncate_metrics(const fs::path& path, std::size_t epoch) {
  std::ifstream is(path);
  if (!is) return;
  std::ostringstream kept;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#' || line.rfind("epoch,", 0) == 0) {
      kept << line << '\n';
      continue;
    }
    const std::size_t e = std::stoul(line.substr(0, line.find(',')));
    if (e <= epoch) kept << line << '\n';
  }
  is.close();
  write_text(path, kept.str());
}

void append_line(const fs::path& path, const std::string& line) {
  std::ofstream os(path, std::ios::binary | std::ios::app);
  if (!os) throw std::runtime_error("cannot append to " + path.string());
  os << line << '\n';
}

void start_metrics(const fs::path& path, const nlohmann::json& echo) {
  write_text(path, "# config: " + echo.dump() + "\n" + kMetricsHeader + "\n");
}

Checkpoint make_checkpoint(const QBot& bot, const Optimizers* opts, const nlohmann::json& echo, nlohmann::json meta) {
  Checkpoint ck = bot.to_checkpoint();
  ck.config["run"] = echo;
  for (auto& [k, v] : meta.items()) ck.meta[k] = v;
  if (opts) store_optimizers(ck, *opts);
  return ck;
}

Checkpoint read_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("checkpoint " + path.string() + " does not exist");
  return load_checkpoint(path);
}

void check_resume_config(const Checkpoint& ck, const nlohmann::json& echo) {
  if (!ck.config.contains("run") || ck.config["run"] != echo) {
    throw ConfigError("cannot resume: the run was started with a different config");
  }
}

void say(std::ostream* log, const std::string& line) {
  if (log) *log << line << std::endl;
}

}  // namespace

void run_datagen(const RunConfig& config, const fs::path& out) {
  fs::create_directories(out);
  const World world = generate_world(config.world, config.seed);
  const Corpus corpus = build_corpus(world, config.corpus.dialogs, config.corpus.rounds, config.corpus.split,
                                     mix_seed(config.seed, 0xc0));
  save_world(out / "world.json", world);
  write_corpus(out / "corpus", corpus);
  write_text(out / "config.json", to_json(config).dump(2) + "\n");
}

Dataset load_dataset(const fs::path& data_dir) {
  const fs::path world_file = data_dir / "world.json";
  const fs::path corpus_dir = data_dir / "corpus";
  if (!fs::exists(world_file)) throw DataError("missing " + world_file.string() + " (run datagen first)");
  if (!fs::is_directory(corpus_dir)) throw DataError("missing " + corpus_dir.string() + " (run datagen first)");
  try {
    Dataset d{load_world(world_file), read_corpus(corpus_dir)};
    return d;
  } catch (const std::exception& e) {
    throw DataError(std::string("cannot load dataset: ") + e.what());
  }
}

std::string metrics_row(const EpochMetrics& m, double perplexity) {
  return std::to_string(m.epoch) + "," + m.phase + "," + fmt(m.joint_loss) + "," + fmt(m.nll) + "," + fmt(m.mse) +
         "," + fmt(m.mean_return) + "," + fmt(m.final_pmr) + "," + fmt(perplexity);
}

fs::path epoch_checkpoint(const fs::path& out, const std::string& prefix, std::size_t epoch) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s-e%03zu.ckpt", prefix.c_str(), epoch);
  return out / "checkpoints" / buf;
}

std::optional<std::size_t> latest_epoch(const fs::path& out, const std::string& prefix) {
  const fs::path dir = out / "checkpoints";
  if (!fs::is_directory(dir)) return std::nullopt;
  const std::regex pattern(prefix + "-e([0-9]+)\\.ckpt");
  std::optional<std::size_t> best;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) {
      const std::size_t e = std::stoul(m[1]);
      if (!best || e > *best) best = e;
    }
  }
  return best;
}

QBot load_qbot(const fs::path& checkpoint) { return QBot::from_checkpoint(read_checkpoint(checkpoint)); }

fs::path run_pretrain(const RunConfig& config, const Dataset& data, const fs::path& out, bool resume,
                      std::ostream* log) {
  if (data.corpus.train.empty()) throw DataError("the training corpus is empty");
  if (data.world.spec.feature_dim() != config.qbot.state_dim) {
    throw ConfigError("qbot.state_dim does not match the world's feature dim");
  }
  const nlohmann::json echo = to_json(config);
  const fs::path metrics = out / "metrics.csv";
  const Environment env = Environment::over_train_images(data.world);
  Optimizers opts(config.train.sgd);
  std::optional<QBot> bot;
  std::size_t first = 1;

  const auto last = resume ? latest_epoch(out, "sl") : std::nullopt;
  if (last) {
    const Checkpoint ck = read_checkpoint(epoch_checkpoint(out, "sl", *last));
    check_resume_config(ck, echo);
    bot = QBot::from_checkpoint(ck);
    restore_optimizers(ck, opts);
    first = *last + 1;
    truncate_metrics(metrics, *last);
    say(log, "resuming pretraining after epoch " + std::to_string(*last));
  } else {
    fs::create_directories(out / "checkpoints");
    Rng init = Rng(config.seed).fork(0x1417);
    bot.emplace(config.qbot, data.world.spec.vocabulary, data.world.spec.feature_dim(), init);
    save_checkpoint(epoch_checkpoint(out, "sl", 0),
                    make_checkpoint(*bot, &opts, echo, {{"stage", "pretrain"}, {"epoch", 0}, {"phase", "init"}}));
    start_metrics(metrics, echo);
  }

  for (std::size_t epoch = first; epoch <= config.pretrain_epochs; ++epoch) {
    const EpochMetrics m = sl_epoch(*bot, opts.sl, data.corpus.train, env, config.train, epoch);
    const double ppl = data.corpus.validation.empty() ? 0.0 : perplexity(*bot, data.corpus.validation, env);
    append_line(metrics, metrics_row(m, ppl));
    save_checkpoint(epoch_checkpoint(out, "sl", epoch),
                    make_checkpoint(*bot, &opts, echo, {{"stage", "pretrain"}, {"epoch", epoch}, {"phase", "sl"}}));
    say(log, "epoch " + std::to_string(epoch) + " sl nll " + fmt(m.nll) + " mse " + fmt(m.mse) + " ppl " + fmt(ppl));
  }
  const fs::path final_path = out / "sl.ckpt";
  save_checkpoint(final_path, make_checkpoint(*bot, nullptr, echo,
                                              {{"stage", "pretrain"}, {"epoch", config.pretrain_epochs}, {"phase", "sl"}}));
  return final_path;
}

fs::path run_finetune(const RunConfig& config, Schedule variant, const fs::path& sl_checkpoint, const Dataset& data,
                      const fs::path& out, bool resume, std::ostream* log) {
  if (variant == Schedule::sl_only) throw ConfigError("fine-tuning variant must be alt, na or word");
  RunConfig cfg = config;
  cfg.train.schedule = variant;
  const std::string prefix(schedule_name(variant));
  const nlohmann::json echo = to_json(cfg);
  const fs::path metrics = out / "metrics.csv";
  const Environment env = Environment::over_train_images(data.world);
  Optimizers opts(cfg.train.sgd);
  std::optional<QBot> bot;
  std::size_t first = 1;

  const auto last = resume ? latest_epoch(out, prefix) : std::nullopt;
  if (last) {
    const Checkpoint ck = read_checkpoint(epoch_checkpoint(out, prefix, *last));
    check_resume_config(ck, echo);
    bot = QBot::from_checkpoint(ck);
    restore_optimizers(ck, opts);
    first = *last + 1;
    truncate_metrics(metrics, *last);
    say(log, "resuming " + prefix + " after epoch " + std::to_string(*last));
  } else {
    bot = QBot::from_checkpoint(read_checkpoint(sl_checkpoint));
    if (bot->feature_dim() != data.world.spec.feature_dim()) {
      throw DataError("checkpoint " + sl_checkpoint.string() + " does not match the world's feature dim");
    }
    if (!(bot->vocabulary() == data.world.spec.vocabulary)) {
      throw DataError("checkpoint " + sl_checkpoint.string() + " was trained on a different vocabulary");
    }
    fs::create_directories(out / "checkpoints");
    save_checkpoint(epoch_checkpoint(out, prefix, 0),
                    make_checkpoint(*bot, &opts, echo,
                                    {{"stage", "finetune"}, {"variant", prefix}, {"epoch", 0}, {"phase", "init"}}));
    start_metrics(metrics, echo);
  }

  fine_tune(*bot, opts, data.corpus.train, env, env, cfg.train, first, cfg.finetune_epochs,
            [&](const EpochMetrics& m, const QBot& b, const Optimizers& o) {
              const double ppl = data.corpus.validation.empty() ? 0.0 : perplexity(b, data.corpus.validation, env);
              append_line(metrics, metrics_row(m, ppl));
              save_checkpoint(epoch_checkpoint(out, prefix, m.epoch),
                              make_checkpoint(b, &o, echo,
                                              {{"stage", "finetune"},
                                               {"variant", prefix},
                                               {"epoch", m.epoch},
                                               {"phase", m.phase}}));
              say(log, "epoch " + std::to_string(m.epoch) + " " + m.phase + " loss " + fmt(m.joint_loss) +
                           " return " + fmt(m.mean_return) + " final pmr " + fmt(m.final_pmr) + " ppl " + fmt(ppl));
            });
  const fs::path final_path = out / (prefix + ".ckpt");
  save_checkpoint(final_path, make_checkpoint(*bot, nullptr, echo,
                                              {{"stage", "finetune"}, {"variant", prefix}, {"epoch", cfg.finetune_epochs}}));
  return final_path;
}

std::vector<EvalReport> run_eval(const RunConfig& config, const std::vector<std::pair<std::string, fs::path>>& models,
                                 const Dataset& data, const fs::path& out, bool svg, std::ostream* log) {
  if (models.empty()) throw ConfigError("eval needs at least one model");
  std::vector<QBot> bots;
  bots.reserve(models.size());
  for (const auto& [tag, path] : models) {
    bots.push_back(load_qbot(path));
    if (bots.back().feature_dim() != data.world.spec.feature_dim()) {
      throw DataError("model '" + tag + "' does not match the world's feature dim");
    }
  }
  std::vector<TaggedModel> tagged;
  for (std::size_t i = 0; i < models.size(); ++i) tagged.push_back({models[i].first, &bots[i]});
  auto reports = ablation_report(tagged, data.world, data.corpus.test, config.eval, to_json(config));
  fs::create_directories(out);
  write_report_csv(out / "report.csv", reports);
  write_curves_csv(out / "curves.csv", reports);
  write_games_jsonl(out / "games.jsonl", reports);
  if (svg) write_text(out / "curves.svg", curves_svg(reports));
  for (const auto& r : reports) {
    say(log, r.tag + ": final pmr " + fmt(r.pmr.empty() ? 0.0 : r.pmr.back()) + " perplexity " + fmt(r.perplexity) +
                 " win rate " + fmt(r.win_rate));
  }
  return reports;
}

std::vector<EvalReport> read_curves_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read " + path.string());
  std::string line;
  if (!std::getline(is, line) || line.rfind("round,tag,pmr", 0) != 0) throw DataError(path.string() + " is not a curves file");
  std::vector<EvalReport> reports;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string round, tag, pmr, se;
    if (!std::getline(ss, round, ',') || !std::getline(ss, tag, ',') || !std::getline(ss, pmr, ',') ||
        !std::getline(ss, se, ',')) {
      throw DataError("malformed line in " + path.string() + ": " + line);
    }
    auto it = std::find_if(reports.begin(), reports.end(), [&](const EvalReport& r) { return r.tag == tag; });
    if (it == reports.end()) {
      reports.push_back(EvalReport{});
      reports.back().tag = tag;
      it = reports.end() - 1;
    }
    try {
      it->pmr.push_back(std::stod(pmr));
      it->pmr_stderr.push_back(std::stod(se));
    } catch (const std::exception&) {
      throw DataError("malformed number in " + path.string() + ": " + line);
    }
  }
  return reports;
}

}  // namespace gw
