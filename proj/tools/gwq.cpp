// gwq: command line entry point for the GuessWhich questioner pipeline.
//
//   gwq datagen  --out data
//   gwq pretrain --data data --out runs/sl
//   gwq finetune --variant alt --from runs/sl/sl.ckpt --data data --out runs/alt
//   gwq eval     --model sl=runs/sl/sl.ckpt --model alt=runs/alt/alt.ckpt --out eval --svg
//   gwq serve    --model alt=runs/alt/alt.ckpt --port 8080

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "guesswhich/checkpoint.hpp"
#include "guesswhich/pipeline.hpp"
#include "guesswhich/service.hpp"

namespace fs = std::filesystem;
using namespace gw;

namespace {

enum Exit { ok = 0, config_error = 2, data_error = 3, env_error = 4 };

class EnvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_file, "JSON config file (default: $GWQ_CONFIG)");
  cmd->add_option("--seed", c.seed, "Seed for this stage");
  cmd->add_option("--set", c.overrides, "Override a config value, e.g. train.rl_learning_rate=0.001");
}

RunConfig resolve(const Common& c) {
  std::string file = c.config_file;
  if (file.empty()) {
    if (const char* env = std::getenv("GWQ_CONFIG")) file = env;
  }
  auto overrides = c.overrides;
  if (c.seed) overrides.push_back("seed=" + std::to_string(*c.seed));
  return load_run_config(file, overrides);
}

std::vector<std::pair<std::string, fs::path>> parse_models(const std::vector<std::string>& specs) {
  std::vector<std::pair<std::string, fs::path>> out;
  for (const auto& s : specs) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      out.emplace_back(fs::path(s).stem().string(), s);
    } else {
      if (eq == 0) throw ConfigError("model '" + s + "' has an empty tag");
      out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (out[i].first == out[j].first) throw ConfigError("model tag '" + out[i].first + "' given twice");
    }
  }
  return out;
}

std::string attribute_card(const WorldSpec& spec, const SynthImage& img) {
  std::string card;
  for (std::size_t a = 0; a < spec.schema.size(); ++a) {
    card += "  " + spec.schema[a].name + ": " + img.value(spec, a) + "\n";
  }
  return card;
}

int read_rating(const std::string& name) {
  for (;;) {
    std::cout << name << " (1-5): " << std::flush;
    std::string line;
    if (!std::getline(std::cin, line)) return 0;
    try {
      std::size_t used = 0;
      const int v = std::stoi(line, &used);
      if (used == line.size() && v >= 1 && v <= 5) return v;
    } catch (const std::exception&) {
    }
    std::cout << "please enter a whole number from 1 to 5\n";
  }
}

int cmd_play(const RunConfig& config, const fs::path& data_dir, const fs::path& model, const fs::path& store,
             const fs::path& log_file) {
  const Dataset data = load_dataset(data_dir);
  const QBot bot = load_qbot(model);
  ServiceConfig sc = config.serve.service;
  sc.store_dir = store;
  GameService service(data.world, {{"model", &bot}}, sc);
  auto game = service.create_game("model", config.seed);
  const std::string id = game["id"];
  const SynthImage& target = data.world.image(game["target"]["id"].get<std::size_t>());
  std::cout << "You are the answerer. The target image is:\n"
            << attribute_card(data.world.spec, target) << "Caption shown to the questioner: "
            << game["caption"].get<std::string>() << "\n\n";
  std::string question = game["question"];
  for (;;) {
    std::cout << "Q-Bot: " << question << "\nyou> " << std::flush;
    std::string line;
    if (!std::getline(std::cin, line)) {
      std::cout << "\naborted\n";
      return ok;
    }
    const auto reply = service.submit_answer(id, line);
    if (reply.contains("reveal")) {
      const auto& r = reply["reveal"];
      const auto guess = r["guess_id"].get<std::size_t>();
      std::cout << "\nQ-Bot guesses image " << guess << (r["win"].get<bool>() ? " (correct)" : " (wrong)") << ":\n"
                << attribute_card(data.world.spec, data.world.image(guess)) << '\n';
      break;
    }
    question = reply["question"];
  }
  Rating rating;
  for (auto [name, field] : {std::pair{"fluency", &rating.fluency}, std::pair{"relevance", &rating.relevance},
                             std::pair{"comprehension", &rating.comprehension},
                             std::pair{"diversity", &rating.diversity}}) {
    *field = read_rating(name);
    if (*field == 0) {
      std::cout << "\naborted\n";
      return ok;
    }
  }
  service.submit_rating(id, rating);
  const GameSession s = service.session(id);
  nlohmann::json line{{"session_id", id}, {"record", to_json(session_record(s, bot, data.world))},
                      {"rating", to_json(rating)}, {"seed", s.seed}};
  if (log_file.has_parent_path()) fs::create_directories(log_file.parent_path());
  std::ofstream(log_file, std::ios::app) << line.dump() << '\n';
  std::cout << "thanks, logged to " << log_file.string() << '\n';
  return ok;
}

int cmd_serve(const RunConfig& config, const fs::path& data_dir,
              const std::vector<std::pair<std::string, fs::path>>& model_specs, const fs::path& static_dir) {
  const Dataset data = load_dataset(data_dir);
  std::vector<std::unique_ptr<QBot>> bots;
  std::map<std::string, const QBot*> models;
  for (const auto& [tag, path] : model_specs) {
    bots.push_back(std::make_unique<QBot>(load_qbot(path)));
    models[tag] = bots.back().get();
  }
  GameService service(data.world, models, config.serve.service);

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  HttpServer server(service, static_dir);
  if (!server.bind(config.serve.host, config.serve.port)) {
    throw EnvError("cannot listen on " + config.serve.host + ":" + std::to_string(config.serve.port));
  }
  std::thread worker([&] { server.listen_after_bind(); });
  std::cout << "serving " << models.size() << " model(s) on http://" << config.serve.host << ":"
            << config.serve.port << std::endl;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  worker.join();
  if (waiter.joinable()) {
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
  }
  std::cout << "stopped; sessions are in " << config.serve.service.store_dir.string() << std::endl;
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Goal-oriented visual dialog questioner: data, training, evaluation and game serving"};
  app.require_subcommand(1);

  Common common;
  std::string out, data_dir = "data", from, variant, store, log_file = "play-log.jsonl", static_dir, curves;
  std::vector<std::string> model_specs;
  std::string host;
  int port = -1;
  bool resume = false, svg = false, show_guesses = false;

  auto* datagen = app.add_subcommand("datagen", "Generate the synthetic world and scripted-dialog corpus");
  add_common(datagen, common);
  datagen->add_option("--out", out, "Output directory")->default_str("data");

  auto* pretrain = app.add_subcommand("pretrain", "Supervised pre-training");
  add_common(pretrain, common);
  pretrain->add_option("--data", data_dir, "Directory written by datagen");
  pretrain->add_option("--out", out, "Run directory")->default_str("runs/sl");
  pretrain->add_flag("--resume", resume, "Continue from the latest epoch checkpoint in --out");

  auto* finetune = app.add_subcommand("finetune", "Reinforcement fine-tuning of a pre-trained checkpoint");
  add_common(finetune, common);
  finetune->add_option("--variant", variant, "alt, na or word")
      ->required()
      ->check(CLI::IsMember({"alt", "na", "word"}));
  finetune->add_option("--from", from, "Pre-trained checkpoint")->required();
  finetune->add_option("--data", data_dir, "Directory written by datagen");
  finetune->add_option("--out", out, "Run directory (default runs/<variant>)");
  finetune->add_flag("--resume", resume, "Continue from the latest epoch checkpoint in --out");

  auto* eval = app.add_subcommand("eval", "Paired evaluation of checkpoints");
  add_common(eval, common);
  eval->add_option("--model", model_specs, "tag=checkpoint (repeatable)")->required();
  eval->add_option("--data", data_dir, "Directory written by datagen");
  eval->add_option("--out", out, "Report directory")->default_str("eval");
  eval->add_flag("--svg", svg, "Also write curves.svg");

  auto* play = app.add_subcommand("play", "Play one game in the terminal as the answerer");
  add_common(play, common);
  play->add_option("--model", model_specs, "Checkpoint")->required()->expected(1);
  play->add_option("--data", data_dir, "Directory written by datagen");
  play->add_option("--store", store, "Session directory")->default_str("play-sessions");
  play->add_option("--log", log_file, "Game log (JSON lines)");

  auto* serve = app.add_subcommand("serve", "Run the HTTP game service");
  add_common(serve, common);
  serve->add_option("--model", model_specs, "tag=checkpoint (repeatable)")->required();
  serve->add_option("--data", data_dir, "Directory written by datagen");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");
  serve->add_option("--store", store, "Session directory");
  serve->add_option("--static", static_dir, "Built web client to serve under /ui");
  serve->add_flag("--show-guesses", show_guesses, "Show per-round guesses before the reveal");

  auto* plot = app.add_subcommand("plot", "Render curves.csv as an SVG line chart");
  plot->add_option("--curves", curves, "curves.csv from eval")->required();
  plot->add_option("--out", out, "SVG file")->default_str("curves.svg");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : config_error;
  }

  try {
    if (plot->parsed()) {
      const auto reports = read_curves_csv(curves);
      const fs::path target = out.empty() ? fs::path("curves.svg") : fs::path(out);
      if (target.has_parent_path()) fs::create_directories(target.parent_path());
      std::ofstream os(target);
      if (!os) throw EnvError("cannot write " + target.string());
      os << curves_svg(reports);
      return ok;
    }
    RunConfig config = resolve(common);
    if (datagen->parsed()) {
      run_datagen(config, out.empty() ? "data" : out);
    } else if (pretrain->parsed()) {
      run_pretrain(config, load_dataset(data_dir), out.empty() ? "runs/sl" : out, resume, &std::cout);
    } else if (finetune->parsed()) {
      const Schedule s = schedule_from_name(variant);
      run_finetune(config, s, from, load_dataset(data_dir), out.empty() ? "runs/" + variant : out, resume,
                   &std::cout);
    } else if (eval->parsed()) {
      const auto models = parse_models(model_specs);
      run_eval(config, models, load_dataset(data_dir), out.empty() ? "eval" : out, svg, &std::cout);
    } else if (play->parsed()) {
      return cmd_play(config, data_dir, model_specs.front(), store.empty() ? "play-sessions" : store, log_file);
    } else if (serve->parsed()) {
      if (!host.empty()) config.serve.host = host;
      if (port >= 0) config.serve.port = port;
      if (!store.empty()) config.serve.service.store_dir = store;
      if (show_guesses) config.serve.service.show_guesses = true;
      const auto models = parse_models(model_specs);
      return cmd_serve(config, data_dir, models, static_dir);
    }
    return ok;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return config_error;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return config_error;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return data_error;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return data_error;
  } catch (const EnvError& e) {
    std::cerr << "environment error: " << e.what() << '\n';
    return env_error;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return env_error;
  }
}
