#include "guesswhich/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace gw {

std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

const std::vector<Dialog>& Corpus::split(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::validation: return validation;
    case Split::test: return test;
  }
  return train;
}

Dialog scripted_dialog(const WorldSpec& spec, const SynthImage& image,
                       const std::vector<std::string>& caption, std::size_t n_rounds, Rng& rng) {
  const auto mentioned = caption_mentions(spec, image, caption);
  std::vector<std::size_t> open;
  for (std::size_t a = 0; a < spec.schema.size(); ++a) {
    if (std::find(mentioned.begin(), mentioned.end(), a) == mentioned.end()) open.push_back(a);
  }
  if (n_rounds > open.size()) {
    throw std::invalid_argument("scripted dialog needs " + std::to_string(n_rounds) +
                                " unmentioned attributes, caption leaves " + std::to_string(open.size()));
  }
  rng.shuffle(open);
  Dialog d;
  d.image_id = image.id;
  d.caption = caption;
  for (std::size_t t = 0; t < n_rounds; ++t) {
    const bool long_form = rng.uniform() < 0.5;
    QaRound r;
    r.question = make_question(spec.schema[open[t]].name, long_form);
    r.answer = oracle_answer(spec, image, r.question, rng);
    d.rounds.push_back(std::move(r));
  }
  return d;
}

std::array<std::size_t, 3> split_counts(std::size_t n_dialogs, std::array<double, 3> f) {
  for (double x : f) {
    if (x < 0.0) throw std::invalid_argument("negative split fraction");
  }
  if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) throw std::invalid_argument("split fractions must sum to 1");
  const auto n = static_cast<double>(n_dialogs);
  const auto train = static_cast<std::size_t>(std::llround(n * f[0]));
  const auto val = std::min(n_dialogs - train, static_cast<std::size_t>(std::llround(n * f[1])));
  return {train, val, n_dialogs - train - val};
}

Corpus build_corpus(const World& world, std::size_t n_dialogs, std::size_t n_rounds,
                    std::array<double, 3> split_fractions, std::uint64_t seed) {
  const auto counts = split_counts(n_dialogs, split_fractions);
  Corpus corpus;
  Rng rng = Rng(seed).fork(11);
  auto fill = [&](std::vector<Dialog>& out, std::size_t count, std::span<const SynthImage> pool) {
    if (count > 0 && pool.empty()) throw std::invalid_argument("no images available for corpus split");
    for (std::size_t k = 0; k < count; ++k) {
      const SynthImage& img = pool[rng.uniform_index(pool.size())];
      out.push_back(scripted_dialog(world.spec, img, img.caption, n_rounds, rng));
    }
  };
  fill(corpus.train, counts[0], world.train_images());
  const auto held_out = world.game_images().empty() ? world.train_images() : world.game_images();
  fill(corpus.validation, counts[1], held_out);
  fill(corpus.test, counts[2], held_out);
  return corpus;
}

bool validate_dialog(const World& world, const Dialog& dialog) {
  if (dialog.image_id >= world.images.size()) return false;
  const SynthImage& img = world.image(dialog.image_id);
  WorldSpec clean = world.spec;
  clean.answer_noise = 0.0;
  Rng unused(0);
  for (const auto& r : dialog.rounds) {
    if (oracle_answer(clean, img, r.question, unused) != r.answer) return false;
  }
  return true;
}

std::string dialog_to_jsonl(const Dialog& d) {
  nlohmann::json j;
  j["image_id"] = d.image_id;
  j["caption"] = d.caption;
  auto& rounds = j["rounds"] = nlohmann::json::array();
  for (const auto& r : d.rounds) rounds.push_back({{"q", r.question}, {"a", r.answer}});
  return j.dump();
}

Dialog dialog_from_json(const nlohmann::json& j) {
  Dialog d;
  d.image_id = j.at("image_id").get<std::size_t>();
  d.caption = j.at("caption").get<std::vector<std::string>>();
  for (const auto& r : j.at("rounds")) {
    d.rounds.push_back({r.at("q").get<std::vector<std::string>>(), r.at("a").get<std::vector<std::string>>()});
  }
  return d;
}

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  std::filesystem::create_directories(dir);
  for (Split s : {Split::train, Split::validation, Split::test}) {
    const auto path = dir / (std::string(split_name(s)) + ".jsonl");
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    for (const auto& d : corpus.split(s)) os << dialog_to_jsonl(d) << '\n';
    if (!os) throw std::runtime_error("write failed for " + path.string());
  }
}

std::vector<Dialog> read_dialogs(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw std::runtime_error("cannot open corpus file " + file.string());
  std::vector<Dialog> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(dialog_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

Corpus read_corpus(const std::filesystem::path& dir) {
  Corpus c;
  c.train = read_dialogs(dir / "train.jsonl");
  c.validation = read_dialogs(dir / "validation.jsonl");
  c.test = read_dialogs(dir / "test.jsonl");
  return c;
}

}  // namespace gw
