#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "guesswhich/world.hpp"

namespace gw {

enum class Split { train, validation, test };
std::string_view split_name(Split s);

struct QaRound {
  std::vector<std::string> question;
  std::vector<std::string> answer;
  bool operator==(const QaRound&) const = default;
};

struct Dialog {
  std::size_t image_id = 0;
  std::vector<std::string> caption;
  std::vector<QaRound> rounds;
  bool operator==(const Dialog&) const = default;
};

struct Corpus {
  std::vector<Dialog> train;
  std::vector<Dialog> validation;
  std::vector<Dialog> test;

  const std::vector<Dialog>& split(Split s) const;
};

/// Scripted questioner: asks about `n_rounds` distinct attributes the caption
/// does not mention, in random order, answered by the oracle. Question
/// templates alternate at random between the short and long form.
Dialog scripted_dialog(const WorldSpec& spec, const SynthImage& image,
                       const std::vector<std::string>& caption, std::size_t n_rounds, Rng& rng);

/// Train dialogs are drawn over training images; validation and test over
/// held-out game images.
Corpus build_corpus(const World& world, std::size_t n_dialogs, std::size_t n_rounds,
                    std::array<double, 3> split_fractions, std::uint64_t seed);

/// Number of (train, validation, test) dialogs for a split.
std::array<std::size_t, 3> split_counts(std::size_t n_dialogs, std::array<double, 3> fractions);

/// True when every answer matches the noise-free oracle.
bool validate_dialog(const World& world, const Dialog& dialog);

std::string dialog_to_jsonl(const Dialog& dialog);
Dialog dialog_from_json(const nlohmann::json& j);

/// Writes train.jsonl, validation.jsonl, test.jsonl into `dir`.
void write_corpus(const std::filesystem::path& dir, const Corpus& corpus);
Corpus read_corpus(const std::filesystem::path& dir);
std::vector<Dialog> read_dialogs(const std::filesystem::path& file);

}  // namespace gw
