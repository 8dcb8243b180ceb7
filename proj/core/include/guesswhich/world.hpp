#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "guesswhich/rng.hpp"
#include "guesswhich/tensor.hpp"
#include "guesswhich/vocabulary.hpp"

namespace gw {

struct Attribute {
  std::string name;
  std::vector<std::string> values;
};

std::vector<Attribute> default_schema();

/// Filler tokens used by captions and question templates.
const std::vector<std::string>& filler_tokens();
inline constexpr std::string_view kUnknownAnswer = "unknown";

struct WorldConfig {
  std::vector<Attribute> schema = default_schema();
  double feature_noise = 0.05;
  double answer_noise = 0.0;
  std::size_t feature_dim = 64;
  std::size_t train_images = 2000;
  std::size_t game_images = 500;
  std::size_t caption_mentions = 1;
};

/// Everything about the world that is fixed at creation time.
struct WorldSpec {
  std::vector<Attribute> schema;
  double feature_noise = 0.0;
  double answer_noise = 0.0;
  std::size_t caption_mentions = 1;
  Vocabulary vocabulary;
  Tensor projection;  // [feature_dim, raw_dim], frozen

  std::size_t raw_dim() const;
  std::size_t feature_dim() const { return projection.rows(); }
  std::optional<std::size_t> attribute_index(std::string_view name) const;
};

struct SynthImage {
  std::size_t id = 0;
  std::vector<std::size_t> attributes;  // value index per schema attribute
  Tensor raw;                           // concatenated one-hots
  Tensor feature;                       // projection * raw + noise
  std::vector<std::string> caption;

  const std::string& value(const WorldSpec& spec, std::size_t attribute) const {
    return spec.schema[attribute].values[attributes[attribute]];
  }
};

/// A generated world. Images [0, train_count) form the training database,
/// the rest are held out for evaluation games.
struct World {
  WorldSpec spec;
  std::vector<SynthImage> images;
  std::size_t train_count = 0;

  std::span<const SynthImage> train_images() const {
    return std::span<const SynthImage>(images).first(train_count);
  }
  std::span<const SynthImage> game_images() const {
    return std::span<const SynthImage>(images).subspan(train_count);
  }
  const SynthImage& image(std::size_t id) const;
};

World generate_world(const WorldConfig& config, std::uint64_t seed);

Tensor raw_encoding(const WorldSpec& spec, const std::vector<std::size_t>& attributes);
Tensor project_raw(const WorldSpec& spec, const Tensor& raw);

/// "a <value> ... image <end>" naming `mentions` distinct true values.
std::vector<std::string> caption_of(const WorldSpec& spec, const SynthImage& image, Rng& rng,
                                    std::size_t mentions = 2);

/// Attribute indices whose true value the caption names.
std::vector<std::size_t> caption_mentions(const WorldSpec& spec, const SynthImage& image,
                                          const std::vector<std::string>& caption);

/// Attribute a question asks about: "what" followed (after optional
/// "is"/"the") by an attribute name.
std::optional<std::size_t> question_attribute(const WorldSpec& spec,
                                              const std::vector<std::string>& question);

/// Rule-based answerer. Unparseable questions get "unknown". With
/// probability answer_noise a uniformly random wrong value is returned.
std::vector<std::string> oracle_answer(const WorldSpec& spec, const SynthImage& image,
                                       const std::vector<std::string>& question, Rng& rng);

std::vector<std::string> make_question(const std::string& attribute, bool long_form);

/// Deterministic SVG glyph of the image's attribute bundle.
std::string render_glyph(const WorldSpec& spec, const SynthImage& image);

nlohmann::json world_to_json(const World& world);
World world_from_json(const nlohmann::json& j);
void save_world(const std::filesystem::path& path, const World& world);
World load_world(const std::filesystem::path& path);

}  // namespace gw
