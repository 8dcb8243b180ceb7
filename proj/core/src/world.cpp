#include "guesswhich/world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace gw {

std::vector<Attribute> default_schema() {
  return {
      {"shape", {"circle", "square", "triangle", "star", "hexagon", "diamond"}},
      {"color", {"red", "green", "blue", "yellow", "purple", "orange"}},
      {"size", {"small", "medium", "large"}},
      {"fill", {"solid", "hollow", "striped"}},
      {"count", {"1", "2", "3", "4"}},
      {"background", {"white", "gray", "black"}},
  };
}

const std::vector<std::string>& filler_tokens() {
  static const std::vector<std::string> fillers{"what", "is", "the", "a", "image",
                                                std::string(kUnknownAnswer)};
  return fillers;
}

std::size_t WorldSpec::raw_dim() const {
  std::size_t n = 0;
  for (const auto& a : schema) n += a.values.size();
  return n;
}

std::optional<std::size_t> WorldSpec::attribute_index(std::string_view name) const {
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (schema[i].name == name) return i;
  }
  return std::nullopt;
}

const SynthImage& World::image(std::size_t id) const {
  if (id >= images.size() || images[id].id != id) {
    throw std::out_of_range("no image with id " + std::to_string(id));
  }
  return images[id];
}

Tensor raw_encoding(const WorldSpec& spec, const std::vector<std::size_t>& attributes) {
  Tensor raw({spec.raw_dim()});
  std::size_t offset = 0;
  for (std::size_t a = 0; a < spec.schema.size(); ++a) {
    raw[offset + attributes.at(a)] = 1.0;
    offset += spec.schema[a].values.size();
  }
  return raw;
}

Tensor project_raw(const WorldSpec& spec, const Tensor& raw) {
  const Tensor& p = spec.projection;
  Tensor out({p.rows()});
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < p.cols(); ++c) acc += p.at(r, c) * raw[c];
    out[r] = acc;
  }
  return out;
}

namespace {

Vocabulary build_vocabulary(const std::vector<Attribute>& schema) {
  Vocabulary vocab;
  for (const auto& f : filler_tokens()) vocab.add(f);
  for (const auto& a : schema) {
    if (vocab.contains(a.name)) throw std::invalid_argument("attribute name '" + a.name + "' collides with another token");
    vocab.add(a.name);
  }
  for (const auto& a : schema) {
    for (const auto& v : a.values) {
      if (vocab.contains(v)) throw std::invalid_argument("attribute value '" + v + "' is not unique");
      vocab.add(v);
    }
  }
  return vocab;
}

}  // namespace

World generate_world(const WorldConfig& config, std::uint64_t seed) {
  if (config.schema.empty()) throw std::invalid_argument("world schema is empty");
  for (const auto& a : config.schema) {
    if (a.values.empty()) throw std::invalid_argument("attribute '" + a.name + "' has no values");
  }
  if (config.train_images + config.game_images < 2) throw std::invalid_argument("world needs at least 2 images");
  if (config.feature_dim == 0) throw std::invalid_argument("feature_dim must be positive");
  if (config.caption_mentions > config.schema.size()) {
    throw std::invalid_argument("caption_mentions exceeds attribute count");
  }

  World world;
  WorldSpec& spec = world.spec;
  spec.schema = config.schema;
  spec.feature_noise = config.feature_noise;
  spec.answer_noise = config.answer_noise;
  spec.caption_mentions = config.caption_mentions;
  spec.vocabulary = build_vocabulary(config.schema);

  Rng proj_rng = Rng(seed).fork(1);
  const std::size_t raw = spec.raw_dim();
  spec.projection = Tensor({config.feature_dim, raw});
  const double sd = 1.0 / std::sqrt(static_cast<double>(raw));
  for (auto& v : spec.projection.values()) v = proj_rng.normal(0.0, sd);

  Rng attr_rng = Rng(seed).fork(2);
  Rng noise_rng = Rng(seed).fork(3);
  Rng caption_rng = Rng(seed).fork(4);
  const std::size_t total = config.train_images + config.game_images;
  world.images.reserve(total);
  for (std::size_t id = 0; id < total; ++id) {
    SynthImage img;
    img.id = id;
    for (const auto& a : spec.schema) img.attributes.push_back(attr_rng.uniform_index(a.values.size()));
    img.raw = raw_encoding(spec, img.attributes);
    img.feature = project_raw(spec, img.raw);
    if (spec.feature_noise > 0.0) {
      for (auto& v : img.feature.values()) v += noise_rng.normal(0.0, spec.feature_noise);
    }
    img.caption = caption_of(spec, img, caption_rng, spec.caption_mentions);
    world.images.push_back(std::move(img));
  }
  world.train_count = config.train_images;
  return world;
}

std::vector<std::string> caption_of(const WorldSpec& spec, const SynthImage& image, Rng& rng,
                                    std::size_t mentions) {
  if (mentions > spec.schema.size()) throw std::invalid_argument("caption mentions exceed attribute count");
  std::vector<std::size_t> order(spec.schema.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  order.resize(mentions);
  std::sort(order.begin(), order.end());
  std::vector<std::string> caption{"a"};
  for (auto a : order) caption.push_back(image.value(spec, a));
  caption.push_back("image");
  caption.emplace_back(kEnd);
  return caption;
}

std::vector<std::size_t> caption_mentions(const WorldSpec& spec, const SynthImage& image,
                                          const std::vector<std::string>& caption) {
  std::vector<std::size_t> out;
  for (std::size_t a = 0; a < spec.schema.size(); ++a) {
    if (std::find(caption.begin(), caption.end(), image.value(spec, a)) != caption.end()) out.push_back(a);
  }
  return out;
}

std::optional<std::size_t> question_attribute(const WorldSpec& spec,
                                              const std::vector<std::string>& question) {
  auto it = std::find(question.begin(), question.end(), "what");
  if (it == question.end()) return std::nullopt;
  ++it;
  while (it != question.end() && (*it == "is" || *it == "the")) ++it;
  if (it == question.end()) return std::nullopt;
  return spec.attribute_index(*it);
}

std::vector<std::string> oracle_answer(const WorldSpec& spec, const SynthImage& image,
                                       const std::vector<std::string>& question, Rng& rng) {
  const auto attr = question_attribute(spec, question);
  if (!attr) return {std::string(kUnknownAnswer)};
  const auto& values = spec.schema[*attr].values;
  std::size_t value = image.attributes[*attr];
  if (spec.answer_noise > 0.0 && values.size() > 1 && rng.uniform() < spec.answer_noise) {
    const std::size_t shift = 1 + rng.uniform_index(values.size() - 1);
    value = (value + shift) % values.size();
  }
  return {values[value]};
}

std::vector<std::string> make_question(const std::string& attribute, bool long_form) {
  if (long_form) return {"what", "is", "the", attribute, std::string(kEnd)};
  return {"what", attribute, std::string(kEnd)};
}

// ---------------------------------------------------------------------------
// glyphs

namespace {

std::string color_hex(const std::string& name) {
  static const std::map<std::string, std::string> palette{
      {"red", "#e53935"},    {"green", "#43a047"}, {"blue", "#1e88e5"},  {"yellow", "#fdd835"},
      {"purple", "#8e24aa"}, {"orange", "#fb8c00"}, {"white", "#ffffff"}, {"gray", "#9e9e9e"},
      {"black", "#212121"},
  };
  auto it = palette.find(name);
  return it == palette.end() ? name : it->second;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string polygon_points(double cx, double cy, double r, int corners, double phase, double inner = 0.0) {
  std::ostringstream os;
  const int n = inner > 0.0 ? corners * 2 : corners;
  for (int k = 0; k < n; ++k) {
    const double radius = (inner > 0.0 && (k % 2 == 1)) ? inner : r;
    const double angle = phase + 2.0 * M_PI * k / n;
    if (k) os << ' ';
    os << fmt(cx + radius * std::cos(angle)) << ',' << fmt(cy + radius * std::sin(angle));
  }
  return os.str();
}

std::string lookup(const WorldSpec& spec, const SynthImage& image, std::string_view attr,
                   const std::string& fallback) {
  auto idx = spec.attribute_index(attr);
  return idx ? image.value(spec, *idx) : fallback;
}

}  // namespace

std::string render_glyph(const WorldSpec& spec, const SynthImage& image) {
  const std::string shape = lookup(spec, image, "shape", "circle");
  const std::string color = color_hex(lookup(spec, image, "color", "black"));
  const std::string size = lookup(spec, image, "size", "medium");
  const std::string fill = lookup(spec, image, "fill", "solid");
  const std::string background = color_hex(lookup(spec, image, "background", "white"));
  int count = 1;
  try {
    count = std::clamp(std::stoi(lookup(spec, image, "count", "1")), 1, 4);
  } catch (const std::exception&) {
    count = 1;
  }

  constexpr double canvas = 120.0;
  const double scale = size == "small" ? 0.45 : size == "large" ? 0.85 : 0.65;
  std::vector<std::pair<double, double>> centers;
  double cell = canvas;
  if (count == 1) {
    centers = {{60, 60}};
  } else {
    cell = canvas / 2.0;
    const std::vector<std::pair<double, double>> grid{{30, 30}, {90, 30}, {30, 90}, {90, 90}};
    if (count == 2) centers = {{30, 60}, {90, 60}};
    else centers.assign(grid.begin(), grid.begin() + count);
  }
  const double radius = cell / 2.0 * scale;

  std::string paint;
  if (fill == "hollow") paint = "fill=\"none\" stroke=\"" + color + "\" stroke-width=\"3\"";
  else if (fill == "striped") paint = "fill=\"url(#stripes)\" stroke=\"" + color + "\" stroke-width=\"2\"";
  else paint = "fill=\"" + color + "\"";

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"120\" height=\"120\" viewBox=\"0 0 120 120\">";
  if (fill == "striped") {
    os << "<defs><pattern id=\"stripes\" width=\"6\" height=\"6\" patternUnits=\"userSpaceOnUse\" "
          "patternTransform=\"rotate(45)\"><line x1=\"0\" y1=\"0\" x2=\"0\" y2=\"6\" stroke=\""
       << color << "\" stroke-width=\"3\"/></pattern></defs>";
  }
  os << "<rect class=\"background\" x=\"0\" y=\"0\" width=\"120\" height=\"120\" fill=\"" << background << "\"/>";
  for (auto [cx, cy] : centers) {
    if (shape == "circle") {
      os << "<circle class=\"shape\" cx=\"" << fmt(cx) << "\" cy=\"" << fmt(cy) << "\" r=\"" << fmt(radius)
         << "\" " << paint << "/>";
    } else if (shape == "square") {
      const double side = radius * 1.6;
      os << "<rect class=\"shape\" x=\"" << fmt(cx - side / 2) << "\" y=\"" << fmt(cy - side / 2)
         << "\" width=\"" << fmt(side) << "\" height=\"" << fmt(side) << "\" " << paint << "/>";
    } else {
      std::string points;
      if (shape == "triangle") points = polygon_points(cx, cy, radius, 3, -M_PI / 2);
      else if (shape == "diamond") points = polygon_points(cx, cy, radius, 4, -M_PI / 2);
      else if (shape == "hexagon") points = polygon_points(cx, cy, radius, 6, 0.0);
      else if (shape == "star") points = polygon_points(cx, cy, radius, 5, -M_PI / 2, radius * 0.45);
      else points = polygon_points(cx, cy, radius, 8, 0.0);
      os << "<polygon class=\"shape\" points=\"" << points << "\" " << paint << "/>";
    }
  }
  os << "</svg>";
  return os.str();
}

// ---------------------------------------------------------------------------
// serialization

nlohmann::json world_to_json(const World& world) {
  const WorldSpec& spec = world.spec;
  nlohmann::json j;
  j["format"] = "guesswhich-world/1";
  auto& schema = j["schema"] = nlohmann::json::array();
  for (const auto& a : spec.schema) schema.push_back({{"name", a.name}, {"values", a.values}});
  j["feature_noise"] = spec.feature_noise;
  j["answer_noise"] = spec.answer_noise;
  j["caption_mentions"] = spec.caption_mentions;
  j["vocabulary"] = spec.vocabulary.tokens();
  j["projection"] = {{"shape", spec.projection.shape()}, {"values", spec.projection.raw()}};
  j["train_count"] = world.train_count;
  auto& images = j["images"] = nlohmann::json::array();
  for (const auto& img : world.images) {
    images.push_back({{"id", img.id},
                      {"attributes", img.attributes},
                      {"feature", img.feature.raw()},
                      {"caption", img.caption}});
  }
  return j;
}

World world_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "guesswhich-world/1") throw std::invalid_argument("not a world file");
  World world;
  WorldSpec& spec = world.spec;
  for (const auto& a : j.at("schema")) {
    spec.schema.push_back({a.at("name").get<std::string>(), a.at("values").get<std::vector<std::string>>()});
  }
  spec.feature_noise = j.at("feature_noise").get<double>();
  spec.answer_noise = j.at("answer_noise").get<double>();
  spec.caption_mentions = j.at("caption_mentions").get<std::size_t>();
  spec.vocabulary = Vocabulary(j.at("vocabulary").get<std::vector<std::string>>());
  spec.projection = Tensor(j.at("projection").at("shape").get<Shape>(),
                           j.at("projection").at("values").get<std::vector<double>>());
  if (spec.projection.rank() != 2 || spec.projection.cols() != spec.raw_dim()) {
    throw std::invalid_argument("projection shape does not match schema");
  }
  world.train_count = j.at("train_count").get<std::size_t>();
  for (const auto& r : j.at("images")) {
    SynthImage img;
    img.id = r.at("id").get<std::size_t>();
    img.attributes = r.at("attributes").get<std::vector<std::size_t>>();
    if (img.attributes.size() != spec.schema.size()) throw std::invalid_argument("image attribute count mismatch");
    for (std::size_t a = 0; a < spec.schema.size(); ++a) {
      if (img.attributes[a] >= spec.schema[a].values.size()) throw std::invalid_argument("attribute value out of range");
    }
    img.raw = raw_encoding(spec, img.attributes);
    img.feature = Tensor::vector(r.at("feature").get<std::vector<double>>());
    if (img.feature.size() != spec.feature_dim()) throw std::invalid_argument("feature dim mismatch");
    img.caption = r.at("caption").get<std::vector<std::string>>();
    if (img.id != world.images.size()) throw std::invalid_argument("image ids must be dense and ordered");
    world.images.push_back(std::move(img));
  }
  if (world.train_count > world.images.size()) throw std::invalid_argument("train_count exceeds image count");
  return world;
}

void save_world(const std::filesystem::path& path, const World& world) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << world_to_json(world).dump() << '\n';
}

World load_world(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open world file " + path.string());
  return world_from_json(nlohmann::json::parse(is));
}

}  // namespace gw
