#include "guesswhich/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace gw {
namespace {

constexpr char kMagic[] = "GWQCKPT\n";

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little endian");

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(reinterpret_cast<const char*>(t.raw().data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor read_tensor(std::istream& is, const nlohmann::json& shape_json) {
  Shape shape = shape_json.get<Shape>();
  std::vector<double> data(shape_size(shape));
  is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!is) throw CheckpointError("checkpoint truncated");
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  nlohmann::json header;
  header["format_version"] = ck.format_version;
  header["vocabulary"] = ck.vocabulary;
  header["config"] = ck.config;
  header["meta"] = ck.meta;
  auto& tensors = header["tensors"] = nlohmann::json::array();
  for (ParamId id : ck.params.ids()) {
    tensors.push_back({{"name", ck.params.name(id)},
                       {"shape", ck.params.value(id).shape()},
                       {"partition", partition_name(ck.params.partition(id))}});
  }
  auto& opt = header["optimizers"] = nlohmann::json::object();
  for (const auto& [opt_name, state] : ck.optimizer_state) {
    auto& entries = opt[opt_name] = nlohmann::json::array();
    for (const auto& [name, t] : state) entries.push_back({{"name", name}, {"shape", t.shape()}});
  }
  const std::string header_text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot write " + tmp);
    os.write(kMagic, sizeof(kMagic) - 1);
    const std::uint64_t len = header_text.size();
    os.write(reinterpret_cast<const char*>(&len), sizeof(len));
    os.write(header_text.data(), static_cast<std::streamsize>(len));
    for (ParamId id : ck.params.ids()) write_tensor(os, ck.params.value(id));
    for (const auto& [opt_name, state] : ck.optimizer_state) {
      for (const auto& [name, t] : state) write_tensor(os, t);
    }
    if (!os) throw CheckpointError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic) - 1];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint");
  }
  std::uint64_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!is || len > (1ULL << 32)) throw CheckpointError("bad checkpoint header length");
  std::string header_text(len, '\0');
  is.read(header_text.data(), static_cast<std::streamsize>(len));
  if (!is) throw CheckpointError("checkpoint header truncated");

  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(header_text);
    ck.format_version = header.at("format_version").get<std::string>();
    if (ck.format_version != kCheckpointFormat) {
      throw CheckpointError("unsupported checkpoint format '" + ck.format_version + "'");
    }
    ck.vocabulary = header.at("vocabulary").get<std::vector<std::string>>();
    ck.config = header.at("config");
    ck.meta = header.at("meta");
    for (const auto& t : header.at("tensors")) {
      Tensor value = read_tensor(is, t.at("shape"));
      ck.params.add(t.at("name").get<std::string>(), std::move(value),
                    partition_from_name(t.at("partition").get<std::string>()));
    }
    for (const auto& [opt_name, entries] : header.at("optimizers").items()) {
      auto& state = ck.optimizer_state[opt_name];
      for (const auto& e : entries) state[e.at("name").get<std::string>()] = read_tensor(is, e.at("shape"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  }
  return ck;
}

std::string partition_bytes(const ParamStore& params, Partition partition) {
  std::string out;
  for (ParamId id : params.ids(partition)) {
    const Tensor& t = params.value(id);
    out.append(reinterpret_cast<const char*>(t.raw().data()), t.size() * sizeof(double));
  }
  return out;
}

}  // namespace gw
