#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "guesswhich/optimizer.hpp"
#include "guesswhich/param_store.hpp"

namespace gw {

inline constexpr const char* kCheckpointFormat = "guesswhich-checkpoint/1";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything needed to resume or evaluate a model: parameters with their
/// partitions, optimizer velocities, the vocabulary and the config echo.
struct Checkpoint {
  std::string format_version = kCheckpointFormat;
  std::vector<std::string> vocabulary;
  ParamStore params;
  std::map<std::string, std::map<std::string, Tensor>> optimizer_state;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json meta = nlohmann::json::object();
};

/// Binary layout: magic line, u64 header length, JSON header, then the raw
/// little-endian doubles of every tensor in header order. Round trips are
/// bit exact.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Raw bytes of all tensors in one partition, in store order.
std::string partition_bytes(const ParamStore& params, Partition partition);

}  // namespace gw
