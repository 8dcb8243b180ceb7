#pragma once

#include <map>
#include <set>
#include <string>

#include "guesswhich/param_store.hpp"

namespace gw {

struct SgdConfig {
  double momentum = 0.9;
  double clip_norm = 5.0;  // global L2 norm; <= 0 disables clipping
};

/// SGD with heavy-ball momentum and global gradient-norm clipping.
///
/// `step` only touches parameters whose partition is listed; gradients of
/// every parameter are zeroed afterwards. Velocities are keyed by name so
/// they survive a checkpoint round trip.
class SgdMomentum {
 public:
  explicit SgdMomentum(SgdConfig config = {}) : config_(config) {}

  /// Returns the pre-clipping gradient norm over the stepped partitions.
  double step(ParamStore& params, double learning_rate,
              const std::set<Partition>& partitions = {Partition::encoder, Partition::decoder,
                                                       Partition::guesser});

  const SgdConfig& config() const { return config_; }
  const std::map<std::string, Tensor>& velocities() const { return velocity_; }
  void set_velocity(const std::string& name, Tensor v) { velocity_[name] = std::move(v); }
  void reset() { velocity_.clear(); }

 private:
  SgdConfig config_;
  std::map<std::string, Tensor> velocity_;
};

}  // namespace gw
