#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "guesswhich/rng.hpp"
#include "guesswhich/tensor.hpp"

namespace gw {

enum class Partition { encoder, decoder, guesser };

std::string_view partition_name(Partition p);
Partition partition_from_name(std::string_view name);

struct ParamId {
  std::size_t index = 0;
  bool operator==(const ParamId&) const = default;
};

/// Named trainable tensors, each with a gradient accumulator of the same
/// shape and exactly one partition label.
class ParamStore {
 public:
  ParamId add(std::string name, Tensor init, Partition partition);
  /// uniform(-a, a) with a = 1/sqrt(fan_in)
  ParamId add_uniform(std::string name, Shape shape, std::size_t fan_in, Partition partition,
                      Rng& rng);

  std::size_t size() const { return entries_.size(); }
  bool contains(std::string_view name) const;
  ParamId id(std::string_view name) const;

  const std::string& name(ParamId id) const { return entries_.at(id.index).name; }
  Partition partition(ParamId id) const { return entries_.at(id.index).partition; }
  Tensor& value(ParamId id) { return entries_.at(id.index).value; }
  const Tensor& value(ParamId id) const { return entries_.at(id.index).value; }
  Tensor& grad(ParamId id) { return entries_.at(id.index).grad; }
  const Tensor& grad(ParamId id) const { return entries_.at(id.index).grad; }

  std::vector<ParamId> ids() const;
  std::vector<ParamId> ids(Partition partition) const;

  void zero_grad();
  std::size_t parameter_count() const;

  bool operator==(const ParamStore& other) const;

 private:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
    Partition partition;
    bool operator==(const Entry&) const = default;
  };
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace gw
