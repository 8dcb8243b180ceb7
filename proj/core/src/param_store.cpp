#include "guesswhich/param_store.hpp"

#include <cmath>
#include <stdexcept>

namespace gw {

std::string_view partition_name(Partition p) {
  switch (p) {
    case Partition::encoder: return "encoder";
    case Partition::decoder: return "decoder";
    case Partition::guesser: return "guesser";
  }
  return "?";
}

Partition partition_from_name(std::string_view name) {
  if (name == "encoder") return Partition::encoder;
  if (name == "decoder") return Partition::decoder;
  if (name == "guesser") return Partition::guesser;
  throw std::invalid_argument("unknown partition '" + std::string(name) + "'");
}

ParamId ParamStore::add(std::string name, Tensor init, Partition partition) {
  if (index_.contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  init.require_finite("parameter " + name);
  Tensor grad(init.shape());
  const ParamId id{entries_.size()};
  index_.emplace(name, id.index);
  entries_.push_back(Entry{std::move(name), std::move(init), std::move(grad), partition});
  return id;
}

ParamId ParamStore::add_uniform(std::string name, Shape shape, std::size_t fan_in,
                                Partition partition, Rng& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(fan_in == 0 ? 1 : fan_in));
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform_range(-a, a);
  return add(std::move(name), std::move(t), partition);
}

bool ParamStore::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

ParamId ParamStore::id(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("no parameter '" + std::string(name) + "'");
  return ParamId{it->second};
}

std::vector<ParamId> ParamStore::ids() const {
  std::vector<ParamId> out;
  for (std::size_t i = 0; i < entries_.size(); ++i) out.push_back(ParamId{i});
  return out;
}

std::vector<ParamId> ParamStore::ids(Partition partition) const {
  std::vector<ParamId> out;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].partition == partition) out.push_back(ParamId{i});
  }
  return out;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.grad.fill(0.0);
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

bool ParamStore::operator==(const ParamStore& other) const { return entries_ == other.entries_; }

}  // namespace gw
