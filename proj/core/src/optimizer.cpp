#include "guesswhich/optimizer.hpp"

#include <cmath>

namespace gw {

double SgdMomentum::step(ParamStore& params, double learning_rate,
                         const std::set<Partition>& partitions) {
  double sq = 0.0;
  for (ParamId id : params.ids()) {
    if (!partitions.contains(params.partition(id))) continue;
    const Tensor& g = params.grad(id);
    if (!g.all_finite()) throw NumericError("non-finite gradient in '" + params.name(id) + "'");
    for (double v : g.values()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  const double scale =
      (config_.clip_norm > 0.0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;

  for (ParamId id : params.ids()) {
    if (!partitions.contains(params.partition(id))) continue;
    Tensor& value = params.value(id);
    const Tensor& grad = params.grad(id);
    auto [it, inserted] = velocity_.try_emplace(params.name(id), Tensor(value.shape()));
    Tensor& vel = it->second;
    if (vel.shape() != value.shape()) throw ShapeError("velocity shape drift for " + params.name(id));
    for (std::size_t k = 0; k < value.size(); ++k) {
      vel[k] = config_.momentum * vel[k] + scale * grad[k];
      value[k] -= learning_rate * vel[k];
    }
  }
  params.zero_grad();
  return norm;
}

}  // namespace gw
