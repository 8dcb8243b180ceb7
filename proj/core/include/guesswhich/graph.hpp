#pragma once

#include <cstddef>
#include <deque>
#include <span>
#include <vector>

#include "guesswhich/param_store.hpp"
#include "guesswhich/tensor.hpp"

namespace gw {

/// Handle to a node of a Graph. Only meaningful for the graph that made it.
struct Var {
  std::size_t id = 0;
};

struct LstmWeights {
  Var wx;  // [4H, in], gate blocks ordered input, forget, candidate, output
  Var wh;  // [4H, H]
  Var b;   // [4H]
};

struct LstmState {
  Var h;
  Var c;
};

/// Reverse-mode tape over the primitive set used by the dialog agent.
///
/// Every op evaluates eagerly. When the graph records gradients, `backward`
/// walks the tape in reverse and accumulates exact gradients into the bound
/// ParamStore. Parameter nodes reference the store's tensors directly, so a
/// graph must not outlive the store it reads from.
class Graph {
 public:
  explicit Graph(bool record_gradients = true) : record_(record_gradients) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool records_gradients() const { return record_; }
  std::size_t node_count() const { return nodes_.size(); }

  Var constant(Tensor value);
  Var param(ParamStore& store, ParamId id);
  /// Read-only binding: the parameter takes part in the forward pass but
  /// receives no gradient.
  Var frozen_param(const ParamStore& store, ParamId id);

  /// y = W x + b with W of shape [out, in].
  Var linear(Var x, Var weights, Var bias);
  /// Row `token` of `table`; out-of-range ids throw.
  Var embed(std::size_t token, Var table);
  LstmState lstm_step(Var x, LstmState state, const LstmWeights& w);
  Var softmax(Var logits);
  /// -log(probs[target]). When `probs` came from `softmax`, the gradient is
  /// routed straight to the logits.
  Var cross_entropy(Var probs, std::size_t target);
  Var mse(Var a, Var b);
  Var concat(Var a, Var b);
  Var slice(Var x, std::size_t offset, std::size_t length);
  /// d_k = ||rows_k - s||^2 for rows of shape [K, D] and s of shape [D].
  Var sq_distances(Var s, Var rows);
  Var stack_rows(std::span<const Var> rows);
  Var add(Var a, Var b);
  Var scale(Var a, double factor);
  Var sum(std::span<const Var> terms);

  const Tensor& value(Var v) const;
  double scalar(Var v) const;

  /// Accumulates d(loss)/d(param) into the store. Calling it twice on the
  /// same loss doubles the parameter gradients.
  void backward(Var loss);

 private:
  enum class Op {
    constant, param, linear, embed, lstm, slice, softmax, cross_entropy,
    mse, concat, sq_distances, stack_rows, add, scale, sum
  };

  struct Node {
    Op op = Op::constant;
    Tensor value;
    const Tensor* param_value = nullptr;
    Tensor* param_grad = nullptr;
    std::vector<std::size_t> inputs;
    std::size_t aux = 0;
    std::size_t aux2 = 0;
    double factor = 0.0;
    std::vector<double> saved;
    std::vector<double> grad;
  };

  Var push(Node node);
  Node& node(Var v) { return nodes_.at(v.id); }
  const Node& node(Var v) const { return nodes_.at(v.id); }
  const Tensor& value_of(std::size_t id) const;
  /// Gradient buffer for node `id`, or nullptr for constants.
  double* grad_buffer(std::size_t id);
  void backward_node(std::size_t id);

  bool record_;
  std::deque<Node> nodes_;
};

}  // namespace gw
