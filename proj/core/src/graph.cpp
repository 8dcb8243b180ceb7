#include "guesswhich/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gw {
namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void require_vector(const Tensor& t, const char* what) {
  if (t.rank() != 1) throw ShapeError(std::string(what) + ": expected a vector, got " + shape_string(t.shape()));
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + ": expected a matrix, got " + shape_string(t.shape()));
}

// y += W x
void matvec_acc(const Tensor& w, std::span<const double> x, std::span<double> y) {
  const std::size_t rows = w.rows();
  const std::size_t cols = w.cols();
  const double* wp = w.raw().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* wr = wp + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * x[c];
    y[r] += acc;
  }
}

// dx += W^T dy
void matvec_t_acc(const Tensor& w, std::span<const double> dy, double* dx) {
  const std::size_t rows = w.rows();
  const std::size_t cols = w.cols();
  const double* wp = w.raw().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = dy[r];
    if (g == 0.0) continue;
    const double* wr = wp + r * cols;
    for (std::size_t c = 0; c < cols; ++c) dx[c] += wr[c] * g;
  }
}

// dW += dy x^T
void outer_acc(std::span<const double> dy, std::span<const double> x, double* dw) {
  const std::size_t cols = x.size();
  for (std::size_t r = 0; r < dy.size(); ++r) {
    const double g = dy[r];
    if (g == 0.0) continue;
    double* row = dw + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += g * x[c];
  }
}

}  // namespace

Var Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Tensor& Graph::value_of(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.param_value ? *n.param_value : n.value;
}

const Tensor& Graph::value(Var v) const { return value_of(v.id); }

double Graph::scalar(Var v) const {
  const Tensor& t = value(v);
  if (t.size() != 1) throw ShapeError("scalar() on tensor " + shape_string(t.shape()));
  return t[0];
}

Var Graph::constant(Tensor value) {
  value.require_finite("constant");
  Node n;
  n.op = Op::constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::param(ParamStore& store, ParamId id) {
  Node n;
  n.op = Op::param;
  n.param_value = &store.value(id);
  n.param_grad = &store.grad(id);
  return push(std::move(n));
}

Var Graph::frozen_param(const ParamStore& store, ParamId id) {
  Node n;
  n.op = Op::param;
  n.param_value = &store.value(id);
  return push(std::move(n));
}

Var Graph::linear(Var x, Var weights, Var bias) {
  const Tensor& xv = value(x);
  const Tensor& w = value(weights);
  const Tensor& b = value(bias);
  require_vector(xv, "linear input");
  require_matrix(w, "linear weights");
  require_vector(b, "linear bias");
  if (w.cols() != xv.size() || w.rows() != b.size()) {
    throw ShapeError("linear: weights " + shape_string(w.shape()) + " vs input " +
                     shape_string(xv.shape()) + " and bias " + shape_string(b.shape()));
  }
  Node n;
  n.op = Op::linear;
  n.value = b;
  matvec_acc(w, xv.values(), n.value.values());
  n.value.require_finite("linear output");
  n.inputs = {x.id, weights.id, bias.id};
  return push(std::move(n));
}

Var Graph::embed(std::size_t token, Var table) {
  const Tensor& t = value(table);
  require_matrix(t, "embedding table");
  if (token >= t.rows()) {
    throw std::out_of_range("token id " + std::to_string(token) + " outside vocabulary of " +
                            std::to_string(t.rows()));
  }
  Node n;
  n.op = Op::embed;
  auto row = t.row(token);
  n.value = Tensor::vector(std::vector<double>(row.begin(), row.end()));
  n.inputs = {table.id};
  n.aux = token;
  return push(std::move(n));
}

LstmState Graph::lstm_step(Var x, LstmState state, const LstmWeights& w) {
  const Tensor& xv = value(x);
  const Tensor& hv = value(state.h);
  const Tensor& cv = value(state.c);
  const Tensor& wx = value(w.wx);
  const Tensor& wh = value(w.wh);
  const Tensor& b = value(w.b);
  require_vector(xv, "lstm input");
  require_vector(hv, "lstm hidden");
  require_vector(cv, "lstm cell");
  require_matrix(wx, "lstm wx");
  require_matrix(wh, "lstm wh");
  const std::size_t hidden = hv.size();
  if (cv.size() != hidden || wx.rows() != 4 * hidden || wh.rows() != 4 * hidden ||
      wh.cols() != hidden || wx.cols() != xv.size() || b.size() != 4 * hidden) {
    throw ShapeError("lstm_step: inconsistent shapes (x " + shape_string(xv.shape()) + ", h " +
                     shape_string(hv.shape()) + ", wx " + shape_string(wx.shape()) + ", wh " +
                     shape_string(wh.shape()) + ")");
  }
  std::vector<double> pre(b.raw());
  matvec_acc(wx, xv.values(), pre);
  matvec_acc(wh, hv.values(), pre);

  Node n;
  n.op = Op::lstm;
  n.saved.assign(5 * hidden, 0.0);  // i, f, g, o, tanh(c')
  Tensor out({2 * hidden});
  for (std::size_t k = 0; k < hidden; ++k) {
    const double i = sigmoid(pre[k]);
    const double f = sigmoid(pre[hidden + k]);
    const double g = std::tanh(pre[2 * hidden + k]);
    const double o = sigmoid(pre[3 * hidden + k]);
    const double c_new = f * cv[k] + i * g;
    const double tc = std::tanh(c_new);
    n.saved[k] = i;
    n.saved[hidden + k] = f;
    n.saved[2 * hidden + k] = g;
    n.saved[3 * hidden + k] = o;
    n.saved[4 * hidden + k] = tc;
    out[k] = o * tc;
    out[hidden + k] = c_new;
  }
  out.require_finite("lstm state");
  n.value = std::move(out);
  n.inputs = {x.id, state.h.id, state.c.id, w.wx.id, w.wh.id, w.b.id};
  n.aux = hidden;
  const Var joint = push(std::move(n));
  return LstmState{slice(joint, 0, hidden), slice(joint, hidden, hidden)};
}

Var Graph::slice(Var x, std::size_t offset, std::size_t length) {
  const Tensor& xv = value(x);
  if (offset + length > xv.size()) throw ShapeError("slice out of range");
  Node n;
  n.op = Op::slice;
  n.value = Tensor::vector(std::vector<double>(xv.raw().begin() + static_cast<std::ptrdiff_t>(offset),
                                               xv.raw().begin() + static_cast<std::ptrdiff_t>(offset + length)));
  n.inputs = {x.id};
  n.aux = offset;
  n.aux2 = length;
  return push(std::move(n));
}

Var Graph::softmax(Var logits) {
  const Tensor& lv = value(logits);
  require_vector(lv, "softmax");
  if (lv.size() == 0) throw ShapeError("softmax over zero logits");
  lv.require_finite("softmax logits");
  const double mx = *std::max_element(lv.raw().begin(), lv.raw().end());
  Tensor out(lv.shape());
  double total = 0.0;
  for (std::size_t k = 0; k < lv.size(); ++k) {
    out[k] = std::exp(lv[k] - mx);
    total += out[k];
  }
  for (auto& v : out.values()) v /= total;
  Node n;
  n.op = Op::softmax;
  n.value = std::move(out);
  n.inputs = {logits.id};
  n.factor = mx + std::log(total);  // log-sum-exp, reused by cross_entropy
  return push(std::move(n));
}

Var Graph::cross_entropy(Var probs, std::size_t target) {
  const Tensor& pv = value(probs);
  require_vector(pv, "cross_entropy");
  if (target >= pv.size()) {
    throw std::out_of_range("cross_entropy target " + std::to_string(target) + " outside " +
                            std::to_string(pv.size()) + " classes");
  }
  double loss = 0.0;
  const Node& src = node(probs);
  if (src.op == Op::softmax) {
    loss = src.factor - value_of(src.inputs[0])[target];
  } else {
    loss = -std::log(pv[target]);
  }
  if (!std::isfinite(loss)) throw NumericError("cross_entropy of zero probability");
  Node n;
  n.op = Op::cross_entropy;
  n.value = Tensor::scalar(loss);
  n.inputs = {probs.id};
  n.aux = target;
  return push(std::move(n));
}

Var Graph::mse(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.shape() != bv.shape()) {
    throw ShapeError("mse: " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  }
  if (av.size() == 0) throw ShapeError("mse of empty tensors");
  double acc = 0.0;
  for (std::size_t k = 0; k < av.size(); ++k) {
    const double d = av[k] - bv[k];
    acc += d * d;
  }
  Node n;
  n.op = Op::mse;
  n.value = Tensor::scalar(acc / static_cast<double>(av.size()));
  n.inputs = {a.id, b.id};
  return push(std::move(n));
}

Var Graph::concat(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_vector(av, "concat");
  require_vector(bv, "concat");
  std::vector<double> out(av.raw());
  out.insert(out.end(), bv.raw().begin(), bv.raw().end());
  Node n;
  n.op = Op::concat;
  n.value = Tensor::vector(std::move(out));
  n.inputs = {a.id, b.id};
  n.aux = av.size();
  return push(std::move(n));
}

Var Graph::sq_distances(Var s, Var rows) {
  const Tensor& sv = value(s);
  const Tensor& rv = value(rows);
  require_vector(sv, "sq_distances state");
  require_matrix(rv, "sq_distances rows");
  if (rv.cols() != sv.size()) {
    throw ShapeError("sq_distances: rows " + shape_string(rv.shape()) + " vs state " +
                     shape_string(sv.shape()));
  }
  Tensor out({rv.rows()});
  for (std::size_t k = 0; k < rv.rows(); ++k) {
    auto r = rv.row(k);
    double acc = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) {
      const double d = r[j] - sv[j];
      acc += d * d;
    }
    out[k] = acc;
  }
  Node n;
  n.op = Op::sq_distances;
  n.value = std::move(out);
  n.inputs = {s.id, rows.id};
  return push(std::move(n));
}

Var Graph::stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw ShapeError("stack_rows of nothing");
  const std::size_t width = value(rows[0]).size();
  std::vector<double> out;
  out.reserve(width * rows.size());
  Node n;
  n.op = Op::stack_rows;
  for (Var r : rows) {
    const Tensor& rv = value(r);
    require_vector(rv, "stack_rows");
    if (rv.size() != width) throw ShapeError("stack_rows: ragged rows");
    out.insert(out.end(), rv.raw().begin(), rv.raw().end());
    n.inputs.push_back(r.id);
  }
  n.value = Tensor::matrix(rows.size(), width, std::move(out));
  return push(std::move(n));
}

Var Graph::add(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.shape() != bv.shape()) {
    throw ShapeError("add: " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  }
  Tensor out = av;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += bv[k];
  Node n;
  n.op = Op::add;
  n.value = std::move(out);
  n.inputs = {a.id, b.id};
  return push(std::move(n));
}

Var Graph::scale(Var a, double factor) {
  Tensor out = value(a);
  for (auto& v : out.values()) v *= factor;
  Node n;
  n.op = Op::scale;
  n.value = std::move(out);
  n.inputs = {a.id};
  n.factor = factor;
  return push(std::move(n));
}

Var Graph::sum(std::span<const Var> terms) {
  if (terms.empty()) return constant(Tensor::scalar(0.0));
  Tensor out = value(terms[0]);
  Node n;
  n.op = Op::sum;
  n.inputs.push_back(terms[0].id);
  for (std::size_t t = 1; t < terms.size(); ++t) {
    const Tensor& tv = value(terms[t]);
    if (tv.shape() != out.shape()) throw ShapeError("sum: mismatched shapes");
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += tv[k];
    n.inputs.push_back(terms[t].id);
  }
  n.value = std::move(out);
  return push(std::move(n));
}

double* Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.op == Op::constant) return nullptr;
  if (n.op == Op::param) return n.param_grad ? n.param_grad->raw().data() : nullptr;
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad.data();
}

void Graph::backward(Var loss) {
  if (!record_) throw std::logic_error("backward on a graph that does not record gradients");
  const Tensor& lv = value(loss);
  if (lv.size() != 1) throw ShapeError("backward on non-scalar " + shape_string(lv.shape()));
  for (auto& n : nodes_) n.grad.clear();
  double* seed = grad_buffer(loss.id);
  if (!seed) return;
  if (nodes_[loss.id].op == Op::param) {
    seed[0] += 1.0;
    return;
  }
  seed[0] = 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (n.op == Op::constant || n.op == Op::param || n.grad.empty()) continue;
    backward_node(id);
  }
  for (auto& n : nodes_) n.grad.clear();
}

void Graph::backward_node(std::size_t id) {
  Node& n = nodes_[id];
  const std::span<const double> dy(n.grad);
  switch (n.op) {
    case Op::constant:
    case Op::param:
      break;
    case Op::linear: {
      const Tensor& x = value_of(n.inputs[0]);
      const Tensor& w = value_of(n.inputs[1]);
      if (double* dx = grad_buffer(n.inputs[0])) matvec_t_acc(w, dy, dx);
      if (double* dw = grad_buffer(n.inputs[1])) outer_acc(dy, x.values(), dw);
      if (double* db = grad_buffer(n.inputs[2])) {
        for (std::size_t k = 0; k < dy.size(); ++k) db[k] += dy[k];
      }
      break;
    }
    case Op::embed: {
      if (double* dt = grad_buffer(n.inputs[0])) {
        const std::size_t width = dy.size();
        double* row = dt + n.aux * width;
        for (std::size_t k = 0; k < width; ++k) row[k] += dy[k];
      }
      break;
    }
    case Op::lstm: {
      const std::size_t hidden = n.aux;
      const Tensor& x = value_of(n.inputs[0]);
      const Tensor& h = value_of(n.inputs[1]);
      const Tensor& c = value_of(n.inputs[2]);
      const Tensor& wx = value_of(n.inputs[3]);
      const Tensor& wh = value_of(n.inputs[4]);
      std::vector<double> dpre(4 * hidden, 0.0);
      std::vector<double> dc_prev(hidden, 0.0);
      for (std::size_t k = 0; k < hidden; ++k) {
        const double i = n.saved[k];
        const double f = n.saved[hidden + k];
        const double g = n.saved[2 * hidden + k];
        const double o = n.saved[3 * hidden + k];
        const double tc = n.saved[4 * hidden + k];
        const double dh = dy[k];
        const double dc = dy[hidden + k] + dh * o * (1.0 - tc * tc);
        dpre[k] = dc * g * i * (1.0 - i);
        dpre[hidden + k] = dc * c[k] * f * (1.0 - f);
        dpre[2 * hidden + k] = dc * i * (1.0 - g * g);
        dpre[3 * hidden + k] = dh * tc * o * (1.0 - o);
        dc_prev[k] = dc * f;
      }
      if (double* dx = grad_buffer(n.inputs[0])) matvec_t_acc(wx, dpre, dx);
      if (double* dh = grad_buffer(n.inputs[1])) matvec_t_acc(wh, dpre, dh);
      if (double* dc = grad_buffer(n.inputs[2])) {
        for (std::size_t k = 0; k < hidden; ++k) dc[k] += dc_prev[k];
      }
      if (double* dwx = grad_buffer(n.inputs[3])) outer_acc(dpre, x.values(), dwx);
      if (double* dwh = grad_buffer(n.inputs[4])) outer_acc(dpre, h.values(), dwh);
      if (double* db = grad_buffer(n.inputs[5])) {
        for (std::size_t k = 0; k < dpre.size(); ++k) db[k] += dpre[k];
      }
      break;
    }
    case Op::slice: {
      if (double* dx = grad_buffer(n.inputs[0])) {
        for (std::size_t k = 0; k < n.aux2; ++k) dx[n.aux + k] += dy[k];
      }
      break;
    }
    case Op::softmax: {
      if (double* dx = grad_buffer(n.inputs[0])) {
        double dot = 0.0;
        for (std::size_t k = 0; k < dy.size(); ++k) dot += dy[k] * n.value[k];
        for (std::size_t k = 0; k < dy.size(); ++k) dx[k] += n.value[k] * (dy[k] - dot);
      }
      break;
    }
    case Op::cross_entropy: {
      const std::size_t src_id = n.inputs[0];
      const Node& src = nodes_[src_id];
      const double g = dy[0];
      if (src.op == Op::softmax) {
        if (double* dl = grad_buffer(src.inputs[0])) {
          for (std::size_t k = 0; k < src.value.size(); ++k) {
            dl[k] += g * (src.value[k] - (k == n.aux ? 1.0 : 0.0));
          }
        }
      } else if (double* dp = grad_buffer(src_id)) {
        dp[n.aux] += -g / value_of(src_id)[n.aux];
      }
      break;
    }
    case Op::mse: {
      const Tensor& a = value_of(n.inputs[0]);
      const Tensor& b = value_of(n.inputs[1]);
      const double coef = 2.0 * dy[0] / static_cast<double>(a.size());
      double* da = grad_buffer(n.inputs[0]);
      double* db = grad_buffer(n.inputs[1]);
      for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = coef * (a[k] - b[k]);
        if (da) da[k] += d;
        if (db) db[k] -= d;
      }
      break;
    }
    case Op::concat: {
      const std::size_t split = n.aux;
      if (double* da = grad_buffer(n.inputs[0])) {
        for (std::size_t k = 0; k < split; ++k) da[k] += dy[k];
      }
      if (double* db = grad_buffer(n.inputs[1])) {
        for (std::size_t k = split; k < dy.size(); ++k) db[k - split] += dy[k];
      }
      break;
    }
    case Op::sq_distances: {
      const Tensor& s = value_of(n.inputs[0]);
      const Tensor& rows = value_of(n.inputs[1]);
      double* ds = grad_buffer(n.inputs[0]);
      double* dr = grad_buffer(n.inputs[1]);
      const std::size_t width = s.size();
      for (std::size_t k = 0; k < rows.rows(); ++k) {
        const double g = 2.0 * dy[k];
        if (g == 0.0) continue;
        auto r = rows.row(k);
        for (std::size_t j = 0; j < width; ++j) {
          const double d = g * (r[j] - s[j]);
          if (ds) ds[j] -= d;
          if (dr) dr[k * width + j] += d;
        }
      }
      break;
    }
    case Op::stack_rows: {
      const std::size_t width = n.value.cols();
      for (std::size_t r = 0; r < n.inputs.size(); ++r) {
        if (double* d = grad_buffer(n.inputs[r])) {
          for (std::size_t k = 0; k < width; ++k) d[k] += dy[r * width + k];
        }
      }
      break;
    }
    case Op::add:
    case Op::sum: {
      for (std::size_t in : n.inputs) {
        if (double* d = grad_buffer(in)) {
          for (std::size_t k = 0; k < dy.size(); ++k) d[k] += dy[k];
        }
      }
      break;
    }
    case Op::scale: {
      if (double* d = grad_buffer(n.inputs[0])) {
        for (std::size_t k = 0; k < dy.size(); ++k) d[k] += n.factor * dy[k];
      }
      break;
    }
  }
}

}  // namespace gw
