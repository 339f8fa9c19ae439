#include <algorithm>
#include <cmath>
#include <memory>

#include "evgraph/ndiff/kernels.hpp"
#include "evgraph/ndiff/params.hpp"
#include "evgraph/ndiff/tape.hpp"

namespace evg::nd {

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "elu") return Activation::elu;
  throw ConfigError("unknown activation '" + std::string(name) + "' (expected relu or elu)");
}

std::string_view to_string(Activation kind) {
  return kind == Activation::relu ? "relu" : "elu";
}

Reduce parse_reduce(std::string_view name) {
  if (name == "sum") return Reduce::sum;
  if (name == "mean") return Reduce::mean;
  if (name == "max") return Reduce::max;
  throw ConfigError("unknown reduce mode '" + std::string(name) + "'");
}

// ---------------------------------------------------------------- parameters

std::size_t ParameterSet::add(std::string name, Mat init, bool trainable) {
  if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  items_.push_back(Parameter{std::move(name), Tensor<double>(std::move(init)), trainable});
  return items_.size() - 1;
}

std::optional<std::size_t> ParameterSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (items_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t ParameterSet::total_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.count();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : items_) p.tensor.zero_grad();
}

void adam_step(ParameterSet& params, AdamState& state) {
  const auto& c = state.config;
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.value.rows(), p.tensor.value.cols());
      state.v.emplace_back(p.tensor.value.rows(), p.tensor.value.cols());
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable) {
      p.tensor.zero_grad();
      continue;
    }
    auto& theta = p.tensor.value;
    auto& grad = p.tensor.grad;
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double g = grad[k] + c.weight_decay * theta[k];
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      theta[k] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
    p.tensor.zero_grad();
  }
}

double grad_check(const std::function<double()>& f, std::span<Mat* const> inputs,
                  std::span<const Mat> analytic, double h) {
  if (inputs.size() != analytic.size()) {
    throw ShapeError("grad_check: " + std::to_string(inputs.size()) + " inputs but " +
                     std::to_string(analytic.size()) + " analytic gradients");
  }
  double worst = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Mat& x = *inputs[t];
    inputs[t]->require_same_shape(analytic[t], "grad_check");
    double max_diff = 0.0, max_a = 0.0, max_n = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double orig = x[k];
      x[k] = orig + h;
      const double fp = f();
      x[k] = orig - h;
      const double fm = f();
      x[k] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[t][k];
      max_diff = std::max(max_diff, std::abs(a - numeric));
      max_a = std::max(max_a, std::abs(a));
      max_n = std::max(max_n, std::abs(numeric));
    }
    worst = std::max(worst, max_diff / std::max({1e-8, max_a, max_n}));
  }
  return worst;
}

// ---------------------------------------------------------------- tape

Var Tape::constant(Mat value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false, false});
  return Var{nodes_.size() - 1};
}

Var Tape::parameter(Parameter& p) {
  nodes_.push_back(Node{p.tensor.value, {}, {}, &p, true, false});
  return Var{nodes_.size() - 1};
}

Var Tape::record(Mat value, std::initializer_list<Var> inputs, Backward fn) {
  bool rg = false;
  for (Var v : inputs) rg = rg || nodes_.at(v.id).requires_grad;
  nodes_.push_back(Node{std::move(value), {}, rg ? std::move(fn) : Backward{}, nullptr, rg, false});
  return Var{nodes_.size() - 1};
}

void Tape::accumulate(Var v, const Mat& g) {
  Node& n = nodes_.at(v.id);
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.value.require_same_shape(g, "Tape::accumulate");
    n.grad = g;
    n.has_grad = true;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var out, const Mat& seed) {
  nodes_.at(out.id).value.require_same_shape(seed, "Tape::backward seed");
  accumulate(out, seed);
  for (std::size_t i = out.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.fn) continue;
    // fn only touches nodes with smaller ids, so the reference stays valid.
    n.fn(*this, n.grad);
  }
  if (!defer_) flush_parameter_grads();
}

void Tape::flush_parameter_grads() {
  for (auto& n : nodes_) {
    if (n.param != nullptr && n.has_grad) {
      n.param->tensor.grad += n.grad;
      n.grad = Mat();
      n.has_grad = false;
    }
  }
}

// ---------------------------------------------------------------- tape ops

Var matmul(Tape& t, Var x, Var w) {
  return t.record(matmul(t.value(x), t.value(w)), {x, w}, [x, w](Tape& tp, const Mat& g) {
    auto gr = matmul_backward(tp.value(x), tp.value(w), g);
    tp.accumulate(x, gr.x);
    tp.accumulate(w, gr.w);
  });
}

Var affine(Tape& t, Var x, Var w, Var b) {
  return t.record(affine(t.value(x), t.value(w), t.value(b)), {x, w, b},
                  [x, w, b](Tape& tp, const Mat& g) {
                    auto gr = affine_backward(tp.value(x), tp.value(w), g);
                    tp.accumulate(x, gr.x);
                    tp.accumulate(w, gr.w);
                    tp.accumulate(b, gr.b);
                  });
}

Var activation(Tape& t, Var x, Activation kind) {
  return t.record(activation(t.value(x), kind), {x}, [x, kind](Tape& tp, const Mat& g) {
    tp.accumulate(x, activation_backward(tp.value(x), g, kind));
  });
}

Var sigmoid(Tape& t, Var x) {
  Mat out = sigmoid(t.value(x));
  const std::size_t self = t.size();
  return t.record(std::move(out), {x}, [x, self](Tape& tp, const Mat& g) {
    tp.accumulate(x, sigmoid_backward(tp.value(Var{self}), g));
  });
}

Var add(Tape& t, Var a, Var b) {
  return t.record(add(t.value(a), t.value(b)), {a, b}, [a, b](Tape& tp, const Mat& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var sub(Tape& t, Var a, Var b) {
  return t.record(sub(t.value(a), t.value(b)), {a, b}, [a, b](Tape& tp, const Mat& g) {
    tp.accumulate(a, g);
    Mat neg(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
    tp.accumulate(b, neg);
  });
}

Var scale_rows(Tape& t, Var x, std::vector<double> coef) {
  Mat out = scale_rows(t.value(x), std::span<const double>(coef));
  return t.record(std::move(out), {x}, [x, coef = std::move(coef)](Tape& tp, const Mat& g) {
    tp.accumulate(x, scale_rows(g, std::span<const double>(coef)));
  });
}

Var gather_rows(Tape& t, Var x, std::span<const Index> idx) {
  Mat out = gather_rows(t.value(x), idx);
  if (!t.requires_grad(x)) return t.constant(std::move(out));
  return t.record(std::move(out), {x},
                  [x, idx = std::vector<Index>(idx.begin(), idx.end())](Tape& tp, const Mat& g) {
                    tp.accumulate(x, gather_rows_backward(g, std::span<const Index>(idx),
                                                          tp.value(x).rows()));
                  });
}

Var scatter_reduce(Tape& t, Var msgs, std::span<const Index> dst, std::size_t n_out,
                   Reduce mode) {
  auto fwd = std::make_shared<ScatterResult<double>>(scatter_reduce(t.value(msgs), dst, n_out, mode));
  Mat out = fwd->out;
  if (!t.requires_grad(msgs)) return t.constant(std::move(out));
  return t.record(std::move(out), {msgs},
                  [msgs, mode, fwd, dst = std::vector<Index>(dst.begin(), dst.end())](
                      Tape& tp, const Mat& g) {
                    tp.accumulate(msgs, scatter_reduce_backward(g, std::span<const Index>(dst),
                                                                *fwd, mode));
                  });
}

Var gather_scatter_max(Tape& t, Var x, std::span<const Index> src, std::span<const Index> dst,
                       std::size_t n_out) {
  auto fwd = std::make_shared<ScatterResult<double>>(gather_scatter_max(t.value(x), src, dst, n_out));
  Mat out = fwd->out;
  if (!t.requires_grad(x)) return t.constant(std::move(out));
  const std::size_t n_rows = t.value(x).rows();
  return t.record(std::move(out), {x}, [x, fwd, n_rows](Tape& tp, const Mat& g) {
    tp.accumulate(x, gather_scatter_max_backward(g, *fwd, n_rows));
  });
}

Var concat_cols(Tape& t, Var a, Var b) {
  const std::size_t ca = t.value(a).cols();
  return t.record(concat_cols(t.value(a), t.value(b)), {a, b},
                  [a, b, ca](Tape& tp, const Mat& g) {
                    auto [ga, gb] = concat_cols_backward(g, ca);
                    tp.accumulate(a, ga);
                    tp.accumulate(b, gb);
                  });
}

Var slice_cols(Tape& t, Var x, std::size_t begin, std::size_t count) {
  const std::size_t total = t.value(x).cols();
  return t.record(slice_cols(t.value(x), begin, count), {x},
                  [x, begin, total](Tape& tp, const Mat& g) {
                    tp.accumulate(x, slice_cols_backward(g, begin, total));
                  });
}

Var slice_rows(Tape& t, Var x, std::size_t begin, std::size_t count) {
  const std::size_t total = t.value(x).rows();
  return t.record(slice_rows(t.value(x), begin, count), {x},
                  [x, begin, total](Tape& tp, const Mat& g) {
                    tp.accumulate(x, slice_rows_backward(g, begin, total));
                  });
}

Var reshape(Tape& t, Var x, std::size_t rows, std::size_t cols) {
  const std::size_t r0 = t.value(x).rows(), c0 = t.value(x).cols();
  if (rows * cols != r0 * c0) {
    throw ShapeError("reshape: cannot view " + t.value(x).shape_str() + " as " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  return t.record(t.value(x).reshaped(rows, cols), {x}, [x, r0, c0](Tape& tp, const Mat& g) {
    tp.accumulate(x, g.reshaped(r0, c0));
  });
}

Var softmax_cross_entropy(Tape& t, Var logits, std::span<const Index> labels) {
  auto r = softmax_cross_entropy(t.value(logits), labels);
  return t.record(Mat(1, 1, r.loss), {logits},
                  [logits, grad = std::move(r.grad)](Tape& tp, const Mat& g) {
                    Mat scaled = grad;
                    for (double& v : scaled.values()) v *= g[0];
                    tp.accumulate(logits, scaled);
                  });
}

Var smooth_l1(Tape& t, Var pred, const Mat& target) {
  auto r = smooth_l1(t.value(pred), target);
  return t.record(Mat(1, 1, r.loss), {pred}, [pred, grad = std::move(r.grad)](Tape& tp, const Mat& g) {
    Mat scaled = grad;
    for (double& v : scaled.values()) v *= g[0];
    tp.accumulate(pred, scaled);
  });
}

Var weighted_sum(Tape& t, Var a, double wa, Var b, double wb) {
  const Mat& va = t.value(a);
  const Mat& vb = t.value(b);
  va.require_same_shape(vb, "weighted_sum");
  Mat out(va.rows(), va.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = wa * va[i] + wb * vb[i];
  return t.record(std::move(out), {a, b}, [a, b, wa, wb](Tape& tp, const Mat& g) {
    Mat ga = g, gb = g;
    for (double& v : ga.values()) v *= wa;
    for (double& v : gb.values()) v *= wb;
    tp.accumulate(a, ga);
    tp.accumulate(b, gb);
  });
}

}  // namespace evg::nd
