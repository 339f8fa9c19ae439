#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "evgraph/ndiff/kernels.hpp"
#include "evgraph/ndiff/params.hpp"

namespace evg::nd {

class Tape;

struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
  [[nodiscard]] bool valid() const noexcept { return id != std::numeric_limits<std::size_t>::max(); }
};

// Records forward results of the kernels in kernels.hpp and replays their
// backward functions in reverse order. This is a linear tape, not a general
// autodiff graph: every op is one of the wrappers below.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat& grad_out)>;

  // When `defer_parameter_grads` is set, parameter gradients stay on the tape
  // until flush_parameter_grads() so several tapes can run concurrently.
  explicit Tape(bool defer_parameter_grads = false) : defer_(defer_parameter_grads) {}

  Var constant(Mat value);
  Var parameter(Parameter& p);
  Var record(Mat value, std::initializer_list<Var> inputs, Backward fn);

  [[nodiscard]] const Mat& value(Var v) const { return nodes_.at(v.id).value; }
  [[nodiscard]] const Mat& grad(Var v) const { return nodes_.at(v.id).grad; }
  [[nodiscard]] bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

  void accumulate(Var v, const Mat& g);
  void backward(Var out, const Mat& seed);
  void backward(Var scalar_out) { backward(scalar_out, Mat(1, 1, 1.0)); }
  void flush_parameter_grads();

 private:
  struct Node {
    Mat value;
    Mat grad;
    Backward fn;
    Parameter* param = nullptr;
    bool requires_grad = false;
    bool has_grad = false;
  };
  std::vector<Node> nodes_;
  bool defer_ = false;
};

Var matmul(Tape& t, Var x, Var w);
Var affine(Tape& t, Var x, Var w, Var b);
Var activation(Tape& t, Var x, Activation kind);
Var sigmoid(Tape& t, Var x);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var scale_rows(Tape& t, Var x, std::vector<double> coef);
Var gather_rows(Tape& t, Var x, std::span<const Index> idx);
Var scatter_reduce(Tape& t, Var msgs, std::span<const Index> dst, std::size_t n_out, Reduce mode);
Var gather_scatter_max(Tape& t, Var x, std::span<const Index> src, std::span<const Index> dst,
                       std::size_t n_out);
Var concat_cols(Tape& t, Var a, Var b);
Var slice_cols(Tape& t, Var x, std::size_t begin, std::size_t count);
Var slice_rows(Tape& t, Var x, std::size_t begin, std::size_t count);
Var reshape(Tape& t, Var x, std::size_t rows, std::size_t cols);

// Scalar (1×1) loss nodes.
Var softmax_cross_entropy(Tape& t, Var logits, std::span<const Index> labels);
Var smooth_l1(Tape& t, Var pred, const Mat& target);
Var weighted_sum(Tape& t, Var a, double wa, Var b, double wb);

}  // namespace evg::nd
