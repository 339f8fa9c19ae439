#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evgraph/ndiff/matrix.hpp"

namespace evg::nd {

struct Parameter {
  std::string name;
  Tensor<double> tensor;
  bool trainable = true;

  [[nodiscard]] std::size_t count() const noexcept { return tensor.value.size(); }
};

// Ordered registry of named parameters. Names are unique; indices are stable.
class ParameterSet {
 public:
  std::size_t add(std::string name, Mat init, bool trainable = true);

  Parameter& operator[](std::size_t i) { return items_.at(i); }
  const Parameter& operator[](std::size_t i) const { return items_.at(i); }
  [[nodiscard]] std::optional<std::size_t> find(std::string_view name) const;

  [[nodiscard]] std::size_t size() const noexcept { return items_.size(); }
  [[nodiscard]] std::size_t total_count() const noexcept;
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  void zero_grad();

 private:
  std::vector<Parameter> items_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  AdamConfig config;
  std::vector<Mat> m;
  std::vector<Mat> v;
  std::uint64_t step = 0;

  explicit AdamState(AdamConfig cfg = {}) : config(cfg) {}
};

// One Adam update with coupled weight decay (g += wd·θ), then zeroes grads.
// Moment buffers are allocated lazily on the first call.
void adam_step(ParameterSet& params, AdamState& state);

// Max relative error between an analytic gradient and central differences.
//
// `f` is evaluated with the current contents of `inputs`; each coordinate is
// perturbed by ±h in place and restored. The error for one input is
// max|a - n| / max(1e-8, max|a|, max|n|); the result is the max over inputs.
double grad_check(const std::function<double()>& f, std::span<Mat* const> inputs,
                  std::span<const Mat> analytic, double h = 1e-5);

}  // namespace evg::nd
