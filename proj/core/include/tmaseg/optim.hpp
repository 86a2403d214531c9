#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "tmaseg/graph.hpp"

namespace tmaseg::ad {

// Named trainable tensors plus non-trainable buffers (batch-norm running
// statistics) and the optimizer step counter. Iteration order is by name.
class ParameterSet {
 public:
  Parameter& add(const std::string& name, Tensor init);
  Tensor& add_buffer(const std::string& name, Tensor init);

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  Tensor& buffer(const std::string& name);
  const Tensor& buffer(const std::string& name) const;

  std::map<std::string, Parameter>& parameters() { return params_; }
  const std::map<std::string, Parameter>& parameters() const { return params_; }
  std::map<std::string, Tensor>& buffers() { return buffers_; }
  const std::map<std::string, Tensor>& buffers() const { return buffers_; }

  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t step) { step_ = step; }

  /// Sets every gradient to zeros of the parameter's shape.
  void zero_grad();
  std::int64_t parameter_count() const;

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  std::map<std::string, Parameter> params_;
  std::map<std::string, Tensor> buffers_;
  std::uint64_t step_ = 0;
};

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// t <- t+1
// m <- b1 m + (1-b1) g ;  v <- b2 v + (1-b2) g^2
// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps),  m_hat = m/(1-b1^t), v_hat = v/(1-b2^t)
// Gradients are left untouched.
void adam_step(ParameterSet& params, const AdamOptions& options);

}  // namespace tmaseg::ad
