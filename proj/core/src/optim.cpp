#include "tmaseg/optim.hpp"

#include <cmath>

#include "tmaseg/error.hpp"

namespace tmaseg::ad {

Parameter& ParameterSet::add(const std::string& name, Tensor init) {
  if (params_.count(name) || buffers_.count(name)) {
    throw Error(ErrorCode::InvalidConfig, "duplicate parameter name '" + name + "'");
  }
  Parameter p;
  p.m = Tensor(init.shape());
  p.v = Tensor(init.shape());
  p.value = std::move(init);
  return params_.emplace(name, std::move(p)).first->second;
}

Tensor& ParameterSet::add_buffer(const std::string& name, Tensor init) {
  if (params_.count(name) || buffers_.count(name)) {
    throw Error(ErrorCode::InvalidConfig, "duplicate buffer name '" + name + "'");
  }
  return buffers_.emplace(name, std::move(init)).first->second;
}

Parameter& ParameterSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error(ErrorCode::InvalidConfig, "unknown parameter '" + name + "'");
  return it->second;
}

const Parameter& ParameterSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error(ErrorCode::InvalidConfig, "unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParameterSet::buffer(const std::string& name) {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw Error(ErrorCode::InvalidConfig, "unknown buffer '" + name + "'");
  return it->second;
}

const Tensor& ParameterSet::buffer(const std::string& name) const {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw Error(ErrorCode::InvalidConfig, "unknown buffer '" + name + "'");
  return it->second;
}

void ParameterSet::zero_grad() {
  for (auto& [name, p] : params_) {
    if (p.grad.shape() != p.value.shape()) {
      p.grad = Tensor(p.value.shape());
    } else {
      p.grad.fill(Real(0));
    }
  }
}

std::int64_t ParameterSet::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [name, p] : params_) n += p.value.size();
  return n;
}

void adam_step(ParameterSet& params, const AdamOptions& options) {
  for (const auto& [name, p] : params.parameters()) {
    if (p.grad.shape() != p.value.shape()) {
      throw Error(ErrorCode::MissingGradient, "parameter '" + name + "' has no gradient");
    }
  }
  const std::uint64_t t = params.step() + 1;
  params.set_step(t);
  const double b1 = options.beta1, b2 = options.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (auto& [name, p] : params.parameters()) {
    for (std::int64_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double m = b1 * p.m[i] + (1.0 - b1) * g;
      const double v = b2 * p.v[i] + (1.0 - b2) * g * g;
      p.m[i] = static_cast<Real>(m);
      p.v[i] = static_cast<Real>(v);
      const double update = options.lr * (m / c1) / (std::sqrt(v / c2) + options.eps);
      p.value[i] = static_cast<Real>(p.value[i] - update);
    }
  }
}

}  // namespace tmaseg::ad
