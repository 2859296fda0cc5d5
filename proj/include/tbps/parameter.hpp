#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tbps/rng.hpp"
#include "tbps/tensor.hpp"

namespace tbps {

// A trainable leaf tensor plus its Adam moments. Move-only: the tensor handle
// is shared storage, so copying would silently alias weights.
template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> tensor;
  std::vector<Real> adam_m;
  std::vector<Real> adam_v;
  std::int64_t step = 0;

  Parameter() = default;
  Parameter(std::string name_, Shape shape)
      : name(std::move(name_)),
        tensor(std::move(shape), true),
        adam_m(tensor.numel(), Real(0)),
        adam_v(tensor.numel(), Real(0)) {}

  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;
  Parameter(const Parameter&) = delete;
  Parameter& operator=(const Parameter&) = delete;

  void init_truncated_normal(Rng& rng, double stddev) {
    for (auto& v : tensor.mutable_data()) v = static_cast<Real>(rng.truncated_normal(stddev));
  }
  void fill(Real value) {
    for (auto& v : tensor.mutable_data()) v = value;
  }
  void zero_grad() { tensor.zero_grad(); }
};

template <typename Real>
using ParamList = std::vector<Parameter<Real>*>;

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update per parameter. Gradients are left in place;
// parameters with no gradient buffer are treated as having zero gradient.
template <typename Real>
void adam_step(const ParamList<Real>& params, const AdamConfig& cfg);

template <typename Real>
void zero_grads(const ParamList<Real>& params) {
  for (auto* p : params) p->zero_grad();
}

// Copies values (and Adam state) between equally named/shaped parameter lists,
// converting precision.
template <typename To, typename From>
void copy_parameters(const ParamList<From>& from, const ParamList<To>& to) {
  if (from.size() != to.size()) throw ShapeError("copy_parameters: parameter count mismatch");
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i]->name != to[i]->name || from[i]->tensor.shape() != to[i]->tensor.shape())
      throw ShapeError("copy_parameters: " + from[i]->name + " does not match " + to[i]->name);
    auto src = from[i]->tensor.data();
    auto dst = to[i]->tensor.mutable_data();
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] = static_cast<To>(src[j]);
    for (std::size_t j = 0; j < src.size(); ++j) {
      to[i]->adam_m[j] = static_cast<To>(from[i]->adam_m[j]);
      to[i]->adam_v[j] = static_cast<To>(from[i]->adam_v[j]);
    }
    to[i]->step = from[i]->step;
  }
}

}  // namespace tbps
