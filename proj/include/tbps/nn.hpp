#pragma once

#include <string>

#include "tbps/ops.hpp"
#include "tbps/parameter.hpp"

namespace tbps {

// Per-forward switches. Dropout only applies when training with an rng.
struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;
};

template <typename Real>
Tensor<Real> maybe_dropout(const Tensor<Real>& x, ForwardContext& ctx) {
  if (!ctx.training || ctx.dropout <= 0.0 || ctx.rng == nullptr) return x;
  return ops::dropout(x, ctx.dropout, *ctx.rng);
}

// y = x·W + b with W stored in×out; the bias is optional.
template <typename Real>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, double init_std, bool bias = true)
      : weight_(name + ".weight", Shape{in, out}), has_bias_(bias) {
    if (has_bias_) bias_ = Parameter<Real>(name + ".bias", Shape{out});
    weight_.init_truncated_normal(rng, init_std);
  }

  Tensor<Real> operator()(const Tensor<Real>& x) const {
    const auto y = ops::matmul(x, weight_.tensor);
    return has_bias_ ? ops::add_row(y, bias_.tensor) : y;
  }

  void collect(ParamList<Real>& out) {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
  }

  Parameter<Real>& weight() { return weight_; }
  Parameter<Real>& bias() { return bias_; }

 private:
  Parameter<Real> weight_;
  Parameter<Real> bias_;
  bool has_bias_ = true;
};

template <typename Real>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t width)
      : gamma_(name + ".gamma", Shape{width}), beta_(name + ".beta", Shape{width}) {
    gamma_.fill(Real(1));
  }

  Tensor<Real> operator()(const Tensor<Real>& x) const {
    return ops::layer_norm_rows(x, gamma_.tensor, beta_.tensor);
  }

  void collect(ParamList<Real>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }

 private:
  Parameter<Real> gamma_;
  Parameter<Real> beta_;
};

}  // namespace tbps
