#include "tbps/parameter.hpp"

#include <cmath>

namespace tbps {

template <typename Real>
void adam_step(const ParamList<Real>& params, const AdamConfig& cfg) {
  for (auto* p : params) {
    auto w = p->tensor.mutable_data();
    const auto g = p->tensor.grad();
    const bool has_grad = !g.empty();
    p->step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p->step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p->step));
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = has_grad ? static_cast<double>(g[i]) : 0.0;
      const double m = cfg.beta1 * p->adam_m[i] + (1.0 - cfg.beta1) * gi;
      const double v = cfg.beta2 * p->adam_v[i] + (1.0 - cfg.beta2) * gi * gi;
      p->adam_m[i] = static_cast<Real>(m);
      p->adam_v[i] = static_cast<Real>(v);
      const double update = cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
      w[i] = static_cast<Real>(w[i] - update);
    }
  }
}

template void adam_step<float>(const ParamList<float>&, const AdamConfig&);
template void adam_step<double>(const ParamList<double>&, const AdamConfig&);

}  // namespace tbps
