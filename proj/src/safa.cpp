#include "tbps/safa.hpp"

#include <cmath>

namespace tbps {

template <typename Real>
Tensor<Real> attention_weights(const Tensor<Real>& queries, const Tensor<Real>& keys, const Mask& mask) {
  if (queries.cols() != keys.cols())
    throw ShapeError("attention_weights: query " + shape_str(queries.shape()) + " and key " +
                     shape_str(keys.shape()) + " widths differ");
  if (!mask.empty() && mask.size() != keys.rows())
    throw ShapeError("attention_weights: mask has " + std::to_string(mask.size()) + " entries for " +
                     std::to_string(keys.rows()) + " keys");
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(queries.cols()));
  return ops::softmax_rows(ops::matmul(queries, ops::transpose(keys)), scale, std::span<const std::uint8_t>(mask));
}

template <typename Real>
Safa<Real>::Safa(std::size_t num_heads, std::size_t d, Rng& rng, double init_std) : d_(d) {
  if (num_heads == 0) throw ConfigError("SAFA needs at least one head");
  heads_.reserve(num_heads);
  for (std::size_t i = 0; i < num_heads; ++i) {
    const std::string base = "safa.head" + std::to_string(i);
    Head h{Parameter<Real>(base + ".wq", Shape{d, d}), Parameter<Real>(base + ".wk", Shape{d, d}),
           Parameter<Real>(base + ".wv", Shape{d, d})};
    h.wq.init_truncated_normal(rng, init_std);
    h.wk.init_truncated_normal(rng, init_std);
    h.wv.init_truncated_normal(rng, init_std);
    heads_.push_back(std::move(h));
  }
}

template <typename Real>
std::pair<HeadEmbeddings<Real>, AttentionTrace<Real>> Safa<Real>::aggregate(const EncoderOutput<Real>& feats) const {
  const auto& E = feats.features;
  if (E.cols() != d_)
    throw ShapeError("SAFA width " + std::to_string(d_) + " does not match features " + shape_str(E.shape()));
  if (feats.mask.size() != E.rows()) throw ShapeError("SAFA: mask does not cover every feature row");

  // Only row 0 of E_i = A_i·V_i is kept, and it depends on Q_i only through
  // its first row, so the query projection is applied to e_g alone.
  const auto global_row = ops::slice_rows(E, 0, 1);
  std::vector<Tensor<Real>> rows;
  std::vector<Real> trace;
  rows.reserve(heads_.size());
  trace.reserve(heads_.size() * E.rows());
  for (const auto& h : heads_) {
    const auto q0 = ops::matmul(global_row, h.wq.tensor);
    const auto keys = ops::matmul(E, h.wk.tensor);
    const auto values = ops::matmul(E, h.wv.tensor);
    const auto attn = attention_weights(q0, keys, feats.mask);
    rows.push_back(ops::matmul(attn, values));
    trace.insert(trace.end(), attn.data().begin(), attn.data().end());
  }
  HeadEmbeddings<Real> emb{ops::concat_rows<Real>(rows)};
  AttentionTrace<Real> tr{Tensor<Real>(Shape{heads_.size(), E.rows()}, std::move(trace))};
  return {std::move(emb), std::move(tr)};
}

template <typename Real>
void Safa<Real>::collect(ParamList<Real>& out) {
  for (auto& h : heads_) {
    out.push_back(&h.wq);
    out.push_back(&h.wk);
    out.push_back(&h.wv);
  }
}

template Tensor<float> attention_weights<float>(const Tensor<float>&, const Tensor<float>&, const Mask&);
template Tensor<double> attention_weights<double>(const Tensor<double>&, const Tensor<double>&, const Mask&);
template Tensor<long double> attention_weights<long double>(const Tensor<long double>&, const Tensor<long double>&, const Mask&);
template class Safa<float>;
template class Safa<double>;
template class Safa<long double>;

}  // namespace tbps
