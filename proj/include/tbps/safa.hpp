#pragma once

#include <string>
#include <vector>

#include "tbps/encoders.hpp"

namespace tbps {

// K part-aware embeddings of one sample, one row per head.
template <typename Real>
struct HeadEmbeddings {
  Tensor<Real> rows;  // K×d
};

// Row-0 attention weights of every head over the U+1 input rows (K×(U+1)).
// Zero on masked positions. Not part of the tape.
template <typename Real>
struct AttentionTrace {
  Tensor<Real> weights;
};

// softmax(Q·Kᵀ/√d) per row with masked columns forced to zero weight.
template <typename Real>
Tensor<Real> attention_weights(const Tensor<Real>& queries, const Tensor<Real>& keys, const Mask& mask);

// Semantic-aligned feature aggregation: K independent heads with their own
// W^Q, W^K, W^V (each d×d). Head i maps the unit-feature matrix E to
// E_i = softmax(E·W^Q_i (E·W^K_i)ᵀ/√d)·(E·W^V_i) and keeps row 0. There is no
// output projection, residual or normalization. One instance is shared by the
// image and text paths.
template <typename Real>
class Safa {
 public:
  struct Head {
    Parameter<Real> wq, wk, wv;
  };

  Safa() = default;
  Safa(std::size_t num_heads, std::size_t d, Rng& rng, double init_std);

  std::size_t num_heads() const { return heads_.size(); }
  std::size_t width() const { return d_; }

  std::pair<HeadEmbeddings<Real>, AttentionTrace<Real>> aggregate(const EncoderOutput<Real>& feats) const;

  const Head& head(std::size_t i) const { return heads_.at(i); }
  Head& head(std::size_t i) { return heads_.at(i); }

  void collect(ParamList<Real>& out);

 private:
  std::size_t d_ = 0;
  std::vector<Head> heads_;
};

extern template class Safa<float>;
extern template class Safa<double>;
extern template class Safa<long double>;

}  // namespace tbps
