#pragma once

#include <span>
#include <string>
#include <vector>

#include "tbps/safa.hpp"

namespace tbps {

struct LossConfig {
  double epsilon = 1e-8;  // KL target smoothing in CMPM
  double lambda = 0.2;    // diversity weight
  std::size_t num_identities = 1;

  void validate() const;
};

// Identity classifier used by CMPC. Rows are L2-normalized before use, so only
// their directions matter.
template <typename Real>
class IdentityClassifier {
 public:
  IdentityClassifier() = default;
  IdentityClassifier(const std::string& name, std::size_t num_identities, std::size_t d, Rng& rng, double init_std);

  const Tensor<Real>& weights() const { return weights_.tensor; }
  Parameter<Real>& parameter() { return weights_; }
  std::size_t num_identities() const { return weights_.tensor.rows(); }

  void collect(ParamList<Real>& out) { out.push_back(&weights_); }

 private:
  Parameter<Real> weights_;
};

// Paired n×d image/text embedding matrices of one alignment slot.
template <typename Real>
struct BatchEmbeddings {
  Tensor<Real> visual;
  Tensor<Real> textual;
  std::vector<int> labels;
};

// Cross-modal projection matching, both directions. For X→Z:
//   p_ij = softmax_j(x_i · z̄_j),  q_ij = y_ij / Σ_k y_ik,
//   loss = (1/n) Σ_i Σ_j p_ij · ln(p_ij / (q_ij + eps)),
// with z̄ the L2-normalized rows of Z and y_ij = [label_i == label_j].
template <typename Real>
Tensor<Real> cmpm(const Tensor<Real>& x, const Tensor<Real>& z, std::span<const int> labels, double eps);

// Cross-modal projection classification, both branches. The image branch
// classifies x̂_i = (x_i · z̄_i) z̄_i with logits x̂_i · W̄ᵀ (W̄ row-normalized)
// under mean cross-entropy; the text branch swaps roles.
template <typename Real>
Tensor<Real> cmpc(const Tensor<Real>& x, const Tensor<Real>& z, std::span<const int> labels,
                  const IdentityClassifier<Real>& classifier);

// Σ_k [cmpm + cmpc] over the K part slots, one classifier per slot.
template <typename Real>
Tensor<Real> part_alignment_loss(std::span<const BatchEmbeddings<Real>> parts,
                                 std::span<const IdentityClassifier<Real>> classifiers, double eps);

// Per-sample head redundancy:
//   (1/(K(K-1))) Σ_{i≠j} [cos(ẽ_i, ẽ_j) + cos(t̃_i, t̃_j)]
template <typename Real>
Tensor<Real> diversity_loss(const HeadEmbeddings<Real>& image_heads, const HeadEmbeddings<Real>& text_heads);

// Batch mean of diversity_loss, computed slot-wise from the part matrices
// (sample s of head k is row s of parts[k]).
template <typename Real>
Tensor<Real> diversity_loss_batch(std::span<const BatchEmbeddings<Real>> parts);

template <typename Real>
struct LossBreakdown {
  Tensor<Real> total;
  double global = 0.0;
  double part = 0.0;
  double diversity = 0.0;
};

// L = L_global + L_part + λ·L_div. classifiers[0] serves the global slot and
// classifiers[k] part slot k (1-based), so K+1 are required.
template <typename Real>
LossBreakdown<Real> total_loss(const BatchEmbeddings<Real>& global, std::span<const BatchEmbeddings<Real>> parts,
                               const LossConfig& cfg, std::span<const IdentityClassifier<Real>> classifiers);

extern template class IdentityClassifier<float>;
extern template class IdentityClassifier<double>;
extern template class IdentityClassifier<long double>;

}  // namespace tbps
