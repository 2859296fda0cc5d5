#include "tbps/losses.hpp"

#include <cmath>

namespace tbps {

void LossConfig::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("CMPM epsilon must be positive");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (num_identities == 0) throw ConfigError("num_identities must be positive");
}

template <typename Real>
IdentityClassifier<Real>::IdentityClassifier(const std::string& name, std::size_t num_identities, std::size_t d,
                                             Rng& rng, double init_std)
    : weights_(name, Shape{num_identities, d}) {
  weights_.init_truncated_normal(rng, init_std);
}

namespace {

template <typename Real>
void check_pair(const Tensor<Real>& x, const Tensor<Real>& z, std::span<const int> labels, const char* what) {
  if (x.rows() != z.rows() || x.cols() != z.cols())
    throw ShapeError(std::string(what) + ": image " + shape_str(x.shape()) + " and text " + shape_str(z.shape()) +
                     " embeddings differ in shape");
  if (labels.size() != x.rows())
    throw ShapeError(std::string(what) + ": " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(x.rows()) + " samples");
}

// One direction of CMPM: queries against normalized targets.
template <typename Real>
Tensor<Real> cmpm_direction(const Tensor<Real>& queries, const Tensor<Real>& targets, const Tensor<Real>& log_q) {
  const auto logits = ops::matmul(queries, ops::transpose(ops::l2_normalize_rows(targets)));
  const auto log_p = ops::log_softmax_rows(logits);
  const auto p = ops::exp(log_p);
  const auto kl = ops::sum(ops::mul(p, ops::sub(log_p, log_q)));
  return ops::scale(kl, Real(1) / static_cast<Real>(queries.rows()));
}

// Projection of each row of `x` onto its paired normalized row of `z`.
template <typename Real>
Tensor<Real> cmpc_branch(const Tensor<Real>& x, const Tensor<Real>& z, std::span<const int> labels,
                         const Tensor<Real>& classifier_dirs) {
  const auto z_dir = ops::l2_normalize_rows(z);
  const auto projected = ops::mul_col(z_dir, ops::row_dot(x, z_dir));
  const auto log_probs = ops::log_softmax_rows(ops::matmul(projected, ops::transpose(classifier_dirs)));
  return ops::scale(ops::mean(ops::pick(log_probs, labels)), Real(-1));
}

}  // namespace

template <typename Real>
Tensor<Real> cmpm(const Tensor<Real>& x, const Tensor<Real>& z, std::span<const int> labels, double eps) {
  if (!(eps > 0.0)) throw ConfigError("CMPM epsilon must be positive");
  check_pair(x, z, labels, "cmpm");
  const std::size_t n = labels.size();
  // log(q + eps), constant w.r.t. the embeddings; the target matrix is
  // symmetric so both directions share it.
  std::vector<Real> log_q(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t matches = 0;
    for (std::size_t j = 0; j < n; ++j) matches += labels[i] == labels[j];
    for (std::size_t j = 0; j < n; ++j) {
      const double q = labels[i] == labels[j] ? 1.0 / static_cast<double>(matches) : 0.0;
      log_q[i * n + j] = static_cast<Real>(std::log(q + eps));
    }
  }
  const Tensor<Real> log_q_t(Shape{n, n}, std::move(log_q));
  return ops::add(cmpm_direction(x, z, log_q_t), cmpm_direction(z, x, log_q_t));
}

template <typename Real>
Tensor<Real> cmpc(const Tensor<Real>& x, const Tensor<Real>& z, std::span<const int> labels,
                  const IdentityClassifier<Real>& classifier) {
  check_pair(x, z, labels, "cmpc");
  if (classifier.weights().cols() != x.cols())
    throw ShapeError("cmpc: classifier " + shape_str(classifier.weights().shape()) + " does not match width " +
                     std::to_string(x.cols()));
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= classifier.num_identities())
      throw DataError("cmpc: label " + std::to_string(l) + " outside 0.." +
                      std::to_string(classifier.num_identities() - 1));
  const auto dirs = ops::l2_normalize_rows(classifier.weights());
  return ops::add(cmpc_branch(x, z, labels, dirs), cmpc_branch(z, x, labels, dirs));
}

template <typename Real>
Tensor<Real> part_alignment_loss(std::span<const BatchEmbeddings<Real>> parts,
                                 std::span<const IdentityClassifier<Real>> classifiers, double eps) {
  if (parts.empty()) throw ConfigError("part_alignment_loss: no part slots");
  if (parts.size() != classifiers.size())
    throw ShapeError("part_alignment_loss: " + std::to_string(parts.size()) + " slots but " +
                     std::to_string(classifiers.size()) + " classifiers");
  Tensor<Real> total;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& slot = parts[k];
    const auto term = ops::add(cmpm(slot.visual, slot.textual, std::span<const int>(slot.labels), eps),
                               cmpc(slot.visual, slot.textual, std::span<const int>(slot.labels), classifiers[k]));
    total = total.defined() ? ops::add(total, term) : term;
  }
  return total;
}

namespace {

// Σ_{i≠j} cos(row_i, row_j) from the Gram matrix of normalized rows.
template <typename Real>
Tensor<Real> off_diagonal_cosine_sum(const Tensor<Real>& heads) {
  const auto dirs = ops::l2_normalize_rows(heads);
  const auto gram = ops::matmul(dirs, ops::transpose(dirs));
  return ops::sub(ops::sum(gram), ops::sum(ops::row_dot(dirs, dirs)));
}

}  // namespace

template <typename Real>
Tensor<Real> diversity_loss(const HeadEmbeddings<Real>& image_heads, const HeadEmbeddings<Real>& text_heads) {
  const std::size_t K = image_heads.rows.rows();
  if (K < 2) throw ConfigError("diversity loss needs K >= 2 heads");
  if (text_heads.rows.rows() != K || text_heads.rows.cols() != image_heads.rows.cols())
    throw ShapeError("diversity_loss: image heads " + shape_str(image_heads.rows.shape()) + " vs text heads " +
                     shape_str(text_heads.rows.shape()));
  const auto both = ops::add(off_diagonal_cosine_sum(image_heads.rows), off_diagonal_cosine_sum(text_heads.rows));
  return ops::scale(both, Real(1) / static_cast<Real>(K * (K - 1)));
}

template <typename Real>
Tensor<Real> diversity_loss_batch(std::span<const BatchEmbeddings<Real>> parts) {
  const std::size_t K = parts.size();
  if (K < 2) throw ConfigError("diversity loss needs K >= 2 heads");
  std::vector<Tensor<Real>> vis, txt;
  for (const auto& slot : parts) {
    vis.push_back(ops::l2_normalize_rows(slot.visual));
    txt.push_back(ops::l2_normalize_rows(slot.textual));
  }
  Tensor<Real> acc;
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = i + 1; j < K; ++j) {
      const auto pair = ops::add(ops::row_dot(vis[i], vis[j]), ops::row_dot(txt[i], txt[j]));
      acc = acc.defined() ? ops::add(acc, pair) : pair;
    }
  // Ordered pairs count each unordered pair twice; mean over the n samples.
  const auto n = static_cast<Real>(parts[0].visual.rows());
  return ops::scale(ops::sum(acc), Real(2) / (static_cast<Real>(K * (K - 1)) * n));
}

template <typename Real>
LossBreakdown<Real> total_loss(const BatchEmbeddings<Real>& global, std::span<const BatchEmbeddings<Real>> parts,
                               const LossConfig& cfg, std::span<const IdentityClassifier<Real>> classifiers) {
  cfg.validate();
  if (classifiers.size() != parts.size() + 1)
    throw ShapeError("total_loss: expected " + std::to_string(parts.size() + 1) + " classifiers, got " +
                     std::to_string(classifiers.size()));
  const auto labels = std::span<const int>(global.labels);
  const auto l_global = ops::add(cmpm(global.visual, global.textual, labels, cfg.epsilon),
                                 cmpc(global.visual, global.textual, labels, classifiers[0]));
  const auto l_part = part_alignment_loss(parts, classifiers.subspan(1), cfg.epsilon);
  LossBreakdown<Real> out;
  out.global = l_global.item();
  out.part = l_part.item();
  auto total = ops::add(l_global, l_part);
  if (parts.size() >= 2) {
    const auto l_div = diversity_loss_batch(parts);
    out.diversity = l_div.item();
    if (cfg.lambda != 0.0) total = ops::add(total, ops::scale(l_div, static_cast<Real>(cfg.lambda)));
  } else if (cfg.lambda > 0.0) {
    throw ConfigError("lambda > 0 needs K >= 2 heads");
  }
  out.total = total;
  return out;
}

#define TBPS_INSTANTIATE_LOSSES(R)                                                                            \
  template class IdentityClassifier<R>;                                                                       \
  template Tensor<R> cmpm(const Tensor<R>&, const Tensor<R>&, std::span<const int>, double);                  \
  template Tensor<R> cmpc(const Tensor<R>&, const Tensor<R>&, std::span<const int>, const IdentityClassifier<R>&); \
  template Tensor<R> part_alignment_loss(std::span<const BatchEmbeddings<R>>,                                 \
                                         std::span<const IdentityClassifier<R>>, double);                     \
  template Tensor<R> diversity_loss(const HeadEmbeddings<R>&, const HeadEmbeddings<R>&);                      \
  template Tensor<R> diversity_loss_batch(std::span<const BatchEmbeddings<R>>);                               \
  template LossBreakdown<R> total_loss(const BatchEmbeddings<R>&, std::span<const BatchEmbeddings<R>>,        \
                                       const LossConfig&, std::span<const IdentityClassifier<R>>);

TBPS_INSTANTIATE_LOSSES(float)
TBPS_INSTANTIATE_LOSSES(double)
TBPS_INSTANTIATE_LOSSES(long double)

#undef TBPS_INSTANTIATE_LOSSES

}  // namespace tbps
