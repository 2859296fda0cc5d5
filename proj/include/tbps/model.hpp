#pragma once

#include <cstdint>
#include <vector>

#include "tbps/data.hpp"
#include "tbps/losses.hpp"
#include "tbps/retrieval.hpp"

namespace tbps {

struct ModelConfig {
  EncoderConfig encoder;  // encoder.vocab_size must be set
  ImageGeometry geometry;
  std::size_t num_heads = 4;  // K
  LossConfig loss;
  // Init scale of the SAFA projections; 0 selects 1/sqrt(d).
  double safa_init_std = 0.0;

  void validate() const;
};

template <typename Real>
struct ForwardResult {
  BatchEmbeddings<Real> global;
  std::vector<BatchEmbeddings<Real>> parts;  // K slots
  std::vector<HeadEmbeddings<Real>> image_heads;
  std::vector<HeadEmbeddings<Real>> text_heads;
  std::vector<AttentionTrace<Real>> image_traces;
  std::vector<AttentionTrace<Real>> text_traces;
};

// Image encoder, text encoder, one shared SAFA module and K+1 identity
// classifiers (global slot first).
template <typename Real>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  ForwardResult<Real> forward(const Batch& batch, ForwardContext& ctx) const;
  LossBreakdown<Real> loss(const ForwardResult<Real>& fwd) const;

  SampleEmbedding embed_image(const ImageSample& img) const;
  SampleEmbedding embed_text(const TextSample& txt) const;
  AttentionTrace<Real> image_attention(const ImageSample& img) const;
  AttentionTrace<Real> text_attention(const TextSample& txt) const;

  const ImageEncoder<Real>& image_encoder() const { return image_; }
  const TextEncoder<Real>& text_encoder() const { return text_; }
  const Safa<Real>& safa() const { return safa_; }
  const std::vector<IdentityClassifier<Real>>& classifiers() const { return classifiers_; }

  // Stable order; pointers are valid until the model is moved.
  ParamList<Real> parameters();

 private:
  SampleEmbedding to_embedding(const EncoderOutput<Real>& out, int identity) const;

  ModelConfig cfg_;
  ImageEncoder<Real> image_;
  TextEncoder<Real> text_;
  Safa<Real> safa_;
  std::vector<IdentityClassifier<Real>> classifiers_;
};

extern template class Model<float>;
extern template class Model<double>;
extern template class Model<long double>;

}  // namespace tbps
