#include "tbps/model.hpp"

#include <cmath>

namespace tbps {

void ModelConfig::validate() const {
  encoder.validate();
  loss.validate();
  if (num_heads == 0) throw ConfigError("K must be at least 1");
  if (num_heads < 2 && loss.lambda > 0.0) throw ConfigError("K=1 with lambda > 0 leaves the diversity loss undefined");
  if (safa_init_std < 0.0) throw ConfigError("safa_init_std must be non-negative");
}

template <typename Real>
Model<Real>::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  Rng rng(seed);
  image_ = ImageEncoder<Real>(cfg.encoder, cfg.geometry, rng);
  text_ = TextEncoder<Real>(cfg.encoder, rng);
  const double safa_std =
      cfg.safa_init_std > 0.0 ? cfg.safa_init_std : 1.0 / std::sqrt(static_cast<double>(cfg.encoder.d));
  safa_ = Safa<Real>(cfg.num_heads, cfg.encoder.d, rng, safa_std);
  classifiers_.emplace_back("classifier.global", cfg.loss.num_identities, cfg.encoder.d, rng, cfg.encoder.init_std);
  for (std::size_t k = 0; k < cfg.num_heads; ++k)
    classifiers_.emplace_back("classifier.part" + std::to_string(k), cfg.loss.num_identities, cfg.encoder.d, rng,
                              cfg.encoder.init_std);
}

template <typename Real>
ForwardResult<Real> Model<Real>::forward(const Batch& batch, ForwardContext& ctx) const {
  const std::size_t n = batch.size();
  if (n == 0 || batch.images.size() != n || batch.texts.size() != n)
    throw ShapeError("batch must hold equally many images, texts and labels");
  for (int l : batch.labels)
    if (l < 0 || static_cast<std::size_t>(l) >= cfg_.loss.num_identities)
      throw DataError("label " + std::to_string(l) + " outside the " + std::to_string(cfg_.loss.num_identities) +
                      " classifier identities");
  const auto img_out = image_.encode(std::span<const ImageSample>(batch.images), ctx);
  const auto txt_out = text_.encode(std::span<const TextSample>(batch.texts), ctx);

  ForwardResult<Real> r;
  std::vector<Tensor<Real>> img_global, txt_global;
  for (std::size_t i = 0; i < n; ++i) {
    img_global.push_back(ops::slice_rows(img_out[i].features, 0, 1));
    txt_global.push_back(ops::slice_rows(txt_out[i].features, 0, 1));
    auto [ih, it] = safa_.aggregate(img_out[i]);
    auto [th, tt] = safa_.aggregate(txt_out[i]);
    r.image_heads.push_back(std::move(ih));
    r.text_heads.push_back(std::move(th));
    r.image_traces.push_back(std::move(it));
    r.text_traces.push_back(std::move(tt));
  }
  r.global = {ops::concat_rows<Real>(img_global), ops::concat_rows<Real>(txt_global), batch.labels};
  for (std::size_t k = 0; k < cfg_.num_heads; ++k) {
    std::vector<Tensor<Real>> vis, txt;
    for (std::size_t i = 0; i < n; ++i) {
      vis.push_back(ops::slice_rows(r.image_heads[i].rows, k, k + 1));
      txt.push_back(ops::slice_rows(r.text_heads[i].rows, k, k + 1));
    }
    r.parts.push_back({ops::concat_rows<Real>(vis), ops::concat_rows<Real>(txt), batch.labels});
  }
  return r;
}

template <typename Real>
LossBreakdown<Real> Model<Real>::loss(const ForwardResult<Real>& fwd) const {
  return total_loss<Real>(fwd.global, fwd.parts, cfg_.loss, classifiers_);
}

template <typename Real>
SampleEmbedding Model<Real>::to_embedding(const EncoderOutput<Real>& out, int identity) const {
  SampleEmbedding e;
  e.identity = identity;
  const std::size_t d = cfg_.encoder.d;
  const auto f = out.features.data();
  for (std::size_t j = 0; j < d; ++j) e.global.push_back(static_cast<float>(f[j]));
  const auto heads = safa_.aggregate(out).first.rows;
  for (std::size_t k = 0; k < heads.rows(); ++k) {
    std::vector<float> row(d);
    for (std::size_t j = 0; j < d; ++j) row[j] = static_cast<float>(heads.at(k, j));
    e.parts.push_back(std::move(row));
  }
  return e;
}

template <typename Real>
SampleEmbedding Model<Real>::embed_image(const ImageSample& img) const {
  NoGradGuard guard;
  ForwardContext ctx;
  return to_embedding(image_.encode(img, ctx), img.identity);
}

template <typename Real>
SampleEmbedding Model<Real>::embed_text(const TextSample& txt) const {
  NoGradGuard guard;
  ForwardContext ctx;
  return to_embedding(text_.encode(txt, ctx), txt.identity);
}

template <typename Real>
AttentionTrace<Real> Model<Real>::image_attention(const ImageSample& img) const {
  NoGradGuard guard;
  ForwardContext ctx;
  return safa_.aggregate(image_.encode(img, ctx)).second;
}

template <typename Real>
AttentionTrace<Real> Model<Real>::text_attention(const TextSample& txt) const {
  NoGradGuard guard;
  ForwardContext ctx;
  return safa_.aggregate(text_.encode(txt, ctx)).second;
}

template <typename Real>
ParamList<Real> Model<Real>::parameters() {
  ParamList<Real> out;
  image_.collect(out);
  text_.collect(out);
  safa_.collect(out);
  for (auto& c : classifiers_) c.collect(out);
  return out;
}

template class Model<float>;
template class Model<double>;
template class Model<long double>;

}  // namespace tbps
