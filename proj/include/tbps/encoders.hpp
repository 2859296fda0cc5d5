#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tbps/nn.hpp"

namespace tbps {

struct EncoderConfig {
  std::size_t d = 32;
  std::size_t layers = 2;
  std::size_t attn_heads = 4;
  double mlp_ratio = 2.0;
  std::size_t patch_size = 8;
  std::size_t max_len = 16;
  std::size_t vocab_size = 0;
  double dropout = 0.0;
  double init_std = 0.02;

  void validate() const;
};

struct ImageGeometry {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;

  bool operator==(const ImageGeometry&) const = default;
};

// pixels is H×W×C with values in [0, 1].
struct ImageSample {
  Tensor<float> pixels;
  int identity = 0;

  ImageGeometry geometry() const;
};

struct TextSample {
  std::vector<int> tokens;  // padded with Vocabulary::kPad
  std::size_t length = 0;   // words before padding
  int identity = 0;
};

// Word-level vocabulary. Ids 0 and 1 are reserved for PAD and OOV; on disk it
// is one token per line, line number = id.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kOov = 1;

  Vocabulary();

  // Sorted unique words of the corpus after lowercasing.
  static Vocabulary build(std::span<const std::string> corpus);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int add(const std::string& word);
  int id(std::string_view word) const;
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return words_.size(); }
  bool contains(std::string_view word) const { return index_.count(std::string(word)) != 0; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

std::vector<std::string> split_words(std::string_view text);

TextSample tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len, int identity = 0);

// N×(P·P·C) matrix; patches enumerated row-major over the grid, each row the
// flattened P×P×C block.
template <typename Real>
Tensor<Real> patchify(const ImageSample& img, std::size_t patch_size);

template <typename Real>
struct EncoderOutput {
  Tensor<Real> features;  // (U+1)×d, row 0 global
  Mask mask;              // U+1 entries, row 0 always valid
};

// Pre-norm transformer block: x + MHA(LN(x)), then h + MLP(LN(h)).
template <typename Real>
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(const std::string& name, const EncoderConfig& cfg, Rng& rng);

  Tensor<Real> operator()(const Tensor<Real>& x, const Mask& mask, ForwardContext& ctx) const;
  void collect(ParamList<Real>& out);

 private:
  std::size_t d_ = 0;
  std::size_t heads_ = 1;
  LayerNorm<Real> ln1_, ln2_;
  Linear<Real> q_, k_, v_, o_;
  Linear<Real> fc1_, fc2_;
};

template <typename Real>
class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(const EncoderConfig& cfg, const ImageGeometry& geometry, Rng& rng);

  std::size_t num_patches() const { return num_patches_; }
  const ImageGeometry& geometry() const { return geometry_; }

  // Token matrix entering the first block: [IMG; patch projections] + positions.
  Tensor<Real> embed(const ImageSample& img) const;
  EncoderOutput<Real> encode(const ImageSample& img, ForwardContext& ctx) const;
  std::vector<EncoderOutput<Real>> encode(std::span<const ImageSample> batch, ForwardContext& ctx) const;

  void collect(ParamList<Real>& out);

 private:
  EncoderConfig cfg_;
  ImageGeometry geometry_;
  std::size_t num_patches_ = 0;
  Linear<Real> patch_proj_;
  Parameter<Real> img_token_;
  Parameter<Real> positions_;
  std::vector<TransformerBlock<Real>> blocks_;
  LayerNorm<Real> final_ln_;
};

template <typename Real>
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(const EncoderConfig& cfg, Rng& rng);

  Tensor<Real> embed(const TextSample& txt) const;
  EncoderOutput<Real> encode(const TextSample& txt, ForwardContext& ctx) const;
  std::vector<EncoderOutput<Real>> encode(std::span<const TextSample> batch, ForwardContext& ctx) const;

  void collect(ParamList<Real>& out);

 private:
  Mask mask_for(const TextSample& txt) const;

  EncoderConfig cfg_;
  Parameter<Real> token_table_;
  Parameter<Real> cls_token_;
  Parameter<Real> positions_;
  std::vector<TransformerBlock<Real>> blocks_;
  LayerNorm<Real> final_ln_;
};

extern template class TransformerBlock<float>;
extern template class TransformerBlock<double>;
extern template class TransformerBlock<long double>;
extern template class ImageEncoder<float>;
extern template class ImageEncoder<double>;
extern template class ImageEncoder<long double>;
extern template class TextEncoder<float>;
extern template class TextEncoder<double>;
extern template class TextEncoder<long double>;

}  // namespace tbps
