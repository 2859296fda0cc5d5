#include "tbps/encoders.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace tbps {

void EncoderConfig::validate() const {
  if (d == 0 || layers == 0 || attn_heads == 0) throw ConfigError("encoder d, layers and attn_heads must be positive");
  if (d % attn_heads != 0)
    throw ConfigError("d=" + std::to_string(d) + " is not divisible by attn_heads=" + std::to_string(attn_heads));
  if (!(mlp_ratio > 0.0)) throw ConfigError("mlp_ratio must be positive");
  if (patch_size == 0) throw ConfigError("patch_size must be positive");
  if (max_len == 0) throw ConfigError("max_len must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
  if (!(init_std > 0.0)) throw ConfigError("init_std must be positive");
}

ImageGeometry ImageSample::geometry() const {
  const auto& s = pixels.shape();
  if (s.size() != 3) throw ShapeError("image must be H×W×C, got " + shape_str(s));
  return {s[0], s[1], s[2]};
}

// ---------------------------------------------------------------- vocabulary

Vocabulary::Vocabulary() {
  add("<pad>");
  add("<oov>");
}

int Vocabulary::add(const std::string& word) {
  if (auto it = index_.find(word); it != index_.end()) return it->second;
  const int id = static_cast<int>(words_.size());
  words_.push_back(word);
  index_.emplace(word, id);
  return id;
}

int Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kOov : it->second;
}

Vocabulary Vocabulary::build(std::span<const std::string> corpus) {
  std::set<std::string> words;
  for (const auto& text : corpus)
    for (auto& w : split_words(text)) words.insert(std::move(w));
  Vocabulary v;
  for (const auto& w : words) v.add(w);
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open vocabulary " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  if (lines.size() < 2) throw DataError(path.string() + ": vocabulary needs PAD and OOV lines");
  Vocabulary v;
  v.words_.clear();
  v.index_.clear();
  for (auto& w : lines) {
    if (v.index_.count(w)) throw DataError(path.string() + ": duplicate token '" + w + "'");
    v.add(w);
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write vocabulary " + path.string());
  for (const auto& w : words_) os << w << '\n';
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

TextSample tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len, int identity) {
  TextSample s;
  s.identity = identity;
  s.tokens.assign(max_len, Vocabulary::kPad);
  const auto words = split_words(text);
  s.length = std::min(words.size(), max_len);
  for (std::size_t i = 0; i < s.length; ++i) s.tokens[i] = vocab.id(words[i]);
  return s;
}

// ------------------------------------------------------------------ patchify

template <typename Real>
Tensor<Real> patchify(const ImageSample& img, std::size_t P) {
  const auto g = img.geometry();
  if (P == 0 || g.height % P != 0 || g.width % P != 0)
    throw ShapeError("image " + shape_str(img.pixels.shape()) + " is not divisible into " + std::to_string(P) + "×" +
                     std::to_string(P) + " patches");
  const std::size_t gh = g.height / P, gw = g.width / P, C = g.channels;
  const std::size_t row_len = P * P * C;
  const auto px = img.pixels.data();
  std::vector<Real> out(gh * gw * row_len);
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t pxi = 0; pxi < gw; ++pxi) {
      Real* dst = &out[(py * gw + pxi) * row_len];
      for (std::size_t y = 0; y < P; ++y)
        for (std::size_t x = 0; x < P; ++x)
          for (std::size_t c = 0; c < C; ++c)
            *dst++ = static_cast<Real>(px[((py * P + y) * g.width + (pxi * P + x)) * C + c]);
    }
  return Tensor<Real>(Shape{gh * gw, row_len}, std::move(out));
}

// --------------------------------------------------------- transformer block

template <typename Real>
TransformerBlock<Real>::TransformerBlock(const std::string& name, const EncoderConfig& cfg, Rng& rng)
    : d_(cfg.d),
      heads_(cfg.attn_heads),
      ln1_(name + ".ln1", cfg.d),
      ln2_(name + ".ln2", cfg.d),
      q_(name + ".attn.q", cfg.d, cfg.d, rng, cfg.init_std),
      // A key bias only shifts each score row by a constant, which softmax
      // cancels; it would be a parameter with identically zero gradient.
      k_(name + ".attn.k", cfg.d, cfg.d, rng, cfg.init_std, false),
      v_(name + ".attn.v", cfg.d, cfg.d, rng, cfg.init_std),
      o_(name + ".attn.o", cfg.d, cfg.d, rng, cfg.init_std) {
  const auto hidden = static_cast<std::size_t>(std::lround(cfg.mlp_ratio * static_cast<double>(cfg.d)));
  fc1_ = Linear<Real>(name + ".mlp.fc1", cfg.d, std::max<std::size_t>(hidden, 1), rng, cfg.init_std);
  fc2_ = Linear<Real>(name + ".mlp.fc2", std::max<std::size_t>(hidden, 1), cfg.d, rng, cfg.init_std);
}

template <typename Real>
Tensor<Real> TransformerBlock<Real>::operator()(const Tensor<Real>& x, const Mask& mask, ForwardContext& ctx) const {
  if (x.cols() != d_) throw ShapeError("transformer block expects width " + std::to_string(d_) + ", got " + shape_str(x.shape()));
  if (mask.size() != x.rows())
    throw ShapeError("mask has " + std::to_string(mask.size()) + " entries for " + std::to_string(x.rows()) + " rows");
  const std::size_t dh = d_ / heads_;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));

  const auto normed = ln1_(x);
  const auto q = q_(normed);
  const auto k = k_(normed);
  const auto v = v_(normed);
  std::vector<Tensor<Real>> head_out;
  head_out.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    const auto qh = ops::slice_cols(q, h * dh, (h + 1) * dh);
    const auto kh = ops::slice_cols(k, h * dh, (h + 1) * dh);
    const auto vh = ops::slice_cols(v, h * dh, (h + 1) * dh);
    const auto attn = ops::softmax_rows(ops::matmul(qh, ops::transpose(kh)), scale, std::span<const std::uint8_t>(mask));
    head_out.push_back(ops::matmul(attn, vh));
  }
  const auto attended = o_(ops::concat_cols<Real>(head_out));
  const auto h1 = ops::add(x, maybe_dropout(attended, ctx));
  const auto mlp = fc2_(ops::gelu(fc1_(ln2_(h1))));
  return ops::add(h1, maybe_dropout(mlp, ctx));
}

template <typename Real>
void TransformerBlock<Real>::collect(ParamList<Real>& out) {
  ln1_.collect(out);
  q_.collect(out);
  k_.collect(out);
  v_.collect(out);
  o_.collect(out);
  ln2_.collect(out);
  fc1_.collect(out);
  fc2_.collect(out);
}

// ------------------------------------------------------------- image encoder

template <typename Real>
ImageEncoder<Real>::ImageEncoder(const EncoderConfig& cfg, const ImageGeometry& geometry, Rng& rng)
    : cfg_(cfg), geometry_(geometry) {
  cfg.validate();
  const std::size_t P = cfg.patch_size;
  if (geometry.height % P != 0 || geometry.width % P != 0)
    throw ConfigError("image " + std::to_string(geometry.height) + "×" + std::to_string(geometry.width) +
                      " is not divisible by patch_size " + std::to_string(P));
  num_patches_ = (geometry.height / P) * (geometry.width / P);
  patch_proj_ = Linear<Real>("image.patch_proj", P * P * geometry.channels, cfg.d, rng, cfg.init_std);
  img_token_ = Parameter<Real>("image.img_token", Shape{1, cfg.d});
  img_token_.init_truncated_normal(rng, cfg.init_std);
  positions_ = Parameter<Real>("image.positions", Shape{num_patches_ + 1, cfg.d});
  positions_.init_truncated_normal(rng, cfg.init_std);
  for (std::size_t l = 0; l < cfg.layers; ++l)
    blocks_.emplace_back("image.block" + std::to_string(l), cfg, rng);
  final_ln_ = LayerNorm<Real>("image.final_ln", cfg.d);
}

template <typename Real>
Tensor<Real> ImageEncoder<Real>::embed(const ImageSample& img) const {
  if (img.geometry() != geometry_)
    throw ShapeError("image " + shape_str(img.pixels.shape()) + " does not match encoder geometry " +
                     std::to_string(geometry_.height) + "×" + std::to_string(geometry_.width) + "×" +
                     std::to_string(geometry_.channels));
  const auto patches = patchify<Real>(img, cfg_.patch_size);
  const std::vector<Tensor<Real>> rows{img_token_.tensor, patch_proj_(patches)};
  return ops::add(ops::concat_rows<Real>(rows), positions_.tensor);
}

template <typename Real>
EncoderOutput<Real> ImageEncoder<Real>::encode(const ImageSample& img, ForwardContext& ctx) const {
  Mask mask(num_patches_ + 1, 1);
  auto x = embed(img);
  for (const auto& block : blocks_) x = block(x, mask, ctx);
  return {final_ln_(x), std::move(mask)};
}

template <typename Real>
std::vector<EncoderOutput<Real>> ImageEncoder<Real>::encode(std::span<const ImageSample> batch,
                                                            ForwardContext& ctx) const {
  std::vector<EncoderOutput<Real>> out;
  out.reserve(batch.size());
  for (const auto& img : batch) out.push_back(encode(img, ctx));
  return out;
}

template <typename Real>
void ImageEncoder<Real>::collect(ParamList<Real>& out) {
  patch_proj_.collect(out);
  out.push_back(&img_token_);
  out.push_back(&positions_);
  for (auto& b : blocks_) b.collect(out);
  final_ln_.collect(out);
}

// -------------------------------------------------------------- text encoder

template <typename Real>
TextEncoder<Real>::TextEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  if (cfg.vocab_size < 2) throw ConfigError("text encoder needs a vocabulary with PAD and OOV");
  token_table_ = Parameter<Real>("text.token_table", Shape{cfg.vocab_size, cfg.d});
  token_table_.init_truncated_normal(rng, cfg.init_std);
  cls_token_ = Parameter<Real>("text.cls_token", Shape{1, cfg.d});
  cls_token_.init_truncated_normal(rng, cfg.init_std);
  positions_ = Parameter<Real>("text.positions", Shape{cfg.max_len + 1, cfg.d});
  positions_.init_truncated_normal(rng, cfg.init_std);
  for (std::size_t l = 0; l < cfg.layers; ++l)
    blocks_.emplace_back("text.block" + std::to_string(l), cfg, rng);
  final_ln_ = LayerNorm<Real>("text.final_ln", cfg.d);
}

template <typename Real>
Mask TextEncoder<Real>::mask_for(const TextSample& txt) const {
  Mask mask(cfg_.max_len + 1, 0);
  for (std::size_t i = 0; i <= txt.length; ++i) mask[i] = 1;
  return mask;
}

template <typename Real>
Tensor<Real> TextEncoder<Real>::embed(const TextSample& txt) const {
  if (txt.tokens.size() > cfg_.max_len)
    throw DataError("text has " + std::to_string(txt.tokens.size()) + " tokens, max_len is " +
                    std::to_string(cfg_.max_len));
  if (txt.length > txt.tokens.size()) throw DataError("text length exceeds its token count");
  std::vector<int> ids(txt.tokens);
  ids.resize(cfg_.max_len, Vocabulary::kPad);
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size)
      throw DataError("token id " + std::to_string(id) + " is outside the vocabulary of " +
                      std::to_string(cfg_.vocab_size));
  const std::vector<Tensor<Real>> rows{cls_token_.tensor, ops::gather_rows(token_table_.tensor, std::span<const int>(ids))};
  return ops::add(ops::concat_rows<Real>(rows), positions_.tensor);
}

template <typename Real>
EncoderOutput<Real> TextEncoder<Real>::encode(const TextSample& txt, ForwardContext& ctx) const {
  auto mask = mask_for(txt);
  auto x = embed(txt);
  for (const auto& block : blocks_) x = block(x, mask, ctx);
  return {final_ln_(x), std::move(mask)};
}

template <typename Real>
std::vector<EncoderOutput<Real>> TextEncoder<Real>::encode(std::span<const TextSample> batch,
                                                           ForwardContext& ctx) const {
  std::vector<EncoderOutput<Real>> out;
  out.reserve(batch.size());
  for (const auto& t : batch) out.push_back(encode(t, ctx));
  return out;
}

template <typename Real>
void TextEncoder<Real>::collect(ParamList<Real>& out) {
  out.push_back(&token_table_);
  out.push_back(&cls_token_);
  out.push_back(&positions_);
  for (auto& b : blocks_) b.collect(out);
  final_ln_.collect(out);
}

template Tensor<float> patchify<float>(const ImageSample&, std::size_t);
template Tensor<double> patchify<double>(const ImageSample&, std::size_t);
template Tensor<long double> patchify<long double>(const ImageSample&, std::size_t);
template class TransformerBlock<float>;
template class TransformerBlock<double>;
template class TransformerBlock<long double>;
template class ImageEncoder<float>;
template class ImageEncoder<double>;
template class ImageEncoder<long double>;
template class TextEncoder<float>;
template class TextEncoder<double>;
template class TextEncoder<long double>;

}  // namespace tbps
