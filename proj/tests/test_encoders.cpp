#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "tbps/encoders.hpp"
#include "test_util.hpp"

using namespace tbps;

namespace {

ImageSample random_image(Rng& rng, std::size_t h = 32, std::size_t w = 32, std::size_t c = 3) {
  std::vector<float> px(h * w * c);
  for (auto& v : px) v = static_cast<float>(rng.uniform());
  return ImageSample{Tensor<float>(Shape{h, w, c}, std::move(px)), 0};
}

EncoderConfig small_config(std::size_t vocab = 20, std::size_t max_len = 8) {
  EncoderConfig cfg;
  cfg.d = 16;
  cfg.layers = 2;
  cfg.attn_heads = 4;
  cfg.patch_size = 8;
  cfg.max_len = max_len;
  cfg.vocab_size = vocab;
  cfg.init_std = 0.2;
  return cfg;
}

template <typename Real>
bool rows_equal(const Tensor<Real>& a, const Tensor<Real>& b, std::size_t row, double tol) {
  for (std::size_t j = 0; j < a.cols(); ++j)
    if (std::abs(static_cast<double>(a.at(row, j) - b.at(row, j))) > tol) return false;
  return true;
}

}  // namespace

TEST_CASE("patchify: shape, constancy and enumeration order") {
  Rng rng(1);
  CHECK(patchify<float>(random_image(rng), 8).shape() == Shape{16, 192});

  ImageSample flat{Tensor<float>(Shape{16, 16, 3}, std::vector<float>(16 * 16 * 3, 0.4f)), 0};
  const auto p = patchify<float>(flat, 4);
  for (std::size_t r = 1; r < p.rows(); ++r) CHECK(rows_equal(p, p, 0, 0.0));
  for (float v : p.data()) CHECK(v == 0.4f);

  ImageSample tiny{Tensor<float>(Shape{2, 2, 1}, std::vector<float>{1, 2, 3, 4}), 0};
  const auto q = patchify<float>(tiny, 1);
  CHECK(q.shape() == Shape{4, 1});
  CHECK(q.to_vector() == std::vector<float>{1, 2, 3, 4});

  // Second patch of a 2×4×1 image with P=2 holds columns 2..3 of both rows.
  ImageSample wide{Tensor<float>(Shape{2, 4, 1}, std::vector<float>{0, 1, 2, 3, 4, 5, 6, 7}), 0};
  const auto w = patchify<float>(wide, 2);
  CHECK(w.to_vector() == std::vector<float>{0, 1, 4, 5, 2, 3, 6, 7});

  CHECK_THROWS_AS(patchify<float>(random_image(rng, 30, 32), 8), ShapeError);
}

TEST_CASE("tokenize examples") {
  Vocabulary vocab;
  CHECK(vocab.add("a") == 2);
  CHECK(vocab.add("man") == 3);
  CHECK(vocab.add("in") == 4);
  CHECK(vocab.add("red") == 5);

  auto t = tokenize("A man in red", vocab, 6);
  CHECK(t.tokens == std::vector<int>{2, 3, 4, 5, Vocabulary::kPad, Vocabulary::kPad});
  CHECK(t.length == 4);

  t = tokenize("", vocab, 5);
  CHECK(t.length == 0);
  CHECK(t.tokens == std::vector<int>(5, Vocabulary::kPad));

  std::string long_text;
  for (int i = 0; i < 120; ++i) long_text += "red ";
  t = tokenize(long_text, vocab, 100);
  CHECK(t.length == 100);
  CHECK(t.tokens.size() == 100);

  t = tokenize("  RED\tunknown\nman ", vocab, 4);
  CHECK(t.tokens == std::vector<int>{5, Vocabulary::kOov, 3, Vocabulary::kPad});
  CHECK(t.length == 3);
}

TEST_CASE("vocabulary build, save and load") {
  const std::vector<std::string> corpus{"the red coat", "The blue Coat"};
  const auto v = Vocabulary::build(corpus);
  CHECK(v.size() == 6);
  CHECK(v.word(0) == "<pad>");
  CHECK(v.word(1) == "<oov>");
  CHECK(v.id("blue") == 2);
  CHECK(v.id("missing") == Vocabulary::kOov);

  const auto path = std::filesystem::temp_directory_path() / "tbps_vocab_test.txt";
  v.save(path);
  const auto back = Vocabulary::load(path);
  CHECK(back.size() == v.size());
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(back.word(static_cast<int>(i)) == v.word(static_cast<int>(i)));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(Vocabulary::load(path), DataError);
}

TEST_CASE("encoder config validation") {
  auto cfg = small_config();
  cfg.attn_heads = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.dropout = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  Rng rng(0);
  CHECK_THROWS_AS(ImageEncoder<float>(small_config(), ImageGeometry{30, 32, 3}, rng), ConfigError);
}

TEST_CASE("transformer block: shape, finiteness and masked rows never attended") {
  auto cfg = small_config();
  Rng rng(2);
  TransformerBlock<double> block("b", cfg, rng);
  ForwardContext ctx;
  const auto x = testing::random_tensor<double>(rng, {5, 16});
  const Mask mask{1, 1, 0, 1, 1};
  const auto y1 = block(x, mask, ctx);
  CHECK(y1.shape() == x.shape());
  for (double v : y1.data()) CHECK(std::isfinite(v));

  auto x2 = x.detach();
  for (std::size_t j = 0; j < 16; ++j) x2.mutable_data()[2 * 16 + j] += 0.5 * static_cast<double>(j % 3) - 0.4;
  const auto y2 = block(x2, mask, ctx);
  for (std::size_t r : {0, 1, 3, 4}) CHECK(rows_equal(y1, y2, r, 1e-12));
  CHECK_FALSE(rows_equal(y1, y2, 2, 1e-6));

  // Negative control: the same perturbation on a valid row reaches the others.
  const Mask all(5, 1);
  CHECK_FALSE(rows_equal(block(x, all, ctx), block(x2, all, ctx), 0, 1e-6));

  CHECK_THROWS_AS(block(x, Mask{1, 1}, ctx), ShapeError);
}

TEST_CASE("image encoder: shapes, determinism and batch permutation") {
  auto cfg = small_config();
  cfg.d = 32;
  Rng wrng(3);
  ImageEncoder<float> enc(cfg, ImageGeometry{}, wrng);
  CHECK(enc.num_patches() == 16);
  Rng rng(4);
  std::vector<ImageSample> batch{random_image(rng), random_image(rng)};
  ForwardContext ctx;
  const auto out = enc.encode(batch, ctx);
  REQUIRE(out.size() == 2);
  for (const auto& o : out) {
    CHECK(o.features.shape() == Shape{17, 32});
    CHECK(o.mask == Mask(17, 1));
  }
  const auto same = enc.encode(batch[0], ctx);
  CHECK(same.features.to_vector() == out[0].features.to_vector());

  std::vector<ImageSample> swapped{batch[1], batch[0]};
  const auto perm = enc.encode(swapped, ctx);
  CHECK(perm[0].features.to_vector() == out[1].features.to_vector());
  CHECK(perm[1].features.to_vector() == out[0].features.to_vector());

  CHECK_THROWS_AS(enc.encode(random_image(rng, 16, 16), ctx), ShapeError);
}

TEST_CASE("image encoder: patch locality") {
  auto cfg = small_config();
  Rng wrng(5);
  ImageEncoder<double> enc(cfg, ImageGeometry{}, wrng);
  Rng rng(6);
  const auto img = random_image(rng);
  ImageSample changed{img.pixels.detach(), 0};
  // Patch (row 1, col 2) of the 4×4 grid is patch index 6.
  for (std::size_t y = 8; y < 16; ++y)
    for (std::size_t x = 16; x < 24; ++x) changed.pixels.mutable_data()[(y * 32 + x) * 3] += 0.5f;
  const auto a = enc.embed(img), b = enc.embed(changed);
  for (std::size_t r = 0; r < 17; ++r) {
    if (r == 7)
      CHECK_FALSE(rows_equal(a, b, r, 1e-9));
    else
      CHECK(rows_equal(a, b, r, 0.0));
  }
  ForwardContext ctx;
  CHECK_FALSE(rows_equal(enc.encode(img, ctx).features, enc.encode(changed, ctx).features, 0, 1e-9));
}

TEST_CASE("text encoder: shapes, padding invariance and robustness") {
  auto cfg = small_config(30, 100);
  cfg.d = 32;
  Rng wrng(7);
  TextEncoder<double> enc(cfg, wrng);
  ForwardContext ctx;

  TextSample a{std::vector<int>(100, Vocabulary::kPad), 3, 0};
  a.tokens[0] = 5;
  a.tokens[1] = 9;
  a.tokens[2] = 12;
  TextSample b = a;
  b.tokens[1] = 20;
  const auto out = enc.encode(std::vector<TextSample>{a, b}, ctx);
  REQUIRE(out.size() == 2);
  CHECK(out[0].features.shape() == Shape{101, 32});
  CHECK(out[0].mask[3] == 1);
  CHECK(out[0].mask[4] == 0);

  // Short token list padded implicitly versus the explicit padded form.
  TextSample shorter{std::vector<int>{5, 9, 12}, 3, 0};
  CHECK(enc.encode(shorter, ctx).features.to_vector() == out[0].features.to_vector());

  // Whatever sits beyond `length` is masked out of every valid row.
  TextSample noisy = a;
  for (std::size_t i = 3; i < 100; ++i) noisy.tokens[i] = static_cast<int>(2 + i % 25);
  const auto n = enc.encode(noisy, ctx);
  for (std::size_t r = 0; r <= 3; ++r) CHECK(rows_equal(n.features, out[0].features, r, 1e-6));

  TextSample oov{std::vector<int>{Vocabulary::kOov, Vocabulary::kOov}, 2, 0};
  const auto oov_out = enc.encode(oov, ctx);
  for (double v : oov_out.features.data()) CHECK(std::isfinite(v));

  TextSample empty{{}, 0, 0};
  CHECK(enc.encode(empty, ctx).features.shape() == Shape{101, 32});

  TextSample bad{std::vector<int>{30}, 1, 0};
  CHECK_THROWS_AS(enc.encode(bad, ctx), DataError);
  TextSample too_long{std::vector<int>(101, 2), 101, 0};
  CHECK_THROWS_AS(enc.encode(too_long, ctx), DataError);
}

TEST_CASE("fixed seed gives bitwise identical encoder weights") {
  const auto cfg = small_config();
  Rng r1(11), r2(11), r3(12);
  ImageEncoder<float> a(cfg, ImageGeometry{}, r1), b(cfg, ImageGeometry{}, r2), c(cfg, ImageGeometry{}, r3);
  ParamList<float> pa, pb, pc;
  a.collect(pa);
  b.collect(pb);
  c.collect(pc);
  REQUIRE(pa.size() == pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    CHECK(pa[i]->tensor.to_vector() == pb[i]->tensor.to_vector());
    any_diff = any_diff || pa[i]->tensor.to_vector() != pc[i]->tensor.to_vector();
  }
  CHECK(any_diff);
}

TEST_CASE("dropout only applies in training mode with a generator") {
  auto cfg = small_config();
  cfg.dropout = 0.5;
  Rng wrng(13);
  ImageEncoder<float> enc(cfg, ImageGeometry{}, wrng);
  Rng rng(14);
  const auto img = random_image(rng);
  ForwardContext eval_ctx;
  const auto a = enc.encode(img, eval_ctx).features.to_vector();
  CHECK(enc.encode(img, eval_ctx).features.to_vector() == a);
  Rng drop(15);
  ForwardContext train_ctx{true, 0.5, &drop};
  CHECK(enc.encode(img, train_ctx).features.to_vector() != a);
}
