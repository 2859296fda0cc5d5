#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "tbps/data.hpp"
#include "tbps/rtf.hpp"

using namespace tbps;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("tbps_test_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("synthetic dataset counts and layout") {
  const auto dir = fresh_dir("counts");
  SynthSpec spec;
  const auto m = generate_synthetic(spec, dir);
  CHECK(m.entries.size() == 200);
  std::set<std::string> images;
  std::size_t test = 0;
  for (const auto& e : m.entries) {
    images.insert(e.image);
    CHECK(fs::exists(dir / e.image));
    test += e.split == "test";
  }
  CHECK(images.size() == 100);
  CHECK(test == 40);  // one held-out image per identity, two captions each
  CHECK(fs::exists(dir / "manifest.jsonl"));

  const auto ds = load_dataset(dir / "manifest.jsonl", 16);
  CHECK(ds.images.size() == 100);
  CHECK(ds.captions.size() == 200);
  CHECK(ds.identities.size() == 20);
  CHECK(ds.images_in("train").size() == 80);
  CHECK(ds.images_in("test").size() == 20);
  CHECK(ds.geometry == ImageGeometry{32, 32, 3});
  for (const auto& img : ds.images) CHECK(img.captions.size() == 2);
  for (std::size_t i = 0; i < ds.captions.size(); ++i)
    CHECK(ds.captions[i].sample.identity == ds.images[ds.captions[i].image].sample.identity);
  CHECK(ds.oov_rate.at("test") == 0.0);
}

TEST_CASE("zero noise makes every image of an identity identical") {
  const auto dir = fresh_dir("noise0");
  SynthSpec spec;
  spec.num_ids = 3;
  spec.noise_std = 0.0;
  generate_synthetic(spec, dir);
  for (int id = 0; id < 3; ++id) {
    char a[64], b[64];
    std::snprintf(a, sizeof a, "images/id%04d_img00.rtf", id);
    std::snprintf(b, sizeof b, "images/id%04d_img04.rtf", id);
    CHECK(slurp(dir / a) == slurp(dir / b));
  }
  CHECK(slurp(dir / "images/id0000_img00.rtf") != slurp(dir / "images/id0001_img00.rtf"));
}

TEST_CASE("same seed reproduces files, another seed does not") {
  SynthSpec spec;
  spec.num_ids = 4;
  const auto a = fresh_dir("seed_a"), b = fresh_dir("seed_b"), c = fresh_dir("seed_c");
  generate_synthetic(spec, a);
  generate_synthetic(spec, b);
  spec.seed = 1;
  generate_synthetic(spec, c);
  CHECK(slurp(a / "manifest.jsonl") == slurp(b / "manifest.jsonl"));
  for (const auto& e : fs::directory_iterator(a / "images"))
    CHECK(slurp(e.path()) == slurp(b / "images" / e.path().filename()));
  CHECK(slurp(a / "images/id0000_img00.rtf") != slurp(c / "images/id0000_img00.rtf"));
}

TEST_CASE("raw images are separable by nearest centroid") {
  const auto dir = fresh_dir("separable");
  generate_synthetic(SynthSpec{}, dir);
  const auto ds = load_dataset(dir / "manifest.jsonl", 16);
  const std::size_t ids = ds.identities.size(), n = ds.images[0].sample.pixels.numel();
  std::vector<std::vector<double>> centroid(ids, std::vector<double>(n, 0.0));
  std::vector<double> count(ids, 0.0);
  for (const auto& img : ds.images) {
    const auto id = static_cast<std::size_t>(img.sample.identity);
    for (std::size_t i = 0; i < n; ++i) centroid[id][i] += img.sample.pixels.at(i);
    count[id] += 1.0;
  }
  for (std::size_t k = 0; k < ids; ++k)
    for (auto& v : centroid[k]) v /= count[k];
  std::size_t correct = 0;
  for (const auto& img : ds.images) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t k = 0; k < ids; ++k) {
      double dist = 0.0;
      for (std::size_t i = 0; i < n; ++i) dist += std::pow(img.sample.pixels.at(i) - centroid[k][i], 2.0);
      if (dist < best_d) {
        best_d = dist;
        best = k;
      }
    }
    correct += static_cast<int>(best) == img.sample.identity;
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(ds.images.size()) > 0.99);
}

TEST_CASE("manifest loading errors name the entry") {
  const auto dir = fresh_dir("errors");
  SynthSpec spec;
  spec.num_ids = 2;
  auto m = generate_synthetic(spec, dir);
  m.entries[3].image = "images/nope.rtf";
  m.write(dir / "broken.jsonl");
  try {
    load_dataset(dir / "broken.jsonl", 16);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("images/nope.rtf") != std::string::npos);
  }

  std::ofstream(dir / "bad_header.rtf") << "RTF9 1 2\n";
  m = generate_synthetic(spec, dir);
  m.entries[0].image = "bad_header.rtf";
  m.write(dir / "bad_rtf.jsonl");
  CHECK_THROWS_AS(load_dataset(dir / "bad_rtf.jsonl", 16), DataError);

  std::ofstream(dir / "garbage.jsonl") << "{\"image\": 3\n";
  CHECK_THROWS_AS(load_dataset(dir / "garbage.jsonl", 16), DataError);
  CHECK_THROWS_AS(load_dataset(dir / "absent.jsonl", 16), DataError);
}

TEST_CASE("identities are remapped contiguously and persisted") {
  const auto dir = fresh_dir("remap");
  SynthSpec spec;
  spec.num_ids = 3;
  auto m = generate_synthetic(spec, dir);
  for (auto& e : m.entries) e.identity = e.identity * 10 + 7;  // 7, 17, 27
  m.write(dir / "sparse.jsonl");
  const auto ds = load_dataset(dir / "sparse.jsonl", 16);
  CHECK(ds.identities.size() == 3);
  CHECK(ds.identities.index_of(17) == 1);
  CHECK(ds.identities.original(2) == 27);
  for (const auto& img : ds.images) CHECK((img.sample.identity >= 0 && img.sample.identity < 3));

  ds.identities.save(dir / "ids.txt");
  const auto back = IdentityMap::load(dir / "ids.txt");
  CHECK(back.size() == 3);
  CHECK(back.index_of(27) == 2);

  // A persisted map without a slot for a manifest identity is a gap.
  const auto partial = IdentityMap::from_labels({7, 17});
  LoadOptions opts;
  opts.identities = &partial;
  try {
    load_dataset(dir / "sparse.jsonl", 16, opts);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("27") != std::string::npos);
  }
}

TEST_CASE("vocabulary comes from the train split; unseen words map to OOV") {
  const auto dir = fresh_dir("oov");
  SynthSpec spec;
  spec.num_ids = 2;
  auto m = generate_synthetic(spec, dir);
  const auto train_entry = m.entries.front();
  ManifestEntry test_entry;
  for (const auto& e : m.entries)
    if (e.split == "test") test_entry = e;
  m.entries.push_back({train_entry.image, "zebra striped umbrella", train_entry.identity, "train"});
  m.entries.push_back({test_entry.image, "a quokka", test_entry.identity, "test"});
  m.write(dir / "oov.jsonl");
  const auto ds = load_dataset(dir / "oov.jsonl", 16);
  CHECK(ds.vocab.contains("zebra"));
  CHECK_FALSE(ds.vocab.contains("quokka"));
  const auto& cap = ds.captions.back();
  CHECK(cap.sample.tokens[1] == Vocabulary::kOov);
  CHECK(ds.oov_rate.at("test") > 0.0);
}

TEST_CASE("batch iterator") {
  const auto dir = fresh_dir("batches");
  SynthSpec spec;
  spec.holdout_images_per_id = 0;
  generate_synthetic(spec, dir);
  const auto ds = load_dataset(dir / "manifest.jsonl", 16);

  const BatchIterator train(ds, "train", 64, 3, true);
  CHECK(train.batches_per_epoch() == 1);
  const auto e0 = train.epoch(0);
  REQUIRE(e0.size() == 1);
  CHECK(e0[0].size() == 64);

  const BatchIterator again(ds, "train", 64, 3, true);
  const auto e0b = again.epoch(0);
  CHECK(e0b[0].image_indices == e0[0].image_indices);
  CHECK(e0b[0].caption_indices == e0[0].caption_indices);
  CHECK(train.epoch(1)[0].image_indices != e0[0].image_indices);

  for (const auto& b : train.epoch(2))
    for (std::size_t j = 0; j < b.size(); ++j) {
      const auto& cap = ds.captions[b.caption_indices[j]];
      CHECK(cap.image == b.image_indices[j]);
      CHECK(b.labels[j] == b.images[j].identity);
      CHECK(b.texts[j].tokens == cap.sample.tokens);
    }

  // Over many epochs both captions of an image get chosen.
  std::set<std::size_t> caps;
  const BatchIterator small(ds, "train", 10, 4, true);
  for (std::size_t ep = 0; ep < 20; ++ep)
    for (const auto& b : small.epoch(ep))
      for (std::size_t j = 0; j < b.size(); ++j)
        if (b.image_indices[j] == 0) caps.insert(b.caption_indices[j]);
  CHECK(caps.size() == 2);

  const BatchIterator eval(ds, "train", 64, 3, false);
  const auto ev = eval.epoch(0);
  REQUIRE(ev.size() == 2);
  CHECK(ev[1].size() == 36);
  CHECK(ev[0].image_indices[0] == 0);

  CHECK_THROWS_AS(BatchIterator(ds, "train", 101, 0, true), ConfigError);
  CHECK_THROWS_AS(BatchIterator(ds, "test", 4, 0, true), DataError);
}

TEST_CASE("synth spec validation") {
  SynthSpec spec;
  spec.num_ids = 0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = SynthSpec{};
  spec.noise_std = -1.0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  CHECK_THROWS_AS(generate_synthetic(SynthSpec{}, "/dev/null/sub"), DataError);
}
