#include "tbps/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "tbps/rtf.hpp"

namespace tbps {

namespace fs = std::filesystem;

// ------------------------------------------------------------------ manifest

DatasetManifest DatasetManifest::read(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    ManifestEntry e;
    try {
      e.image = j.at("image").get<std::string>();
      e.caption = j.at("caption").get<std::string>();
      e.identity = j.at("identity").get<int>();
      e.split = j.value("split", std::string("train"));
    } catch (const nlohmann::json::exception& ex) {
      throw DataError(where + ": " + ex.what());
    }
    if (e.identity < 0) throw DataError(where + ": negative identity");
    m.entries.push_back(std::move(e));
  }
  return m;
}

void DatasetManifest::write(const fs::path& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write manifest " + path.string());
  for (const auto& e : entries) {
    nlohmann::ordered_json j;
    j["image"] = e.image;
    j["caption"] = e.caption;
    j["identity"] = e.identity;
    j["split"] = e.split;
    os << j.dump() << '\n';
  }
  if (!os) throw DataError("failed writing manifest " + path.string());
}

// ----------------------------------------------------------------- synthesis

void SynthSpec::validate() const {
  if (num_ids == 0 || images_per_id == 0 || captions_per_image == 0 || image_size == 0 || channels == 0 ||
      vocab_words_per_id == 0)
    throw ConfigError("synthetic dataset counts must all be at least 1");
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative");
  if (holdout_images_per_id >= images_per_id && images_per_id > 1)
    throw ConfigError("holdout_images_per_id must leave at least one training image per identity");
}

namespace {

const char* const kSyllables[] = {"ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo",
                                  "ze", "ba", "de", "fu", "gi", "ho", "ju", "pe"};
const char* const kFillers[] = {"a", "the", "person", "wearing", "with", "and", "walking", "near", "carrying", "is"};

// Fixed-length syllable spelling of `index`, so distinct indices never collide.
std::string synthetic_word(std::size_t index, std::size_t syllables) {
  std::string w;
  for (std::size_t i = 0; i < syllables; ++i) {
    w += kSyllables[index % 16];
    index /= 16;
  }
  return w;
}

std::string image_name(std::size_t id, std::size_t k) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "images/id%04zu_img%02zu.rtf", id, k);
  return buf;
}

}  // namespace

DatasetManifest generate_synthetic(const SynthSpec& spec, const fs::path& out_dir) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw DataError("cannot create " + (out_dir / "images").string() + ": " + ec.message());

  const std::size_t total_words = spec.num_ids * spec.vocab_words_per_id;
  std::size_t syllables = 2;
  while (std::pow(16.0, static_cast<double>(syllables)) < static_cast<double>(total_words)) ++syllables;

  const std::size_t grid = std::min<std::size_t>(4, spec.image_size);
  const std::size_t holdout = spec.images_per_id > 1 ? spec.holdout_images_per_id : 0;
  const Rng root(spec.seed);

  DatasetManifest manifest;
  manifest.root = out_dir;
  for (std::size_t id = 0; id < spec.num_ids; ++id) {
    Rng id_rng = root.fork(id);
    // Identity pattern: a grid×grid layout of random colored blocks.
    std::vector<double> colors(grid * grid * spec.channels);
    for (auto& c : colors) c = id_rng.uniform(0.1, 0.9);
    std::vector<std::string> words;
    for (std::size_t w = 0; w < spec.vocab_words_per_id; ++w)
      words.push_back(synthetic_word(id * spec.vocab_words_per_id + w, syllables));

    for (std::size_t k = 0; k < spec.images_per_id; ++k) {
      Rng img_rng = root.fork((static_cast<std::uint64_t>(id) << 32) | (k + 1));
      const std::size_t S = spec.image_size, C = spec.channels;
      std::vector<float> px(S * S * C);
      for (std::size_t y = 0; y < S; ++y)
        for (std::size_t x = 0; x < S; ++x) {
          const std::size_t by = y * grid / S, bx = x * grid / S;
          for (std::size_t c = 0; c < C; ++c) {
            double v = colors[(by * grid + bx) * C + c];
            if (spec.noise_std > 0.0) v += spec.noise_std * img_rng.normal();
            px[(y * S + x) * C + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
          }
        }
      const std::string rel = image_name(id, k);
      rtf::save(out_dir / rel, Tensor<float>(Shape{S, S, C}, std::move(px)));
      const std::string split = k >= spec.images_per_id - holdout ? "test" : "train";

      for (std::size_t c = 0; c < spec.captions_per_image; ++c) {
        std::vector<std::string> tokens = words;
        const std::size_t fillers = 2 + img_rng.uniform_index(3);
        for (std::size_t f = 0; f < fillers; ++f) tokens.emplace_back(kFillers[img_rng.uniform_index(std::size(kFillers))]);
        img_rng.shuffle(std::span<std::string>(tokens));
        std::string caption;
        for (const auto& t : tokens) caption += (caption.empty() ? "" : " ") + t;
        manifest.entries.push_back({rel, caption, static_cast<int>(id), split});
      }
    }
  }
  manifest.write(out_dir / "manifest.jsonl");
  return manifest;
}

// -------------------------------------------------------------- identity map

IdentityMap IdentityMap::from_labels(std::vector<int> originals) {
  std::sort(originals.begin(), originals.end());
  originals.erase(std::unique(originals.begin(), originals.end()), originals.end());
  IdentityMap m;
  m.originals_ = std::move(originals);
  for (std::size_t i = 0; i < m.originals_.size(); ++i) m.index_[m.originals_[i]] = static_cast<int>(i);
  return m;
}

IdentityMap IdentityMap::load(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open identity map " + path.string());
  IdentityMap m;
  int v = 0;
  while (is >> v) {
    if (m.index_.count(v)) throw DataError(path.string() + ": duplicate identity " + std::to_string(v));
    m.index_[v] = static_cast<int>(m.originals_.size());
    m.originals_.push_back(v);
  }
  if (!is.eof()) throw DataError(path.string() + ": malformed identity map");
  return m;
}

void IdentityMap::save(const fs::path& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write identity map " + path.string());
  for (int v : originals_) os << v << '\n';
}

int IdentityMap::index_of(int original) const {
  auto it = index_.find(original);
  if (it == index_.end()) throw DataError("identity " + std::to_string(original) + " is not in the identity map");
  return it->second;
}

// ------------------------------------------------------------------- loading

std::vector<std::size_t> Dataset::images_in(const std::string& split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < images.size(); ++i)
    if (images[i].split == split) out.push_back(i);
  return out;
}

std::vector<std::size_t> Dataset::captions_in(const std::string& split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < captions.size(); ++i)
    if (captions[i].split == split) out.push_back(i);
  return out;
}

Dataset load_dataset(const fs::path& manifest_path, std::size_t max_len, const LoadOptions& opts) {
  const auto manifest = DatasetManifest::read(manifest_path);
  if (manifest.entries.empty()) throw DataError(manifest_path.string() + ": manifest has no entries");
  auto entry_name = [&](std::size_t i) {
    return manifest_path.string() + ":" + std::to_string(i + 1) + " (" + manifest.entries[i].image + ")";
  };

  Dataset ds;
  if (opts.identities) {
    ds.identities = *opts.identities;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
      if (!ds.identities.contains(manifest.entries[i].identity))
        throw DataError(entry_name(i) + ": identity " + std::to_string(manifest.entries[i].identity) +
                        " has no slot in the persisted identity map");
  } else {
    std::vector<int> labels;
    for (const auto& e : manifest.entries) labels.push_back(e.identity);
    ds.identities = IdentityMap::from_labels(std::move(labels));
  }

  if (opts.vocab) {
    ds.vocab = *opts.vocab;
  } else {
    std::vector<std::string> corpus;
    for (const auto& e : manifest.entries)
      if (e.split == "train") corpus.push_back(e.caption);
    ds.vocab = Vocabulary::build(corpus);
  }

  std::unordered_map<std::string, std::size_t> image_index;
  std::map<std::string, std::pair<std::size_t, std::size_t>> oov_counts;  // split -> (oov, words)
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    const int label = ds.identities.index_of(e.identity);
    auto it = image_index.find(e.image);
    if (it == image_index.end()) {
      const fs::path file = manifest.root / e.image;
      if (!fs::exists(file)) throw DataError(entry_name(i) + ": missing image file " + file.string());
      ImageRecord rec;
      rec.path = e.image;
      rec.split = e.split;
      try {
        rec.sample.pixels = rtf::load(file);
      } catch (const DataError& err) {
        throw DataError(entry_name(i) + ": " + err.what());
      }
      rec.sample.identity = label;
      const auto g = rec.sample.geometry();
      if (ds.images.empty())
        ds.geometry = g;
      else if (!(g == ds.geometry))
        throw DataError(entry_name(i) + ": image shape " + shape_str(rec.sample.pixels.shape()) +
                        " differs from the rest of the dataset");
      it = image_index.emplace(e.image, ds.images.size()).first;
      ds.images.push_back(std::move(rec));
    } else {
      const auto& rec = ds.images[it->second];
      if (rec.sample.identity != label) throw DataError(entry_name(i) + ": image listed with two identities");
      if (rec.split != e.split) throw DataError(entry_name(i) + ": image listed in two splits");
    }

    CaptionRecord cap;
    cap.text = e.caption;
    cap.split = e.split;
    cap.image = it->second;
    cap.entry = i;
    cap.sample = tokenize(e.caption, ds.vocab, max_len, label);
    auto& counts = oov_counts[e.split];
    for (const auto& w : split_words(e.caption)) {
      counts.second += 1;
      counts.first += ds.vocab.id(w) == Vocabulary::kOov;
    }
    ds.images[it->second].captions.push_back(ds.captions.size());
    ds.captions.push_back(std::move(cap));
  }
  for (const auto& [split, c] : oov_counts)
    ds.oov_rate[split] = c.second ? static_cast<double>(c.first) / static_cast<double>(c.second) : 0.0;
  return ds;
}

// ------------------------------------------------------------------- batches

BatchIterator::BatchIterator(const Dataset& data, const std::string& split, std::size_t batch_size,
                             std::uint64_t seed, bool training)
    : data_(&data), images_(data.images_in(split)), batch_size_(batch_size), seed_(seed), training_(training) {
  if (batch_size_ == 0) throw ConfigError("batch_size must be positive");
  if (images_.empty()) throw DataError("split '" + split + "' has no images");
  if (training_ && batch_size_ > images_.size())
    throw ConfigError("batch_size " + std::to_string(batch_size_) + " exceeds the " +
                      std::to_string(images_.size()) + " training pairs");
}

std::size_t BatchIterator::batches_per_epoch() const {
  return training_ ? images_.size() / batch_size_ : (images_.size() + batch_size_ - 1) / batch_size_;
}

std::vector<Batch> BatchIterator::epoch(std::size_t index) const {
  Rng rng = Rng(seed_).fork(index);
  std::vector<std::size_t> order = images_;
  if (training_) rng.shuffle(std::span<std::size_t>(order));
  std::vector<Batch> out;
  const std::size_t count = batches_per_epoch();
  for (std::size_t b = 0; b < count; ++b) {
    Batch batch;
    const std::size_t end = std::min(order.size(), (b + 1) * batch_size_);
    for (std::size_t i = b * batch_size_; i < end; ++i) {
      const auto& img = data_->images[order[i]];
      if (img.captions.empty()) throw DataError("image " + img.path + " has no caption");
      const std::size_t cap = img.captions[rng.uniform_index(img.captions.size())];
      batch.images.push_back(img.sample);
      batch.texts.push_back(data_->captions[cap].sample);
      batch.labels.push_back(img.sample.identity);
      batch.image_indices.push_back(order[i]);
      batch.caption_indices.push_back(cap);
    }
    out.push_back(std::move(batch));
  }
  return out;
}

}  // namespace tbps
