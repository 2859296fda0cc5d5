#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tbps/encoders.hpp"

namespace tbps {

struct ManifestEntry {
  std::string image;  // RTF1 path relative to the manifest directory
  std::string caption;
  int identity = 0;
  std::string split = "train";
};

// JSON Lines: {"image":"rel/path.rtf","caption":"…","identity":7,"split":"train"}
struct DatasetManifest {
  std::filesystem::path root;  // directory holding the manifest
  std::vector<ManifestEntry> entries;

  static DatasetManifest read(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;
};

struct SynthSpec {
  std::size_t num_ids = 20;
  std::size_t images_per_id = 5;
  std::size_t captions_per_image = 2;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t vocab_words_per_id = 4;
  double noise_std = 0.05;
  std::uint64_t seed = 0;
  // Trailing images of every identity (with their captions) go to "test".
  std::size_t holdout_images_per_id = 1;

  void validate() const;
};

// Writes images/<...>.rtf and manifest.jsonl under out_dir.
DatasetManifest generate_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir);

// Original identity label <-> contiguous 0..n-1 index. On disk: line i holds
// the original label of index i.
class IdentityMap {
 public:
  static IdentityMap from_labels(std::vector<int> originals);
  static IdentityMap load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  // Throws DataError when the label is unknown.
  int index_of(int original) const;
  bool contains(int original) const { return index_.count(original) != 0; }
  int original(int index) const { return originals_.at(static_cast<std::size_t>(index)); }
  std::size_t size() const { return originals_.size(); }

 private:
  std::vector<int> originals_;
  std::map<int, int> index_;
};

struct ImageRecord {
  std::string path;
  std::string split;
  ImageSample sample;                 // identity already remapped
  std::vector<std::size_t> captions;  // indices into Dataset::captions
};

struct CaptionRecord {
  std::string text;
  std::string split;
  std::size_t image = 0;  // index into Dataset::images
  std::size_t entry = 0;  // manifest line
  TextSample sample;
};

struct Dataset {
  std::vector<ImageRecord> images;
  std::vector<CaptionRecord> captions;
  Vocabulary vocab;
  IdentityMap identities;
  ImageGeometry geometry;
  std::map<std::string, double> oov_rate;  // per split, fraction of words mapped to OOV

  std::vector<std::size_t> images_in(const std::string& split) const;
  std::vector<std::size_t> captions_in(const std::string& split) const;
};

struct LoadOptions {
  const Vocabulary* vocab = nullptr;          // default: built from the train split
  const IdentityMap* identities = nullptr;    // default: remap every identity present
};

Dataset load_dataset(const std::filesystem::path& manifest_path, std::size_t max_len, const LoadOptions& opts = {});

struct Batch {
  std::vector<ImageSample> images;
  std::vector<TextSample> texts;
  std::vector<int> labels;
  std::vector<std::size_t> image_indices;
  std::vector<std::size_t> caption_indices;

  std::size_t size() const { return labels.size(); }
};

// Image-caption pairs of one split. Each epoch shuffles the images with a
// stream derived from (seed, epoch) and pairs every image with one of its own
// captions chosen uniformly. Training drops the final partial batch.
class BatchIterator {
 public:
  BatchIterator(const Dataset& data, const std::string& split, std::size_t batch_size, std::uint64_t seed,
                bool training);

  std::size_t batches_per_epoch() const;
  std::vector<Batch> epoch(std::size_t index) const;

 private:
  const Dataset* data_;
  std::vector<std::size_t> images_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  bool training_;
};

}  // namespace tbps
