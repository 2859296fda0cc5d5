#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "tbps/data.hpp"
#include "tbps/model.hpp"

namespace tbps {

// Every run hyperparameter as a flat key. Files use "key = value" lines with
// '#' comments; unknown keys are rejected. Defaults are sized for a desktop
// CPU; the comments give the full-scale values used on the real benchmark.
struct RunConfig {
  // encoders
  std::size_t d = 32;  // full scale 768
  std::size_t layers = 2;
  std::size_t attn_heads = 4;
  double mlp_ratio = 2.0;
  std::size_t patch_size = 8;
  std::size_t max_len = 16;  // full scale 100
  double dropout = 0.0;
  double init_std = 0.02;
  // aggregation + objective
  std::size_t K = 4;  // full scale 10
  double lambda = 0.2;
  double eps = 1e-8;
  // optimisation
  double lr = 1e-3;
  std::size_t batch_size = 16;  // full scale 64
  std::size_t epochs = 200;     // full scale 50
  std::uint64_t seed = 0;
  // evaluation
  std::string mode = "both";
  // paths
  std::string data;
  std::string out;
  std::string checkpoint;
  // synthetic data
  std::size_t num_ids = 20;
  std::size_t images_per_id = 5;
  std::size_t captions_per_image = 2;
  std::size_t image_size = 32;
  std::size_t vocab_words_per_id = 4;
  double noise_std = 0.05;

  struct KeyInfo {
    std::string name;
    std::string doc;
  };
  static const std::vector<KeyInfo>& keys();

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;

  // Applies "key = value" lines on top of the current values.
  void merge(std::istream& is, const std::string& source);
  void merge_file(const std::filesystem::path& path);
  std::string serialize() const;

  void validate() const;

  ModelConfig model_config(std::size_t vocab_size, const ImageGeometry& geometry, std::size_t num_identities) const;
  SynthSpec synth_spec() const;
  AdamConfig adam() const;
};

}  // namespace tbps
