#pragma once

#include <span>
#include <string>
#include <vector>

#include "tbps/tensor.hpp"

namespace tbps {

enum class ScoreMode { Global, Part, Both };

ScoreMode parse_score_mode(const std::string& s);
std::string to_string(ScoreMode mode);

// Inference-time representation of one image or one caption.
struct SampleEmbedding {
  std::vector<float> global;              // d
  std::vector<std::vector<float>> parts;  // K×d
  int identity = 0;
};

struct RankMetrics {
  double rank1 = 0.0;
  double rank5 = 0.0;
  double rank10 = 0.0;
  std::size_t num_queries = 0;
  std::size_t excluded = 0;  // queries whose identity has no gallery item
};

// cos(e_g, t_g) + Σ_k cos(ẽ_k, t̃_k); the global and part modes keep one side.
double pair_similarity(const SampleEmbedding& image, const SampleEmbedding& text, ScoreMode mode);

// S[i][j] = pair_similarity(gallery[j], queries[i]).
Tensor<float> similarity_matrix(std::span<const SampleEmbedding> queries, std::span<const SampleEmbedding> gallery,
                                ScoreMode mode);

// Rank (1-based) of the first same-identity gallery item for each query,
// ordering by descending score with ties broken by ascending gallery index.
// 0 marks a query with no same-identity item.
std::vector<std::size_t> first_match_ranks(const Tensor<float>& scores, std::span<const int> query_ids,
                                           std::span<const int> gallery_ids);

// CMC accuracy at each k (k larger than the gallery is clipped to its size).
std::vector<double> cmc_curve(const Tensor<float>& scores, std::span<const int> query_ids,
                              std::span<const int> gallery_ids, std::span<const std::size_t> ks,
                              std::size_t* num_queries = nullptr, std::size_t* excluded = nullptr);

RankMetrics cmc_ranks(const Tensor<float>& scores, std::span<const int> query_ids, std::span<const int> gallery_ids);

// Single-line JSON in the fixed key order rank1, rank5, rank10, num_queries,
// excluded, mode.
std::string metrics_json(const RankMetrics& m, ScoreMode mode);

}  // namespace tbps
