#include "tbps/retrieval.hpp"

#include <algorithm>

#include <json.hpp>

#include "tbps/ops.hpp"

namespace tbps {

ScoreMode parse_score_mode(const std::string& s) {
  if (s == "global") return ScoreMode::Global;
  if (s == "part") return ScoreMode::Part;
  if (s == "both") return ScoreMode::Both;
  throw ConfigError("unknown scoring mode '" + s + "' (expected global, part or both)");
}

std::string to_string(ScoreMode mode) {
  switch (mode) {
    case ScoreMode::Global:
      return "global";
    case ScoreMode::Part:
      return "part";
    case ScoreMode::Both:
      return "both";
  }
  return "both";
}

double pair_similarity(const SampleEmbedding& image, const SampleEmbedding& text, ScoreMode mode) {
  if (image.parts.size() != text.parts.size())
    throw ShapeError("pair_similarity: image has " + std::to_string(image.parts.size()) + " heads, text has " +
                     std::to_string(text.parts.size()));
  double s = 0.0;
  if (mode != ScoreMode::Part)
    s += ops::cosine_similarity<float>(image.global, text.global);
  if (mode != ScoreMode::Global)
    for (std::size_t k = 0; k < image.parts.size(); ++k)
      s += ops::cosine_similarity<float>(image.parts[k], text.parts[k]);
  return s;
}

Tensor<float> similarity_matrix(std::span<const SampleEmbedding> queries, std::span<const SampleEmbedding> gallery,
                                ScoreMode mode) {
  if (gallery.empty()) throw DataError("similarity_matrix: empty gallery");
  if (queries.empty()) throw DataError("similarity_matrix: no queries");
  std::vector<float> s(queries.size() * gallery.size());
  for (std::size_t i = 0; i < queries.size(); ++i)
    for (std::size_t j = 0; j < gallery.size(); ++j)
      s[i * gallery.size() + j] = static_cast<float>(pair_similarity(gallery[j], queries[i], mode));
  return Tensor<float>(Shape{queries.size(), gallery.size()}, std::move(s));
}

std::vector<std::size_t> first_match_ranks(const Tensor<float>& scores, std::span<const int> query_ids,
                                           std::span<const int> gallery_ids) {
  const std::size_t nq = scores.rows(), ng = scores.cols();
  if (query_ids.size() != nq || gallery_ids.size() != ng)
    throw ShapeError("cmc: score matrix " + shape_str(scores.shape()) + " vs " + std::to_string(query_ids.size()) +
                     " query ids and " + std::to_string(gallery_ids.size()) + " gallery ids");
  const auto S = scores.data();
  std::vector<std::size_t> ranks(nq, 0);
  for (std::size_t q = 0; q < nq; ++q) {
    const float* row = &S[q * ng];
    // The earliest-ranked match has the highest score, lowest index on ties.
    std::size_t first = ng;
    for (std::size_t j = 0; j < ng; ++j)
      if (gallery_ids[j] == query_ids[q] && (first == ng || row[j] > row[first])) first = j;
    if (first == ng) continue;
    std::size_t ahead = 0;
    for (std::size_t t = 0; t < ng; ++t)
      if (row[t] > row[first] || (row[t] == row[first] && t < first)) ++ahead;
    ranks[q] = ahead + 1;
  }
  return ranks;
}

std::vector<double> cmc_curve(const Tensor<float>& scores, std::span<const int> query_ids,
                              std::span<const int> gallery_ids, std::span<const std::size_t> ks,
                              std::size_t* num_queries, std::size_t* excluded) {
  const auto ranks = first_match_ranks(scores, query_ids, gallery_ids);
  const std::size_t ng = scores.cols();
  std::size_t valid = 0, skipped = 0;
  std::vector<std::size_t> hits(ks.size(), 0);
  for (std::size_t r : ranks) {
    if (r == 0) {
      ++skipped;
      continue;
    }
    ++valid;
    for (std::size_t i = 0; i < ks.size(); ++i)
      if (r <= std::min(ks[i], ng)) ++hits[i];
  }
  std::vector<double> acc(ks.size(), 0.0);
  if (valid > 0)
    for (std::size_t i = 0; i < ks.size(); ++i) acc[i] = static_cast<double>(hits[i]) / static_cast<double>(valid);
  if (num_queries) *num_queries = valid;
  if (excluded) *excluded = skipped;
  return acc;
}

RankMetrics cmc_ranks(const Tensor<float>& scores, std::span<const int> query_ids, std::span<const int> gallery_ids) {
  static constexpr std::size_t ks[] = {1, 5, 10};
  RankMetrics m;
  const auto acc = cmc_curve(scores, query_ids, gallery_ids, ks, &m.num_queries, &m.excluded);
  m.rank1 = acc[0];
  m.rank5 = acc[1];
  m.rank10 = acc[2];
  return m;
}

std::string metrics_json(const RankMetrics& m, ScoreMode mode) {
  nlohmann::ordered_json j;
  j["rank1"] = m.rank1;
  j["rank5"] = m.rank5;
  j["rank10"] = m.rank10;
  j["num_queries"] = m.num_queries;
  j["excluded"] = m.excluded;
  j["mode"] = to_string(mode);
  return j.dump();
}

}  // namespace tbps
