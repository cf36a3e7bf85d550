#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sbir/tensor.hpp"

namespace sbir {

/// Immutable photo gallery: one embedding row per photo, ids unique.
struct GalleryIndex {
  Tensor embeddings;  // n x d
  std::vector<std::int64_t> photo_ids;
};

GalleryIndex make_gallery(Tensor embeddings, std::vector<std::int64_t> ids);

enum class QueryMetric { kEuclidean, kCosine };

struct Hit {
  std::int64_t photo_id = 0;
  double distance = 0.0;
};

/// The k nearest gallery rows by ascending distance, ties broken by photo id.
/// Euclidean on raw embeddings matches the training-time distance; cosine is
/// available for ablation.
std::vector<Hit> retrieve_topk(const GalleryIndex& index, const Tensor& query,
                               std::size_t k,
                               QueryMetric metric = QueryMetric::kEuclidean);

/// Fraction of queries whose target id appears in their top-k result.
/// queries is m x d; targets lists the ground-truth id per query and every
/// target must exist in the index.
double recall_at_k(const GalleryIndex& index, const Tensor& queries,
                   const std::vector<std::int64_t>& targets, std::size_t k,
                   QueryMetric metric = QueryMetric::kEuclidean);

/// One-record JSON metrics file: {run_id, k, recall, n_gallery, n_queries,
/// seed}.
void write_recall_json(const std::filesystem::path& path,
                       const std::string& run_id, std::size_t k, double recall,
                       std::size_t n_gallery, std::size_t n_queries,
                       std::uint64_t seed);

}  // namespace sbir
