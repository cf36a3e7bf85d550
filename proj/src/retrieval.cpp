#include "sbir/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace sbir {

GalleryIndex make_gallery(Tensor embeddings, std::vector<std::int64_t> ids) {
  if (embeddings.rank() != 2 || embeddings.rows() == 0) {
    throw std::invalid_argument("gallery: need a non-empty n x d matrix");
  }
  if (ids.size() != embeddings.rows()) {
    throw std::invalid_argument("gallery: id count does not match rows");
  }
  std::unordered_set<std::int64_t> seen;
  for (std::int64_t id : ids) {
    if (!seen.insert(id).second) {
      throw std::invalid_argument("gallery: duplicate photo id " +
                                  std::to_string(id));
    }
  }
  return GalleryIndex{std::move(embeddings), std::move(ids)};
}

namespace {

double query_distance(const double* a, const double* b, std::size_t d,
                      QueryMetric metric) {
  if (metric == QueryMetric::kEuclidean) {
    double sq = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      double diff = a[k] - b[k];
      sq += diff * diff;
    }
    return std::sqrt(sq);
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  double denom = std::sqrt(na) * std::sqrt(nb);
  if (denom == 0.0) return 1.0;  // undefined direction: treat as orthogonal
  return 1.0 - dot / denom;
}

std::vector<Hit> topk_for(const GalleryIndex& index, const double* q,
                          std::size_t k, QueryMetric metric) {
  std::size_t n = index.embeddings.rows();
  std::size_t d = index.embeddings.cols();
  std::vector<Hit> all(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = index.embeddings.values().data() + i * d;
    all[i] = {index.photo_ids[i], query_distance(q, row, d, metric)};
  }
  std::sort(all.begin(), all.end(), [](const Hit& a, const Hit& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.photo_id < b.photo_id;
  });
  all.resize(k);
  return all;
}

}  // namespace

std::vector<Hit> retrieve_topk(const GalleryIndex& index, const Tensor& query,
                               std::size_t k, QueryMetric metric) {
  std::size_t n = index.embeddings.rows();
  std::size_t d = index.embeddings.cols();
  if (k < 1 || k > n) {
    throw std::invalid_argument("retrieve_topk: k=" + std::to_string(k) +
                                " out of range [1," + std::to_string(n) + "]");
  }
  if (query.size() != d) {
    throw std::invalid_argument("retrieve_topk: query dim " +
                                std::to_string(query.size()) +
                                " does not match gallery dim " +
                                std::to_string(d));
  }
  return topk_for(index, query.values().data(), k, metric);
}

double recall_at_k(const GalleryIndex& index, const Tensor& queries,
                   const std::vector<std::int64_t>& targets, std::size_t k,
                   QueryMetric metric) {
  std::size_t n = index.embeddings.rows();
  std::size_t d = index.embeddings.cols();
  if (queries.rank() != 2 || queries.cols() != d) {
    throw std::invalid_argument("recall_at_k: queries must be m x " +
                                std::to_string(d));
  }
  if (targets.size() != queries.rows()) {
    throw std::invalid_argument("recall_at_k: one target id per query required");
  }
  if (k < 1 || k > n) {
    throw std::invalid_argument("recall_at_k: k out of range");
  }
  std::unordered_set<std::int64_t> known(index.photo_ids.begin(),
                                         index.photo_ids.end());
  for (std::int64_t t : targets) {
    if (!known.count(t)) {
      throw std::invalid_argument("recall_at_k: unknown target id " +
                                  std::to_string(t));
    }
  }
  std::size_t m = queries.rows();
  if (m == 0) throw std::invalid_argument("recall_at_k: empty query set");
  std::size_t hits = 0;
  for (std::size_t q = 0; q < m; ++q) {
    const double* qv = queries.values().data() + q * d;
    for (const Hit& h : topk_for(index, qv, k, metric)) {
      if (h.photo_id == targets[q]) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(m);
}

void write_recall_json(const std::filesystem::path& path,
                       const std::string& run_id, std::size_t k, double recall,
                       std::size_t n_gallery, std::size_t n_queries,
                       std::uint64_t seed) {
  nlohmann::json record{
      {"run_id", run_id},   {"k", k},
      {"recall", recall},   {"n_gallery", n_gallery},
      {"n_queries", n_queries}, {"seed", seed},
  };
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << record.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace sbir
