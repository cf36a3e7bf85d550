#pragma once

// Brute-force reference implementations used as test oracles. These stay
// deliberately naive (scalar loops, explicit enumeration) and independent of
// the library's vectorized paths.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "sbir/losses.hpp"
#include "sbir/rng.hpp"
#include "sbir/tensor.hpp"

namespace oracle {

inline sbir::Tensor random_matrix(std::size_t n, std::size_t d, sbir::Rng& rng,
                                  double sigma = 1.0) {
  std::vector<double> v(n * d);
  for (double& x : v) x = rng.normal(0.0, sigma);
  return sbir::Tensor({n, d}, std::move(v));
}

inline double guarded_distance(const double* a, const double* b,
                               std::size_t d) {
  double sq = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    double diff = a[k] - b[k];
    sq += diff * diff;
  }
  return sq > 0.0 ? std::sqrt(sq + sbir::kDistanceEps) : 0.0;
}

inline double squared_distance(const double* a, const double* b,
                               std::size_t d) {
  double sq = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    double diff = a[k] - b[k];
    sq += diff * diff;
  }
  return sq;
}

inline double pair_distance(const sbir::Tensor& a, std::size_t i,
                            const sbir::Tensor& b, std::size_t j,
                            sbir::DistanceKind kind) {
  const double* ra = a.values().data() + i * a.cols();
  const double* rb = b.values().data() + j * b.cols();
  return kind == sbir::DistanceKind::kEuclidean
             ? guarded_distance(ra, rb, a.cols())
             : squared_distance(ra, rb, a.cols());
}

/// Per-pair scalar-loop distance matrix.
inline std::vector<double> pairwise_matrix(const sbir::Tensor& a,
                                           const sbir::Tensor& b,
                                           sbir::DistanceKind kind) {
  std::vector<double> out(a.rows() * b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      out[i * b.rows() + j] = pair_distance(a, i, b, j, kind);
    }
  }
  return out;
}

/// Classic triplet loss by explicit (anchor, positive, negative) enumeration.
inline double triplet_sum(const sbir::Tensor& photos,
                          const sbir::Tensor& sketches, double margin,
                          sbir::DistanceKind kind) {
  std::size_t bs = photos.rows();
  double total = 0.0;
  for (std::size_t a = 0; a < bs; ++a) {
    double d_ap = pair_distance(photos, a, sketches, a, kind);
    for (std::size_t n = 0; n < bs; ++n) {
      if (n == a) continue;
      double d_an = pair_distance(photos, a, sketches, n, kind);
      total += std::max(0.0, d_ap - d_an + margin);
    }
  }
  return total;
}

/// Anchor-similarity weights by scalar loops.
inline std::vector<double> weighting_matrix(const sbir::Tensor& photos,
                                            sbir::DistanceKind kind,
                                            double guard_eps) {
  std::vector<double> m = pairwise_matrix(photos, photos, kind);
  double mx = m[0];
  for (double v : m) mx = std::max(mx, v);
  double denom = std::max(mx, guard_eps);
  for (double& v : m) v /= denom;
  return m;
}

/// Weighted triplet loss by scalar loops.
inline double rtl_sum(const sbir::Tensor& photos, const sbir::Tensor& sketches,
                      double margin, sbir::DistanceKind kind,
                      double guard_eps) {
  std::size_t bs = photos.rows();
  std::vector<double> w = weighting_matrix(photos, kind, guard_eps);
  double total = 0.0;
  for (std::size_t a = 0; a < bs; ++a) {
    double d_ap = pair_distance(photos, a, sketches, a, kind);
    for (std::size_t n = 0; n < bs; ++n) {
      if (n == a) continue;
      double d_an = pair_distance(photos, a, sketches, n, kind);
      total += std::max(0.0, d_ap - d_an + margin) * w[a * bs + n];
    }
  }
  return total;
}

struct RankedHit {
  std::int64_t id;
  double distance;
};

/// Exhaustive nearest-neighbor ranking with (distance, id) ordering.
inline std::vector<RankedHit> knn_full_sort(
    const sbir::Tensor& gallery, const std::vector<std::int64_t>& ids,
    const double* query) {
  std::size_t n = gallery.rows(), d = gallery.cols();
  std::vector<RankedHit> hits(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = gallery.values().data() + i * d;
    double sq = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      double diff = query[k] - row[k];
      sq += diff * diff;
    }
    hits[i] = {ids[i], std::sqrt(sq)};
  }
  std::sort(hits.begin(), hits.end(), [](const RankedHit& a, const RankedHit& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.id < b.id;
  });
  return hits;
}

struct RankedPair {
  std::size_t i, j;
  double distance;
};

/// Exhaustive pair ranking over all n*(n-1)/2 descriptor pairs.
inline std::vector<RankedPair> pair_full_sort(const sbir::Tensor& descriptors) {
  std::size_t n = descriptors.rows(), d = descriptors.cols();
  std::vector<RankedPair> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double* a = descriptors.values().data() + i * d;
      const double* b = descriptors.values().data() + j * d;
      double sq = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        double diff = a[k] - b[k];
        sq += diff * diff;
      }
      pairs.push_back({i, j, std::sqrt(sq)});
    }
  }
  std::sort(pairs.begin(), pairs.end(),
            [](const RankedPair& a, const RankedPair& b) {
              if (a.distance != b.distance) return a.distance < b.distance;
              if (a.i != b.i) return a.i < b.i;
              return a.j < b.j;
            });
  return pairs;
}

/// Brute-force sliding-window enumeration for one scale, mirroring the
/// stated rounding rule with an independent loop structure.
inline std::vector<std::array<std::size_t, 3>> windows_for_scale(
    std::size_t width, std::size_t height, std::size_t l,
    double stride_fraction) {
  double side_real =
      2.0 * static_cast<double>(std::min(width, height)) / (double(l) + 1.0);
  long long side_ll = std::llround(side_real);
  std::size_t side = static_cast<std::size_t>(std::clamp<long long>(
      side_ll, 1, static_cast<long long>(std::min(width, height))));
  std::size_t stride = static_cast<std::size_t>(
      std::max<long long>(1, std::llround(stride_fraction * side_real)));
  auto starts = [&](std::size_t extent) {
    std::vector<std::size_t> xs;
    for (std::size_t x = 0; x + side < extent; x += stride) xs.push_back(x);
    if (xs.empty() || xs.back() != extent - side) xs.push_back(extent - side);
    // Walk again to drop starts past the snapped edge.
    std::vector<std::size_t> keep;
    for (std::size_t x : xs) {
      if (x + side <= extent) keep.push_back(x);
    }
    return keep;
  };
  std::vector<std::array<std::size_t, 3>> out;
  for (std::size_t y : starts(height)) {
    for (std::size_t x : starts(width)) {
      out.push_back({x, y, side});
    }
  }
  return out;
}

}  // namespace oracle
