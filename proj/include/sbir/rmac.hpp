#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sbir/tensor.hpp"

namespace sbir {

/// One C x W x H activation volume for a single photo at one input scale.
struct FeatureVolume {
  std::size_t channels = 0;
  std::size_t width = 0;
  std::size_t height = 0;
  Tensor data;  // shape {C, W, H}, row-major
  std::string source_id;
  std::string resolution_tag;
};

FeatureVolume make_feature_volume(std::size_t channels, std::size_t width,
                                  std::size_t height,
                                  std::vector<double> values,
                                  std::string source_id = {},
                                  std::string resolution_tag = {});

/// Square pooling region: top-left corner plus side length, in map cells.
struct Region {
  std::size_t x0 = 0;
  std::size_t y0 = 0;
  std::size_t side = 1;

  bool operator==(const Region&) const = default;
  auto operator<=>(const Region&) const = default;
};

struct RegionGrid {
  std::vector<Region> regions;
  std::size_t scales_used = 0;
};

enum class RegionPooling { kMax, kAlphaSum };

struct RmacConfig {
  std::size_t scales = 3;          // L
  double stride_fraction = 0.6;
  RegionPooling pooling = RegionPooling::kMax;
  double alpha = 10.0;             // exponent of the alpha-sum variant
  std::vector<std::string> resolutions;  // input-scale tags, informational
};

/// Per-channel max over all spatial positions.
std::vector<double> mac(const FeatureVolume& fv);

/// Multi-scale sliding-window grid of square regions. At scale l = 1..L the
/// kernel width is 2*min(W,H)/(l+1), rounded to the nearest cell (half away
/// from zero) and clamped to [1, min(W,H)]; the stride is stride_fraction of
/// the unrounded width, likewise rounded, at least 1. Windows start at 0 and
/// step by the stride; when the last step would overshoot, a final window is
/// snapped to the far edge. Duplicate regions are dropped.
RegionGrid region_grid(std::size_t width, std::size_t height,
                       const RmacConfig& cfg);

/// Regional descriptor: pool each grid region channelwise, l2-normalize the
/// region vectors, sum them and l2-normalize the sum. An all-zero volume
/// yields the zero vector.
std::vector<double> rmac_descriptor(const FeatureVolume& fv,
                                    const RmacConfig& cfg);

/// Aggregates the per-resolution descriptors of one photo: sum then
/// l2-normalize. All volumes must share the channel count.
std::vector<double> multires_rmac(const std::vector<FeatureVolume>& volumes,
                                  const RmacConfig& cfg);

struct DescriptorPair {
  std::size_t i = 0;
  std::size_t j = 0;
  double distance = 0.0;
};

/// All unordered descriptor pairs ranked by ascending euclidean distance
/// (ties by (i, j) order); the first min(top_k, n*(n-1)/2) are returned.
/// descriptors is an n x d matrix, n >= 2, top_k >= 1.
std::vector<DescriptorPair> find_ambiguous_pairs(const Tensor& descriptors,
                                                 std::size_t top_k);

/// Binary n x d descriptor dump: 8-byte magic, u32 version, u64 n, u64 d,
/// then row-major doubles.
void save_descriptors(const Tensor& descriptors,
                      const std::filesystem::path& path);
Tensor load_descriptors(const std::filesystem::path& path);

/// CSV pair report with header rank,i,j,distance.
void write_pair_report(const std::vector<DescriptorPair>& pairs,
                       const std::filesystem::path& path);

}  // namespace sbir
