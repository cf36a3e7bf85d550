#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "sbir/rmac.hpp"
#include "sbir/tensor.hpp"

namespace sbir {

/// How a sketch degrades its photo: a fixed random projection into sketch
/// space, coordinate dropout, then additive gaussian noise.
struct DomainGap {
  std::uint64_t projection_seed = 7;
  double dropout_fraction = 0.3;
  double noise_sigma = 0.1;
};

struct SynthSpec {
  std::size_t n_categories = 25;
  std::size_t photos_per_category = 20;
  std::size_t sketches_per_photo = 5;
  std::size_t photo_dim = 64;
  std::size_t sketch_dim = 48;
  DomainGap domain_gap;
  /// Fraction of training photos duplicated with a small perturbation.
  double ambiguity_rate = 0.1;
  double sigma_dup = 0.02;
  double split_fraction = 0.9;
  std::uint64_t seed = 1;
  // Generation scales: category centers vs instance offsets. Instance
  // offsets are drawn through a fixed random one-hidden-layer ReLU map, so
  // the photo manifold is curved rather than a plain gaussian cloud.
  double center_sigma = 3.0;
  double instance_sigma = 1.0;
};

/// Matched photo/sketch collection. Photos and sketches align through
/// sketch_photo_index; duplicated (ambiguous) photos are appended after the
/// originals, always land in the train split, and get their own sketches.
struct CrossDomainDataset {
  SynthSpec spec;
  Tensor photos;    // n x photo_dim
  Tensor sketches;  // (n * sketches_per_photo) x sketch_dim
  std::vector<std::size_t> sketch_photo_index;
  std::vector<std::size_t> photo_category;
  std::vector<bool> photo_in_train;
  std::vector<std::pair<std::size_t, std::size_t>> ambiguous_pairs;

  std::size_t n_photos() const { return photo_category.size(); }
  std::size_t n_sketches() const { return sketch_photo_index.size(); }
  std::vector<std::size_t> train_sketches() const;
  std::vector<std::size_t> test_sketches() const;
  std::vector<std::size_t> train_photos() const;
  std::vector<std::size_t> test_photos() const;
};

void validate(const SynthSpec& spec);

/// Deterministic benchmark generation: category centers, per-photo offsets
/// through the instance manifold, a category-stratified train/test split of
/// the originals, ambiguity injection into the train photos, then sketches
/// for every photo.
CrossDomainDataset generate_dataset(const SynthSpec& spec);

/// Duplicates round(rate * n) of the given photos with N(0, sigma_dup^2)
/// perturbation. Returns the augmented matrix (duplicates appended) and the
/// (source, duplicate) index pairs.
std::pair<Tensor, std::vector<std::pair<std::size_t, std::size_t>>>
inject_ambiguity(const Tensor& photos, double rate, double sigma_dup,
                 std::uint64_t seed);

struct FeatureMapSpec {
  std::size_t channels = 8;
  std::vector<std::size_t> sizes{12, 16, 24};
  std::uint64_t seed = 1;
};

/// Square nonnegative volumes with half-normal entries (post-ReLU-like
/// statistics), one per requested size, all sharing the channel count.
std::vector<FeatureVolume> synth_feature_maps(const FeatureMapSpec& spec);

/// Directory dump: dataset.json (spec echo plus index arrays) and raw
/// little-endian doubles in photos.bin / sketches.bin. Reload is bit-exact.
void save_dataset(const CrossDomainDataset& ds,
                  const std::filesystem::path& dir);
CrossDomainDataset load_dataset(const std::filesystem::path& dir);

}  // namespace sbir
