#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "oracles.hpp"
#include "sbir/rng.hpp"
#include "sbir/synth.hpp"

using namespace sbir;

namespace {

SynthSpec tiny_spec() {
  SynthSpec spec;
  spec.n_categories = 10;
  spec.photos_per_category = 10;
  spec.sketches_per_photo = 5;
  spec.photo_dim = 16;
  spec.sketch_dim = 12;
  spec.ambiguity_rate = 0.0;
  spec.seed = 4;
  return spec;
}

}  // namespace

TEST_CASE("generation is deterministic in the spec") {
  SynthSpec spec = tiny_spec();
  CrossDomainDataset a = generate_dataset(spec);
  CrossDomainDataset b = generate_dataset(spec);
  CHECK(a.photos.values() == b.photos.values());
  CHECK(a.sketches.values() == b.sketches.values());
  CHECK(a.photo_in_train == b.photo_in_train);
  CHECK(a.ambiguous_pairs == b.ambiguous_pairs);

  spec.seed = 5;
  CrossDomainDataset c = generate_dataset(spec);
  CHECK(a.photos.values() != c.photos.values());
}

TEST_CASE("counts and stratified split for 10x10x5") {
  CrossDomainDataset ds = generate_dataset(tiny_spec());
  CHECK(ds.n_photos() == 100);
  CHECK(ds.n_sketches() == 500);
  CHECK(ds.ambiguous_pairs.empty());

  // 90/10 split within every category.
  for (std::size_t c = 0; c < 10; ++c) {
    std::size_t train = 0, test = 0;
    for (std::size_t p = 0; p < ds.n_photos(); ++p) {
      if (ds.photo_category[p] != c) continue;
      (ds.photo_in_train[p] ? train : test) += 1;
    }
    CHECK(train == 9);
    CHECK(test == 1);
  }

  // Sketches point at valid photos and inherit the split.
  for (std::size_t s = 0; s < ds.n_sketches(); ++s) {
    CHECK(ds.sketch_photo_index[s] < ds.n_photos());
  }
  CHECK(ds.train_sketches().size() == 450);
  CHECK(ds.test_sketches().size() == 50);
}

TEST_CASE("ambiguity injection") {
  Rng rng(401);
  Tensor photos = oracle::random_matrix(100, 8, rng);

  SUBCASE("rate zero leaves the set unchanged") {
    auto [augmented, pairs] = inject_ambiguity(photos, 0.0, 0.1, 9);
    CHECK(augmented.rows() == 100);
    CHECK(pairs.empty());
  }

  SUBCASE("sigma zero duplicates exactly") {
    auto [augmented, pairs] = inject_ambiguity(photos, 0.05, 0.0, 9);
    REQUIRE(pairs.size() == 5);
    for (const auto& [src, dup] : pairs) {
      for (std::size_t j = 0; j < 8; ++j) {
        CHECK(augmented.at(dup, j) == augmented.at(src, j));
      }
    }
  }

  SUBCASE("rate 0.1 on n=100 gives 10 nearby pairs") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      double sigma = 0.01;
      auto [augmented, pairs] = inject_ambiguity(photos, 0.1, sigma, seed);
      REQUIRE(pairs.size() == 10);
      CHECK(augmented.rows() == 110);
      std::set<std::size_t> sources;
      for (const auto& [src, dup] : pairs) {
        sources.insert(src);
        double d = oracle::guarded_distance(
            augmented.values().data() + src * 8,
            augmented.values().data() + dup * 8, 8);
        CHECK(d <= 3.0 * sigma * std::sqrt(8.0));
      }
      CHECK(sources.size() == 10);  // no source duplicated twice
    }
  }

  SUBCASE("invalid rate is rejected") {
    CHECK_THROWS_AS(inject_ambiguity(photos, 1.0, 0.1, 9),
                    std::invalid_argument);
  }
}

TEST_CASE("dataset-level ambiguity lands in the train split only") {
  SynthSpec spec = tiny_spec();
  spec.ambiguity_rate = 0.1;
  CrossDomainDataset ds = generate_dataset(spec);
  // 90 train originals -> 9 duplicate pairs appended.
  CHECK(ds.n_photos() == 109);
  CHECK(ds.ambiguous_pairs.size() == 9);
  for (const auto& [src, dup] : ds.ambiguous_pairs) {
    CHECK(ds.photo_in_train[src]);
    CHECK(ds.photo_in_train[dup]);
    CHECK(ds.photo_category[src] == ds.photo_category[dup]);
    double d = oracle::guarded_distance(
        ds.photos.values().data() + src * spec.photo_dim,
        ds.photos.values().data() + dup * spec.photo_dim, spec.photo_dim);
    CHECK(d < 1.0);  // perturbation-scale, far below instance spacing
  }
  // Duplicates bring their own sketches.
  CHECK(ds.n_sketches() == 109 * 5);
}

TEST_CASE("matched projections sit closer than mismatched ones") {
  // Learnability probe: project each photo into sketch space and compare
  // against its own sketches vs other photos' sketches.
  SynthSpec spec = tiny_spec();
  CrossDomainDataset ds = generate_dataset(spec);

  Rng proj_rng(spec.domain_gap.projection_seed);
  std::size_t d = spec.photo_dim, sd = spec.sketch_dim;
  std::vector<double> projection(sd * d);
  double pscale = 1.0 / std::sqrt(static_cast<double>(d));
  for (double& v : projection) v = proj_rng.normal(0.0, pscale);

  auto project = [&](std::size_t photo) {
    std::vector<double> out(sd, 0.0);
    for (std::size_t j = 0; j < sd; ++j) {
      for (std::size_t i = 0; i < d; ++i) {
        out[j] += projection[j * d + i] * ds.photos.values()[photo * d + i];
      }
    }
    return out;
  };

  Rng pick(402);
  double matched = 0.0, mismatched = 0.0;
  std::size_t count = 0;
  for (std::size_t s = 0; s < ds.n_sketches(); s += 7) {
    std::size_t p = ds.sketch_photo_index[s];
    std::size_t other = pick.index(ds.n_photos());
    if (other == p) continue;
    std::vector<double> own = project(p);
    std::vector<double> alt = project(other);
    matched += oracle::guarded_distance(own.data(),
                                        ds.sketches.values().data() + s * sd,
                                        sd);
    mismatched += oracle::guarded_distance(
        alt.data(), ds.sketches.values().data() + s * sd, sd);
    ++count;
  }
  CHECK(count > 0);
  CHECK(matched / double(count) < mismatched / double(count));
}

TEST_CASE("synthetic feature maps") {
  FeatureMapSpec spec;
  spec.channels = 8;
  spec.sizes = {12, 16, 24};
  spec.seed = 5;

  std::vector<FeatureVolume> a = synth_feature_maps(spec);
  std::vector<FeatureVolume> b = synth_feature_maps(spec);
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a[i].channels == 8);
    CHECK(a[i].width == spec.sizes[i]);
    CHECK(a[i].height == spec.sizes[i]);
    CHECK(a[i].data.values() == b[i].data.values());
    for (double v : a[i].data.values()) CHECK(v >= 0.0);
  }
}

TEST_CASE("dataset dump round-trips bit-exactly") {
  SynthSpec spec = tiny_spec();
  spec.ambiguity_rate = 0.1;
  CrossDomainDataset ds = generate_dataset(spec);
  auto dir = std::filesystem::temp_directory_path() / "sbir_ds_roundtrip";
  save_dataset(ds, dir);
  CrossDomainDataset back = load_dataset(dir);
  CHECK(back.photos.values() == ds.photos.values());
  CHECK(back.sketches.values() == ds.sketches.values());
  CHECK(back.photo_category == ds.photo_category);
  CHECK(back.sketch_photo_index == ds.sketch_photo_index);
  CHECK(back.photo_in_train == ds.photo_in_train);
  CHECK(back.ambiguous_pairs == ds.ambiguous_pairs);
  CHECK(back.spec.seed == ds.spec.seed);
  std::filesystem::remove_all(dir);
}

TEST_CASE("spec validation") {
  SynthSpec spec = tiny_spec();
  spec.ambiguity_rate = 1.0;
  CHECK_THROWS_AS(generate_dataset(spec), std::invalid_argument);
  spec = tiny_spec();
  spec.split_fraction = 1.0;
  CHECK_THROWS_AS(generate_dataset(spec), std::invalid_argument);
  spec = tiny_spec();
  spec.sketches_per_photo = 0;
  CHECK_THROWS_AS(generate_dataset(spec), std::invalid_argument);
}
