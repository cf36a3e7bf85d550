#include "sbir/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "sbir/rng.hpp"

namespace sbir {

namespace {

constexpr std::uint32_t kDatasetVersion = 1;

// Salts for the independent RNG streams of one dataset.
enum : std::uint64_t {
  kSaltCenters = 1,
  kSaltInstances = 2,
  kSaltManifold = 3,
  kSaltSplit = 4,
  kSaltAmbiguity = 5,
  kSaltSketches = 6,
};

/// Fixed one-hidden-layer ReLU map used to curve the instance offsets.
struct InstanceManifold {
  std::vector<double> w1;  // dim x dim
  std::vector<double> w2;  // dim x dim

  static InstanceManifold make(std::size_t dim, std::uint64_t seed) {
    InstanceManifold m;
    Rng rng(seed);
    double s = 1.0 / std::sqrt(static_cast<double>(dim));
    m.w1.resize(dim * dim);
    m.w2.resize(dim * dim);
    for (double& v : m.w1) v = rng.normal(0.0, s);
    for (double& v : m.w2) v = rng.normal(0.0, s);
    return m;
  }

  std::vector<double> apply(const std::vector<double>& u) const {
    std::size_t dim = u.size();
    std::vector<double> h(dim, 0.0), out(dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < dim; ++j) acc += w1[i * dim + j] * u[j];
      h[i] = acc > 0.0 ? acc : 0.0;
    }
    for (std::size_t i = 0; i < dim; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < dim; ++j) acc += w2[i * dim + j] * h[j];
      out[i] = acc;
    }
    return out;
  }
};

void write_doubles(const std::filesystem::path& path,
                   const std::vector<double>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<double> read_doubles(const std::filesystem::path& path,
                                 std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<double> values(count);
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw std::runtime_error(path.string() + ": truncated tensor file");
  return values;
}

}  // namespace

std::vector<std::size_t> CrossDomainDataset::train_sketches() const {
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < sketch_photo_index.size(); ++s) {
    if (photo_in_train[sketch_photo_index[s]]) out.push_back(s);
  }
  return out;
}

std::vector<std::size_t> CrossDomainDataset::test_sketches() const {
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < sketch_photo_index.size(); ++s) {
    if (!photo_in_train[sketch_photo_index[s]]) out.push_back(s);
  }
  return out;
}

std::vector<std::size_t> CrossDomainDataset::train_photos() const {
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p < photo_in_train.size(); ++p) {
    if (photo_in_train[p]) out.push_back(p);
  }
  return out;
}

std::vector<std::size_t> CrossDomainDataset::test_photos() const {
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p < photo_in_train.size(); ++p) {
    if (!photo_in_train[p]) out.push_back(p);
  }
  return out;
}

void validate(const SynthSpec& spec) {
  if (spec.n_categories == 0 || spec.photos_per_category == 0) {
    throw std::invalid_argument("synth: need at least one category and photo");
  }
  if (spec.photos_per_category < 2) {
    throw std::invalid_argument(
        "synth: photos_per_category must be >= 2 so every category can "
        "appear in both splits");
  }
  if (spec.sketches_per_photo == 0) {
    throw std::invalid_argument("synth: sketches_per_photo must be >= 1");
  }
  if (spec.photo_dim == 0 || spec.sketch_dim == 0) {
    throw std::invalid_argument("synth: dims must be >= 1");
  }
  if (spec.ambiguity_rate < 0.0 || spec.ambiguity_rate >= 1.0) {
    throw std::invalid_argument("synth: ambiguity_rate must be in [0,1)");
  }
  if (!(spec.split_fraction > 0.0 && spec.split_fraction < 1.0)) {
    throw std::invalid_argument("synth: split_fraction must be in (0,1)");
  }
  if (spec.domain_gap.dropout_fraction < 0.0 ||
      spec.domain_gap.dropout_fraction >= 1.0) {
    throw std::invalid_argument("synth: dropout_fraction must be in [0,1)");
  }
  if (spec.domain_gap.noise_sigma < 0.0 || spec.sigma_dup < 0.0) {
    throw std::invalid_argument("synth: sigmas must be nonnegative");
  }
}

std::pair<Tensor, std::vector<std::pair<std::size_t, std::size_t>>>
inject_ambiguity(const Tensor& photos, double rate, double sigma_dup,
                 std::uint64_t seed) {
  if (photos.rank() != 2) {
    throw std::invalid_argument("inject_ambiguity: photos must be n x d");
  }
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("inject_ambiguity: rate must be in [0,1)");
  }
  std::size_t n = photos.rows(), d = photos.cols();
  auto n_dup = static_cast<std::size_t>(
      std::llround(rate * static_cast<double>(n)));

  Rng rng(seed);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);

  std::vector<double> data = photos.values();
  data.reserve((n + n_dup) * d);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t k = 0; k < n_dup; ++k) {
    std::size_t src = order[k];
    for (std::size_t j = 0; j < d; ++j) {
      data.push_back(photos.values()[src * d + j] + rng.normal(0.0, sigma_dup));
    }
    pairs.emplace_back(src, n + k);
  }
  return {Tensor({n + n_dup, d}, std::move(data)), std::move(pairs)};
}

CrossDomainDataset generate_dataset(const SynthSpec& spec) {
  validate(spec);
  std::size_t n_orig = spec.n_categories * spec.photos_per_category;
  std::size_t dim = spec.photo_dim;

  // Category centers and curved instance offsets.
  Rng center_rng(derive_seed(spec.seed, kSaltCenters));
  std::vector<double> centers(spec.n_categories * dim);
  for (double& v : centers) v = center_rng.normal(0.0, spec.center_sigma);

  InstanceManifold manifold =
      InstanceManifold::make(dim, derive_seed(spec.seed, kSaltManifold));
  Rng instance_rng(derive_seed(spec.seed, kSaltInstances));
  std::vector<double> photo_data(n_orig * dim);
  std::vector<std::size_t> category(n_orig);
  std::vector<double> latent(dim);
  for (std::size_t c = 0; c < spec.n_categories; ++c) {
    for (std::size_t p = 0; p < spec.photos_per_category; ++p) {
      std::size_t idx = c * spec.photos_per_category + p;
      category[idx] = c;
      for (double& v : latent) v = instance_rng.normal();
      std::vector<double> offset = manifold.apply(latent);
      for (std::size_t j = 0; j < dim; ++j) {
        photo_data[idx * dim + j] =
            centers[c * dim + j] + spec.instance_sigma * offset[j];
      }
    }
  }

  // Category-stratified split of the originals.
  Rng split_rng(derive_seed(spec.seed, kSaltSplit));
  std::vector<bool> in_train(n_orig, false);
  for (std::size_t c = 0; c < spec.n_categories; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t p = 0; p < spec.photos_per_category; ++p) {
      members.push_back(c * spec.photos_per_category + p);
    }
    split_rng.shuffle(members);
    auto want = static_cast<std::size_t>(std::llround(
        spec.split_fraction * static_cast<double>(members.size())));
    want = std::clamp<std::size_t>(want, 1, members.size() - 1);
    for (std::size_t k = 0; k < want; ++k) in_train[members[k]] = true;
  }

  // Ambiguity: duplicate a slice of the *train* photos so the test gallery
  // stays clean; duplicates join the train split with their source category.
  std::vector<std::size_t> train_ids;
  for (std::size_t p = 0; p < n_orig; ++p) {
    if (in_train[p]) train_ids.push_back(p);
  }
  std::vector<double> train_rows;
  train_rows.reserve(train_ids.size() * dim);
  for (std::size_t p : train_ids) {
    train_rows.insert(train_rows.end(), photo_data.begin() + p * dim,
                      photo_data.begin() + (p + 1) * dim);
  }
  auto [augmented, local_pairs] = inject_ambiguity(
      Tensor({train_ids.size(), dim}, std::move(train_rows)),
      spec.ambiguity_rate, spec.sigma_dup,
      derive_seed(spec.seed, kSaltAmbiguity));

  CrossDomainDataset ds;
  ds.spec = spec;
  std::size_t n_dup = local_pairs.size();
  std::size_t n_total = n_orig + n_dup;
  photo_data.reserve(n_total * dim);
  category.reserve(n_total);
  in_train.reserve(n_total);
  for (std::size_t k = 0; k < n_dup; ++k) {
    std::size_t src_global = train_ids[local_pairs[k].first];
    std::size_t dup_local = local_pairs[k].second;
    const double* row = augmented.values().data() + dup_local * dim;
    photo_data.insert(photo_data.end(), row, row + dim);
    category.push_back(category[src_global]);
    in_train.push_back(true);
    ds.ambiguous_pairs.emplace_back(src_global, n_orig + k);
  }
  ds.photos = Tensor({n_total, dim}, std::move(photo_data));
  ds.photo_category = std::move(category);
  ds.photo_in_train = std::move(in_train);

  // Sketches: fixed projection of the photo, coordinate dropout, noise.
  Rng proj_rng(spec.domain_gap.projection_seed);
  std::vector<double> projection(spec.sketch_dim * dim);
  double pscale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (double& v : projection) v = proj_rng.normal(0.0, pscale);

  Rng sketch_rng(derive_seed(spec.seed, kSaltSketches));
  std::size_t n_sketches = n_total * spec.sketches_per_photo;
  std::vector<double> sketch_data(n_sketches * spec.sketch_dim);
  ds.sketch_photo_index.resize(n_sketches);
  for (std::size_t p = 0; p < n_total; ++p) {
    const double* photo = ds.photos.values().data() + p * dim;
    for (std::size_t s = 0; s < spec.sketches_per_photo; ++s) {
      std::size_t sk = p * spec.sketches_per_photo + s;
      ds.sketch_photo_index[sk] = p;
      double* row = sketch_data.data() + sk * spec.sketch_dim;
      for (std::size_t j = 0; j < spec.sketch_dim; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
          acc += projection[j * dim + i] * photo[i];
        }
        bool dropped = sketch_rng.uniform() < spec.domain_gap.dropout_fraction;
        double noise = sketch_rng.normal(0.0, spec.domain_gap.noise_sigma);
        row[j] = dropped ? 0.0 : acc + noise;
      }
    }
  }
  ds.sketches = Tensor({n_sketches, spec.sketch_dim}, std::move(sketch_data));
  return ds;
}

std::vector<FeatureVolume> synth_feature_maps(const FeatureMapSpec& spec) {
  if (spec.channels == 0) {
    throw std::invalid_argument("synth_feature_maps: channels must be >= 1");
  }
  std::vector<FeatureVolume> volumes;
  Rng rng(spec.seed);
  for (std::size_t size : spec.sizes) {
    if (size == 0) {
      throw std::invalid_argument("synth_feature_maps: sizes must be >= 1");
    }
    std::vector<double> data(spec.channels * size * size);
    for (double& v : data) v = std::fabs(rng.normal());  // half-normal
    volumes.push_back(make_feature_volume(spec.channels, size, size,
                                          std::move(data), "synth",
                                          std::to_string(size)));
  }
  return volumes;
}

void save_dataset(const CrossDomainDataset& ds,
                  const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [a, b] : ds.ambiguous_pairs) {
    pairs.push_back({a, b});
  }
  std::vector<int> mask(ds.photo_in_train.begin(), ds.photo_in_train.end());
  nlohmann::json meta{
      {"version", kDatasetVersion},
      {"spec",
       {{"n_categories", ds.spec.n_categories},
        {"photos_per_category", ds.spec.photos_per_category},
        {"sketches_per_photo", ds.spec.sketches_per_photo},
        {"photo_dim", ds.spec.photo_dim},
        {"sketch_dim", ds.spec.sketch_dim},
        {"projection_seed", ds.spec.domain_gap.projection_seed},
        {"dropout_fraction", ds.spec.domain_gap.dropout_fraction},
        {"noise_sigma", ds.spec.domain_gap.noise_sigma},
        {"ambiguity_rate", ds.spec.ambiguity_rate},
        {"sigma_dup", ds.spec.sigma_dup},
        {"split_fraction", ds.spec.split_fraction},
        {"seed", ds.spec.seed},
        {"center_sigma", ds.spec.center_sigma},
        {"instance_sigma", ds.spec.instance_sigma}}},
      {"n_photos", ds.n_photos()},
      {"n_sketches", ds.n_sketches()},
      {"photo_category", ds.photo_category},
      {"sketch_photo_index", ds.sketch_photo_index},
      {"photo_in_train", mask},
      {"ambiguous_pairs", pairs},
  };
  std::ofstream meta_out(dir / "dataset.json");
  if (!meta_out) {
    throw std::runtime_error("cannot open " + (dir / "dataset.json").string());
  }
  meta_out << meta.dump(2) << '\n';
  write_doubles(dir / "photos.bin", ds.photos.values());
  write_doubles(dir / "sketches.bin", ds.sketches.values());
}

CrossDomainDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream meta_in(dir / "dataset.json");
  if (!meta_in) {
    throw std::runtime_error("cannot open " + (dir / "dataset.json").string());
  }
  nlohmann::json meta = nlohmann::json::parse(meta_in);
  if (meta.at("version").get<std::uint32_t>() != kDatasetVersion) {
    throw std::runtime_error(dir.string() + ": unsupported dataset version");
  }
  const nlohmann::json& s = meta.at("spec");

  CrossDomainDataset ds;
  ds.spec.n_categories = s.at("n_categories").get<std::size_t>();
  ds.spec.photos_per_category = s.at("photos_per_category").get<std::size_t>();
  ds.spec.sketches_per_photo = s.at("sketches_per_photo").get<std::size_t>();
  ds.spec.photo_dim = s.at("photo_dim").get<std::size_t>();
  ds.spec.sketch_dim = s.at("sketch_dim").get<std::size_t>();
  ds.spec.domain_gap.projection_seed =
      s.at("projection_seed").get<std::uint64_t>();
  ds.spec.domain_gap.dropout_fraction = s.at("dropout_fraction").get<double>();
  ds.spec.domain_gap.noise_sigma = s.at("noise_sigma").get<double>();
  ds.spec.ambiguity_rate = s.at("ambiguity_rate").get<double>();
  ds.spec.sigma_dup = s.at("sigma_dup").get<double>();
  ds.spec.split_fraction = s.at("split_fraction").get<double>();
  ds.spec.seed = s.at("seed").get<std::uint64_t>();
  ds.spec.center_sigma = s.at("center_sigma").get<double>();
  ds.spec.instance_sigma = s.at("instance_sigma").get<double>();

  auto n_photos = meta.at("n_photos").get<std::size_t>();
  auto n_sketches = meta.at("n_sketches").get<std::size_t>();
  ds.photo_category = meta.at("photo_category").get<std::vector<std::size_t>>();
  ds.sketch_photo_index =
      meta.at("sketch_photo_index").get<std::vector<std::size_t>>();
  auto mask = meta.at("photo_in_train").get<std::vector<int>>();
  ds.photo_in_train.assign(mask.begin(), mask.end());
  for (const auto& p : meta.at("ambiguous_pairs")) {
    ds.ambiguous_pairs.emplace_back(p.at(0).get<std::size_t>(),
                                    p.at(1).get<std::size_t>());
  }
  if (ds.photo_category.size() != n_photos ||
      ds.sketch_photo_index.size() != n_sketches ||
      ds.photo_in_train.size() != n_photos) {
    throw std::runtime_error(dir.string() + ": inconsistent dataset metadata");
  }
  ds.photos = Tensor({n_photos, ds.spec.photo_dim},
                     read_doubles(dir / "photos.bin",
                                  n_photos * ds.spec.photo_dim));
  ds.sketches = Tensor({n_sketches, ds.spec.sketch_dim},
                       read_doubles(dir / "sketches.bin",
                                    n_sketches * ds.spec.sketch_dim));
  return ds;
}

}  // namespace sbir
