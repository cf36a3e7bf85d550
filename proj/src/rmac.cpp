#include "sbir/rmac.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <stdexcept>

namespace sbir {

namespace {

constexpr char kDescriptorMagic[8] = {'S', 'B', 'R', 'M', 'A', 'C', '0', '1'};
constexpr std::uint32_t kDescriptorVersion = 1;

void l2_normalize_inplace(std::vector<double>& v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  if (sq <= 0.0) return;  // zero vector stays zero
  double inv = 1.0 / std::sqrt(sq);
  for (double& x : v) x *= inv;
}

/// Window starts covering [0, extent) for one axis: 0, stride, 2*stride, ...
/// with a final start snapped to extent - side when the walk falls short.
std::vector<std::size_t> axis_starts(std::size_t extent, std::size_t side,
                                     std::size_t stride) {
  std::vector<std::size_t> starts;
  std::size_t last = extent - side;  // side <= extent by construction
  for (std::size_t x = 0;; x += stride) {
    if (x >= last) {
      starts.push_back(last);
      break;
    }
    starts.push_back(x);
  }
  return starts;
}

void check_volume(const FeatureVolume& fv) {
  if (fv.channels == 0 || fv.width == 0 || fv.height == 0) {
    throw std::invalid_argument("feature volume: C, W, H must all be >= 1");
  }
  if (fv.data.size() != fv.channels * fv.width * fv.height) {
    throw std::invalid_argument("feature volume: data does not match C*W*H");
  }
}

void check_config(const RmacConfig& cfg) {
  if (cfg.scales == 0) throw std::invalid_argument("rmac: scales must be >= 1");
  if (!(cfg.stride_fraction > 0.0 && cfg.stride_fraction <= 1.0)) {
    throw std::invalid_argument("rmac: stride_fraction must be in (0,1]");
  }
  if (!(cfg.alpha > 0.0)) throw std::invalid_argument("rmac: alpha must be > 0");
}

}  // namespace

FeatureVolume make_feature_volume(std::size_t channels, std::size_t width,
                                  std::size_t height,
                                  std::vector<double> values,
                                  std::string source_id,
                                  std::string resolution_tag) {
  FeatureVolume fv;
  fv.channels = channels;
  fv.width = width;
  fv.height = height;
  fv.data = Tensor({channels, width, height}, std::move(values));
  fv.source_id = std::move(source_id);
  fv.resolution_tag = std::move(resolution_tag);
  check_volume(fv);
  return fv;
}

std::vector<double> mac(const FeatureVolume& fv) {
  check_volume(fv);
  std::size_t plane = fv.width * fv.height;
  std::vector<double> out(fv.channels);
  for (std::size_t c = 0; c < fv.channels; ++c) {
    const double* p = fv.data.values().data() + c * plane;
    double best = p[0];
    for (std::size_t i = 1; i < plane; ++i) best = std::max(best, p[i]);
    out[c] = best;
  }
  return out;
}

RegionGrid region_grid(std::size_t width, std::size_t height,
                       const RmacConfig& cfg) {
  if (width == 0 || height == 0) {
    throw std::invalid_argument("region_grid: W and H must be >= 1");
  }
  check_config(cfg);
  std::size_t short_side = std::min(width, height);

  std::set<Region> unique;
  std::vector<Region> ordered;
  for (std::size_t l = 1; l <= cfg.scales; ++l) {
    double side_real = 2.0 * static_cast<double>(short_side) /
                       (static_cast<double>(l) + 1.0);
    auto side = static_cast<std::size_t>(std::clamp<long long>(
        std::llround(side_real), 1, static_cast<long long>(short_side)));
    auto stride = static_cast<std::size_t>(
        std::max<long long>(1, std::llround(cfg.stride_fraction * side_real)));
    for (std::size_t y : axis_starts(height, side, stride)) {
      for (std::size_t x : axis_starts(width, side, stride)) {
        Region r{x, y, side};
        if (unique.insert(r).second) ordered.push_back(r);
      }
    }
  }
  return RegionGrid{std::move(ordered), cfg.scales};
}

std::vector<double> rmac_descriptor(const FeatureVolume& fv,
                                    const RmacConfig& cfg) {
  check_volume(fv);
  RegionGrid grid = region_grid(fv.width, fv.height, cfg);
  std::size_t plane = fv.width * fv.height;
  const double* data = fv.data.values().data();

  std::vector<double> descriptor(fv.channels, 0.0);
  std::vector<double> region_vec(fv.channels);
  for (const Region& r : grid.regions) {
    for (std::size_t c = 0; c < fv.channels; ++c) {
      const double* chan = data + c * plane;
      double pooled = cfg.pooling == RegionPooling::kMax
                          ? -std::numeric_limits<double>::infinity()
                          : 0.0;
      // Volume layout is {C, W, H}: cell (c, x, y) sits at c*W*H + x*H + y.
      for (std::size_t x = r.x0; x < r.x0 + r.side; ++x) {
        const double* col = chan + x * fv.height;
        for (std::size_t y = r.y0; y < r.y0 + r.side; ++y) {
          double v = col[y];
          if (cfg.pooling == RegionPooling::kMax) {
            pooled = std::max(pooled, v);
          } else {
            pooled += std::pow(v, cfg.alpha);
          }
        }
      }
      region_vec[c] = pooled;
    }
    l2_normalize_inplace(region_vec);
    for (std::size_t c = 0; c < fv.channels; ++c) descriptor[c] += region_vec[c];
  }
  l2_normalize_inplace(descriptor);
  return descriptor;
}

std::vector<double> multires_rmac(const std::vector<FeatureVolume>& volumes,
                                  const RmacConfig& cfg) {
  if (volumes.empty()) {
    throw std::invalid_argument("multires_rmac: empty volume list");
  }
  std::size_t channels = volumes.front().channels;
  std::vector<double> sum(channels, 0.0);
  for (const FeatureVolume& fv : volumes) {
    if (fv.channels != channels) {
      throw std::invalid_argument("multires_rmac: channel counts differ");
    }
    std::vector<double> d = rmac_descriptor(fv, cfg);
    for (std::size_t c = 0; c < channels; ++c) sum[c] += d[c];
  }
  l2_normalize_inplace(sum);
  return sum;
}

std::vector<DescriptorPair> find_ambiguous_pairs(const Tensor& descriptors,
                                                 std::size_t top_k) {
  if (descriptors.rank() != 2 || descriptors.rows() < 2) {
    throw std::invalid_argument(
        "find_ambiguous_pairs: need an n x d matrix with n >= 2");
  }
  if (top_k == 0) {
    throw std::invalid_argument("find_ambiguous_pairs: top_k must be >= 1");
  }
  std::size_t n = descriptors.rows(), d = descriptors.cols();
  std::vector<DescriptorPair> pairs;
  pairs.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    const double* a = descriptors.values().data() + i * d;
    for (std::size_t j = i + 1; j < n; ++j) {
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
            [](const DescriptorPair& a, const DescriptorPair& b) {
              if (a.distance != b.distance) return a.distance < b.distance;
              if (a.i != b.i) return a.i < b.i;
              return a.j < b.j;
            });
  pairs.resize(std::min(top_k, pairs.size()));
  return pairs;
}

void save_descriptors(const Tensor& descriptors,
                      const std::filesystem::path& path) {
  if (descriptors.rank() != 2) {
    throw std::invalid_argument("save_descriptors: expected an n x d matrix");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out.write(kDescriptorMagic, sizeof(kDescriptorMagic));
  std::uint32_t version = kDescriptorVersion;
  std::uint64_t n = descriptors.rows(), d = descriptors.cols();
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  out.write(reinterpret_cast<const char*>(&d), sizeof(d));
  out.write(reinterpret_cast<const char*>(descriptors.values().data()),
            static_cast<std::streamsize>(n * d * sizeof(double)));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Tensor load_descriptors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t n = 0, d = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  in.read(reinterpret_cast<char*>(&d), sizeof(d));
  if (!in || std::memcmp(magic, kDescriptorMagic, sizeof(magic)) != 0) {
    throw std::runtime_error(path.string() + ": not a descriptor dump");
  }
  if (version != kDescriptorVersion) {
    throw std::runtime_error(path.string() + ": unsupported version " +
                             std::to_string(version));
  }
  std::vector<double> values(n * d);
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!in) throw std::runtime_error(path.string() + ": truncated dump");
  return Tensor({static_cast<std::size_t>(n), static_cast<std::size_t>(d)},
                std::move(values));
}

void write_pair_report(const std::vector<DescriptorPair>& pairs,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "rank,i,j,distance\n";
  char buf[64];
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    std::snprintf(buf, sizeof(buf), "%.9g", pairs[r].distance);
    out << (r + 1) << ',' << pairs[r].i << ',' << pairs[r].j << ',' << buf
        << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace sbir
