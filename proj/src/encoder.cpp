#include "sbir/encoder.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "sbir/rng.hpp"

namespace sbir {

namespace {

constexpr char kCheckpointMagic[8] = {'S', 'B', 'I', 'R', 'E', 'N', 'C', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

void check_config(const EncoderConfig& cfg) {
  if (cfg.input_dim == 0) {
    throw std::invalid_argument("encoder: input_dim must be >= 1");
  }
  if (cfg.embedding_dim == 0) {
    throw std::invalid_argument("encoder: embedding_dim must be >= 1");
  }
  if (cfg.hidden_dims.empty()) {
    throw std::invalid_argument("encoder: hidden_dims must be non-empty");
  }
  for (std::size_t h : cfg.hidden_dims) {
    if (h == 0) throw std::invalid_argument("encoder: hidden dim must be >= 1");
  }
}

std::vector<std::size_t> layer_widths(const EncoderConfig& cfg) {
  std::vector<std::size_t> widths{cfg.input_dim};
  widths.insert(widths.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
  widths.push_back(cfg.embedding_dim);
  return widths;
}

std::string head_name(HeadKind k) {
  switch (k) {
    case HeadKind::kBatchNorm: return "batchnorm";
    case HeadKind::kL2: return "l2";
    case HeadKind::kNone: return "none";
  }
  return "none";
}

HeadKind head_from_name(const std::string& s) {
  if (s == "batchnorm") return HeadKind::kBatchNorm;
  if (s == "l2") return HeadKind::kL2;
  if (s == "none") return HeadKind::kNone;
  throw std::runtime_error("checkpoint: unknown head kind '" + s + "'");
}

void write_tensor(std::ofstream& out, const Tensor& t) {
  out.write(reinterpret_cast<const char*>(t.values().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor read_tensor(std::ifstream& in, Shape shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  std::vector<double> values(n);
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw std::runtime_error("checkpoint: truncated tensor data");
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace

EncoderConfig capacity_config(const std::string& tag, std::size_t input_dim,
                              std::size_t embedding_dim, HeadKind head) {
  EncoderConfig cfg;
  cfg.input_dim = input_dim;
  cfg.embedding_dim = embedding_dim;
  cfg.head = head;
  cfg.capacity_tag = tag;
  if (tag == "tiny") {
    cfg.hidden_dims = {64};
  } else if (tag == "small") {
    cfg.hidden_dims = {128, 128};
  } else if (tag == "base") {
    cfg.hidden_dims = {256, 256};
  } else if (tag == "large") {
    cfg.hidden_dims = {512, 512, 512};
  } else {
    throw std::invalid_argument("capacity_config: unknown tag '" + tag + "'");
  }
  return cfg;
}

Encoder build_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  check_config(cfg);
  Encoder enc;
  enc.cfg = cfg;
  Rng rng(seed);
  std::vector<std::size_t> widths = layer_widths(cfg);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    std::size_t in = widths[l], out = widths[l + 1];
    double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::vector<double> w(out * in), b(out);
    for (double& v : w) v = rng.uniform(-bound, bound);
    for (double& v : b) v = rng.uniform(-bound, bound);
    enc.weights.emplace_back(Shape{out, in}, std::move(w));
    enc.biases.emplace_back(Shape{out}, std::move(b));
  }
  if (cfg.head == HeadKind::kBatchNorm) {
    enc.head = make_batchnorm_head(cfg.embedding_dim, cfg.bn_momentum,
                                   cfg.bn_eps);
  }
  return enc;
}

EncoderVars watch_encoder(Tape& tape, const Encoder& enc) {
  EncoderVars vars;
  vars.watched = !enc.frozen;
  for (std::size_t l = 0; l < enc.weights.size(); ++l) {
    vars.weights.push_back(vars.watched ? tape.watch(enc.weights[l])
                                        : enc.weights[l]);
    vars.biases.push_back(vars.watched ? tape.watch(enc.biases[l])
                                       : enc.biases[l]);
  }
  if (enc.head) {
    vars.gamma = vars.watched ? tape.watch(enc.head->gamma) : enc.head->gamma;
    vars.beta = vars.watched ? tape.watch(enc.head->beta) : enc.head->beta;
  }
  return vars;
}

Tensor encode_on_tape(Encoder& enc, const EncoderVars& vars, const Tensor& x,
                      Mode mode) {
  if (x.rank() != 2 || x.cols() != enc.cfg.input_dim) {
    throw std::invalid_argument("encode: input " + shape_str(x.shape()) +
                                " does not match input_dim " +
                                std::to_string(enc.cfg.input_dim));
  }
  Tensor h = x;
  for (std::size_t l = 0; l < vars.weights.size(); ++l) {
    h = add(matmul_nt(h, vars.weights[l]), vars.biases[l]);
    if (l + 1 < vars.weights.size()) h = relu(h);
  }
  switch (enc.cfg.head) {
    case HeadKind::kBatchNorm: {
      Mode saved = enc.head->mode;
      enc.head->mode = mode;
      Tensor out = bn_forward(*enc.head, h, vars.gamma, vars.beta);
      enc.head->mode = saved;
      return out;
    }
    case HeadKind::kL2:
      return l2_normalize(h);
    case HeadKind::kNone:
      return h;
  }
  return h;
}

Tensor encode_batch(Encoder& enc, const Tensor& x, Mode mode) {
  EncoderVars plain;
  plain.watched = false;
  plain.weights = enc.weights;
  plain.biases = enc.biases;
  if (enc.head) {
    plain.gamma = enc.head->gamma;
    plain.beta = enc.head->beta;
  }
  return encode_on_tape(enc, plain, x, mode);
}

std::size_t param_count(const Encoder& enc) {
  std::size_t n = 0;
  for (const Tensor& w : enc.weights) n += w.size();
  for (const Tensor& b : enc.biases) n += b.size();
  if (enc.head) n += enc.head->gamma.size() + enc.head->beta.size();
  return n;
}

std::uint64_t param_checksum(const Encoder& enc) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&h](const Tensor& t) {
    const auto& v = t.values();
    const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
    for (std::size_t i = 0; i < v.size() * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const Tensor& w : enc.weights) feed(w);
  for (const Tensor& b : enc.biases) feed(b);
  if (enc.head) {
    feed(enc.head->gamma);
    feed(enc.head->beta);
    feed(enc.head->running_mean);
    feed(enc.head->running_var);
  }
  return h;
}

std::vector<Tensor> encoder_params(const Encoder& enc) {
  std::vector<Tensor> params;
  for (std::size_t l = 0; l < enc.weights.size(); ++l) {
    params.push_back(enc.weights[l]);
    params.push_back(enc.biases[l]);
  }
  if (enc.head) {
    params.push_back(enc.head->gamma);
    params.push_back(enc.head->beta);
  }
  return params;
}

void set_encoder_params(Encoder& enc, const std::vector<Tensor>& params) {
  std::size_t expected = 2 * enc.weights.size() + (enc.head ? 2 : 0);
  if (params.size() != expected) {
    throw std::invalid_argument("set_encoder_params: wrong tensor count");
  }
  std::size_t p = 0;
  for (std::size_t l = 0; l < enc.weights.size(); ++l) {
    enc.weights[l] = params[p++];
    enc.biases[l] = params[p++];
  }
  if (enc.head) {
    enc.head->gamma = params[p++];
    enc.head->beta = params[p++];
  }
}

void save_encoder(const Encoder& enc, const std::filesystem::path& path) {
  nlohmann::json cfg{
      {"input_dim", enc.cfg.input_dim},
      {"hidden_dims", enc.cfg.hidden_dims},
      {"embedding_dim", enc.cfg.embedding_dim},
      {"head", head_name(enc.cfg.head)},
      {"capacity_tag", enc.cfg.capacity_tag},
      {"bn_momentum", enc.cfg.bn_momentum},
      {"bn_eps", enc.cfg.bn_eps},
      {"frozen", enc.frozen},
  };
  std::string cfg_str = cfg.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  std::uint32_t version = kCheckpointVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  std::uint64_t len = cfg_str.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(cfg_str.data(), static_cast<std::streamsize>(len));
  for (std::size_t l = 0; l < enc.weights.size(); ++l) {
    write_tensor(out, enc.weights[l]);
    write_tensor(out, enc.biases[l]);
  }
  if (enc.head) {
    write_tensor(out, enc.head->gamma);
    write_tensor(out, enc.head->beta);
    write_tensor(out, enc.head->running_mean);
    write_tensor(out, enc.head->running_var);
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Encoder load_encoder(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error(path.string() + ": not an encoder checkpoint");
  }
  if (version != kCheckpointVersion) {
    throw std::runtime_error(path.string() + ": unsupported version " +
                             std::to_string(version));
  }
  std::string cfg_str(len, '\0');
  in.read(cfg_str.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error(path.string() + ": truncated config");
  nlohmann::json cfg = nlohmann::json::parse(cfg_str);

  EncoderConfig config;
  config.input_dim = cfg.at("input_dim").get<std::size_t>();
  config.hidden_dims = cfg.at("hidden_dims").get<std::vector<std::size_t>>();
  config.embedding_dim = cfg.at("embedding_dim").get<std::size_t>();
  config.head = head_from_name(cfg.at("head").get<std::string>());
  config.capacity_tag = cfg.at("capacity_tag").get<std::string>();
  config.bn_momentum = cfg.at("bn_momentum").get<double>();
  config.bn_eps = cfg.at("bn_eps").get<double>();
  check_config(config);

  Encoder enc;
  enc.cfg = config;
  enc.frozen = cfg.at("frozen").get<bool>();
  std::vector<std::size_t> widths = layer_widths(config);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    enc.weights.push_back(read_tensor(in, {widths[l + 1], widths[l]}));
    enc.biases.push_back(read_tensor(in, {widths[l + 1]}));
  }
  if (config.head == HeadKind::kBatchNorm) {
    BatchNormHead head = make_batchnorm_head(config.embedding_dim,
                                             config.bn_momentum, config.bn_eps);
    head.gamma = read_tensor(in, {config.embedding_dim});
    head.beta = read_tensor(in, {config.embedding_dim});
    head.running_mean = read_tensor(in, {config.embedding_dim});
    head.running_var = read_tensor(in, {config.embedding_dim});
    enc.head = std::move(head);
  }
  return enc;
}

}  // namespace sbir
