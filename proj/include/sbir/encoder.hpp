#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sbir/norm.hpp"
#include "sbir/tensor.hpp"

namespace sbir {

enum class HeadKind { kBatchNorm, kL2, kNone };

struct EncoderConfig {
  std::size_t input_dim = 64;
  std::vector<std::size_t> hidden_dims{64};
  std::size_t embedding_dim = 512;
  HeadKind head = HeadKind::kBatchNorm;
  std::string capacity_tag = "custom";
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
};

/// ReLU MLP encoder: input -> hidden... -> embedding (no activation after
/// the final linear layer), followed by the configured normalization head.
struct Encoder {
  EncoderConfig cfg;
  std::vector<Tensor> weights;  // (out x in) per layer
  std::vector<Tensor> biases;   // (out) per layer
  std::optional<BatchNormHead> head;
  bool frozen = false;
};

/// Capacity ladder used by the experiments: tiny [64], small [128,128],
/// base [256,256], large [512,512,512] hidden layers.
EncoderConfig capacity_config(const std::string& tag,
                              std::size_t input_dim = 64,
                              std::size_t embedding_dim = 512,
                              HeadKind head = HeadKind::kBatchNorm);

/// Deterministic uniform fan-in initialization given the seed.
Encoder build_encoder(const EncoderConfig& cfg, std::uint64_t seed);

/// Forward pass for a bs x input_dim batch. Train mode runs the batchnorm
/// head on batch statistics (mutating its running stats); eval mode uses
/// the running stats, so a row's embedding is independent of its batch.
Tensor encode_batch(Encoder& enc, const Tensor& x, Mode mode);

/// Exact number of learnable scalars, including head gamma/beta.
std::size_t param_count(const Encoder& enc);

/// Order-sensitive FNV-1a hash over all parameter and running-stat bytes.
/// Frozen guides are asserted unchanged by comparing this before and after.
std::uint64_t param_checksum(const Encoder& enc);

// ---- training-path helpers -------------------------------------------------

/// Tape-bound views of an encoder's parameters. For a frozen encoder the
/// tensors are plain constants and watched is false, so no gradient ever
/// reaches them.
struct EncoderVars {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
  Tensor gamma;
  Tensor beta;
  bool watched = false;
};

EncoderVars watch_encoder(Tape& tape, const Encoder& enc);

/// Forward pass through tape-bound parameters; used by the training loops.
Tensor encode_on_tape(Encoder& enc, const EncoderVars& vars, const Tensor& x,
                      Mode mode);

/// Flat list of the encoder's learnable tensors, in declaration order
/// (weights/biases per layer, then head gamma/beta). The same order is used
/// by EncoderVars, checkpoints and the optimizer.
std::vector<Tensor> encoder_params(const Encoder& enc);
void set_encoder_params(Encoder& enc, const std::vector<Tensor>& params);

/// Versioned binary checkpoint: magic, version, config echo (JSON), then
/// parameter tensors in declaration order and batchnorm running stats.
/// Reloading reproduces eval outputs bit-exactly.
void save_encoder(const Encoder& enc, const std::filesystem::path& path);
Encoder load_encoder(const std::filesystem::path& path);

}  // namespace sbir
