#pragma once

#include <cstddef>

#include "sbir/tensor.hpp"

namespace sbir {

enum class Mode { kTrain, kEval };

/// Per-domain batch normalization over embedding columns. Each domain
/// (photo, sketch) owns its head: parameters and running statistics are
/// never shared across heads.
///
/// Train-mode forward mutates the running statistics, so a head has one
/// writer at a time; eval-mode forward is read-only.
struct BatchNormHead {
  std::size_t dim = 0;
  Tensor gamma;         // learnable scale
  Tensor beta;          // learnable shift
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
  Mode mode = Mode::kTrain;
};

BatchNormHead make_batchnorm_head(std::size_t dim, double momentum = 0.1,
                                  double eps = 1e-5);

/// Normalizes x (bs x dim) per head.mode.
///
/// Train: center/scale by the batch mean and biased variance, apply
/// gamma/beta, then fold the batch statistics into the running ones as
/// running <- (1 - momentum) * running + momentum * batch. Requires bs >= 2.
/// Eval: closed form from the running statistics; output rows are
/// independent of the rest of the batch.
Tensor bn_forward(BatchNormHead& head, const Tensor& x);

/// Same, with externally supplied gamma/beta (e.g. tape-watched copies
/// during training). head still provides dims, eps and running stats.
Tensor bn_forward(BatchNormHead& head, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta);

/// Rows scaled to unit euclidean norm; zero rows stay zero.
Tensor l2_normalize(const Tensor& x);

}  // namespace sbir
