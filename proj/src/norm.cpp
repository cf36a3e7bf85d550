#include "sbir/norm.hpp"

#include <stdexcept>

namespace sbir {

BatchNormHead make_batchnorm_head(std::size_t dim, double momentum,
                                  double eps) {
  if (dim == 0) throw std::invalid_argument("batchnorm: dim must be >= 1");
  if (!(momentum > 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("batchnorm: momentum must be in (0,1)");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("batchnorm: eps must be > 0");
  BatchNormHead head;
  head.dim = dim;
  head.gamma = Tensor::ones({dim});
  head.beta = Tensor::zeros({dim});
  head.running_mean = Tensor::zeros({dim});
  head.running_var = Tensor::ones({dim});
  head.momentum = momentum;
  head.eps = eps;
  return head;
}

Tensor bn_forward(BatchNormHead& head, const Tensor& x) {
  return bn_forward(head, x, head.gamma, head.beta);
}

Tensor bn_forward(BatchNormHead& head, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta) {
  if (x.rank() != 2 || x.cols() != head.dim) {
    throw std::invalid_argument("batchnorm: input " + shape_str(x.shape()) +
                                " does not match head dim " +
                                std::to_string(head.dim));
  }
  std::size_t bs = x.rows();

  if (head.mode == Mode::kTrain) {
    if (bs < 2) {
      throw std::invalid_argument(
          "batchnorm: train mode needs a batch of at least 2 rows");
    }
    Tensor mean = scale(col_sum(x), 1.0 / static_cast<double>(bs));
    Tensor centered = sub(x, broadcast_rows(mean, bs));
    Tensor var = scale(col_sum(square(centered)),  // biased variance
                       1.0 / static_cast<double>(bs));
    Tensor denom = sqrt_eps(var, head.eps);
    Tensor normalized = div(centered, broadcast_rows(denom, bs));
    Tensor out = add(mul(normalized, gamma), beta);

    // Fold the batch statistics into the running ones (values only).
    double m = head.momentum;
    std::vector<double> rm(head.dim), rv(head.dim);
    for (std::size_t j = 0; j < head.dim; ++j) {
      rm[j] = (1.0 - m) * head.running_mean.values()[j] + m * mean.values()[j];
      rv[j] = (1.0 - m) * head.running_var.values()[j] + m * var.values()[j];
    }
    head.running_mean = Tensor({head.dim}, std::move(rm));
    head.running_var = Tensor({head.dim}, std::move(rv));
    return out;
  }

  Tensor centered = sub(x, head.running_mean);
  Tensor denom = sqrt_eps(head.running_var, head.eps);
  Tensor normalized = div(centered, broadcast_rows(denom, bs));
  return add(mul(normalized, gamma), beta);
}

Tensor l2_normalize(const Tensor& x) {
  if (x.rank() != 2) {
    throw std::invalid_argument("l2_normalize: expected a matrix, got " +
                                shape_str(x.shape()));
  }
  Tensor norms = sqrt_or_zero(row_sum(square(x)), 1e-12);
  // Zero rows divide by the clamp floor instead of by zero and stay zero.
  Tensor denom = clamp_min(norms, 1e-12);
  return div(x, broadcast_cols(denom, x.cols()));
}

}  // namespace sbir
