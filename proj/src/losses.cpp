#include "sbir/losses.hpp"

#include <stdexcept>
#include <string>

namespace sbir {

namespace {

void check_batches(const char* op, const Tensor& photos,
                   const Tensor& sketches) {
  if (photos.rank() != 2 || sketches.rank() != 2) {
    throw std::invalid_argument(std::string(op) + ": embeddings must be " +
                                "matrices, got " + shape_str(photos.shape()) +
                                " and " + shape_str(sketches.shape()));
  }
  if (photos.rows() != sketches.rows()) {
    throw std::invalid_argument(std::string(op) + ": batch sizes differ: " +
                                std::to_string(photos.rows()) + " vs " +
                                std::to_string(sketches.rows()));
  }
  if (photos.rows() < 2) {
    throw std::invalid_argument(std::string(op) +
                                ": batch size must be at least 2");
  }
  if (photos.cols() != sketches.cols()) {
    throw std::invalid_argument(std::string(op) + ": embedding dims differ: " +
                                shape_str(photos.shape()) + " vs " +
                                shape_str(sketches.shape()));
  }
}

void check_rtl_config(const RtlConfig& cfg) {
  if (cfg.margin < 0.0) {
    throw std::invalid_argument("rtl: margin must be nonnegative");
  }
  if (!(cfg.max_guard_eps > 0.0)) {
    throw std::invalid_argument("rtl: max_guard_eps must be positive");
  }
}

/// Constant mask with zeros on the diagonal, ones elsewhere.
Tensor off_diagonal_mask(std::size_t n) {
  std::vector<double> m(n * n, 1.0);
  for (std::size_t i = 0; i < n; ++i) m[i * n + i] = 0.0;
  return Tensor({n, n}, std::move(m));
}

Tensor reduce_matrix(const Tensor& m, Reduction reduction) {
  if (reduction == Reduction::kSum) return sum_all(m);
  double nonzero = 0.0;
  for (double v : m.values()) {
    if (v != 0.0) nonzero += 1.0;
  }
  // The count is piecewise constant, so it enters as a plain factor.
  return scale(sum_all(m), 1.0 / (nonzero > 0.0 ? nonzero : 1.0));
}

LossReport triplet_core(const Tensor& photo_embs, const Tensor& sketch_embs,
                        const RtlConfig& cfg, bool weighted) {
  const char* op = weighted ? "rtl_loss" : "triplet_loss";
  check_batches(op, photo_embs, sketch_embs);
  check_rtl_config(cfg);
  std::size_t bs = photo_embs.rows();

  LossReport report;
  report.dist_an = pairwise_distance_matrix(photo_embs, sketch_embs,
                                            cfg.distance);
  report.dist_ap = diag_part(report.dist_an);

  Tensor hinge = relu(add_scalar(
      sub(broadcast_cols(report.dist_ap, bs), report.dist_an), cfg.margin));
  Tensor mask = off_diagonal_mask(bs);
  report.tl_matrix = mul(hinge, mask);

  if (weighted) {
    report.w_matrix = relative_weighting_matrix(photo_embs, cfg);
    report.rtl_matrix = mul(report.tl_matrix, report.w_matrix);
  } else {
    report.w_matrix = Tensor::ones({bs, bs});
    report.rtl_matrix = report.tl_matrix;
  }
  report.loss = reduce_matrix(report.rtl_matrix, cfg.reduction);
  return report;
}

}  // namespace

Tensor pairwise_distance_matrix(const Tensor& a, const Tensor& b,
                                DistanceKind distance) {
  Tensor sq = pairwise_sqdist(a, b);
  if (distance == DistanceKind::kSquaredEuclidean) return sq;
  return sqrt_or_zero(sq, kDistanceEps);
}

LossReport triplet_loss_matrix(const Tensor& photo_embs,
                               const Tensor& sketch_embs,
                               const RtlConfig& cfg) {
  return triplet_core(photo_embs, sketch_embs, cfg, /*weighted=*/false);
}

Tensor relative_weighting_matrix(const Tensor& photo_embs,
                                 const RtlConfig& cfg) {
  if (photo_embs.rank() != 2 || photo_embs.rows() < 2) {
    throw std::invalid_argument(
        "relative_weighting_matrix: need a batch of at least 2 embeddings");
  }
  check_rtl_config(cfg);
  const Tensor& photos =
      cfg.detach_weighting ? photo_embs.detached() : photo_embs;
  Tensor m = pairwise_distance_matrix(photos, photos, cfg.distance);
  Tensor denom = clamp_min(max_all(m), cfg.max_guard_eps);
  return div(m, denom);
}

LossReport rtl_loss(const Tensor& photo_embs, const Tensor& sketch_embs,
                    const RtlConfig& cfg) {
  return triplet_core(photo_embs, sketch_embs, cfg, /*weighted=*/true);
}

Tensor distill_loss(const Tensor& student_embs, const Tensor& teacher_embs,
                    const DistillConfig& cfg) {
  if (student_embs.shape() != teacher_embs.shape()) {
    throw std::invalid_argument("distill_loss: shape mismatch " +
                                shape_str(student_embs.shape()) + " vs " +
                                shape_str(teacher_embs.shape()));
  }
  if (student_embs.rank() != 2) {
    throw std::invalid_argument("distill_loss: embeddings must be matrices");
  }
  Tensor teacher = teacher_embs.detached();

  switch (cfg.variant) {
    case DistillVariant::kMse:
      return mean_all(square(sub(student_embs, teacher)));
    case DistillVariant::kMae:
      return mean_all(abs_each(sub(student_embs, teacher)));
    case DistillVariant::kMseMae: {
      if (cfg.mse_mae_mix < 0.0 || cfg.mse_mae_mix > 1.0) {
        throw std::invalid_argument("distill_loss: mse_mae_mix must be in [0,1]");
      }
      Tensor res = sub(student_embs, teacher);
      return add(scale(mean_all(square(res)), cfg.mse_mae_mix),
                 scale(mean_all(abs_each(res)), 1.0 - cfg.mse_mae_mix));
    }
    case DistillVariant::kHuber: {
      if (!(cfg.huber_delta > 0.0)) {
        throw std::invalid_argument("distill_loss: huber delta must be > 0");
      }
      return mean_all(huber_each(sub(student_embs, teacher), cfg.huber_delta));
    }
    case DistillVariant::kKl:
    case DistillVariant::kKlSoftmax: {
      if (!(cfg.kl_temperature > 0.0)) {
        throw std::invalid_argument("distill_loss: temperature must be > 0");
      }
      double tau = cfg.kl_temperature;
      Tensor s = softmax_rows(scale(student_embs, 1.0 / tau));
      double teacher_tau = cfg.variant == DistillVariant::kKl ? tau : 1.0;
      Tensor t = softmax_rows(scale(teacher, 1.0 / teacher_tau));
      Tensor per_elem = mul(t, sub(log_each(t), log_each(s)));
      return scale(sum_all(per_elem),
                   1.0 / static_cast<double>(student_embs.rows()));
    }
  }
  throw std::invalid_argument("distill_loss: unknown variant");
}

DoubleGuidanceReport double_guidance_loss(const Tensor& student_sketch_embs,
                                          const Tensor& frozen_photo_embs,
                                          const Tensor& teacher_sketch_embs,
                                          const RtlConfig& cfg, double lambda,
                                          double huber_delta) {
  if (lambda < 0.0) {
    throw std::invalid_argument("double_guidance_loss: lambda must be >= 0");
  }
  if (student_sketch_embs.shape() != teacher_sketch_embs.shape() ||
      student_sketch_embs.shape() != frozen_photo_embs.shape()) {
    throw std::invalid_argument(
        "double_guidance_loss: the three batches must share one shape");
  }
  DoubleGuidanceReport report;
  report.rtl_term =
      rtl_loss(frozen_photo_embs.detached(), student_sketch_embs, cfg).loss;
  DistillConfig huber;
  huber.variant = DistillVariant::kHuber;
  huber.huber_delta = huber_delta;
  report.distill_term =
      distill_loss(student_sketch_embs, teacher_sketch_embs.detached(), huber);
  report.loss = add(report.rtl_term, scale(report.distill_term, lambda));
  return report;
}

}  // namespace sbir
