#pragma once

#include <cstddef>

#include "sbir/tensor.hpp"

namespace sbir {

enum class DistanceKind { kEuclidean, kSquaredEuclidean };
enum class Reduction { kSum, kMeanOverNonzero };

/// Epsilon under the euclidean root so the distance gradient stays finite
/// when two points coincide (matched photo pairs hit distance 0 by
/// construction).
inline constexpr double kDistanceEps = 1e-12;

struct RtlConfig {
  double margin = 3.0;
  DistanceKind distance = DistanceKind::kEuclidean;
  Reduction reduction = Reduction::kSum;
  double max_guard_eps = 1e-8;
  /// When set, the weighting matrix is treated as a constant (stop-gradient)
  /// instead of backpropagating through the photo-photo distances.
  bool detach_weighting = false;
};

/// Scalar loss plus the intermediate matrices, exposed for testing. All
/// tensors stay bound to the tape the embeddings were computed on.
struct LossReport {
  Tensor loss;        // scalar
  Tensor dist_ap;     // bs           anchor-positive distances
  Tensor dist_an;     // bs x bs      anchor to every sketch
  Tensor tl_matrix;   // bs x bs      hinge terms, zero diagonal
  Tensor w_matrix;    // bs x bs      anchor-similarity weights in [0,1]
  Tensor rtl_matrix;  // bs x bs      weighted hinge terms
};

/// Entry (i,j) = D(a_i, b_j). Euclidean uses the guarded root, so exactly
/// coincident rows give exactly 0.
Tensor pairwise_distance_matrix(const Tensor& a, const Tensor& b,
                                DistanceKind distance);

/// Classic batch-all triplet loss with photos as anchors and index-aligned
/// sketches as positives: tl[i][j] = ReLU(d_ap[i] - d_an[i][j] + m) off the
/// diagonal. The report's w_matrix is all ones.
LossReport triplet_loss_matrix(const Tensor& photo_embs,
                               const Tensor& sketch_embs,
                               const RtlConfig& cfg);

/// W = M / max(max(M), max_guard_eps) with M the photo-photo distance
/// matrix. Entries lie in [0,1] with a zero diagonal; a batch of identical
/// photos yields all zeros through the guard.
Tensor relative_weighting_matrix(const Tensor& photo_embs,
                                 const RtlConfig& cfg);

/// Relative triplet loss: the triplet matrix scaled elementwise by the
/// anchor-similarity weights before reduction. Gradient flows through the
/// weighting unless cfg.detach_weighting is set.
LossReport rtl_loss(const Tensor& photo_embs, const Tensor& sketch_embs,
                    const RtlConfig& cfg);

enum class DistillVariant { kMse, kMae, kMseMae, kHuber, kKl, kKlSoftmax };

struct DistillConfig {
  DistillVariant variant = DistillVariant::kHuber;
  double huber_delta = 1.0;
  double kl_temperature = 1.0;
  /// Weight on the MSE term of the mse+mae mix; the MAE term gets 1 - mix.
  double mse_mae_mix = 0.5;
};

/// Response-based distillation objective between a student batch and a
/// frozen teacher batch of equal shape. The teacher side never receives
/// gradient. Elementwise variants (mse, mae, mse+mae, huber) reduce by the
/// mean over batch and dimensions. KL variants apply a temperature softmax
/// over the embedding dimension to both sides and return the mean per-row
/// KL(teacher || student); kl+softmax leaves the teacher softmax untempered.
Tensor distill_loss(const Tensor& student_embs, const Tensor& teacher_embs,
                    const DistillConfig& cfg);

struct DoubleGuidanceReport {
  Tensor loss;          // rtl_term + lambda * distill_term
  Tensor rtl_term;
  Tensor distill_term;  // Huber regression to the sketch teacher
};

/// Finetuning objective with two frozen guides: the relative triplet loss
/// against frozen photo embeddings plus lambda times a Huber regression to
/// frozen teacher sketch embeddings. Both guide batches are detached.
DoubleGuidanceReport double_guidance_loss(const Tensor& student_sketch_embs,
                                          const Tensor& frozen_photo_embs,
                                          const Tensor& teacher_sketch_embs,
                                          const RtlConfig& cfg, double lambda,
                                          double huber_delta = 1.0);

}  // namespace sbir
