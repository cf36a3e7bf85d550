#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "sbir/artifacts.hpp"
#include "sbir/config_json.hpp"
#include "sbir/encoder.hpp"
#include "sbir/losses.hpp"
#include "sbir/synth.hpp"

namespace sbir {

enum class OptimizerKind { kAdam, kSgd };

/// Optimizer state across steps of one run. Adam keeps first/second moments
/// per parameter tensor; plain gradient descent keeps nothing.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step_count = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One update over a flat parameter list; returns the new parameters.
/// Gradients must be finite and shape-aligned with the parameters.
std::vector<Tensor> optimizer_step(const std::vector<Tensor>& params,
                                   const std::vector<Tensor>& grads, double lr,
                                   OptimizerState& state);

enum class TripletKind { kRtl, kClassicTriplet };
enum class DomainSide { kPhoto, kSketch };

struct TrainRtlOptions {
  RtlConfig loss;
  TripletKind kind = TripletKind::kRtl;
  TrainSchedule sched;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::size_t recall_k = 1;
  nlohmann::json invocation;  // extra context echoed into config.json
};

/// Pipeline A: joint photo/sketch encoder training on matched pairs.
/// Per epoch the train pairs are reshuffled (seeded) and consumed in full
/// batches; trailing partial batches are skipped. Stage-2 learning rate
/// applies from epoch index sched.stage_boundary_epoch. recall@1 on the
/// held-out split is evaluated before training, every eval_interval epochs
/// and at the end; the best checkpoint by that metric is retained.
/// A zero-epoch run writes initial-state artifacts with a header-only
/// metrics file.
RunArtifacts train_rtl(const CrossDomainDataset& ds, Encoder& photo_enc,
                       Encoder& sketch_enc, const TrainRtlOptions& opt,
                       const std::filesystem::path& out_dir);

struct DistillOptions {
  DistillConfig loss;
  TrainSchedule sched;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::size_t recall_k = 1;
  nlohmann::json invocation;
};

/// Pipeline B: response-based distillation of a frozen teacher into the
/// student on the teacher's input domain. Metrics track the train loss, the
/// student-teacher embedding MSE on the held-out split, and downstream
/// recall@1 with the counterpart encoder of the other domain.
RunArtifacts distill(const CrossDomainDataset& ds, DomainSide domain,
                     const Encoder& teacher, Encoder& student,
                     const Encoder& counterpart, const DistillOptions& opt,
                     const std::filesystem::path& out_dir);

struct DoubleGuidanceOptions {
  RtlConfig loss;
  double lambda = 1.0;
  double huber_delta = 1.0;
  TrainSchedule sched;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::size_t recall_k = 1;
  nlohmann::json invocation;
};

/// Pipeline C: finetunes a pre-distilled sketch student against two frozen
/// guides, the photo encoder (relative triplet term) and the sketch teacher
/// (Huber term). Guides stay untouched, parameters and running stats alike.
RunArtifacts finetune_double_guidance(const CrossDomainDataset& ds,
                                      const Encoder& frozen_photo,
                                      const Encoder& frozen_sketch_teacher,
                                      Encoder& student,
                                      const DoubleGuidanceOptions& opt,
                                      const std::filesystem::path& out_dir);

/// Eval-mode forward with no state mutation; usable on frozen encoders.
Tensor encode_eval(const Encoder& enc, const Tensor& x);

/// recall@k of the held-out split: gallery from test photos through the
/// photo encoder, queries from test sketches through the sketch encoder.
double evaluate_split(const Encoder& photo_enc, const Encoder& sketch_enc,
                      const CrossDomainDataset& ds, std::size_t k);

/// Loads both checkpoints, scores the held-out split and returns the metrics
/// record {run_id, k, recall, n_gallery, n_queries, seed}.
nlohmann::json evaluate_checkpoint(const std::filesystem::path& photo_ckpt,
                                   const std::filesystem::path& sketch_ckpt,
                                   const CrossDomainDataset& ds, std::size_t k,
                                   const std::string& run_id,
                                   std::uint64_t seed);

}  // namespace sbir
