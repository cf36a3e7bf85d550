#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "sbir/encoder.hpp"
#include "sbir/losses.hpp"
#include "sbir/synth.hpp"

namespace sbir {

struct TrainSchedule {
  std::size_t epochs_total = 200;
  double lr_stage1 = 1e-3;
  double lr_stage2 = 1e-5;
  /// Stage 1 covers epoch indices [0, stage_boundary_epoch); stage 2 applies
  /// exactly from index stage_boundary_epoch on.
  std::size_t stage_boundary_epoch = 100;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  std::size_t eval_interval = 10;
};

void validate(const TrainSchedule& sched);

/// Rejects keys outside the allowed set; context names the config location
/// in error messages.
void require_keys(const nlohmann::json& j,
                  const std::vector<std::string>& allowed,
                  const std::string& context);

nlohmann::json to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const nlohmann::json& j,
                                       const std::string& context);

nlohmann::json to_json(const RtlConfig& cfg);
RtlConfig rtl_config_from_json(const nlohmann::json& j,
                               const std::string& context);

nlohmann::json to_json(const DistillConfig& cfg);
DistillConfig distill_config_from_json(const nlohmann::json& j,
                                       const std::string& context);

nlohmann::json to_json(const TrainSchedule& sched);
TrainSchedule schedule_from_json(const nlohmann::json& j,
                                 const std::string& context);

nlohmann::json to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const nlohmann::json& j,
                               const std::string& context);

std::string distill_variant_name(DistillVariant v);
DistillVariant distill_variant_from_name(const std::string& name);

}  // namespace sbir
