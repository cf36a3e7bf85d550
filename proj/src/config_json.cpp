#include "sbir/config_json.hpp"

#include <stdexcept>

namespace sbir {

namespace {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <class T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback,
         const std::string& context) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(context + ": bad value for '" + key + "'");
  }
}

}  // namespace

void validate(const TrainSchedule& sched) {
  if (!(sched.lr_stage1 > 0.0) || !(sched.lr_stage2 > 0.0)) {
    throw std::invalid_argument("schedule: learning rates must be positive");
  }
  if (sched.batch_size < 2) {
    throw std::invalid_argument("schedule: batch_size must be at least 2");
  }
  if (sched.eval_interval == 0) {
    throw std::invalid_argument("schedule: eval_interval must be >= 1");
  }
  if (sched.epochs_total > 0 &&
      (sched.stage_boundary_epoch == 0 ||
       sched.stage_boundary_epoch > sched.epochs_total)) {
    throw std::invalid_argument(
        "schedule: stage_boundary_epoch must be in [1, epochs_total]");
  }
}

void require_keys(const nlohmann::json& j,
                  const std::vector<std::string>& allowed,
                  const std::string& context) {
  if (!j.is_object()) {
    throw ConfigError(context + ": expected an object");
  }
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool known = false;
    for (const auto& a : allowed) {
      if (key == a) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError(context + ": unknown key '" + key + "'");
    }
  }
}

nlohmann::json to_json(const EncoderConfig& cfg) {
  std::string head = cfg.head == HeadKind::kBatchNorm ? "batchnorm"
                     : cfg.head == HeadKind::kL2      ? "l2"
                                                      : "none";
  return nlohmann::json{
      {"input_dim", cfg.input_dim},       {"hidden_dims", cfg.hidden_dims},
      {"embedding_dim", cfg.embedding_dim}, {"head", head},
      {"capacity_tag", cfg.capacity_tag}, {"bn_momentum", cfg.bn_momentum},
      {"bn_eps", cfg.bn_eps},
  };
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j,
                                       const std::string& context) {
  require_keys(j,
               {"input_dim", "hidden_dims", "embedding_dim", "head",
                "capacity_tag", "bn_momentum", "bn_eps"},
               context);
  EncoderConfig cfg;
  if (j.contains("capacity_tag") && !j.contains("hidden_dims")) {
    cfg = capacity_config(j.at("capacity_tag").get<std::string>());
  }
  cfg.input_dim = get_or<std::size_t>(j, "input_dim", cfg.input_dim, context);
  cfg.hidden_dims = get_or<std::vector<std::size_t>>(j, "hidden_dims",
                                                     cfg.hidden_dims, context);
  cfg.embedding_dim =
      get_or<std::size_t>(j, "embedding_dim", cfg.embedding_dim, context);
  cfg.capacity_tag =
      get_or<std::string>(j, "capacity_tag", cfg.capacity_tag, context);
  cfg.bn_momentum = get_or<double>(j, "bn_momentum", cfg.bn_momentum, context);
  cfg.bn_eps = get_or<double>(j, "bn_eps", cfg.bn_eps, context);
  std::string head = get_or<std::string>(j, "head", "batchnorm", context);
  if (head == "batchnorm") {
    cfg.head = HeadKind::kBatchNorm;
  } else if (head == "l2") {
    cfg.head = HeadKind::kL2;
  } else if (head == "none") {
    cfg.head = HeadKind::kNone;
  } else {
    throw ConfigError(context + ": unknown head '" + head + "'");
  }
  return cfg;
}

nlohmann::json to_json(const RtlConfig& cfg) {
  return nlohmann::json{
      {"margin", cfg.margin},
      {"distance", cfg.distance == DistanceKind::kEuclidean
                       ? "euclidean"
                       : "squared-euclidean"},
      {"reduction",
       cfg.reduction == Reduction::kSum ? "sum" : "mean-over-nonzero"},
      {"max_guard_eps", cfg.max_guard_eps},
      {"detach_weighting", cfg.detach_weighting},
  };
}

RtlConfig rtl_config_from_json(const nlohmann::json& j,
                               const std::string& context) {
  require_keys(j,
               {"margin", "distance", "reduction", "max_guard_eps",
                "detach_weighting"},
               context);
  RtlConfig cfg;
  cfg.margin = get_or<double>(j, "margin", cfg.margin, context);
  cfg.max_guard_eps =
      get_or<double>(j, "max_guard_eps", cfg.max_guard_eps, context);
  cfg.detach_weighting =
      get_or<bool>(j, "detach_weighting", cfg.detach_weighting, context);
  std::string distance =
      get_or<std::string>(j, "distance", "euclidean", context);
  if (distance == "euclidean") {
    cfg.distance = DistanceKind::kEuclidean;
  } else if (distance == "squared-euclidean") {
    cfg.distance = DistanceKind::kSquaredEuclidean;
  } else {
    throw ConfigError(context + ": unknown distance '" + distance + "'");
  }
  std::string reduction = get_or<std::string>(j, "reduction", "sum", context);
  if (reduction == "sum") {
    cfg.reduction = Reduction::kSum;
  } else if (reduction == "mean-over-nonzero") {
    cfg.reduction = Reduction::kMeanOverNonzero;
  } else {
    throw ConfigError(context + ": unknown reduction '" + reduction + "'");
  }
  if (cfg.margin < 0.0) throw ConfigError(context + ": margin must be >= 0");
  if (!(cfg.max_guard_eps > 0.0)) {
    throw ConfigError(context + ": max_guard_eps must be > 0");
  }
  return cfg;
}

std::string distill_variant_name(DistillVariant v) {
  switch (v) {
    case DistillVariant::kMse: return "mse";
    case DistillVariant::kMae: return "mae";
    case DistillVariant::kMseMae: return "mse+mae";
    case DistillVariant::kHuber: return "huber";
    case DistillVariant::kKl: return "kl";
    case DistillVariant::kKlSoftmax: return "kl+softmax";
  }
  return "huber";
}

DistillVariant distill_variant_from_name(const std::string& name) {
  if (name == "mse") return DistillVariant::kMse;
  if (name == "mae") return DistillVariant::kMae;
  if (name == "mse+mae") return DistillVariant::kMseMae;
  if (name == "huber") return DistillVariant::kHuber;
  if (name == "kl") return DistillVariant::kKl;
  if (name == "kl+softmax") return DistillVariant::kKlSoftmax;
  throw std::invalid_argument("unknown distillation variant '" + name + "'");
}

nlohmann::json to_json(const DistillConfig& cfg) {
  return nlohmann::json{
      {"variant", distill_variant_name(cfg.variant)},
      {"huber_delta", cfg.huber_delta},
      {"kl_temperature", cfg.kl_temperature},
      {"mse_mae_mix", cfg.mse_mae_mix},
  };
}

DistillConfig distill_config_from_json(const nlohmann::json& j,
                                       const std::string& context) {
  require_keys(j, {"variant", "huber_delta", "kl_temperature", "mse_mae_mix"},
               context);
  DistillConfig cfg;
  cfg.variant = distill_variant_from_name(
      get_or<std::string>(j, "variant", "huber", context));
  cfg.huber_delta = get_or<double>(j, "huber_delta", cfg.huber_delta, context);
  cfg.kl_temperature =
      get_or<double>(j, "kl_temperature", cfg.kl_temperature, context);
  cfg.mse_mae_mix = get_or<double>(j, "mse_mae_mix", cfg.mse_mae_mix, context);
  return cfg;
}

nlohmann::json to_json(const TrainSchedule& sched) {
  return nlohmann::json{
      {"epochs_total", sched.epochs_total},
      {"lr_stage1", sched.lr_stage1},
      {"lr_stage2", sched.lr_stage2},
      {"stage_boundary_epoch", sched.stage_boundary_epoch},
      {"batch_size", sched.batch_size},
      {"seed", sched.seed},
      {"eval_interval", sched.eval_interval},
  };
}

TrainSchedule schedule_from_json(const nlohmann::json& j,
                                 const std::string& context) {
  require_keys(j,
               {"epochs_total", "lr_stage1", "lr_stage2",
                "stage_boundary_epoch", "batch_size", "seed", "eval_interval"},
               context);
  TrainSchedule sched;
  sched.epochs_total =
      get_or<std::size_t>(j, "epochs_total", sched.epochs_total, context);
  sched.lr_stage1 = get_or<double>(j, "lr_stage1", sched.lr_stage1, context);
  sched.lr_stage2 = get_or<double>(j, "lr_stage2", sched.lr_stage2, context);
  sched.stage_boundary_epoch = get_or<std::size_t>(
      j, "stage_boundary_epoch", sched.stage_boundary_epoch, context);
  sched.batch_size =
      get_or<std::size_t>(j, "batch_size", sched.batch_size, context);
  sched.seed = get_or<std::uint64_t>(j, "seed", sched.seed, context);
  sched.eval_interval =
      get_or<std::size_t>(j, "eval_interval", sched.eval_interval, context);
  validate(sched);
  return sched;
}

nlohmann::json to_json(const SynthSpec& spec) {
  return nlohmann::json{
      {"n_categories", spec.n_categories},
      {"photos_per_category", spec.photos_per_category},
      {"sketches_per_photo", spec.sketches_per_photo},
      {"photo_dim", spec.photo_dim},
      {"sketch_dim", spec.sketch_dim},
      {"projection_seed", spec.domain_gap.projection_seed},
      {"dropout_fraction", spec.domain_gap.dropout_fraction},
      {"noise_sigma", spec.domain_gap.noise_sigma},
      {"ambiguity_rate", spec.ambiguity_rate},
      {"sigma_dup", spec.sigma_dup},
      {"split_fraction", spec.split_fraction},
      {"seed", spec.seed},
      {"center_sigma", spec.center_sigma},
      {"instance_sigma", spec.instance_sigma},
  };
}

SynthSpec synth_spec_from_json(const nlohmann::json& j,
                               const std::string& context) {
  require_keys(j,
               {"n_categories", "photos_per_category", "sketches_per_photo",
                "photo_dim", "sketch_dim", "projection_seed",
                "dropout_fraction", "noise_sigma", "ambiguity_rate",
                "sigma_dup", "split_fraction", "seed", "center_sigma",
                "instance_sigma"},
               context);
  SynthSpec spec;
  spec.n_categories =
      get_or<std::size_t>(j, "n_categories", spec.n_categories, context);
  spec.photos_per_category = get_or<std::size_t>(
      j, "photos_per_category", spec.photos_per_category, context);
  spec.sketches_per_photo = get_or<std::size_t>(
      j, "sketches_per_photo", spec.sketches_per_photo, context);
  spec.photo_dim = get_or<std::size_t>(j, "photo_dim", spec.photo_dim, context);
  spec.sketch_dim =
      get_or<std::size_t>(j, "sketch_dim", spec.sketch_dim, context);
  spec.domain_gap.projection_seed = get_or<std::uint64_t>(
      j, "projection_seed", spec.domain_gap.projection_seed, context);
  spec.domain_gap.dropout_fraction = get_or<double>(
      j, "dropout_fraction", spec.domain_gap.dropout_fraction, context);
  spec.domain_gap.noise_sigma =
      get_or<double>(j, "noise_sigma", spec.domain_gap.noise_sigma, context);
  spec.ambiguity_rate =
      get_or<double>(j, "ambiguity_rate", spec.ambiguity_rate, context);
  spec.sigma_dup = get_or<double>(j, "sigma_dup", spec.sigma_dup, context);
  spec.split_fraction =
      get_or<double>(j, "split_fraction", spec.split_fraction, context);
  spec.seed = get_or<std::uint64_t>(j, "seed", spec.seed, context);
  spec.center_sigma =
      get_or<double>(j, "center_sigma", spec.center_sigma, context);
  spec.instance_sigma =
      get_or<double>(j, "instance_sigma", spec.instance_sigma, context);
  validate(spec);
  return spec;
}

}  // namespace sbir
