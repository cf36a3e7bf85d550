// Command-line front end: dataset generation, the three training pipelines,
// retrieval evaluation, the descriptor-based ambiguity audit, and metrics
// export. Every subcommand validates its full configuration before any
// compute starts and echoes the effective config into its artifacts.
//
// Exit codes: 0 success, 1 invalid usage/config, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <tuple>

#include <CLI11.hpp>
#include <json.hpp>

#include "sbir/artifacts.hpp"
#include "sbir/config_json.hpp"
#include "sbir/encoder.hpp"
#include "sbir/pipeline.hpp"
#include "sbir/retrieval.hpp"
#include "sbir/rmac.hpp"
#include "sbir/rng.hpp"
#include "sbir/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Input problem: bad flags, unreadable or invalid config, missing files.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file: " + path.string());
  }
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// Runs the setup phase of a subcommand; any failure there is an input
/// problem (exit 1), not a runtime one.
template <class Fn>
auto validated(Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

std::string config_hash(const json& j) {
  std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

sbir::OptimizerKind optimizer_from(const std::string& name) {
  if (name == "adam") return sbir::OptimizerKind::kAdam;
  if (name == "sgd") return sbir::OptimizerKind::kSgd;
  throw ConfigError("unknown optimizer '" + name + "' (adam|sgd)");
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::string out;
};

fs::path resolve_out(const json& cfg, const Overrides& ov, const char* what) {
  if (!ov.out.empty()) return ov.out;
  if (cfg.contains("out")) return cfg.at("out").get<std::string>();
  throw ConfigError(std::string(what) +
                    ": no output directory (config key 'out' or --out)");
}

json invocation_echo(const std::string& subcommand, const json& cfg,
                     const fs::path& config_path) {
  return json{{"subcommand", subcommand},
              {"config_path", config_path.string()},
              {"effective_config", cfg}};
}

// ---- subcommands ------------------------------------------------------------

int run_gen_data(const fs::path& spec_path, const Overrides& ov) {
  json raw = load_json_file(spec_path);
  json spec_fields = raw;
  spec_fields.erase("out");
  sbir::SynthSpec spec = validated([&] {
    return sbir::synth_spec_from_json(spec_fields, spec_path.string());
  });
  if (ov.seed) spec.seed = *ov.seed;
  fs::path out = resolve_out(raw, ov, "gen-data");

  sbir::CrossDomainDataset ds = sbir::generate_dataset(spec);
  sbir::save_dataset(ds, out);
  std::cout << "dataset: " << ds.n_photos() << " photos, " << ds.n_sketches()
            << " sketches, " << ds.ambiguous_pairs.size()
            << " ambiguous pairs -> " << out.string() << "\n";
  return 0;
}

int run_train_rtl(const fs::path& config_path, const Overrides& ov) {
  json cfg = load_json_file(config_path);
  sbir::require_keys(cfg,
                     {"data", "out", "loss_kind", "loss", "schedule",
                      "optimizer", "recall_k", "photo_encoder",
                      "sketch_encoder", "photo_seed", "sketch_seed"},
                     config_path.string());

  auto [data_dir, opt, photo_cfg, sketch_cfg, photo_seed, sketch_seed] =
      validated([&] {
        if (!cfg.contains("data")) throw ConfigError("missing 'data'");
        if (!cfg.contains("photo_encoder") || !cfg.contains("sketch_encoder")) {
          throw ConfigError("train-rtl needs photo_encoder and sketch_encoder");
        }
        fs::path data = cfg.at("data").get<std::string>();
        sbir::TrainRtlOptions o;
        if (cfg.contains("loss")) {
          o.loss = sbir::rtl_config_from_json(cfg.at("loss"), "loss");
        }
        std::string kind = cfg.value("loss_kind", "rtl");
        if (kind == "rtl") {
          o.kind = sbir::TripletKind::kRtl;
        } else if (kind == "triplet") {
          o.kind = sbir::TripletKind::kClassicTriplet;
        } else {
          throw ConfigError("unknown loss_kind '" + kind + "' (rtl|triplet)");
        }
        if (cfg.contains("schedule")) {
          o.sched = sbir::schedule_from_json(cfg.at("schedule"), "schedule");
        }
        o.optimizer = optimizer_from(cfg.value("optimizer", "adam"));
        o.recall_k = cfg.value("recall_k", std::size_t{1});
        sbir::EncoderConfig pc = sbir::encoder_config_from_json(
            cfg.at("photo_encoder"), "photo_encoder");
        sbir::EncoderConfig sc = sbir::encoder_config_from_json(
            cfg.at("sketch_encoder"), "sketch_encoder");
        return std::tuple{data, o, pc, sc,
                          cfg.value("photo_seed", std::uint64_t{1}),
                          cfg.value("sketch_seed", std::uint64_t{2})};
      });
  if (ov.seed) opt.sched.seed = *ov.seed;
  fs::path out = resolve_out(cfg, ov, "train-rtl");
  sbir::CrossDomainDataset ds =
      validated([&] { return sbir::load_dataset(data_dir); });

  sbir::Encoder photo = sbir::build_encoder(photo_cfg, photo_seed);
  sbir::Encoder sketch = sbir::build_encoder(sketch_cfg, sketch_seed);
  opt.invocation = invocation_echo("train-rtl", cfg, config_path);
  sbir::RunArtifacts art = sbir::train_rtl(ds, photo, sketch, opt, out);
  std::cout << "train-rtl: best recall@" << opt.recall_k << " = "
            << sbir::format_metric(art.best_recall) << " (epoch "
            << art.best_epoch
            << "), final = " << sbir::format_metric(art.final_recall) << " -> "
            << out.string() << "\n";
  return 0;
}

int run_distill(const fs::path& config_path, const Overrides& ov) {
  json cfg = load_json_file(config_path);
  sbir::require_keys(cfg,
                     {"data", "out", "domain", "teacher_checkpoint",
                      "counterpart_checkpoint", "student", "student_seed",
                      "loss", "schedule", "optimizer", "recall_k"},
                     config_path.string());

  sbir::DistillOptions opt;
  sbir::DomainSide domain = sbir::DomainSide::kSketch;
  sbir::CrossDomainDataset ds;
  sbir::Encoder teacher, counterpart, student;
  validated([&]() -> int {
    std::string dom = cfg.value("domain", "sketch");
    if (dom == "sketch") {
      domain = sbir::DomainSide::kSketch;
    } else if (dom == "photo") {
      domain = sbir::DomainSide::kPhoto;
    } else {
      throw ConfigError("unknown domain '" + dom + "' (sketch|photo)");
    }
    if (cfg.contains("loss")) {
      opt.loss = sbir::distill_config_from_json(cfg.at("loss"), "loss");
    }
    if (cfg.contains("schedule")) {
      opt.sched = sbir::schedule_from_json(cfg.at("schedule"), "schedule");
    }
    opt.optimizer = optimizer_from(cfg.value("optimizer", "adam"));
    opt.recall_k = cfg.value("recall_k", std::size_t{1});
    ds = sbir::load_dataset(cfg.at("data").get<std::string>());
    teacher =
        sbir::load_encoder(cfg.at("teacher_checkpoint").get<std::string>());
    teacher.frozen = true;
    counterpart = sbir::load_encoder(
        cfg.at("counterpart_checkpoint").get<std::string>());
    counterpart.frozen = true;
    student = sbir::build_encoder(
        sbir::encoder_config_from_json(cfg.at("student"), "student"),
        cfg.value("student_seed", std::uint64_t{3}));
    return 0;
  });
  if (ov.seed) opt.sched.seed = *ov.seed;
  fs::path out = resolve_out(cfg, ov, "distill");

  opt.invocation = invocation_echo("distill", cfg, config_path);
  sbir::RunArtifacts art =
      sbir::distill(ds, domain, teacher, student, counterpart, opt, out);
  std::cout << "distill: best recall@" << opt.recall_k << " = "
            << sbir::format_metric(art.best_recall)
            << ", final = " << sbir::format_metric(art.final_recall) << " -> "
            << out.string() << "\n";
  return 0;
}

int run_finetune_dg(const fs::path& config_path, const Overrides& ov) {
  json cfg = load_json_file(config_path);
  sbir::require_keys(cfg,
                     {"data", "out", "photo_checkpoint", "teacher_checkpoint",
                      "student_checkpoint", "lambda", "huber_delta", "loss",
                      "schedule", "optimizer", "recall_k"},
                     config_path.string());

  sbir::DoubleGuidanceOptions opt;
  sbir::CrossDomainDataset ds;
  sbir::Encoder photo, teacher, student;
  validated([&]() -> int {
    if (cfg.contains("loss")) {
      opt.loss = sbir::rtl_config_from_json(cfg.at("loss"), "loss");
    }
    if (cfg.contains("schedule")) {
      opt.sched = sbir::schedule_from_json(cfg.at("schedule"), "schedule");
    }
    opt.lambda = cfg.value("lambda", 1.0);
    opt.huber_delta = cfg.value("huber_delta", 1.0);
    opt.optimizer = optimizer_from(cfg.value("optimizer", "adam"));
    opt.recall_k = cfg.value("recall_k", std::size_t{1});
    ds = sbir::load_dataset(cfg.at("data").get<std::string>());
    photo = sbir::load_encoder(cfg.at("photo_checkpoint").get<std::string>());
    photo.frozen = true;
    teacher =
        sbir::load_encoder(cfg.at("teacher_checkpoint").get<std::string>());
    teacher.frozen = true;
    student =
        sbir::load_encoder(cfg.at("student_checkpoint").get<std::string>());
    student.frozen = false;
    return 0;
  });
  if (ov.seed) opt.sched.seed = *ov.seed;
  fs::path out = resolve_out(cfg, ov, "finetune-dg");

  opt.invocation = invocation_echo("finetune-dg", cfg, config_path);
  sbir::RunArtifacts art =
      sbir::finetune_double_guidance(ds, photo, teacher, student, opt, out);
  std::cout << "finetune-dg: best recall@" << opt.recall_k << " = "
            << sbir::format_metric(art.best_recall)
            << ", final = " << sbir::format_metric(art.final_recall) << " -> "
            << out.string() << "\n";
  return 0;
}

int run_eval(const fs::path& photo_ckpt, const fs::path& sketch_ckpt,
             const fs::path& data_dir, std::size_t k, const fs::path& out,
             std::string run_id, std::uint64_t seed) {
  if (!fs::exists(photo_ckpt)) {
    throw ConfigError("photo checkpoint not found: " + photo_ckpt.string());
  }
  if (!fs::exists(sketch_ckpt)) {
    throw ConfigError("sketch checkpoint not found: " + sketch_ckpt.string());
  }
  sbir::CrossDomainDataset ds =
      validated([&] { return sbir::load_dataset(data_dir); });
  if (run_id.empty()) {
    run_id = "eval-" + config_hash(json{{"photo", photo_ckpt.string()},
                                        {"sketch", sketch_ckpt.string()},
                                        {"k", k},
                                        {"seed", seed}});
  }
  json record =
      sbir::evaluate_checkpoint(photo_ckpt, sketch_ckpt, ds, k, run_id, seed);
  sbir::write_recall_json(out, record.at("run_id"), record.at("k"),
                          record.at("recall"), record.at("n_gallery"),
                          record.at("n_queries"), record.at("seed"));
  std::cout << "recall@" << k << " = "
            << sbir::format_metric(record.at("recall").get<double>()) << " -> "
            << out.string() << "\n";
  return 0;
}

int run_rmac_audit(const std::string& features, const std::string& synth_spec,
                   std::size_t top_k, const fs::path& out,
                   const std::string& dump_features) {
  sbir::Tensor descriptors;
  json echo{{"subcommand", "rmac-audit"}, {"top_k", top_k}};
  if (!features.empty()) {
    if (!fs::exists(features)) {
      throw ConfigError("descriptor dump not found: " + features);
    }
    descriptors = validated([&] { return sbir::load_descriptors(features); });
    echo["features"] = features;
  } else {
    json spec_json = load_json_file(synth_spec);
    sbir::require_keys(spec_json,
                       {"count", "channels", "sizes", "seed", "scales",
                        "stride_fraction", "pooling", "alpha"},
                       synth_spec);
    auto count = spec_json.value("count", std::size_t{32});
    sbir::FeatureMapSpec fm;
    fm.channels = spec_json.value("channels", std::size_t{8});
    fm.sizes = spec_json.value("sizes", std::vector<std::size_t>{12, 16, 24});
    fm.seed = spec_json.value("seed", std::uint64_t{1});
    sbir::RmacConfig rc;
    rc.scales = spec_json.value("scales", std::size_t{3});
    rc.stride_fraction = spec_json.value("stride_fraction", 0.6);
    rc.alpha = spec_json.value("alpha", 10.0);
    std::string pooling = spec_json.value("pooling", "max");
    if (pooling == "max") {
      rc.pooling = sbir::RegionPooling::kMax;
    } else if (pooling == "alpha-sum") {
      rc.pooling = sbir::RegionPooling::kAlphaSum;
    } else {
      throw ConfigError("unknown pooling '" + pooling + "' (max|alpha-sum)");
    }
    if (count < 2) throw ConfigError("rmac-audit: count must be >= 2");
    echo["synth"] = spec_json;

    // One multi-resolution descriptor per synthetic photo.
    std::vector<double> rows;
    for (std::size_t i = 0; i < count; ++i) {
      sbir::FeatureMapSpec one = fm;
      one.seed = sbir::derive_seed(fm.seed, i);
      std::vector<sbir::FeatureVolume> volumes = sbir::synth_feature_maps(one);
      std::vector<double> d = sbir::multires_rmac(volumes, rc);
      rows.insert(rows.end(), d.begin(), d.end());
    }
    descriptors = sbir::Tensor({count, fm.channels}, std::move(rows));
  }

  if (!dump_features.empty()) {
    sbir::save_descriptors(descriptors, dump_features);
    echo["dump_features"] = dump_features;
  }
  auto pairs = sbir::find_ambiguous_pairs(descriptors, top_k);
  sbir::write_pair_report(pairs, out);
  std::ofstream cfg_out(out.string() + ".config.json");
  cfg_out << echo.dump(2) << '\n';
  std::cout << "rmac-audit: ranked " << pairs.size() << " pairs -> "
            << out.string() << "\n";
  return 0;
}

int run_export(const fs::path& run_dir, const std::string& format,
               const fs::path& out) {
  if (format != "csv" && format != "json") {
    throw ConfigError("unknown format '" + format + "' (csv|json)");
  }
  fs::path metrics = run_dir / "metrics.csv";
  if (!fs::exists(metrics)) {
    throw ConfigError("no metrics found at " + metrics.string());
  }
  sbir::MetricsTable table =
      validated([&] { return sbir::read_metrics_csv(metrics); });
  if (format == "csv") {
    sbir::write_metrics_csv(table, out);
  } else {
    std::ofstream os(out);
    if (!os) throw ConfigError("cannot open " + out.string());
    os << sbir::metrics_to_json(table).dump(2) << '\n';
  }
  std::cout << "export: " << table.rows.size() << " rows -> " << out.string()
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sbir: a seeded cross-domain metric-learning lab"};
  app.require_subcommand(1);

  Overrides ov;
  std::uint64_t seed_flag = 0;
  bool seed_set = false;
  auto add_seed = [&](CLI::App* sub) {
    sub->add_option_function<std::uint64_t>(
        "--seed",
        [&](const std::uint64_t& v) {
          seed_flag = v;
          seed_set = true;
        },
        "override the run seed");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic benchmark");
  std::string gen_spec;
  gen->add_option("--spec", gen_spec, "dataset spec JSON")->required();
  gen->add_option("--out", ov.out, "output directory");
  add_seed(gen);

  std::string train_cfg;
  auto* train =
      app.add_subcommand("train-rtl", "joint dual-encoder training");
  train->add_option("--config", train_cfg, "run config JSON")->required();
  train->add_option("--out", ov.out, "output directory override");
  add_seed(train);

  std::string distill_cfg;
  auto* dist =
      app.add_subcommand("distill", "teacher-to-student distillation");
  dist->add_option("--config", distill_cfg, "run config JSON")->required();
  dist->add_option("--out", ov.out, "output directory override");
  add_seed(dist);

  std::string dg_cfg;
  auto* dg = app.add_subcommand("finetune-dg",
                                "double-guidance finetuning of a student");
  dg->add_option("--config", dg_cfg, "run config JSON")->required();
  dg->add_option("--out", ov.out, "output directory override");
  add_seed(dg);

  auto* ev = app.add_subcommand("eval", "recall@k of a checkpoint pair");
  std::string ev_photo, ev_sketch, ev_data, ev_out, ev_run_id;
  std::size_t ev_k = 1;
  std::uint64_t ev_seed = 0;
  ev->add_option("--photo", ev_photo, "photo encoder checkpoint")->required();
  ev->add_option("--sketch", ev_sketch, "sketch encoder checkpoint")
      ->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--k", ev_k, "retrieval depth");
  ev->add_option("--out", ev_out, "metrics JSON path")->required();
  ev->add_option("--run-id", ev_run_id, "run identifier");
  ev->add_option("--seed", ev_seed, "seed recorded in the metrics record");

  auto* audit = app.add_subcommand(
      "rmac-audit", "rank most-similar photo pairs by descriptor distance");
  std::string au_features, au_synth, au_dump, au_out;
  std::size_t au_topk = 100;
  auto* feat_opt =
      audit->add_option("--features", au_features, "descriptor dump to rank");
  auto* synth_opt = audit->add_option("--synth-features", au_synth,
                                      "synthetic feature-map spec JSON");
  feat_opt->excludes(synth_opt);
  audit->add_option("--top-k", au_topk, "pairs to keep");
  audit->add_option("--out", au_out, "pair report CSV")->required();
  audit->add_option("--dump-features", au_dump,
                    "also dump computed descriptors here");

  auto* ex = app.add_subcommand("export", "re-serialize run metrics");
  std::string ex_run, ex_format = "csv", ex_out;
  ex->add_option("--run", ex_run, "run directory")->required();
  ex->add_option("--format", ex_format, "csv or json");
  ex->add_option("--out", ex_out, "output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exit 0
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 1;
  }

  if (seed_set) ov.seed = seed_flag;

  try {
    if (gen->parsed()) return run_gen_data(gen_spec, ov);
    if (train->parsed()) return run_train_rtl(train_cfg, ov);
    if (dist->parsed()) return run_distill(distill_cfg, ov);
    if (dg->parsed()) return run_finetune_dg(dg_cfg, ov);
    if (ev->parsed()) {
      return run_eval(ev_photo, ev_sketch, ev_data, ev_k, ev_out, ev_run_id,
                      ev_seed);
    }
    if (audit->parsed()) {
      if (au_features.empty() && au_synth.empty()) {
        throw ConfigError("rmac-audit needs --features or --synth-features");
      }
      return run_rmac_audit(au_features, au_synth, au_topk, au_out, au_dump);
    }
    if (ex->parsed()) return run_export(ex_run, ex_format, ex_out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
