#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "sbir/artifacts.hpp"
#include "sbir/synth.hpp"

// The built binary is driven as a subprocess; SBIR_CLI_BIN comes from the
// build system.

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CmdResult {
  int exit_code;
  std::string output;  // stdout + stderr
};

CmdResult run_cli(const std::string& args) {
  fs::path log = fs::temp_directory_path() / "sbir_cli_out.txt";
  std::string cmd =
      std::string(SBIR_CLI_BIN) + " " + args + " > " + log.string() + " 2>&1";
  int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::string output(std::istreambuf_iterator<char>(in), {});
  int code = -1;
  if (WIFEXITED(status)) code = WEXITSTATUS(status);
  return {code, output};
}

fs::path work_dir() {
  fs::path dir = fs::temp_directory_path() / "sbir_cli_work";
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p);
  out << content;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

json tiny_dataset_spec() {
  return json{{"n_categories", 4},      {"photos_per_category", 6},
              {"sketches_per_photo", 2}, {"photo_dim", 12},
              {"sketch_dim", 10},        {"ambiguity_rate", 0.1},
              {"seed", 3}};
}

json tiny_train_config(const fs::path& data, const fs::path& out) {
  return json{
      {"data", data.string()},
      {"out", out.string()},
      {"loss_kind", "rtl"},
      {"schedule",
       {{"epochs_total", 4},
        {"stage_boundary_epoch", 2},
        {"lr_stage1", 3e-3},
        {"lr_stage2", 3e-4},
        {"batch_size", 8},
        {"seed", 7},
        {"eval_interval", 2}}},
      {"photo_encoder",
       {{"input_dim", 12}, {"hidden_dims", {16}}, {"embedding_dim", 8}}},
      {"sketch_encoder",
       {{"input_dim", 10}, {"hidden_dims", {16}}, {"embedding_dim", 8}}},
  };
}

}  // namespace

TEST_CASE("cli: unknown flags and subcommands exit 1 with usage") {
  CmdResult r = run_cli("definitely-not-a-subcommand");
  CHECK(r.exit_code == 1);
  CmdResult r2 = run_cli("gen-data --bogus-flag x");
  CHECK(r2.exit_code == 1);
  CHECK(r2.output.find("Usage") != std::string::npos);
  CmdResult help = run_cli("--help");
  CHECK(help.exit_code == 0);
}

TEST_CASE("cli: gen-data happy path writes a reloadable dataset") {
  fs::path dir = work_dir();
  write_file(dir / "spec.json", tiny_dataset_spec().dump());
  CmdResult r = run_cli("gen-data --spec " + (dir / "spec.json").string() +
                        " --out " + (dir / "data").string());
  CHECK(r.exit_code == 0);
  sbir::CrossDomainDataset ds = sbir::load_dataset(dir / "data");
  CHECK(ds.n_photos() > 24);  // originals plus injected duplicates
  fs::remove_all(dir);
}

TEST_CASE("cli: gen-data rejects unknown keys before any compute") {
  fs::path dir = work_dir();
  json spec = tiny_dataset_spec();
  spec["typo_key"] = 1;
  write_file(dir / "spec.json", spec.dump());
  CmdResult r = run_cli("gen-data --spec " + (dir / "spec.json").string() +
                        " --out " + (dir / "data").string());
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("typo_key") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "data"));
  fs::remove_all(dir);
}

TEST_CASE("cli: train-rtl with a missing config names the path") {
  CmdResult r = run_cli("train-rtl --config /nonexistent/missing.json");
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("missing.json") != std::string::npos);
}

TEST_CASE("cli: train-rtl trains, echoes config and eval scores it") {
  fs::path dir = work_dir();
  write_file(dir / "spec.json", tiny_dataset_spec().dump());
  REQUIRE(run_cli("gen-data --spec " + (dir / "spec.json").string() +
                  " --out " + (dir / "data").string())
              .exit_code == 0);

  write_file(dir / "train.json",
             tiny_train_config(dir / "data", dir / "run").dump());
  CmdResult r =
      run_cli("train-rtl --config " + (dir / "train.json").string());
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(dir / "run/config.json"));
  CHECK(fs::exists(dir / "run/metrics.csv"));
  CHECK(fs::exists(dir / "run/checkpoints/final_photo.bin"));

  // The effective config is echoed into the artifacts directory.
  json echo = json::parse(read_file(dir / "run/config.json"));
  CHECK(echo.at("invocation").at("subcommand") == "train-rtl");
  CHECK(echo.at("schedule").at("epochs_total") == 4);

  CmdResult ev = run_cli(
      "eval --photo " + (dir / "run/checkpoints/final_photo.bin").string() +
      " --sketch " + (dir / "run/checkpoints/final_sketch.bin").string() +
      " --data " + (dir / "data").string() + " --k 1 --out " +
      (dir / "recall.json").string() + " --run-id smoke --seed 7");
  CHECK(ev.exit_code == 0);
  json rec = json::parse(read_file(dir / "recall.json"));
  CHECK(rec.at("run_id") == "smoke");
  CHECK(rec.at("k") == 1);
  CHECK(rec.at("recall").get<double>() >= 0.0);
  fs::remove_all(dir);
}

TEST_CASE("cli: train-rtl config typos are rejected") {
  fs::path dir = work_dir();
  write_file(dir / "spec.json", tiny_dataset_spec().dump());
  REQUIRE(run_cli("gen-data --spec " + (dir / "spec.json").string() +
                  " --out " + (dir / "data").string())
              .exit_code == 0);
  json cfg = tiny_train_config(dir / "data", dir / "run");
  cfg["schedule"]["epochz"] = 10;  // typo inside a nested object
  write_file(dir / "train.json", cfg.dump());
  CmdResult r =
      run_cli("train-rtl --config " + (dir / "train.json").string());
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("epochz") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("cli: rmac-audit over synthetic features writes ranked pairs") {
  fs::path dir = work_dir();
  write_file(dir / "fm.json",
             json{{"count", 10}, {"channels", 6}, {"sizes", {6, 8}},
                  {"seed", 5}}
                 .dump());
  CmdResult r = run_cli("rmac-audit --synth-features " +
                        (dir / "fm.json").string() + " --top-k 12 --out " +
                        (dir / "pairs.csv").string() + " --dump-features " +
                        (dir / "desc.bin").string());
  CHECK(r.exit_code == 0);
  std::string csv = read_file(dir / "pairs.csv");
  CHECK(csv.rfind("rank,i,j,distance\n", 0) == 0);
  CHECK(fs::exists(dir / "pairs.csv.config.json"));

  // The dumped descriptors re-rank to the identical report.
  CmdResult r2 = run_cli("rmac-audit --features " +
                         (dir / "desc.bin").string() + " --top-k 12 --out " +
                         (dir / "pairs2.csv").string());
  CHECK(r2.exit_code == 0);
  CHECK(read_file(dir / "pairs.csv") == read_file(dir / "pairs2.csv"));
  fs::remove_all(dir);
}

TEST_CASE("cli: export is canonical and json carries the same values") {
  fs::path dir = work_dir();
  write_file(dir / "spec.json", tiny_dataset_spec().dump());
  REQUIRE(run_cli("gen-data --spec " + (dir / "spec.json").string() +
                  " --out " + (dir / "data").string())
              .exit_code == 0);
  write_file(dir / "train.json",
             tiny_train_config(dir / "data", dir / "run").dump());
  REQUIRE(run_cli("train-rtl --config " + (dir / "train.json").string())
              .exit_code == 0);

  CmdResult e1 = run_cli("export --run " + (dir / "run").string() +
                         " --format csv --out " + (dir / "m1.csv").string());
  CmdResult e2 = run_cli("export --run " + (dir / "run").string() +
                         " --format csv --out " + (dir / "m2.csv").string());
  CHECK(e1.exit_code == 0);
  CHECK(e2.exit_code == 0);
  CHECK(read_file(dir / "m1.csv") == read_file(dir / "m2.csv"));

  CmdResult ej = run_cli("export --run " + (dir / "run").string() +
                         " --format json --out " + (dir / "m.json").string());
  CHECK(ej.exit_code == 0);
  json exported = json::parse(read_file(dir / "m.json"));
  sbir::MetricsTable from_json = sbir::metrics_from_json(exported);
  sbir::MetricsTable from_csv = sbir::read_metrics_csv(dir / "m1.csv");
  REQUIRE(from_json.columns == from_csv.columns);
  REQUIRE(from_json.rows.size() == from_csv.rows.size());
  for (std::size_t r = 0; r < from_json.rows.size(); ++r) {
    for (std::size_t c = 0; c < from_json.columns.size(); ++c) {
      CHECK(from_json.rows[r][c].has_value() ==
            from_csv.rows[r][c].has_value());
      if (from_json.rows[r][c]) {
        CHECK(*from_json.rows[r][c] == *from_csv.rows[r][c]);
      }
    }
  }

  CmdResult missing = run_cli("export --run " + (dir / "nothing").string() +
                              " --format csv --out " + (dir / "x.csv").string());
  CHECK(missing.exit_code == 1);
  fs::remove_all(dir);
}

TEST_CASE("cli: export of a zero-epoch run is header-only") {
  fs::path dir = work_dir();
  write_file(dir / "spec.json", tiny_dataset_spec().dump());
  REQUIRE(run_cli("gen-data --spec " + (dir / "spec.json").string() +
                  " --out " + (dir / "data").string())
              .exit_code == 0);
  json cfg = tiny_train_config(dir / "data", dir / "run0");
  cfg["schedule"]["epochs_total"] = 0;
  write_file(dir / "train.json", cfg.dump());
  REQUIRE(run_cli("train-rtl --config " + (dir / "train.json").string())
              .exit_code == 0);
  CmdResult e = run_cli("export --run " + (dir / "run0").string() +
                        " --format csv --out " + (dir / "m.csv").string());
  CHECK(e.exit_code == 0);
  CHECK(read_file(dir / "m.csv") == "epoch,loss,recall@1,lr\n");
  fs::remove_all(dir);
}

TEST_CASE("cli: seed override changes the run but keeps determinism") {
  fs::path dir = work_dir();
  write_file(dir / "spec.json", tiny_dataset_spec().dump());
  REQUIRE(run_cli("gen-data --spec " + (dir / "spec.json").string() +
                  " --out " + (dir / "data").string())
              .exit_code == 0);
  write_file(dir / "train.json",
             tiny_train_config(dir / "data", dir / "runA").dump());
  REQUIRE(run_cli("train-rtl --config " + (dir / "train.json").string() +
                  " --seed 99")
              .exit_code == 0);
  write_file(dir / "train2.json",
             tiny_train_config(dir / "data", dir / "runB").dump());
  REQUIRE(run_cli("train-rtl --config " + (dir / "train2.json").string() +
                  " --seed 99")
              .exit_code == 0);
  CHECK(read_file(dir / "runA/metrics.csv") ==
        read_file(dir / "runB/metrics.csv"));
  fs::remove_all(dir);
}
