#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "mgtd/corpus.hpp"
#include "mgtd/sweep.hpp"
#include "mgtd/training.hpp"
#include "testutil.hpp"

#ifndef MGTD_CLI_PATH
#error "MGTD_CLI_PATH must point at the mgtd binary"
#endif

using namespace mgtd;
using nlohmann::json;

namespace {

struct CliRun {
  int exit_code = -1;
  std::string out;
  std::string err;
};

// Runs the CLI with an isolated cache dir; captures exit code and streams.
CliRun run_cli(const std::string& args, const testutil::TempDir& scratch) {
  static int invocation = 0;
  auto out_path = scratch.path() / ("stdout_" + std::to_string(invocation));
  auto err_path = scratch.path() / ("stderr_" + std::to_string(invocation));
  ++invocation;
  std::string command = "MGTD_CACHE_DIR='" + (scratch.path() / "cache").string() +
                        "' '" + std::string(MGTD_CLI_PATH) + "' " + args + " > '" +
                        out_path.string() + "' 2> '" + err_path.string() + "'";
  int status = std::system(command.c_str());
  CliRun run;
  run.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  run.out = std::filesystem::exists(out_path) ? read_file(out_path) : "";
  run.err = std::filesystem::exists(err_path) ? read_file(err_path) : "";
  return run;
}

std::size_t count_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) ++n;
  }
  return n;
}

std::string write_train_config(const testutil::TempDir& dir,
                               const std::string& name) {
  TrainConfig config;
  config.learning_rate = 1e-3;
  config.dropout = 0.0;
  config.batch_size = 8;
  config.max_tokens = 32;
  config.max_epochs = 1;
  config.early_stop_train_loss = 1e-9;
  config.patience_epochs = 0;
  config.seed = 7;
  auto path = dir.path() / name;
  write_file_atomic(path, train_config_to_json(config));
  return path.string();
}

std::string q(const std::filesystem::path& path) {
  return "'" + path.string() + "'";
}

const std::vector<std::string>& cycle_pool() {
  static const std::vector<std::string> pool = {
      "alpha", "bravo", "charlie", "delta", "echo",
      "foxtrot", "golf", "hotel", "india", "juliet"};
  return pool;
}

std::string cycle_text(std::size_t count, std::size_t offset) {
  std::string text;
  for (std::size_t i = 0; i < count; ++i) {
    if (!text.empty()) text.push_back(' ');
    text += cycle_pool()[(offset + i) % cycle_pool().size()];
  }
  return text;
}

// Labeled corpus where class 1 follows the repeating template.
CorpusSplit curvature_split(std::size_t per_class, std::uint64_t seed) {
  CorpusSplit split;
  split.role = SplitRole::kDev;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < per_class; ++i) {
    TextRecord machine;
    machine.id = "m-" + std::to_string(i);
    machine.label = 1;
    machine.text = cycle_text(30, rng_below(rng, 10));
    split.records.push_back(machine);

    TextRecord human;
    human.id = "h-" + std::to_string(i);
    human.label = 0;
    std::string text;
    for (int w = 0; w < 30; ++w) {
      if (!text.empty()) text.push_back(' ');
      text += cycle_pool()[rng_below(rng, 10)];
    }
    human.text = text;
    split.records.push_back(human);
  }
  return split;
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  testutil::TempDir dir("cli_usage");
  CHECK(run_cli("", dir).exit_code == 2);
  CHECK(run_cli("stats --bogus-flag", dir).exit_code == 2);
  CHECK(run_cli("no-such-command", dir).exit_code == 2);
  CliRun help = run_cli("--help", dir);
  CHECK(help.exit_code == 0);
  CHECK(help.out.find("stats") != std::string::npos);
}

TEST_CASE("stats writes a histogram, manifest, and summary") {
  testutil::TempDir dir("cli_stats");
  auto split = testutil::synthetic_split(10, 1, SplitRole::kTrain);
  testutil::write_jsonl(split, dir.path() / "train.jsonl");
  auto out = dir.path() / "out";

  CliRun run = run_cli("stats --data " + q(dir.path() / "train.jsonl") +
                           " --out " + q(out),
                       dir);
  REQUIRE(run.exit_code == 0);
  CHECK(run.out.find("n_total") != std::string::npos);

  auto stats = json::parse(read_file(out / "stats.json"));
  CHECK(stats.at("n_total").get<int>() == 10);
  CHECK(stats.at("n_human").get<int>() == 5);
  CHECK(stats.at("n_machine").get<int>() == 5);
  CHECK(stats.at("role").get<std::string>() == "train");

  std::string png = read_file(out / "histogram.png");
  REQUIRE(png.size() > 8);
  CHECK(static_cast<unsigned char>(png[0]) == 0x89);

  auto manifest = json::parse(read_file(out / "manifest.json"));
  CHECK(manifest.at("command").get<std::string>() == "stats");
  CHECK(manifest.at("status").get<std::string>() == "ok");
  CHECK_FALSE(manifest.at("data_digests").empty());
}

TEST_CASE("stats tolerates malformed lines unless strict") {
  testutil::TempDir dir("cli_stats_bad");
  auto split = testutil::synthetic_split(6, 2, SplitRole::kTrain);
  testutil::write_jsonl(split, dir.path() / "train.jsonl");
  {
    std::ofstream append(dir.path() / "train.jsonl", std::ios::app);
    append << "this is not json\n";
  }

  auto out = dir.path() / "out";
  CliRun run = run_cli("stats --data " + q(dir.path() / "train.jsonl") +
                           " --out " + q(out),
                       dir);
  REQUIRE(run.exit_code == 0);
  CHECK(count_lines(out / "load_errors.jsonl") == 1);
  auto stats = json::parse(read_file(out / "stats.json"));
  CHECK(stats.at("n_total").get<int>() == 6);

  CliRun strict = run_cli("stats --strict --data " +
                              q(dir.path() / "train.jsonl") + " --out " +
                              q(dir.path() / "out2"),
                          dir);
  CHECK(strict.exit_code == 2);

  CliRun missing = run_cli("stats --data " + q(dir.path() / "absent.jsonl") +
                               " --out " + q(dir.path() / "out3"),
                           dir);
  CHECK(missing.exit_code == 1);
}

TEST_CASE("train, eval, and predict form a working pipeline") {
  testutil::TempDir dir("cli_pipeline");
  testutil::write_jsonl(testutil::synthetic_split(16, 3, SplitRole::kTrain),
                        dir.path() / "train.jsonl");
  testutil::write_jsonl(testutil::synthetic_split(8, 4, SplitRole::kDev),
                        dir.path() / "dev.jsonl");
  auto config_path = write_train_config(dir, "config.json");
  auto out = dir.path() / "run";

  CliRun train_run = run_cli("train --config '" + config_path + "' --train " +
                                 q(dir.path() / "train.jsonl") + " --dev " +
                                 q(dir.path() / "dev.jsonl") + " --out " + q(out),
                             dir);
  REQUIRE(train_run.exit_code == 0);
  CHECK(train_run.out.find("selected epoch") != std::string::npos);
  CHECK(std::filesystem::exists(out / "checkpoint" / "meta.json"));
  CHECK(std::filesystem::exists(out / "checkpoint" / "weights.bin"));
  CHECK(std::filesystem::exists(out / "checkpoint" / "tokenizer.json"));
  CHECK(count_lines(out / "epoch_log.jsonl") == 1);
  auto manifest = json::parse(read_file(out / "manifest.json"));
  CHECK(manifest.at("status").get<std::string>() == "ok");
  CHECK(manifest.at("diagnostic").get<std::string>().find("stop_reason=") !=
        std::string::npos);
  CHECK(manifest.at("resolved_config").is_object());

  SUBCASE("eval emits report artifacts") {
    auto eval_out = dir.path() / "eval";
    CliRun eval_run = run_cli("eval --checkpoint " + q(out / "checkpoint") +
                                  " --data " + q(dir.path() / "dev.jsonl") +
                                  " --out " + q(eval_out),
                              dir);
    REQUIRE(eval_run.exit_code == 0);
    CHECK(eval_run.out.find("accuracy") != std::string::npos);
    for (const char* name : {"report.json", "roc.csv", "confusion.csv",
                             "roc.png", "confusion.png", "manifest.json"}) {
      CHECK(std::filesystem::exists(eval_out / name));
    }
    auto report = json::parse(read_file(eval_out / "report.json"));
    CHECK(report.at("n").get<int>() == 8);
  }

  SUBCASE("eval refuses unlabeled data and points at predict") {
    auto unlabeled = testutil::synthetic_split(6, 5, SplitRole::kTest);
    for (auto& r : unlabeled.records) {
      r.label.reset();
    }
    testutil::write_jsonl(unlabeled, dir.path() / "unlabeled.jsonl");
    CliRun eval_run = run_cli("eval --checkpoint " + q(out / "checkpoint") +
                                  " --split-role test --data " +
                                  q(dir.path() / "unlabeled.jsonl") + " --out " +
                                  q(dir.path() / "eval2"),
                              dir);
    CHECK(eval_run.exit_code == 2);
    CHECK(eval_run.err.find("predict") != std::string::npos);
  }

  SUBCASE("predict labels an unlabeled corpus") {
    auto unlabeled = testutil::synthetic_split(6, 6, SplitRole::kTest);
    for (auto& r : unlabeled.records) {
      r.label.reset();
    }
    testutil::write_jsonl(unlabeled, dir.path() / "test.jsonl");
    auto predict_out = dir.path() / "pred";
    CliRun predict_run = run_cli("predict --checkpoint " + q(out / "checkpoint") +
                                     " --data " + q(dir.path() / "test.jsonl") +
                                     " --out " + q(predict_out),
                                 dir);
    REQUIRE(predict_run.exit_code == 0);
    REQUIRE(count_lines(predict_out / "predictions.jsonl") == 6);
    std::ifstream in(predict_out / "predictions.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      auto j = json::parse(line);
      CHECK(j.at("id").get<std::string>().rfind("test-", 0) == 0);
      int label = j.at("label").get<int>();
      CHECK((label == 0 || label == 1));
    }
  }

  SUBCASE("missing checkpoint exits with io error") {
    CliRun eval_run = run_cli("eval --checkpoint " + q(dir.path() / "nowhere") +
                                  " --data " + q(dir.path() / "dev.jsonl") +
                                  " --out " + q(dir.path() / "eval3"),
                              dir);
    CHECK(eval_run.exit_code == 1);
  }
}

TEST_CASE("train reports bad configs on exit code 2, naming the key") {
  testutil::TempDir dir("cli_badcfg");
  testutil::write_jsonl(testutil::synthetic_split(8, 7, SplitRole::kTrain),
                        dir.path() / "train.jsonl");
  testutil::write_jsonl(testutil::synthetic_split(4, 8, SplitRole::kDev),
                        dir.path() / "dev.jsonl");

  auto config = json::parse(train_config_to_json(TrainConfig{}));
  config.erase("dropout");
  write_file_atomic(dir.path() / "broken.json", config.dump());

  CliRun run = run_cli("train --config " + q(dir.path() / "broken.json") +
                           " --train " + q(dir.path() / "train.jsonl") +
                           " --dev " + q(dir.path() / "dev.jsonl") + " --out " +
                           q(dir.path() / "out"),
                       dir);
  CHECK(run.exit_code == 2);
  CHECK(run.err.find("dropout") != std::string::npos);
}

TEST_CASE("training reruns reproduce the epoch log exactly") {
  testutil::TempDir dir("cli_repro");
  testutil::write_jsonl(testutil::synthetic_split(16, 9, SplitRole::kTrain),
                        dir.path() / "train.jsonl");
  testutil::write_jsonl(testutil::synthetic_split(8, 10, SplitRole::kDev),
                        dir.path() / "dev.jsonl");
  auto config_path = write_train_config(dir, "config.json");

  auto run_once = [&](const std::string& out_name) {
    CliRun run = run_cli("train --config '" + config_path + "' --train " +
                             q(dir.path() / "train.jsonl") + " --dev " +
                             q(dir.path() / "dev.jsonl") + " --out " +
                             q(dir.path() / out_name),
                         dir);
    REQUIRE(run.exit_code == 0);
    std::ifstream log(dir.path() / out_name / "epoch_log.jsonl");
    std::vector<json> records;
    std::string line;
    while (std::getline(log, line)) {
      records.push_back(json::parse(line));
    }
    return records;
  };

  auto first = run_once("run_a");
  auto second = run_once("run_b");
  REQUIRE(first.size() == second.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    CHECK(first[i].at("epoch") == second[i].at("epoch"));
    CHECK(first[i].at("mean_train_loss").get<double>() ==
          second[i].at("mean_train_loss").get<double>());
    CHECK(first[i].at("dev_loss").get<double>() ==
          second[i].at("dev_loss").get<double>());
    CHECK(first[i].at("dev_accuracy").get<double>() ==
          second[i].at("dev_accuracy").get<double>());
  }
}

TEST_CASE("zeroshot scores, calibrates, and reports") {
  testutil::TempDir dir("cli_zeroshot");
  auto data = curvature_split(6, 11);
  testutil::write_jsonl(data, dir.path() / "data.jsonl");

  // Reference corpus of template text, used to fit scorer and infiller.
  CorpusSplit reference;
  reference.role = SplitRole::kTest;
  for (std::size_t i = 0; i < 20; ++i) {
    reference.records.push_back(
        {"ref-" + std::to_string(i), std::nullopt, cycle_text(30, i % 10), {}, {}});
  }
  testutil::write_jsonl(reference, dir.path() / "reference.jsonl");

  SUBCASE("a scorer source is mandatory") {
    CliRun run = run_cli("zeroshot --data " + q(dir.path() / "data.jsonl") +
                             " --out " + q(dir.path() / "out"),
                         dir);
    CHECK(run.exit_code == 2);
    CHECK(run.err.find("scorer") != std::string::npos);
  }

  SUBCASE("calibrated run writes scores, threshold, and report") {
    auto out = dir.path() / "out";
    CliRun run = run_cli(
        "zeroshot --data " + q(dir.path() / "data.jsonl") +
            " --split-role dev --fit-scorer " + q(dir.path() / "reference.jsonl") +
            " --calibrate-on " + q(dir.path() / "data.jsonl") +
            " --span-words 1 --mask-fraction 0.2 --out " + q(out),
        dir);
    REQUIRE(run.exit_code == 0);
    CHECK(run.out.find("accuracy") != std::string::npos);

    REQUIRE(count_lines(out / "zeroshot.jsonl") == 12);
    std::ifstream in(out / "zeroshot.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      auto j = json::parse(line);
      CHECK_FALSE(j.at("id").get<std::string>().empty());
      if (j.at("skip_reason").get<std::string>().empty()) {
        CHECK(j.at("perturbed_logliks").size() == 10);
        CHECK(j.at("decision").is_number_integer());
        CHECK(j.at("threshold").is_number());
      }
    }

    auto threshold = json::parse(read_file(out / "threshold.json"));
    CHECK(threshold.at("threshold").is_number());
    CHECK(threshold.at("objective").get<std::string>() == "max_accuracy");

    auto report = json::parse(read_file(out / "report.json"));
    CHECK(report.at("n").get<int>() == 12);
    // The template detector separates its own calibration data well.
    CHECK(report.at("accuracy_pct").get<double>() >= 75.0);
    CHECK(report.at("auc").get<double>() >= 0.8);

    auto manifest = json::parse(read_file(out / "manifest.json"));
    CHECK(manifest.at("command").get<std::string>() == "zeroshot");
    CHECK(manifest.at("data_digests").contains("calibration"));
  }

  SUBCASE("a fixed threshold skips calibration") {
    auto out = dir.path() / "fixed";
    CliRun run = run_cli("zeroshot --data " + q(dir.path() / "data.jsonl") +
                             " --split-role dev --fit-scorer " +
                             q(dir.path() / "reference.jsonl") +
                             " --threshold 0.0 --out " + q(out),
                         dir);
    REQUIRE(run.exit_code == 0);
    auto threshold = json::parse(read_file(out / "threshold.json"));
    CHECK(threshold.at("threshold").get<double>() == 0.0);
    CHECK(threshold.at("objective").get<std::string>() == "fixed");
  }
}

TEST_CASE("sweep runs a grid, resumes, and emits the trade-off") {
  testutil::TempDir dir("cli_sweep");
  testutil::write_jsonl(testutil::synthetic_split(12, 12, SplitRole::kTrain),
                        dir.path() / "train.jsonl");
  testutil::write_jsonl(testutil::synthetic_split(6, 13, SplitRole::kDev),
                        dir.path() / "dev.jsonl");

  SweepGrid grid;
  grid.learning_rates = {1e-3};
  grid.dropouts = {0.0};
  grid.batch_sizes = {6};
  grid.token_sizes = {16, 32};
  grid.repeats = 1;
  grid.fixed.learning_rate = 1e-3;
  grid.fixed.dropout = 0.0;
  grid.fixed.batch_size = 6;
  grid.fixed.max_tokens = 16;
  grid.fixed.max_epochs = 1;
  grid.fixed.early_stop_train_loss = 1e-9;
  grid.fixed.patience_epochs = 0;
  grid.fixed.seed = 5;
  write_file_atomic(dir.path() / "grid.json", sweep_grid_to_json(grid));

  auto out = dir.path() / "sweep";
  std::string base_args = "sweep --grid " + q(dir.path() / "grid.json") +
                          " --train " + q(dir.path() / "train.jsonl") +
                          " --dev " + q(dir.path() / "dev.jsonl") + " --out " +
                          q(out);

  // Interrupted run: one of two cells.
  CliRun partial = run_cli(base_args + " --stop-after-cells 1", dir);
  REQUIRE(partial.exit_code == 0);
  CHECK(partial.out.find("completed 1 of 2") != std::string::npos);
  REQUIRE(count_lines(out / "sweep_results.jsonl") == 1);
  std::string first_line = read_file(out / "sweep_results.jsonl");

  // Resume: the finished cell is reused byte-for-byte.
  CliRun full = run_cli(base_args, dir);
  REQUIRE(full.exit_code == 0);
  CHECK(full.out.find("completed 2 of 2") != std::string::npos);
  REQUIRE(count_lines(out / "sweep_results.jsonl") == 2);
  std::string lines = read_file(out / "sweep_results.jsonl");
  CHECK(lines.rfind(first_line, 0) == 0);

  CHECK(std::filesystem::exists(out / "tradeoff.csv"));
  CHECK(std::filesystem::exists(out / "tradeoff.png"));
  CHECK(std::filesystem::exists(out / "manifest.json"));
  std::string csv = read_file(out / "tradeoff.csv");
  CHECK(csv.rfind("token_size,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

  // A third invocation recomputes nothing and leaves the file unchanged.
  CliRun cached = run_cli(base_args, dir);
  REQUIRE(cached.exit_code == 0);
  CHECK(read_file(out / "sweep_results.jsonl") == lines);

  // Bad grid: exit 2 naming the problem key.
  auto broken = json::parse(sweep_grid_to_json(grid));
  broken.erase("token_sizes");
  write_file_atomic(dir.path() / "broken_grid.json", broken.dump());
  CliRun bad = run_cli("sweep --grid " + q(dir.path() / "broken_grid.json") +
                           " --train " + q(dir.path() / "train.jsonl") +
                           " --dev " + q(dir.path() / "dev.jsonl") + " --out " +
                           q(dir.path() / "sweep2"),
                       dir);
  CHECK(bad.exit_code == 2);
  CHECK(bad.err.find("token_sizes") != std::string::npos);
}
