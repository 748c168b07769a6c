#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <random>
#include <string>
#include <vector>

#include "mgtd/sweep.hpp"
#include "testutil.hpp"

using namespace mgtd;

namespace {

SweepGrid small_grid() {
  SweepGrid grid;
  grid.learning_rates = {1e-3};
  grid.dropouts = {0.0};
  grid.batch_sizes = {6};
  grid.token_sizes = {16};
  grid.repeats = 1;
  grid.fixed.learning_rate = 1e-3;
  grid.fixed.dropout = 0.0;
  grid.fixed.batch_size = 6;
  grid.fixed.max_tokens = 16;
  grid.fixed.max_epochs = 1;
  grid.fixed.early_stop_train_loss = 1e-9;
  grid.fixed.patience_epochs = 0;
  grid.fixed.seed = 5;
  return grid;
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

SweepResult ok_result(int tokens, double acc, double eps) {
  SweepResult r;
  r.config.max_tokens = tokens;
  r.dev_accuracy = acc;
  r.examples_per_second = eps;
  r.status = SweepStatus::kOk;
  return r;
}

}  // namespace

TEST_CASE("sweep grid JSON round-trips and is strictly validated") {
  SweepGrid grid = small_grid();
  grid.learning_rates = {1e-3, 2e-3};
  grid.token_sizes = {16, 32};
  grid.repeats = 2;

  std::string json = sweep_grid_to_json(grid);
  SweepGrid restored = sweep_grid_from_json(json);
  CHECK(restored.learning_rates == grid.learning_rates);
  CHECK(restored.dropouts == grid.dropouts);
  CHECK(restored.batch_sizes == grid.batch_sizes);
  CHECK(restored.token_sizes == grid.token_sizes);
  CHECK(restored.repeats == 2);
  CHECK(train_config_digest(restored.fixed) == train_config_digest(grid.fixed));
  CHECK(restored.size() == 2 * 1 * 1 * 2 * 2);

  auto j = nlohmann::json::parse(json);
  j.erase("repeats");
  try {
    sweep_grid_from_json(j.dump());
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("repeats") != std::string::npos);
  }

  auto extra = nlohmann::json::parse(json);
  extra["surprise"] = 1;
  try {
    sweep_grid_from_json(extra.dump());
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("surprise") != std::string::npos);
  }

  // The fixed config must itself be complete.
  auto partial = nlohmann::json::parse(json);
  partial["fixed"].erase("seed");
  CHECK_THROWS_AS(sweep_grid_from_json(partial.dump()), ConfigError);
  CHECK_THROWS_AS(sweep_grid_from_json("nope"), ConfigError);

  SweepGrid bad = small_grid();
  bad.token_sizes = {2};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_grid();
  bad.learning_rates.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_grid();
  bad.repeats = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_grid();
  bad.dropouts = {1.0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("sweep result JSON round-trips including failure fields") {
  SweepResult result;
  result.config.learning_rate = 2e-3;
  result.config.seed = 42;
  result.dev_accuracy = 81.25;
  result.test_accuracy = 78.9;
  result.train_seconds = 1.5;
  result.examples_per_second = 64.0;
  result.stop_reason = StopReason::kLossThreshold;
  result.status = SweepStatus::kOk;

  SweepResult restored = sweep_result_from_json(sweep_result_to_json(result));
  CHECK(train_config_digest(restored.config) == train_config_digest(result.config));
  CHECK(restored.dev_accuracy == doctest::Approx(81.25));
  REQUIRE(restored.test_accuracy.has_value());
  CHECK(*restored.test_accuracy == doctest::Approx(78.9));
  CHECK(restored.stop_reason == StopReason::kLossThreshold);
  CHECK(restored.status == SweepStatus::kOk);

  SweepResult oom;
  oom.status = SweepStatus::kOom;
  oom.error = "estimated 5000 activation bytes exceed budget 1";
  SweepResult oom_restored = sweep_result_from_json(sweep_result_to_json(oom));
  CHECK(oom_restored.status == SweepStatus::kOom);
  CHECK(oom_restored.error == oom.error);
  CHECK_FALSE(oom_restored.test_accuracy.has_value());

  CHECK_THROWS_AS(sweep_result_from_json("{}"), ValidationError);
  CHECK_THROWS_AS(sweep_status_from_string("maybe"), ValidationError);
}

TEST_CASE("activation estimates follow the documented formula") {
  auto config = tiny_encoder_config();
  // layers * (2 h T^2 + 10 T d + 2 T i) doubles, times batch.
  std::size_t expected = static_cast<std::size_t>(
      8.0 * 2.0 *
      (2.0 * (2.0 * 4.0 * 16.0 * 16.0 + 10.0 * 16.0 * 32.0 +
              2.0 * 16.0 * 64.0)));
  CHECK(estimate_cell_bytes(config, 2, 16) == expected);
  CHECK(estimate_cell_bytes(config, 4, 16) == 2 * expected);
  CHECK(estimate_cell_bytes(config, 2, 32) > estimate_cell_bytes(config, 2, 16));
}

TEST_CASE("a one-cell sweep trains and appends one result line") {
  testutil::TempDir dir("sweep1");
  CorpusSplit train_split = testutil::synthetic_split(12, 81, SplitRole::kTrain);
  CorpusSplit dev_split = testutil::synthetic_split(6, 82, SplitRole::kDev);

  SweepGrid grid = small_grid();
  auto path = dir.path() / "results.jsonl";
  auto results = run_sweep(grid, train_split, dev_split, path);
  REQUIRE(results.size() == 1);
  CHECK(results[0].status == SweepStatus::kOk);
  CHECK(results[0].stop_reason == StopReason::kMaxEpochs);
  CHECK(results[0].config.seed == mix_seed(5, 0));
  CHECK(results[0].config.max_tokens == 16);
  CHECK(results[0].dev_accuracy >= 0.0);
  CHECK(results[0].dev_accuracy <= 100.0);
  CHECK(results[0].examples_per_second > 0.0);
  CHECK_FALSE(results[0].test_accuracy.has_value());
  CHECK(count_lines(path) == 1);

  // The stored line parses back to the same cell.
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  SweepResult stored = sweep_result_from_json(line);
  CHECK(train_config_digest(stored.config) ==
        train_config_digest(results[0].config));
  CHECK(stored.dev_accuracy == results[0].dev_accuracy);
}

TEST_CASE("sweeps enumerate cells deterministically and fill test accuracy") {
  testutil::TempDir dir("sweep4");
  CorpusSplit train_split = testutil::synthetic_split(12, 83, SplitRole::kTrain);
  CorpusSplit dev_split = testutil::synthetic_split(6, 84, SplitRole::kDev);
  CorpusSplit test_split = testutil::synthetic_split(6, 85, SplitRole::kTest);
  for (auto& r : test_split.records) {
    if (!r.label.has_value()) r.label = 0;
  }

  SweepGrid grid = small_grid();
  grid.learning_rates = {1e-3, 2e-3};
  grid.token_sizes = {16, 32};

  SweepOptions options;
  options.test_split = &test_split;

  auto first = run_sweep(grid, train_split, dev_split, dir.path() / "a.jsonl",
                         options);
  auto second = run_sweep(grid, train_split, dev_split, dir.path() / "b.jsonl",
                          options);
  REQUIRE(first.size() == 4);
  REQUIRE(second.size() == 4);
  // Cell order: lr-major, token-minor.
  CHECK(first[0].config.learning_rate == 1e-3);
  CHECK(first[0].config.max_tokens == 16);
  CHECK(first[1].config.max_tokens == 32);
  CHECK(first[2].config.learning_rate == 2e-3);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(train_config_digest(first[i].config) ==
          train_config_digest(second[i].config));
    CHECK(first[i].dev_accuracy == second[i].dev_accuracy);
    REQUIRE(first[i].test_accuracy.has_value());
    CHECK(*first[i].test_accuracy == *second[i].test_accuracy);
    CHECK(first[i].config.seed == mix_seed(5, i));
  }
}

TEST_CASE("cells over the memory budget become oom results") {
  testutil::TempDir dir("sweep_oom");
  CorpusSplit train_split = testutil::synthetic_split(8, 86, SplitRole::kTrain);
  CorpusSplit dev_split = testutil::synthetic_split(4, 87, SplitRole::kDev);

  SweepGrid grid = small_grid();
  grid.token_sizes = {16, 32};
  SweepOptions options;
  options.memory_budget_bytes = 1;

  auto results = run_sweep(grid, train_split, dev_split,
                           dir.path() / "results.jsonl", options);
  REQUIRE(results.size() == 2);
  for (const auto& r : results) {
    CHECK(r.status == SweepStatus::kOom);
    CHECK(r.error.find("batch_size=") != std::string::npos);
    CHECK(r.error.find("exceed budget") != std::string::npos);
  }
  CHECK(count_lines(dir.path() / "results.jsonl") == 2);
  CHECK_THROWS_AS(tradeoff_report(results), ValidationError);
}

TEST_CASE("a failing cell is recorded and the sweep continues") {
  testutil::TempDir dir("sweep_fail");
  CorpusSplit train_split = testutil::synthetic_split(12, 88, SplitRole::kTrain);
  CorpusSplit dev_split = testutil::synthetic_split(6, 89, SplitRole::kDev);

  SweepGrid grid = small_grid();
  // 4 passes grid validation but fails TrainConfig validation inside the cell.
  grid.token_sizes = {4, 16};

  auto results = run_sweep(grid, train_split, dev_split,
                           dir.path() / "results.jsonl");
  REQUIRE(results.size() == 2);
  CHECK(results[0].status == SweepStatus::kFailed);
  CHECK(results[0].error.find("max_tokens") != std::string::npos);
  CHECK(results[1].status == SweepStatus::kOk);
  CHECK(count_lines(dir.path() / "results.jsonl") == 2);
}

TEST_CASE("interrupted sweeps resume without recomputing finished cells") {
  testutil::TempDir dir("sweep_resume");
  CorpusSplit train_split = testutil::synthetic_split(12, 90, SplitRole::kTrain);
  CorpusSplit dev_split = testutil::synthetic_split(6, 91, SplitRole::kDev);

  SweepGrid grid = small_grid();
  grid.learning_rates = {1e-3, 2e-3};
  grid.token_sizes = {16, 32};
  auto path = dir.path() / "results.jsonl";

  // Simulated kill: stop before the third cell.
  SweepOptions interrupt;
  interrupt.before_cell = [](std::size_t ordinal) { return ordinal < 2; };
  auto partial = run_sweep(grid, train_split, dev_split, path, interrupt);
  CHECK(partial.size() == 2);
  CHECK(count_lines(path) == 2);

  // Resume: only the remaining two cells run.
  SweepOptions resume;
  std::size_t computed = 0;
  resume.on_result = [&](const SweepResult&) { ++computed; };
  auto full = run_sweep(grid, train_split, dev_split, path, resume);
  REQUIRE(full.size() == 4);
  CHECK(computed == 2);
  CHECK(count_lines(path) == 4);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(full[i].dev_accuracy == partial[i].dev_accuracy);
    CHECK(train_config_digest(full[i].config) ==
          train_config_digest(partial[i].config));
  }

  // A third run recomputes nothing at all.
  std::size_t recomputed = 0;
  SweepOptions idle;
  idle.on_result = [&](const SweepResult&) { ++recomputed; };
  auto cached = run_sweep(grid, train_split, dev_split, path, idle);
  CHECK(cached.size() == 4);
  CHECK(recomputed == 0);
  CHECK(count_lines(path) == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(cached[i].dev_accuracy == full[i].dev_accuracy);
  }
}

TEST_CASE("sweeps require labeled data") {
  testutil::TempDir dir("sweep_lab");
  CorpusSplit train_split = testutil::synthetic_split(8, 92, SplitRole::kTrain);
  CorpusSplit dev_split = testutil::synthetic_split(4, 93, SplitRole::kDev);
  train_split.records[0].label.reset();
  CHECK_THROWS_AS(run_sweep(small_grid(), train_split, dev_split,
                            dir.path() / "r.jsonl"),
                  ValidationError);
}

TEST_CASE("trade-off rows aggregate ok cells per token size") {
  std::vector<SweepResult> results;
  results.push_back(ok_result(32, 80.0, 100.0));
  results.push_back(ok_result(32, 90.0, 50.0));
  results.push_back(ok_result(64, 60.0, 25.0));
  SweepResult failed = ok_result(16, 99.0, 999.0);
  failed.status = SweepStatus::kFailed;
  results.push_back(failed);
  SweepResult oom = ok_result(64, 99.0, 999.0);
  oom.status = SweepStatus::kOom;
  results.push_back(oom);

  auto rows = tradeoff_report(results);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].token_size == 32);
  CHECK(rows[0].mean_dev_accuracy == doctest::Approx(85.0).epsilon(1e-12));
  CHECK(rows[0].mean_examples_per_second == doctest::Approx(75.0).epsilon(1e-12));
  CHECK(rows[0].accuracy_delta_vs_base == 0.0);
  CHECK(rows[0].slowdown_vs_base == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rows[1].token_size == 64);
  CHECK(rows[1].mean_dev_accuracy == doctest::Approx(60.0).epsilon(1e-12));
  CHECK(rows[1].accuracy_delta_vs_base == doctest::Approx(-25.0).epsilon(1e-12));
  CHECK(rows[1].slowdown_vs_base == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("trade-off edge cases") {
  // Equal accuracies give a zero delta everywhere.
  std::vector<SweepResult> flat = {ok_result(16, 70.0, 40.0),
                                   ok_result(32, 70.0, 20.0)};
  auto rows = tradeoff_report(flat);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].accuracy_delta_vs_base == 0.0);
  CHECK(rows[1].accuracy_delta_vs_base == 0.0);
  CHECK(rows[1].slowdown_vs_base == doctest::Approx(2.0).epsilon(1e-12));

  // Fewer than two ok token sizes is an error.
  CHECK_THROWS_AS(tradeoff_report({ok_result(16, 70.0, 40.0)}), ValidationError);
  CHECK_THROWS_AS(tradeoff_report({}), ValidationError);
  std::vector<SweepResult> same_size = {ok_result(16, 70.0, 40.0),
                                        ok_result(16, 80.0, 30.0)};
  CHECK_THROWS_AS(tradeoff_report(same_size), ValidationError);

  // Zero throughput cannot produce a slowdown ratio.
  std::vector<SweepResult> stalled = {ok_result(16, 70.0, 0.0),
                                      ok_result(32, 70.0, 20.0)};
  CHECK_THROWS_AS(tradeoff_report(stalled), ValidationError);
}

TEST_CASE("trade-off rows are invariant under result permutations") {
  std::vector<SweepResult> results;
  std::mt19937_64 rng(94);
  for (int tokens : {16, 32, 64}) {
    for (int i = 0; i < 4; ++i) {
      results.push_back(ok_result(tokens, 50.0 + rng_real(rng) * 40.0,
                                  10.0 + rng_real(rng) * 90.0));
    }
  }
  std::string baseline = tradeoff_csv(tradeoff_report(results));
  for (int round = 0; round < 5; ++round) {
    auto perm = rng_permutation(rng, results.size());
    std::vector<SweepResult> shuffled;
    for (std::size_t idx : perm) {
      shuffled.push_back(results[idx]);
    }
    CHECK(tradeoff_csv(tradeoff_report(shuffled)) == baseline);
  }
}

TEST_CASE("trade-off artifacts are written with a stable header") {
  testutil::TempDir dir("tradeoff");
  std::vector<SweepResult> results = {ok_result(16, 70.0, 40.0),
                                      ok_result(32, 75.0, 20.0)};
  auto rows = tradeoff_report(results);
  std::string csv = tradeoff_csv(rows);
  CHECK(csv.rfind("token_size,mean_dev_accuracy,accuracy_delta_vs_base,"
                  "mean_examples_per_second,slowdown_vs_base\n",
                  0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

  emit_tradeoff(rows, dir.path());
  CHECK(std::filesystem::exists(dir.path() / "tradeoff.csv"));
  CHECK(std::filesystem::exists(dir.path() / "tradeoff.png"));
  CHECK(read_file(dir.path() / "tradeoff.csv") == csv);
  std::string png = read_file(dir.path() / "tradeoff.png");
  REQUIRE(png.size() > 8);
  CHECK(static_cast<unsigned char>(png[0]) == 0x89);
  CHECK(png.substr(1, 3) == "PNG");
}
