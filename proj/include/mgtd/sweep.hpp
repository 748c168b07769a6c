#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mgtd/corpus.hpp"
#include "mgtd/training.hpp"

namespace mgtd {

// Hyperparameter grid. Cells are enumerated in a fixed nested order
// (learning_rate, dropout, batch_size, token_size, repeat), so two runs of the
// same grid produce the same cell sequence.
struct SweepGrid {
  std::vector<double> learning_rates;
  std::vector<double> dropouts;
  std::vector<int> batch_sizes;
  std::vector<int> token_sizes;
  int repeats = 1;
  TrainConfig fixed;  // template; swept fields are overwritten per cell

  void validate() const;
  std::size_t size() const;  // product of list lengths x repeats
};

// Strict flat JSON: exactly the keys learning_rates, dropouts, batch_sizes,
// token_sizes, repeats, fixed (a full TrainConfig object).
SweepGrid sweep_grid_from_json(const std::string& text);
std::string sweep_grid_to_json(const SweepGrid& grid);

enum class SweepStatus { kOk, kOom, kFailed };
const char* to_string(SweepStatus status);
SweepStatus sweep_status_from_string(const std::string& name);

// One grid cell. The embedded config is fully resolved (cell values plus a
// per-cell derived seed), sufficient to re-run the cell exactly.
struct SweepResult {
  TrainConfig config;
  double dev_accuracy = 0.0;  // percent
  std::optional<double> test_accuracy;
  double train_seconds = 0.0;
  double examples_per_second = 0.0;
  StopReason stop_reason = StopReason::kMaxEpochs;
  SweepStatus status = SweepStatus::kOk;
  std::string error;  // diagnostic for oom/failed cells
};

std::string sweep_result_to_json(const SweepResult& result);
SweepResult sweep_result_from_json(const std::string& text);

struct SweepOptions {
  std::string encoder_id;  // empty selects the built-in tiny encoder
  // Before running a cell its activation footprint is estimated; estimates
  // over this budget become status=oom without an allocation attempt.
  // 0 disables the check.
  std::size_t memory_budget_bytes = 0;
  const CorpusSplit* test_split = nullptr;  // fills test_accuracy when set
  std::function<void(const SweepResult&)> on_result;
  // Returns false to stop before running the cell with this ordinal (the
  // results file keeps everything finished so far). Used to exercise
  // kill-and-resume.
  std::function<bool(std::size_t)> before_cell;
};

// Rough per-cell activation footprint for the budget check.
std::size_t estimate_cell_bytes(const nn::EncoderConfig& config,
                                int batch_size, int token_size);

// Runs every cell sequentially, appending one SweepResult JSON line to
// results_path as each completes. Cells whose config digest already appears
// in the file are not recomputed; their stored results are returned in cell
// order. Cell failures (including memory exhaustion) become results, never
// aborts. Returns one result per completed cell in enumeration order.
std::vector<SweepResult> run_sweep(const SweepGrid& grid,
                                   const CorpusSplit& train_split,
                                   const CorpusSplit& dev_split,
                                   const std::filesystem::path& results_path,
                                   const SweepOptions& options = {});

struct TradeoffRow {
  int token_size = 0;
  double mean_dev_accuracy = 0.0;
  double accuracy_delta_vs_base = 0.0;  // vs the smallest token size
  double mean_examples_per_second = 0.0;
  double slowdown_vs_base = 1.0;  // base throughput / this throughput
};

// Aggregates status=ok results per token size, ascending. The smallest token
// size is the base row (delta 0, slowdown 1.0). Requires at least two
// distinct ok token sizes. Permutation-invariant in result order.
std::vector<TradeoffRow> tradeoff_report(const std::vector<SweepResult>& results);

std::string tradeoff_csv(const std::vector<TradeoffRow>& rows);

// Writes tradeoff.csv and tradeoff.png under dir.
void emit_tradeoff(const std::vector<TradeoffRow>& rows,
                   const std::filesystem::path& dir);

}  // namespace mgtd
