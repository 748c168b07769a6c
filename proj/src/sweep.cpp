#include "mgtd/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <new>
#include <sstream>
#include <utility>

#include <nlohmann/json.hpp>

#include "mgtd/evaluation.hpp"
#include "mgtd/model.hpp"
#include "mgtd/plot.hpp"
#include "mgtd/tokenizer.hpp"

namespace mgtd {

using nlohmann::json;

void SweepGrid::validate() const {
  if (learning_rates.empty() || dropouts.empty() || batch_sizes.empty() ||
      token_sizes.empty()) {
    throw ConfigError("sweep grid lists must all be non-empty");
  }
  if (repeats < 1) {
    throw ConfigError("repeats must be >= 1");
  }
  for (double lr : learning_rates) {
    if (lr <= 0.0) {
      throw ConfigError("learning_rates must be positive");
    }
  }
  for (double d : dropouts) {
    if (d < 0.0 || d >= 1.0) {
      throw ConfigError("dropouts must lie in [0, 1)");
    }
  }
  for (int b : batch_sizes) {
    if (b < 1) {
      throw ConfigError("batch_sizes must be >= 1");
    }
  }
  for (int t : token_sizes) {
    if (t < 4) {
      throw ConfigError("token_sizes must be >= 4");
    }
  }
  fixed.validate();
}

std::size_t SweepGrid::size() const {
  return learning_rates.size() * dropouts.size() * batch_sizes.size() *
         token_sizes.size() * static_cast<std::size_t>(repeats);
}

SweepGrid sweep_grid_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid sweep grid JSON: ") + e.what());
  }
  if (!j.is_object()) {
    throw ConfigError("sweep grid must be a JSON object");
  }
  static const char* kKeys[] = {"learning_rates", "dropouts", "batch_sizes",
                                "token_sizes",    "repeats",  "fixed"};
  std::string missing;
  for (const char* key : kKeys) {
    if (!j.contains(key)) {
      missing += (missing.empty() ? "" : ", ") + std::string(key);
    }
  }
  if (!missing.empty()) {
    throw ConfigError("sweep grid missing key(s): " + missing);
  }
  std::string unknown;
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find_if(std::begin(kKeys), std::end(kKeys), [&](const char* k) {
          return key == k;
        }) == std::end(kKeys)) {
      unknown += (unknown.empty() ? "" : ", ") + key;
    }
  }
  if (!unknown.empty()) {
    throw ConfigError("sweep grid has unknown key(s): " + unknown);
  }
  SweepGrid grid;
  try {
    grid.learning_rates = j["learning_rates"].get<std::vector<double>>();
    grid.dropouts = j["dropouts"].get<std::vector<double>>();
    grid.batch_sizes = j["batch_sizes"].get<std::vector<int>>();
    grid.token_sizes = j["token_sizes"].get<std::vector<int>>();
    grid.repeats = j["repeats"].get<int>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("sweep grid field has wrong type: ") +
                      e.what());
  }
  grid.fixed = train_config_from_json(j["fixed"].dump());
  grid.validate();
  return grid;
}

std::string sweep_grid_to_json(const SweepGrid& grid) {
  json j;
  j["learning_rates"] = grid.learning_rates;
  j["dropouts"] = grid.dropouts;
  j["batch_sizes"] = grid.batch_sizes;
  j["token_sizes"] = grid.token_sizes;
  j["repeats"] = grid.repeats;
  j["fixed"] = json::parse(train_config_to_json(grid.fixed));
  return j.dump(2) + "\n";
}

const char* to_string(SweepStatus status) {
  switch (status) {
    case SweepStatus::kOk:
      return "ok";
    case SweepStatus::kOom:
      return "oom";
    case SweepStatus::kFailed:
      return "failed";
  }
  return "failed";
}

SweepStatus sweep_status_from_string(const std::string& name) {
  if (name == "ok") {
    return SweepStatus::kOk;
  }
  if (name == "oom") {
    return SweepStatus::kOom;
  }
  if (name == "failed") {
    return SweepStatus::kFailed;
  }
  throw ValidationError("unknown sweep status: " + name);
}

namespace {

StopReason stop_reason_from_string(const std::string& name) {
  if (name == "loss_threshold") {
    return StopReason::kLossThreshold;
  }
  if (name == "patience") {
    return StopReason::kPatience;
  }
  if (name == "max_epochs") {
    return StopReason::kMaxEpochs;
  }
  throw ValidationError("unknown stop reason: " + name);
}

}  // namespace

std::string sweep_result_to_json(const SweepResult& result) {
  json j;
  j["config"] = json::parse(train_config_to_json(result.config));
  j["config_digest"] = train_config_digest(result.config);
  j["dev_accuracy"] = result.dev_accuracy;
  j["test_accuracy"] = result.test_accuracy.has_value()
                           ? json(*result.test_accuracy)
                           : json(nullptr);
  j["train_seconds"] = result.train_seconds;
  j["examples_per_second"] = result.examples_per_second;
  j["stop_reason"] = to_string(result.stop_reason);
  j["status"] = to_string(result.status);
  j["error"] = result.error;
  return j.dump();
}

SweepResult sweep_result_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid sweep result JSON: ") +
                          e.what());
  }
  SweepResult result;
  try {
    // No range validation: failed cells store their invalid configs.
    result.config = train_config_from_json(j.at("config").dump(), false);
    result.dev_accuracy = j.at("dev_accuracy").get<double>();
    if (!j.at("test_accuracy").is_null()) {
      result.test_accuracy = j.at("test_accuracy").get<double>();
    }
    result.train_seconds = j.at("train_seconds").get<double>();
    result.examples_per_second = j.at("examples_per_second").get<double>();
    result.stop_reason =
        stop_reason_from_string(j.at("stop_reason").get<std::string>());
    result.status = sweep_status_from_string(j.at("status").get<std::string>());
    result.error = j.at("error").get<std::string>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("sweep result missing field: ") +
                          e.what());
  }
  return result;
}

std::size_t estimate_cell_bytes(const nn::EncoderConfig& config,
                                int batch_size, int token_size) {
  // Dominant activation caches per layer and example: two attention
  // probability tensors (n_heads x T x T), roughly ten T x hidden buffers
  // across the residual path, and two T x intermediate buffers in the MLP.
  double t = static_cast<double>(token_size);
  double per_example =
      static_cast<double>(config.n_layers) *
      (2.0 * static_cast<double>(config.n_heads) * t * t +
       10.0 * t * static_cast<double>(config.hidden_dim) +
       2.0 * t * static_cast<double>(config.intermediate_dim));
  return static_cast<std::size_t>(8.0 * static_cast<double>(batch_size) *
                                  per_example);
}

namespace {

SweepResult run_cell(const TrainConfig& config, const CorpusSplit& train_split,
                     const CorpusSplit& dev_split, const SweepOptions& options) {
  SweepResult result;
  result.config = config;
  try {
    std::string encoder_id =
        options.encoder_id.empty() ? std::string(kTinyEncoderId)
                                   : options.encoder_id;
    auto asset = resolve_encoder(encoder_id);
    if (options.memory_budget_bytes > 0) {
      auto estimate =
          estimate_cell_bytes(asset.config, config.batch_size,
                              config.max_tokens);
      if (estimate > options.memory_budget_bytes) {
        result.status = SweepStatus::kOom;
        result.error = "estimated " + std::to_string(estimate) +
                       " activation bytes exceed budget " +
                       std::to_string(options.memory_budget_bytes) +
                       " (batch_size=" + std::to_string(config.batch_size) +
                       ", max_tokens=" + std::to_string(config.max_tokens) +
                       ")";
        return result;
      }
    }
    auto tokenizer = encoder_id == kTinyEncoderId
                         ? Tokenizer::tiny(config.max_tokens)
                         : Tokenizer::resolve(encoder_id, config.max_tokens);
    ModelConfig model_config;
    model_config.encoder_id = encoder_id;
    model_config.hidden_dim = asset.config.hidden_dim;
    model_config.head_dropout = config.dropout;
    auto model = build_model(model_config, config.seed);
    auto train_result = train(model, train_split, dev_split, tokenizer, config);
    result.dev_accuracy = train_result.selected_dev_accuracy;
    result.stop_reason = train_result.stop_reason;
    for (const auto& epoch : train_result.epochs) {
      result.train_seconds += epoch.wall_seconds;
      result.examples_per_second += epoch.examples_per_second;
    }
    result.examples_per_second /=
        static_cast<double>(train_result.epochs.size());
    if (options.test_split != nullptr) {
      result.test_accuracy =
          evaluate_split(model, *options.test_split, tokenizer).accuracy_pct;
    }
    result.status = SweepStatus::kOk;
  } catch (const std::bad_alloc&) {
    result.status = SweepStatus::kOom;
    result.error = "allocation failed (batch_size=" +
                   std::to_string(config.batch_size) +
                   ", max_tokens=" + std::to_string(config.max_tokens) + ")";
  } catch (const std::exception& e) {
    result.status = SweepStatus::kFailed;
    result.error = e.what();
  }
  return result;
}

}  // namespace

std::vector<SweepResult> run_sweep(const SweepGrid& grid,
                                   const CorpusSplit& train_split,
                                   const CorpusSplit& dev_split,
                                   const std::filesystem::path& results_path,
                                   const SweepOptions& options) {
  grid.validate();
  if (!train_split.fully_labeled() || !dev_split.fully_labeled()) {
    throw ValidationError("sweep data must be fully labeled");
  }

  std::map<std::string, SweepResult> completed;
  if (std::filesystem::exists(results_path)) {
    std::istringstream in(read_file(results_path));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) {
        continue;
      }
      auto result = sweep_result_from_json(line);
      completed[train_config_digest(result.config)] = std::move(result);
    }
  }
  if (results_path.has_parent_path()) {
    std::filesystem::create_directories(results_path.parent_path());
  }
  std::ofstream out(results_path, std::ios::app);
  if (!out) {
    throw IoError("cannot open sweep results file for append: " +
                  results_path.string());
  }

  std::vector<SweepResult> results;
  std::size_t ordinal = 0;
  for (double lr : grid.learning_rates) {
    for (double dropout : grid.dropouts) {
      for (int batch : grid.batch_sizes) {
        for (int tokens : grid.token_sizes) {
          for (int rep = 0; rep < grid.repeats; ++rep, ++ordinal) {
            TrainConfig config = grid.fixed;
            config.learning_rate = lr;
            config.dropout = dropout;
            config.batch_size = batch;
            config.max_tokens = tokens;
            config.seed = mix_seed(grid.fixed.seed, ordinal);
            auto digest = train_config_digest(config);
            auto it = completed.find(digest);
            if (it != completed.end()) {
              results.push_back(it->second);
              continue;
            }
            if (options.before_cell && !options.before_cell(ordinal)) {
              return results;
            }
            auto result = run_cell(config, train_split, dev_split, options);
            out << sweep_result_to_json(result) << '\n';
            out.flush();
            if (!out) {
              throw IoError("failed writing sweep results to " +
                            results_path.string());
            }
            if (options.on_result) {
              options.on_result(result);
            }
            results.push_back(std::move(result));
          }
        }
      }
    }
  }
  return results;
}

std::vector<TradeoffRow> tradeoff_report(
    const std::vector<SweepResult>& results) {
  // Sorted members make the group means bit-identical under any permutation
  // of the input results.
  std::map<int, std::vector<std::pair<double, double>>> groups;
  for (const auto& result : results) {
    if (result.status == SweepStatus::kOk) {
      groups[result.config.max_tokens].push_back(
          {result.dev_accuracy, result.examples_per_second});
    }
  }
  if (groups.size() < 2) {
    throw ValidationError(
        "trade-off report needs results for at least 2 distinct token sizes "
        "with status ok, got " +
        std::to_string(groups.size()));
  }
  std::vector<TradeoffRow> rows;
  for (auto& [tokens, members] : groups) {
    std::sort(members.begin(), members.end());
    TradeoffRow row;
    row.token_size = tokens;
    for (const auto& [acc, eps] : members) {
      row.mean_dev_accuracy += acc;
      row.mean_examples_per_second += eps;
    }
    row.mean_dev_accuracy /= static_cast<double>(members.size());
    row.mean_examples_per_second /= static_cast<double>(members.size());
    rows.push_back(row);
  }
  const double base_accuracy = rows.front().mean_dev_accuracy;
  const double base_throughput = rows.front().mean_examples_per_second;
  for (auto& row : rows) {
    row.accuracy_delta_vs_base = row.mean_dev_accuracy - base_accuracy;
    if (row.mean_examples_per_second <= 0.0) {
      throw ValidationError("cannot compute slowdown: zero throughput at " +
                            std::to_string(row.token_size) + " tokens");
    }
    row.slowdown_vs_base = base_throughput / row.mean_examples_per_second;
  }
  return rows;
}

std::string tradeoff_csv(const std::vector<TradeoffRow>& rows) {
  std::string csv =
      "token_size,mean_dev_accuracy,accuracy_delta_vs_base,"
      "mean_examples_per_second,slowdown_vs_base\n";
  for (const auto& row : rows) {
    csv += std::to_string(row.token_size) + "," +
           format_double(row.mean_dev_accuracy) + "," +
           format_double(row.accuracy_delta_vs_base) + "," +
           format_double(row.mean_examples_per_second) + "," +
           format_double(row.slowdown_vs_base) + "\n";
  }
  return csv;
}

void emit_tradeoff(const std::vector<TradeoffRow>& rows,
                   const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "tradeoff.csv", tradeoff_csv(rows));
  std::vector<int> token_sizes;
  std::vector<double> accuracies;
  std::vector<double> throughputs;
  for (const auto& row : rows) {
    token_sizes.push_back(row.token_size);
    accuracies.push_back(row.mean_dev_accuracy);
    throughputs.push_back(row.mean_examples_per_second);
  }
  plot::write_tradeoff_png(token_sizes, accuracies, throughputs,
                           dir / "tradeoff.png");
}

}  // namespace mgtd
