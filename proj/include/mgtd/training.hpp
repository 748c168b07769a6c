#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mgtd/corpus.hpp"
#include "mgtd/model.hpp"

namespace mgtd {

struct TrainConfig {
  double learning_rate = 4e-5;
  double weight_decay = 0.01;
  double dropout = 0.1;
  int batch_size = 10;
  int max_tokens = 512;
  int max_epochs = 3;
  double early_stop_train_loss = 0.35;
  int patience_epochs = 1;  // 0 disables the patience rule
  std::uint64_t seed = 0;
  bool dev_selection = true;

  void validate() const;
};

// Strict flat-JSON parse: every TrainConfig key must be present, unknown keys
// are errors (both reported with the offending key names). validate=false
// skips the range checks; sweep logs store configs of failed cells, which
// must round trip even though they are invalid by construction.
TrainConfig train_config_from_json(const std::string& text,
                                   bool validate = true);
std::string train_config_to_json(const TrainConfig& config);
// Hex FNV-1a digest of the canonical JSON form.
std::string train_config_digest(const TrainConfig& config);

enum class StopReason { kLossThreshold, kPatience, kMaxEpochs };
const char* to_string(StopReason reason);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double mean_train_loss = 0.0;
  double dev_loss = 0.0;
  double dev_accuracy = 0.0;  // percent
  double wall_seconds = 0.0;
  double examples_per_second = 0.0;
};

std::string epoch_record_to_json(const EpochRecord& record);

// Stop-rule precedence, checked at each epoch boundary: loss threshold first,
// then dev-loss patience, then the epoch cap. dev_losses covers epochs
// 1..epoch inclusive. Pure function, so precedence is testable directly.
std::optional<StopReason> decide_stop(const TrainConfig& config, int epoch,
                                      double mean_train_loss,
                                      const std::vector<double>& dev_losses);

// AdamW with decoupled weight decay:
//   w -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * w)
struct AdamW {
  double learning_rate = 4e-5;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long step_count = 0;

  void step(const std::vector<nn::Parameter*>& params);
};

// Index batches over n records. Every index appears exactly once; the final
// partial batch is kept. The shuffled order is a pure function of
// (seed, epoch); shuffle=false preserves input order.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n,
                                                   int batch_size,
                                                   std::uint64_t seed,
                                                   int epoch, bool shuffle);

struct Batch {
  std::vector<TokenizedExample> examples;
  std::vector<int> labels;
};

// One optimizer update on one batch; returns the batch's mean loss.
// rng drives dropout (training mode); nullptr disables it.
double training_step(DetectorModel& model, const Batch& batch, AdamW& opt,
                     std::mt19937_64* rng);

struct DevMetrics {
  double loss = 0.0;
  double accuracy_pct = 0.0;
};

// Evaluation-mode mean loss + accuracy (0.5 probability threshold).
DevMetrics evaluate_dev(const DetectorModel& model,
                        const std::vector<TokenizedExample>& examples,
                        const std::vector<int>& labels, int batch_size);

struct TrainOptions {
  // Epoch log destination (JSONL, one EpochRecord per line); empty disables.
  std::filesystem::path epoch_log_path;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  StopReason stop_reason = StopReason::kMaxEpochs;
  // Epoch whose weights the model holds on return: highest dev accuracy when
  // dev_selection (earliest wins ties), otherwise the final epoch.
  int selected_epoch = 0;
  double selected_dev_accuracy = 0.0;
};

TrainResult train(DetectorModel& model, const CorpusSplit& train_split,
                  const CorpusSplit& dev_split, const Tokenizer& tokenizer,
                  const TrainConfig& config, const TrainOptions& options = {});

}  // namespace mgtd
