#include "mgtd/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

namespace mgtd {

using nlohmann::json;

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) {
    throw ConfigError("learning_rate must be > 0");
  }
  if (weight_decay < 0.0) {
    throw ConfigError("weight_decay must be >= 0");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ConfigError("dropout must lie in [0, 1)");
  }
  if (batch_size < 1) {
    throw ConfigError("batch_size must be >= 1");
  }
  if (max_tokens < 8) {
    throw ConfigError("max_tokens must be >= 8");
  }
  if (max_epochs < 1) {
    throw ConfigError("max_epochs must be >= 1");
  }
  if (early_stop_train_loss <= 0.0) {
    throw ConfigError("early_stop_train_loss must be > 0");
  }
  if (patience_epochs < 0) {
    throw ConfigError("patience_epochs must be >= 0");
  }
}

namespace {

const std::vector<std::string> kTrainConfigKeys = {
    "learning_rate",  "weight_decay",           "dropout",
    "batch_size",     "max_tokens",             "max_epochs",
    "early_stop_train_loss", "patience_epochs", "seed",
    "dev_selection"};

}  // namespace

TrainConfig train_config_from_json(const std::string& text, bool validate) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid train config JSON: ") + e.what());
  }
  if (!j.is_object()) {
    throw ConfigError("train config must be a flat JSON object");
  }
  std::string missing;
  for (const auto& key : kTrainConfigKeys) {
    if (!j.contains(key)) {
      missing += missing.empty() ? key : ", " + key;
    }
  }
  if (!missing.empty()) {
    throw ConfigError("train config missing key(s): " + missing);
  }
  std::string unknown;
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(kTrainConfigKeys.begin(), kTrainConfigKeys.end(), key) ==
        kTrainConfigKeys.end()) {
      unknown += unknown.empty() ? key : ", " + key;
    }
  }
  if (!unknown.empty()) {
    throw ConfigError("unknown train config key(s): " + unknown);
  }
  TrainConfig config;
  try {
    config.learning_rate = j.at("learning_rate").get<double>();
    config.weight_decay = j.at("weight_decay").get<double>();
    config.dropout = j.at("dropout").get<double>();
    config.batch_size = j.at("batch_size").get<int>();
    config.max_tokens = j.at("max_tokens").get<int>();
    config.max_epochs = j.at("max_epochs").get<int>();
    config.early_stop_train_loss = j.at("early_stop_train_loss").get<double>();
    config.patience_epochs = j.at("patience_epochs").get<int>();
    config.seed = j.at("seed").get<std::uint64_t>();
    config.dev_selection = j.at("dev_selection").get<bool>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config has a mistyped value: ") +
                      e.what());
  }
  if (validate) {
    config.validate();
  }
  return config;
}

std::string train_config_to_json(const TrainConfig& config) {
  json j;
  j["learning_rate"] = config.learning_rate;
  j["weight_decay"] = config.weight_decay;
  j["dropout"] = config.dropout;
  j["batch_size"] = config.batch_size;
  j["max_tokens"] = config.max_tokens;
  j["max_epochs"] = config.max_epochs;
  j["early_stop_train_loss"] = config.early_stop_train_loss;
  j["patience_epochs"] = config.patience_epochs;
  j["seed"] = config.seed;
  j["dev_selection"] = config.dev_selection;
  return j.dump(2) + "\n";
}

std::string train_config_digest(const TrainConfig& config) {
  return to_hex(fnv1a64(train_config_to_json(config)));
}

const char* to_string(StopReason reason) {
  switch (reason) {
    case StopReason::kLossThreshold:
      return "loss_threshold";
    case StopReason::kPatience:
      return "patience";
    case StopReason::kMaxEpochs:
      return "max_epochs";
  }
  return "unknown";
}

std::string epoch_record_to_json(const EpochRecord& record) {
  json j;
  j["epoch"] = record.epoch;
  j["mean_train_loss"] = record.mean_train_loss;
  j["dev_loss"] = record.dev_loss;
  j["dev_accuracy"] = record.dev_accuracy;
  j["wall_seconds"] = record.wall_seconds;
  j["examples_per_second"] = record.examples_per_second;
  return j.dump();
}

std::optional<StopReason> decide_stop(const TrainConfig& config, int epoch,
                                      double mean_train_loss,
                                      const std::vector<double>& dev_losses) {
  if (mean_train_loss <= config.early_stop_train_loss) {
    return StopReason::kLossThreshold;
  }
  if (config.patience_epochs > 0) {
    // Trailing epochs without a strict improvement over the running best.
    int stale = 0;
    double best = std::numeric_limits<double>::infinity();
    for (double loss : dev_losses) {
      if (loss < best) {
        best = loss;
        stale = 0;
      } else {
        ++stale;
      }
    }
    if (stale >= config.patience_epochs) {
      return StopReason::kPatience;
    }
  }
  if (epoch >= config.max_epochs) {
    return StopReason::kMaxEpochs;
  }
  return std::nullopt;
}

void AdamW::step(const std::vector<nn::Parameter*>& params) {
  ++step_count;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  for (auto* p : params) {
    p->adam_m = beta1 * p->adam_m + (1.0 - beta1) * p->grad;
    p->adam_v =
        (beta2 * p->adam_v.array() + (1.0 - beta2) * p->grad.array().square())
            .matrix();
    nn::Mat update =
        ((p->adam_m.array() / bc1) /
             ((p->adam_v.array() / bc2).sqrt() + eps) +
         weight_decay * p->value.array())
            .matrix();
    p->value -= learning_rate * update;
  }
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n,
                                                   int batch_size,
                                                   std::uint64_t seed,
                                                   int epoch, bool shuffle) {
  if (batch_size < 1) {
    throw ConfigError("batch_size must be >= 1");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    order[i] = i;
  }
  if (shuffle) {
    std::mt19937_64 rng(
        mix_seed(mix_seed(seed, 0xBA7C8E5ULL), static_cast<std::uint64_t>(epoch)));
    auto perm = rng_permutation(rng, n);
    for (std::size_t i = 0; i < n; ++i) {
      order[i] = perm[i];
    }
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n;
       start += static_cast<std::size_t>(batch_size)) {
    std::size_t end = std::min(n, start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

double training_step(DetectorModel& model, const Batch& batch, AdamW& opt,
                     std::mt19937_64* rng) {
  if (batch.examples.empty() || batch.examples.size() != batch.labels.size()) {
    throw ValidationError("training batch must be non-empty and fully labeled");
  }
  model.zero_grad();
  DetectorModel::BatchCache cache;
  nn::Mat logits = model.forward(batch.examples, &cache, rng);
  nn::LossGrad lg = nn::cross_entropy(logits, batch.labels);
  if (!std::isfinite(lg.loss)) {
    throw NumericError("non-finite training loss");
  }
  model.backward(lg.dlogits, cache);
  auto params = model.parameters();
  for (const auto* p : params) {
    if (!p->grad_finite()) {
      throw NumericError("non-finite gradient in parameter " + p->name);
    }
  }
  opt.step(params);
  return lg.loss;
}

DevMetrics evaluate_dev(const DetectorModel& model,
                        const std::vector<TokenizedExample>& examples,
                        const std::vector<int>& labels, int batch_size) {
  if (examples.empty() || examples.size() != labels.size()) {
    throw ValidationError("dev evaluation needs a non-empty labeled set");
  }
  DevMetrics metrics;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  auto batches =
      make_batches(examples.size(), batch_size, 0, 0, /*shuffle=*/false);
  for (const auto& idxs : batches) {
    std::vector<TokenizedExample> chunk;
    std::vector<int> chunk_labels;
    chunk.reserve(idxs.size());
    for (std::size_t i : idxs) {
      chunk.push_back(examples[i]);
      chunk_labels.push_back(labels[i]);
    }
    nn::Mat logits = model.forward(chunk, nullptr, nullptr);
    nn::LossGrad lg = nn::cross_entropy(logits, chunk_labels);
    loss_sum += lg.loss * static_cast<double>(idxs.size());
    nn::Vec probs = nn::class1_probability(logits);
    for (Eigen::Index r = 0; r < probs.size(); ++r) {
      int pred = probs(r) >= 0.5 ? 1 : 0;
      if (pred == chunk_labels[static_cast<std::size_t>(r)]) {
        ++correct;
      }
    }
  }
  metrics.loss = loss_sum / static_cast<double>(examples.size());
  metrics.accuracy_pct =
      100.0 * static_cast<double>(correct) / static_cast<double>(examples.size());
  return metrics;
}

TrainResult train(DetectorModel& model, const CorpusSplit& train_split,
                  const CorpusSplit& dev_split, const Tokenizer& tokenizer,
                  const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (train_split.records.empty()) {
    throw ValidationError("train split is empty");
  }
  if (dev_split.records.empty()) {
    throw ValidationError("dev split is empty");
  }
  if (!train_split.fully_labeled() || !dev_split.fully_labeled()) {
    throw ValidationError("train and dev splits must be fully labeled");
  }
  if (tokenizer.max_tokens() != config.max_tokens) {
    throw ConfigError("tokenizer max_tokens " +
                      std::to_string(tokenizer.max_tokens()) +
                      " does not match config max_tokens " +
                      std::to_string(config.max_tokens));
  }

  model.set_dropout(config.dropout, config.dropout);
  auto train_examples = tokenizer.encode_batch(train_split.records);
  auto dev_examples = tokenizer.encode_batch(dev_split.records);
  std::vector<int> train_labels, dev_labels;
  train_labels.reserve(train_examples.size());
  for (const auto& r : train_split.records) {
    train_labels.push_back(*r.label);
  }
  dev_labels.reserve(dev_examples.size());
  for (const auto& r : dev_split.records) {
    dev_labels.push_back(*r.label);
  }

  AdamW opt;
  opt.learning_rate = config.learning_rate;
  opt.weight_decay = config.weight_decay;
  std::mt19937_64 dropout_rng(mix_seed(config.seed, 0xD20ULL));

  std::ofstream log;
  if (!options.epoch_log_path.empty()) {
    log.open(options.epoch_log_path, std::ios::trunc);
    if (!log) {
      throw IoError("cannot open epoch log " + options.epoch_log_path.string());
    }
  }

  TrainResult result;
  std::vector<double> dev_losses;
  std::vector<nn::Mat> best_values;
  double best_accuracy = -1.0;
  int best_epoch = 0;

  const std::size_t n = train_examples.size();
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    auto batches =
        make_batches(n, config.batch_size, config.seed, epoch, /*shuffle=*/true);
    auto epoch_start = std::chrono::steady_clock::now();
    auto after_warmup = epoch_start;
    std::size_t warm_examples = 0;
    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      Batch batch;
      batch.examples.reserve(batches[bi].size());
      batch.labels.reserve(batches[bi].size());
      for (std::size_t idx : batches[bi]) {
        batch.examples.push_back(train_examples[idx]);
        batch.labels.push_back(train_labels[idx]);
      }
      double loss;
      try {
        loss = training_step(model, batch, opt, &dropout_rng);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " +
                           std::to_string(epoch) + ", batch " +
                           std::to_string(bi) + ", learning_rate " +
                           format_double(config.learning_rate) + ")");
      }
      loss_sum += loss * static_cast<double>(batches[bi].size());
      if (bi == 0) {
        // First batch carries one-off warm-up cost; throughput excludes it.
        after_warmup = std::chrono::steady_clock::now();
      } else {
        warm_examples += batches[bi].size();
      }
    }
    auto epoch_end = std::chrono::steady_clock::now();
    double wall = std::chrono::duration<double>(epoch_end - epoch_start).count();
    double warm_wall =
        std::chrono::duration<double>(epoch_end - after_warmup).count();

    EpochRecord record;
    record.epoch = epoch;
    record.mean_train_loss = loss_sum / static_cast<double>(n);
    record.wall_seconds = wall;
    if (warm_examples > 0 && warm_wall > 0.0) {
      record.examples_per_second =
          static_cast<double>(warm_examples) / warm_wall;
    } else if (wall > 0.0) {
      record.examples_per_second = static_cast<double>(n) / wall;
    }
    DevMetrics dm =
        evaluate_dev(model, dev_examples, dev_labels, config.batch_size);
    record.dev_loss = dm.loss;
    record.dev_accuracy = dm.accuracy_pct;
    dev_losses.push_back(dm.loss);
    result.epochs.push_back(record);

    if (dm.accuracy_pct > best_accuracy) {
      best_accuracy = dm.accuracy_pct;
      best_epoch = epoch;
      if (config.dev_selection) {
        best_values.clear();
        for (const auto* p : model.parameters()) {
          best_values.push_back(p->value);
        }
      }
    }

    if (log.is_open()) {
      log << epoch_record_to_json(record) << '\n';
      log.flush();
    }
    if (options.on_epoch) {
      options.on_epoch(record);
    }

    auto stop = decide_stop(config, epoch, record.mean_train_loss, dev_losses);
    if (stop.has_value()) {
      result.stop_reason = *stop;
      break;
    }
  }

  if (config.dev_selection && !best_values.empty()) {
    auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i]->value = best_values[i];
    }
    result.selected_epoch = best_epoch;
    result.selected_dev_accuracy = best_accuracy;
  } else {
    result.selected_epoch = result.epochs.back().epoch;
    result.selected_dev_accuracy = result.epochs.back().dev_accuracy;
  }
  return result;
}

}  // namespace mgtd
