#include <cstdint>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mgtd/common.hpp"
#include "mgtd/corpus.hpp"
#include "mgtd/evaluation.hpp"
#include "mgtd/manifest.hpp"
#include "mgtd/model.hpp"
#include "mgtd/plot.hpp"
#include "mgtd/sweep.hpp"
#include "mgtd/tokenizer.hpp"
#include "mgtd/training.hpp"
#include "mgtd/zeroshot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace mgtd;

RunManifest start_manifest(const std::string& command,
                           const std::string& config_path) {
  RunManifest manifest;
  manifest.command = command;
  manifest.config_path = config_path;
  manifest.started_at = iso8601_utc_now();
  return manifest;
}

void finish_manifest(RunManifest& manifest, const fs::path& out_dir) {
  manifest.finished_at = iso8601_utc_now();
  write_manifest(manifest, out_dir);
}

CorpusSplit load_split(const fs::path& path, SplitRole role, bool strict,
                       std::vector<LineError>* errors_out = nullptr) {
  auto result = load_jsonl(path, role, strict);
  if (errors_out != nullptr) {
    *errors_out = result.errors;
  } else if (!result.errors.empty()) {
    std::cerr << "warning: " << result.errors.size()
              << " malformed line(s) skipped in " << path << "\n";
  }
  return std::move(result.split);
}

Tokenizer tokenizer_for(const std::string& encoder_id, int max_tokens) {
  return encoder_id == kTinyEncoderId ? Tokenizer::tiny(max_tokens)
                                      : Tokenizer::resolve(encoder_id, max_tokens);
}

std::vector<std::string> texts_of(const CorpusSplit& split) {
  std::vector<std::string> texts;
  texts.reserve(split.records.size());
  for (const auto& record : split.records) {
    texts.push_back(record.text);
  }
  return texts;
}

// Chunked class-1 probabilities over a whole split.
std::vector<double> score_split(const DetectorModel& model,
                                const Tokenizer& tokenizer,
                                const CorpusSplit& split, int batch_size = 32) {
  auto encoded = tokenizer.encode_batch(split.records);
  std::vector<double> scores;
  scores.reserve(encoded.size());
  for (std::size_t begin = 0; begin < encoded.size();
       begin += static_cast<std::size_t>(batch_size)) {
    auto end = std::min(encoded.size(),
                        begin + static_cast<std::size_t>(batch_size));
    std::vector<TokenizedExample> chunk(encoded.begin() + static_cast<std::ptrdiff_t>(begin),
                                        encoded.begin() + static_cast<std::ptrdiff_t>(end));
    auto proba = model.predict_proba(chunk);
    for (Eigen::Index i = 0; i < proba.size(); ++i) {
      scores.push_back(proba(i));
    }
  }
  return scores;
}

struct StatsArgs {
  std::string data;
  std::string split_role = "train";
  std::string tokenizer_id = kTinyEncoderId;
  std::vector<std::size_t> buckets;
  bool strict = false;
  std::string out;
};

int cmd_stats(const StatsArgs& args) {
  auto manifest = start_manifest("stats", args.data);
  auto role = split_role_from_string(args.split_role);
  std::vector<LineError> errors;
  auto split = load_split(args.data, role, args.strict, &errors);
  auto boundaries = args.buckets.empty() ? kDefaultHistogramBoundaries : args.buckets;
  auto tokenizer = tokenizer_for(args.tokenizer_id, 512);
  auto stats = compute_stats(split, tokenizer, boundaries);

  fs::create_directories(args.out);
  write_file_atomic(fs::path(args.out) / "stats.json",
                    split_stats_to_json(stats, role));
  plot::write_histogram_png(stats.bucket_labels(), stats.bucket_counts,
                            "token count histogram",
                            fs::path(args.out) / "histogram.png");
  if (!errors.empty()) {
    std::string report;
    for (const auto& error : errors) {
      json j;
      j["line"] = error.line;
      j["message"] = error.message;
      report += j.dump() + "\n";
    }
    write_file_atomic(fs::path(args.out) / "load_errors.jsonl", report);
    std::cerr << "warning: " << errors.size() << " malformed line(s) in "
              << args.data << " (see load_errors.jsonl)\n";
  }

  json resolved;
  resolved["data"] = args.data;
  resolved["split_role"] = args.split_role;
  resolved["tokenizer"] = args.tokenizer_id;
  resolved["buckets"] = boundaries;
  resolved["strict"] = args.strict;
  manifest.resolved_config_json = resolved.dump();
  manifest.data_digests[args.split_role] = file_digest(args.data);
  finish_manifest(manifest, args.out);
  std::cout << split_stats_to_json(stats, role);
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string train;
  std::string dev;
  std::string out;
  std::string encoder_id = kTinyEncoderId;
  std::optional<std::uint64_t> seed_override;
};

int cmd_train(const TrainArgs& args) {
  auto manifest = start_manifest("train", args.config);
  auto config = train_config_from_json(read_file(args.config));
  if (args.seed_override.has_value()) {
    config.seed = *args.seed_override;
  }
  manifest.resolved_config_json = train_config_to_json(config);
  manifest.data_digests["train"] = file_digest(args.train);
  manifest.data_digests["dev"] = file_digest(args.dev);
  try {
    auto train_split = load_split(args.train, SplitRole::kTrain, true);
    auto dev_split = load_split(args.dev, SplitRole::kDev, true);
    auto tokenizer = tokenizer_for(args.encoder_id, config.max_tokens);
    auto asset = resolve_encoder(args.encoder_id);

    ModelConfig model_config;
    model_config.encoder_id = args.encoder_id;
    model_config.hidden_dim = asset.config.hidden_dim;
    model_config.head_dropout = config.dropout;
    auto model = build_model(model_config, config.seed);

    fs::create_directories(args.out);
    TrainOptions options;
    options.epoch_log_path = fs::path(args.out) / "epoch_log.jsonl";
    options.on_epoch = [](const EpochRecord& record) {
      std::cout << "epoch " << record.epoch << ": train_loss "
                << format_double(record.mean_train_loss, 6) << ", dev_loss "
                << format_double(record.dev_loss, 6) << ", dev_acc "
                << format_double(record.dev_accuracy, 4) << "%\n";
    };
    auto result = train(model, train_split, dev_split, tokenizer, config, options);

    CheckpointMeta meta;
    meta.config = model_config;
    meta.max_tokens = config.max_tokens;
    meta.train_config_digest = train_config_digest(config);
    meta.epoch = result.selected_epoch;
    meta.dev_metric = result.selected_dev_accuracy;
    meta.created_at = iso8601_utc_now();
    save_checkpoint(model, tokenizer, meta, fs::path(args.out) / "checkpoint");

    manifest.diagnostic = std::string("stop_reason=") + to_string(result.stop_reason);
    finish_manifest(manifest, args.out);
    std::cout << "stopped after epoch " << result.epochs.size() << " ("
              << to_string(result.stop_reason) << "), selected epoch "
              << result.selected_epoch << " with dev accuracy "
              << format_double(result.selected_dev_accuracy, 4) << "%\n";
  } catch (const std::exception& e) {
    manifest.status = "error";
    manifest.diagnostic = e.what();
    finish_manifest(manifest, args.out);
    throw;
  }
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split_role = "dev";
  double threshold = 0.5;
  std::string out;
};

int cmd_eval(const EvalArgs& args) {
  auto manifest = start_manifest("eval", args.checkpoint);
  auto role = split_role_from_string(args.split_role);
  auto checkpoint = load_checkpoint(args.checkpoint);
  auto split = load_split(args.data, role, true);
  if (!split.fully_labeled()) {
    throw ValidationError(
        "evaluation needs labels on every record; use the predict command "
        "for unlabeled data");
  }
  auto report = evaluate_split(checkpoint.model, split, checkpoint.tokenizer,
                               args.threshold);
  emit_report(report, args.out);

  json resolved;
  resolved["checkpoint"] = args.checkpoint;
  resolved["data"] = args.data;
  resolved["split_role"] = args.split_role;
  resolved["threshold"] = args.threshold;
  manifest.resolved_config_json = resolved.dump();
  manifest.data_digests[args.split_role] = file_digest(args.data);
  finish_manifest(manifest, args.out);
  std::cout << "n " << report.n << ", accuracy "
            << format_double(report.accuracy_pct, 4) << "%, auc "
            << format_double(report.auc, 4) << "\n";
  return 0;
}

struct PredictArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
};

int cmd_predict(const PredictArgs& args) {
  auto manifest = start_manifest("predict", args.checkpoint);
  auto checkpoint = load_checkpoint(args.checkpoint);
  auto split = load_split(args.data, SplitRole::kTest, true);
  auto scores = score_split(checkpoint.model, checkpoint.tokenizer, split);

  std::string lines;
  for (std::size_t i = 0; i < split.records.size(); ++i) {
    json j;
    j["id"] = split.records[i].id;
    j["label"] = scores[i] >= 0.5 ? 1 : 0;
    lines += j.dump() + "\n";
  }
  fs::create_directories(args.out);
  write_file_atomic(fs::path(args.out) / "predictions.jsonl", lines);

  json resolved;
  resolved["checkpoint"] = args.checkpoint;
  resolved["data"] = args.data;
  manifest.resolved_config_json = resolved.dump();
  manifest.data_digests["test"] = file_digest(args.data);
  finish_manifest(manifest, args.out);
  std::cout << "wrote " << split.records.size() << " predictions\n";
  return 0;
}

struct ZeroshotArgs {
  std::string data;
  std::string split_role = "test";
  std::string out;
  std::string scorer_id;
  std::string fit_scorer;
  int ngram_order = 2;
  double add_k = 0.1;
  std::string infiller_id = kUnigramInfillerId;
  int n_perturbations = 10;
  double mask_fraction = 0.15;
  int span_words = 2;
  bool sum_loglik = false;
  std::string calibrate_on;
  std::optional<double> threshold;
  std::string objective = "max_accuracy";
  double fpr_target = 0.05;
  std::uint64_t seed = 0;
};

int cmd_zeroshot(const ZeroshotArgs& args) {
  auto manifest = start_manifest("zeroshot", args.data);
  auto role = split_role_from_string(args.split_role);
  auto split = load_split(args.data, role, true);

  std::unique_ptr<ScoringModel> scorer;
  if (!args.scorer_id.empty()) {
    scorer = resolve_scoring_model(args.scorer_id);
  } else if (!args.fit_scorer.empty()) {
    auto reference = load_split(args.fit_scorer, SplitRole::kTest, true);
    auto ngram = std::make_unique<NgramScorer>(args.ngram_order, args.add_k);
    ngram->fit(texts_of(reference));
    scorer = std::move(ngram);
  } else {
    throw ConfigError("zeroshot needs --scorer or --fit-scorer");
  }

  std::vector<std::string> infill_texts;
  if (args.infiller_id == kUnigramInfillerId) {
    infill_texts = args.fit_scorer.empty()
                       ? texts_of(split)
                       : texts_of(load_split(args.fit_scorer, SplitRole::kTest, true));
  }
  auto infiller = resolve_infiller(args.infiller_id, infill_texts);

  PerturbSpec spec;
  spec.n_perturbations = args.n_perturbations;
  spec.mask_fraction = args.mask_fraction;
  spec.span_words = args.span_words;
  spec.infill_model_id = args.infiller_id;
  spec.scoring_model_id = scorer->id();
  spec.seed = args.seed;
  spec.sum_loglik = args.sum_loglik;
  spec.validate();

  std::optional<double> threshold = args.threshold;
  if (!args.calibrate_on.empty()) {
    auto calibration_split = load_split(args.calibrate_on, SplitRole::kDev, true);
    if (!calibration_split.fully_labeled()) {
      throw ValidationError("--calibrate-on data must be fully labeled");
    }
    auto calibration = zeroshot_corpus(calibration_split, spec, *infiller, *scorer);
    std::vector<std::pair<double, int>> scored;
    for (std::size_t i = 0; i < calibration.size(); ++i) {
      if (calibration[i].skip_reason.empty()) {
        scored.push_back({calibration[i].curvature,
                          *calibration_split.records[i].label});
      }
    }
    auto objective = args.objective == "fixed_fpr"
                         ? CalibrationObjective::kFixedFpr
                         : CalibrationObjective::kMaxAccuracy;
    threshold = calibrate_threshold(scored, objective, args.fpr_target);
    manifest.data_digests["calibration"] = file_digest(args.calibrate_on);
  }

  auto results = zeroshot_corpus(split, spec, *infiller, *scorer);
  if (threshold.has_value()) {
    for (auto& result : results) {
      if (result.skip_reason.empty()) {
        result.threshold = *threshold;
        result.decision = result.curvature >= *threshold ? 1 : 0;
      }
    }
  }

  fs::create_directories(args.out);
  std::string lines;
  for (const auto& result : results) {
    lines += curvature_result_to_json(result) + "\n";
  }
  write_file_atomic(fs::path(args.out) / "zeroshot.jsonl", lines);
  if (threshold.has_value()) {
    json tj;
    tj["threshold"] = *threshold;
    tj["objective"] = args.calibrate_on.empty() ? "fixed" : args.objective;
    write_file_atomic(fs::path(args.out) / "threshold.json", tj.dump(2) + "\n");
  }

  std::size_t skipped = 0;
  for (const auto& result : results) {
    skipped += static_cast<std::size_t>(!result.skip_reason.empty());
  }

  if (split.fully_labeled() && threshold.has_value()) {
    std::vector<int> labels;
    std::vector<double> curvatures;
    std::vector<int> decisions;
    for (std::size_t i = 0; i < results.size(); ++i) {
      if (results[i].skip_reason.empty()) {
        labels.push_back(*split.records[i].label);
        curvatures.push_back(results[i].curvature);
        decisions.push_back(*results[i].decision);
      }
    }
    auto roc = roc_auc(labels, curvatures);
    auto conf = confusion(labels, decisions);
    EvalReport report;
    report.n = labels.size();
    report.accuracy_pct = accuracy(labels, decisions);
    report.tp = conf.tp;
    report.fp = conf.fp;
    report.tn = conf.tn;
    report.fn = conf.fn;
    report.auc = roc.auc;
    report.roc_points = roc.points;
    report.threshold_used = *threshold;
    report.split = to_string(role);
    emit_report(report, args.out);
    std::cout << "n " << report.n << " (" << skipped << " skipped), accuracy "
              << format_double(report.accuracy_pct, 4) << "%, auc "
              << format_double(report.auc, 4) << "\n";
  } else {
    std::cout << "scored " << (results.size() - skipped) << " records ("
              << skipped << " skipped)\n";
  }

  json resolved;
  resolved["n_perturbations"] = spec.n_perturbations;
  resolved["mask_fraction"] = spec.mask_fraction;
  resolved["span_words"] = spec.span_words;
  resolved["infill_model_id"] = spec.infill_model_id;
  resolved["scoring_model_id"] = spec.scoring_model_id;
  resolved["seed"] = spec.seed;
  resolved["sum_loglik"] = spec.sum_loglik;
  resolved["threshold"] =
      threshold.has_value() ? json(*threshold) : json(nullptr);
  manifest.resolved_config_json = resolved.dump();
  manifest.data_digests[args.split_role] = file_digest(args.data);
  finish_manifest(manifest, args.out);
  return 0;
}

struct SweepArgs {
  std::string grid;
  std::string train;
  std::string dev;
  std::string test;
  std::string out;
  std::string encoder_id = kTinyEncoderId;
  std::size_t memory_budget = 0;
  long long stop_after = -1;
  std::optional<std::uint64_t> seed_override;
};

int cmd_sweep(const SweepArgs& args) {
  auto manifest = start_manifest("sweep", args.grid);
  auto grid = sweep_grid_from_json(read_file(args.grid));
  if (args.seed_override.has_value()) {
    grid.fixed.seed = *args.seed_override;
  }
  auto train_split = load_split(args.train, SplitRole::kTrain, true);
  auto dev_split = load_split(args.dev, SplitRole::kDev, true);
  CorpusSplit test_split;
  SweepOptions options;
  options.encoder_id = args.encoder_id;
  options.memory_budget_bytes = args.memory_budget;
  if (!args.test.empty()) {
    test_split = load_split(args.test, SplitRole::kTest, true);
    options.test_split = &test_split;
  }
  if (args.stop_after >= 0) {
    options.before_cell = [&args](std::size_t ordinal) {
      return ordinal < static_cast<std::size_t>(args.stop_after);
    };
  }
  options.on_result = [](const SweepResult& result) {
    std::cout << "cell lr=" << format_double(result.config.learning_rate, 6)
              << " dropout=" << format_double(result.config.dropout, 3)
              << " batch=" << result.config.batch_size
              << " tokens=" << result.config.max_tokens << " -> "
              << to_string(result.status);
    if (result.status == SweepStatus::kOk) {
      std::cout << " (dev_acc " << format_double(result.dev_accuracy, 4)
                << "%)";
    }
    std::cout << "\n";
  };

  fs::create_directories(args.out);
  auto results = run_sweep(grid, train_split, dev_split,
                           fs::path(args.out) / "sweep_results.jsonl", options);
  try {
    auto rows = tradeoff_report(results);
    emit_tradeoff(rows, args.out);
  } catch (const ValidationError& e) {
    std::cerr << "note: no trade-off report (" << e.what() << ")\n";
  }

  manifest.resolved_config_json = sweep_grid_to_json(grid);
  manifest.data_digests["train"] = file_digest(args.train);
  manifest.data_digests["dev"] = file_digest(args.dev);
  if (!args.test.empty()) {
    manifest.data_digests["test"] = file_digest(args.test);
  }
  finish_manifest(manifest, args.out);
  std::cout << "completed " << results.size() << " of " << grid.size()
            << " cells\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Machine-generated text detection toolkit"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed_override;
  app.add_option("--seed", seed_override,
                 "Root seed; overrides config/grid seeds when given");

  StatsArgs stats_args;
  auto* stats = app.add_subcommand("stats", "Corpus label and length statistics");
  stats->add_option("--data", stats_args.data, "Corpus JSONL")->required();
  stats->add_option("--split-role", stats_args.split_role,
                    "train, dev, or test");
  stats->add_option("--tokenizer", stats_args.tokenizer_id, "Tokenizer id");
  stats->add_option("--buckets", stats_args.buckets,
                    "Histogram boundaries, comma separated")
      ->delimiter(',');
  stats->add_flag("--strict", stats_args.strict,
                  "Fail on the first malformed line");
  stats->add_option("--out", stats_args.out, "Output directory")->required();

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Fine-tune a detector");
  train->add_option("--config", train_args.config, "TrainConfig JSON")->required();
  train->add_option("--train", train_args.train, "Training JSONL")->required();
  train->add_option("--dev", train_args.dev, "Dev JSONL")->required();
  train->add_option("--out", train_args.out, "Output directory")->required();
  train->add_option("--encoder", train_args.encoder_id, "Encoder id");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint directory")
      ->required();
  eval->add_option("--data", eval_args.data, "Labeled JSONL")->required();
  eval->add_option("--split-role", eval_args.split_role, "train, dev, or test");
  eval->add_option("--threshold", eval_args.threshold,
                   "Probability decision threshold");
  eval->add_option("--out", eval_args.out, "Output directory")->required();

  PredictArgs predict_args;
  auto* predict = app.add_subcommand("predict", "Label an unlabeled corpus");
  predict->add_option("--checkpoint", predict_args.checkpoint,
                      "Checkpoint directory")->required();
  predict->add_option("--data", predict_args.data, "Corpus JSONL")->required();
  predict->add_option("--out", predict_args.out, "Output directory")->required();

  ZeroshotArgs zeroshot_args;
  auto* zeroshot = app.add_subcommand("zeroshot",
                                      "Perturbation curvature detector");
  zeroshot->add_option("--data", zeroshot_args.data, "Corpus JSONL")->required();
  zeroshot->add_option("--split-role", zeroshot_args.split_role,
                       "train, dev, or test");
  zeroshot->add_option("--out", zeroshot_args.out, "Output directory")->required();
  zeroshot->add_option("--scorer", zeroshot_args.scorer_id,
                       "Scoring model asset id");
  zeroshot->add_option("--fit-scorer", zeroshot_args.fit_scorer,
                       "JSONL corpus to fit an n-gram scorer on");
  zeroshot->add_option("--ngram-order", zeroshot_args.ngram_order,
                       "Fitted scorer n-gram order");
  zeroshot->add_option("--add-k", zeroshot_args.add_k,
                       "Fitted scorer smoothing constant");
  zeroshot->add_option("--infiller", zeroshot_args.infiller_id,
                       "identity, unigram, or an asset id");
  zeroshot->add_option("--n-perturbations", zeroshot_args.n_perturbations,
                       "Variants per text");
  zeroshot->add_option("--mask-fraction", zeroshot_args.mask_fraction,
                       "Fraction of words masked per variant");
  zeroshot->add_option("--span-words", zeroshot_args.span_words,
                       "Words per masked span");
  zeroshot->add_flag("--sum-loglik", zeroshot_args.sum_loglik,
                     "Sum log-likelihood instead of per-token mean");
  zeroshot->add_option("--calibrate-on", zeroshot_args.calibrate_on,
                       "Labeled JSONL for threshold calibration");
  zeroshot->add_option("--threshold", zeroshot_args.threshold,
                       "Fixed curvature decision threshold");
  zeroshot->add_option("--objective", zeroshot_args.objective,
                       "max_accuracy or fixed_fpr")
      ->check(CLI::IsMember({"max_accuracy", "fixed_fpr"}));
  zeroshot->add_option("--fpr-target", zeroshot_args.fpr_target,
                       "False-positive-rate target for fixed_fpr");

  SweepArgs sweep_args;
  auto* sweep = app.add_subcommand("sweep", "Hyperparameter grid study");
  sweep->add_option("--grid", sweep_args.grid, "SweepGrid JSON")->required();
  sweep->add_option("--train", sweep_args.train, "Training JSONL")->required();
  sweep->add_option("--dev", sweep_args.dev, "Dev JSONL")->required();
  sweep->add_option("--test", sweep_args.test, "Optional test JSONL");
  sweep->add_option("--out", sweep_args.out, "Output directory")->required();
  sweep->add_option("--encoder", sweep_args.encoder_id, "Encoder id");
  sweep->add_option("--memory-budget", sweep_args.memory_budget,
                    "Activation budget in bytes; 0 disables");
  sweep->add_option("--stop-after-cells", sweep_args.stop_after,
                    "Stop before running this many new cells (resume later)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*stats) {
      return cmd_stats(stats_args);
    }
    if (*train) {
      train_args.seed_override = seed_override;
      return cmd_train(train_args);
    }
    if (*eval) {
      return cmd_eval(eval_args);
    }
    if (*predict) {
      return cmd_predict(predict_args);
    }
    if (*zeroshot) {
      if (seed_override.has_value()) {
        zeroshot_args.seed = *seed_override;
      }
      return cmd_zeroshot(zeroshot_args);
    }
    if (*sweep) {
      sweep_args.seed_override = seed_override;
      return cmd_sweep(sweep_args);
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const AssetError& e) {
    std::cerr << "asset error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
