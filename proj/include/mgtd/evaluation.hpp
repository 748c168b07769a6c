#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mgtd/corpus.hpp"
#include "mgtd/model.hpp"

namespace mgtd {

struct Confusion {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;
};

struct RocResult {
  // (false-positive rate, true-positive rate), from (0,0) to (1,1).
  std::vector<std::pair<double, double>> points;
  double auc = 0.0;
};

struct EvalReport {
  std::size_t n = 0;
  double accuracy_pct = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double auc = 0.0;
  std::vector<std::pair<double, double>> roc_points;
  double threshold_used = 0.5;
  std::string split;  // which split produced the report
};

// Percent of positions where prediction equals label.
double accuracy(const std::vector<int>& labels,
                const std::vector<int>& predictions);

// Positive class = 1 (machine-generated).
Confusion confusion(const std::vector<int>& labels,
                    const std::vector<int>& predictions);

// ROC by descending-threshold sweep with tied scores grouped; AUC by
// trapezoidal integration (equals the pairwise-comparison statistic with ties
// counted half). Throws UndefinedMetricError when only one class is present.
RocResult roc_auc(const std::vector<int>& labels,
                  const std::vector<double>& scores);

// Scores the split with predict_proba, thresholds at `threshold`, and fills a
// mutually consistent report.
EvalReport evaluate_split(const DetectorModel& model, const CorpusSplit& split,
                          const Tokenizer& tokenizer, double threshold = 0.5,
                          int batch_size = 32);

std::string eval_report_to_json(const EvalReport& report);
EvalReport eval_report_from_json(const std::string& text);

// Writes report.json, roc.csv, confusion.csv, roc.png, confusion.png.
void emit_report(const EvalReport& report, const std::filesystem::path& out_dir);

}  // namespace mgtd
