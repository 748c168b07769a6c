#include "mgtd/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mgtd/plot.hpp"

namespace mgtd {

using nlohmann::json;

namespace {

void check_binary(const std::vector<int>& values, const char* what) {
  for (int v : values) {
    if (v != 0 && v != 1) {
      throw ValidationError(std::string(what) + " contain a non-binary value " +
                            std::to_string(v));
    }
  }
}

}  // namespace

double accuracy(const std::vector<int>& labels,
                const std::vector<int>& predictions) {
  if (labels.empty() || labels.size() != predictions.size()) {
    throw ValidationError("accuracy needs equal-length non-empty sequences");
  }
  check_binary(labels, "labels");
  check_binary(predictions, "predictions");
  std::size_t matches = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == predictions[i]) {
      ++matches;
    }
  }
  return 100.0 * static_cast<double>(matches) /
         static_cast<double>(labels.size());
}

Confusion confusion(const std::vector<int>& labels,
                    const std::vector<int>& predictions) {
  if (labels.empty() || labels.size() != predictions.size()) {
    throw ValidationError("confusion needs equal-length non-empty sequences");
  }
  check_binary(labels, "labels");
  check_binary(predictions, "predictions");
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) {
      predictions[i] == 1 ? ++c.tp : ++c.fn;
    } else {
      predictions[i] == 1 ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

RocResult roc_auc(const std::vector<int>& labels,
                  const std::vector<double>& scores) {
  if (labels.empty() || labels.size() != scores.size()) {
    throw ValidationError("roc_auc needs equal-length non-empty sequences");
  }
  check_binary(labels, "labels");
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) {
      throw ValidationError("roc_auc scores must be finite");
    }
    n_pos += static_cast<std::size_t>(labels[i] == 1);
  }
  std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw UndefinedMetricError(
        "ROC/AUC is undefined when only one class is present");
  }

  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });

  RocResult result;
  result.points.emplace_back(0.0, 0.0);
  std::size_t tp = 0, fp = 0;
  double auc = 0.0;
  double prev_fpr = 0.0, prev_tpr = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    // One step per group of tied scores, so ties move together.
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      tp += static_cast<std::size_t>(labels[order[j]] == 1);
      fp += static_cast<std::size_t>(labels[order[j]] == 0);
      ++j;
    }
    double fpr = static_cast<double>(fp) / static_cast<double>(n_neg);
    double tpr = static_cast<double>(tp) / static_cast<double>(n_pos);
    auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
    result.points.emplace_back(fpr, tpr);
    prev_fpr = fpr;
    prev_tpr = tpr;
    i = j;
  }
  result.auc = auc;
  return result;
}

EvalReport evaluate_split(const DetectorModel& model, const CorpusSplit& split,
                          const Tokenizer& tokenizer, double threshold,
                          int batch_size) {
  if (split.records.empty()) {
    throw ValidationError("cannot evaluate an empty split");
  }
  if (!split.fully_labeled()) {
    throw ValidationError(
        "evaluation needs labels on every record; use prediction mode for "
        "unlabeled data");
  }
  std::vector<int> labels;
  labels.reserve(split.records.size());
  for (const auto& r : split.records) {
    labels.push_back(*r.label);
  }
  auto examples = tokenizer.encode_batch(split.records);

  std::vector<double> scores;
  scores.reserve(examples.size());
  for (std::size_t start = 0; start < examples.size();
       start += static_cast<std::size_t>(batch_size)) {
    std::size_t end =
        std::min(examples.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<TokenizedExample> chunk(examples.begin() + static_cast<std::ptrdiff_t>(start),
                                        examples.begin() + static_cast<std::ptrdiff_t>(end));
    nn::Vec probs = model.predict_proba(chunk);
    for (Eigen::Index r = 0; r < probs.size(); ++r) {
      scores.push_back(probs(r));
    }
  }

  std::vector<int> predictions;
  predictions.reserve(scores.size());
  for (double s : scores) {
    predictions.push_back(s >= threshold ? 1 : 0);
  }

  EvalReport report;
  report.n = labels.size();
  report.accuracy_pct = accuracy(labels, predictions);
  Confusion c = confusion(labels, predictions);
  report.tp = c.tp;
  report.fp = c.fp;
  report.tn = c.tn;
  report.fn = c.fn;
  RocResult roc = roc_auc(labels, scores);
  report.auc = roc.auc;
  report.roc_points = std::move(roc.points);
  report.threshold_used = threshold;
  report.split = to_string(split.role);
  return report;
}

std::string eval_report_to_json(const EvalReport& report) {
  json j;
  j["schema_version"] = 1;
  j["n"] = report.n;
  j["accuracy_pct"] = report.accuracy_pct;
  j["tp"] = report.tp;
  j["fp"] = report.fp;
  j["tn"] = report.tn;
  j["fn"] = report.fn;
  j["auc"] = report.auc;
  json pts = json::array();
  for (const auto& [fpr, tpr] : report.roc_points) {
    pts.push_back(json::array({fpr, tpr}));
  }
  j["roc_points"] = std::move(pts);
  j["threshold_used"] = report.threshold_used;
  j["split"] = report.split;
  return j.dump(2) + "\n";
}

EvalReport eval_report_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid report JSON: ") + e.what());
  }
  EvalReport report;
  try {
    report.n = j.at("n").get<std::size_t>();
    report.accuracy_pct = j.at("accuracy_pct").get<double>();
    report.tp = j.at("tp").get<std::size_t>();
    report.fp = j.at("fp").get<std::size_t>();
    report.tn = j.at("tn").get<std::size_t>();
    report.fn = j.at("fn").get<std::size_t>();
    report.auc = j.at("auc").get<double>();
    for (const auto& pt : j.at("roc_points")) {
      report.roc_points.emplace_back(pt.at(0).get<double>(),
                                     pt.at(1).get<double>());
    }
    report.threshold_used = j.at("threshold_used").get<double>();
    report.split = j.at("split").get<std::string>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("report JSON missing field: ") + e.what());
  }
  return report;
}

void emit_report(const EvalReport& report,
                 const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) {
    throw IoError("cannot create report dir " + out_dir.string() + ": " +
                  ec.message());
  }
  write_file_atomic(out_dir / "report.json", eval_report_to_json(report));

  std::ostringstream roc;
  roc << "fpr,tpr\n";
  for (const auto& [fpr, tpr] : report.roc_points) {
    roc << format_double(fpr) << ',' << format_double(tpr) << '\n';
  }
  write_file_atomic(out_dir / "roc.csv", roc.str());

  std::ostringstream conf;
  conf << "label,pred_0,pred_1\n";
  conf << "0," << report.tn << ',' << report.fp << '\n';
  conf << "1," << report.fn << ',' << report.tp << '\n';
  write_file_atomic(out_dir / "confusion.csv", conf.str());

  plot::write_roc_png(report.roc_points, report.auc, out_dir / "roc.png");
  plot::write_confusion_png(report.tn, report.fp, report.fn, report.tp,
                            out_dir / "confusion.png");
}

}  // namespace mgtd
