#include "mgtd/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "mgtd/tokenizer.hpp"

namespace mgtd {

using nlohmann::json;

const char* to_string(SplitRole role) {
  switch (role) {
    case SplitRole::kTrain:
      return "train";
    case SplitRole::kDev:
      return "dev";
    case SplitRole::kTest:
      return "test";
  }
  return "?";
}

SplitRole split_role_from_string(const std::string& s) {
  if (s == "train") return SplitRole::kTrain;
  if (s == "dev") return SplitRole::kDev;
  if (s == "test") return SplitRole::kTest;
  throw ConfigError("unknown split role: '" + s + "' (expected train|dev|test)");
}

bool CorpusSplit::fully_labeled() const {
  return std::all_of(records.begin(), records.end(),
                     [](const TextRecord& r) { return r.label.has_value(); });
}

std::vector<std::string> SplitStats::bucket_labels() const {
  std::vector<std::string> labels;
  if (bucket_boundaries.empty()) {
    return labels;
  }
  labels.push_back("<=" + std::to_string(bucket_boundaries.front()));
  for (std::size_t i = 1; i < bucket_boundaries.size(); ++i) {
    labels.push_back(std::to_string(bucket_boundaries[i - 1] + 1) + "-" +
                     std::to_string(bucket_boundaries[i]));
  }
  labels.push_back(">" + std::to_string(bucket_boundaries.back()));
  return labels;
}

SplitStats& SplitStats::operator+=(const SplitStats& other) {
  if (bucket_boundaries != other.bucket_boundaries) {
    throw ValidationError("SplitStats: mismatched histogram boundaries");
  }
  n_human += other.n_human;
  n_machine += other.n_machine;
  n_unlabeled += other.n_unlabeled;
  n_total += other.n_total;
  for (std::size_t i = 0; i < bucket_counts.size(); ++i) {
    bucket_counts[i] += other.bucket_counts[i];
  }
  return *this;
}

namespace {

std::string trimmed(const std::string& s) {
  auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) {
    return "";
  }
  auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

// Parses one JSONL line into a record; returns an error message on failure.
std::optional<std::string> parse_record(const std::string& line, SplitRole role,
                                        TextRecord* out) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    return std::string("invalid JSON: ") + e.what();
  }
  if (!obj.is_object()) {
    return "line is not a JSON object";
  }
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (key != "id" && key != "label" && key != "text" && key != "model" &&
        key != "source") {
      return "unknown field '" + key + "'";
    }
  }
  if (!obj.contains("id")) {
    return "missing id field";
  }
  if (obj["id"].is_string()) {
    out->id = obj["id"].get<std::string>();
  } else if (obj["id"].is_number_integer()) {
    out->id = std::to_string(obj["id"].get<long long>());
  } else {
    return "id must be a string or integer";
  }
  if (!obj.contains("text") || !obj["text"].is_string()) {
    return "missing text field";
  }
  out->text = obj["text"].get<std::string>();
  if (trimmed(out->text).empty()) {
    return "text is empty";
  }
  if (obj.contains("label") && !obj["label"].is_null()) {
    if (!obj["label"].is_number_integer()) {
      return "label must be an integer";
    }
    long long label = obj["label"].get<long long>();
    if (label != 0 && label != 1) {
      return "label out of range (expected 0 or 1, got " +
             std::to_string(label) + ")";
    }
    out->label = static_cast<int>(label);
  } else {
    out->label.reset();
    if (role != SplitRole::kTest) {
      return std::string("unlabeled record not allowed in ") +
             to_string(role) + " split";
    }
  }
  if (obj.contains("model") && !obj["model"].is_null()) {
    if (!obj["model"].is_string()) {
      return "model must be a string";
    }
    out->model = obj["model"].get<std::string>();
  }
  if (obj.contains("source") && !obj["source"].is_null()) {
    if (!obj["source"].is_string()) {
      return "source must be a string";
    }
    out->source = obj["source"].get<std::string>();
  }
  return std::nullopt;
}

}  // namespace

LoadResult load_jsonl(const std::filesystem::path& path, SplitRole role,
                      bool strict) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open dataset file: " + path.string());
  }
  LoadResult result;
  result.split.role = role;
  std::unordered_map<std::string, std::size_t> seen_ids;  // id -> line
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (trimmed(line).empty()) {
      continue;
    }
    TextRecord rec;
    auto err = parse_record(line, role, &rec);
    if (!err) {
      auto [it, inserted] = seen_ids.emplace(rec.id, line_no);
      if (!inserted) {
        err = "duplicate id '" + rec.id + "' (first seen at line " +
              std::to_string(it->second) + ")";
      }
    }
    if (err) {
      if (strict) {
        throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                              ": " + *err);
      }
      result.errors.push_back({line_no, *err});
      continue;
    }
    result.split.records.push_back(std::move(rec));
  }
  if (in.bad()) {
    throw IoError("read error on: " + path.string());
  }
  return result;
}

void save_jsonl(const CorpusSplit& split, const std::filesystem::path& path) {
  std::ostringstream out;
  for (const auto& rec : split.records) {
    json obj;
    obj["id"] = rec.id;
    if (rec.label) {
      obj["label"] = *rec.label;
    }
    obj["text"] = rec.text;
    if (rec.model) {
      obj["model"] = *rec.model;
    }
    if (rec.source) {
      obj["source"] = *rec.source;
    }
    out << obj.dump() << "\n";
  }
  write_file_atomic(path, out.str());
}

SplitStats compute_stats(const CorpusSplit& split, const Tokenizer& tokenizer,
                         const std::vector<std::size_t>& boundaries) {
  for (std::size_t i = 1; i < boundaries.size(); ++i) {
    if (boundaries[i] <= boundaries[i - 1]) {
      throw ValidationError(
          "histogram boundaries must be strictly increasing");
    }
  }
  SplitStats stats;
  stats.bucket_boundaries = boundaries;
  stats.bucket_counts.assign(boundaries.size() + 1, 0);
  for (const auto& rec : split.records) {
    ++stats.n_total;
    if (!rec.label) {
      ++stats.n_unlabeled;
    } else if (*rec.label == 0) {
      ++stats.n_human;
    } else {
      ++stats.n_machine;
    }
    std::size_t n_tokens = tokenizer.count_tokens(rec.text);
    std::size_t bucket = boundaries.size();
    for (std::size_t i = 0; i < boundaries.size(); ++i) {
      if (n_tokens <= boundaries[i]) {
        bucket = i;
        break;
      }
    }
    ++stats.bucket_counts[bucket];
  }
  return stats;
}

CorpusSplit stratified_subsample(const CorpusSplit& split, double fraction,
                                 std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ValidationError("fraction must be in (0, 1], got " +
                                format_double(fraction));
  }
  if (!split.fully_labeled()) {
    throw ValidationError(
        "stratified_subsample requires a fully labeled split");
  }
  // Selection sampling (Knuth algorithm S) per label class keeps file order
  // and is deterministic for a fixed seed.
  std::vector<std::size_t> n_by_label(2, 0);
  for (const auto& rec : split.records) {
    ++n_by_label[static_cast<std::size_t>(*rec.label)];
  }
  std::vector<std::size_t> want(2), seen(2, 0), taken(2, 0);
  for (int c = 0; c < 2; ++c) {
    want[c] = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(n_by_label[c])));
    want[c] = std::min(want[c], n_by_label[c]);
  }
  std::mt19937_64 rng(seed);
  CorpusSplit out;
  out.role = split.role;
  for (const auto& rec : split.records) {
    auto c = static_cast<std::size_t>(*rec.label);
    std::size_t remaining = n_by_label[c] - seen[c];
    std::size_t needed = want[c] - taken[c];
    ++seen[c];
    if (needed == 0) {
      continue;
    }
    if (rng_below(rng, remaining) < needed) {
      out.records.push_back(rec);
      ++taken[c];
    }
  }
  return out;
}

std::string split_stats_to_json(const SplitStats& stats, SplitRole role) {
  json obj;
  obj["schema_version"] = 1;
  obj["role"] = to_string(role);
  obj["n_human"] = stats.n_human;
  obj["n_machine"] = stats.n_machine;
  obj["n_unlabeled"] = stats.n_unlabeled;
  obj["n_total"] = stats.n_total;
  json hist = json::array();
  auto labels = stats.bucket_labels();
  for (std::size_t i = 0; i < stats.bucket_counts.size(); ++i) {
    hist.push_back({{"bucket", labels[i]}, {"count", stats.bucket_counts[i]}});
  }
  obj["length_histogram"] = hist;
  return obj.dump(2) + "\n";
}

}  // namespace mgtd
