#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mgtd/common.hpp"

namespace mgtd {

class Tokenizer;

// One corpus example. label: 0 = human-written, 1 = machine-generated.
struct TextRecord {
  std::string id;
  std::optional<int> label;
  std::string text;
  std::optional<std::string> model;   // generator name
  std::optional<std::string> source;  // web domain

  bool operator==(const TextRecord&) const = default;
};

enum class SplitRole { kTrain, kDev, kTest };

const char* to_string(SplitRole role);
SplitRole split_role_from_string(const std::string& s);

struct CorpusSplit {
  SplitRole role = SplitRole::kTrain;
  std::vector<TextRecord> records;  // file order

  bool fully_labeled() const;
};

struct LineError {
  std::size_t line = 0;  // 1-based
  std::string message;
};

struct LoadResult {
  CorpusSplit split;
  std::vector<LineError> errors;
};

struct SplitStats {
  std::size_t n_human = 0;
  std::size_t n_machine = 0;
  std::size_t n_unlabeled = 0;
  std::size_t n_total = 0;
  // Bucket label -> count, e.g. "<=64", "65-128", ">2048". Kept alongside the
  // boundaries so labels are reconstructible.
  std::vector<std::size_t> bucket_counts;
  std::vector<std::size_t> bucket_boundaries;

  std::vector<std::string> bucket_labels() const;
  SplitStats& operator+=(const SplitStats& other);
};

inline const std::vector<std::size_t> kDefaultHistogramBoundaries = {
    64, 128, 256, 512, 1024, 2048};

// Loads a JSONL file (one object per line; fields id, label, text and the
// optional model/source). Invalid lines are collected into LoadResult.errors
// with their line numbers and the load continues; with strict=true the first
// invalid line raises ValidationError instead. Unlabeled records are valid
// only when role == kTest.
LoadResult load_jsonl(const std::filesystem::path& path, SplitRole role,
                      bool strict = false);

// Writes the split back to JSONL, one record per line, omitting absent
// optional fields. Reloading yields field-identical records.
void save_jsonl(const CorpusSplit& split, const std::filesystem::path& path);

// Label counts plus a histogram of per-record token counts (whole-text
// subword count, no specials, no truncation) bucketed by the supplied
// strictly increasing boundaries.
SplitStats compute_stats(const CorpusSplit& split, const Tokenizer& tokenizer,
                         const std::vector<std::size_t>& boundaries =
                             kDefaultHistogramBoundaries);

// Keeps round(fraction * n) records per label class, preserving file order.
// Deterministic for a fixed seed; fraction must be in (0, 1]. The split must
// be fully labeled.
CorpusSplit stratified_subsample(const CorpusSplit& split, double fraction,
                                 std::uint64_t seed);

std::string split_stats_to_json(const SplitStats& stats, SplitRole role);

}  // namespace mgtd
