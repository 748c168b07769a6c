#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mgtd/common.hpp"
#include "mgtd/corpus.hpp"

namespace mgtd {

// Built-in identifiers for the pluggable zero-shot components. Anything else
// resolves from $MGTD_CACHE_DIR (see resolve_* below).
inline constexpr const char* kIdentityInfillerId = "identity";
inline constexpr const char* kUnigramInfillerId = "unigram";

struct PerturbSpec {
  int n_perturbations = 10;
  double mask_fraction = 0.15;
  int span_words = 2;
  std::string infill_model_id = kUnigramInfillerId;
  std::string scoring_model_id;
  std::uint64_t seed = 0;
  // Per-token mean log-likelihood by default; sum mode kept as a knob for
  // comparisons across equal-length corpora.
  bool sum_loglik = false;

  void validate() const;
};

// Causal scoring model: log-likelihood of a text.
class ScoringModel {
 public:
  virtual ~ScoringModel() = default;
  virtual std::string id() const = 0;
  // Mean per-token log-probability (sum when sum_mode).
  virtual double loglikelihood(const std::string& text,
                               bool sum_mode = false) const = 0;
};

// Word n-gram model with add-k smoothing; the desk-scale stand-in for a
// causal LM. Contexts shorter than order-1 are padded with a start symbol.
class NgramScorer : public ScoringModel {
 public:
  NgramScorer(int order = 2, double add_k = 0.1);

  void fit(const std::vector<std::string>& texts);
  std::string id() const override { return id_; }
  void set_id(std::string id) { id_ = std::move(id); }
  double loglikelihood(const std::string& text,
                       bool sum_mode = false) const override;

  std::string to_json() const;
  static NgramScorer from_json(const std::string& text);

  static std::vector<std::string> words(const std::string& text);

 private:
  std::string id_ = "ngram";
  int order_ = 2;
  double add_k_ = 0.1;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> vocab_index_;
  // context key ("w1\x01w2...") -> (word index -> count, context total)
  std::unordered_map<std::string, std::unordered_map<int, std::size_t>> counts_;
  std::unordered_map<std::string, std::size_t> context_totals_;
};

// Replaces a word span; used by perturb() to build masked-and-infilled
// variants.
class Infiller {
 public:
  virtual ~Infiller() = default;
  virtual std::string id() const = 0;
  virtual std::vector<std::string> infill(const std::vector<std::string>& words,
                                          std::size_t begin, std::size_t len,
                                          std::mt19937_64& rng) const = 0;
};

// Returns the original span unchanged. Degenerate by design: it pins the
// curvature-zero invariant.
class IdentityInfiller : public Infiller {
 public:
  std::string id() const override { return kIdentityInfillerId; }
  std::vector<std::string> infill(const std::vector<std::string>& words,
                                  std::size_t begin, std::size_t len,
                                  std::mt19937_64& rng) const override;
};

// Samples replacement words from a count-weighted table.
class UnigramInfiller : public Infiller {
 public:
  explicit UnigramInfiller(std::vector<std::pair<std::string, std::size_t>> table);
  static UnigramInfiller fit(const std::vector<std::string>& texts);

  std::string id() const override { return kUnigramInfillerId; }
  std::vector<std::string> infill(const std::vector<std::string>& words,
                                  std::size_t begin, std::size_t len,
                                  std::mt19937_64& rng) const override;

 private:
  std::vector<std::string> words_;
  std::vector<std::size_t> cumulative_;
  std::size_t total_ = 0;
};

struct PerturbOutcome {
  std::vector<std::string> variants;  // n_perturbations entries on success
  std::string skip_reason;            // non-empty means the text was skipped
};

// Masks ceil(mask_fraction * word_count / span_words) disjoint spans of
// span_words words per variant and infills them. Deterministic for fixed
// (text, spec, variant index). Texts too short for one span are skipped with
// a reason rather than failing.
PerturbOutcome perturb(const std::string& text, const PerturbSpec& spec,
                       const Infiller& infiller);

struct CurvatureResult {
  std::string id;  // record id when scored through a corpus
  double base_loglik = 0.0;
  std::vector<double> perturbed_logliks;
  double curvature = 0.0;  // base - mean(perturbed); high = machine-like
  std::optional<int> decision;
  std::optional<double> threshold;
  std::string skip_reason;
};

CurvatureResult curvature_score(const std::string& text,
                                const PerturbSpec& spec,
                                const Infiller& infiller,
                                const ScoringModel& scorer);

std::string curvature_result_to_json(const CurvatureResult& result);

enum class CalibrationObjective { kMaxAccuracy, kFixedFpr };

// Candidate thresholds are the midpoints of adjacent sorted curvature values
// (duplicates included); decision rule: curvature >= threshold -> class 1.
// max_accuracy returns the smallest threshold attaining the maximum accuracy;
// fixed_fpr returns the smallest candidate with false-positive rate <= target
// (falling back above the largest curvature when none qualifies).
double calibrate_threshold(
    const std::vector<std::pair<double, int>>& scored_labels,
    CalibrationObjective objective, double fpr_target = 0.05);

// Scores every record; per-record determinism comes from seeding on
// (spec.seed, text). Unscorable records carry skip_reason instead of values.
std::vector<CurvatureResult> zeroshot_corpus(const CorpusSplit& split,
                                             const PerturbSpec& spec,
                                             const Infiller& infiller,
                                             const ScoringModel& scorer);

// Asset resolution: built-in ids, else $MGTD_CACHE_DIR/<id>/ngram.json for
// scorers and $MGTD_CACHE_DIR/<id>/unigram.json (word\tcount lines) for
// infillers.
std::unique_ptr<ScoringModel> resolve_scoring_model(const std::string& id);
std::unique_ptr<Infiller> resolve_infiller(
    const std::string& id, const std::vector<std::string>& fit_texts = {});

}  // namespace mgtd
