#include "mgtd/zeroshot.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mgtd/tokenizer.hpp"

namespace mgtd {

using nlohmann::json;

void PerturbSpec::validate() const {
  if (n_perturbations < 1) {
    throw ConfigError("n_perturbations must be >= 1");
  }
  if (mask_fraction <= 0.0 || mask_fraction >= 1.0) {
    throw ConfigError("mask_fraction must lie in (0, 1)");
  }
  if (span_words < 1) {
    throw ConfigError("span_words must be >= 1");
  }
}

// ---------------------------------------------------------------------------
// NgramScorer

namespace {

constexpr char kCtxSep = '\x01';
constexpr const char* kStartWord = "<s>";

std::string context_key(const std::vector<std::string>& ctx) {
  std::string key;
  for (std::size_t i = 0; i < ctx.size(); ++i) {
    if (i > 0) {
      key.push_back(kCtxSep);
    }
    key += ctx[i];
  }
  return key;
}

}  // namespace

NgramScorer::NgramScorer(int order, double add_k)
    : order_(order), add_k_(add_k) {
  if (order < 1) {
    throw ConfigError("n-gram order must be >= 1");
  }
  if (add_k <= 0.0) {
    throw ConfigError("add-k smoothing constant must be > 0");
  }
}

std::vector<std::string> NgramScorer::words(const std::string& text) {
  std::vector<std::string> out;
  std::string current;
  for (unsigned char c : text) {
    bool keep = std::isalnum(c) != 0 || c >= 0x80;
    if (keep) {
      current.push_back(
          static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) {
    out.push_back(std::move(current));
  }
  return out;
}

void NgramScorer::fit(const std::vector<std::string>& texts) {
  std::map<std::string, int> sorted_vocab;  // deterministic ordering
  std::vector<std::vector<std::string>> tokenized;
  tokenized.reserve(texts.size());
  for (const auto& text : texts) {
    tokenized.push_back(words(text));
    for (const auto& w : tokenized.back()) {
      sorted_vocab.emplace(w, 0);
    }
  }
  vocab_.clear();
  vocab_index_.clear();
  for (auto& [word, idx] : sorted_vocab) {
    idx = static_cast<int>(vocab_.size());
    vocab_index_[word] = idx;
    vocab_.push_back(word);
  }
  counts_.clear();
  context_totals_.clear();
  for (const auto& tokens : tokenized) {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      std::vector<std::string> ctx;
      for (int back = order_ - 1; back >= 1; --back) {
        ctx.push_back(i >= static_cast<std::size_t>(back)
                          ? tokens[i - static_cast<std::size_t>(back)]
                          : kStartWord);
      }
      auto key = context_key(ctx);
      ++counts_[key][vocab_index_.at(tokens[i])];
      ++context_totals_[key];
    }
  }
}

double NgramScorer::loglikelihood(const std::string& text,
                                  bool sum_mode) const {
  auto tokens = words(text);
  if (tokens.empty()) {
    throw ValidationError("text has no scorable words");
  }
  const double v_plus_unk = static_cast<double>(vocab_.size()) + 1.0;
  double total = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::vector<std::string> ctx;
    for (int back = order_ - 1; back >= 1; --back) {
      ctx.push_back(i >= static_cast<std::size_t>(back)
                        ? tokens[i - static_cast<std::size_t>(back)]
                        : kStartWord);
    }
    auto key = context_key(ctx);
    double ctx_total = 0.0;
    double word_count = 0.0;
    auto tot_it = context_totals_.find(key);
    if (tot_it != context_totals_.end()) {
      ctx_total = static_cast<double>(tot_it->second);
      auto word_it = vocab_index_.find(tokens[i]);
      if (word_it != vocab_index_.end()) {
        const auto& ctx_counts = counts_.at(key);
        auto cnt_it = ctx_counts.find(word_it->second);
        if (cnt_it != ctx_counts.end()) {
          word_count = static_cast<double>(cnt_it->second);
        }
      }
    }
    total += std::log((word_count + add_k_) /
                      (ctx_total + add_k_ * v_plus_unk));
  }
  return sum_mode ? total : total / static_cast<double>(tokens.size());
}

std::string NgramScorer::to_json() const {
  json j;
  j["id"] = id_;
  j["order"] = order_;
  j["add_k"] = add_k_;
  j["vocab"] = vocab_;
  json counts = json::object();
  // std::map keyed dump keeps output deterministic.
  std::map<std::string, std::map<std::string, std::size_t>> ordered;
  for (const auto& [ctx, words_counts] : counts_) {
    for (const auto& [widx, n] : words_counts) {
      ordered[ctx][std::to_string(widx)] = n;
    }
  }
  for (const auto& [ctx, words_counts] : ordered) {
    json inner = json::object();
    for (const auto& [widx, n] : words_counts) {
      inner[widx] = n;
    }
    counts[ctx] = std::move(inner);
  }
  j["counts"] = std::move(counts);
  return j.dump() + "\n";
}

NgramScorer NgramScorer::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid n-gram model JSON: ") + e.what());
  }
  try {
    NgramScorer scorer(j.at("order").get<int>(), j.at("add_k").get<double>());
    scorer.id_ = j.at("id").get<std::string>();
    scorer.vocab_ = j.at("vocab").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < scorer.vocab_.size(); ++i) {
      scorer.vocab_index_[scorer.vocab_[i]] = static_cast<int>(i);
    }
    for (const auto& [ctx, inner] : j.at("counts").items()) {
      std::size_t total = 0;
      for (const auto& [widx, n] : inner.items()) {
        auto count = n.get<std::size_t>();
        scorer.counts_[ctx][std::stoi(widx)] = count;
        total += count;
      }
      scorer.context_totals_[ctx] = total;
    }
    return scorer;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("n-gram model JSON missing field: ") +
                      e.what());
  }
}

// ---------------------------------------------------------------------------
// Infillers

std::vector<std::string> IdentityInfiller::infill(
    const std::vector<std::string>& words, std::size_t begin, std::size_t len,
    std::mt19937_64& rng) const {
  (void)rng;
  return {words.begin() + static_cast<std::ptrdiff_t>(begin),
          words.begin() + static_cast<std::ptrdiff_t>(begin + len)};
}

UnigramInfiller::UnigramInfiller(
    std::vector<std::pair<std::string, std::size_t>> table) {
  std::sort(table.begin(), table.end());
  for (auto& [word, count] : table) {
    if (count == 0) {
      continue;
    }
    total_ += count;
    words_.push_back(std::move(word));
    cumulative_.push_back(total_);
  }
  if (total_ == 0) {
    throw ValidationError("unigram infiller table is empty");
  }
}

UnigramInfiller UnigramInfiller::fit(const std::vector<std::string>& texts) {
  std::map<std::string, std::size_t> counts;
  for (const auto& text : texts) {
    for (const auto& w : NgramScorer::words(text)) {
      ++counts[w];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> table(counts.begin(),
                                                         counts.end());
  return UnigramInfiller(std::move(table));
}

std::vector<std::string> UnigramInfiller::infill(
    const std::vector<std::string>& words, std::size_t begin, std::size_t len,
    std::mt19937_64& rng) const {
  (void)words;
  (void)begin;
  std::vector<std::string> out;
  out.reserve(len);
  for (std::size_t i = 0; i < len; ++i) {
    std::uint64_t r = rng_below(rng, total_);
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), r);
    out.push_back(words_[static_cast<std::size_t>(it - cumulative_.begin())]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Perturbation

namespace {

std::vector<std::string> whitespace_words(const std::string& text) {
  std::vector<std::string> out;
  std::string current;
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      if (!current.empty()) {
        out.push_back(std::move(current));
        current.clear();
      }
    } else {
      current.push_back(c);
    }
  }
  if (!current.empty()) {
    out.push_back(std::move(current));
  }
  return out;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i > 0) {
      out.push_back(' ');
    }
    out += words[i];
  }
  return out;
}

// k distinct sorted values from [0, space) by selection sampling.
std::vector<std::size_t> sample_sorted(std::mt19937_64& rng, std::size_t space,
                                       std::size_t k) {
  std::vector<std::size_t> out;
  out.reserve(k);
  std::size_t need = k;
  for (std::size_t i = 0; i < space && need > 0; ++i) {
    if (rng_below(rng, space - i) < need) {
      out.push_back(i);
      --need;
    }
  }
  return out;
}

}  // namespace

PerturbOutcome perturb(const std::string& text, const PerturbSpec& spec,
                       const Infiller& infiller) {
  spec.validate();
  PerturbOutcome outcome;
  auto original = whitespace_words(text);
  const auto n = original.size();
  const auto span = static_cast<std::size_t>(spec.span_words);
  if (n < 2 * span) {
    outcome.skip_reason = "text too short to perturb: " + std::to_string(n) +
                          " words, need at least " + std::to_string(2 * span);
    return outcome;
  }
  auto n_spans = static_cast<std::size_t>(std::ceil(
      spec.mask_fraction * static_cast<double>(n) / static_cast<double>(span)));
  n_spans = std::min(n_spans, n / span);
  if (n_spans == 0) {
    outcome.skip_reason = "mask fraction selects no spans";
    return outcome;
  }
  const std::uint64_t text_seed = mix_seed(spec.seed, fnv1a64(text));
  for (int v = 0; v < spec.n_perturbations; ++v) {
    std::mt19937_64 rng(mix_seed(text_seed, static_cast<std::uint64_t>(v)));
    // Disjoint spans: sample k starts in the compressed space where each
    // chosen span contributes span-1 fewer free slots.
    std::size_t space = n - n_spans * (span - 1);
    auto compressed = sample_sorted(rng, space, n_spans);
    std::vector<std::string> variant = original;
    for (std::size_t j = 0; j < compressed.size(); ++j) {
      std::size_t start = compressed[j] + j * (span - 1);
      auto replacement = infiller.infill(original, start, span, rng);
      for (std::size_t k = 0; k < span; ++k) {
        variant[start + k] = replacement[k];
      }
    }
    outcome.variants.push_back(join_words(variant));
  }
  return outcome;
}

CurvatureResult curvature_score(const std::string& text,
                                const PerturbSpec& spec,
                                const Infiller& infiller,
                                const ScoringModel& scorer) {
  CurvatureResult result;
  auto outcome = perturb(text, spec, infiller);
  if (!outcome.skip_reason.empty()) {
    result.skip_reason = outcome.skip_reason;
    return result;
  }
  result.base_loglik = scorer.loglikelihood(text, spec.sum_loglik);
  std::string failures;
  for (std::size_t v = 0; v < outcome.variants.size(); ++v) {
    try {
      result.perturbed_logliks.push_back(
          scorer.loglikelihood(outcome.variants[v], spec.sum_loglik));
    } catch (const MgtdError& e) {
      failures += (failures.empty() ? "" : "; ") + std::string("variant ") +
                  std::to_string(v) + ": " + e.what();
    }
  }
  if (!failures.empty()) {
    throw ValidationError("perturbation scoring failed: " + failures);
  }
  // Mean of per-variant differences rather than base - mean(logliks): each
  // term is exactly 0.0 when a variant scores identically to the base, so an
  // identity infiller yields curvature 0.0 with no accumulation residue.
  double mean_diff = 0.0;
  for (double ll : result.perturbed_logliks) {
    mean_diff += result.base_loglik - ll;
  }
  mean_diff /= static_cast<double>(result.perturbed_logliks.size());
  result.curvature = mean_diff;
  return result;
}

std::string curvature_result_to_json(const CurvatureResult& result) {
  json j;
  j["id"] = result.id;
  if (result.skip_reason.empty()) {
    j["base_loglik"] = result.base_loglik;
    j["perturbed_logliks"] = result.perturbed_logliks;
    j["curvature"] = result.curvature;
  } else {
    j["base_loglik"] = nullptr;
    j["perturbed_logliks"] = json::array();
    j["curvature"] = nullptr;
  }
  j["decision"] =
      result.decision.has_value() ? json(*result.decision) : json(nullptr);
  j["threshold"] =
      result.threshold.has_value() ? json(*result.threshold) : json(nullptr);
  j["skip_reason"] = result.skip_reason;
  return j.dump();
}

double calibrate_threshold(
    const std::vector<std::pair<double, int>>& scored_labels,
    CalibrationObjective objective, double fpr_target) {
  if (scored_labels.empty()) {
    // Same failure class as the single-class case: no optimum exists.
    throw UndefinedMetricError("calibration needs scored examples");
  }
  std::size_t n_pos = 0, n_neg = 0;
  for (const auto& [score, label] : scored_labels) {
    if (label != 0 && label != 1) {
      throw ValidationError("calibration labels must be 0 or 1");
    }
    if (!std::isfinite(score)) {
      throw ValidationError("calibration scores must be finite");
    }
    label == 1 ? ++n_pos : ++n_neg;
  }
  if (n_pos == 0 || n_neg == 0) {
    throw UndefinedMetricError(
        "threshold calibration is undefined with a single class");
  }

  std::vector<double> values;
  values.reserve(scored_labels.size());
  for (const auto& [score, label] : scored_labels) {
    values.push_back(score);
  }
  std::sort(values.begin(), values.end());
  std::vector<double> candidates;
  for (std::size_t i = 0; i + 1 < values.size(); ++i) {
    candidates.push_back((values[i] + values[i + 1]) / 2.0);
  }

  auto counts_at = [&](double t) {
    std::size_t correct = 0, false_pos = 0;
    for (const auto& [score, label] : scored_labels) {
      int pred = score >= t ? 1 : 0;
      correct += static_cast<std::size_t>(pred == label);
      false_pos += static_cast<std::size_t>(pred == 1 && label == 0);
    }
    return std::pair<std::size_t, std::size_t>{correct, false_pos};
  };

  if (objective == CalibrationObjective::kMaxAccuracy) {
    double best_threshold = candidates.front();
    std::size_t best_correct = 0;
    for (double t : candidates) {  // ascending, so first max = smallest
      auto [correct, false_pos] = counts_at(t);
      (void)false_pos;
      if (correct > best_correct) {
        best_correct = correct;
        best_threshold = t;
      }
    }
    return best_threshold;
  }

  if (fpr_target < 0.0 || fpr_target > 1.0) {
    throw ConfigError("fpr target must lie in [0, 1]");
  }
  for (double t : candidates) {
    auto [correct, false_pos] = counts_at(t);
    (void)correct;
    double fpr = static_cast<double>(false_pos) / static_cast<double>(n_neg);
    if (fpr <= fpr_target) {
      return t;
    }
  }
  // Above every score: all-negative decisions, FPR 0.
  return values.back() + 1.0;
}

std::vector<CurvatureResult> zeroshot_corpus(const CorpusSplit& split,
                                             const PerturbSpec& spec,
                                             const Infiller& infiller,
                                             const ScoringModel& scorer) {
  std::vector<CurvatureResult> results;
  results.reserve(split.records.size());
  for (const auto& record : split.records) {
    CurvatureResult result;
    try {
      result = curvature_score(record.text, spec, infiller, scorer);
    } catch (const MgtdError& e) {
      result = CurvatureResult{};
      result.skip_reason = e.what();
    }
    result.id = record.id;
    results.push_back(std::move(result));
  }
  return results;
}

// ---------------------------------------------------------------------------
// Asset resolution

std::unique_ptr<ScoringModel> resolve_scoring_model(const std::string& id) {
  if (id.empty()) {
    throw ConfigError("scoring model id must not be empty");
  }
  auto path = model_cache_dir() / id / "ngram.json";
  if (!std::filesystem::exists(path)) {
    throw AssetError("scoring model '" + id + "' not found at " +
                     path.string());
  }
  auto scorer = std::make_unique<NgramScorer>(NgramScorer::from_json(read_file(path)));
  scorer->set_id(id);
  return scorer;
}

std::unique_ptr<Infiller> resolve_infiller(
    const std::string& id, const std::vector<std::string>& fit_texts) {
  if (id == kIdentityInfillerId) {
    return std::make_unique<IdentityInfiller>();
  }
  if (id == kUnigramInfillerId) {
    if (fit_texts.empty()) {
      throw AssetError(
          "unigram infiller needs reference texts to fit its word table");
    }
    return std::make_unique<UnigramInfiller>(UnigramInfiller::fit(fit_texts));
  }
  auto path = model_cache_dir() / id / "unigram.json";
  if (!std::filesystem::exists(path)) {
    throw AssetError("infill model '" + id + "' not found at " + path.string());
  }
  // word\tcount lines.
  std::istringstream in(read_file(path));
  std::vector<std::pair<std::string, std::size_t>> table;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ValidationError("bad unigram table line in " + path.string() +
                            ": " + line);
    }
    table.emplace_back(line.substr(0, tab),
                       static_cast<std::size_t>(
                           std::stoull(line.substr(tab + 1))));
  }
  return std::make_unique<UnigramInfiller>(std::move(table));
}

}  // namespace mgtd
