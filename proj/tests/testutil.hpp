#pragma once

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mgtd/common.hpp"
#include "mgtd/corpus.hpp"
#include "mgtd/model.hpp"
#include "mgtd/tokenizer.hpp"

namespace testutil {

namespace fs = std::filesystem;

// Self-deleting directory under the system temp root.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<unsigned> counter{0};
    path_ = fs::temp_directory_path() /
            ("mgtd_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter.fetch_add(1)));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

// The marker trigram carried by every synthetic machine-class text.
inline const std::vector<std::string>& marker_trigram() {
  static const std::vector<std::string> words = {"copper", "violet", "ember"};
  return words;
}

inline std::string random_text(std::mt19937_64& rng,
                               const std::vector<std::string>& pool,
                               std::size_t n_words) {
  std::string text;
  for (std::size_t i = 0; i < n_words; ++i) {
    if (i > 0) {
      text.push_back(' ');
    }
    text += pool[mgtd::rng_below(rng, pool.size())];
  }
  return text;
}

// Separable synthetic corpus: class 1 records carry the marker trigram at a
// random position, class 0 records never contain the marker words.
inline mgtd::CorpusSplit synthetic_split(std::size_t n, std::uint64_t seed,
                                         mgtd::SplitRole role) {
  std::vector<std::string> pool;
  for (const auto& word : mgtd::tiny_vocabulary_words()) {
    bool marker = false;
    for (const auto& m : marker_trigram()) {
      marker = marker || word == m;
    }
    if (!marker) {
      pool.push_back(word);
    }
  }
  std::mt19937_64 rng(mgtd::mix_seed(seed, 0x5EEDC0DE));
  mgtd::CorpusSplit split;
  split.role = role;
  for (std::size_t i = 0; i < n; ++i) {
    mgtd::TextRecord record;
    record.id = std::string(mgtd::to_string(role)) + "-" + std::to_string(i);
    record.label = static_cast<int>(i % 2);
    std::size_t n_words = 12 + mgtd::rng_below(rng, 8);
    std::vector<std::string> words;
    for (std::size_t w = 0; w < n_words; ++w) {
      words.push_back(pool[mgtd::rng_below(rng, pool.size())]);
    }
    if (*record.label == 1) {
      // Two marker injections make the signal robust under truncation.
      for (int rep = 0; rep < 2; ++rep) {
        auto pos = mgtd::rng_below(rng, words.size() - 2);
        for (std::size_t k = 0; k < 3; ++k) {
          words[pos + k] = marker_trigram()[k];
        }
      }
    }
    std::string text;
    for (std::size_t w = 0; w < words.size(); ++w) {
      if (w > 0) {
        text.push_back(' ');
      }
      text += words[w];
    }
    record.text = text;
    split.records.push_back(std::move(record));
  }
  return split;
}

inline void write_jsonl(const mgtd::CorpusSplit& split, const fs::path& path) {
  mgtd::save_jsonl(split, path);
}

// Relative error between an analytic and a finite-difference gradient.
inline double rel_err(double analytic, double numeric) {
  double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

// Central-difference check of d(loss)/d(theta) for `samples` randomly chosen
// coordinates of the given parameters. loss() must recompute the full forward
// pass (no caching across calls) and the parameter gradients must already
// hold the analytic gradient of that same loss. Returns the worst relative
// error seen.
template <typename LossFn>
double max_grad_rel_err(const std::vector<mgtd::nn::Parameter*>& params,
                        LossFn&& loss, std::mt19937_64& rng, int samples,
                        double step = 1e-5) {
  std::size_t total = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    total += static_cast<std::size_t>(params[p]->value.size());
  }
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    auto flat = mgtd::rng_below(rng, total);
    std::size_t p = 0;
    while (flat >= static_cast<std::size_t>(params[p]->value.size())) {
      flat -= static_cast<std::size_t>(params[p]->value.size());
      ++p;
    }
    double* slot = params[p]->value.data() + flat;
    const double saved = *slot;
    *slot = saved + step;
    const double up = loss();
    *slot = saved - step;
    const double down = loss();
    *slot = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double analytic = *(params[p]->grad.data() + flat);
    worst = std::max(worst, rel_err(analytic, numeric));
  }
  return worst;
}

}  // namespace testutil
