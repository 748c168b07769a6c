#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mgtd/common.hpp"
#include "mgtd/corpus.hpp"

namespace mgtd {

// Identifier of the built-in desk-scale encoder + tokenizer pair. It is
// materialized from code so the test suite never loads external assets.
inline constexpr const char* kTinyEncoderId = "tiny-test-encoder";

// Root directory for model assets, from MGTD_CACHE_DIR.
std::filesystem::path model_cache_dir();

struct TokenizedExample {
  std::vector<int> token_ids;              // length exactly max_tokens
  std::vector<std::uint8_t> attention_mask;  // 1 where token_ids is not pad
  std::optional<int> label;
};

// Subword tokenizer tied to a pretrained encoder's vocabulary. Encoding is a
// pure function of (text, handle): pre-tokenize on ASCII whitespace and
// punctuation, look whole pre-tokens up in the vocabulary, and fall back to
// greedy BPE over code points with <unk> for unmatched pieces. Sequences are
// wrapped in <s>...</s>, head-truncated to the token budget, and right-padded.
class Tokenizer {
 public:
  static Tokenizer from_json(const std::string& json_text, int max_tokens);
  // Resolves model_id: the built-in tiny tokenizer, or
  // $MGTD_CACHE_DIR/<model_id>/tokenizer.json.
  static Tokenizer resolve(const std::string& model_id, int max_tokens);
  static Tokenizer tiny(int max_tokens = 64);

  TokenizedExample encode(const std::string& text,
                          std::optional<int> label = std::nullopt) const;
  // Element i corresponds to records[i]; equals element-wise encode. Errors
  // are reported with the failing record's id.
  std::vector<TokenizedExample> encode_batch(
      const std::vector<TextRecord>& records) const;

  // Number of subword pieces for the whole text: no specials, no truncation.
  std::size_t count_tokens(const std::string& text) const;

  const std::string& model_id() const { return model_id_; }
  int max_tokens() const { return max_tokens_; }
  int vocab_size() const { return static_cast<int>(id_to_token_.size()); }
  int pad_id() const { return pad_id_; }
  int bos_id() const { return bos_id_; }
  int eos_id() const { return eos_id_; }
  int unk_id() const { return unk_id_; }
  int mask_id() const { return mask_id_; }

  std::string to_json() const;  // embedded into checkpoints

 private:
  Tokenizer() = default;
  std::vector<std::string> pretokenize(const std::string& text) const;
  void bpe_pieces(const std::string& word, std::vector<int>* out) const;
  std::vector<int> piece_ids(const std::string& text) const;

  std::string model_id_;
  int max_tokens_ = 512;
  bool lowercase_ = false;
  int pad_id_ = 0, bos_id_ = 1, eos_id_ = 2, unk_id_ = 3, mask_id_ = 4;
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
  std::unordered_map<std::string, int> merge_rank_;  // "left\x01right" -> rank
  std::vector<std::string> merges_;                  // rank order, "left right"
};

// Word list baked into the tiny tokenizer's vocabulary (used by desk-scale
// corpora and tests).
const std::vector<std::string>& tiny_vocabulary_words();

std::string tiny_tokenizer_json();

}  // namespace mgtd
