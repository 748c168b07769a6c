#include "mgtd/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <limits>

#include <nlohmann/json.hpp>

namespace mgtd {

using nlohmann::json;

std::filesystem::path model_cache_dir() {
  const char* dir = std::getenv("MGTD_CACHE_DIR");
  if (dir == nullptr || *dir == '\0') {
    throw AssetError(
        "MGTD_CACHE_DIR is not set; it must point at the model asset cache");
  }
  return {dir};
}

namespace {

bool is_ascii_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

bool is_ascii_punct(unsigned char c) {
  return c < 0x80 && std::ispunct(c) != 0;
}

// Splits a UTF-8 string into code points (as byte substrings). Invalid
// continuation bytes degrade to single-byte pieces.
std::vector<std::string> code_points(const std::string& s) {
  std::vector<std::string> cps;
  std::size_t i = 0;
  while (i < s.size()) {
    auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if ((c & 0xE0) == 0xC0) {
      len = 2;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
    }
    len = std::min(len, s.size() - i);
    cps.push_back(s.substr(i, len));
    i += len;
  }
  return cps;
}

}  // namespace

Tokenizer Tokenizer::from_json(const std::string& json_text, int max_tokens) {
  if (max_tokens < 8) {
    throw ConfigError("max_tokens must be >= 8, got " +
                      std::to_string(max_tokens));
  }
  json obj;
  try {
    obj = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw AssetError(std::string("tokenizer asset is not valid JSON: ") +
                     e.what());
  }
  Tokenizer t;
  t.max_tokens_ = max_tokens;
  t.model_id_ = obj.value("model_id", std::string("unknown"));
  t.lowercase_ = obj.value("lowercase", false);
  if (!obj.contains("tokens") || !obj["tokens"].is_array()) {
    throw AssetError("tokenizer asset missing 'tokens' array");
  }
  t.id_to_token_ = obj["tokens"].get<std::vector<std::string>>();
  for (std::size_t i = 0; i < t.id_to_token_.size(); ++i) {
    t.token_to_id_[t.id_to_token_[i]] = static_cast<int>(i);
  }
  const auto& sp = obj.at("specials");
  t.pad_id_ = sp.at("pad").get<int>();
  t.bos_id_ = sp.at("bos").get<int>();
  t.eos_id_ = sp.at("eos").get<int>();
  t.unk_id_ = sp.at("unk").get<int>();
  t.mask_id_ = sp.value("mask", t.unk_id_);
  auto vocab = static_cast<int>(t.id_to_token_.size());
  for (int id : {t.pad_id_, t.bos_id_, t.eos_id_, t.unk_id_, t.mask_id_}) {
    if (id < 0 || id >= vocab) {
      throw AssetError("special token id " + std::to_string(id) +
                       " outside vocabulary of size " + std::to_string(vocab));
    }
  }
  if (obj.contains("merges")) {
    t.merges_ = obj["merges"].get<std::vector<std::string>>();
    for (std::size_t rank = 0; rank < t.merges_.size(); ++rank) {
      const std::string& m = t.merges_[rank];
      auto space = m.find(' ');
      if (space == std::string::npos) {
        throw AssetError("malformed merge entry '" + m + "'");
      }
      std::string key = m.substr(0, space) + '\x01' + m.substr(space + 1);
      t.merge_rank_.emplace(key, static_cast<int>(rank));
    }
  }
  return t;
}

Tokenizer Tokenizer::resolve(const std::string& model_id, int max_tokens) {
  if (model_id == kTinyEncoderId) {
    return tiny(max_tokens);
  }
  auto path = model_cache_dir() / model_id / "tokenizer.json";
  if (!std::filesystem::exists(path)) {
    throw AssetError("no tokenizer asset for model id '" + model_id +
                     "' (looked at " + path.string() + ")");
  }
  return from_json(read_file(path), max_tokens);
}

Tokenizer Tokenizer::tiny(int max_tokens) {
  return from_json(tiny_tokenizer_json(), max_tokens);
}

std::vector<std::string> Tokenizer::pretokenize(const std::string& text) const {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      out.push_back(current);
      current.clear();
    }
  };
  for (char raw : text) {
    auto c = static_cast<unsigned char>(raw);
    if (is_ascii_space(c)) {
      flush();
    } else if (is_ascii_punct(c)) {
      flush();
      out.emplace_back(1, raw);
    } else {
      if (lowercase_ && c < 0x80) {
        current.push_back(static_cast<char>(std::tolower(c)));
      } else {
        current.push_back(raw);
      }
    }
  }
  flush();
  return out;
}

void Tokenizer::bpe_pieces(const std::string& word, std::vector<int>* out) const {
  auto it = token_to_id_.find(word);
  if (it != token_to_id_.end()) {
    out->push_back(it->second);
    return;
  }
  std::vector<std::string> parts = code_points(word);
  // Greedy BPE: repeatedly apply the lowest-ranked merge present.
  while (parts.size() > 1 && !merge_rank_.empty()) {
    int best_rank = std::numeric_limits<int>::max();
    std::size_t best_pos = 0;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      auto mit = merge_rank_.find(parts[i] + '\x01' + parts[i + 1]);
      if (mit != merge_rank_.end() && mit->second < best_rank) {
        best_rank = mit->second;
        best_pos = i;
      }
    }
    if (best_rank == std::numeric_limits<int>::max()) {
      break;
    }
    parts[best_pos] += parts[best_pos + 1];
    parts.erase(parts.begin() + static_cast<std::ptrdiff_t>(best_pos) + 1);
  }
  for (const auto& piece : parts) {
    auto pit = token_to_id_.find(piece);
    out->push_back(pit != token_to_id_.end() ? pit->second : unk_id_);
  }
}

std::vector<int> Tokenizer::piece_ids(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& word : pretokenize(text)) {
    bpe_pieces(word, &ids);
  }
  return ids;
}

std::size_t Tokenizer::count_tokens(const std::string& text) const {
  return piece_ids(text).size();
}

TokenizedExample Tokenizer::encode(const std::string& text,
                                   std::optional<int> label) const {
  std::vector<int> pieces = piece_ids(text);
  if (pieces.empty()) {
    throw ValidationError("text tokenizes to nothing");
  }
  const auto budget = static_cast<std::size_t>(max_tokens_) - 2;
  if (pieces.size() > budget) {
    // Head truncation: keep the document opening, re-attach </s> below.
    pieces.resize(budget);
  }
  TokenizedExample ex;
  ex.label = label;
  ex.token_ids.assign(static_cast<std::size_t>(max_tokens_), pad_id_);
  ex.attention_mask.assign(static_cast<std::size_t>(max_tokens_), 0);
  std::size_t pos = 0;
  ex.token_ids[pos++] = bos_id_;
  for (int id : pieces) {
    ex.token_ids[pos++] = id;
  }
  ex.token_ids[pos++] = eos_id_;
  for (std::size_t i = 0; i < pos; ++i) {
    ex.attention_mask[i] = 1;
  }
  return ex;
}

std::vector<TokenizedExample> Tokenizer::encode_batch(
    const std::vector<TextRecord>& records) const {
  std::vector<TokenizedExample> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    try {
      out.push_back(encode(rec.text, rec.label));
    } catch (const MgtdError& e) {
      throw ValidationError("record '" + rec.id + "': " + e.what());
    }
  }
  return out;
}

std::string Tokenizer::to_json() const {
  json obj;
  obj["schema_version"] = 1;
  obj["model_id"] = model_id_;
  obj["lowercase"] = lowercase_;
  obj["specials"] = {{"pad", pad_id_}, {"bos", bos_id_}, {"eos", eos_id_},
                     {"unk", unk_id_}, {"mask", mask_id_}};
  obj["tokens"] = id_to_token_;
  obj["merges"] = merges_;
  return obj.dump();
}

const std::vector<std::string>& tiny_vocabulary_words() {
  static const std::vector<std::string> words = {
      "the",     "a",        "of",      "and",     "to",      "in",
      "is",      "was",      "for",     "on",      "with",    "as",
      "by",      "that",     "it",      "from",    "at",      "an",
      "be",      "this",     "which",   "or",      "were",    "are",
      "not",     "but",      "had",     "has",     "one",     "two",
      "people",  "city",     "world",   "time",    "year",    "water",
      "house",   "light",    "night",   "story",   "music",   "river",
      "mountain", "forest",  "market",  "letter",  "garden",  "window",
      "summer",  "winter",   "morning", "evening", "science", "history",
      "question", "answer",  "island",  "bridge",  "village", "journey",
      "silver",  "golden",   "quiet",   "sudden",  "bright",  "small",
      "large",   "early",    "late",    "old",     "new",     "long",
      "walked",  "wrote",    "found",   "spoke",   "opened",  "closed",
      "turned",  "looked",   "under",   "over",    "between", "against",
      "paper",   "stone",    "glass",   "cloud",   "train",   "harbor",
      "signal",  "pattern",  "machine", "copper",  "violet",  "ember",
  };
  return words;
}

std::string tiny_tokenizer_json() {
  json obj;
  obj["schema_version"] = 1;
  obj["model_id"] = kTinyEncoderId;
  obj["lowercase"] = true;
  obj["specials"] = {{"pad", 0}, {"bos", 1}, {"eos", 2}, {"unk", 3}, {"mask", 4}};
  std::vector<std::string> tokens = {"<pad>", "<s>", "</s>", "<unk>", "<mask>"};
  for (char c = 'a'; c <= 'z'; ++c) {
    tokens.emplace_back(1, c);
  }
  for (char c = '0'; c <= '9'; ++c) {
    tokens.emplace_back(1, c);
  }
  for (char c : {'.', ',', '!', '?', '\'', '"', '-', ':', ';'}) {
    tokens.emplace_back(1, c);
  }
  for (const auto& w : tiny_vocabulary_words()) {
    if (std::find(tokens.begin(), tokens.end(), w) == tokens.end()) {
      tokens.push_back(w);
    }
  }
  obj["tokens"] = tokens;
  // A couple of frequent letter-pair merges so the BPE path is exercised even
  // with this vocabulary; merged pieces missing from the vocabulary fall back
  // to <unk>.
  obj["merges"] = json::array({"t h", "th e", "i n", "a n", "an d", "e r"});
  return obj.dump();
}

}  // namespace mgtd
