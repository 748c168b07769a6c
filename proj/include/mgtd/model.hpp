#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mgtd/nn.hpp"
#include "mgtd/tokenizer.hpp"

namespace mgtd {

struct ModelConfig {
  std::string encoder_id = kTinyEncoderId;
  int hidden_dim = 768;
  double head_dropout = 0.1;
  int n_classes = 2;

  void validate() const;
};

// dense(H -> H) + tanh + dropout + output(H -> n_classes), applied to the
// first-position (bos) hidden state of each example.
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(int hidden_dim, int n_classes, double dropout);

  struct Cache {
    nn::Linear::Cache dense;
    nn::Tanh::Cache tanh;
    nn::Dropout::Cache drop;
    nn::Linear::Cache out;
  };

  nn::Mat forward(const nn::Mat& pooled, Cache* cache,
                  std::mt19937_64* rng) const;
  nn::Mat backward(const nn::Mat& dlogits, const Cache& cache);
  void init_weights(std::mt19937_64& rng, double stddev = 0.02);
  void collect(std::vector<nn::Parameter*>* out);
  void set_dropout(double rate) { drop_.set_rate(rate); }

  nn::Linear dense;
  nn::Linear output;

 private:
  nn::Dropout drop_{0.0};
};

// Encoder + classifier head. forward() processes examples one at a time with
// trailing padding stripped, so each output row is a function of its own
// example only and is identical regardless of batch composition.
class DetectorModel {
 public:
  DetectorModel() = default;
  DetectorModel(const ModelConfig& config, const nn::EncoderConfig& encoder_config);

  struct BatchCache {
    std::vector<nn::TransformerEncoder::Cache> examples;
    std::vector<Eigen::Index> lengths;  // unpadded length per example
    ClassifierHead::Cache head;
  };

  // batch x n_classes raw scores. rng == nullptr means evaluation mode.
  nn::Mat forward(const std::vector<TokenizedExample>& batch, BatchCache* cache,
                  std::mt19937_64* rng) const;
  // Probability of class 1 (machine-generated) per example, evaluation mode.
  nn::Vec predict_proba(const std::vector<TokenizedExample>& batch) const;
  void backward(const nn::Mat& dlogits, const BatchCache& cache);

  std::vector<nn::Parameter*> parameters();
  std::size_t parameter_count();
  void zero_grad();
  void set_dropout(double encoder_rate, double head_rate);

  const ModelConfig& config() const { return config_; }
  const nn::EncoderConfig& encoder_config() const { return encoder_.config(); }
  nn::TransformerEncoder& encoder() { return encoder_; }
  ClassifierHead& head() { return head_; }

 private:
  ModelConfig config_;
  nn::TransformerEncoder encoder_;
  ClassifierHead head_;
};

// Encoder asset resolution. The built-in tiny encoder is materialized from a
// fixed seed; any other identifier resolves to
// $MGTD_CACHE_DIR/<id>/encoder.json plus an optional weights.bin blob.
struct EncoderAsset {
  nn::EncoderConfig config;
  std::optional<std::filesystem::path> weights_path;
};

nn::EncoderConfig tiny_encoder_config();
EncoderAsset resolve_encoder(const std::string& encoder_id);

std::string encoder_config_to_json(const nn::EncoderConfig& config);
nn::EncoderConfig encoder_config_from_json(const std::string& text);

// Builds the model: encoder weights from the resolved asset (blob if present,
// otherwise deterministic materialization from the asset's init seed), head
// freshly initialized from `seed`.
DetectorModel build_model(const ModelConfig& config, std::uint64_t seed);

// Raw little-endian doubles in parameter-collection order.
std::string serialize_parameters(const std::vector<nn::Parameter*>& params);
void deserialize_parameters(const std::string& blob,
                            const std::vector<nn::Parameter*>& params);

struct CheckpointMeta {
  ModelConfig config;
  int max_tokens = 512;
  std::string train_config_digest;  // hex; binds checkpoint to its TrainConfig
  int epoch = 0;
  double dev_metric = 0.0;  // dev accuracy (percent) of the saved epoch
  std::string created_at;   // ISO-8601 UTC
};

struct Checkpoint {
  DetectorModel model;
  CheckpointMeta meta;
  Tokenizer tokenizer;
};

// Layout: <dir>/meta.json, <dir>/weights.bin, <dir>/tokenizer.json. meta.json
// stores FNV-1a digests of the other two files; load verifies them and throws
// IntegrityError on mismatch. Writes are atomic (temp file + rename).
void save_checkpoint(DetectorModel& model, const Tokenizer& tokenizer,
                     const CheckpointMeta& meta,
                     const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace mgtd
