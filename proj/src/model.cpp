#include "mgtd/model.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace mgtd {

using nlohmann::json;

void ModelConfig::validate() const {
  if (encoder_id.empty()) {
    throw ConfigError("encoder_id must not be empty");
  }
  if (hidden_dim <= 0) {
    throw ConfigError("hidden_dim must be positive");
  }
  if (head_dropout < 0.0 || head_dropout >= 1.0) {
    throw ConfigError("head_dropout must lie in [0, 1)");
  }
  if (n_classes != 1 && n_classes != 2) {
    throw ConfigError("n_classes must be 1 (sigmoid) or 2 (softmax)");
  }
}

// ---------------------------------------------------------------------------
// ClassifierHead

ClassifierHead::ClassifierHead(int hidden_dim, int n_classes, double dropout)
    : dense("head.dense", hidden_dim, hidden_dim),
      output("head.output", hidden_dim, n_classes),
      drop_(dropout) {}

nn::Mat ClassifierHead::forward(const nn::Mat& pooled, Cache* cache,
                                std::mt19937_64* rng) const {
  nn::Mat h = dense.forward(pooled, cache ? &cache->dense : nullptr);
  h = nn::Tanh::forward(h, cache ? &cache->tanh : nullptr);
  h = drop_.forward(h, cache ? &cache->drop : nullptr, rng);
  return output.forward(h, cache ? &cache->out : nullptr);
}

nn::Mat ClassifierHead::backward(const nn::Mat& dlogits, const Cache& cache) {
  nn::Mat d = output.backward(dlogits, cache.out);
  d = drop_.backward(d, cache.drop);
  d = nn::Tanh::backward(d, cache.tanh);
  return dense.backward(d, cache.dense);
}

void ClassifierHead::init_weights(std::mt19937_64& rng, double stddev) {
  dense.init_weights(rng, stddev);
  output.init_weights(rng, stddev);
}

void ClassifierHead::collect(std::vector<nn::Parameter*>* out) {
  dense.collect(out);
  output.collect(out);
}

// ---------------------------------------------------------------------------
// DetectorModel

DetectorModel::DetectorModel(const ModelConfig& config,
                             const nn::EncoderConfig& encoder_config)
    : config_(config), encoder_(encoder_config) {
  config.validate();
  if (config.hidden_dim != encoder_config.hidden_dim) {
    throw ConfigError("model hidden_dim " + std::to_string(config.hidden_dim) +
                      " does not match encoder hidden_dim " +
                      std::to_string(encoder_config.hidden_dim));
  }
  head_ = ClassifierHead(config.hidden_dim, config.n_classes,
                         config.head_dropout);
}

namespace {

// Real tokens form a prefix (right padding); returns its length.
Eigen::Index unpadded_length(const TokenizedExample& ex, std::size_t index) {
  std::size_t len = 0;
  while (len < ex.attention_mask.size() && ex.attention_mask[len] == 1) {
    ++len;
  }
  for (std::size_t i = len; i < ex.attention_mask.size(); ++i) {
    if (ex.attention_mask[i] != 0) {
      throw ValidationError("example " + std::to_string(index) +
                            ": attention mask is not a prefix of ones");
    }
  }
  if (len == 0) {
    throw ValidationError("example " + std::to_string(index) +
                          ": empty attention mask");
  }
  return static_cast<Eigen::Index>(len);
}

}  // namespace

nn::Mat DetectorModel::forward(const std::vector<TokenizedExample>& batch,
                               BatchCache* cache, std::mt19937_64* rng) const {
  if (batch.empty()) {
    throw ValidationError("forward called with an empty batch");
  }
  const auto n = static_cast<Eigen::Index>(batch.size());
  for (std::size_t i = 1; i < batch.size(); ++i) {
    if (batch[i].token_ids.size() != batch[0].token_ids.size()) {
      throw ValidationError("batch examples disagree on max_tokens");
    }
  }
  if (cache != nullptr) {
    cache->examples.resize(batch.size());
    cache->lengths.resize(batch.size());
  }
  nn::Mat pooled(n, config_.hidden_dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& ex = batch[static_cast<std::size_t>(i)];
    Eigen::Index len = unpadded_length(ex, static_cast<std::size_t>(i));
    std::vector<int> ids(ex.token_ids.begin(), ex.token_ids.begin() + len);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(len), 1);
    nn::Mat hidden = encoder_.forward(
        ids, mask, cache ? &cache->examples[static_cast<std::size_t>(i)] : nullptr,
        rng);
    pooled.row(i) = hidden.row(0);
    if (cache != nullptr) {
      cache->lengths[static_cast<std::size_t>(i)] = len;
    }
  }
  nn::Mat logits = head_.forward(pooled, cache ? &cache->head : nullptr, rng);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!logits.row(i).allFinite()) {
      throw NumericError("non-finite scores for batch example " +
                         std::to_string(i));
    }
  }
  return logits;
}

nn::Vec DetectorModel::predict_proba(
    const std::vector<TokenizedExample>& batch) const {
  return nn::class1_probability(forward(batch, nullptr, nullptr));
}

void DetectorModel::backward(const nn::Mat& dlogits, const BatchCache& cache) {
  nn::Mat dpooled = head_.backward(dlogits, cache.head);
  for (std::size_t i = 0; i < cache.examples.size(); ++i) {
    nn::Mat dhidden =
        nn::Mat::Zero(cache.lengths[i], config_.hidden_dim);
    dhidden.row(0) = dpooled.row(static_cast<Eigen::Index>(i));
    encoder_.backward(dhidden, cache.examples[i]);
  }
}

std::vector<nn::Parameter*> DetectorModel::parameters() {
  std::vector<nn::Parameter*> params;
  encoder_.collect(&params);
  head_.collect(&params);
  return params;
}

std::size_t DetectorModel::parameter_count() {
  std::size_t n = 0;
  for (const auto* p : parameters()) {
    n += static_cast<std::size_t>(p->value.size());
  }
  return n;
}

void DetectorModel::zero_grad() {
  for (auto* p : parameters()) {
    p->zero_grad();
  }
}

void DetectorModel::set_dropout(double encoder_rate, double head_rate) {
  encoder_.set_dropout(encoder_rate);
  head_.set_dropout(head_rate);
}

// ---------------------------------------------------------------------------
// Encoder assets

nn::EncoderConfig tiny_encoder_config() {
  nn::EncoderConfig config;
  config.vocab_size = Tokenizer::tiny().vocab_size();
  config.hidden_dim = 32;
  config.n_layers = 2;
  config.n_heads = 4;
  config.intermediate_dim = 64;
  config.max_positions = 96;
  config.layer_norm_eps = 1e-5;
  config.hidden_dropout = 0.1;
  config.attention_dropout = 0.1;
  config.init_seed = 0x7131e5c0de;  // fixed so every build sees one tiny encoder
  return config;
}

EncoderAsset resolve_encoder(const std::string& encoder_id) {
  if (encoder_id == kTinyEncoderId) {
    return EncoderAsset{tiny_encoder_config(), std::nullopt};
  }
  auto dir = model_cache_dir() / encoder_id;
  auto config_path = dir / "encoder.json";
  if (!std::filesystem::exists(config_path)) {
    throw AssetError("encoder '" + encoder_id + "' not found under " +
                     dir.string() + " (expected encoder.json)");
  }
  EncoderAsset asset;
  asset.config = encoder_config_from_json(read_file(config_path));
  auto weights_path = dir / "weights.bin";
  if (std::filesystem::exists(weights_path)) {
    asset.weights_path = weights_path;
  }
  return asset;
}

std::string encoder_config_to_json(const nn::EncoderConfig& config) {
  json j;
  j["vocab_size"] = config.vocab_size;
  j["hidden_dim"] = config.hidden_dim;
  j["n_layers"] = config.n_layers;
  j["n_heads"] = config.n_heads;
  j["intermediate_dim"] = config.intermediate_dim;
  j["max_positions"] = config.max_positions;
  j["layer_norm_eps"] = config.layer_norm_eps;
  j["hidden_dropout"] = config.hidden_dropout;
  j["attention_dropout"] = config.attention_dropout;
  j["init_seed"] = config.init_seed;
  return j.dump(2) + "\n";
}

nn::EncoderConfig encoder_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid encoder config JSON: ") + e.what());
  }
  nn::EncoderConfig config;
  try {
    config.vocab_size = j.at("vocab_size").get<int>();
    config.hidden_dim = j.at("hidden_dim").get<int>();
    config.n_layers = j.at("n_layers").get<int>();
    config.n_heads = j.at("n_heads").get<int>();
    config.intermediate_dim = j.at("intermediate_dim").get<int>();
    config.max_positions = j.at("max_positions").get<int>();
    config.layer_norm_eps = j.at("layer_norm_eps").get<double>();
    config.hidden_dropout = j.at("hidden_dropout").get<double>();
    config.attention_dropout = j.at("attention_dropout").get<double>();
    config.init_seed = j.at("init_seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("encoder config missing field: ") + e.what());
  }
  config.validate();
  return config;
}

DetectorModel build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  EncoderAsset asset = resolve_encoder(config.encoder_id);
  if (config.hidden_dim != asset.config.hidden_dim) {
    throw ConfigError("config hidden_dim " + std::to_string(config.hidden_dim) +
                      " does not match encoder '" + config.encoder_id +
                      "' hidden_dim " +
                      std::to_string(asset.config.hidden_dim));
  }
  DetectorModel model(config, asset.config);
  if (asset.weights_path.has_value()) {
    std::vector<nn::Parameter*> enc_params;
    model.encoder().collect(&enc_params);
    deserialize_parameters(read_file(*asset.weights_path), enc_params);
  } else {
    std::mt19937_64 enc_rng(asset.config.init_seed);
    model.encoder().init_weights(enc_rng);
  }
  std::mt19937_64 head_rng(mix_seed(seed, 0x48454144 /* "HEAD" */));
  model.head().init_weights(head_rng);
  return model;
}

// ---------------------------------------------------------------------------
// Parameter serialization + checkpoints

std::string serialize_parameters(const std::vector<nn::Parameter*>& params) {
  std::size_t doubles = 0;
  for (const auto* p : params) {
    doubles += static_cast<std::size_t>(p->value.size());
  }
  std::string blob;
  blob.resize(doubles * sizeof(double));
  std::size_t offset = 0;
  for (const auto* p : params) {
    // RowMajor storage; pointer order matches (row, col) iteration.
    std::size_t bytes = static_cast<std::size_t>(p->value.size()) * sizeof(double);
    std::memcpy(blob.data() + offset, p->value.data(), bytes);
    offset += bytes;
  }
  return blob;
}

void deserialize_parameters(const std::string& blob,
                            const std::vector<nn::Parameter*>& params) {
  std::size_t doubles = 0;
  for (const auto* p : params) {
    doubles += static_cast<std::size_t>(p->value.size());
  }
  if (blob.size() != doubles * sizeof(double)) {
    throw IntegrityError("weights blob holds " + std::to_string(blob.size()) +
                         " bytes, expected " +
                         std::to_string(doubles * sizeof(double)));
  }
  std::size_t offset = 0;
  for (auto* p : params) {
    std::size_t bytes = static_cast<std::size_t>(p->value.size()) * sizeof(double);
    std::memcpy(p->value.data(), blob.data() + offset, bytes);
    offset += bytes;
  }
}

void save_checkpoint(DetectorModel& model, const Tokenizer& tokenizer,
                     const CheckpointMeta& meta,
                     const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw IoError("cannot create checkpoint dir " + dir.string() + ": " +
                  ec.message());
  }
  std::string weights = serialize_parameters(model.parameters());
  std::string tok_json = tokenizer.to_json();

  json j;
  j["schema_version"] = 1;
  j["toolkit_version"] = kToolkitVersion;
  j["encoder_id"] = meta.config.encoder_id;
  j["hidden_dim"] = meta.config.hidden_dim;
  j["head_dropout"] = meta.config.head_dropout;
  j["n_classes"] = meta.config.n_classes;
  j["max_tokens"] = meta.max_tokens;
  j["encoder"] = json::parse(encoder_config_to_json(model.encoder_config()));
  j["train_config_digest"] = meta.train_config_digest;
  j["epoch"] = meta.epoch;
  j["dev_metric"] = meta.dev_metric;
  j["created_at"] = meta.created_at;
  j["weights_digest"] = to_hex(fnv1a64(weights));
  j["tokenizer_digest"] = to_hex(fnv1a64(tok_json));

  write_file_atomic(dir / "weights.bin", weights);
  write_file_atomic(dir / "tokenizer.json", tok_json);
  write_file_atomic(dir / "meta.json", j.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  auto meta_path = dir / "meta.json";
  if (!std::filesystem::exists(meta_path)) {
    throw IoError("no checkpoint at " + dir.string() + " (meta.json missing)");
  }
  json j;
  try {
    j = json::parse(read_file(meta_path));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("corrupt checkpoint meta.json: ") +
                          e.what());
  }
  CheckpointMeta meta;
  ModelConfig config;
  nn::EncoderConfig encoder_config;
  std::string weights_digest, tokenizer_digest;
  try {
    config.encoder_id = j.at("encoder_id").get<std::string>();
    config.hidden_dim = j.at("hidden_dim").get<int>();
    config.head_dropout = j.at("head_dropout").get<double>();
    config.n_classes = j.at("n_classes").get<int>();
    meta.max_tokens = j.at("max_tokens").get<int>();
    encoder_config = encoder_config_from_json(j.at("encoder").dump());
    meta.train_config_digest = j.at("train_config_digest").get<std::string>();
    meta.epoch = j.at("epoch").get<int>();
    meta.dev_metric = j.at("dev_metric").get<double>();
    meta.created_at = j.at("created_at").get<std::string>();
    weights_digest = j.at("weights_digest").get<std::string>();
    tokenizer_digest = j.at("tokenizer_digest").get<std::string>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint meta.json missing field: ") +
                          e.what());
  }
  meta.config = config;

  std::string weights = read_file(dir / "weights.bin");
  if (to_hex(fnv1a64(weights)) != weights_digest) {
    throw IntegrityError("weights.bin digest mismatch in " + dir.string());
  }
  std::string tok_json = read_file(dir / "tokenizer.json");
  if (to_hex(fnv1a64(tok_json)) != tokenizer_digest) {
    throw IntegrityError("tokenizer.json digest mismatch in " + dir.string());
  }

  Checkpoint ckpt{DetectorModel(config, encoder_config), meta,
                  Tokenizer::from_json(tok_json, meta.max_tokens)};
  deserialize_parameters(weights, ckpt.model.parameters());
  return ckpt;
}

}  // namespace mgtd
