#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mgtd/common.hpp"
#include "mgtd/tokenizer.hpp"

namespace mgtd::nn {

// All network math runs in double precision; metrics elsewhere do too.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  Mat adam_m;
  Mat adam_v;

  void init(const std::string& param_name, Eigen::Index rows, Eigen::Index cols);
  void fill_normal(std::mt19937_64& rng, double stddev);
  void zero_grad() { grad.setZero(); }
  bool grad_finite() const { return grad.allFinite(); }
};

// ---------------------------------------------------------------------------
// Layers. forward() is const and optionally records a Cache for backward();
// backward() consumes the cache, accumulates parameter gradients, and returns
// the gradient w.r.t. the layer input. Passing cache=nullptr runs inference
// without recording.

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in_dim, int out_dim);

  struct Cache {
    Mat x;
  };

  Mat forward(const Mat& x, Cache* cache) const;
  Mat backward(const Mat& dy, const Cache& cache);
  void init_weights(std::mt19937_64& rng, double stddev);
  void collect(std::vector<Parameter*>* out);

  Parameter w;  // in_dim x out_dim
  Parameter b;  // 1 x out_dim
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim, double eps = 1e-5);

  struct Cache {
    Mat xhat;
    Vec invstd;
  };

  Mat forward(const Mat& x, Cache* cache) const;
  Mat backward(const Mat& dy, const Cache& cache);
  void collect(std::vector<Parameter*>* out);

  Parameter gamma;  // 1 x dim
  Parameter beta;   // 1 x dim
  double eps = 1e-5;
};

// Inverted dropout. Active only when an RNG is supplied (training mode);
// rng == nullptr is evaluation mode and the layer is the identity.
class Dropout {
 public:
  struct Cache {
    Mat mask;  // scaled keep-mask, empty when inactive
    bool active = false;
  };

  explicit Dropout(double rate = 0.0) : rate_(rate) {}
  Mat forward(const Mat& x, Cache* cache, std::mt19937_64* rng) const;
  Mat backward(const Mat& dy, const Cache& cache) const;
  void set_rate(double rate) { rate_ = rate; }
  double rate() const { return rate_; }

 private:
  double rate_;
};

struct Gelu {
  struct Cache {
    Mat x;
  };
  static Mat forward(const Mat& x, Cache* cache);
  static Mat backward(const Mat& dy, const Cache& cache);
};

struct Tanh {
  struct Cache {
    Mat y;
  };
  static Mat forward(const Mat& x, Cache* cache);
  static Mat backward(const Mat& dy, const Cache& cache);
};

class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(const std::string& name, int hidden_dim, int n_heads,
                         double attn_dropout);

  struct Cache {
    Linear::Cache qc, kc, vc, oc;
    Mat q, k, v;                        // T x H, post-projection
    std::vector<Mat> probs;             // per head, T x T, post-softmax
    std::vector<Dropout::Cache> pdrop;  // per head
  };

  // x: T x H token stream of one example; mask: per-key validity (0 = pad).
  Mat forward(const Mat& x, const std::vector<std::uint8_t>& mask, Cache* cache,
              std::mt19937_64* rng) const;
  Mat backward(const Mat& dy, const Cache& cache);
  void init_weights(std::mt19937_64& rng, double stddev);
  void collect(std::vector<Parameter*>* out);
  void set_dropout(double rate) { prob_drop_.set_rate(rate); }

  Linear q_proj, k_proj, v_proj, out_proj;

 private:
  int n_heads_ = 1;
  Dropout prob_drop_{0.0};
};

// Post-LN transformer block: x -> LN(x + Drop(Attn(x))) -> LN(. + Drop(FFN(.)))
class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(const std::string& name, int hidden_dim, int n_heads,
               int intermediate_dim, double ln_eps, double hidden_dropout,
               double attn_dropout);

  struct Cache {
    MultiHeadSelfAttention::Cache attn;
    Dropout::Cache d1;
    LayerNorm::Cache ln1;
    Linear::Cache f1;
    Gelu::Cache gelu;
    Linear::Cache f2;
    Dropout::Cache d2;
    LayerNorm::Cache ln2;
  };

  Mat forward(const Mat& x, const std::vector<std::uint8_t>& mask, Cache* cache,
              std::mt19937_64* rng) const;
  Mat backward(const Mat& dy, const Cache& cache);
  void init_weights(std::mt19937_64& rng, double stddev);
  void collect(std::vector<Parameter*>* out);
  void set_dropout(double rate);

  MultiHeadSelfAttention attn;
  Dropout drop1{0.0};
  LayerNorm ln1;
  Linear ff_in;
  Linear ff_out;
  Dropout drop2{0.0};
  LayerNorm ln2;
};

// Word + learned position + token-type embeddings, then LayerNorm + dropout.
class Embeddings {
 public:
  Embeddings() = default;
  Embeddings(const std::string& name, int vocab_size, int max_positions,
             int hidden_dim, double ln_eps, double dropout);

  struct Cache {
    std::vector<int> ids;
    LayerNorm::Cache ln;
    Dropout::Cache drop;
  };

  Mat forward(const std::vector<int>& ids, Cache* cache,
              std::mt19937_64* rng) const;
  void backward(const Mat& dy, const Cache& cache);
  void init_weights(std::mt19937_64& rng, double stddev);
  void collect(std::vector<Parameter*>* out);
  void set_dropout(double rate) { drop_.set_rate(rate); }
  int max_positions() const { return static_cast<int>(pos.value.rows()); }

  Parameter word;  // vocab x H
  Parameter pos;   // max_positions x H
  Parameter type;  // 1 x H
  LayerNorm ln;

 private:
  Dropout drop_{0.0};
};

struct EncoderConfig {
  int vocab_size = 0;
  int hidden_dim = 768;
  int n_layers = 12;
  int n_heads = 12;
  int intermediate_dim = 3072;
  int max_positions = 514;
  double layer_norm_eps = 1e-5;
  double hidden_dropout = 0.1;
  double attention_dropout = 0.1;
  // Seed for deterministic weight materialization when no weights blob ships
  // with the asset (the tiny test encoder works this way).
  std::uint64_t init_seed = 0;

  void validate() const;
};

class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  explicit TransformerEncoder(const EncoderConfig& config);

  struct Cache {
    Embeddings::Cache emb;
    std::vector<EncoderLayer::Cache> layers;
  };

  // One example: returns the final T x H hidden states.
  Mat forward(const std::vector<int>& ids, const std::vector<std::uint8_t>& mask,
              Cache* cache, std::mt19937_64* rng) const;
  // dy: gradient w.r.t. the final hidden states.
  void backward(const Mat& dy, const Cache& cache);
  void init_weights(std::mt19937_64& rng, double stddev = 0.02);
  void collect(std::vector<Parameter*>* out);
  void set_dropout(double rate);
  const EncoderConfig& config() const { return config_; }

  Embeddings embeddings;
  std::vector<EncoderLayer> layers;

 private:
  EncoderConfig config_;
};

// ---------------------------------------------------------------------------
// Losses.

struct LossGrad {
  double loss = 0.0;
  Mat dlogits;
};

// Mean cross-entropy over the batch. Two or more columns: softmax + NLL.
// Exactly one column: binary cross-entropy with a sigmoid logit.
LossGrad cross_entropy(const Mat& logits, const std::vector<int>& labels);

// Probability of class 1 per row (softmax over two columns, or sigmoid of a
// single-logit column).
Vec class1_probability(const Mat& logits);

Mat softmax_rows(const Mat& x);

}  // namespace mgtd::nn
