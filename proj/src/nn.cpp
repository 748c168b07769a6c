#include "mgtd/nn.hpp"

#include <cmath>
#include <numbers>

namespace mgtd::nn {

using RowArray = Eigen::Array<double, 1, Eigen::Dynamic>;

void Parameter::init(const std::string& param_name, Eigen::Index rows,
                     Eigen::Index cols) {
  name = param_name;
  value = Mat::Zero(rows, cols);
  grad = Mat::Zero(rows, cols);
  adam_m = Mat::Zero(rows, cols);
  adam_v = Mat::Zero(rows, cols);
}

void Parameter::fill_normal(std::mt19937_64& rng, double stddev) {
  for (Eigen::Index i = 0; i < value.rows(); ++i) {
    for (Eigen::Index j = 0; j < value.cols(); ++j) {
      value(i, j) = stddev * rng_normal(rng);
    }
  }
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(const std::string& name, int in_dim, int out_dim) {
  w.init(name + ".w", in_dim, out_dim);
  b.init(name + ".b", 1, out_dim);
}

Mat Linear::forward(const Mat& x, Cache* cache) const {
  if (cache != nullptr) {
    cache->x = x;
  }
  Mat y = x * w.value;
  y.rowwise() += b.value.row(0);
  return y;
}

Mat Linear::backward(const Mat& dy, const Cache& cache) {
  w.grad.noalias() += cache.x.transpose() * dy;
  b.grad.row(0) += dy.colwise().sum();
  return dy * w.value.transpose();
}

void Linear::init_weights(std::mt19937_64& rng, double stddev) {
  w.fill_normal(rng, stddev);
  b.value.setZero();
}

void Linear::collect(std::vector<Parameter*>* out) {
  out->push_back(&w);
  out->push_back(&b);
}

// ---------------------------------------------------------------------------
// LayerNorm

LayerNorm::LayerNorm(const std::string& name, int dim, double eps) : eps(eps) {
  gamma.init(name + ".gamma", 1, dim);
  beta.init(name + ".beta", 1, dim);
  gamma.value.setOnes();
}

Mat LayerNorm::forward(const Mat& x, Cache* cache) const {
  const auto rows = x.rows();
  const auto cols = x.cols();
  Mat xhat(rows, cols);
  Vec invstd(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    double mu = x.row(r).mean();
    double var = (x.row(r).array() - mu).square().mean();
    double is = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = ((x.row(r).array() - mu) * is).matrix();
    invstd(r) = is;
  }
  Mat y = (xhat.array().rowwise() * gamma.value.row(0).array()).matrix();
  y.rowwise() += beta.value.row(0);
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->invstd = std::move(invstd);
  }
  return y;
}

Mat LayerNorm::backward(const Mat& dy, const Cache& cache) {
  const auto rows = dy.rows();
  Mat dx(rows, dy.cols());
  for (Eigen::Index r = 0; r < rows; ++r) {
    RowArray g = dy.row(r).array() * gamma.value.row(0).array();
    RowArray xh = cache.xhat.row(r).array();
    double mg = g.mean();
    double mgx = (g * xh).mean();
    dx.row(r) = ((g - mg - xh * mgx) * cache.invstd(r)).matrix();
  }
  gamma.grad.row(0) +=
      (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  beta.grad.row(0) += dy.colwise().sum();
  return dx;
}

void LayerNorm::collect(std::vector<Parameter*>* out) {
  out->push_back(&gamma);
  out->push_back(&beta);
}

// ---------------------------------------------------------------------------
// Dropout

Mat Dropout::forward(const Mat& x, Cache* cache, std::mt19937_64* rng) const {
  if (rng == nullptr || rate_ <= 0.0) {
    if (cache != nullptr) {
      cache->active = false;
    }
    return x;
  }
  const double keep_scale = 1.0 / (1.0 - rate_);
  Mat mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      mask(i, j) = rng_real(*rng) >= rate_ ? keep_scale : 0.0;
    }
  }
  Mat y = x.cwiseProduct(mask);
  if (cache != nullptr) {
    cache->mask = std::move(mask);
    cache->active = true;
  }
  return y;
}

Mat Dropout::backward(const Mat& dy, const Cache& cache) const {
  if (!cache.active) {
    return dy;
  }
  return dy.cwiseProduct(cache.mask);
}

// ---------------------------------------------------------------------------
// Activations

Mat Gelu::forward(const Mat& x, Cache* cache) {
  if (cache != nullptr) {
    cache->x = x;
  }
  const double inv_sqrt2 = std::numbers::sqrt2 / 2.0;
  Mat cdf = x.unaryExpr(
      [inv_sqrt2](double v) { return 0.5 * (1.0 + std::erf(v * inv_sqrt2)); });
  return (x.array() * cdf.array()).matrix();
}

Mat Gelu::backward(const Mat& dy, const Cache& cache) {
  const double inv_sqrt2 = std::numbers::sqrt2 / 2.0;
  const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  Mat cdf = cache.x.unaryExpr(
      [inv_sqrt2](double v) { return 0.5 * (1.0 + std::erf(v * inv_sqrt2)); });
  Mat pdf = ((-0.5 * cache.x.array().square()).exp() * inv_sqrt2pi).matrix();
  return (dy.array() * (cdf.array() + cache.x.array() * pdf.array())).matrix();
}

Mat Tanh::forward(const Mat& x, Cache* cache) {
  Mat y = x.array().tanh().matrix();
  if (cache != nullptr) {
    cache->y = y;
  }
  return y;
}

Mat Tanh::backward(const Mat& dy, const Cache& cache) {
  return (dy.array() * (1.0 - cache.y.array().square())).matrix();
}

// ---------------------------------------------------------------------------
// Multi-head self-attention

MultiHeadSelfAttention::MultiHeadSelfAttention(const std::string& name,
                                               int hidden_dim, int n_heads,
                                               double attn_dropout)
    : q_proj(name + ".q", hidden_dim, hidden_dim),
      k_proj(name + ".k", hidden_dim, hidden_dim),
      v_proj(name + ".v", hidden_dim, hidden_dim),
      out_proj(name + ".o", hidden_dim, hidden_dim),
      n_heads_(n_heads),
      prob_drop_(attn_dropout) {}

Mat MultiHeadSelfAttention::forward(const Mat& x,
                                    const std::vector<std::uint8_t>& mask,
                                    Cache* cache, std::mt19937_64* rng) const {
  const auto t = x.rows();
  const auto h = x.cols();
  const auto dh = h / n_heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat q = q_proj.forward(x, cache ? &cache->qc : nullptr);
  Mat k = k_proj.forward(x, cache ? &cache->kc : nullptr);
  Mat v = v_proj.forward(x, cache ? &cache->vc : nullptr);

  if (cache != nullptr) {
    cache->probs.assign(static_cast<std::size_t>(n_heads_), Mat());
    cache->pdrop.assign(static_cast<std::size_t>(n_heads_), Dropout::Cache());
  }

  Mat ctx(t, h);
  for (int head = 0; head < n_heads_; ++head) {
    auto qh = q.middleCols(head * dh, dh);
    auto kh = k.middleCols(head * dh, dh);
    auto vh = v.middleCols(head * dh, dh);
    Mat scores = (qh * kh.transpose()) * scale;
    for (Eigen::Index j = 0; j < t; ++j) {
      if (mask[static_cast<std::size_t>(j)] == 0) {
        scores.col(j).setConstant(-1e9);
      }
    }
    Mat probs = softmax_rows(scores);
    Mat probs_kept = prob_drop_.forward(
        probs, cache ? &cache->pdrop[static_cast<std::size_t>(head)] : nullptr,
        rng);
    ctx.middleCols(head * dh, dh).noalias() = probs_kept * vh;
    if (cache != nullptr) {
      cache->probs[static_cast<std::size_t>(head)] = std::move(probs);
    }
  }
  if (cache != nullptr) {
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
  }
  return out_proj.forward(ctx, cache ? &cache->oc : nullptr);
}

Mat MultiHeadSelfAttention::backward(const Mat& dy, const Cache& cache) {
  const auto t = dy.rows();
  const auto h = dy.cols();
  const auto dh = h / n_heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat dctx = out_proj.backward(dy, cache.oc);
  Mat dq = Mat::Zero(t, h);
  Mat dk = Mat::Zero(t, h);
  Mat dv = Mat::Zero(t, h);
  for (int head = 0; head < n_heads_; ++head) {
    const auto hs = static_cast<std::size_t>(head);
    auto qh = cache.q.middleCols(head * dh, dh);
    auto kh = cache.k.middleCols(head * dh, dh);
    auto vh = cache.v.middleCols(head * dh, dh);
    const Mat& probs = cache.probs[hs];
    Mat probs_kept = cache.pdrop[hs].active
                         ? probs.cwiseProduct(cache.pdrop[hs].mask).eval()
                         : probs;
    auto dctx_h = dctx.middleCols(head * dh, dh);
    Mat dprobs_kept = dctx_h * vh.transpose();
    dv.middleCols(head * dh, dh).noalias() = probs_kept.transpose() * dctx_h;
    Mat dprobs = prob_drop_.backward(dprobs_kept, cache.pdrop[hs]);
    // Row-wise softmax backward: dS = A .* (dA - rowsum(dA .* A)).
    Vec rowdot = (dprobs.array() * probs.array()).rowwise().sum().matrix();
    Mat dscores =
        (probs.array() * (dprobs.array().colwise() - rowdot.array())).matrix();
    dq.middleCols(head * dh, dh).noalias() = scale * (dscores * kh);
    dk.middleCols(head * dh, dh).noalias() = scale * (dscores.transpose() * qh);
  }
  Mat dx = q_proj.backward(dq, cache.qc);
  dx += k_proj.backward(dk, cache.kc);
  dx += v_proj.backward(dv, cache.vc);
  return dx;
}

void MultiHeadSelfAttention::init_weights(std::mt19937_64& rng, double stddev) {
  q_proj.init_weights(rng, stddev);
  k_proj.init_weights(rng, stddev);
  v_proj.init_weights(rng, stddev);
  out_proj.init_weights(rng, stddev);
}

void MultiHeadSelfAttention::collect(std::vector<Parameter*>* out) {
  q_proj.collect(out);
  k_proj.collect(out);
  v_proj.collect(out);
  out_proj.collect(out);
}

// ---------------------------------------------------------------------------
// EncoderLayer

EncoderLayer::EncoderLayer(const std::string& name, int hidden_dim, int n_heads,
                           int intermediate_dim, double ln_eps,
                           double hidden_dropout, double attn_dropout)
    : attn(name + ".attn", hidden_dim, n_heads, attn_dropout),
      drop1(hidden_dropout),
      ln1(name + ".ln1", hidden_dim, ln_eps),
      ff_in(name + ".ff_in", hidden_dim, intermediate_dim),
      ff_out(name + ".ff_out", intermediate_dim, hidden_dim),
      drop2(hidden_dropout),
      ln2(name + ".ln2", hidden_dim, ln_eps) {}

Mat EncoderLayer::forward(const Mat& x, const std::vector<std::uint8_t>& mask,
                          Cache* cache, std::mt19937_64* rng) const {
  Mat a = attn.forward(x, mask, cache ? &cache->attn : nullptr, rng);
  a = drop1.forward(a, cache ? &cache->d1 : nullptr, rng);
  Mat x1 = ln1.forward(x + a, cache ? &cache->ln1 : nullptr);
  Mat f = ff_in.forward(x1, cache ? &cache->f1 : nullptr);
  f = Gelu::forward(f, cache ? &cache->gelu : nullptr);
  f = ff_out.forward(f, cache ? &cache->f2 : nullptr);
  f = drop2.forward(f, cache ? &cache->d2 : nullptr, rng);
  return ln2.forward(x1 + f, cache ? &cache->ln2 : nullptr);
}

Mat EncoderLayer::backward(const Mat& dy, const Cache& cache) {
  Mat dsum2 = ln2.backward(dy, cache.ln2);  // d(x1 + f)
  Mat df = drop2.backward(dsum2, cache.d2);
  df = ff_out.backward(df, cache.f2);
  df = Gelu::backward(df, cache.gelu);
  Mat dx1 = ff_in.backward(df, cache.f1);
  dx1 += dsum2;
  Mat dsum1 = ln1.backward(dx1, cache.ln1);  // d(x + a)
  Mat da = drop1.backward(dsum1, cache.d1);
  Mat dx = attn.backward(da, cache.attn);
  dx += dsum1;
  return dx;
}

void EncoderLayer::init_weights(std::mt19937_64& rng, double stddev) {
  attn.init_weights(rng, stddev);
  ff_in.init_weights(rng, stddev);
  ff_out.init_weights(rng, stddev);
}

void EncoderLayer::collect(std::vector<Parameter*>* out) {
  attn.collect(out);
  ln1.collect(out);
  ff_in.collect(out);
  ff_out.collect(out);
  ln2.collect(out);
}

void EncoderLayer::set_dropout(double rate) {
  attn.set_dropout(rate);
  drop1.set_rate(rate);
  drop2.set_rate(rate);
}

// ---------------------------------------------------------------------------
// Embeddings

Embeddings::Embeddings(const std::string& name, int vocab_size,
                       int max_positions, int hidden_dim, double ln_eps,
                       double dropout)
    : ln(name + ".ln", hidden_dim, ln_eps), drop_(dropout) {
  word.init(name + ".word", vocab_size, hidden_dim);
  pos.init(name + ".pos", max_positions, hidden_dim);
  type.init(name + ".type", 1, hidden_dim);
}

Mat Embeddings::forward(const std::vector<int>& ids, Cache* cache,
                        std::mt19937_64* rng) const {
  const auto t = static_cast<Eigen::Index>(ids.size());
  if (t == 0) {
    throw ValidationError("cannot embed an empty token sequence");
  }
  if (t > pos.value.rows()) {
    throw ConfigError("sequence length " + std::to_string(t) +
                      " exceeds encoder max positions " +
                      std::to_string(pos.value.rows()));
  }
  Mat x(t, word.value.cols());
  for (Eigen::Index i = 0; i < t; ++i) {
    int id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= word.value.rows()) {
      throw ValidationError("token id " + std::to_string(id) +
                            " outside vocabulary of size " +
                            std::to_string(word.value.rows()));
    }
    x.row(i) = word.value.row(id) + pos.value.row(i) + type.value.row(0);
  }
  if (cache != nullptr) {
    cache->ids = ids;
  }
  x = ln.forward(x, cache ? &cache->ln : nullptr);
  return drop_.forward(x, cache ? &cache->drop : nullptr, rng);
}

void Embeddings::backward(const Mat& dy, const Cache& cache) {
  Mat d = drop_.backward(dy, cache.drop);
  Mat dx = ln.backward(d, cache.ln);
  for (Eigen::Index i = 0; i < dx.rows(); ++i) {
    word.grad.row(cache.ids[static_cast<std::size_t>(i)]) += dx.row(i);
    pos.grad.row(i) += dx.row(i);
    type.grad.row(0) += dx.row(i);
  }
}

void Embeddings::init_weights(std::mt19937_64& rng, double stddev) {
  word.fill_normal(rng, stddev);
  pos.fill_normal(rng, stddev);
  type.fill_normal(rng, stddev);
}

void Embeddings::collect(std::vector<Parameter*>* out) {
  out->push_back(&word);
  out->push_back(&pos);
  out->push_back(&type);
  ln.collect(out);
}

// ---------------------------------------------------------------------------
// TransformerEncoder

void EncoderConfig::validate() const {
  if (vocab_size <= 0) {
    throw ConfigError("encoder vocab_size must be positive");
  }
  if (hidden_dim <= 0 || n_heads <= 0 || hidden_dim % n_heads != 0) {
    throw ConfigError("hidden_dim must be a positive multiple of n_heads");
  }
  if (n_layers <= 0 || intermediate_dim <= 0 || max_positions <= 0) {
    throw ConfigError("encoder dimensions must be positive");
  }
  if (hidden_dropout < 0.0 || hidden_dropout >= 1.0 ||
      attention_dropout < 0.0 || attention_dropout >= 1.0) {
    throw ConfigError("dropout rates must lie in [0, 1)");
  }
}

TransformerEncoder::TransformerEncoder(const EncoderConfig& config)
    : config_(config) {
  config.validate();
  embeddings = Embeddings("embeddings", config.vocab_size, config.max_positions,
                          config.hidden_dim, config.layer_norm_eps,
                          config.hidden_dropout);
  layers.reserve(static_cast<std::size_t>(config.n_layers));
  for (int i = 0; i < config.n_layers; ++i) {
    layers.emplace_back("encoder." + std::to_string(i), config.hidden_dim,
                        config.n_heads, config.intermediate_dim,
                        config.layer_norm_eps, config.hidden_dropout,
                        config.attention_dropout);
  }
}

Mat TransformerEncoder::forward(const std::vector<int>& ids,
                                const std::vector<std::uint8_t>& mask,
                                Cache* cache, std::mt19937_64* rng) const {
  if (mask.size() != ids.size()) {
    throw ValidationError("attention mask length does not match token count");
  }
  if (cache != nullptr) {
    cache->layers.resize(layers.size());
  }
  Mat x = embeddings.forward(ids, cache ? &cache->emb : nullptr, rng);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i].forward(x, mask, cache ? &cache->layers[i] : nullptr, rng);
  }
  return x;
}

void TransformerEncoder::backward(const Mat& dy, const Cache& cache) {
  Mat d = dy;
  for (std::size_t i = layers.size(); i > 0; --i) {
    d = layers[i - 1].backward(d, cache.layers[i - 1]);
  }
  embeddings.backward(d, cache.emb);
}

void TransformerEncoder::init_weights(std::mt19937_64& rng, double stddev) {
  embeddings.init_weights(rng, stddev);
  for (auto& layer : layers) {
    layer.init_weights(rng, stddev);
  }
}

void TransformerEncoder::collect(std::vector<Parameter*>* out) {
  embeddings.collect(out);
  for (auto& layer : layers) {
    layer.collect(out);
  }
}

void TransformerEncoder::set_dropout(double rate) {
  embeddings.set_dropout(rate);
  for (auto& layer : layers) {
    layer.set_dropout(rate);
  }
}

// ---------------------------------------------------------------------------
// Losses

Mat softmax_rows(const Mat& x) {
  Mat y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double m = x.row(r).maxCoeff();
    RowArray e = (x.row(r).array() - m).exp();
    y.row(r) = (e / e.sum()).matrix();
  }
  return y;
}

LossGrad cross_entropy(const Mat& logits, const std::vector<int>& labels) {
  const auto b = logits.rows();
  if (b == 0 || static_cast<std::size_t>(b) != labels.size()) {
    throw ValidationError("cross_entropy: batch and label sizes differ");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) {
      throw ValidationError("cross_entropy: labels must be 0 or 1");
    }
  }
  LossGrad out;
  out.dlogits = Mat::Zero(b, logits.cols());
  double total = 0.0;
  if (logits.cols() == 1) {
    // Binary cross-entropy over a single sigmoid logit, numerically stable.
    for (Eigen::Index r = 0; r < b; ++r) {
      double z = logits(r, 0);
      double y = static_cast<double>(labels[static_cast<std::size_t>(r)]);
      total += std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z)));
      double p = 1.0 / (1.0 + std::exp(-z));
      out.dlogits(r, 0) = (p - y) / static_cast<double>(b);
    }
  } else {
    for (Eigen::Index r = 0; r < b; ++r) {
      double m = logits.row(r).maxCoeff();
      double lse = m + std::log((logits.row(r).array() - m).exp().sum());
      int y = labels[static_cast<std::size_t>(r)];
      total += lse - logits(r, y);
      out.dlogits.row(r) =
          ((logits.row(r).array() - lse).exp() / static_cast<double>(b))
              .matrix();
      out.dlogits(r, y) -= 1.0 / static_cast<double>(b);
    }
  }
  out.loss = total / static_cast<double>(b);
  return out;
}

Vec class1_probability(const Mat& logits) {
  Vec p(logits.rows());
  if (logits.cols() == 1) {
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      p(r) = 1.0 / (1.0 + std::exp(-logits(r, 0)));
    }
    return p;
  }
  if (logits.cols() != 2) {
    throw ValidationError("class1_probability expects 1 or 2 score columns");
  }
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    double m = logits.row(r).maxCoeff();
    double e0 = std::exp(logits(r, 0) - m);
    double e1 = std::exp(logits(r, 1) - m);
    p(r) = e1 / (e0 + e1);
  }
  return p;
}

}  // namespace mgtd::nn
