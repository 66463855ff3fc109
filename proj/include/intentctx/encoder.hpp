#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "intentctx/error.hpp"
#include "intentctx/rng.hpp"
#include "intentctx/tensor.hpp"
#include "intentctx/vocab.hpp"
#include "intentctx/window.hpp"

namespace intentctx {

struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t width = 64;  // d
  std::size_t feedforward = 256;
  std::size_t max_len = kDefaultMaxSequenceLength;
  bool trainable = true;
  std::uint64_t seed = 1;

  void validate() const {
    if (width == 0 || heads == 0 || width % heads != 0) throw ValidationError("encoder heads must divide d");
    if (feedforward == 0) throw ValidationError("encoder feedforward width must be positive");
    if (max_len < 4) throw ValidationError("encoder max_len must be at least 4");
  }
};

/// Token, segment and position tables whose rows are summed per input token.
struct EmbeddingTables {
  Matrix token;     // V × d
  Matrix segment;   // 2 × d
  Matrix position;  // max_len × d

  std::size_t width() const { return static_cast<std::size_t>(token.cols()); }
};

struct EncoderLayerParams {
  Matrix ln1_gamma, ln1_beta;
  Matrix wq, wk, wv, wo;  // d × d, applied as x·W
  Matrix bq, bk, bv, bo;  // 1 × d
  Matrix ln2_gamma, ln2_beta;
  Matrix w1, b1;  // d × ff, 1 × ff
  Matrix w2, b2;  // ff × d, 1 × d
};

struct EncoderParams {
  EmbeddingTables tables;
  std::vector<EncoderLayerParams> layers;
  Matrix final_gamma, final_beta;

  std::vector<TensorRef> tensors(const std::string& prefix = "encoder.") {
    std::vector<TensorRef> out{{prefix + "token_embedding", &tables.token},
                               {prefix + "segment_embedding", &tables.segment},
                               {prefix + "position_embedding", &tables.position}};
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& p = layers[l];
      const auto n = prefix + "layer" + std::to_string(l) + ".";
      out.insert(out.end(), {{n + "ln1.gamma", &p.ln1_gamma}, {n + "ln1.beta", &p.ln1_beta},
                             {n + "attn.wq", &p.wq},          {n + "attn.bq", &p.bq},
                             {n + "attn.wk", &p.wk},          {n + "attn.bk", &p.bk},
                             {n + "attn.wv", &p.wv},          {n + "attn.bv", &p.bv},
                             {n + "attn.wo", &p.wo},          {n + "attn.bo", &p.bo},
                             {n + "ln2.gamma", &p.ln2_gamma}, {n + "ln2.beta", &p.ln2_beta},
                             {n + "ffn.w1", &p.w1},           {n + "ffn.b1", &p.b1},
                             {n + "ffn.w2", &p.w2},           {n + "ffn.b2", &p.b2}});
    }
    out.push_back({prefix + "final_ln.gamma", &final_gamma});
    out.push_back({prefix + "final_ln.beta", &final_beta});
    return out;
  }

  EncoderParams zeros_like() const {
    EncoderParams z = *this;
    for (auto& t : z.tensors()) t.value->setZero();
    return z;
  }
};

/// Symmetric uniform init with scale 1/sqrt(d); layer norms start as identity.
inline EncoderParams init_encoder(const EncoderConfig& config, std::size_t vocab_size) {
  config.validate();
  Rng rng(config.seed);
  const auto d = static_cast<Eigen::Index>(config.width);
  const auto ff = static_cast<Eigen::Index>(config.feedforward);
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.width));
  auto uniform = [&](Eigen::Index r, Eigen::Index c) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(-scale, scale);
    return m;
  };
  EncoderParams p;
  p.tables.token = uniform(static_cast<Eigen::Index>(vocab_size), d);
  p.tables.segment = uniform(2, d);
  p.tables.position = uniform(static_cast<Eigen::Index>(config.max_len), d);
  for (std::size_t l = 0; l < config.layers; ++l) {
    EncoderLayerParams layer;
    layer.ln1_gamma = Matrix::Ones(1, d);
    layer.ln1_beta = Matrix::Zero(1, d);
    layer.wq = uniform(d, d);
    layer.wk = uniform(d, d);
    layer.wv = uniform(d, d);
    layer.wo = uniform(d, d);
    layer.bq = layer.bk = layer.bv = layer.bo = Matrix::Zero(1, d);
    layer.ln2_gamma = Matrix::Ones(1, d);
    layer.ln2_beta = Matrix::Zero(1, d);
    layer.w1 = uniform(d, ff);
    layer.b1 = Matrix::Zero(1, ff);
    layer.w2 = uniform(ff, d);
    layer.b2 = Matrix::Zero(1, d);
    p.layers.push_back(std::move(layer));
  }
  p.final_gamma = Matrix::Ones(1, d);
  p.final_beta = Matrix::Zero(1, d);
  return p;
}

/// Row i = token[ids[i]] + segment[segments[i]] + position[i].
inline Matrix embed_input(const std::vector<int>& ids, const std::vector<int>& segments,
                          const EmbeddingTables& tables) {
  if (ids.size() != segments.size()) throw ValidationError("token and segment id counts differ");
  if (ids.size() > static_cast<std::size_t>(tables.position.rows())) {
    throw ValidationError("sequence of " + std::to_string(ids.size()) + " tokens exceeds the position table size " +
                          std::to_string(tables.position.rows()));
  }
  Matrix e(static_cast<Eigen::Index>(ids.size()), tables.token.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    e.row(r) = tables.token.row(ids[i]) + tables.segment.row(segments[i]) + tables.position.row(r);
  }
  return e;
}

inline Matrix embed_input(const TokenSequence& seq, const Vocab& vocab, const EmbeddingTables& tables) {
  return embed_input(vocab.ids(seq.tokens), seq.segment_ids, tables);
}

namespace detail {

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
  Matrix xhat;
  Vector inv_std;
};

inline Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta, LayerNormCache& cache) {
  const auto d = static_cast<double>(x.cols());
  cache.xhat.resize(x.rows(), x.cols());
  cache.inv_std.resize(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).sum() / d;
    const double var = (x.row(i).array() - mean).square().sum() / d;
    cache.inv_std(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.xhat.row(i) = (x.row(i).array() - mean) * cache.inv_std(i);
  }
  Matrix y = cache.xhat.array().rowwise() * gamma.row(0).array();
  y.rowwise() += beta.row(0);
  return y;
}

inline Matrix layer_norm_backward(const Matrix& dy, const Matrix& gamma, const LayerNormCache& cache,
                                  Matrix& dgamma, Matrix& dbeta) {
  dgamma.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbeta.row(0) += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * gamma.row(0).array();
  const auto d = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double s1 = dxhat.row(i).sum();
    const double s2 = dxhat.row(i).dot(cache.xhat.row(i));
    dx.row(i) = (cache.inv_std(i) / d) * (d * dxhat.row(i).array() - s1 - cache.xhat.row(i).array() * s2);
  }
  return dx;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline double gelu_grad(double x) {
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

inline void softmax_rows(Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp();
    m.row(i) /= m.row(i).sum();
  }
}

}  // namespace detail

struct EncoderLayerCache {
  Matrix x_in;
  detail::LayerNormCache ln1;
  Matrix h1, q, k, v;
  std::vector<Matrix> attention;  // per head, n × n, rows sum to 1
  Matrix heads_out;
  Matrix x_mid;
  detail::LayerNormCache ln2;
  Matrix h2, pre_act, act;
};

/// Activations kept from a forward pass for the backward pass.
struct EncoderCache {
  std::vector<int> ids;
  std::vector<int> segments;
  std::vector<EncoderLayerCache> layers;
  detail::LayerNormCache final_ln;
};

/// Hidden states b_0..b_n, one row per input token.
using HiddenStates = Matrix;

/// Pre-norm bidirectional self-attention stack with full (unmasked) attention.
inline HiddenStates encode(const Matrix& embedded, const EncoderConfig& config, const EncoderParams& params,
                           EncoderCache* cache = nullptr) {
  if (embedded.cols() != static_cast<Eigen::Index>(config.width)) {
    throw ValidationError("embedded width " + std::to_string(embedded.cols()) + " differs from encoder d " +
                          std::to_string(config.width));
  }
  if (!embedded.allFinite()) throw ValidationError("non-finite encoder input");
  const auto heads = static_cast<Eigen::Index>(config.heads);
  const Eigen::Index dh = embedded.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  EncoderCache local;
  EncoderCache& c = cache ? *cache : local;
  c.layers.assign(params.layers.size(), {});
  Matrix x = embedded;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& p = params.layers[l];
    auto& lc = c.layers[l];
    lc.x_in = x;
    lc.h1 = detail::layer_norm(x, p.ln1_gamma, p.ln1_beta, lc.ln1);
    lc.q = (lc.h1 * p.wq).rowwise() + p.bq.row(0);
    lc.k = (lc.h1 * p.wk).rowwise() + p.bk.row(0);
    lc.v = (lc.h1 * p.wv).rowwise() + p.bv.row(0);
    lc.attention.resize(static_cast<std::size_t>(heads));
    lc.heads_out.resize(x.rows(), x.cols());
    for (Eigen::Index h = 0; h < heads; ++h) {
      auto& a = lc.attention[static_cast<std::size_t>(h)];
      a = scale * lc.q.middleCols(h * dh, dh) * lc.k.middleCols(h * dh, dh).transpose();
      detail::softmax_rows(a);
      lc.heads_out.middleCols(h * dh, dh) = a * lc.v.middleCols(h * dh, dh);
    }
    lc.x_mid = x + ((lc.heads_out * p.wo).rowwise() + p.bo.row(0));
    lc.h2 = detail::layer_norm(lc.x_mid, p.ln2_gamma, p.ln2_beta, lc.ln2);
    lc.pre_act = (lc.h2 * p.w1).rowwise() + p.b1.row(0);
    lc.act = lc.pre_act.unaryExpr(&detail::gelu);
    x = lc.x_mid + ((lc.act * p.w2).rowwise() + p.b2.row(0));
  }
  return detail::layer_norm(x, params.final_gamma, params.final_beta, c.final_ln);
}

/// Accumulates parameter gradients into `grads` given d(loss)/d(hidden states).
/// Embedding-table gradients are included when the cache carries token ids.
inline void encode_backward(const EncoderCache& cache, const Matrix& d_states, const EncoderConfig& config,
                            const EncoderParams& params, EncoderParams& grads) {
  const auto heads = static_cast<Eigen::Index>(config.heads);
  const Eigen::Index dh = d_states.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix dx = detail::layer_norm_backward(d_states, params.final_gamma, cache.final_ln, grads.final_gamma,
                                          grads.final_beta);
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const auto& p = params.layers[l];
    auto& g = grads.layers[l];
    const auto& lc = cache.layers[l];

    // feedforward sub-block
    g.w2 += lc.act.transpose() * dx;
    g.b2.row(0) += dx.colwise().sum();
    Matrix d_pre = (dx * p.w2.transpose()).cwiseProduct(lc.pre_act.unaryExpr(&detail::gelu_grad));
    g.w1 += lc.h2.transpose() * d_pre;
    g.b1.row(0) += d_pre.colwise().sum();
    Matrix d_mid = dx + detail::layer_norm_backward(d_pre * p.w1.transpose(), p.ln2_gamma, lc.ln2, g.ln2_gamma,
                                                    g.ln2_beta);

    // attention sub-block
    g.wo += lc.heads_out.transpose() * d_mid;
    g.bo.row(0) += d_mid.colwise().sum();
    const Matrix d_heads = d_mid * p.wo.transpose();
    Matrix dq(d_mid.rows(), d_mid.cols()), dk(d_mid.rows(), d_mid.cols()), dv(d_mid.rows(), d_mid.cols());
    for (Eigen::Index h = 0; h < heads; ++h) {
      const auto& a = lc.attention[static_cast<std::size_t>(h)];
      const auto d_out = d_heads.middleCols(h * dh, dh);
      const Matrix d_att = d_out * lc.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = a.transpose() * d_out;
      Matrix d_scores = a.cwiseProduct(d_att);
      const Vector row_dot = d_scores.rowwise().sum();
      d_scores -= a.cwiseProduct(row_dot.replicate(1, a.cols()));
      dq.middleCols(h * dh, dh) = scale * d_scores * lc.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = scale * d_scores.transpose() * lc.q.middleCols(h * dh, dh);
    }
    g.wq += lc.h1.transpose() * dq;
    g.wk += lc.h1.transpose() * dk;
    g.wv += lc.h1.transpose() * dv;
    g.bq.row(0) += dq.colwise().sum();
    g.bk.row(0) += dk.colwise().sum();
    g.bv.row(0) += dv.colwise().sum();
    const Matrix d_h1 = dq * p.wq.transpose() + dk * p.wk.transpose() + dv * p.wv.transpose();
    dx = d_mid + detail::layer_norm_backward(d_h1, p.ln1_gamma, lc.ln1, g.ln1_gamma, g.ln1_beta);
  }

  for (std::size_t i = 0; i < cache.ids.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    grads.tables.token.row(cache.ids[i]) += dx.row(r);
    grads.tables.segment.row(cache.segments[i]) += dx.row(r);
    grads.tables.position.row(r) += dx.row(r);
  }
}

/// b_0: the state at the [CLS] position.
inline Vector sentence_representation(const HiddenStates& states) {
  if (states.rows() < 1) throw ValidationError("hidden states are empty");
  return states.row(0).transpose();
}

/// Embeds and encodes one sequence, keeping the ids for embedding gradients.
inline HiddenStates encode_sequence(const std::vector<int>& ids, const std::vector<int>& segments,
                                    const EncoderConfig& config, const EncoderParams& params,
                                    EncoderCache* cache = nullptr) {
  Matrix e = embed_input(ids, segments, params.tables);
  auto states = encode(e, config, params, cache);
  if (cache) {
    cache->ids = ids;
    cache->segments = segments;
  }
  return states;
}

/// Sentence vectors produced outside this library, keyed by TokenSequence::key().
class PrecomputedEncoder {
 public:
  PrecomputedEncoder() = default;

  void insert(std::string key, Vector v) {
    if (width_ == 0) width_ = static_cast<std::size_t>(v.size());
    if (static_cast<std::size_t>(v.size()) != width_) {
      throw ValidationError("precomputed vector for '" + key + "' has width " + std::to_string(v.size()) +
                            ", expected " + std::to_string(width_));
    }
    if (!v.allFinite()) throw ValidationError("precomputed vector for '" + key + "' is not finite");
    if (!table_.emplace(std::move(key), std::move(v)).second) throw ValidationError("duplicate precomputed key");
  }

  std::size_t width() const { return width_; }
  std::size_t size() const { return table_.size(); }
  bool contains(const std::string& key) const { return table_.contains(key); }

  const Vector& lookup(const std::string& key) const {
    auto it = table_.find(key);
    if (it == table_.end()) throw ValidationError("unembedded sequence: '" + key + "'");
    return it->second;
  }

  const Vector& sentence_representation(const TokenSequence& seq) const { return lookup(seq.key()); }

 private:
  std::unordered_map<std::string, Vector> table_;
  std::size_t width_ = 0;
};

/// Reads JSON-lines records {"key": str, "vector": [f64; d]}.
inline PrecomputedEncoder load_precomputed_encoder(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open precomputed vector file: " + path);
  PrecomputedEncoder enc;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto values = j.at("vector").get<std::vector<double>>();
      enc.insert(j.at("key").get<std::string>(), Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size())));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (enc.size() == 0) throw ValidationError(path + ": no precomputed vectors");
  return enc;
}

}  // namespace intentctx
