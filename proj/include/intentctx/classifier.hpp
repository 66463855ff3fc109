#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "intentctx/error.hpp"
#include "intentctx/rng.hpp"
#include "intentctx/tensor.hpp"

namespace intentctx {

/// Layer schedule of the head (fixed):
///   BN → conv 64×9 → ReLU → maxpool 2/2 → BN → dropout 0.6
///      → conv 32×9 → ReLU → maxpool 2/2 → BN → dropout 0.6
///      → FC 30 → BN → dropout 0.25 → FC C
/// The sentence vector enters as a 1-channel signal of length d.
struct ClassifierConfig {
  std::size_t input_width = 64;
  std::size_t num_classes = 22;
  std::size_t conv1_filters = 64;
  std::size_t conv2_filters = 32;
  std::size_t kernel = 9;
  std::size_t pool = 2;
  std::size_t fc_units = 30;
  double conv_dropout = 0.6;
  double fc_dropout = 0.25;
  bool batch_norm = true;
  std::uint64_t seed = 1;

  void validate() const {
    if (input_width < 26) throw ValidationError("classifier input width d must be at least 26");
    if (num_classes < 2) throw ValidationError("classifier needs at least 2 classes");
    if (conv_dropout < 0 || conv_dropout >= 1 || fc_dropout < 0 || fc_dropout >= 1) {
      throw ValidationError("dropout rates must lie in [0, 1)");
    }
  }
};

/// Signal lengths along the head. Convolutions are valid (L - 8), pools floor-halve.
struct ShapeChain {
  std::size_t input, conv1, pool1, conv2, pool2, flatten, fc, classes;
};

inline ShapeChain shape_chain(const ClassifierConfig& c) {
  ShapeChain s{};
  s.input = c.input_width;
  s.conv1 = s.input - c.kernel + 1;
  s.pool1 = s.conv1 / c.pool;
  s.conv2 = s.pool1 >= c.kernel ? s.pool1 - c.kernel + 1 : 0;
  s.pool2 = s.conv2 / c.pool;
  s.flatten = s.pool2 * c.conv2_filters;
  s.fc = c.fc_units;
  s.classes = c.num_classes;
  return s;
}

struct ClassifierParams {
  Matrix bn0_gamma, bn0_beta;  // 1 × 1
  Matrix conv1_w, conv1_b;     // 64 × 9, 1 × 64
  Matrix bn1_gamma, bn1_beta;  // 1 × 64
  Matrix conv2_w, conv2_b;     // 32 × (64·9), 1 × 32
  Matrix bn2_gamma, bn2_beta;  // 1 × 32
  Matrix fc1_w, fc1_b;         // 30 × flatten, 1 × 30
  Matrix bn3_gamma, bn3_beta;  // 1 × 30
  Matrix fc2_w, fc2_b;         // C × 30, 1 × C

  std::vector<TensorRef> tensors(const std::string& prefix = "classifier.") {
    return {{prefix + "bn0.gamma", &bn0_gamma}, {prefix + "bn0.beta", &bn0_beta}, {prefix + "conv1.w", &conv1_w},
            {prefix + "conv1.b", &conv1_b},     {prefix + "bn1.gamma", &bn1_gamma}, {prefix + "bn1.beta", &bn1_beta},
            {prefix + "conv2.w", &conv2_w},     {prefix + "conv2.b", &conv2_b},     {prefix + "bn2.gamma", &bn2_gamma},
            {prefix + "bn2.beta", &bn2_beta},   {prefix + "fc1.w", &fc1_w},         {prefix + "fc1.b", &fc1_b},
            {prefix + "bn3.gamma", &bn3_gamma}, {prefix + "bn3.beta", &bn3_beta},   {prefix + "fc2.w", &fc2_w},
            {prefix + "fc2.b", &fc2_b}};
  }

  ClassifierParams zeros_like() const {
    ClassifierParams z = *this;
    for (auto& t : z.tensors()) t.value->setZero();
    return z;
  }
};

/// Batch-norm running statistics (not trained by gradient).
struct ClassifierState {
  Matrix mean[4];
  Matrix var[4];

  std::vector<TensorRef> tensors(const std::string& prefix = "classifier.") {
    std::vector<TensorRef> out;
    for (int i = 0; i < 4; ++i) {
      out.push_back({prefix + "bn" + std::to_string(i) + ".running_mean", &mean[i]});
      out.push_back({prefix + "bn" + std::to_string(i) + ".running_var", &var[i]});
    }
    return out;
  }
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

/// Weights uniform in ±1/sqrt(fan_in), biases zero, batch norms identity.
inline void init_classifier(const ClassifierConfig& config, ClassifierParams& p, ClassifierState& s) {
  config.validate();
  const auto shapes = shape_chain(config);
  Rng rng(config.seed);
  auto uniform = [&](std::size_t rows, std::size_t cols, std::size_t fan_in) {
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    const double a = fan_in ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : 0.0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-a, a);
    return m;
  };
  auto ones = [](std::size_t n) { return Matrix::Ones(1, static_cast<Eigen::Index>(n)); };
  auto zeros = [](std::size_t n) { return Matrix::Zero(1, static_cast<Eigen::Index>(n)); };
  const std::size_t k = config.kernel;
  p.bn0_gamma = ones(1);
  p.bn0_beta = zeros(1);
  p.conv1_w = uniform(config.conv1_filters, k, k);
  p.conv1_b = zeros(config.conv1_filters);
  p.bn1_gamma = ones(config.conv1_filters);
  p.bn1_beta = zeros(config.conv1_filters);
  p.conv2_w = uniform(config.conv2_filters, config.conv1_filters * k, config.conv1_filters * k);
  p.conv2_b = zeros(config.conv2_filters);
  p.bn2_gamma = ones(config.conv2_filters);
  p.bn2_beta = zeros(config.conv2_filters);
  p.fc1_w = uniform(config.fc_units, shapes.flatten, shapes.flatten);
  p.fc1_b = zeros(config.fc_units);
  p.bn3_gamma = ones(config.fc_units);
  p.bn3_beta = zeros(config.fc_units);
  p.fc2_w = uniform(config.num_classes, config.fc_units, config.fc_units);
  p.fc2_b = zeros(config.num_classes);
  const std::size_t channels[4] = {1, config.conv1_filters, config.conv2_filters, config.fc_units};
  for (int i = 0; i < 4; ++i) {
    s.mean[i] = zeros(channels[i]);
    s.var[i] = ones(channels[i]);
  }
}

enum class Phase { Train, Eval };

struct ForwardOptions {
  Phase phase = Phase::Eval;
  bool dropout = true;               // only consulted in Train
  bool update_running_stats = true;  // only consulted in Train
  Rng* rng = nullptr;                // required for Train with dropout

  static ForwardOptions eval() { return {}; }
  static ForwardOptions train(Rng& rng) { return {Phase::Train, true, true, &rng}; }
  /// Batch statistics, no dropout, no state change: used for gradient checks.
  static ForwardOptions deterministic_train() { return {Phase::Train, false, false, nullptr}; }
};

namespace detail {

/// A batch of multi-channel signals, one channels × length matrix per sample.
using SignalBatch = std::vector<Matrix>;

struct BatchNormCache {
  SignalBatch xhat;
  Vector inv_std;
  bool batch_stats = false;
};

inline SignalBatch batch_norm(const SignalBatch& x, const Matrix& gamma, const Matrix& beta, Matrix& running_mean,
                              Matrix& running_var, const ForwardOptions& opt, BatchNormCache* cache) {
  const Eigen::Index channels = gamma.cols();
  const Eigen::Index length = x.empty() ? 0 : x.front().cols();
  const double n = static_cast<double>(x.size()) * static_cast<double>(length);
  Vector mean(channels), var(channels);
  const bool batch_stats = opt.phase == Phase::Train;
  if (batch_stats && n > 0) {
    mean.setZero();
    var.setZero();
    for (const auto& s : x) mean += s.rowwise().sum();
    mean /= n;
    for (const auto& s : x) var += (s.colwise() - mean).array().square().matrix().rowwise().sum();
    var /= n;
    if (opt.update_running_stats) {
      running_mean = kBatchNormMomentum * running_mean + (1 - kBatchNormMomentum) * mean.transpose();
      running_var = kBatchNormMomentum * running_var + (1 - kBatchNormMomentum) * var.transpose();
    }
  } else {
    mean = running_mean.row(0).transpose();
    var = running_var.row(0).transpose();
  }
  const Vector inv_std = (var.array() + kBatchNormEps).rsqrt();
  SignalBatch y(x.size());
  if (cache) {
    cache->xhat.resize(x.size());
    cache->inv_std = inv_std;
    cache->batch_stats = batch_stats;
  }
  for (std::size_t b = 0; b < x.size(); ++b) {
    Matrix xhat = (x[b].colwise() - mean).array().colwise() * inv_std.array();
    y[b] = (xhat.array().colwise() * gamma.row(0).transpose().array()).colwise() + beta.row(0).transpose().array();
    if (cache) cache->xhat[b] = std::move(xhat);
  }
  return y;
}

inline SignalBatch batch_norm_backward(const SignalBatch& dy, const Matrix& gamma, const BatchNormCache& cache,
                                       Matrix& dgamma, Matrix& dbeta) {
  const Eigen::Index channels = gamma.cols();
  const Eigen::Index length = dy.empty() ? 0 : dy.front().cols();
  const double n = static_cast<double>(dy.size()) * static_cast<double>(length);
  Vector sum_dy = Vector::Zero(channels), sum_dy_xhat = Vector::Zero(channels);
  for (std::size_t b = 0; b < dy.size(); ++b) {
    sum_dy += dy[b].rowwise().sum();
    sum_dy_xhat += dy[b].cwiseProduct(cache.xhat[b]).rowwise().sum();
  }
  dgamma.row(0) += sum_dy_xhat.transpose();
  dbeta.row(0) += sum_dy.transpose();
  const Vector g = gamma.row(0).transpose();
  SignalBatch dx(dy.size());
  for (std::size_t b = 0; b < dy.size(); ++b) {
    if (!cache.batch_stats) {
      dx[b] = dy[b].array().colwise() * (g.array() * cache.inv_std.array());
      continue;
    }
    // dx = inv_std/n · (n·dxhat − Σdxhat − xhat·Σ(dxhat·xhat)), with dxhat = γ·dy
    Matrix t = (n * dy[b]).colwise() - sum_dy;
    t -= (cache.xhat[b].array().colwise() * sum_dy_xhat.array()).matrix();
    dx[b] = t.array().colwise() * (g.array() * cache.inv_std.array() / n);
  }
  return dx;
}

inline Matrix im2col(const Matrix& x, Eigen::Index kernel) {
  const Eigen::Index out_len = x.cols() - kernel + 1;
  Matrix patches(x.rows() * kernel, std::max<Eigen::Index>(out_len, 0));
  for (Eigen::Index c = 0; c < x.rows(); ++c)
    for (Eigen::Index k = 0; k < kernel; ++k)
      for (Eigen::Index l = 0; l < out_len; ++l) patches(c * kernel + k, l) = x(c, l + k);
  return patches;
}

inline Matrix col2im(const Matrix& dpatches, Eigen::Index channels, Eigen::Index length, Eigen::Index kernel) {
  Matrix dx = Matrix::Zero(channels, length);
  for (Eigen::Index c = 0; c < channels; ++c)
    for (Eigen::Index k = 0; k < kernel; ++k)
      for (Eigen::Index l = 0; l < dpatches.cols(); ++l) dx(c, l + k) += dpatches(c * kernel + k, l);
  return dx;
}

struct PoolCache {
  std::vector<Eigen::MatrixXi> argmax;
  Eigen::Index in_len = 0;
};

inline SignalBatch max_pool(const SignalBatch& x, Eigen::Index width, PoolCache& cache) {
  SignalBatch y(x.size());
  cache.argmax.resize(x.size());
  cache.in_len = x.empty() ? 0 : x.front().cols();
  for (std::size_t b = 0; b < x.size(); ++b) {
    const Eigen::Index out_len = x[b].cols() / width;
    y[b].resize(x[b].rows(), out_len);
    cache.argmax[b].resize(x[b].rows(), out_len);
    for (Eigen::Index c = 0; c < x[b].rows(); ++c) {
      for (Eigen::Index j = 0; j < out_len; ++j) {
        Eigen::Index best = j * width;
        for (Eigen::Index k = 1; k < width; ++k) {
          if (x[b](c, j * width + k) > x[b](c, best)) best = j * width + k;
        }
        y[b](c, j) = x[b](c, best);
        cache.argmax[b](c, j) = static_cast<int>(best);
      }
    }
  }
  return y;
}

inline SignalBatch max_pool_backward(const SignalBatch& dy, const PoolCache& cache) {
  SignalBatch dx(dy.size());
  for (std::size_t b = 0; b < dy.size(); ++b) {
    dx[b] = Matrix::Zero(dy[b].rows(), cache.in_len);
    for (Eigen::Index c = 0; c < dy[b].rows(); ++c)
      for (Eigen::Index j = 0; j < dy[b].cols(); ++j) dx[b](c, cache.argmax[b](c, j)) += dy[b](c, j);
  }
  return dx;
}

/// Inverted dropout: kept units are scaled by 1/(1-rate) at train time.
inline SignalBatch dropout(const SignalBatch& x, double rate, const ForwardOptions& opt, SignalBatch& masks) {
  masks.clear();
  if (opt.phase != Phase::Train || !opt.dropout || rate <= 0.0) return x;
  if (!opt.rng) throw ValidationError("train-mode dropout needs a random source");
  const double keep_scale = 1.0 / (1.0 - rate);
  SignalBatch y(x.size());
  masks.resize(x.size());
  for (std::size_t b = 0; b < x.size(); ++b) {
    masks[b].resize(x[b].rows(), x[b].cols());
    for (Eigen::Index i = 0; i < x[b].size(); ++i) {
      masks[b](i) = opt.rng->bernoulli(rate) ? 0.0 : keep_scale;
    }
    y[b] = x[b].cwiseProduct(masks[b]);
  }
  return y;
}

inline SignalBatch dropout_backward(const SignalBatch& dy, const SignalBatch& masks) {
  if (masks.empty()) return dy;
  SignalBatch dx(dy.size());
  for (std::size_t b = 0; b < dy.size(); ++b) dx[b] = dy[b].cwiseProduct(masks[b]);
  return dx;
}

inline Matrix stack_columns(const SignalBatch& x) {
  Matrix out(static_cast<Eigen::Index>(x.size()), x.empty() ? 0 : x.front().size());
  for (std::size_t b = 0; b < x.size(); ++b) {
    // channel-major flatten: index = c * L + l
    const Matrix t = x[b].transpose();
    out.row(static_cast<Eigen::Index>(b)) = Eigen::Map<const Eigen::RowVectorXd>(t.data(), t.size());
  }
  return out;
}

inline SignalBatch unstack_columns(const Matrix& m, Eigen::Index channels, Eigen::Index length) {
  SignalBatch out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index b = 0; b < m.rows(); ++b) {
    Matrix t(length, channels);
    t = Eigen::Map<const Matrix>(Eigen::RowVectorXd(m.row(b)).data(), length, channels);
    out[static_cast<std::size_t>(b)] = t.transpose();
  }
  return out;
}

inline SignalBatch rows_as_signals(const Matrix& m) {
  // each row becomes a (features × 1) signal so dense layers share the channel BN code
  SignalBatch out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index b = 0; b < m.rows(); ++b) out[static_cast<std::size_t>(b)] = m.row(b).transpose();
  return out;
}

inline Matrix signals_as_rows(const SignalBatch& x) {
  Matrix m(static_cast<Eigen::Index>(x.size()), x.empty() ? 0 : x.front().rows());
  for (std::size_t b = 0; b < x.size(); ++b) m.row(static_cast<Eigen::Index>(b)) = x[b].col(0).transpose();
  return m;
}

}  // namespace detail

struct ClassifierCache {
  detail::BatchNormCache bn[4];
  std::vector<Matrix> patches1, patches2;
  std::vector<Eigen::MatrixXd> relu1_mask, relu2_mask;
  detail::PoolCache pool1, pool2;
  detail::SignalBatch drop1, drop2, drop3;
  Eigen::Index pool2_len = 0;
  Eigen::Index input_len = 0;
  Eigen::Index pool1_len = 0;
  Matrix flat;   // B × flatten
  Matrix hidden; // B × fc_units after BN and dropout
};

/// Forward pass over a batch of sentence vectors (B × d). Returns raw logits (B × C).
/// In Train phase batch norm uses batch statistics and `state` is updated unless disabled.
inline Matrix classifier_forward(const Matrix& inputs, const ClassifierConfig& config, const ClassifierParams& p,
                                 ClassifierState& state, const ForwardOptions& opt,
                                 ClassifierCache* cache = nullptr) {
  if (inputs.cols() != static_cast<Eigen::Index>(config.input_width)) {
    throw ValidationError("classifier input width " + std::to_string(inputs.cols()) + " differs from d " +
                          std::to_string(config.input_width));
  }
  if (!inputs.allFinite()) throw ValidationError("non-finite classifier input");
  const auto k = static_cast<Eigen::Index>(config.kernel);
  const auto pool = static_cast<Eigen::Index>(config.pool);
  ClassifierCache local;
  ClassifierCache& c = cache ? *cache : local;
  const std::size_t batch = static_cast<std::size_t>(inputs.rows());

  auto bn = [&](const detail::SignalBatch& x, int i, const Matrix& gamma, const Matrix& beta) {
    if (!config.batch_norm) return x;
    return detail::batch_norm(x, gamma, beta, state.mean[i], state.var[i], opt, &c.bn[i]);
  };
  auto conv_relu = [&](const detail::SignalBatch& x, const Matrix& w, const Matrix& b, std::vector<Matrix>& patches,
                       std::vector<Matrix>& mask) {
    detail::SignalBatch y(x.size());
    patches.resize(x.size());
    mask.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      patches[i] = detail::im2col(x[i], k);
      Matrix z = (w * patches[i]).colwise() + b.row(0).transpose();
      mask[i] = (z.array() > 0.0).cast<double>();
      y[i] = z.cwiseMax(0.0);
    }
    return y;
  };

  c.input_len = inputs.cols();
  detail::SignalBatch x(batch);
  for (std::size_t i = 0; i < batch; ++i) x[i] = inputs.row(static_cast<Eigen::Index>(i));
  x = bn(x, 0, p.bn0_gamma, p.bn0_beta);
  x = conv_relu(x, p.conv1_w, p.conv1_b, c.patches1, c.relu1_mask);
  x = detail::max_pool(x, pool, c.pool1);
  c.pool1_len = x.empty() ? 0 : x.front().cols();
  x = bn(x, 1, p.bn1_gamma, p.bn1_beta);
  x = detail::dropout(x, config.conv_dropout, opt, c.drop1);
  x = conv_relu(x, p.conv2_w, p.conv2_b, c.patches2, c.relu2_mask);
  x = detail::max_pool(x, pool, c.pool2);
  c.pool2_len = x.empty() ? 0 : x.front().cols();
  x = bn(x, 2, p.bn2_gamma, p.bn2_beta);
  x = detail::dropout(x, config.conv_dropout, opt, c.drop2);
  c.flat = detail::stack_columns(x);
  Matrix fc1 = (c.flat * p.fc1_w.transpose()).rowwise() + p.fc1_b.row(0);
  auto h = detail::rows_as_signals(fc1);
  h = bn(h, 3, p.bn3_gamma, p.bn3_beta);
  h = detail::dropout(h, config.fc_dropout, opt, c.drop3);
  c.hidden = detail::signals_as_rows(h);
  return (c.hidden * p.fc2_w.transpose()).rowwise() + p.fc2_b.row(0);
}

/// Backward pass matching the forward that filled `cache`. Accumulates into `grads`
/// and returns d(loss)/d(inputs) (B × d).
inline Matrix classifier_backward(const ClassifierCache& c, const Matrix& d_logits, const ClassifierConfig& config,
                                  const ClassifierParams& p, ClassifierParams& g) {
  const auto k = static_cast<Eigen::Index>(config.kernel);
  auto bn_back = [&](const detail::SignalBatch& dy, int i, const Matrix& gamma, Matrix& dgamma, Matrix& dbeta) {
    if (!config.batch_norm) return dy;
    return detail::batch_norm_backward(dy, gamma, c.bn[i], dgamma, dbeta);
  };
  auto conv_back = [&](const detail::SignalBatch& dy, const std::vector<Matrix>& mask,
                       const std::vector<Matrix>& patches, const Matrix& w, Matrix& dw, Matrix& db,
                       Eigen::Index in_channels, Eigen::Index in_len) {
    detail::SignalBatch dx(dy.size());
    for (std::size_t i = 0; i < dy.size(); ++i) {
      const Matrix dz = dy[i].cwiseProduct(mask[i]);
      dw += dz * patches[i].transpose();
      db.row(0) += dz.rowwise().sum().transpose();
      dx[i] = detail::col2im(w.transpose() * dz, in_channels, in_len, k);
    }
    return dx;
  };

  g.fc2_w += d_logits.transpose() * c.hidden;
  g.fc2_b.row(0) += d_logits.colwise().sum();
  auto dh = detail::rows_as_signals(d_logits * p.fc2_w);
  dh = detail::dropout_backward(dh, c.drop3);
  dh = bn_back(dh, 3, p.bn3_gamma, g.bn3_gamma, g.bn3_beta);
  const Matrix d_fc1 = detail::signals_as_rows(dh);
  g.fc1_w += d_fc1.transpose() * c.flat;
  g.fc1_b.row(0) += d_fc1.colwise().sum();
  const Matrix d_flat = d_fc1 * p.fc1_w;

  auto dx = detail::unstack_columns(d_flat, static_cast<Eigen::Index>(config.conv2_filters), c.pool2_len);
  dx = detail::dropout_backward(dx, c.drop2);
  dx = bn_back(dx, 2, p.bn2_gamma, g.bn2_gamma, g.bn2_beta);
  dx = detail::max_pool_backward(dx, c.pool2);
  dx = conv_back(dx, c.relu2_mask, c.patches2, p.conv2_w, g.conv2_w, g.conv2_b,
                 static_cast<Eigen::Index>(config.conv1_filters), c.pool1_len);
  dx = detail::dropout_backward(dx, c.drop1);
  dx = bn_back(dx, 1, p.bn1_gamma, g.bn1_gamma, g.bn1_beta);
  dx = detail::max_pool_backward(dx, c.pool1);
  dx = conv_back(dx, c.relu1_mask, c.patches1, p.conv1_w, g.conv1_w, g.conv1_b, 1, c.input_len);
  dx = bn_back(dx, 0, p.bn0_gamma, g.bn0_gamma, g.bn0_beta);

  Matrix d_in(static_cast<Eigen::Index>(dx.size()), c.input_len);
  for (std::size_t i = 0; i < dx.size(); ++i) d_in.row(static_cast<Eigen::Index>(i)) = dx[i].row(0);
  return d_in;
}

// ---------------------------------------------------------------------------
// Softmax and prediction

/// Softmax with max subtraction.
inline Vector softmax(const Vector& logits) {
  const double mx = logits.maxCoeff();
  Vector e = (logits.array() - mx).exp();
  return e / e.sum();
}

struct Prediction {
  std::size_t label = 0;
  Vector probabilities;
};

/// Softmax probabilities and argmax class; ties go to the lowest index.
inline Prediction predict(const Vector& logits) {
  if (!logits.allFinite()) throw ValidationError("non-finite logits");
  Prediction out;
  out.probabilities = softmax(logits);
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < logits.size(); ++i) {
    if (logits(i) > logits(best)) best = i;
  }
  out.label = static_cast<std::size_t>(best);
  return out;
}

}  // namespace intentctx
