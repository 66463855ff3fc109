#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "intentctx/error.hpp"
#include "intentctx/model.hpp"
#include "intentctx/rng.hpp"

namespace intentctx {

// ---------------------------------------------------------------------------
// Loss

inline constexpr double kProbabilityFloor = 1e-12;

/// Per-class loss multipliers L_i.
struct ClassWeights {
  std::vector<double> values;

  static ClassWeights uniform(std::size_t classes) { return {std::vector<double>(classes, 1.0)}; }

  void validate(std::size_t classes) const {
    if (values.size() != classes) {
      throw ValidationError("class weights have " + std::to_string(values.size()) + " entries, expected " +
                            std::to_string(classes));
    }
    for (double w : values) {
      if (!(w > 0.0) || !std::isfinite(w)) throw ValidationError("class weights must be positive and finite");
    }
  }
};

/// −L_y · log P_y for a one-hot target y, with P from a stable softmax and
/// P_y floored at 1e-12.
inline double weighted_cross_entropy(const Vector& logits, LabelId label, const ClassWeights& weights) {
  if (!logits.allFinite()) throw ValidationError("non-finite logits");
  if (label >= static_cast<std::size_t>(logits.size())) throw ValidationError("label out of range");
  const Vector p = softmax(logits);
  return -std::log(std::max(p(static_cast<Eigen::Index>(label)), kProbabilityFloor)) * weights.values.at(label);
}

inline double cross_entropy(const Vector& logits, LabelId label) {
  if (!logits.allFinite()) throw ValidationError("non-finite logits");
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return std::min(lse - logits(static_cast<Eigen::Index>(label)), -std::log(kProbabilityFloor));
}

enum class ClassWeightScheme { None, InverseFrequency, File };

inline std::string_view class_weight_scheme_name(ClassWeightScheme s) {
  switch (s) {
    case ClassWeightScheme::None: return "none";
    case ClassWeightScheme::InverseFrequency: return "inverse-frequency";
    case ClassWeightScheme::File: return "file";
  }
  return "?";
}

inline ClassWeightScheme parse_class_weight_scheme(std::string_view name) {
  for (auto s : {ClassWeightScheme::None, ClassWeightScheme::InverseFrequency, ClassWeightScheme::File}) {
    if (class_weight_scheme_name(s) == name) return s;
  }
  throw ValidationError("unknown class weight mode '" + std::string(name) +
                        "'; valid modes: none, inverse-frequency, file");
}

/// Inverse-frequency weights normalized to mean 1. Classes with zero count get the
/// largest weight among the observed classes.
inline ClassWeights compute_class_weights(const std::vector<std::size_t>& counts) {
  std::vector<double> w(counts.size(), 0.0);
  double max_w = 0.0;
  bool any = false;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) continue;
    w[i] = 1.0 / static_cast<double>(counts[i]);
    max_w = std::max(max_w, w[i]);
    any = true;
  }
  if (!any) throw ValidationError("cannot compute class weights: all counts are zero");
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) w[i] = max_w;
  }
  const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
  for (auto& x : w) x /= mean;
  return {w};
}

/// Reads a JSON object mapping label name to weight.
inline ClassWeights load_class_weights(const std::string& path, const std::vector<std::string>& labels) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open class weight file: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed class weight file " + path + ": " + e.what());
  }
  ClassWeights w;
  for (const auto& label : labels) {
    if (!j.contains(label) || !j[label].is_number()) {
      throw ValidationError("class weight file " + path + " lacks a numeric weight for label '" + label + "'");
    }
    w.values.push_back(j[label].get<double>());
  }
  w.validate(labels.size());
  return w;
}

// ---------------------------------------------------------------------------
// RMSprop

struct RmsPropConfig {
  double learning_rate = 1e-3;
  double rho = 0.9;
  double epsilon = 1e-8;
};

/// state ← ρ·state + (1−ρ)·g²;  param ← param − lr·g / (sqrt(state) + ε)
inline void rmsprop_step(Matrix& param, const Matrix& grad, Matrix& state, const RmsPropConfig& c) {
  if (!grad.allFinite()) throw RuntimeFailure("non-finite gradient");
  state = c.rho * state + (1.0 - c.rho) * grad.cwiseAbs2();
  param.array() -= c.learning_rate * grad.array() / (state.array().sqrt() + c.epsilon);
}

class RmsProp {
 public:
  explicit RmsProp(RmsPropConfig config) : config_(config) {}

  void step(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads) {
    if (state_.empty()) {
      for (const auto& p : params) state_.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      try {
        rmsprop_step(*params[i].value, *grads[i].value, state_[i], config_);
      } catch (const RuntimeFailure&) {
        throw RuntimeFailure("non-finite gradient for " + params[i].name);
      }
    }
  }

 private:
  RmsPropConfig config_;
  std::vector<Matrix> state_;
};

// ---------------------------------------------------------------------------
// Batch loss and gradients

/// Mean weighted cross-entropy over a batch and its gradient w.r.t. the logits.
inline double batch_loss(const Matrix& logits, const std::vector<LabelId>& labels, const ClassWeights& weights,
                         Matrix* d_logits) {
  const auto batch = static_cast<double>(logits.rows());
  double total = 0.0;
  if (d_logits) d_logits->setZero(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Vector z = logits.row(i).transpose();
    const auto y = labels[static_cast<std::size_t>(i)];
    total += weighted_cross_entropy(z, y, weights);
    if (d_logits) {
      const Vector p = softmax(z);
      if (p(static_cast<Eigen::Index>(y)) > kProbabilityFloor) {
        Vector g = p;
        g(static_cast<Eigen::Index>(y)) -= 1.0;
        d_logits->row(i) = (weights.values[y] / batch) * g.transpose();
      }
    }
  }
  return total / batch;
}

/// Forward and (optionally) backward over one batch. When `sentence_vectors` is given
/// the encoder is skipped and those rows stand in for b_0.
inline double loss_and_gradients(Model& model, const Dataset& data, const std::vector<std::size_t>& batch,
                                 const ClassWeights& weights, const ForwardOptions& opt, ModelGradients* grads,
                                 const Matrix* sentence_vectors = nullptr) {
  std::vector<EncoderCache> caches;
  const bool backprop_encoder = grads && grads->has_encoder;
  Matrix inputs;
  if (sentence_vectors) {
    inputs.resize(static_cast<Eigen::Index>(batch.size()), sentence_vectors->cols());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      inputs.row(static_cast<Eigen::Index>(i)) = sentence_vectors->row(static_cast<Eigen::Index>(batch[i]));
    }
  } else {
    inputs = model.sentence_batch(data, batch, backprop_encoder ? &caches : nullptr);
  }
  std::vector<LabelId> labels;
  for (auto i : batch) labels.push_back(data[i].label);

  ClassifierCache cache;
  const Matrix logits = classifier_forward(inputs, model.config.classifier, model.classifier, model.state, opt,
                                           grads ? &cache : nullptr);
  if (!logits.allFinite()) throw RuntimeFailure("training diverged: non-finite logits");
  Matrix d_logits;
  const double loss = batch_loss(logits, labels, weights, grads ? &d_logits : nullptr);
  if (!grads) return loss;
  const Matrix d_inputs = classifier_backward(cache, d_logits, model.config.classifier, model.classifier,
                                              grads->classifier);
  if (backprop_encoder) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto n = static_cast<Eigen::Index>(caches[i].ids.size());
      Matrix d_states = Matrix::Zero(n, d_inputs.cols());
      d_states.row(0) = d_inputs.row(static_cast<Eigen::Index>(i));
      encode_backward(caches[i], d_states, model.config.encoder, model.encoder, grads->encoder);
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  RmsPropConfig optimizer;
  std::size_t patience = 5;
  std::uint64_t seed = 1;

  void validate() const {
    if (epochs < 1) throw ValidationError("epochs must be at least 1");
    if (batch_size < 1) throw ValidationError("batch size must be at least 1");
    if (!(optimizer.rho > 0.0 && optimizer.rho < 1.0)) throw ValidationError("rmsprop rho must lie in (0, 1)");
    if (!(optimizer.learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
    if (!(optimizer.epsilon > 0.0)) throw ValidationError("rmsprop epsilon must be positive");
    if (patience < 1) throw ValidationError("patience must be at least 1");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double monitored = 0.0;  // value compared for early stopping
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::string stop_reason;

  /// CSV: epoch,train_loss,val_loss,val_accuracy
  std::string to_csv() const {
    std::string out = "epoch,train_loss,val_loss,val_accuracy\n";
    char buf[128];
    for (const auto& e : epochs) {
      std::snprintf(buf, sizeof buf, "%zu,%.9f,%.9f,%.6f\n", e.epoch, e.train_loss, e.val_loss, e.val_accuracy);
      out += buf;
    }
    return out;
  }
};

struct TrainHooks {
  /// Maps the measured validation loss to the value used for early stopping.
  std::function<double(std::size_t epoch, double val_loss)> monitor;
  /// Called after each epoch with the current (not best) model.
  std::function<void(std::size_t epoch, const Model&)> on_epoch_end;
};

struct TrainResult {
  Model model;  // parameters from the best validation epoch
  TrainHistory history;
};

/// Eval-mode weighted loss and accuracy over a dataset.
inline std::pair<double, double> evaluate_loss(const Model& model, const Dataset& data, const ClassWeights& weights,
                                               const Matrix* sentence_vectors = nullptr) {
  if (data.empty()) return {0.0, 0.0};
  Matrix inputs;
  if (sentence_vectors) {
    inputs = *sentence_vectors;
  } else {
    std::vector<std::size_t> all(data.size());
    std::iota(all.begin(), all.end(), 0);
    inputs = model.sentence_batch(data, all);
  }
  ClassifierState frozen = model.state;
  const Matrix logits =
      classifier_forward(inputs, model.config.classifier, model.classifier, frozen, ForwardOptions::eval());
  if (!logits.allFinite()) throw RuntimeFailure("training diverged: non-finite validation logits");
  std::vector<LabelId> labels;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    labels.push_back(data[i].label);
    if (predict(logits.row(static_cast<Eigen::Index>(i)).transpose()).label == data[i].label) ++correct;
  }
  return {batch_loss(logits, labels, weights, nullptr), static_cast<double>(correct) / static_cast<double>(data.size())};
}

namespace detail {

/// Consecutive batches over a shuffled order; a trailing batch of one sample joins
/// the previous batch so batch statistics stay defined.
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t size) {
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + size)));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

inline Matrix all_sentence_vectors(const Model& model, const Dataset& data) {
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  return model.sentence_batch(data, all);
}

}  // namespace detail

/// Mini-batch RMSprop with early stopping on validation loss. Returns the model from
/// the epoch with the lowest monitored validation loss.
inline TrainResult train(Model model, const Dataset& train_set, const Dataset& validation_set,
                         const ClassWeights& weights, const TrainConfig& config, const TrainHooks& hooks = {}) {
  config.validate();
  weights.validate(model.num_classes());
  if (train_set.empty()) throw ValidationError("empty training split");
  if (validation_set.empty()) throw ValidationError("empty validation split");

  Rng shuffle_rng(config.seed);
  Rng dropout_rng(config.seed ^ 0x5DEECE66DULL);
  RmsProp optimizer(config.optimizer);

  // A frozen encoder yields fixed sentence vectors; compute them once.
  const bool frozen_encoder = !model.encoder_trainable();
  Matrix train_vectors, val_vectors;
  if (frozen_encoder) {
    train_vectors = detail::all_sentence_vectors(model, train_set);
    val_vectors = detail::all_sentence_vectors(model, validation_set);
  }

  TrainResult result{model, {}};
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (const auto& batch : detail::make_batches(order, config.batch_size)) {
      auto grads = ModelGradients::zeros_for(model);
      const double loss = loss_and_gradients(model, train_set, batch, weights, ForwardOptions::train(dropout_rng),
                                             &grads, frozen_encoder ? &train_vectors : nullptr);
      if (!std::isfinite(loss)) {
        throw RuntimeFailure("training diverged: non-finite loss at epoch " + std::to_string(epoch));
      }
      loss_sum += loss * static_cast<double>(batch.size());
      seen += batch.size();
      optimizer.step(model.trainable_tensors(), grads.tensors());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    std::tie(rec.val_loss, rec.val_accuracy) =
        evaluate_loss(model, validation_set, weights, frozen_encoder ? &val_vectors : nullptr);
    if (!std::isfinite(rec.val_loss)) {
      throw RuntimeFailure("training diverged: non-finite validation loss at epoch " + std::to_string(epoch));
    }
    rec.monitored = hooks.monitor ? hooks.monitor(epoch, rec.val_loss) : rec.val_loss;
    result.history.epochs.push_back(rec);
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, model);

    if (rec.monitored < best) {
      best = rec.monitored;
      since_best = 0;
      result.history.best_epoch = epoch;
      result.model = model;
    } else if (++since_best >= config.patience) {
      result.history.stop_reason = "early-stop";
      return result;
    }
  }
  result.history.stop_reason = "max-epochs";
  return result;
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradientCheckOptions {
  double step = 1e-5;
  std::size_t samples_per_tensor = 12;
  /// Denominator floor for the relative error. Entries whose true gradient is zero
  /// (biases ahead of a batch norm, attention key biases) are compared absolutely;
  /// round-off in a central difference at step 1e-5 is around 1e-10.
  double denominator_floor = 1e-5;
  std::uint64_t seed = 7;
};

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  std::size_t checked = 0;
};

/// Compares backprop gradients of the batch loss against central finite differences
/// over a random subsample of every trainable entry. Batch norm uses batch statistics,
/// dropout is off and running statistics are left untouched.
inline GradientCheckReport gradient_check(Model model, const Dataset& data, const ClassWeights& weights,
                                          const GradientCheckOptions& options = {}) {
  std::vector<std::size_t> batch(data.size());
  std::iota(batch.begin(), batch.end(), 0);
  const auto opt = ForwardOptions::deterministic_train();
  auto grads = ModelGradients::zeros_for(model);
  loss_and_gradients(model, data, batch, weights, opt, &grads);

  Rng rng(options.seed);
  GradientCheckReport report;
  auto params = model.trainable_tensors();
  auto analytic = grads.tensors();
  for (std::size_t t = 0; t < params.size(); ++t) {
    Matrix& p = *params[t].value;
    const auto n = static_cast<std::size_t>(p.size());
    if (n == 0) continue;
    std::vector<std::size_t> picks(n);
    std::iota(picks.begin(), picks.end(), 0);
    rng.shuffle(picks);
    picks.resize(std::min(n, options.samples_per_tensor));
    for (auto idx : picks) {
      const auto i = static_cast<Eigen::Index>(idx);
      const double saved = p(i);
      p(i) = saved + options.step;
      const double up = loss_and_gradients(model, data, batch, weights, opt, nullptr);
      p(i) = saved - options.step;
      const double down = loss_and_gradients(model, data, batch, weights, opt, nullptr);
      p(i) = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = (*analytic[t].value)(i);
      const double denom = std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_tensor = params[t].name;
      }
    }
  }
  return report;
}

}  // namespace intentctx
