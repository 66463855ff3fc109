#pragma once

#include <memory>
#include <string>
#include <vector>

#include "intentctx/classifier.hpp"
#include "intentctx/corpus.hpp"
#include "intentctx/encoder.hpp"
#include "intentctx/vocab.hpp"
#include "intentctx/window.hpp"

namespace intentctx {

enum class EncoderKind { Toy, Precomputed };

struct ModelConfig {
  EncoderKind encoder_kind = EncoderKind::Toy;
  EncoderConfig encoder;
  ClassifierConfig classifier;
};

/// One classification sample after context selection, assembly and vocabulary lookup.
struct Example {
  std::vector<int> ids;
  std::vector<int> segments;
  std::string key;
  LabelId label = 0;
};

using Dataset = std::vector<Example>;

inline Example make_example(const TokenSequence& seq, const Vocab& vocab, LabelId label) {
  return {vocab.ids(seq.tokens), seq.segment_ids, seq.key(), label};
}

inline Dataset prepare_dataset(const Corpus& corpus, const std::vector<SampleRef>& refs, ContextStrategy strategy,
                               const PreprocessConfig& preprocess, const Vocab& vocab, std::size_t max_len) {
  Dataset out;
  out.reserve(refs.size());
  for (const auto& ref : refs) {
    out.push_back(make_example(sample_sequence(corpus, ref, strategy, preprocess, max_len), vocab, corpus.label(ref)));
  }
  return out;
}

/// Sentence encoder followed by the CNN head.
struct Model {
  ModelConfig config;
  Vocab vocab;
  EncoderParams encoder;  // empty for the precomputed path
  std::shared_ptr<const PrecomputedEncoder> precomputed;
  ClassifierParams classifier;
  ClassifierState state;

  static Model create(const ModelConfig& config, Vocab vocab,
                      std::shared_ptr<const PrecomputedEncoder> precomputed = nullptr) {
    Model m;
    m.config = config;
    m.vocab = std::move(vocab);
    if (config.encoder_kind == EncoderKind::Toy) {
      if (config.encoder.width != config.classifier.input_width) {
        throw ValidationError("encoder d and classifier input width differ");
      }
      m.encoder = init_encoder(config.encoder, m.vocab.size());
    } else {
      if (!precomputed) throw ValidationError("precomputed encoder requested without vectors");
      if (precomputed->width() != config.classifier.input_width) {
        throw ValidationError("precomputed vectors have width " + std::to_string(precomputed->width()) +
                              ", classifier expects " + std::to_string(config.classifier.input_width));
      }
      m.precomputed = std::move(precomputed);
    }
    init_classifier(config.classifier, m.classifier, m.state);
    return m;
  }

  std::size_t width() const { return config.classifier.input_width; }
  std::size_t num_classes() const { return config.classifier.num_classes; }

  bool encoder_trainable() const { return config.encoder_kind == EncoderKind::Toy && config.encoder.trainable; }

  /// Parameters updated by the optimizer, in a fixed order.
  std::vector<TensorRef> trainable_tensors() {
    std::vector<TensorRef> out;
    if (encoder_trainable()) out = encoder.tensors();
    for (auto& t : classifier.tensors()) out.push_back(t);
    return out;
  }

  /// Everything a checkpoint stores.
  std::vector<TensorRef> all_tensors() {
    std::vector<TensorRef> out;
    if (config.encoder_kind == EncoderKind::Toy) out = encoder.tensors();
    for (auto& t : classifier.tensors()) out.push_back(t);
    for (auto& t : state.tensors()) out.push_back(t);
    return out;
  }

  /// b_0 for one example.
  Vector sentence_vector(const Example& ex, EncoderCache* cache = nullptr) const {
    if (config.encoder_kind == EncoderKind::Precomputed) return precomputed->lookup(ex.key);
    return sentence_representation(encode_sequence(ex.ids, ex.segments, config.encoder, encoder, cache));
  }

  Matrix sentence_batch(const Dataset& data, const std::vector<std::size_t>& indices,
                        std::vector<EncoderCache>* caches = nullptr) const {
    Matrix out(static_cast<Eigen::Index>(indices.size()), static_cast<Eigen::Index>(width()));
    if (caches) caches->assign(indices.size(), {});
    for (std::size_t i = 0; i < indices.size(); ++i) {
      out.row(static_cast<Eigen::Index>(i)) =
          sentence_vector(data[indices[i]], caches ? &(*caches)[i] : nullptr).transpose();
    }
    return out;
  }

  /// Eval-mode logits, one row per example.
  Matrix logits(const Dataset& data) const {
    std::vector<std::size_t> all(data.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    ClassifierState frozen = state;
    return classifier_forward(sentence_batch(data, all), config.classifier, classifier, frozen, ForwardOptions::eval());
  }
};

/// Gradients for every trainable tensor of a model, same shapes.
struct ModelGradients {
  EncoderParams encoder;
  ClassifierParams classifier;
  bool has_encoder = false;

  static ModelGradients zeros_for(const Model& m) {
    ModelGradients g;
    g.has_encoder = m.encoder_trainable();
    if (g.has_encoder) g.encoder = m.encoder.zeros_like();
    g.classifier = m.classifier.zeros_like();
    return g;
  }

  std::vector<TensorRef> tensors() {
    std::vector<TensorRef> out;
    if (has_encoder) out = encoder.tensors();
    for (auto& t : classifier.tensors()) out.push_back(t);
    return out;
  }
};

}  // namespace intentctx
