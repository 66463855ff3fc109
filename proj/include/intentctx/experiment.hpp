#pragma once

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "intentctx/corpus.hpp"
#include "intentctx/evaluation.hpp"
#include "intentctx/model.hpp"
#include "intentctx/training.hpp"
#include "intentctx/vocab.hpp"
#include "intentctx/window.hpp"

namespace intentctx {

/// Everything that defines one training run apart from the corpus itself.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  PreprocessConfig preprocess;
  std::size_t max_len = kDefaultMaxSequenceLength;
  std::size_t vocab_min_count = 1;
  ContextStrategy strategy = ContextStrategy::WithoutContext;
  ModelConfig model;  // classifier width and class count are filled from the corpus
  TrainConfig train;
  ClassWeightScheme class_weights = ClassWeightScheme::None;
  std::string class_weights_file;
  SplitRatios split;
  bool stratified = true;
  bool dialogue_level = false;

  /// Sub-seeds for the independent random streams.
  std::uint64_t encoder_seed() const { return seed * 4 + 1; }
  std::uint64_t classifier_seed() const { return seed * 4 + 2; }
  std::uint64_t train_seed() const { return seed * 4 + 3; }
};

inline SplitCorpus split_for(const Corpus& corpus, const ExperimentConfig& config) {
  return split_corpus(corpus, config.split, config.seed, config.stratified, config.dialogue_level);
}

inline ClassWeights class_weights_for(const Corpus& corpus, const SplitCorpus& splits,
                                      const ExperimentConfig& config) {
  switch (config.class_weights) {
    case ClassWeightScheme::None:
      return ClassWeights::uniform(corpus.num_classes());
    case ClassWeightScheme::InverseFrequency: {
      std::vector<std::size_t> counts(corpus.num_classes(), 0);
      for (const auto& ref : splits.train) ++counts[corpus.label(ref)];
      return compute_class_weights(counts);
    }
    case ClassWeightScheme::File:
      return load_class_weights(config.class_weights_file, corpus.labels());
  }
  return ClassWeights::uniform(corpus.num_classes());
}

inline ModelConfig resolved_model_config(const Corpus& corpus, const ExperimentConfig& config,
                                         const PrecomputedEncoder* precomputed) {
  ModelConfig m = config.model;
  m.encoder.max_len = config.max_len;
  m.encoder.seed = config.encoder_seed();
  m.classifier.seed = config.classifier_seed();
  m.classifier.num_classes = corpus.num_classes();
  m.classifier.input_width =
      m.encoder_kind == EncoderKind::Toy ? m.encoder.width : (precomputed ? precomputed->width() : m.encoder.width);
  return m;
}

struct StrategyRun {
  ContextStrategy strategy;
  Model model;
  TrainHistory history;
  EvaluationResult test;
};

/// Builds the vocabulary and model, trains on the train split with early stopping on
/// validation, and evaluates on the test split.
inline StrategyRun run_experiment(const Corpus& corpus, const SplitCorpus& splits, ContextStrategy strategy,
                                  const ExperimentConfig& config,
                                  std::shared_ptr<const PrecomputedEncoder> precomputed = nullptr,
                                  const TrainHooks& hooks = {}) {
  auto vocab = build_vocab(corpus, config.preprocess, config.vocab_min_count);
  auto model = Model::create(resolved_model_config(corpus, config, precomputed.get()), std::move(vocab), precomputed);
  auto prepare = [&](const std::vector<SampleRef>& refs) {
    return prepare_dataset(corpus, refs, strategy, config.preprocess, model.vocab, config.max_len);
  };
  const auto train_set = prepare(splits.train);
  const auto val_set = prepare(splits.validation);
  const auto test_set = prepare(splits.test);
  auto train_config = config.train;
  train_config.seed = config.train_seed();
  auto result = train(std::move(model), train_set, val_set, class_weights_for(corpus, splits, config), train_config,
                      hooks);
  auto test = evaluate(result.model, test_set);
  return {strategy, std::move(result.model), std::move(result.history), std::move(test)};
}

/// One run per strategy over identical splits and hyperparameters, in table order.
inline std::vector<StrategyRun> compare_strategies(const Corpus& corpus, const SplitCorpus& splits,
                                                   const ExperimentConfig& config,
                                                   std::shared_ptr<const PrecomputedEncoder> precomputed = nullptr) {
  std::vector<StrategyRun> runs;
  for (auto s : kAllStrategies) runs.push_back(run_experiment(corpus, splits, s, config, precomputed));
  return runs;
}

inline std::string comparison_csv(const std::vector<StrategyRun>& runs) {
  std::string out = kMetricsCsvHeader;
  for (const auto& r : runs) out += metrics_csv_row(strategy_name(r.strategy), r.test.report);
  return out;
}

/// Plain-text table in percent, macro averages.
inline std::string comparison_table(const std::vector<StrategyRun>& runs) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-22s %9s %9s %10s %9s\n", "Approach", "Accuracy", "Recall", "Precision", "F1-Score");
  out += buf;
  for (const auto& r : runs) {
    const auto& m = r.test.report;
    const auto name = strategy_display_name(r.strategy);
    std::snprintf(buf, sizeof buf, "%-22.*s %9.2f %9.2f %10.2f %9.2f\n", static_cast<int>(name.size()), name.data(),
                  100 * m.accuracy, 100 * m.macro.recall, 100 * m.macro.precision, 100 * m.macro.f1);
    out += buf;
  }
  out += "(recall, precision and F1 are macro averages; weighted averages are in the CSV)\n";
  return out;
}

}  // namespace intentctx
