#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "intentctx/experiment.hpp"
#include "intentctx/rng.hpp"
#include "intentctx/training.hpp"

using namespace intentctx;

namespace {

Vector logits_for(std::initializer_list<double> probs) {
  Vector z(static_cast<Eigen::Index>(probs.size()));
  Eigen::Index i = 0;
  for (double p : probs) z(i++) = std::log(p);
  return z;
}

// Small toy-encoder model and datasets over a synthetic corpus.
struct Fixture {
  Corpus corpus;
  SplitCorpus splits;
  Model model;
  Dataset train_set, val_set;

  explicit Fixture(ContextDependency dep = ContextDependency::Off, std::size_t dialogues = 40, std::size_t d = 28,
                   bool trainable = false) {
    SynthesisSpec spec;
    spec.num_labels = 3;
    spec.dialogues = dialogues;
    spec.dependency = dep;
    corpus = generate_synthetic_corpus(spec, 3);
    splits = split_corpus(corpus, {}, 3, true, false);
    ModelConfig mc;
    mc.encoder.width = d;
    mc.encoder.heads = 2;
    mc.encoder.layers = 1;
    mc.encoder.feedforward = 2 * d;
    mc.encoder.max_len = 48;
    mc.encoder.trainable = trainable;
    mc.classifier.input_width = d;
    mc.classifier.num_classes = 3;
    PreprocessConfig pp;
    model = Model::create(mc, build_vocab(corpus, pp));
    train_set = prepare_dataset(corpus, splits.train, ContextStrategy::WithoutContext, pp, model.vocab, 48);
    val_set = prepare_dataset(corpus, splits.validation, ContextStrategy::WithoutContext, pp, model.vocab, 48);
  }
};

TrainConfig quick(std::size_t epochs, std::size_t patience = 5) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 16;
  c.patience = patience;
  c.seed = 5;
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// Loss

TEST(WeightedCrossEntropy, WorkedExample) {
  EXPECT_NEAR(weighted_cross_entropy(logits_for({0.5, 0.25, 0.25}), 0, {{2, 1, 1}}), 2 * std::log(2.0), 1e-12);
  EXPECT_NEAR(weighted_cross_entropy(logits_for({0.5, 0.25, 0.25}), 0, {{2, 1, 1}}), 1.386294, 1e-6);
}

TEST(WeightedCrossEntropy, UniformWeightsEqualPlainCrossEntropy) {
  Rng rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto classes = 2 + rng.below(20);
    Vector z(static_cast<Eigen::Index>(classes));
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.uniform(-10, 10);
    const auto label = rng.below(classes);
    // Independent oracle: −log of an explicitly normalized exponential.
    const double mx = z.maxCoeff();
    double sum = 0;
    for (Eigen::Index i = 0; i < z.size(); ++i) sum += std::exp(z(i) - mx);
    const double plain = -(z(static_cast<Eigen::Index>(label)) - mx - std::log(sum));
    EXPECT_NEAR(weighted_cross_entropy(z, label, ClassWeights::uniform(classes)), plain, 1e-12);
    EXPECT_NEAR(weighted_cross_entropy(z, label, ClassWeights::uniform(classes)), cross_entropy(z, label), 1e-12);
  }
}

TEST(WeightedCrossEntropy, CertainPredictionCostsNothing) {
  const Vector z = (Vector(3) << 0, 800, 0).finished();
  EXPECT_EQ(weighted_cross_entropy(z, 1, {{5, 7, 9}}), 0.0);
  // Floored, never infinite.
  EXPECT_NEAR(weighted_cross_entropy(z, 0, ClassWeights::uniform(3)), -std::log(1e-12), 1e-9);
}

TEST(WeightedCrossEntropy, NonNegative) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    Vector z(4);
    for (Eigen::Index i = 0; i < 4; ++i) z(i) = rng.uniform(-5, 5);
    EXPECT_GE(weighted_cross_entropy(z, rng.below(4), {{0.5, 1, 2, 3}}), 0.0);
  }
}

TEST(WeightedCrossEntropy, Errors) {
  Vector z(2);
  z << 1, std::nan("");
  EXPECT_THROW(weighted_cross_entropy(z, 0, ClassWeights::uniform(2)), ValidationError);
  EXPECT_THROW(weighted_cross_entropy(Vector::Zero(2), 2, ClassWeights::uniform(2)), ValidationError);
}

TEST(ClassWeights, InverseFrequency) {
  const auto w = compute_class_weights({10, 30, 60});
  ASSERT_EQ(w.values.size(), 3u);
  EXPECT_NEAR(w.values[0], 2.0, 1e-12);
  EXPECT_NEAR(w.values[1], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(w.values[2], 1.0 / 3.0, 1e-12);
  EXPECT_EQ(compute_class_weights({5, 5}).values, (std::vector<double>{1, 1}));
  const auto skew = compute_class_weights({1, 99});
  EXPECT_NEAR(skew.values[0] / skew.values[1], 99.0, 1e-9);
}

TEST(ClassWeights, ZeroCountsTakeTheLargestWeight) {
  const auto w = compute_class_weights({0, 10, 40});
  EXPECT_DOUBLE_EQ(w.values[0], w.values[1]);
  EXPECT_NEAR(std::accumulate(w.values.begin(), w.values.end(), 0.0), 3.0, 1e-12);
  EXPECT_THROW(compute_class_weights({0, 0}), ValidationError);
}

TEST(ClassWeights, Validation) {
  EXPECT_THROW(ClassWeights({{1, 0}}).validate(2), ValidationError);
  EXPECT_THROW(ClassWeights({{1, 1}}).validate(3), ValidationError);
  EXPECT_THROW(parse_class_weight_scheme("balanced"), ValidationError);
  EXPECT_EQ(parse_class_weight_scheme("inverse-frequency"), ClassWeightScheme::InverseFrequency);
}

// ---------------------------------------------------------------------------
// RMSprop

TEST(RmsProp, HandEvaluatedStep) {
  Matrix p = Matrix::Zero(1, 1), g = Matrix::Ones(1, 1), s = Matrix::Zero(1, 1);
  rmsprop_step(p, g, s, {0.1, 0.9, 1e-8});
  EXPECT_NEAR(s(0, 0), 0.1, 1e-15);
  EXPECT_NEAR(p(0, 0), -0.1 / std::sqrt(0.1), 1e-7);
  EXPECT_NEAR(-p(0, 0), 0.31623, 1e-5);
}

TEST(RmsProp, ZeroGradientDecaysState) {
  Matrix p = Matrix::Constant(2, 2, 3.0), g = Matrix::Zero(2, 2), s = Matrix::Constant(2, 2, 0.5);
  rmsprop_step(p, g, s, {0.1, 0.9, 1e-8});
  EXPECT_EQ(p, Matrix::Constant(2, 2, 3.0));
  EXPECT_NEAR(s(0, 0), 0.45, 1e-15);
}

TEST(RmsProp, StepIsScaleInvariant) {
  for (double c : {1e-3, 1.0, 1e3}) {
    Matrix p = Matrix::Zero(1, 1), g = Matrix::Constant(1, 1, c), s = Matrix::Zero(1, 1);
    rmsprop_step(p, g, s, {0.1, 0.9, 1e-8});
    // |step| = lr·c/(sqrt(0.1)·c + ε), within ε of the c = 1 step.
    EXPECT_NEAR(-p(0, 0), 0.1 / std::sqrt(0.1), 1e-8 / (std::sqrt(0.1) * c) + 1e-12) << c;
  }
}

TEST(RmsProp, DecreasesConvexQuadratic) {
  // f(x) = (x − 3)², gradient 2(x − 3).
  Matrix x = Matrix::Constant(1, 1, 10.0), s = Matrix::Zero(1, 1);
  double f = std::pow(x(0, 0) - 3, 2);
  for (int step = 0; step < 20; ++step) {
    const Matrix g = Matrix::Constant(1, 1, 2 * (x(0, 0) - 3));
    rmsprop_step(x, g, s, {0.01, 0.9, 1e-8});
    const double next = std::pow(x(0, 0) - 3, 2);
    EXPECT_LT(next, f);
    f = next;
  }
}

TEST(RmsProp, NonFiniteGradientIsRuntimeFailure) {
  Matrix p = Matrix::Zero(1, 2), g(1, 2), s = Matrix::Zero(1, 2);
  g << 1, INFINITY;
  EXPECT_THROW(rmsprop_step(p, g, s, {}), RuntimeFailure);
}

// ---------------------------------------------------------------------------
// Batching and loss gradient

TEST(Batches, TrailingSingletonJoinsPreviousBatch) {
  std::vector<std::size_t> order(9);
  std::iota(order.begin(), order.end(), 0);
  const auto b = detail::make_batches(order, 4);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[1], (std::vector<std::size_t>{4, 5, 6, 7, 8}));
  EXPECT_EQ(detail::make_batches(order, 3).size(), 3u);
  EXPECT_EQ(detail::make_batches({0}, 4).size(), 1u);
}

TEST(BatchLoss, MeanOfPerSampleLossesAndGradient) {
  Matrix z(2, 3);
  z << 1, 2, 3, 0, -1, 4;
  const ClassWeights w{{2, 1, 0.5}};
  Matrix d;
  const double loss = batch_loss(z, {0, 2}, w, &d);
  EXPECT_NEAR(loss, 0.5 * (weighted_cross_entropy(z.row(0).transpose(), 0, w) +
                           weighted_cross_entropy(z.row(1).transpose(), 2, w)), 1e-14);
  for (Eigen::Index i = 0; i < 2; ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) {
      Matrix up = z, down = z;
      up(i, j) += 1e-6;
      down(i, j) -= 1e-6;
      EXPECT_NEAR(d(i, j), (batch_loss(up, {0, 2}, w, nullptr) - batch_loss(down, {0, 2}, w, nullptr)) / 2e-6, 1e-8);
    }
  }
}

TEST(BatchLoss, AbsentClassOutputRowFollowsSoftmax) {
  Fixture fx;
  // A batch without any sample of class 2.
  std::vector<std::size_t> batch;
  for (std::size_t i = 0; i < fx.train_set.size() && batch.size() < 6; ++i)
    if (fx.train_set[i].label != 2) batch.push_back(i);
  ASSERT_EQ(batch.size(), 6u);
  const ClassWeights w{{1.5, 0.5, 3.0}};
  const auto opt = ForwardOptions::deterministic_train();
  auto grads = ModelGradients::zeros_for(fx.model);
  loss_and_gradients(fx.model, fx.train_set, batch, w, opt, &grads);

  // Oracle: with no target in class 2 its logit gradient is (w_y / B)·P_2 for every sample.
  ClassifierCache cache;
  ClassifierState s = fx.model.state;
  const Matrix logits = classifier_forward(fx.model.sentence_batch(fx.train_set, batch), fx.model.config.classifier,
                                           fx.model.classifier, s, opt, &cache);
  double bias = 0;
  Vector row = Vector::Zero(30);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Vector z = logits.row(i).transpose();
    const double p2 = std::exp(z(2)) / z.array().exp().sum();
    const double coeff = w.values[fx.train_set[batch[static_cast<std::size_t>(i)]].label] * p2 / 6.0;
    bias += coeff;
    row += coeff * cache.hidden.row(i).transpose();
  }
  EXPECT_NEAR(grads.classifier.fc2_b(0, 2), bias, 1e-12);
  for (Eigen::Index j = 0; j < 30; ++j) EXPECT_NEAR(grads.classifier.fc2_w(2, j), row(j), 1e-12);
  EXPECT_GT(bias, 0.0);

  // And by finite differences on the bias.
  auto& b = fx.model.classifier.fc2_b(0, 2);
  const double saved = b;
  b = saved + 1e-6;
  const double up = loss_and_gradients(fx.model, fx.train_set, batch, w, opt, nullptr);
  b = saved - 1e-6;
  const double down = loss_and_gradients(fx.model, fx.train_set, batch, w, opt, nullptr);
  b = saved;
  EXPECT_NEAR((up - down) / 2e-6, bias, 1e-8);
}

// ---------------------------------------------------------------------------
// Gradient check

TEST(GradientCheck, ClassifierOnlyAtMinimumWidth) {
  Fixture fx(ContextDependency::Off, 10, 26);
  Dataset batch(fx.train_set.begin(), fx.train_set.begin() + 8);
  const auto report = gradient_check(fx.model, batch, compute_class_weights({3, 3, 2}));
  EXPECT_LT(report.max_relative_error, 1e-4) << report.worst_tensor;
  EXPECT_GT(report.checked, 50u);
}

TEST(GradientCheck, ClassifierWithTrainableEncoder) {
  Fixture fx(ContextDependency::Off, 10, 32, true);
  Dataset batch(fx.train_set.begin(), fx.train_set.begin() + 8);
  const auto report = gradient_check(fx.model, batch, ClassWeights::uniform(3));
  EXPECT_LT(report.max_relative_error, 1e-4) << report.worst_tensor;
  // Encoder tensors are included.
  EXPECT_GT(report.checked, fx.model.classifier.tensors().size() * 12);
}

TEST(BatchLoss, UniformWeightScaleScalesTheGradient) {
  // L_i ≡ 2 doubles the loss, so the slope under it is twice the L_i ≡ 1 backprop value.
  Fixture fx(ContextDependency::Off, 10, 28);
  Dataset batch(fx.train_set.begin(), fx.train_set.begin() + 8);
  auto grads = ModelGradients::zeros_for(fx.model);
  std::vector<std::size_t> all(batch.size());
  std::iota(all.begin(), all.end(), 0);
  loss_and_gradients(fx.model, batch, all, ClassWeights::uniform(3), ForwardOptions::deterministic_train(), &grads);
  const double b = grads.classifier.fc2_b(0, 0);
  fx.model.classifier.fc2_b(0, 0) += 1e-5;
  const double up = loss_and_gradients(fx.model, batch, all, {{2, 2, 2}}, ForwardOptions::deterministic_train(), nullptr);
  fx.model.classifier.fc2_b(0, 0) -= 2e-5;
  const double down =
      loss_and_gradients(fx.model, batch, all, {{2, 2, 2}}, ForwardOptions::deterministic_train(), nullptr);
  EXPECT_NEAR((up - down) / 2e-5, 2 * b, 1e-8);
}

// ---------------------------------------------------------------------------
// Training loop

TEST(Train, SeparableCorpusWithoutContext) {
  SynthesisSpec spec;
  spec.num_labels = 4;
  spec.dialogues = 120;
  const auto corpus = generate_synthetic_corpus(spec, 12);
  ExperimentConfig config;
  config.seed = 12;
  config.model.encoder.width = 32;
  config.model.encoder.heads = 2;
  config.model.encoder.layers = 1;
  config.model.encoder.feedforward = 64;
  config.max_len = 48;
  config.train.epochs = 50;
  config.train.batch_size = 16;
  config.train.patience = 8;
  const auto splits = split_for(corpus, config);
  const auto run = run_experiment(corpus, splits, ContextStrategy::WithoutContext, config);
  const auto& best = run.history.epochs[run.history.best_epoch - 1];
  EXPECT_GE(best.val_accuracy, 0.95);
  EXPECT_LE(run.history.epochs.size(), 50u);
}

TEST(Train, ConstantOutputStopsAfterTwoEpochs) {
  Fixture fx;
  // Zero output weights and a vanishing learning rate leave every logit at zero.
  fx.model.classifier.fc2_w.setZero();
  fx.model.classifier.fc2_b.setZero();
  auto config = quick(50, 1);
  config.optimizer.learning_rate = 1e-300;
  const auto result = train(fx.model, fx.train_set, fx.val_set, ClassWeights::uniform(3), config);
  EXPECT_EQ(result.history.epochs.size(), 2u);
  EXPECT_EQ(result.history.stop_reason, "early-stop");
  EXPECT_EQ(result.history.best_epoch, 1u);
  EXPECT_NEAR(result.history.epochs[0].val_loss, std::log(3.0), 1e-12);
}

TEST(Train, EarlyStoppingRestoresForcedBestEpoch) {
  Fixture fx;
  const std::size_t k = 3, patience = 2;
  TrainHooks hooks;
  hooks.monitor = [&](std::size_t epoch, double loss) { return epoch <= k ? loss - 1000.0 * epoch : loss; };
  Model at_k;
  hooks.on_epoch_end = [&](std::size_t epoch, const Model& m) {
    if (epoch == k) at_k = m;
  };
  const auto result = train(fx.model, fx.train_set, fx.val_set, ClassWeights::uniform(3), quick(50, patience), hooks);
  EXPECT_EQ(result.history.epochs.size(), k + patience);
  EXPECT_EQ(result.history.best_epoch, k);
  EXPECT_EQ(result.history.stop_reason, "early-stop");
  auto restored = result.model;
  auto want = at_k.all_tensors();
  auto got = restored.all_tensors();
  ASSERT_EQ(want.size(), got.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_EQ(*want[i].value, *got[i].value) << want[i].name;
  EXPECT_EQ(evaluate_loss(result.model, fx.val_set, ClassWeights::uniform(3)).first,
            result.history.epochs[k - 1].val_loss);
}

TEST(Train, BestEpochHasMinimalValidationLoss) {
  Fixture fx;
  const auto result = train(fx.model, fx.train_set, fx.val_set, ClassWeights::uniform(3), quick(12, 3));
  const auto& e = result.history.epochs;
  ASSERT_FALSE(e.empty());
  for (const auto& r : e) EXPECT_LE(e[result.history.best_epoch - 1].val_loss, r.val_loss);
  EXPECT_LE(e.size(), 12u);
}

TEST(Train, SameSeedSameHistoryAndParameters) {
  Fixture a, b;
  const auto ra = train(a.model, a.train_set, a.val_set, ClassWeights::uniform(3), quick(4));
  const auto rb = train(b.model, b.train_set, b.val_set, ClassWeights::uniform(3), quick(4));
  EXPECT_EQ(ra.history.to_csv(), rb.history.to_csv());
  auto ma = ra.model, mb = rb.model;
  auto ta = ma.all_tensors(), tb = mb.all_tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) EXPECT_EQ(*ta[i].value, *tb[i].value) << ta[i].name;
  // A different seed takes a different path.
  auto other = quick(4);
  other.seed = 6;
  const auto rc = train(a.model, a.train_set, a.val_set, ClassWeights::uniform(3), other);
  EXPECT_NE(ra.history.to_csv(), rc.history.to_csv());
}

TEST(Train, TrainableEncoderChangesEncoderWeights) {
  Fixture fx(ContextDependency::Off, 20, 28, true);
  const Matrix before = fx.model.encoder.tables.token;
  const auto result = train(fx.model, fx.train_set, fx.val_set, ClassWeights::uniform(3), quick(1));
  EXPECT_NE(result.model.encoder.tables.token, before);

  Fixture frozen(ContextDependency::Off, 20, 28, false);
  const Matrix fixed = frozen.model.encoder.tables.token;
  const auto r2 = train(frozen.model, frozen.train_set, frozen.val_set, ClassWeights::uniform(3), quick(1));
  EXPECT_EQ(r2.model.encoder.tables.token, fixed);
}

TEST(Train, ConfigValidation) {
  Fixture fx;
  auto bad = quick(0);
  EXPECT_THROW(train(fx.model, fx.train_set, fx.val_set, ClassWeights::uniform(3), bad), ValidationError);
  bad = quick(3);
  bad.optimizer.rho = 1.0;
  EXPECT_THROW(train(fx.model, fx.train_set, fx.val_set, ClassWeights::uniform(3), bad), ValidationError);
  bad = quick(3, 0);
  EXPECT_THROW(train(fx.model, fx.train_set, fx.val_set, ClassWeights::uniform(3), bad), ValidationError);
  EXPECT_THROW(train(fx.model, {}, fx.val_set, ClassWeights::uniform(3), quick(3)), ValidationError);
  EXPECT_THROW(train(fx.model, fx.train_set, fx.val_set, ClassWeights::uniform(2), quick(3)), ValidationError);
}

TEST(Train, DivergenceIsRuntimeFailure) {
  Fixture fx;
  fx.model.classifier.fc2_w(0, 0) = INFINITY;
  EXPECT_THROW(train(fx.model, fx.train_set, fx.val_set, ClassWeights::uniform(3), quick(2)), RuntimeFailure);
}

TEST(History, CsvFormat) {
  TrainHistory h;
  h.epochs.push_back({1, 1.5, 1.25, 0.5, 1.25});
  EXPECT_EQ(h.to_csv(), "epoch,train_loss,val_loss,val_accuracy\n1,1.500000000,1.250000000,0.500000\n");
}
