// Acceptance run: one PASS/FAIL line per criterion; exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "intentctx/cli.hpp"
#include "intentctx/experiment.hpp"
#include "test_support.hpp"

using namespace intentctx;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void criterion(int number, const char* name, double budget_seconds, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (secs > budget_seconds) {
    o.pass = false;
    o.detail += "; over the time budget";
  }
  if (!o.pass) ++failures;
  std::printf("%s %2d %-28s %8.2fs (budget %.0fs)  %s\n", o.pass ? "PASS" : "FAIL", number, name, secs,
              budget_seconds, o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[200];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

Outcome preprocessing_golden() {
  const std::string input =
      "Já paguei o boleto da campanha ## porque ele ainda está pendente no site "
      "https://campanha.com/5cb4abba34070929d959d32d?";
  const TokenList want = {"paguei", "boleto", "campanha", "porque", "ainda", "pendente"};
  const auto got = preprocess_utterance(input, PreprocessConfig{});
  return {got == want, "[" + join_tokens(got) + "]"};
}

Outcome embedding_additivity() {
  EncoderConfig c;
  c.width = 32;
  c.heads = 2;
  c.max_len = 64;
  const auto p = init_encoder(c, 200);
  Rng rng(2024);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int tok = static_cast<int>(rng.below(200)), seg = static_cast<int>(rng.below(2));
    const auto pos = rng.below(64);
    std::vector<int> ids(pos + 1, 0), segs(pos + 1, 0);
    ids[pos] = tok;
    segs[pos] = seg;
    const Eigen::RowVectorXd got = embed_input(ids, segs, p.tables).row(static_cast<Eigen::Index>(pos));
    Eigen::RowVectorXd want(32);
    for (Eigen::Index j = 0; j < 32; ++j) {
      want(j) = p.tables.token(tok, j) + p.tables.segment(seg, j) + p.tables.position(static_cast<Eigen::Index>(pos), j);
    }
    mismatches += std::memcmp(got.data(), want.data(), sizeof(double) * 32) != 0;
  }
  return {mismatches == 0, std::to_string(mismatches) + " of 1000 triples differ bitwise"};
}

Outcome loss_reduction() {
  Rng rng(99);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto classes = 2 + rng.below(30);
    Vector z(static_cast<Eigen::Index>(classes));
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.uniform(-20, 20);
    const auto label = rng.below(classes);
    double sum = 0;
    for (Eigen::Index i = 0; i < z.size(); ++i) sum += std::exp(z(i) - z.maxCoeff());
    // Unweighted cross-entropy with the same 1e-12 probability floor.
    const double plain = std::min(std::log(sum) + z.maxCoeff() - z(static_cast<Eigen::Index>(label)), -std::log(1e-12));
    worst = std::max(worst, std::abs(weighted_cross_entropy(z, label, ClassWeights::uniform(classes)) - plain));
  }
  return {worst <= 1e-12, fmt("max |difference| %.2e (tolerance 1e-12)", worst)};
}

Outcome gradient_correctness() {
  GradcheckSettings head;  // d = 26, C = 3
  const auto a = cli::run_gradcheck(head, 1);
  GradcheckSettings full;
  full.encoder = true;
  const auto b = cli::run_gradcheck(full, 1);
  const bool pass = a.max_relative_error < 1e-4 && b.max_relative_error < 1e-4;
  return {pass, fmt("classifier d=26 C=3: %.2e; classifier+encoder d=32: %.2e (tolerance 1e-4)", a.max_relative_error,
                    b.max_relative_error)};
}

Outcome shape_chains() {
  bool ok = true;
  for (std::size_t d : {26u, 64u, 128u, 768u}) {
    ClassifierConfig c;
    c.input_width = d;
    c.num_classes = 22;
    const auto s = shape_chain(c);
    ok &= s.conv1 == d - 8 && s.pool1 == s.conv1 / 2 && s.pool2 == s.conv2 / 2;
    ok &= s.pool1 < 9 || s.conv2 == s.pool1 - 8;
    // The forward pass produces the same lengths.
    ClassifierParams p;
    ClassifierState st;
    init_classifier(c, p, st);
    ClassifierCache cache;
    const Matrix logits = classifier_forward(Matrix::Ones(2, static_cast<Eigen::Index>(d)), c, p, st,
                                             ForwardOptions::eval(), &cache);
    ok &= cache.pool1_len == static_cast<Eigen::Index>(s.pool1) && cache.pool2_len == static_cast<Eigen::Index>(s.pool2);
    ok &= cache.flat.cols() == static_cast<Eigen::Index>(s.flatten) && logits.cols() == 22;
  }
  ClassifierConfig big;
  big.input_width = 768;
  big.num_classes = 22;
  const auto s = shape_chain(big);
  const bool full_width = s.conv1 == 760 && s.pool1 == 380 && s.conv2 == 372 && s.pool2 == 186 && s.flatten == 5952 &&
                     s.fc == 30 && s.classes == 22;
  char buf[160];
  std::snprintf(buf, sizeof buf, "d=768: %zu->%zu->%zu->%zu->%zu->%zu->%zu", s.conv1, s.pool1, s.conv2, s.pool2,
                s.flatten, s.fc, s.classes);
  return {ok && full_width, buf};
}

Outcome split_protocol() {
  SynthesisSpec spec;
  spec.dialogues = 200;
  spec.min_turns = 5;
  spec.max_turns = 5;
  const auto corpus = generate_synthetic_corpus(spec, 31);
  if (corpus.sample_count() != 1000) return {false, "corpus has " + std::to_string(corpus.sample_count()) + " samples"};
  const auto a = split_corpus(corpus, {0.6, 0.2, 0.2}, 5, true);
  const auto b = split_corpus(corpus, {0.6, 0.2, 0.2}, 5, true);
  const bool deterministic = a.train == b.train && a.validation == b.validation && a.test == b.test;

  std::set<SampleRef> seen;
  bool disjoint = true;
  for (const auto* part : {&a.train, &a.validation, &a.test})
    for (auto r : *part) disjoint &= seen.insert(r).second;
  const bool partition = disjoint && seen.size() == 1000;

  std::map<LabelId, double> total;
  std::map<LabelId, double> counts[3];
  for (auto r : corpus.samples()) ++total[corpus.label(r)];
  int part = 0;
  for (const auto* refs : {&a.train, &a.validation, &a.test}) {
    for (auto r : *refs) ++counts[part][corpus.label(r)];
    ++part;
  }
  double worst = 0;
  const double ratios[3] = {0.6, 0.2, 0.2};
  for (const auto& [label, n] : total)
    for (int k = 0; k < 3; ++k) worst = std::max(worst, std::abs(counts[k][label] - ratios[k] * n));
  return {deterministic && partition && worst <= 1.0,
          fmt("sizes %.0f/%.0f/%.0f, ", static_cast<double>(a.train.size()), static_cast<double>(a.validation.size()),
              static_cast<double>(a.test.size())) +
              fmt("max per-class deviation %.2f, ", worst) + (deterministic ? "deterministic, " : "NOT deterministic, ") +
              (partition ? "exact partition" : "NOT a partition")};
}

Outcome qualitative_reproduction() {
  SynthesisSpec spec;
  spec.num_labels = 4;
  spec.dialogues = 300;
  spec.min_turns = 8;
  spec.max_turns = 15;
  spec.dependency = ContextDependency::LastUser;
  const auto corpus = generate_synthetic_corpus(spec, 7);
  ExperimentConfig config;
  config.seed = 7;
  config.max_len = 128;
  config.model.encoder.width = 32;
  config.model.encoder.heads = 2;
  config.model.encoder.layers = 2;
  config.model.encoder.feedforward = 64;
  config.train.epochs = 50;
  config.train.batch_size = 32;
  config.train.patience = 8;
  const auto splits = split_for(corpus, config);
  const auto runs = compare_strategies(corpus, splits, config);
  const double chance = 1.0 / 4.0;
  bool pass = corpus.sample_count() >= 2000;
  std::string detail = std::to_string(corpus.sample_count()) + " samples;";
  for (const auto& r : runs) {
    const double acc = r.test.report.accuracy;
    switch (r.strategy) {
      case ContextStrategy::LastUserContext:
      case ContextStrategy::UserSystemContext:
      case ContextStrategy::AllContext:
      case ContextStrategy::UserContext:
        pass &= acc >= 0.90;
        break;
      case ContextStrategy::WithoutContext:
        pass &= acc <= chance + 0.10;
        break;
      case ContextStrategy::LastSystemContext:
        break;
    }
    detail += " " + std::string(strategy_name(r.strategy)) + fmt("=%.3f", acc);
  }
  return {pass, detail + " (context >= 0.90, none <= 0.35)"};
}

Outcome early_stopping() {
  SynthesisSpec spec;
  spec.num_labels = 3;
  spec.dialogues = 40;
  const auto corpus = generate_synthetic_corpus(spec, 13);
  const auto splits = split_corpus(corpus, {}, 13, true);
  ModelConfig mc;
  mc.encoder.width = 28;
  mc.encoder.heads = 2;
  mc.encoder.layers = 1;
  mc.encoder.feedforward = 56;
  mc.encoder.max_len = 48;
  mc.classifier.input_width = 28;
  mc.classifier.num_classes = 3;
  const PreprocessConfig pp;
  auto model = Model::create(mc, build_vocab(corpus, pp));
  const auto train_set = prepare_dataset(corpus, splits.train, ContextStrategy::AllContext, pp, model.vocab, 48);
  const auto val_set = prepare_dataset(corpus, splits.validation, ContextStrategy::AllContext, pp, model.vocab, 48);

  const std::size_t k = 5, patience = 3;
  TrainHooks hooks;
  // Real losses up to epoch k, each forced below the previous; nothing afterwards improves.
  hooks.monitor = [&](std::size_t epoch, double loss) { return epoch <= k ? loss - 1e6 * static_cast<double>(epoch) : 1e9; };
  Model snapshot;
  hooks.on_epoch_end = [&](std::size_t epoch, const Model& m) {
    if (epoch == k) snapshot = m;
  };
  TrainConfig tc;
  tc.epochs = 50;
  tc.batch_size = 16;
  tc.patience = patience;
  tc.seed = 13;
  auto result = train(model, train_set, val_set, ClassWeights::uniform(3), tc, hooks);

  bool same = true;
  auto want = snapshot.all_tensors();
  auto got = result.model.all_tensors();
  for (std::size_t i = 0; i < want.size(); ++i) same &= *want[i].value == *got[i].value;
  const double restored = evaluate_loss(result.model, val_set, ClassWeights::uniform(3)).first;
  const double recorded = result.history.epochs.at(result.history.best_epoch - 1).val_loss;
  const bool pass = result.history.epochs.size() == k + patience && result.history.best_epoch == k &&
                    result.history.stop_reason == "early-stop" && same && restored == recorded;
  return {pass, "stopped after " + std::to_string(result.history.epochs.size()) + " epochs (want " +
                    std::to_string(k + patience) + "), best epoch " + std::to_string(result.history.best_epoch) +
                    (same ? ", epoch-k parameters restored" : ", parameters differ from epoch k") +
                    fmt(", val loss %.9f vs recorded %.9f", restored, recorded)};
}

Outcome metrics_oracle() {
  double worst = 0;
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const auto classes = 2 + rng.below(8);
    const auto n = 1 + rng.below(80);
    std::vector<LabelId> truth, pred;
    for (std::size_t i = 0; i < n; ++i) {
      truth.push_back(rng.below(classes));
      pred.push_back(rng.uniform(0, 1) < 0.6 ? truth.back() : rng.below(classes));
    }
    const auto r = compute_metrics(ConfusionMatrix::from_pairs(classes, truth, pred));
    double hits = 0, macro_p = 0, macro_r = 0, macro_f = 0;
    for (std::size_t i = 0; i < n; ++i) hits += truth[i] == pred[i];
    for (std::size_t c = 0; c < classes; ++c) {
      double tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        tp += pred[i] == c && truth[i] == c;
        fp += pred[i] == c && truth[i] != c;
        fn += pred[i] != c && truth[i] == c;
      }
      const double p = tp + fp > 0 ? tp / (tp + fp) : 0, rc = tp + fn > 0 ? tp / (tp + fn) : 0;
      macro_p += p / static_cast<double>(classes);
      macro_r += rc / static_cast<double>(classes);
      macro_f += (p + rc > 0 ? 2 * p * rc / (p + rc) : 0) / static_cast<double>(classes);
    }
    for (double d : {r.accuracy - hits / static_cast<double>(n), r.macro.precision - macro_p, r.macro.recall - macro_r,
                     r.macro.f1 - macro_f})
      worst = std::max(worst, std::abs(d));
  }
  const auto w = compute_metrics(ConfusionMatrix::from_rows({{2, 1}, {0, 3}}));
  const bool example = std::abs(w.accuracy - 0.8333) < 5e-5 && std::abs(w.macro.f1 - 0.8286) < 5e-5;
  return {worst <= 1e-9 && example,
          fmt("max deviation %.2e over 100 configurations; [[2,1],[0,3]] -> accuracy %.4f, macro F1 %.4f", worst,
              w.accuracy, w.macro.f1)};
}

Outcome end_to_end_determinism() {
  TempDir dir("acceptance");
  SynthesisSpec spec;
  spec.num_labels = 4;
  spec.dialogues = 80;
  spec.min_turns = 3;
  spec.max_turns = 8;
  spec.dependency = ContextDependency::LastUser;
  {
    std::ofstream f(dir / "corpus.jsonl", std::ios::binary);
    write_corpus(generate_synthetic_corpus(spec, 21), f);
  }
  write_file(dir / "run.json", R"({
  "seed": 21,
  "paths": {"corpus": "corpus.jsonl"},
  "encoder": {"type": "toy", "layers": 2, "heads": 2, "d": 32, "feedforward": 64},
  "train": {"epochs": 15, "batch_size": 32, "patience": 4}
})");
  std::vector<fs::path> roots = {dir / "first", dir / "second"};
  for (const auto& root : roots) {
    std::ostringstream out, err;
    const int code = run_command({"compare", "--config", (dir / "run.json").string(), "--out", root.string()}, out, err);
    if (code != 0) return {false, "compare exited " + std::to_string(code) + ": " + err.str()};
  }
  const auto name = fs::directory_iterator(roots[0])->path().filename();
  std::vector<std::string> files = {"comparison.csv", "comparison.txt", "confusion.json", "vocab.json"};
  for (auto s : kAllStrategies) {
    files.push_back(std::string(strategy_name(s)) + "/checkpoint.bin");
    files.push_back(std::string(strategy_name(s)) + "/history.csv");
  }
  std::size_t identical = 0;
  std::string differing;
  for (const auto& f : files) {
    const auto a = read_file(roots[0] / name / f), b = read_file(roots[1] / name / f);
    if (!a.empty() && a == b) {
      ++identical;
    } else {
      differing += " " + f;
    }
  }
  return {identical == files.size(), std::to_string(identical) + "/" + std::to_string(files.size()) +
                                         " files byte-identical" + (differing.empty() ? "" : "; differ:" + differing)};
}

}  // namespace

int main() {
  criterion(1, "preprocessing golden", 1, preprocessing_golden);
  criterion(2, "embedding additivity", 1, embedding_additivity);
  criterion(3, "weighted loss reduction", 1, loss_reduction);
  criterion(4, "gradient correctness", 120, gradient_correctness);
  criterion(5, "shape chain", 1, shape_chains);
  criterion(6, "split protocol", 1, split_protocol);
  criterion(7, "context finding (synthetic)", 600, qualitative_reproduction);
  criterion(8, "early stopping", 60, early_stopping);
  criterion(9, "metrics oracle", 5, metrics_oracle);
  criterion(10, "end-to-end determinism", 1200, end_to_end_determinism);
  std::printf("%s: %d of 10 criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
