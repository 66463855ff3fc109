#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "intentctx/checkpoint.hpp"
#include "intentctx/config.hpp"
#include "intentctx/corpus.hpp"
#include "intentctx/error.hpp"
#include "intentctx/evaluation.hpp"
#include "intentctx/experiment.hpp"

namespace intentctx {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

namespace cli {

namespace fs = std::filesystem;

/// Values given on the command line. Unset options leave the config file alone.
struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> strategy;
  std::optional<std::string> class_weights;
  std::optional<std::string> corpus;
  std::optional<std::string> labels;
  std::optional<std::size_t> epochs;
  std::optional<std::string> out;
};

inline void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config, "JSON run config");
  cmd->add_option("--seed", o.seed, "Random seed (overrides config)");
  cmd->add_option("--out", o.out, "Output root (overrides INTENTCTX_OUT and paths.output_dir)");
}

inline void add_training(CLI::App* cmd, Overrides& o) {
  add_common(cmd, o);
  cmd->add_option("--strategy", o.strategy, "Context strategy: " + strategy_names_list());
  cmd->add_option("--class-weights", o.class_weights, "none | inverse-frequency | file");
  cmd->add_option("--corpus", o.corpus, "Dialogue JSONL corpus");
  cmd->add_option("--labels", o.labels, "Label vocabulary file, one label per line");
  cmd->add_option("--epochs", o.epochs, "Maximum epochs");
}

/// Loads the config file (if any) and applies the overrides. A seed is mandatory
/// when `need_seed` is set.
inline RunConfig resolve_config(const Overrides& o, bool need_seed) {
  nlohmann::json tree = nlohmann::json::object();
  fs::path base = fs::current_path();
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw ValidationError("cannot open config file: " + o.config);
    try {
      tree = nlohmann::json::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("malformed config file " + o.config + ": " + e.what());
    }
    base = fs::absolute(o.config).parent_path();
  }
  if (o.seed) tree["seed"] = *o.seed;
  if (!tree.contains("seed")) {
    if (need_seed) throw ValidationError("missing required config key 'seed' (set it in the config or pass --seed)");
    tree["seed"] = std::uint64_t{0};
  }
  if (o.strategy) tree["strategy"] = *o.strategy;
  if (o.class_weights) tree["class_weights"] = *o.class_weights;
  if (o.epochs) tree["train"]["epochs"] = *o.epochs;
  auto rc = parse_run_config(tree, base);
  // Command-line paths are relative to the working directory, not the config file.
  if (o.corpus) rc.corpus = fs::absolute(*o.corpus).lexically_normal().string();
  if (o.labels) rc.labels = fs::absolute(*o.labels).lexically_normal().string();
  if (o.out) rc.output_dir = fs::absolute(*o.out).lexically_normal().string();
  return rc;
}

inline std::string output_root(const Overrides& o, const RunConfig& rc) {
  if (o.out) return rc.output_dir;
  if (const char* env = std::getenv("INTENTCTX_OUT"); env && *env) return env;
  return rc.output_dir;
}

/// Creates `<root>/<command>-<hash>-s<seed>`; refuses to reuse an existing directory.
inline fs::path make_run_dir(const std::string& root, const std::string& command, const std::string& hash,
                             std::uint64_t seed) {
  const fs::path dir = fs::path(root) / (command + "-" + hash.substr(0, 12) + "-s" + std::to_string(seed));
  if (fs::exists(dir)) {
    throw ValidationError("run directory already exists: " + dir.string() + " (remove it or change --out)");
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw RuntimeFailure("cannot create run directory " + dir.string() + ": " + ec.message());
  return dir;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << text;
  if (!out) throw RuntimeFailure("failed writing " + path.string());
}

inline Corpus load_configured_corpus(const RunConfig& rc) {
  if (rc.corpus.empty()) throw ValidationError("no corpus given (set paths.corpus or pass --corpus)");
  if (!fs::exists(rc.corpus)) throw ValidationError("corpus file does not exist: " + rc.corpus);
  LoadOptions options;
  options.enforce_turn_bounds = rc.enforce_turn_bounds;
  if (!rc.labels.empty()) options.labels = load_label_file(rc.labels);
  return load_corpus(rc.corpus, options);
}

inline std::shared_ptr<const PrecomputedEncoder> load_vectors(const RunConfig& rc) {
  if (rc.experiment.model.encoder_kind != EncoderKind::Precomputed) return nullptr;
  return std::make_shared<const PrecomputedEncoder>(load_precomputed_encoder(rc.vectors));
}

inline nlohmann::json checkpoint_extra(const RunConfig& rc, ContextStrategy strategy) {
  return {{"strategy", std::string(strategy_name(strategy))}, {"config", run_config_to_json(rc)}};
}

inline void report_warnings(const SplitCorpus& splits, std::ostream& err) {
  for (const auto& w : splits.warnings) err << "warning: " << w << "\n";
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_ingest(const Overrides& o, bool enforce, const std::string& output, std::ostream& out) {
  auto rc = resolve_config(o, false);
  if (enforce) rc.enforce_turn_bounds = true;
  const auto corpus = load_configured_corpus(rc);
  if (output.empty()) {
    write_corpus(corpus, out);
  } else {
    std::ofstream file(output, std::ios::binary | std::ios::trunc);
    if (!file) throw RuntimeFailure("cannot write " + output);
    write_corpus(corpus, file);
  }
  return kExitOk;
}

inline int cmd_stats(const Overrides& o, bool as_json, std::ostream& out) {
  const auto rc = resolve_config(o, false);
  const auto corpus = load_configured_corpus(rc);
  const auto s = corpus_stats(corpus);
  if (as_json) {
    nlohmann::ordered_json j;
    j["dialogues"] = s.dialogues;
    j["samples"] = s.samples;
    for (auto [name, r] : {std::pair{"user", &s.user}, std::pair{"system", &s.system}}) {
      j[name] = {{"count", r->count}, {"mean_words", r->mean}, {"std_words", r->stddev}, {"variance", r->variance}};
    }
    nlohmann::ordered_json hist;
    for (std::size_t c = 0; c < corpus.num_classes(); ++c) hist[corpus.labels()[c]] = s.label_histogram[c];
    j["labels"] = hist;
    out << j.dump(2) << "\n";
    return kExitOk;
  }
  char buf[160];
  out << "dialogues: " << s.dialogues << "\nsamples:   " << s.samples << "\n";
  std::snprintf(buf, sizeof buf, "user utterances:  %zu, %.2f words on average (std %.2f)\n", s.user.count, s.user.mean,
                s.user.stddev);
  out << buf;
  std::snprintf(buf, sizeof buf, "system responses: %zu, %.2f words on average (std %.2f)\n", s.system.count,
                s.system.mean, s.system.stddev);
  out << buf;
  out << "intents:\n";
  for (std::size_t c = 0; c < corpus.num_classes(); ++c) {
    out << "  " << corpus.labels()[c] << ": " << s.label_histogram[c] << "\n";
  }
  return kExitOk;
}

struct SynthFlags {
  std::optional<std::size_t> classes, dialogues, min_turns, max_turns;
  std::optional<std::string> dependency;
  std::string output;
};

inline int cmd_synth(const Overrides& o, const SynthFlags& f, std::ostream& out) {
  auto rc = resolve_config(o, true);
  if (f.classes) rc.synth.num_labels = *f.classes;
  if (f.dialogues) rc.synth.dialogues = *f.dialogues;
  if (f.min_turns) rc.synth.min_turns = *f.min_turns;
  if (f.max_turns) rc.synth.max_turns = *f.max_turns;
  if (f.dependency) rc.synth.dependency = detail::parse_dependency(*f.dependency);
  const auto corpus = generate_synthetic_corpus(rc.synth, rc.experiment.seed);
  fs::path path = f.output;
  if (path.empty()) {
    path = make_run_dir(output_root(o, rc), "synth", run_config_hash(rc), rc.experiment.seed) / "corpus.jsonl";
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw RuntimeFailure("cannot write " + path.string());
  write_corpus(corpus, file);
  out << "wrote " << corpus.sample_count() << " samples in " << corpus.dialogues().size() << " dialogues to "
      << path.string() << "\n";
  return kExitOk;
}

inline int cmd_train(const Overrides& o, std::ostream& out, std::ostream& err) {
  const auto rc = resolve_config(o, true);
  const auto corpus = load_configured_corpus(rc);
  const auto vectors = load_vectors(rc);
  const auto splits = split_for(corpus, rc.experiment);
  report_warnings(splits, err);
  const auto dir = make_run_dir(output_root(o, rc), "train", run_config_hash(rc), rc.experiment.seed);

  auto run = run_experiment(corpus, splits, rc.experiment.strategy, rc.experiment, vectors);
  save_checkpoint(dir / "checkpoint.bin", run.model, checkpoint_extra(rc, run.strategy));
  write_text(dir / "vocab.json", run.model.vocab.serialize(run.model.width()));
  write_text(dir / "history.csv", run.history.to_csv());
  write_text(dir / "config.json", run_config_to_json(rc).dump(2) + "\n");

  const auto& best = run.history.epochs.at(run.history.best_epoch - 1);
  char buf[200];
  std::snprintf(buf, sizeof buf, "%s: %zu epochs (%s), best epoch %zu, val loss %.4f, val accuracy %.4f\n",
                std::string(strategy_name(run.strategy)).c_str(), run.history.epochs.size(),
                run.history.stop_reason.c_str(), run.history.best_epoch, best.val_loss, best.val_accuracy);
  out << buf << "run directory: " << dir.string() << "\n";
  return kExitOk;
}

inline int cmd_evaluate(const Overrides& o, const std::string& checkpoint, std::string vocab_path,
                        const std::string& split_name, std::ostream& out, std::ostream& err) {
  if (!fs::exists(checkpoint)) throw ValidationError("checkpoint does not exist: " + checkpoint);
  if (vocab_path.empty()) vocab_path = (fs::path(checkpoint).parent_path() / "vocab.json").string();
  if (!fs::exists(vocab_path)) throw ValidationError("vocabulary file does not exist: " + vocab_path);
  if (split_name != "train" && split_name != "validation" && split_name != "test") {
    throw ValidationError("unknown split '" + split_name + "'; valid: train, validation, test");
  }
  auto vocab = Vocab::load(vocab_path);

  // The run config travels inside the checkpoint; read it before building the model.
  const auto manifest = read_checkpoint_manifest(checkpoint);
  if (!manifest.contains("config") || !manifest.contains("strategy")) {
    throw ValidationError("checkpoint carries no run config; it was not written by 'train' or 'compare'");
  }
  auto rc = parse_run_config(manifest["config"], fs::current_path());
  // Without an explicit root, results land beside the run that produced the checkpoint.
  rc.output_dir = fs::absolute(checkpoint).parent_path().parent_path().string();
  if (o.corpus) rc.corpus = fs::absolute(*o.corpus).lexically_normal().string();
  if (o.labels) rc.labels = fs::absolute(*o.labels).lexically_normal().string();
  if (o.out) rc.output_dir = fs::absolute(*o.out).lexically_normal().string();
  const auto strategy = parse_strategy(manifest["strategy"].get<std::string>());
  const auto vectors = load_vectors(rc);
  const auto loaded = load_checkpoint(checkpoint, std::move(vocab), vectors);
  const auto& model = loaded.model;

  const auto corpus = load_configured_corpus(rc);
  if (corpus.num_classes() != model.num_classes()) {
    throw ValidationError("corpus has " + std::to_string(corpus.num_classes()) + " intents, checkpoint expects " +
                          std::to_string(model.num_classes()));
  }
  const auto splits = split_for(corpus, rc.experiment);
  report_warnings(splits, err);
  const auto& refs = split_name == "train" ? splits.train : split_name == "validation" ? splits.validation : splits.test;
  const auto data = prepare_dataset(corpus, refs, strategy, rc.experiment.preprocess, model.vocab, rc.experiment.max_len);
  const auto result = evaluate(model, data);

  nlohmann::json key = run_config_to_json(rc);
  key["checkpoint_vocab"] = manifest["vocab_hash"];
  key["split"] = split_name;
  key["strategy"] = manifest["strategy"];
  const auto dir = make_run_dir(output_root(o, rc), "evaluate", hex64(fnv1a(key.dump())), rc.experiment.seed);
  write_text(dir / "metrics.csv", std::string(kMetricsCsvHeader) + metrics_csv_row(strategy_name(strategy), result.report));
  nlohmann::json confusion = result.confusion.to_json(corpus.labels());
  confusion["strategy"] = strategy_name(strategy);
  confusion["split"] = split_name;
  write_text(dir / "confusion.json", confusion.dump(2) + "\n");

  const auto& r = result.report;
  char buf[200];
  std::snprintf(buf, sizeof buf, "%s on %s (%zu samples): accuracy %.4f, macro F1 %.4f, weighted F1 %.4f\n",
                std::string(strategy_name(strategy)).c_str(), split_name.c_str(), data.size(), r.accuracy, r.macro.f1,
                r.weighted.f1);
  out << buf;
  if (!r.zero_division_classes.empty()) {
    out << "zero-division classes (metrics set to 0):";
    for (auto c : r.zero_division_classes) out << " " << corpus.labels()[c];
    out << "\n";
  }
  out << "run directory: " << dir.string() << "\n";
  return kExitOk;
}

inline int cmd_compare(const Overrides& o, std::ostream& out, std::ostream& err) {
  const auto rc = resolve_config(o, true);
  const auto corpus = load_configured_corpus(rc);
  const auto vectors = load_vectors(rc);
  const auto splits = split_for(corpus, rc.experiment);
  report_warnings(splits, err);
  const auto dir = make_run_dir(output_root(o, rc), "compare", run_config_hash(rc), rc.experiment.seed);

  std::vector<StrategyRun> runs;
  nlohmann::ordered_json confusion;
  for (auto s : kAllStrategies) {
    auto run = run_experiment(corpus, splits, s, rc.experiment, vectors);
    const auto sub = dir / std::string(strategy_name(s));
    fs::create_directories(sub);
    save_checkpoint(sub / "checkpoint.bin", run.model, checkpoint_extra(rc, s));
    write_text(sub / "history.csv", run.history.to_csv());
    if (runs.empty()) write_text(dir / "vocab.json", run.model.vocab.serialize(run.model.width()));
    confusion[std::string(strategy_name(s))] = run.test.confusion.to_json(corpus.labels());
    err << strategy_name(s) << ": test accuracy " << run.test.report.accuracy << " after "
        << run.history.epochs.size() << " epochs\n";
    runs.push_back(std::move(run));
  }
  write_text(dir / "comparison.csv", comparison_csv(runs));
  const auto table = comparison_table(runs);
  write_text(dir / "comparison.txt", table);
  write_text(dir / "confusion.json", confusion.dump(2) + "\n");
  write_text(dir / "config.json", run_config_to_json(rc).dump(2) + "\n");
  out << table << "run directory: " << dir.string() << "\n";
  return kExitOk;
}

/// Gradient check on a small synthetic batch. Classifier only by default; with the
/// encoder flag the toy encoder is trained too and d is the encoder width.
inline GradientCheckReport run_gradcheck(const GradcheckSettings& g, std::uint64_t seed) {
  SynthesisSpec spec;
  spec.num_labels = g.classes;
  spec.dialogues = std::max<std::size_t>(g.batch, 4);
  spec.min_turns = 2;
  spec.max_turns = 3;
  const auto corpus = generate_synthetic_corpus(spec, seed);
  PreprocessConfig preprocess;
  auto vocab = build_vocab(corpus, preprocess);

  ModelConfig mc;
  mc.encoder.width = g.encoder ? g.encoder_width : g.width;
  mc.encoder.heads = g.encoder ? g.encoder_heads : 1;
  mc.encoder.layers = g.encoder ? g.encoder_layers : 1;
  mc.encoder.feedforward = 2 * mc.encoder.width;
  mc.encoder.max_len = 32;
  mc.encoder.trainable = g.encoder;
  mc.encoder.seed = seed * 4 + 1;
  mc.classifier.input_width = mc.encoder.width;
  mc.classifier.num_classes = g.classes;
  mc.classifier.seed = seed * 4 + 2;
  auto model = Model::create(mc, std::move(vocab));

  auto refs = corpus.samples();
  refs.resize(std::min(refs.size(), g.batch));
  const auto data = prepare_dataset(corpus, refs, ContextStrategy::AllContext, preprocess, model.vocab, mc.encoder.max_len);
  std::vector<std::size_t> counts(g.classes, 0);
  for (const auto& ex : data) ++counts[ex.label];
  GradientCheckOptions options;
  options.seed = seed;
  return gradient_check(std::move(model), data, compute_class_weights(counts), options);
}

inline int cmd_gradcheck(const Overrides& o, const GradcheckSettings* flags_set, std::ostream& out) {
  auto rc = resolve_config(o, false);
  if (flags_set) rc.gradcheck = *flags_set;
  const auto& g = rc.gradcheck;
  const auto report = run_gradcheck(g, rc.experiment.seed);
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s d=%zu C=%zu: max relative error %.3e over %zu entries (worst: %s), tolerance %.1e\n",
                g.encoder ? "classifier+encoder" : "classifier", g.encoder ? g.encoder_width : g.width, g.classes,
                report.max_relative_error, report.checked,
                report.worst_tensor.empty() ? "-" : report.worst_tensor.c_str(), g.tolerance);
  out << buf;
  if (!(report.max_relative_error < g.tolerance)) {
    throw RuntimeFailure("gradient check failed: max relative error " + std::to_string(report.max_relative_error) +
                         " exceeds " + std::to_string(g.tolerance));
  }
  return kExitOk;
}

}  // namespace cli

/// Parses `args` (without the program name) and runs one subcommand. Returns 0 on
/// success, 1 on invalid input, 2 on a runtime failure.
inline int run_command(const std::vector<std::string>& args, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  CLI::App app{"Context-window intent classification for multi-turn dialogues", "intentctx"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "intentctx 1.0.0");

  cli::Overrides o;
  bool enforce = false, as_json = false;
  std::string output, checkpoint, vocab, split = "test";
  cli::SynthFlags synth;
  GradcheckSettings g;
  std::optional<std::size_t> g_width, g_classes, g_batch;
  std::optional<double> g_tol;
  bool g_encoder = false;

  auto* ingest = app.add_subcommand("ingest", "Validate a corpus and re-emit canonical JSONL");
  cli::add_common(ingest, o);
  ingest->add_option("--corpus", o.corpus, "Dialogue JSONL corpus");
  ingest->add_option("--labels", o.labels, "Label vocabulary file");
  ingest->add_flag("--enforce-bounds", enforce, "Reject dialogues outside 3..15 turns");
  ingest->add_option("-o,--output", output, "Output file (default: stdout)");

  auto* stats = app.add_subcommand("stats", "Print corpus statistics");
  cli::add_common(stats, o);
  stats->add_option("--corpus", o.corpus, "Dialogue JSONL corpus");
  stats->add_option("--labels", o.labels, "Label vocabulary file");
  stats->add_flag("--json", as_json, "Emit JSON");

  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic corpus");
  cli::add_common(synth_cmd, o);
  synth_cmd->add_option("--classes", synth.classes, "Number of intents");
  synth_cmd->add_option("--dialogues", synth.dialogues, "Number of dialogues");
  synth_cmd->add_option("--min-turns", synth.min_turns, "Minimum turns per dialogue");
  synth_cmd->add_option("--max-turns", synth.max_turns, "Maximum turns per dialogue");
  synth_cmd->add_option("--dependency", synth.dependency, "off | last-user");
  synth_cmd->add_option("-o,--output", synth.output, "Output file (default: a new run directory)");

  auto* train_cmd = app.add_subcommand("train", "Train one strategy; writes checkpoint and history");
  cli::add_training(train_cmd, o);

  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint; writes metrics CSV and confusion JSON");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint.bin written by train")->required();
  eval_cmd->add_option("--vocab", vocab, "Vocabulary file (default: next to the checkpoint)");
  eval_cmd->add_option("--split", split, "train | validation | test");
  eval_cmd->add_option("--corpus", o.corpus, "Corpus (default: the one recorded in the checkpoint)");
  eval_cmd->add_option("--labels", o.labels, "Label vocabulary file");
  eval_cmd->add_option("--out", o.out, "Output root");

  auto* compare_cmd = app.add_subcommand("compare", "Train and evaluate all six strategies");
  cli::add_training(compare_cmd, o);

  auto* grad_cmd = app.add_subcommand("gradcheck", "Compare backprop against finite differences");
  cli::add_common(grad_cmd, o);
  grad_cmd->add_option("--d", g_width, "Classifier input width");
  grad_cmd->add_option("--classes", g_classes, "Number of classes");
  grad_cmd->add_option("--batch", g_batch, "Batch size");
  grad_cmd->add_flag("--encoder", g_encoder, "Include the toy encoder");
  grad_cmd->add_option("--tolerance", g_tol, "Maximum relative error");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << "intentctx 1.0.0\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    if (app.got_subcommand(ingest)) return cli::cmd_ingest(o, enforce, output, out);
    if (app.got_subcommand(stats)) return cli::cmd_stats(o, as_json, out);
    if (app.got_subcommand(synth_cmd)) return cli::cmd_synth(o, synth, out);
    if (app.got_subcommand(train_cmd)) return cli::cmd_train(o, out, err);
    if (app.got_subcommand(eval_cmd)) return cli::cmd_evaluate(o, checkpoint, vocab, split, out, err);
    if (app.got_subcommand(compare_cmd)) return cli::cmd_compare(o, out, err);
    if (app.got_subcommand(grad_cmd)) {
      const bool any = g_width || g_classes || g_batch || g_tol || g_encoder;
      if (any) {
        g = o.config.empty() ? GradcheckSettings{} : cli::resolve_config(o, false).gradcheck;
        if (g_width) g.width = *g_width;
        if (g_classes) g.classes = *g_classes;
        if (g_batch) g.batch = *g_batch;
        if (g_tol) g.tolerance = *g_tol;
        if (g_encoder) g.encoder = true;
        if (g_encoder && g_width) g.encoder_width = *g_width;
      }
      return cli::cmd_gradcheck(o, any ? &g : nullptr, out);
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const RuntimeFailure& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace intentctx
