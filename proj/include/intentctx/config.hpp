#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "intentctx/corpus.hpp"
#include "intentctx/error.hpp"
#include "intentctx/experiment.hpp"
#include "intentctx/tensor.hpp"

namespace intentctx {

struct GradcheckSettings {
  std::size_t width = 26;
  std::size_t classes = 3;
  std::size_t batch = 8;
  bool encoder = false;
  std::size_t encoder_width = 32;
  std::size_t encoder_heads = 2;
  std::size_t encoder_layers = 1;
  double tolerance = 1e-4;
};

/// Resolved contents of a run config file. Paths are absolute after loading.
struct RunConfig {
  ExperimentConfig experiment;
  std::string corpus;
  std::string labels;
  std::string stopwords;
  std::string vectors;
  std::string output_dir = "runs";
  bool enforce_turn_bounds = false;
  SynthesisSpec synth;
  GradcheckSettings gradcheck;
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ValidationError("config section '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.contains(it.key())) {
      throw ValidationError("unknown config key '" + (where.empty() ? "" : where + ".") + it.key() + "'");
    }
  }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& dst, const std::string& where) {
  if (!j.contains(key) || j[key].is_null()) return;
  try {
    dst = j[key].get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError("config key '" + (where.empty() ? "" : where + ".") + key + "' has the wrong type");
  }
}

inline std::string resolve_path(const std::string& p, const std::filesystem::path& base) {
  if (p.empty()) return p;
  std::filesystem::path path(p);
  if (path.is_relative()) path = base / path;
  return path.lexically_normal().string();
}

inline ContextDependency parse_dependency(const std::string& name) {
  if (name == "off") return ContextDependency::Off;
  if (name == "last-user") return ContextDependency::LastUser;
  throw ValidationError("unknown synthetic dependency '" + name + "'; valid: off, last-user");
}

inline std::string dependency_name(ContextDependency d) { return d == ContextDependency::Off ? "off" : "last-user"; }

}  // namespace detail

/// Parses the run config tree. Relative paths resolve against `base_dir`.
inline RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir = ".") {
  using detail::read;
  detail::check_keys(j, "", {"seed", "paths", "enforce_turn_bounds", "preprocess", "strategy", "max_len",
                             "vocab_min_count", "split", "encoder", "classifier", "train", "class_weights",
                             "class_weights_file", "synth", "gradcheck"});
  if (!j.contains("seed") || !j["seed"].is_number_unsigned()) {
    throw ValidationError("config is missing required key 'seed' (a non-negative integer)");
  }
  RunConfig rc;
  auto& ex = rc.experiment;
  ex.seed = j["seed"].get<std::uint64_t>();

  if (j.contains("paths")) {
    const auto& p = j["paths"];
    detail::check_keys(p, "paths", {"corpus", "labels", "stopwords", "output_dir"});
    read(p, "corpus", rc.corpus, "paths");
    read(p, "labels", rc.labels, "paths");
    read(p, "stopwords", rc.stopwords, "paths");
    read(p, "output_dir", rc.output_dir, "paths");
  }
  read(j, "enforce_turn_bounds", rc.enforce_turn_bounds, "");

  if (j.contains("preprocess")) {
    const auto& p = j["preprocess"];
    detail::check_keys(p, "preprocess", {"lowercase", "strip_urls", "strip_punctuation"});
    read(p, "lowercase", ex.preprocess.lowercase, "preprocess");
    read(p, "strip_urls", ex.preprocess.strip_urls, "preprocess");
    read(p, "strip_punctuation", ex.preprocess.strip_punctuation, "preprocess");
  }
  if (j.contains("strategy")) ex.strategy = parse_strategy(j["strategy"].get<std::string>());
  read(j, "max_len", ex.max_len, "");
  read(j, "vocab_min_count", ex.vocab_min_count, "");

  if (j.contains("split")) {
    const auto& s = j["split"];
    detail::check_keys(s, "split", {"train", "validation", "test", "stratified", "dialogue_level"});
    read(s, "train", ex.split.train, "split");
    read(s, "validation", ex.split.validation, "split");
    read(s, "test", ex.split.test, "split");
    read(s, "stratified", ex.stratified, "split");
    read(s, "dialogue_level", ex.dialogue_level, "split");
  }
  if (j.contains("encoder")) {
    const auto& e = j["encoder"];
    detail::check_keys(e, "encoder", {"type", "layers", "heads", "d", "feedforward", "trainable", "vectors"});
    std::string type = "toy";
    read(e, "type", type, "encoder");
    if (type == "toy") {
      ex.model.encoder_kind = EncoderKind::Toy;
    } else if (type == "precomputed") {
      ex.model.encoder_kind = EncoderKind::Precomputed;
      ex.model.encoder.trainable = false;
    } else {
      throw ValidationError("unknown encoder type '" + type + "'; valid: toy, precomputed");
    }
    read(e, "layers", ex.model.encoder.layers, "encoder");
    read(e, "heads", ex.model.encoder.heads, "encoder");
    read(e, "d", ex.model.encoder.width, "encoder");
    read(e, "feedforward", ex.model.encoder.feedforward, "encoder");
    read(e, "trainable", ex.model.encoder.trainable, "encoder");
    read(e, "vectors", rc.vectors, "encoder");
    if (ex.model.encoder_kind == EncoderKind::Precomputed && rc.vectors.empty()) {
      throw ValidationError("config key 'encoder.vectors' is required for the precomputed encoder");
    }
  }
  if (j.contains("classifier")) {
    const auto& c = j["classifier"];
    detail::check_keys(c, "classifier", {"conv_dropout", "fc_dropout", "batch_norm"});
    read(c, "conv_dropout", ex.model.classifier.conv_dropout, "classifier");
    read(c, "fc_dropout", ex.model.classifier.fc_dropout, "classifier");
    read(c, "batch_norm", ex.model.classifier.batch_norm, "classifier");
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    detail::check_keys(t, "train", {"epochs", "batch_size", "learning_rate", "rho", "epsilon", "patience"});
    read(t, "epochs", ex.train.epochs, "train");
    read(t, "batch_size", ex.train.batch_size, "train");
    read(t, "learning_rate", ex.train.optimizer.learning_rate, "train");
    read(t, "rho", ex.train.optimizer.rho, "train");
    read(t, "epsilon", ex.train.optimizer.epsilon, "train");
    read(t, "patience", ex.train.patience, "train");
  }
  if (j.contains("class_weights")) ex.class_weights = parse_class_weight_scheme(j["class_weights"].get<std::string>());
  read(j, "class_weights_file", ex.class_weights_file, "");

  if (j.contains("synth")) {
    const auto& s = j["synth"];
    detail::check_keys(s, "synth", {"classes", "dialogues", "min_turns", "max_turns", "dependency"});
    read(s, "classes", rc.synth.num_labels, "synth");
    read(s, "dialogues", rc.synth.dialogues, "synth");
    read(s, "min_turns", rc.synth.min_turns, "synth");
    read(s, "max_turns", rc.synth.max_turns, "synth");
    if (s.contains("dependency")) rc.synth.dependency = detail::parse_dependency(s["dependency"].get<std::string>());
  }
  if (j.contains("gradcheck")) {
    const auto& g = j["gradcheck"];
    detail::check_keys(g, "gradcheck", {"d", "classes", "batch", "encoder", "encoder_d", "encoder_heads",
                                        "encoder_layers", "tolerance"});
    read(g, "d", rc.gradcheck.width, "gradcheck");
    read(g, "classes", rc.gradcheck.classes, "gradcheck");
    read(g, "batch", rc.gradcheck.batch, "gradcheck");
    read(g, "encoder", rc.gradcheck.encoder, "gradcheck");
    read(g, "encoder_d", rc.gradcheck.encoder_width, "gradcheck");
    read(g, "encoder_heads", rc.gradcheck.encoder_heads, "gradcheck");
    read(g, "encoder_layers", rc.gradcheck.encoder_layers, "gradcheck");
    read(g, "tolerance", rc.gradcheck.tolerance, "gradcheck");
  }

  rc.corpus = detail::resolve_path(rc.corpus, base_dir);
  rc.labels = detail::resolve_path(rc.labels, base_dir);
  rc.stopwords = detail::resolve_path(rc.stopwords, base_dir);
  rc.vectors = detail::resolve_path(rc.vectors, base_dir);
  rc.output_dir = detail::resolve_path(rc.output_dir, base_dir);
  ex.class_weights_file = detail::resolve_path(ex.class_weights_file, base_dir);
  if (ex.class_weights == ClassWeightScheme::File && ex.class_weights_file.empty()) {
    throw ValidationError("config key 'class_weights_file' is required when class_weights is 'file'");
  }
  if (!rc.stopwords.empty()) ex.preprocess.stopwords = load_stopwords(rc.stopwords);
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed config file " + path + ": " + e.what());
  }
  return parse_run_config(j, std::filesystem::absolute(path).parent_path());
}

/// Resolved config as a tree. The output directory is left out so the same
/// experiment hashes identically wherever it is written.
inline nlohmann::ordered_json run_config_to_json(const RunConfig& rc) {
  const auto& ex = rc.experiment;
  nlohmann::ordered_json j;
  j["seed"] = ex.seed;
  j["paths"] = {{"corpus", rc.corpus}, {"labels", rc.labels}, {"stopwords", rc.stopwords}};
  j["enforce_turn_bounds"] = rc.enforce_turn_bounds;
  j["preprocess"] = {{"lowercase", ex.preprocess.lowercase},
                     {"strip_urls", ex.preprocess.strip_urls},
                     {"strip_punctuation", ex.preprocess.strip_punctuation}};
  j["strategy"] = std::string(strategy_name(ex.strategy));
  j["max_len"] = ex.max_len;
  j["vocab_min_count"] = ex.vocab_min_count;
  j["split"] = {{"train", ex.split.train},
                {"validation", ex.split.validation},
                {"test", ex.split.test},
                {"stratified", ex.stratified},
                {"dialogue_level", ex.dialogue_level}};
  j["encoder"] = {{"type", ex.model.encoder_kind == EncoderKind::Toy ? "toy" : "precomputed"},
                  {"layers", ex.model.encoder.layers},
                  {"heads", ex.model.encoder.heads},
                  {"d", ex.model.encoder.width},
                  {"feedforward", ex.model.encoder.feedforward},
                  {"trainable", ex.model.encoder.trainable},
                  {"vectors", rc.vectors}};
  j["classifier"] = {{"conv_dropout", ex.model.classifier.conv_dropout},
                     {"fc_dropout", ex.model.classifier.fc_dropout},
                     {"batch_norm", ex.model.classifier.batch_norm}};
  j["train"] = {{"epochs", ex.train.epochs},
                {"batch_size", ex.train.batch_size},
                {"learning_rate", ex.train.optimizer.learning_rate},
                {"rho", ex.train.optimizer.rho},
                {"epsilon", ex.train.optimizer.epsilon},
                {"patience", ex.train.patience}};
  j["class_weights"] = std::string(class_weight_scheme_name(ex.class_weights));
  j["class_weights_file"] = ex.class_weights_file;
  j["synth"] = {{"classes", rc.synth.num_labels},
                {"dialogues", rc.synth.dialogues},
                {"min_turns", rc.synth.min_turns},
                {"max_turns", rc.synth.max_turns},
                {"dependency", detail::dependency_name(rc.synth.dependency)}};
  j["gradcheck"] = {{"d", rc.gradcheck.width},
                    {"classes", rc.gradcheck.classes},
                    {"batch", rc.gradcheck.batch},
                    {"encoder", rc.gradcheck.encoder},
                    {"encoder_d", rc.gradcheck.encoder_width},
                    {"encoder_heads", rc.gradcheck.encoder_heads},
                    {"encoder_layers", rc.gradcheck.encoder_layers},
                    {"tolerance", rc.gradcheck.tolerance}};
  return j;
}

inline std::string run_config_hash(const RunConfig& rc) { return hex64(fnv1a(run_config_to_json(rc).dump())); }

}  // namespace intentctx
