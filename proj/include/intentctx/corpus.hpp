#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "intentctx/error.hpp"
#include "intentctx/rng.hpp"

namespace intentctx {

using LabelId = std::size_t;

struct Turn {
  std::string user_utterance;
  std::string system_response;  // empty is allowed
  LabelId intent = 0;
};

struct Dialogue {
  std::string id;
  std::vector<Turn> turns;
};

/// Reference to one classification sample: a dialogue and a 1-based turn.
struct SampleRef {
  std::size_t dialogue = 0;
  std::size_t turn = 0;

  friend auto operator<=>(const SampleRef&, const SampleRef&) = default;
};

class Corpus {
 public:
  Corpus() = default;
  Corpus(std::vector<Dialogue> dialogues, std::vector<std::string> labels)
      : dialogues_(std::move(dialogues)), labels_(std::move(labels)) {
    validate();
  }

  const std::vector<Dialogue>& dialogues() const { return dialogues_; }
  const std::vector<std::string>& labels() const { return labels_; }
  std::size_t num_classes() const { return labels_.size(); }

  std::optional<LabelId> find_label(const std::string& name) const {
    auto it = std::find(labels_.begin(), labels_.end(), name);
    if (it == labels_.end()) return std::nullopt;
    return static_cast<LabelId>(it - labels_.begin());
  }

  /// All samples in (dialogue, turn) order.
  std::vector<SampleRef> samples() const {
    std::vector<SampleRef> out;
    for (std::size_t d = 0; d < dialogues_.size(); ++d) {
      for (std::size_t t = 1; t <= dialogues_[d].turns.size(); ++t) out.push_back({d, t});
    }
    return out;
  }

  std::size_t sample_count() const {
    std::size_t n = 0;
    for (const auto& d : dialogues_) n += d.turns.size();
    return n;
  }

  const Turn& turn(SampleRef ref) const { return dialogues_.at(ref.dialogue).turns.at(ref.turn - 1); }
  LabelId label(SampleRef ref) const { return turn(ref).intent; }

  std::vector<std::size_t> label_counts() const {
    std::vector<std::size_t> counts(labels_.size(), 0);
    for (const auto& d : dialogues_) {
      for (const auto& t : d.turns) ++counts[t.intent];
    }
    return counts;
  }

 private:
  void validate() const {
    for (const auto& d : dialogues_) {
      if (d.turns.empty()) throw ValidationError("dialogue '" + d.id + "' has no turns");
      for (const auto& t : d.turns) {
        if (t.user_utterance.empty()) throw ValidationError("dialogue '" + d.id + "' has an empty user utterance");
        if (t.intent >= labels_.size()) throw ValidationError("dialogue '" + d.id + "' has an unresolved intent id");
      }
    }
  }

  std::vector<Dialogue> dialogues_;
  std::vector<std::string> labels_;
};

struct LoadOptions {
  bool enforce_turn_bounds = false;
  std::size_t min_turns = 3;
  std::size_t max_turns = 15;
  /// Fixed label vocabulary; when empty, labels are collected in first-appearance order.
  std::vector<std::string> labels;
};

inline std::vector<std::string> load_label_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open label file: " + path);
  std::vector<std::string> labels;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (std::find(labels.begin(), labels.end(), line) != labels.end()) {
      throw ValidationError("duplicate label '" + line + "' in " + path);
    }
    labels.push_back(line);
  }
  return labels;
}

/// Parses the dialogue JSON-lines format. `source` names the input in error messages.
inline Corpus parse_corpus(std::istream& in, const LoadOptions& options, const std::string& source = "<input>") {
  using nlohmann::json;
  const bool fixed_labels = !options.labels.empty();
  std::vector<std::string> labels = options.labels;
  std::unordered_map<std::string, LabelId> label_index;
  for (std::size_t i = 0; i < labels.size(); ++i) label_index.emplace(labels[i], i);

  std::vector<Dialogue> dialogues;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) -> ValidationError {
    return ValidationError(source + ":" + std::to_string(line_no) + ": " + what);
  };
  auto get_string = [&](const json& obj, const char* key, bool required) -> std::string {
    auto it = obj.find(key);
    if (it == obj.end()) {
      if (required) throw fail(std::string("missing field '") + key + "'");
      return {};
    }
    if (!it->is_string()) throw fail(std::string("field '") + key + "' must be a string");
    return it->get<std::string>();
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw fail(std::string("malformed JSON: ") + e.what());
    }
    if (!record.is_object()) throw fail("record must be a JSON object");
    Dialogue dialogue;
    dialogue.id = get_string(record, "id", true);
    auto turns = record.find("turns");
    if (turns == record.end() || !turns->is_array()) throw fail("field 'turns' must be an array");
    if (turns->empty()) throw fail("dialogue '" + dialogue.id + "' has no turns");
    for (const auto& t : *turns) {
      if (!t.is_object()) throw fail("each turn must be a JSON object");
      Turn turn;
      turn.user_utterance = get_string(t, "user", true);
      turn.system_response = get_string(t, "system", false);
      if (turn.user_utterance.empty()) throw fail("dialogue '" + dialogue.id + "' has an empty user utterance");
      const auto intent = get_string(t, "intent", true);
      auto found = label_index.find(intent);
      if (found == label_index.end()) {
        if (fixed_labels) throw fail("unknown label '" + intent + "'");
        found = label_index.emplace(intent, labels.size()).first;
        labels.push_back(intent);
      }
      turn.intent = found->second;
      dialogue.turns.push_back(std::move(turn));
    }
    if (options.enforce_turn_bounds &&
        (dialogue.turns.size() < options.min_turns || dialogue.turns.size() > options.max_turns)) {
      throw fail("dialogue '" + dialogue.id + "' has " + std::to_string(dialogue.turns.size()) +
                 " turns, outside the allowed range [" + std::to_string(options.min_turns) + ", " +
                 std::to_string(options.max_turns) + "]");
    }
    dialogues.push_back(std::move(dialogue));
  }
  if (dialogues.empty()) throw ValidationError(source + ": empty corpus");
  return Corpus(std::move(dialogues), std::move(labels));
}

inline Corpus load_corpus(const std::string& path, const LoadOptions& options = {}) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open corpus file: " + path);
  return parse_corpus(in, options, path);
}

/// Canonical JSON-lines rendering. Re-parsing the output reproduces the corpus.
inline void write_corpus(const Corpus& corpus, std::ostream& out) {
  for (const auto& d : corpus.dialogues()) {
    nlohmann::ordered_json record;
    record["id"] = d.id;
    auto& turns = record["turns"] = nlohmann::ordered_json::array();
    for (const auto& t : d.turns) {
      nlohmann::ordered_json turn;
      turn["user"] = t.user_utterance;
      turn["system"] = t.system_response;
      turn["intent"] = corpus.labels()[t.intent];
      turns.push_back(std::move(turn));
    }
    out << record.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitCorpus {
  std::vector<SampleRef> train;
  std::vector<SampleRef> validation;
  std::vector<SampleRef> test;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

struct SplitRatios {
  double train = 0.6;
  double validation = 0.2;
  double test = 0.2;
};

namespace detail {

/// Shuffles `items` and deals them out at the requested ratios.
inline void deal(std::vector<SampleRef> items, const SplitRatios& r, Rng& rng, SplitCorpus& out) {
  rng.shuffle(items);
  const auto n = items.size();
  auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * r.train));
  auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * r.validation));
  n_train = std::min(n_train, n);
  n_val = std::min(n_val, n - n_train);
  out.train.insert(out.train.end(), items.begin(), items.begin() + n_train);
  out.validation.insert(out.validation.end(), items.begin() + n_train, items.begin() + n_train + n_val);
  out.test.insert(out.test.end(), items.begin() + n_train + n_val, items.end());
}

}  // namespace detail

/// Sample-level split. With `stratified`, each label is dealt separately so per-label
/// proportions follow the ratios within one sample. `dialogue_level` keeps every
/// dialogue inside one partition instead (stratification does not apply then).
inline SplitCorpus split_corpus(const Corpus& corpus, const SplitRatios& ratios, std::uint64_t seed,
                                bool stratified, bool dialogue_level = false) {
  const double sum = ratios.train + ratios.validation + ratios.test;
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("split ratios must sum to 1");
  if (ratios.train < 0 || ratios.validation < 0 || ratios.test < 0) {
    throw ValidationError("split ratios must be non-negative");
  }
  SplitCorpus out;
  out.seed = seed;
  Rng rng(seed);

  if (dialogue_level) {
    std::vector<SampleRef> dialogue_keys;
    for (std::size_t d = 0; d < corpus.dialogues().size(); ++d) dialogue_keys.push_back({d, 0});
    SplitCorpus by_dialogue;
    detail::deal(std::move(dialogue_keys), ratios, rng, by_dialogue);
    auto expand = [&](const std::vector<SampleRef>& keys, std::vector<SampleRef>& dst) {
      for (const auto& k : keys) {
        for (std::size_t t = 1; t <= corpus.dialogues()[k.dialogue].turns.size(); ++t) dst.push_back({k.dialogue, t});
      }
    };
    expand(by_dialogue.train, out.train);
    expand(by_dialogue.validation, out.validation);
    expand(by_dialogue.test, out.test);
  } else if (stratified) {
    std::vector<std::vector<SampleRef>> by_label(corpus.num_classes());
    for (const auto& s : corpus.samples()) by_label[corpus.label(s)].push_back(s);
    for (std::size_t c = 0; c < by_label.size(); ++c) {
      if (by_label[c].empty()) continue;
      if (by_label[c].size() < 3) {
        out.warnings.push_back("label '" + corpus.labels()[c] + "' has " + std::to_string(by_label[c].size()) +
                               " samples; all assigned to train");
        out.train.insert(out.train.end(), by_label[c].begin(), by_label[c].end());
        continue;
      }
      detail::deal(std::move(by_label[c]), ratios, rng, out);
    }
  } else {
    detail::deal(corpus.samples(), ratios, rng, out);
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.validation.begin(), out.validation.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

// ---------------------------------------------------------------------------
// Statistics

struct RoleStats {
  std::size_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;
  double variance = 0.0;  // population variance
};

struct CorpusStats {
  RoleStats user;
  RoleStats system;
  std::size_t samples = 0;
  std::size_t dialogues = 0;
  std::vector<std::size_t> label_histogram;
};

inline std::size_t count_words(const std::string& text) {
  std::istringstream in(text);
  std::size_t n = 0;
  std::string w;
  while (in >> w) ++n;
  return n;
}

namespace detail {

inline RoleStats role_stats(const std::vector<std::size_t>& lengths) {
  RoleStats s;
  s.count = lengths.size();
  if (lengths.empty()) return s;
  double sum = 0;
  for (auto n : lengths) sum += static_cast<double>(n);
  s.mean = sum / static_cast<double>(lengths.size());
  double sq = 0;
  for (auto n : lengths) sq += (static_cast<double>(n) - s.mean) * (static_cast<double>(n) - s.mean);
  s.variance = sq / static_cast<double>(lengths.size());
  s.stddev = std::sqrt(s.variance);
  return s;
}

}  // namespace detail

/// Word counts on whitespace-split raw text. Empty system responses are absent
/// responses and do not enter the system-side statistics.
inline CorpusStats corpus_stats(const Corpus& corpus) {
  if (corpus.dialogues().empty()) throw ValidationError("empty corpus");
  std::vector<std::size_t> user_lengths, system_lengths;
  for (const auto& d : corpus.dialogues()) {
    for (const auto& t : d.turns) {
      user_lengths.push_back(count_words(t.user_utterance));
      if (!t.system_response.empty()) system_lengths.push_back(count_words(t.system_response));
    }
  }
  CorpusStats stats;
  stats.user = detail::role_stats(user_lengths);
  stats.system = detail::role_stats(system_lengths);
  stats.samples = user_lengths.size();
  stats.dialogues = corpus.dialogues().size();
  stats.label_histogram = corpus.label_counts();
  return stats;
}

// ---------------------------------------------------------------------------
// Synthetic corpora

enum class ContextDependency { Off, LastUser };

struct SynthesisSpec {
  std::size_t num_labels = 4;
  std::size_t dialogues = 200;
  std::size_t min_turns = 3;
  std::size_t max_turns = 6;
  ContextDependency dependency = ContextDependency::Off;
  std::size_t cue_words_per_label = 4;
  std::size_t filler_words = 12;
};

/// Generates a labelled corpus whose signal location is known by construction.
///
/// Off: the user utterance contains a cue word of its own intent.
/// LastUser: intents are drawn i.i.d. per turn. From turn 2 on, the user utterance
/// carries only a "pointer" word announcing the *next* turn's intent plus filler,
/// so its text is independent of its own label; the label of turn t is readable
/// from the pointer in the user utterance of turn t-1. Turn 1 additionally carries
/// a cue word of its own intent. System responses are filler in both modes.
inline Corpus generate_synthetic_corpus(const SynthesisSpec& spec, std::uint64_t seed) {
  if (spec.min_turns < 1 || spec.max_turns > 50 || spec.min_turns > spec.max_turns) {
    throw ValidationError("synthetic turns range must lie within [1, 50]");
  }
  if (spec.num_labels < 2) throw ValidationError("synthetic corpus needs at least 2 labels");
  if (spec.dialogues == 0) throw ValidationError("synthetic corpus needs at least one dialogue");
  if (spec.cue_words_per_label == 0 || spec.filler_words == 0) {
    throw ValidationError("synthetic vocabulary sizes must be positive");
  }

  Rng rng(seed);
  std::vector<std::string> labels;
  for (std::size_t c = 0; c < spec.num_labels; ++c) labels.push_back("intent" + std::to_string(c));
  auto cue = [&](std::size_t c) { return "cue" + std::to_string(c) + "w" + std::to_string(rng.below(spec.cue_words_per_label)); };
  auto pointer = [&](std::size_t c) { return "next" + std::to_string(c) + "w" + std::to_string(rng.below(spec.cue_words_per_label)); };
  auto filler = [&] { return "filler" + std::to_string(rng.below(spec.filler_words)); };
  auto reply = [&] { return "reply" + std::to_string(rng.below(spec.filler_words)); };
  auto sentence = [&](std::vector<std::string> words) {
    rng.shuffle(words);
    std::string s;
    for (const auto& w : words) s += (s.empty() ? "" : " ") + w;
    return s;
  };

  std::vector<Dialogue> dialogues;
  for (std::size_t i = 0; i < spec.dialogues; ++i) {
    Dialogue d;
    d.id = "synth-" + std::to_string(i);
    const auto n = spec.min_turns + rng.below(spec.max_turns - spec.min_turns + 1);
    std::vector<LabelId> intents(n);
    for (auto& y : intents) y = rng.below(spec.num_labels);
    for (std::size_t t = 0; t < n; ++t) {
      Turn turn;
      turn.intent = intents[t];
      std::vector<std::string> words;
      if (spec.dependency == ContextDependency::Off) {
        words = {cue(intents[t]), filler()};
      } else {
        if (t == 0) words.push_back(cue(intents[t]));
        const auto next = t + 1 < n ? intents[t + 1] : rng.below(spec.num_labels);
        words.push_back(pointer(next));
        words.push_back(filler());
      }
      turn.user_utterance = sentence(std::move(words));
      turn.system_response = sentence({reply()});
      d.turns.push_back(std::move(turn));
    }
    dialogues.push_back(std::move(d));
  }
  return Corpus(std::move(dialogues), std::move(labels));
}

}  // namespace intentctx
