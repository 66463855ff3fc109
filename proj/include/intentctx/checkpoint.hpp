#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "intentctx/error.hpp"
#include "intentctx/model.hpp"

namespace intentctx {

// Checkpoint layout:
//   8 bytes   magic "ICTXCKPT"
//   u32       format version
//   u64       manifest byte length
//   ...       manifest, UTF-8 JSON (includes the tensor directory)
//   ...       tensors in directory order, row-major IEEE-754 binary32
// All integers and floats are little-endian.

inline constexpr std::array<char, 8> kCheckpointMagic = {'I', 'C', 'T', 'X', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {
      {"encoder_kind", c.encoder_kind == EncoderKind::Toy ? "toy" : "precomputed"},
      {"encoder",
       {{"layers", c.encoder.layers},
        {"heads", c.encoder.heads},
        {"d", c.encoder.width},
        {"feedforward", c.encoder.feedforward},
        {"max_len", c.encoder.max_len},
        {"trainable", c.encoder.trainable},
        {"seed", c.encoder.seed}}},
      {"classifier",
       {{"d", c.classifier.input_width},
        {"num_classes", c.classifier.num_classes},
        {"conv_dropout", c.classifier.conv_dropout},
        {"fc_dropout", c.classifier.fc_dropout},
        {"batch_norm", c.classifier.batch_norm},
        {"seed", c.classifier.seed}}},
  };
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.encoder_kind = j.at("encoder_kind").get<std::string>() == "toy" ? EncoderKind::Toy : EncoderKind::Precomputed;
  const auto& e = j.at("encoder");
  c.encoder.layers = e.at("layers");
  c.encoder.heads = e.at("heads");
  c.encoder.width = e.at("d");
  c.encoder.feedforward = e.at("feedforward");
  c.encoder.max_len = e.at("max_len");
  c.encoder.trainable = e.at("trainable");
  c.encoder.seed = e.at("seed");
  const auto& k = j.at("classifier");
  c.classifier.input_width = k.at("d");
  c.classifier.num_classes = k.at("num_classes");
  c.classifier.conv_dropout = k.at("conv_dropout");
  c.classifier.fc_dropout = k.at("fc_dropout");
  c.classifier.batch_norm = k.at("batch_norm");
  c.classifier.seed = k.at("seed");
  return c;
}

struct LoadedCheckpoint {
  Model model;
  nlohmann::json manifest;
};

namespace detail {

template <typename T>
void write_le(std::ostream& out, T value) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T read_le(std::istream& in) {
  std::array<char, sizeof(T)> bytes;
  if (!in.read(bytes.data(), bytes.size())) throw ValidationError("truncated checkpoint");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace detail

/// Writes the model. `extra` is merged into the manifest (strategy, config echo, ...).
inline void save_checkpoint(const std::filesystem::path& path, Model& model, const nlohmann::json& extra = {}) {
  nlohmann::json manifest = extra.is_object() ? extra : nlohmann::json::object();
  manifest["format"] = "intentctx-checkpoint";
  manifest["version"] = kCheckpointVersion;
  manifest["d"] = model.width();
  manifest["num_classes"] = model.num_classes();
  manifest["vocab_hash"] = model.vocab.hash();
  manifest["model"] = model_config_to_json(model.config);
  auto tensors = model.all_tensors();
  nlohmann::json directory = nlohmann::json::array();
  for (const auto& t : tensors) {
    directory.push_back({{"name", t.name}, {"shape", {t.value->rows(), t.value->cols()}}});
  }
  manifest["tensors"] = directory;
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write checkpoint: " + path.string());
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::write_le<std::uint32_t>(out, kCheckpointVersion);
  detail::write_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : tensors) {
    const Matrix& m = *t.value;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) detail::write_le<float>(out, static_cast<float>(m(r, c)));
  }
  if (!out) throw RuntimeFailure("failed writing checkpoint: " + path.string());
}

namespace detail {

/// Opens a checkpoint and leaves the stream positioned at the first tensor.
inline nlohmann::json read_manifest(std::ifstream& in, const std::filesystem::path& path) {
  if (!in) throw ValidationError("cannot open checkpoint: " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kCheckpointMagic) {
    throw ValidationError(path.string() + " is not an intentctx checkpoint");
  }
  const auto version = read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  const auto length = read_le<std::uint64_t>(in);
  std::string text(length, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(length))) throw ValidationError("truncated checkpoint");
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed checkpoint manifest: " + std::string(e.what()));
  }
}

}  // namespace detail

inline nlohmann::json read_checkpoint_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return detail::read_manifest(in, path);
}

/// Reads a checkpoint written by save_checkpoint. The vocabulary must hash to the
/// manifest's vocab_hash; the precomputed table is needed for the precomputed path.
inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, Vocab vocab,
                                        std::shared_ptr<const PrecomputedEncoder> precomputed = nullptr) {
  std::ifstream in(path, std::ios::binary);
  LoadedCheckpoint out;
  out.manifest = detail::read_manifest(in, path);
  if (out.manifest.at("vocab_hash").get<std::string>() != vocab.hash()) {
    throw ValidationError("vocabulary does not match the checkpoint (hash mismatch)");
  }
  const auto config = model_config_from_json(out.manifest.at("model"));
  out.model = Model::create(config, std::move(vocab), std::move(precomputed));

  std::unordered_map<std::string, Matrix*> by_name;
  for (auto& t : out.model.all_tensors()) by_name.emplace(t.name, t.value);
  for (const auto& entry : out.manifest.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto rows = entry.at("shape").at(0).get<Eigen::Index>();
    const auto cols = entry.at("shape").at(1).get<Eigen::Index>();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ValidationError("checkpoint has unexpected tensor " + name);
    Matrix& m = *it->second;
    if (m.rows() != rows || m.cols() != cols) throw ValidationError("checkpoint tensor " + name + " has wrong shape");
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = static_cast<double>(detail::read_le<float>(in));
    by_name.erase(it);
  }
  if (!by_name.empty()) throw ValidationError("checkpoint lacks tensor " + by_name.begin()->first);
  return out;
}

}  // namespace intentctx
