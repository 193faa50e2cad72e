#include "kvret/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace kvret {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw CheckpointError(path.string() + ": truncated header");
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto specs = param_specs(ckpt.config);
  if (ckpt.params.tensors().size() != kParamCount) throw CheckpointError("save_checkpoint: incomplete parameter set");
  if (ckpt.vocabulary.size() != ckpt.config.vocab_size) {
    throw CheckpointError("save_checkpoint: vocabulary size does not match model config");
  }
  nlohmann::json table = nlohmann::json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < kParamCount; ++i) {
    const Tensor& t = ckpt.params.tensors()[i];
    if (t.shape() != specs[i].shape) throw CheckpointError("save_checkpoint: bad shape for " + specs[i].name);
    table.push_back({{"name", specs[i].name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  const nlohmann::json header = {{"model", ckpt.config.to_json()},
                                 {"vocabulary", ckpt.vocabulary.to_json()},
                                 {"lexicon", ckpt.lexicon.to_json()},
                                 {"metadata", ckpt.metadata},
                                 {"tensors", table}};
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    write_pod<std::uint32_t>(out, kCheckpointVersion);
    write_pod<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : ckpt.params.tensors()) {
      out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw CheckpointError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[sizeof kCheckpointMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw CheckpointError(path.string() + ": not a checkpoint file");
  }
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = read_pod<std::uint64_t>(in, path);
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) throw CheckpointError(path.string() + ": truncated header");

  Checkpoint ckpt;
  std::vector<std::pair<std::vector<std::size_t>, std::size_t>> table;
  try {
    const auto header = nlohmann::json::parse(text);
    ckpt.config = ModelConfig::from_json(header.at("model"));
    ckpt.vocabulary = Vocabulary::from_json(header.at("vocabulary"));
    ckpt.lexicon = Lexicon::from_json(header.at("lexicon"));
    ckpt.metadata = header.value("metadata", nlohmann::json::object());
    const auto specs = param_specs(ckpt.config);
    const auto& tensors = header.at("tensors");
    if (tensors.size() != kParamCount) throw CheckpointError(path.string() + ": wrong tensor count");
    for (std::size_t i = 0; i < kParamCount; ++i) {
      const auto& entry = tensors[i];
      auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      if (entry.at("name").get<std::string>() != specs[i].name || shape != specs[i].shape) {
        throw CheckpointError(path.string() + ": tensor " + entry.at("name").get<std::string>() + " " +
                              shape_string(shape) + " does not match expected " + specs[i].name + " " +
                              shape_string(specs[i].shape));
      }
      table.emplace_back(std::move(shape), entry.at("offset").get<std::size_t>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": malformed header: " + e.what());
  }
  if (ckpt.vocabulary.size() != ckpt.config.vocab_size ||
      ckpt.vocabulary.base_size() != ckpt.config.base_vocab_size) {
    throw CheckpointError(path.string() + ": vocabulary does not match model dimensions");
  }

  ckpt.params = ModelParams(ckpt.config);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < kParamCount; ++i) {
    Tensor& t = ckpt.params.tensors()[i];
    if (table[i].second != offset) throw CheckpointError(path.string() + ": inconsistent tensor offsets");
    if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
      throw CheckpointError(path.string() + ": truncated tensor data");
    }
    offset += t.size();
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError(path.string() + ": trailing bytes");
  return ckpt;
}

}  // namespace kvret
