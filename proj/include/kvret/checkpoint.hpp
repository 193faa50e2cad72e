#pragma once

// Binary checkpoint container.
//
//   "KVRETCKP"  8 bytes
//   version     u32, little-endian
//   header_len  u64, little-endian
//   header      JSON: model config, vocabulary, lexicon, metadata and a
//               tensor table {name, shape, offset} (offset in doubles)
//   payload     fp64 tensor data, little-endian, in table order

#include <cstdint>
#include <filesystem>
#include <stdexcept>

#include <json.hpp>

#include "kvret/lexicon.hpp"
#include "kvret/network.hpp"
#include "kvret/vocabulary.hpp"

namespace kvret {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'K', 'V', 'R', 'E', 'T', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  Vocabulary vocabulary;
  Lexicon lexicon;
  /// Free-form training details (train config, epoch, validation scores).
  nlohmann::json metadata = nlohmann::json::object();
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Validates magic, version, the tensor table against the config's
/// parameter shapes, and the vocabulary size.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace kvret
