#pragma once

#include <map>
#include <string>

#include "skipgrid/model.hpp"

namespace skipgrid {

// Checkpoint layout: magic "SKPG", format version u32, a length-prefixed
// UTF-8 key=value config block, then one record per parameter
// (u32 name length, name, u32 dim count, dims as u32, raw f32 data), all
// little-endian. Weights round-trip bit-exactly.

inline constexpr char kCheckpointMagic[4] = {'S', 'K', 'P', 'G'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// key=value text for a model config (exact float round-trip); extras are
// appended verbatim (the trainer records the vocabulary there).
std::map<std::string, std::string> model_config_kv(const ModelConfig& cfg);
ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv);

std::string format_float_exact(float v);   // shortest text that reparses to the same bits
std::string format_rate(float v);          // compact display form ("0.025", "0.99")

void save_checkpoint(const DecoderModel<float>& model,
                     const std::map<std::string, std::string>& extras, const std::string& path);

struct LoadedCheckpoint {
  DecoderModel<float> model;
  std::map<std::string, std::string> extras;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace skipgrid
