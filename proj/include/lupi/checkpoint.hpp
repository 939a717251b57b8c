#pragma once

#include <cstdint>
#include <string>

#include "lupi/model.hpp"

namespace lupi {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout, little-endian throughout:
//   magic "LUPI" | u32 version | u32 config_len, config echo bytes |
//   u32 num_params | per parameter (sorted by name):
//     u32 name_len, name bytes, u32 rank, u32 extents..., f32 payload |
//   u32 CRC-32 of all prior bytes.
// Parameters are stored as 32-bit reals; in-memory compute stays 64-bit.
// Writes go to a temp file first and are renamed into place.
void save_checkpoint(const ModelParams& params, const std::string& config_echo,
                     const std::string& path);

struct LoadedCheckpoint {
  ModelParams params;
  std::string config_echo;
};

// Verifies magic, version, and CRC before accepting anything.
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace lupi
