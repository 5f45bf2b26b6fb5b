#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "twoch/model.hpp"

namespace twoch::model {

// Binary checkpoint, every field little-endian:
//
//   magic     8 bytes  "TWOCHCKP"
//   version   u32      kCheckpointVersion
//   entries   u32 count, then per entry:
//               u16 key length, key bytes, u8 type (0 = i64, 1 = f64), 8 value bytes
//   tensors   u32 count, then per tensor:
//               u16 name length, name bytes, u8 ndim, u64 extents[ndim], f64 values[numel]
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const TwoChannelTransformer& model);
TwoChannelTransformer decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const TwoChannelTransformer& model);
TwoChannelTransformer load_checkpoint(const std::filesystem::path& path);

}  // namespace twoch::model
