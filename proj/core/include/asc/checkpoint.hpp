#pragma once

#include <filesystem>
#include <vector>

#include "asc/models.hpp"

namespace asc {

/// "ASCK" container: magic, u32 version, u32 count, then per tensor a u16 name
/// length and UTF-8 name, u8 rank, u32 dims and f32 payload, all little-endian.
void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

std::vector<unsigned char> encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(const std::vector<unsigned char>& bytes);

}  // namespace asc
