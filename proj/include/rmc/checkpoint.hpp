#pragma once

#include <string>
#include <vector>

#include "rmc/nn.hpp"

namespace rmc {

// "RMCW" weight file: magic, u32 version, u32 count, then per tensor
// u16 name length, UTF-8 name, u8 rank, u32 extents, raw little-endian f32.

constexpr uint32_t kCheckpointVersion = 1;

/// Writes parameters followed by buffers. Double models are narrowed to f32.
template <typename T>
void save_checkpoint(const std::string& path, const StateDict<T>& state);

std::vector<NamedTensor<float>> read_checkpoint(const std::string& path);

/// Copies every stored tensor into the matching entry of `state`. Names and
/// shapes must match one to one; a mismatch raises FormatError::Mismatch
/// naming the offending tensor.
template <typename T>
void load_checkpoint(const std::string& path, const StateDict<T>& state);

}  // namespace rmc
