// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ebmforge/tensor.hpp"

namespace ebmforge::io {

// Flat binary tensor archive:
//   8-byte magic "EBMFORGE", u32 version, then per tensor:
//   u32 name length, UTF-8 name, u32 rank, u64 extents, little-endian f64 data.
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, ad::Tensor>>;

void save_tensors(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_tensors(const std::filesystem::path& path);

}  // namespace ebmforge::io
