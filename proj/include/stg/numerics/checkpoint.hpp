// SPDX-License-Identifier: Apache-2.0
#pragma once

// "STGC" checkpoint: magic, u32 version, then records of
// (u32 name length, UTF-8 name, u32 rank, u32 extents[rank], f32 payload).
// All integers and floats little-endian.

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stg/numerics/parameters.hpp"

namespace stg::num {

inline constexpr char kCheckpointMagic[4] = {'S', 'T', 'G', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor<float>>>;

std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& tensors);
NamedTensors decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source);

void save_checkpoint(const std::filesystem::path& path, std::span<const ParameterSet<float>* const> sets);
NamedTensors load_checkpoint(const std::filesystem::path& path);
// Loads values into existing sets; every parameter must be present with a matching shape.
void load_checkpoint_into(const std::filesystem::path& path, std::span<ParameterSet<float>* const> sets);

NamedTensors collect(std::span<const ParameterSet<float>* const> sets);
// SHA-256 over the checkpoint encoding of the sets.
std::string parameter_hash(std::span<const ParameterSet<float>* const> sets);

}  // namespace stg::num
